//! Datasets built from annotation levels, and concordances.
//!
//! A dataset has one row per element of a target level, or one row per group
//! when grouping keys are given. Columns read the target level itself, its
//! hierarchy ancestors (one value per row), its hierarchy descendants
//! (aggregated over the children of each row), or communication and speaker
//! metadata.

mod kwic;
mod table;

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::model::{AnnotationElement, CompareOp, CorpusModel, ModelError, Predicate};
use crate::store::{Store, StoreError};
use crate::structure::{AnnotationStructure, MetadataObject};
use crate::time::Time;
use crate::value::{DataType, Value};

pub use kwic::{concordance, ConcordanceHit, ConcordanceSpec, Pattern, DEFAULT_CONTEXT};
pub use table::{Column, Dataset, ExportFormat, TableError};

#[derive(Debug, thiserror::Error)]
pub enum QueryError {
    #[error("invalid dataset spec: {0}")]
    Spec(String),
    #[error("unknown level {0:?}")]
    UnknownLevel(String),
    #[error("unknown field {field:?} on level {level}")]
    UnknownField { level: String, field: String },
    #[error("unknown metadata attribute {0:?}")]
    UnknownMetadata(String),
    #[error("level {source_level} is not reachable from {target} through hierarchy relations")]
    UnreachableSource { source_level: String, target: String },
    #[error("column {0} needs an aggregate")]
    MissingAggregate(String),
    #[error("column {column}: {aggregate:?} needs numeric values, found {datatype}")]
    AggregateTypeMismatch {
        column: String,
        aggregate: Aggregate,
        datatype: DataType,
    },
    #[error("column {column}: filter {op} {literal:?} does not apply to {datatype}")]
    PredicateTypeMismatch {
        column: String,
        op: CompareOp,
        literal: String,
        datatype: DataType,
    },
    #[error("column {0} is not numeric")]
    NonNumericColumn(String),
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("invalid pattern: {0}")]
    InvalidPattern(String),
    #[error("duplicate column id {0:?}")]
    DuplicateColumn(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Aggregate {
    Sum,
    Mean,
    StdDev,
    Min,
    Max,
    Count,
}

/// Aggregates numbers. Empty input gives Count 0, Sum 0 and null otherwise;
/// StdDev is the sample deviation and is null below two values.
pub fn aggregate(values: &[f64], f: Aggregate) -> Option<f64> {
    let n = values.len();
    match f {
        Aggregate::Count => Some(n as f64),
        Aggregate::Sum => Some(values.iter().sum()),
        _ if n == 0 => None,
        Aggregate::Mean => Some(values.iter().sum::<f64>() / n as f64),
        Aggregate::StdDev => sample_sd(values),
        Aggregate::Min => values.iter().copied().reduce(f64::min),
        Aggregate::Max => values.iter().copied().reduce(f64::max),
    }
}

fn sample_sd(values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Some((ss / (n - 1) as f64).sqrt())
}

/// z-scores within each group; nulls stay null and are not counted. Groups
/// with fewer than two values or zero deviation map to 0.
fn zscore_groups<K: Eq + std::hash::Hash>(values: &mut [Option<f64>], groups: &[K]) {
    let mut members: HashMap<&K, Vec<usize>> = HashMap::new();
    for (i, k) in groups.iter().enumerate() {
        if values[i].is_some() {
            members.entry(k).or_default().push(i);
        }
    }
    for idx in members.values() {
        let xs: Vec<f64> = idx.iter().map(|&i| values[i].unwrap()).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let sd = sample_sd(&xs).filter(|sd| *sd > 0.0);
        for &i in idx {
            values[i] = Some(match sd {
                Some(sd) => (values[i].unwrap() - mean) / sd,
                None => 0.0,
            });
        }
    }
}

/// Replaces a numeric column by its z-scores within groups of equal values
/// of `group_columns` (one group when empty).
pub fn zscore_normalize(dataset: &Dataset, column: &str, group_columns: &[String]) -> Result<Dataset, QueryError> {
    let ci = dataset
        .column_index(column)
        .ok_or_else(|| QueryError::UnknownColumn(column.to_string()))?;
    if !dataset.header[ci].datatype.is_numeric() {
        return Err(QueryError::NonNumericColumn(column.to_string()));
    }
    let gi = group_columns
        .iter()
        .map(|g| dataset.column_index(g).ok_or_else(|| QueryError::UnknownColumn(g.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let mut values: Vec<Option<f64>> = dataset.rows.iter().map(|r| r[ci].as_ref().and_then(Value::as_f64)).collect();
    let keys: Vec<Vec<String>> = dataset
        .rows
        .iter()
        .map(|r| gi.iter().map(|&g| format!("{:?}", r[g])).collect())
        .collect();
    zscore_groups(&mut values, &keys);
    let mut out = dataset.clone();
    out.header[ci].datatype = DataType::Real;
    for (row, v) in out.rows.iter_mut().zip(values) {
        row[ci] = v.map(Value::Real);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Normalize {
    ZScoreBySubcorpus,
    ZScoreByCommunication,
}

/// Where a column's values come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source {
    /// `label`, `tMin`, `tMax`, `durNs`, `elementID` or an attribute of a level.
    Level { level: String, field: String },
    /// `communication.ATTR` or `speaker.ATTR`; `ATTR` may be `id`.
    Metadata { metadata: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueFilter {
    pub op: CompareOp,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub id: String,
    #[serde(flatten)]
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<Aggregate>,
    /// On aggregated columns, limits the values aggregated; otherwise drops
    /// rows whose value fails it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<ValueFilter>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalize: Option<Normalize>,
}

impl ColumnSpec {
    pub fn level(id: &str, level: &str, field: &str) -> Self {
        ColumnSpec {
            id: id.to_string(),
            source: Source::Level {
                level: level.to_string(),
                field: field.to_string(),
            },
            aggregate: None,
            filter: None,
            normalize: None,
        }
    }

    pub fn metadata(id: &str, key: &str) -> Self {
        ColumnSpec {
            source: Source::Metadata { metadata: key.to_string() },
            ..Self::level(id, "", "")
        }
    }

    pub fn aggregated(mut self, f: Aggregate) -> Self {
        self.aggregate = Some(f);
        self
    }

    pub fn filtered(mut self, op: CompareOp, value: &str) -> Self {
        self.filter = Some(ValueFilter {
            op,
            value: value.to_string(),
        });
        self
    }

    pub fn normalized(mut self, n: Normalize) -> Self {
        self.normalize = Some(n);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DatasetSpec {
    pub target_level: String,
    pub columns: Vec<ColumnSpec>,
    /// Keys `communication.ATTR`, `speaker.ATTR` or `LEVEL.FIELD` for the
    /// target level or one of its ancestors.
    #[serde(default)]
    pub group_by: Vec<String>,
    #[serde(default)]
    pub subcorpus: Vec<Predicate>,
}

impl DatasetSpec {
    pub fn from_json(text: &str) -> Result<DatasetSpec, QueryError> {
        serde_json::from_str(text).map_err(|e| QueryError::Spec(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dataset spec serializes")
    }
}

/// How a level relates to the target level.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Path {
    Same,
    /// Ancestor; the levels walked through from the target's parent up to the source.
    Ancestor(Vec<String>),
    /// Descendant; the levels from the source up to (excluding) the target.
    Descendant(Vec<String>),
}

fn ancestors(structure: &AnnotationStructure, level: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = level.to_string();
    while let Some(p) = structure.hierarchy_parent(&cur) {
        if out.iter().any(|l| l == p) || p == level {
            break;
        }
        out.push(p.to_string());
        cur = p.to_string();
    }
    out
}

fn path(structure: &AnnotationStructure, target: &str, source: &str) -> Option<Path> {
    if source == target {
        return Some(Path::Same);
    }
    let up = ancestors(structure, target);
    if let Some(i) = up.iter().position(|l| l == source) {
        return Some(Path::Ancestor(up[..=i].to_vec()));
    }
    let from_source = ancestors(structure, source);
    if let Some(i) = from_source.iter().position(|l| l == target) {
        let mut chain = vec![source.to_string()];
        chain.extend(from_source[..i].iter().cloned());
        return Some(Path::Descendant(chain));
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Field {
    Label,
    TMin,
    TMax,
    Duration,
    ElementId,
    Attribute(String),
}

fn resolve_field(structure: &AnnotationStructure, level: &str, field: &str) -> Result<(Field, DataType), QueryError> {
    let def = structure
        .level(level)
        .ok_or_else(|| QueryError::UnknownLevel(level.to_string()))?;
    if let Some(a) = def.attribute(field) {
        return Ok((Field::Attribute(a.id.clone()), a.datatype));
    }
    Ok(match field {
        "label" => (Field::Label, DataType::Text),
        "tMin" => (Field::TMin, DataType::Real),
        "tMax" => (Field::TMax, DataType::Real),
        "durNs" => (Field::Duration, DataType::Integer),
        "elementID" => (Field::ElementId, DataType::Integer),
        _ => {
            return Err(QueryError::UnknownField {
                level: level.to_string(),
                field: field.to_string(),
            })
        }
    })
}

fn field_value(e: &AnnotationElement, field: &Field) -> Option<Value> {
    match field {
        Field::Label => Some(Value::Text(e.label.clone())),
        Field::TMin => Some(Value::Real(e.t_min.as_secs_f64())),
        Field::TMax => Some(Value::Real(e.t_max.as_secs_f64())),
        Field::Duration => Some(Value::Integer(e.duration_ns())),
        Field::ElementId => Some(Value::Integer(e.id)),
        Field::Attribute(a) => e.attribute(a).cloned(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Owner {
    Communication,
    Speaker,
}

fn resolve_metadata(structure: &AnnotationStructure, key: &str) -> Result<(Owner, String, DataType), QueryError> {
    let unknown = || QueryError::UnknownMetadata(key.to_string());
    let (object, attr) = key.split_once('.').ok_or_else(unknown)?;
    let (owner, mobj) = match object {
        "communication" => (Owner::Communication, MetadataObject::Communication),
        "speaker" => (Owner::Speaker, MetadataObject::Speaker),
        _ => return Err(unknown()),
    };
    if attr == "id" {
        return Ok((owner, attr.to_string(), DataType::Text));
    }
    let def = structure.metadata_attribute(mobj, attr).ok_or_else(unknown)?;
    Ok((owner, attr.to_string(), def.datatype))
}

fn metadata_value(model: &CorpusModel, owner: Owner, attr: &str, comm: &str, speaker: &str) -> Option<Value> {
    let (id, metadata) = match owner {
        Owner::Communication => (comm, model.communications.get(comm).map(|c| &c.metadata)),
        Owner::Speaker => (speaker, model.speakers.get(speaker).map(|s| &s.metadata)),
    };
    if attr == "id" {
        return Some(Value::Text(id.to_string()));
    }
    metadata.and_then(|m| m.get(attr)).cloned()
}

/// A resolved value source.
#[derive(Debug, Clone)]
enum Resolved {
    Level { level: String, path: Path, field: Field },
    Metadata { owner: Owner, attr: String },
}

struct CompiledFilter {
    op: CompareOp,
    literal: Value,
}

impl CompiledFilter {
    fn test(&self, v: Option<&Value>) -> bool {
        v.is_some_and(|v| self.op.eval(v, &self.literal))
    }
}

struct CompiledColumn {
    spec: ColumnSpec,
    source: Resolved,
    source_type: DataType,
    filter: Option<CompiledFilter>,
}

fn resolve_source(structure: &AnnotationStructure, target: &str, source: &Source) -> Result<(Resolved, DataType), QueryError> {
    match source {
        Source::Level { level, field } => {
            let (f, t) = resolve_field(structure, level, field)?;
            let path = path(structure, target, level).ok_or_else(|| QueryError::UnreachableSource {
                source_level: level.clone(),
                target: target.to_string(),
            })?;
            Ok((
                Resolved::Level {
                    level: level.clone(),
                    path,
                    field: f,
                },
                t,
            ))
        }
        Source::Metadata { metadata } => {
            let (owner, attr, t) = resolve_metadata(structure, metadata)?;
            Ok((Resolved::Metadata { owner, attr }, t))
        }
    }
}

/// A grouping key: its id, source and type.
type GroupKey = (String, Resolved, DataType);

fn compile(structure: &AnnotationStructure, spec: &DatasetSpec) -> Result<(Vec<CompiledColumn>, Vec<GroupKey>), QueryError> {
    if structure.level(&spec.target_level).is_none() {
        return Err(QueryError::UnknownLevel(spec.target_level.clone()));
    }
    let mut seen = std::collections::BTreeSet::new();
    let mut keys = Vec::new();
    for key in &spec.group_by {
        if !seen.insert(key.clone()) {
            return Err(QueryError::DuplicateColumn(key.clone()));
        }
        let source = if key.starts_with("communication.") || key.starts_with("speaker.") {
            Source::Metadata { metadata: key.clone() }
        } else {
            let (level, field) = key.split_once('.').ok_or_else(|| QueryError::Spec(format!("group key {key:?} is not LEVEL.FIELD")))?;
            Source::Level {
                level: level.to_string(),
                field: field.to_string(),
            }
        };
        let (resolved, t) = resolve_source(structure, &spec.target_level, &source)?;
        if let Resolved::Level { path: Path::Descendant(_), level, .. } = &resolved {
            return Err(QueryError::UnreachableSource {
                source_level: level.clone(),
                target: spec.target_level.clone(),
            });
        }
        keys.push((key.clone(), resolved, t));
    }
    let mut columns = Vec::new();
    for c in &spec.columns {
        if !seen.insert(c.id.clone()) {
            return Err(QueryError::DuplicateColumn(c.id.clone()));
        }
        let (source, source_type) = resolve_source(structure, &spec.target_level, &c.source)?;
        let fans_out = matches!(source, Resolved::Level { path: Path::Descendant(_), .. }) || !spec.group_by.is_empty();
        if fans_out && c.aggregate.is_none() {
            return Err(QueryError::MissingAggregate(c.id.clone()));
        }
        if let Some(f) = c.aggregate {
            if f != Aggregate::Count && !source_type.is_numeric() {
                return Err(QueryError::AggregateTypeMismatch {
                    column: c.id.clone(),
                    aggregate: f,
                    datatype: source_type,
                });
            }
        }
        let filter = c
            .filter
            .as_ref()
            .map(|f| {
                let mismatch = || QueryError::PredicateTypeMismatch {
                    column: c.id.clone(),
                    op: f.op,
                    literal: f.value.clone(),
                    datatype: source_type,
                };
                if !f.op.applies_to(source_type) {
                    return Err(mismatch());
                }
                let literal = Value::parse(source_type, &f.value).map_err(|_| mismatch())?;
                Ok(CompiledFilter { op: f.op, literal })
            })
            .transpose()?;
        let out_type = match c.aggregate {
            Some(Aggregate::Count) => DataType::Integer,
            Some(_) => DataType::Real,
            None => source_type,
        };
        if c.normalize.is_some() && !out_type.is_numeric() {
            return Err(QueryError::NonNumericColumn(c.id.clone()));
        }
        columns.push(CompiledColumn {
            spec: c.clone(),
            source,
            source_type,
            filter,
        });
    }
    Ok((columns, keys))
}

/// Tiers of one communication and speaker, indexed by level and element id.
struct TierGroup {
    levels: HashMap<String, Vec<AnnotationElement>>,
    index: HashMap<String, HashMap<i64, usize>>,
}

impl TierGroup {
    fn element(&self, level: &str, id: i64) -> Option<&AnnotationElement> {
        let i = *self.index.get(level)?.get(&id)?;
        Some(&self.levels[level][i])
    }
}

/// A target element and the source values gathered for it.
struct RowValues {
    communication: String,
    t_min: Time,
    element_id: i64,
    speaker: String,
    keys: Vec<Option<Value>>,
    /// Per column: all contributing values (one for non-fan-out sources).
    values: Vec<Vec<Option<Value>>>,
}

fn gather(
    group: &TierGroup,
    model: &CorpusModel,
    comm: &str,
    speaker: &str,
    target: &AnnotationElement,
    source: &Resolved,
    descendants: &HashMap<String, HashMap<i64, Vec<usize>>>,
) -> Vec<Option<Value>> {
    match source {
        Resolved::Metadata { owner, attr } => vec![metadata_value(model, *owner, attr, comm, speaker)],
        Resolved::Level { path: Path::Same, field, .. } => vec![field_value(target, field)],
        Resolved::Level {
            path: Path::Ancestor(chain),
            field,
            ..
        } => {
            let mut cur = target;
            for level in chain {
                match cur.parent.and_then(|p| group.element(level, p)) {
                    Some(p) => cur = p,
                    None => return vec![None],
                }
            }
            vec![field_value(cur, field)]
        }
        Resolved::Level { level, field, .. } => descendants
            .get(level)
            .and_then(|m| m.get(&target.id))
            .map(|idx| idx.iter().map(|&i| field_value(&group.levels[level][i], field)).collect())
            .unwrap_or_default(),
    }
}

/// Maps each target element id to the indices of its descendants in `chain[0]`.
fn descendant_index(group: &TierGroup, chain: &[String]) -> HashMap<i64, Vec<usize>> {
    let mut out: HashMap<i64, Vec<usize>> = HashMap::new();
    let Some(elements) = group.levels.get(&chain[0]) else {
        return out;
    };
    'outer: for (i, e) in elements.iter().enumerate() {
        let mut cur = e;
        for level in &chain[1..] {
            match cur.parent.and_then(|p| group.element(level, p)) {
                Some(p) => cur = p,
                None => continue 'outer,
            }
        }
        if let Some(p) = cur.parent {
            out.entry(p).or_default().push(i);
        }
    }
    out
}

fn to_numbers(values: &[Option<Value>]) -> Vec<f64> {
    values.iter().flatten().filter_map(Value::as_f64).collect()
}

fn compare_keys(a: &[Option<Value>], b: &[Option<Value>]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = match (x, y) {
            (None, None) => Ordering::Equal,
            (None, Some(_)) => Ordering::Less,
            (Some(_), None) => Ordering::Greater,
            (Some(x), Some(y)) => x
                .compare(y)
                .unwrap_or_else(|| x.to_string().cmp(&y.to_string())),
        };
        if o != Ordering::Equal {
            return o;
        }
    }
    Ordering::Equal
}

fn key_string(keys: &[Option<Value>]) -> String {
    format!("{keys:?}")
}

/// Builds a dataset. Rows are ordered by (communication, tMin, element id,
/// speaker), or by group key when grouping.
pub fn build_dataset(store: &Store, spec: &DatasetSpec) -> Result<Dataset, QueryError> {
    let structure = store.structure();
    let (columns, keys) = compile(structure, spec)?;
    let model = store.load_corpus()?;
    let communications = model.select_subcorpus(&spec.subcorpus)?;

    let mut levels: Vec<String> = vec![spec.target_level.clone()];
    for r in columns.iter().map(|c| &c.source).chain(keys.iter().map(|k| &k.1)) {
        if let Resolved::Level { level, path, .. } = r {
            levels.push(level.clone());
            match path {
                Path::Ancestor(chain) | Path::Descendant(chain) => levels.extend(chain.iter().cloned()),
                Path::Same => {}
            }
        }
    }
    levels.sort();
    levels.dedup();

    let mut rows: Vec<RowValues> = Vec::new();
    for comm in &communications {
        let mut groups: BTreeMap<(String, String), TierGroup> = BTreeMap::new();
        for level in &levels {
            for tier in store.load_tiers(level, comm)? {
                let g = groups
                    .entry((tier.key.annotation_id.clone(), tier.key.speaker_id.clone()))
                    .or_insert_with(|| TierGroup {
                        levels: HashMap::new(),
                        index: HashMap::new(),
                    });
                let elements = tier.into_elements();
                g.index
                    .insert(level.clone(), elements.iter().enumerate().map(|(i, e)| (e.id, i)).collect());
                g.levels.insert(level.clone(), elements);
            }
        }
        for ((_, speaker), group) in &groups {
            let Some(targets) = group.levels.get(&spec.target_level) else {
                continue;
            };
            let mut descendants: HashMap<String, HashMap<i64, Vec<usize>>> = HashMap::new();
            for c in &columns {
                if let Resolved::Level {
                    level,
                    path: Path::Descendant(chain),
                    ..
                } = &c.source
                {
                    descendants
                        .entry(level.clone())
                        .or_insert_with(|| descendant_index(group, chain));
                }
            }
            for t in targets {
                let key_values: Vec<Option<Value>> = keys
                    .iter()
                    .map(|(_, r, _)| gather(group, &model, comm, speaker, t, r, &descendants).pop().flatten())
                    .collect();
                let mut values = Vec::with_capacity(columns.len());
                let mut keep = true;
                for c in &columns {
                    let mut vs = gather(group, &model, comm, speaker, t, &c.source, &descendants);
                    if let Some(f) = &c.filter {
                        if c.spec.aggregate.is_some() {
                            vs.retain(|v| f.test(v.as_ref()));
                        } else if !f.test(vs[0].as_ref()) {
                            keep = false;
                        }
                    }
                    values.push(vs);
                }
                if keep {
                    rows.push(RowValues {
                        communication: comm.clone(),
                        t_min: t.t_min,
                        element_id: t.id,
                        speaker: speaker.clone(),
                        keys: key_values,
                        values,
                    });
                }
            }
        }
    }

    let mut header: Vec<Column> = keys.iter().map(|(k, _, t)| Column::new(k, *t)).collect();
    for c in &columns {
        let t = match c.spec.aggregate {
            Some(Aggregate::Count) => DataType::Integer,
            Some(_) => DataType::Real,
            None => c.source_type,
        };
        header.push(Column::new(&c.spec.id, t));
    }

    // Output rows with the communications they draw from, for normalization.
    let mut out: Vec<(Vec<Option<Value>>, Option<String>)> = Vec::new();
    let finish = |c: &CompiledColumn, values: &[Option<Value>]| -> Option<Value> {
        match c.spec.aggregate {
            None => values.first().cloned().flatten(),
            Some(Aggregate::Count) => Some(Value::Integer(values.iter().flatten().count() as i64)),
            Some(f) => aggregate(&to_numbers(values), f).map(Value::Real),
        }
    };
    if keys.is_empty() {
        rows.sort_by(|a, b| {
            (&a.communication, a.t_min, a.element_id, &a.speaker).cmp(&(&b.communication, b.t_min, b.element_id, &b.speaker))
        });
        for r in &rows {
            let cells = columns.iter().zip(&r.values).map(|(c, v)| finish(c, v)).collect();
            out.push((cells, Some(r.communication.clone())));
        }
    } else {
        let mut grouped: BTreeMap<String, (Vec<Option<Value>>, Vec<&RowValues>)> = BTreeMap::new();
        for r in &rows {
            grouped
                .entry(key_string(&r.keys))
                .or_insert_with(|| (r.keys.clone(), Vec::new()))
                .1
                .push(r);
        }
        let mut groups: Vec<_> = grouped.into_values().collect();
        groups.sort_by(|a, b| compare_keys(&a.0, &b.0));
        for (key, members) in groups {
            let mut cells = key;
            for (i, c) in columns.iter().enumerate() {
                let pooled: Vec<Option<Value>> = members.iter().flat_map(|r| r.values[i].iter().cloned()).collect();
                cells.push(finish(c, &pooled));
            }
            let comm = members[0].communication.clone();
            let single = members.iter().all(|r| r.communication == comm);
            out.push((cells, single.then_some(comm)));
        }
    }

    let offset = keys.len();
    for (i, c) in columns.iter().enumerate() {
        let Some(n) = c.spec.normalize else { continue };
        let ci = offset + i;
        let mut values: Vec<Option<f64>> = out.iter().map(|(r, _)| r[ci].as_ref().and_then(Value::as_f64)).collect();
        let group_keys: Vec<Option<String>> = match n {
            Normalize::ZScoreBySubcorpus => vec![None; out.len()],
            Normalize::ZScoreByCommunication => {
                if out.iter().any(|(_, comm)| comm.is_none()) {
                    return Err(QueryError::Spec(format!(
                        "column {}: per-communication normalization needs rows that each belong to one communication",
                        c.spec.id
                    )));
                }
                out.iter().map(|(_, comm)| comm.clone()).collect()
            }
        };
        zscore_groups(&mut values, &group_keys);
        header[ci].datatype = DataType::Real;
        for ((row, _), v) in out.iter_mut().zip(values) {
            row[ci] = v.map(Value::Real);
        }
    }

    Ok(Dataset {
        header,
        rows: out.into_iter().map(|(r, _)| r).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregates() {
        assert_eq!(aggregate(&[1.0, 2.0, 3.0], Aggregate::Mean), Some(2.0));
        assert_eq!(aggregate(&[2.0, 4.0], Aggregate::StdDev), Some(2f64.sqrt()));
        assert_eq!(aggregate(&[], Aggregate::Mean), None);
        assert_eq!(aggregate(&[], Aggregate::Count), Some(0.0));
        assert_eq!(aggregate(&[], Aggregate::Sum), Some(0.0));
        assert_eq!(aggregate(&[7.0], Aggregate::StdDev), None);
        assert_eq!(aggregate(&[3.0, -1.0, 2.0], Aggregate::Min), Some(-1.0));
        assert_eq!(aggregate(&[3.0, -1.0, 2.0], Aggregate::Max), Some(3.0));
    }

    fn one_column(values: &[f64]) -> Dataset {
        Dataset {
            header: vec![Column::new("g", DataType::Text), Column::new("x", DataType::Real)],
            rows: values
                .iter()
                .enumerate()
                .map(|(i, v)| vec![Some(Value::Text(if i < 3 { "a" } else { "b" }.into())), Some(Value::Real(*v))])
                .collect(),
        }
    }

    fn reals(d: &Dataset, col: &str) -> Vec<f64> {
        d.column(col).unwrap().iter().map(|v| v.unwrap().as_f64().unwrap()).collect()
    }

    #[test]
    fn zscore_single_and_degenerate_groups() {
        let z = zscore_normalize(&one_column(&[1.0, 2.0, 3.0]), "x", &[]).unwrap();
        assert_eq!(reals(&z, "x"), [-1.0, 0.0, 1.0]);
        let z = zscore_normalize(&one_column(&[5.0, 5.0, 5.0, 9.0]), "x", &["g".into()]).unwrap();
        assert_eq!(reals(&z, "x"), [0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            zscore_normalize(&one_column(&[1.0]), "g", &[]),
            Err(QueryError::NonNumericColumn(_))
        ));
    }

    #[test]
    fn spec_json_shape() {
        let text = r#"{"targetLevel":"syll","columns":[
            {"id":"n","level":"phones","field":"label","aggregate":"count"},
            {"id":"g","metadata":"speaker.gender"},
            {"id":"d","level":"syll","field":"durNs","filter":{"op":">","value":"0"},"normalize":"zScoreBySubcorpus"}]}"#;
        let spec = DatasetSpec::from_json(text).unwrap();
        assert_eq!(spec.columns[1].source, Source::Metadata { metadata: "speaker.gender".into() });
        assert_eq!(spec.columns[2].normalize, Some(Normalize::ZScoreBySubcorpus));
        assert_eq!(DatasetSpec::from_json(&spec.to_json()).unwrap(), spec);
    }
}
