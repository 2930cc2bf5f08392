//! Naive reference computations, read straight from the database tables.

use std::collections::{BTreeMap, BTreeSet};

use praaline_core::query::{Aggregate, Normalize, Pattern, Source};
use praaline_core::{AnnotationStructure, CompareOp, DataType, DatasetSpec, LevelKind, RelationKind, Store, Value};
use rusqlite::types::Value as Sql;

#[derive(Debug, Clone)]
pub struct Row {
    pub annotation: String,
    pub speaker: String,
    pub id: i64,
    pub t_min: i64,
    pub t_max: i64,
    pub label: String,
    pub parent: Option<i64>,
    pub attrs: BTreeMap<String, Option<Value>>,
}

impl Row {
    pub fn attr(&self, a: &str) -> Option<&Value> {
        self.attrs.get(a).and_then(Option::as_ref)
    }
}

/// Level rows and metadata, as stored.
pub struct Snapshot {
    pub structure: AnnotationStructure,
    pub levels: BTreeMap<String, Vec<Row>>,
    pub comm_meta: BTreeMap<String, BTreeMap<String, Value>>,
    pub speaker_meta: BTreeMap<String, BTreeMap<String, Value>>,
}

fn sql_value(v: Sql, t: DataType) -> Option<Value> {
    match (v, t) {
        (Sql::Null, _) => None,
        (Sql::Integer(i), DataType::Boolean) => Some(Value::Boolean(i != 0)),
        (Sql::Integer(i), DataType::Integer) => Some(Value::Integer(i)),
        (Sql::Integer(i), DataType::Real) => Some(Value::Real(i as f64)),
        (Sql::Real(r), _) => Some(Value::Real(r)),
        (Sql::Text(s), t) => Some(Value::parse(t, &s).unwrap_or(Value::Text(s))),
        (other, _) => panic!("unexpected cell {other:?}"),
    }
}

fn select(store: &Store, sql: &str) -> Vec<Vec<Sql>> {
    let conn = store.connection();
    let mut stmt = conn.prepare(sql).unwrap();
    let n = stmt.column_count();
    stmt.query_map([], |r| (0..n).map(|i| r.get::<_, Sql>(i)).collect())
        .unwrap()
        .map(Result::unwrap)
        .collect()
}

fn metadata_of(store: &Store, table: &str, attrs: &[(String, DataType)]) -> BTreeMap<String, BTreeMap<String, Value>> {
    let cols: String = attrs.iter().map(|(a, _)| format!(", \"{a}\"")).collect();
    let mut out = BTreeMap::new();
    for r in select(store, &format!("SELECT id{cols} FROM {table}")) {
        let mut it = r.into_iter();
        let Some(Sql::Text(id)) = it.next() else { panic!() };
        let m = attrs
            .iter()
            .zip(it)
            .filter_map(|((a, t), v)| sql_value(v, *t).map(|v| (a.clone(), v)))
            .collect();
        out.insert(id, m);
    }
    out
}

pub fn snapshot(store: &Store) -> Snapshot {
    let structure = store.structure().clone();
    let mut levels = BTreeMap::new();
    for level in &structure.levels {
        let has_parent = structure.hierarchy_parent(&level.id).is_some();
        let attr_cols: String = level.attributes.iter().map(|a| format!(", \"{}\"", a.id)).collect();
        let sql = format!(
            "SELECT annotationID, speakerID, elementID, tMin, tMax, label, {}{attr_cols} FROM \"{}\"",
            if has_parent { "parentID" } else { "NULL" },
            level.table_name()
        );
        let rows = select(store, &sql)
            .into_iter()
            .map(|r| {
                let text = |v: &Sql| match v {
                    Sql::Text(s) => s.clone(),
                    _ => panic!(),
                };
                let int = |v: &Sql| match v {
                    Sql::Integer(i) => Some(*i),
                    _ => None,
                };
                Row {
                    annotation: text(&r[0]),
                    speaker: text(&r[1]),
                    id: int(&r[2]).unwrap(),
                    t_min: int(&r[3]).unwrap(),
                    t_max: int(&r[4]).unwrap(),
                    label: text(&r[5]),
                    parent: int(&r[6]),
                    attrs: level
                        .attributes
                        .iter()
                        .zip(r[7..].iter())
                        .map(|(a, v)| (a.id.clone(), sql_value(v.clone(), a.datatype)))
                        .collect(),
                }
            })
            .collect();
        levels.insert(level.id.clone(), rows);
    }
    let meta = |object: praaline_core::MetadataObject| -> Vec<(String, DataType)> {
        structure
            .metadata
            .iter()
            .filter(|m| m.object == object)
            .map(|m| (m.id.clone(), m.datatype))
            .collect()
    };
    let comm_meta = metadata_of(store, "communication", &meta(praaline_core::MetadataObject::Communication));
    let speaker_meta = metadata_of(store, "speaker", &meta(praaline_core::MetadataObject::Speaker));
    Snapshot {
        structure,
        levels,
        comm_meta,
        speaker_meta,
    }
}

impl Snapshot {
    /// Rows of one tier ordered by (tMin, id).
    pub fn tier(&self, level: &str, annotation: &str, speaker: &str) -> Vec<&Row> {
        let mut rows: Vec<&Row> = self.levels[level]
            .iter()
            .filter(|r| r.annotation == annotation && r.speaker == speaker)
            .collect();
        rows.sort_by_key(|r| (r.t_min, r.id));
        rows
    }

    pub fn tier_keys(&self) -> BTreeSet<(String, String)> {
        self.levels
            .values()
            .flatten()
            .map(|r| (r.annotation.clone(), r.speaker.clone()))
            .collect()
    }
}

/// Comparable form of one integrity finding:
/// (kind, level, annotation, speaker, element, boundary, relation, attribute, magnitude, correctable).
pub type Finding = (String, String, String, String, i64, String, String, String, Option<i64>, bool);

struct Need {
    element: i64,
    side: u8,
    relation: String,
    target: Option<i64>,
}

fn side_time(r: &Row, side: u8) -> i64 {
    if side == 0 {
        r.t_min
    } else {
        r.t_max
    }
}

fn side_name(side: u8) -> &'static str {
    if side == 0 {
        "Start"
    } else {
        "End"
    }
}

/// Integrity findings computed from first principles.
pub fn integrity_oracle(snap: &Snapshot, tolerance_ns: i64) -> BTreeSet<Finding> {
    let s = &snap.structure;
    let mut out = BTreeSet::new();
    for (annotation, speaker) in snap.tier_keys() {
        for level in &s.levels {
            let rows = snap.tier(&level.id, &annotation, &speaker);
            let mut push = |kind: &str, id: i64, side: &str, rel: &str, attr: &str, mag: Option<i64>, corr: bool| {
                out.insert((
                    kind.to_string(),
                    level.id.clone(),
                    annotation.clone(),
                    speaker.clone(),
                    id,
                    side.to_string(),
                    rel.to_string(),
                    attr.to_string(),
                    mag,
                    corr,
                ));
            };
            for (i, r) in rows.iter().enumerate() {
                let bad = match level.kind {
                    LevelKind::Interval => r.t_min >= r.t_max,
                    LevelKind::Point => r.t_min != r.t_max,
                };
                if bad {
                    push("PointSpan", r.id, "", "", "", None, false);
                }
                if level.kind == LevelKind::Interval {
                    if let Some(end) = rows[..i].iter().map(|p| p.t_max).max().filter(|&m| m > r.t_min) {
                        push("Overlap", r.id, "", "", "", Some(end - r.t_min), false);
                    }
                }
                for a in &level.attributes {
                    match r.attr(&a.id) {
                        None if !a.optional => push("MissingRequired", r.id, "", "", &a.id, None, false),
                        Some(Value::Text(t)) if a.vocabulary.as_ref().is_some_and(|v| !v.contains(t)) => {
                            push("VocabularyViolation", r.id, "", "", &a.id, None, false)
                        }
                        _ => {}
                    }
                }
            }

            let mut needs: Vec<Need> = Vec::new();
            for rel in s.relations.iter().filter(|r| r.child == level.id) {
                let rel_name = rel.to_string();
                let parents = snap.tier(&rel.parent, &annotation, &speaker);
                match rel.kind {
                    RelationKind::Hierarchy => {
                        for r in &rows {
                            if !parents.iter().any(|p| Some(p.id) == r.parent) {
                                push("OrphanChild", r.id, "", &rel_name, "", None, false);
                            }
                        }
                        for p in &parents {
                            let kids: Vec<&&Row> = rows.iter().filter(|r| r.parent == Some(p.id)).collect();
                            for (i, k) in kids.iter().enumerate() {
                                let inner_start = i > 0 && k.t_min < p.t_min;
                                let inner_end = i + 1 < kids.len() && k.t_max > p.t_max;
                                if inner_start || inner_end {
                                    push("NotContained", k.id, "", &rel_name, "", None, false);
                                }
                            }
                            if let (Some(f), Some(l)) = (kids.first(), kids.last()) {
                                needs.push(Need {
                                    element: f.id,
                                    side: 0,
                                    relation: rel_name.clone(),
                                    target: Some(p.t_min),
                                });
                                needs.push(Need {
                                    element: l.id,
                                    side: 1,
                                    relation: rel_name.clone(),
                                    target: Some(p.t_max),
                                });
                            }
                        }
                    }
                    RelationKind::Containment => {
                        for r in &rows {
                            if !parents.iter().any(|p| p.t_min <= r.t_min && r.t_max <= p.t_max) {
                                push("NotContained", r.id, "", &rel_name, "", None, false);
                            }
                        }
                    }
                    RelationKind::Attachment => {
                        let instants: Vec<i64> = parents.iter().flat_map(|p| [p.t_min, p.t_max]).collect();
                        for r in &rows {
                            let sides: &[u8] = if level.kind == LevelKind::Point { &[0] } else { &[0, 1] };
                            for &side in sides {
                                let t = side_time(r, side);
                                let target = instants.iter().copied().min_by_key(|&x| ((x - t).abs(), x));
                                needs.push(Need {
                                    element: r.id,
                                    side,
                                    relation: rel_name.clone(),
                                    target,
                                });
                            }
                        }
                    }
                }
            }

            for n in &needs {
                let r = rows.iter().find(|r| r.id == n.element).unwrap();
                let now = side_time(r, n.side);
                if n.target == Some(now) {
                    continue;
                }
                let mag = n.target.map(|t| (t - now).abs());
                let correctable = mag.is_some_and(|m| m <= tolerance_ns) && movable(level.kind, &rows, &needs, now);
                push("AlignmentMismatch", r.id, side_name(n.side), &n.relation, "", mag, correctable);
            }
        }
    }
    out
}

/// Whether every boundary of the tier at `now` can be moved together to a
/// single agreed target.
fn movable(kind: LevelKind, rows: &[&Row], needs: &[Need], now: i64) -> bool {
    let at = |n: &Need| rows.iter().any(|r| r.id == n.element && side_time(r, n.side) == now);
    let targets: Vec<Option<i64>> = needs.iter().filter(|n| at(n)).map(|n| n.target).collect();
    if targets.iter().any(Option::is_none) {
        return false;
    }
    let unique: BTreeSet<i64> = targets.into_iter().flatten().collect();
    if unique.len() != 1 {
        return false;
    }
    let to = *unique.iter().next().unwrap();
    if kind == LevelKind::Point {
        return true;
    }
    let spans: Vec<(i64, i64)> = rows.iter().map(|r| (r.t_min, r.t_max)).collect();
    let moved: Vec<(i64, i64)> = spans
        .iter()
        .map(|&(a, b)| (if a == now { to } else { a }, if b == now { to } else { b }))
        .collect();
    let ov = |x: (i64, i64), y: (i64, i64)| x.0 < y.1 && y.0 < x.1;
    for i in 0..moved.len() {
        if moved[i] == spans[i] {
            continue;
        }
        if moved[i].0 >= moved[i].1 {
            return false;
        }
        for j in 0..moved.len() {
            if i != j && ov(moved[i], moved[j]) && !ov(spans[i], spans[j]) {
                return false;
            }
        }
    }
    true
}

/// Findings in the oracle's comparable form.
pub fn as_findings(violations: &[praaline_core::Violation]) -> BTreeSet<Finding> {
    violations
        .iter()
        .map(|v| {
            (
                format!("{:?}", v.kind),
                v.location.level_id.clone(),
                v.location.annotation_id.clone(),
                v.location.speaker_id.clone(),
                v.location.element_id,
                v.location.boundary.map(|b| format!("{b:?}")).unwrap_or_default(),
                v.relation.as_ref().map(|r| r.to_string()).unwrap_or_default(),
                v.attribute.clone().unwrap_or_default(),
                v.magnitude_ns,
                v.correctable,
            )
        })
        .collect()
}

fn op_holds(op: CompareOp, lhs: &Value, literal: &str) -> bool {
    let ord = match lhs {
        Value::Integer(_) | Value::Real(_) => lhs.as_f64().unwrap().partial_cmp(&literal.parse::<f64>().unwrap()),
        Value::Text(t) => Some(t.as_str().cmp(literal)),
        other => panic!("unsupported filter operand {other:?}"),
    };
    let Some(ord) = ord else { return false };
    match op {
        CompareOp::Eq => ord.is_eq(),
        CompareOp::Ne => ord.is_ne(),
        CompareOp::Lt => ord.is_lt(),
        CompareOp::Le => ord.is_le(),
        CompareOp::Gt => ord.is_gt(),
        CompareOp::Ge => ord.is_ge(),
        CompareOp::Contains => matches!(lhs, Value::Text(t) if t.contains(literal)),
    }
}

fn field_of(r: &Row, field: &str) -> Option<Value> {
    match field {
        "label" => Some(Value::Text(r.label.clone())),
        "tMin" => Some(Value::Real(r.t_min as f64 / 1e9)),
        "tMax" => Some(Value::Real(r.t_max as f64 / 1e9)),
        "durNs" if !r.attrs.contains_key("durNs") => Some(Value::Integer(r.t_max - r.t_min)),
        "elementID" => Some(Value::Integer(r.id)),
        a => r.attr(a).cloned(),
    }
}

/// Whether `level` is reached from `from` by following hierarchy parents.
fn is_ancestor(s: &AnnotationStructure, level: &str, from: &str) -> bool {
    let mut cur = s.hierarchy_parent(from);
    while let Some(p) = cur {
        if p == level {
            return true;
        }
        cur = s.hierarchy_parent(p);
    }
    false
}

fn find<'a>(snap: &'a Snapshot, level: &str, a: &str, sp: &str, id: i64) -> Option<&'a Row> {
    snap.levels[level].iter().find(|r| r.annotation == a && r.speaker == sp && r.id == id)
}

/// The ancestor of `r` (at `from`) on `level`.
fn ancestor<'a>(snap: &'a Snapshot, from: &str, r: &'a Row, level: &str) -> Option<&'a Row> {
    let mut cur_level = from.to_string();
    let mut cur = r;
    while cur_level != level {
        let p = snap.structure.hierarchy_parent(&cur_level)?.to_string();
        cur = find(snap, &p, &r.annotation, &r.speaker, cur.parent?)?;
        cur_level = p;
    }
    Some(cur)
}

fn column_values(snap: &Snapshot, target_level: &str, t: &Row, source: &Source) -> Vec<Option<Value>> {
    match source {
        Source::Metadata { metadata } => {
            let (obj, attr) = metadata.split_once('.').unwrap();
            let (id, m) = if obj == "communication" {
                (&t.annotation, &snap.comm_meta)
            } else {
                (&t.speaker, &snap.speaker_meta)
            };
            if attr == "id" {
                vec![Some(Value::Text(id.clone()))]
            } else {
                vec![m.get(id).and_then(|m| m.get(attr)).cloned()]
            }
        }
        Source::Level { level, field } if level == target_level => vec![field_of(t, field)],
        Source::Level { level, field } if is_ancestor(&snap.structure, level, target_level) => {
            vec![ancestor(snap, target_level, t, level).and_then(|a| field_of(a, field))]
        }
        Source::Level { level, field } => {
            let mut rows: Vec<&Row> = snap.levels[level]
                .iter()
                .filter(|r| r.annotation == t.annotation && r.speaker == t.speaker)
                .filter(|r| ancestor(snap, level, r, target_level).is_some_and(|a| a.id == t.id))
                .collect();
            rows.sort_by_key(|r| (r.t_min, r.id));
            rows.into_iter().map(|r| field_of(r, field)).collect()
        }
    }
}

fn numbers(vs: &[Option<Value>]) -> Vec<f64> {
    vs.iter().flatten().map(|v| v.as_f64().unwrap()).collect()
}

fn agg(vs: &[Option<Value>], f: Aggregate) -> Option<Value> {
    if f == Aggregate::Count {
        return Some(Value::Integer(vs.iter().filter(|v| v.is_some()).count() as i64));
    }
    let xs = numbers(vs);
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    match f {
        Aggregate::Count => unreachable!(),
        Aggregate::Sum => Some(Value::Real(xs.iter().sum())),
        _ if xs.is_empty() => None,
        Aggregate::Mean => Some(Value::Real(mean)),
        Aggregate::Min => Some(Value::Real(xs.iter().cloned().fold(f64::INFINITY, f64::min))),
        Aggregate::Max => Some(Value::Real(xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max))),
        Aggregate::StdDev if xs.len() < 2 => None,
        Aggregate::StdDev => Some(Value::Real(
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt(),
        )),
    }
}

/// Replaces column values by z-scores within the given groups.
pub fn zscore(values: &mut [Option<Value>], groups: &[String]) {
    let keys: BTreeSet<&String> = groups.iter().collect();
    for k in keys {
        let idx: Vec<usize> = (0..values.len())
            .filter(|&i| &groups[i] == k && values[i].is_some())
            .collect();
        let xs: Vec<f64> = idx.iter().map(|&i| values[i].as_ref().unwrap().as_f64().unwrap()).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        for (&i, x) in idx.iter().zip(&xs) {
            values[i] = Some(Value::Real(if sd > 0.0 { (x - mean) / sd } else { 0.0 }));
        }
    }
}

fn comm_selected(snap: &Snapshot, spec: &DatasetSpec, comm: &str) -> bool {
    spec.subcorpus.iter().all(|p| {
        assert_eq!(p.object, praaline_core::PredicateObject::Communication);
        snap.comm_meta
            .get(comm)
            .and_then(|m| m.get(&p.attribute))
            .is_some_and(|v| op_holds(p.op, v, &p.value))
    })
}

fn key_order(a: &[Option<Value>], b: &[Option<Value>]) -> std::cmp::Ordering {
    let k = |v: &[Option<Value>]| -> Vec<Option<String>> { v.iter().map(|x| x.as_ref().map(|x| x.to_string())).collect() };
    k(a).cmp(&k(b))
}

/// Dataset rows computed by scanning every element; returns the cells
/// in header order (group keys first).
pub fn dataset_oracle(snap: &Snapshot, spec: &DatasetSpec) -> Vec<Vec<Option<Value>>> {
    let target = &spec.target_level;
    let mut targets: Vec<&Row> = snap.levels[target]
        .iter()
        .filter(|r| comm_selected(snap, spec, &r.annotation))
        .collect();
    targets.sort_by(|a, b| (&a.annotation, a.t_min, a.id, &a.speaker).cmp(&(&b.annotation, b.t_min, b.id, &b.speaker)));

    struct Item {
        comm: String,
        keys: Vec<Option<Value>>,
        values: Vec<Vec<Option<Value>>>,
    }
    let mut items = Vec::new();
    'rows: for t in targets {
        let keys = spec
            .group_by
            .iter()
            .map(|k| {
                let src = Source::Metadata { metadata: k.clone() };
                column_values(snap, target, t, &src).pop().unwrap()
            })
            .collect();
        let mut values = Vec::new();
        for c in &spec.columns {
            let mut vs = column_values(snap, target, t, &c.source);
            if let Some(f) = &c.filter {
                let pass = |v: &Option<Value>| v.as_ref().is_some_and(|v| op_holds(f.op, v, &f.value));
                if c.aggregate.is_some() {
                    vs.retain(pass);
                } else if !pass(&vs[0]) {
                    continue 'rows;
                }
            }
            values.push(vs);
        }
        items.push(Item {
            comm: t.annotation.clone(),
            keys,
            values,
        });
    }

    let finish = |vs: &[Option<Value>], f: Option<Aggregate>| match f {
        None => vs[0].clone(),
        Some(f) => agg(vs, f),
    };
    let mut rows: Vec<(Vec<Option<Value>>, String)> = Vec::new();
    if spec.group_by.is_empty() {
        for it in &items {
            let cells = spec.columns.iter().zip(&it.values).map(|(c, vs)| finish(vs, c.aggregate)).collect();
            rows.push((cells, it.comm.clone()));
        }
    } else {
        let mut keys: Vec<Vec<Option<Value>>> = Vec::new();
        for it in &items {
            if !keys.iter().any(|k| key_order(k, &it.keys).is_eq()) {
                keys.push(it.keys.clone());
            }
        }
        keys.sort_by(|a, b| key_order(a, b));
        for k in keys {
            let members: Vec<&Item> = items.iter().filter(|it| key_order(&it.keys, &k).is_eq()).collect();
            let mut cells = k.clone();
            for (i, c) in spec.columns.iter().enumerate() {
                let pooled: Vec<Option<Value>> = members.iter().flat_map(|m| m.values[i].clone()).collect();
                cells.push(finish(&pooled, c.aggregate));
            }
            let comm = if members.iter().all(|m| m.comm == members[0].comm) {
                members[0].comm.clone()
            } else {
                String::new()
            };
            rows.push((cells, comm));
        }
    }
    let offset = spec.group_by.len();
    for (i, c) in spec.columns.iter().enumerate() {
        let Some(n) = c.normalize else { continue };
        let mut col: Vec<Option<Value>> = rows.iter().map(|(r, _)| r[offset + i].clone()).collect();
        let groups: Vec<String> = match n {
            Normalize::ZScoreBySubcorpus => vec![String::new(); rows.len()],
            Normalize::ZScoreByCommunication => rows.iter().map(|(_, c)| c.clone()).collect(),
        };
        zscore(&mut col, &groups);
        for ((r, _), v) in rows.iter_mut().zip(col) {
            r[offset + i] = v;
        }
    }
    rows.into_iter().map(|(r, _)| r).collect()
}

/// Cells equal up to a relative tolerance on reals.
pub fn cells_match(a: &Option<Value>, b: &Option<Value>, rel: f64) -> bool {
    match (a, b) {
        (Some(Value::Real(x)), Some(Value::Real(y))) => (x - y).abs() <= rel * x.abs().max(y.abs()).max(1.0),
        _ => a == b,
    }
}

/// Concordance hits as (communication, speaker, element, match, left, right),
/// found by scanning every tier.
pub type Hit = (String, String, i64, String, Vec<String>, Vec<String>);

pub fn concordance_oracle(snap: &Snapshot, level: &str, attribute: Option<&str>, pattern: &Pattern, context: usize) -> Vec<Hit> {
    let re = match pattern {
        Pattern::Regex(r) => Some(regex::Regex::new(r).unwrap()),
        Pattern::Exact(_) => None,
    };
    let mut hits: Vec<(i64, Hit)> = Vec::new();
    for (annotation, speaker) in snap.tier_keys() {
        let rows = snap.tier(level, &annotation, &speaker);
        let vals: Vec<String> = rows
            .iter()
            .map(|r| match attribute {
                None => r.label.clone(),
                Some(a) => r.attr(a).map(|v| v.to_string()).unwrap_or_default(),
            })
            .collect();
        for (i, r) in rows.iter().enumerate() {
            let hit = match (pattern, &re) {
                (Pattern::Exact(s), _) => &vals[i] == s,
                (_, Some(re)) => re.is_match(&vals[i]),
                _ => unreachable!(),
            };
            if hit {
                let left = vals[i.saturating_sub(context)..i].to_vec();
                let right = vals[i + 1..vals.len().min(i + 1 + context)].to_vec();
                hits.push((r.t_min, (annotation.clone(), speaker.clone(), r.id, vals[i].clone(), left, right)));
            }
        }
    }
    hits.sort_by(|a, b| (&a.1 .0, a.0, a.1 .2, &a.1 .1).cmp(&(&b.1 .0, b.0, b.1 .2, &b.1 .1)));
    hits.into_iter().map(|(_, h)| h).collect()
}
