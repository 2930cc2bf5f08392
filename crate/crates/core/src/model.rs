//! In-memory corpus object model.
//!
//! Communications own recordings and annotations; speakers take part in
//! communications through participations. Every entity carries user-defined
//! metadata typed by the corpus [`AnnotationStructure`]. Time-aligned
//! annotation data lives in [`Tier`]s, one per (annotation, speaker, level).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::structure::{AnnotationLevelDef, LevelKind, MetadataAttribute, MetadataObject};
use crate::time::Time;
use crate::value::{DataType, Value};

pub type Metadata = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("{object} {id:?} references unknown {target} {target_id:?}")]
    UnknownReference {
        object: MetadataObject,
        id: String,
        target: MetadataObject,
        target_id: String,
    },
    #[error("{object} {id:?}: metadata {attribute:?} expects {expected}, got {got:?}")]
    MetadataTypeMismatch {
        object: MetadataObject,
        id: String,
        attribute: String,
        expected: DataType,
        got: String,
    },
    #[error("{object} has no metadata attribute {attribute:?}")]
    UnknownMetadataAttribute { object: MetadataObject, attribute: String },
    #[error("{object} {id:?}: required metadata {attribute:?} is missing")]
    MissingMetadata {
        object: MetadataObject,
        id: String,
        attribute: String,
    },
    #[error("operator {op} cannot be applied to {attribute:?} ({datatype}) with literal {literal:?}")]
    OperatorTypeMismatch {
        attribute: String,
        op: CompareOp,
        datatype: DataType,
        literal: String,
    },
    #[error("invalid {object} {id:?}: {reason}")]
    InvalidEntity {
        object: MetadataObject,
        id: String,
        reason: String,
    },
    #[error("{object} {id:?} is still referenced by {by}")]
    Referenced {
        object: MetadataObject,
        id: String,
        by: String,
    },
    #[error("unknown {object} {id:?}")]
    NotFound { object: MetadataObject, id: String },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Communication {
    pub id: String,
    #[serde(default)]
    pub metadata: Metadata,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Speaker {
    pub id: String,
    #[serde(default)]
    pub metadata: Metadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub id: String,
    pub communication_id: String,
    pub filename: String,
    pub duration: Time,
    pub sample_rate_hz: u32,
    pub channels: u16,
    #[serde(default)]
    pub metadata: Metadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participation {
    pub communication_id: String,
    pub speaker_id: String,
    pub role: String,
    #[serde(default)]
    pub metadata: Metadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: String,
    pub communication_id: String,
    #[serde(default)]
    pub metadata: Metadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Entity {
    Communication(Communication),
    Speaker(Speaker),
    Recording(Recording),
    Participation(Participation),
    Annotation(Annotation),
}

impl Entity {
    pub fn object(&self) -> MetadataObject {
        match self {
            Entity::Communication(_) => MetadataObject::Communication,
            Entity::Speaker(_) => MetadataObject::Speaker,
            Entity::Recording(_) => MetadataObject::Recording,
            Entity::Participation(_) => MetadataObject::Participation,
            Entity::Annotation(_) => MetadataObject::Annotation,
        }
    }

    /// Identifier used in diagnostics; participations use `communication/speaker`.
    pub fn id(&self) -> String {
        match self {
            Entity::Communication(c) => c.id.clone(),
            Entity::Speaker(s) => s.id.clone(),
            Entity::Recording(r) => r.id.clone(),
            Entity::Participation(p) => format!("{}/{}", p.communication_id, p.speaker_id),
            Entity::Annotation(a) => a.id.clone(),
        }
    }

    pub fn metadata(&self) -> &Metadata {
        match self {
            Entity::Communication(c) => &c.metadata,
            Entity::Speaker(s) => &s.metadata,
            Entity::Recording(r) => &r.metadata,
            Entity::Participation(p) => &p.metadata,
            Entity::Annotation(a) => &a.metadata,
        }
    }

    fn metadata_mut(&mut self) -> &mut Metadata {
        match self {
            Entity::Communication(c) => &mut c.metadata,
            Entity::Speaker(s) => &mut s.metadata,
            Entity::Recording(r) => &mut r.metadata,
            Entity::Participation(p) => &mut p.metadata,
            Entity::Annotation(a) => &mut a.metadata,
        }
    }
}

/// Corpus entities and the metadata attributes that type them.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorpusModel {
    pub metadata_structure: Vec<MetadataAttribute>,
    pub communications: BTreeMap<String, Communication>,
    pub speakers: BTreeMap<String, Speaker>,
    pub recordings: BTreeMap<String, Recording>,
    pub participations: BTreeMap<(String, String), Participation>,
    pub annotations: BTreeMap<String, Annotation>,
}

fn check_id(object: MetadataObject, id: &str) -> Result<(), ModelError> {
    if id.is_empty() || id.chars().any(|c| c.is_control()) {
        return Err(ModelError::InvalidEntity {
            object,
            id: id.to_string(),
            reason: "identifiers must be non-empty and free of control characters".into(),
        });
    }
    Ok(())
}

impl CorpusModel {
    pub fn new(metadata_structure: Vec<MetadataAttribute>) -> Self {
        CorpusModel {
            metadata_structure,
            ..Default::default()
        }
    }

    pub fn metadata_attribute(&self, object: MetadataObject, id: &str) -> Option<&MetadataAttribute> {
        self.metadata_structure
            .iter()
            .find(|m| m.object == object && m.id == id)
    }

    /// Checks metadata keys and types, coercing integers to reals in place.
    fn conform_metadata(&self, entity: &mut Entity) -> Result<(), ModelError> {
        let object = entity.object();
        let id = entity.id();
        let declared: Vec<&MetadataAttribute> = self
            .metadata_structure
            .iter()
            .filter(|m| m.object == object)
            .collect();
        let metadata = entity.metadata_mut();
        for (key, value) in metadata.iter_mut() {
            let attr = declared
                .iter()
                .find(|m| &m.id == key)
                .ok_or_else(|| ModelError::UnknownMetadataAttribute {
                    object,
                    attribute: key.clone(),
                })?;
            let coerced = value.clone().coerce(attr.datatype).ok_or_else(|| {
                ModelError::MetadataTypeMismatch {
                    object,
                    id: id.clone(),
                    attribute: key.clone(),
                    expected: attr.datatype,
                    got: value.to_string(),
                }
            })?;
            *value = coerced;
        }
        for attr in declared.iter().filter(|m| !m.optional) {
            if !metadata.contains_key(&attr.id) {
                return Err(ModelError::MissingMetadata {
                    object,
                    id,
                    attribute: attr.id.clone(),
                });
            }
        }
        Ok(())
    }

    fn require(&self, from: &Entity, target: MetadataObject, target_id: &str) -> Result<(), ModelError> {
        let exists = match target {
            MetadataObject::Communication => self.communications.contains_key(target_id),
            MetadataObject::Speaker => self.speakers.contains_key(target_id),
            MetadataObject::Recording => self.recordings.contains_key(target_id),
            MetadataObject::Annotation => self.annotations.contains_key(target_id),
            MetadataObject::Participation => false,
        };
        if exists {
            Ok(())
        } else {
            Err(ModelError::UnknownReference {
                object: from.object(),
                id: from.id(),
                target,
                target_id: target_id.to_string(),
            })
        }
    }

    /// Inserts or replaces an entity after checking metadata and references.
    /// Returns the entity as stored (with coerced metadata).
    pub fn upsert_entity(&mut self, mut entity: Entity) -> Result<Entity, ModelError> {
        self.conform_metadata(&mut entity)?;
        match &entity {
            Entity::Communication(c) => check_id(MetadataObject::Communication, &c.id)?,
            Entity::Speaker(s) => check_id(MetadataObject::Speaker, &s.id)?,
            Entity::Recording(r) => {
                check_id(MetadataObject::Recording, &r.id)?;
                self.require(&entity, MetadataObject::Communication, &r.communication_id)?;
                if r.duration.ns() <= 0 || r.sample_rate_hz == 0 || r.channels == 0 {
                    return Err(ModelError::InvalidEntity {
                        object: MetadataObject::Recording,
                        id: r.id.clone(),
                        reason: "duration, sample rate and channel count must be positive".into(),
                    });
                }
                if let Some(old) = self.recordings.get(&r.id) {
                    if old.communication_id != r.communication_id {
                        return Err(ModelError::InvalidEntity {
                            object: MetadataObject::Recording,
                            id: r.id.clone(),
                            reason: "a recording cannot move to another communication".into(),
                        });
                    }
                }
            }
            Entity::Participation(p) => {
                self.require(&entity, MetadataObject::Communication, &p.communication_id)?;
                self.require(&entity, MetadataObject::Speaker, &p.speaker_id)?;
            }
            Entity::Annotation(a) => {
                check_id(MetadataObject::Annotation, &a.id)?;
                self.require(&entity, MetadataObject::Communication, &a.communication_id)?;
                if let Some(old) = self.annotations.get(&a.id) {
                    if old.communication_id != a.communication_id {
                        return Err(ModelError::InvalidEntity {
                            object: MetadataObject::Annotation,
                            id: a.id.clone(),
                            reason: "an annotation cannot move to another communication".into(),
                        });
                    }
                }
            }
        }
        let stored = entity.clone();
        match entity {
            Entity::Communication(c) => {
                self.communications.insert(c.id.clone(), c);
            }
            Entity::Speaker(s) => {
                self.speakers.insert(s.id.clone(), s);
            }
            Entity::Recording(r) => {
                self.recordings.insert(r.id.clone(), r);
            }
            Entity::Participation(p) => {
                self.participations
                    .insert((p.communication_id.clone(), p.speaker_id.clone()), p);
            }
            Entity::Annotation(a) => {
                self.annotations.insert(a.id.clone(), a);
            }
        }
        Ok(stored)
    }

    /// Removes an entity. Referenced entities cannot be removed.
    pub fn remove_entity(&mut self, object: MetadataObject, id: &str) -> Result<(), ModelError> {
        let referenced = |by: String| ModelError::Referenced {
            object,
            id: id.to_string(),
            by,
        };
        match object {
            MetadataObject::Communication => {
                if let Some(r) = self.recordings.values().find(|r| r.communication_id == id) {
                    return Err(referenced(format!("recording {:?}", r.id)));
                }
                if let Some(a) = self.annotations.values().find(|a| a.communication_id == id) {
                    return Err(referenced(format!("annotation {:?}", a.id)));
                }
                if let Some(p) = self.participations.values().find(|p| p.communication_id == id) {
                    return Err(referenced(format!("participation of {:?}", p.speaker_id)));
                }
                self.communications.remove(id).map(drop)
            }
            MetadataObject::Speaker => {
                if let Some(p) = self.participations.values().find(|p| p.speaker_id == id) {
                    return Err(referenced(format!("participation in {:?}", p.communication_id)));
                }
                self.speakers.remove(id).map(drop)
            }
            MetadataObject::Recording => self.recordings.remove(id).map(drop),
            MetadataObject::Annotation => self.annotations.remove(id).map(drop),
            MetadataObject::Participation => {
                let (c, s) = id.split_once('/').unwrap_or((id, ""));
                self.participations.remove(&(c.to_string(), s.to_string())).map(drop)
            }
        }
        .ok_or_else(|| ModelError::NotFound {
            object,
            id: id.to_string(),
        })
    }

    /// Full scan for dangling references.
    pub fn dangling_references(&self) -> Vec<String> {
        let mut out = Vec::new();
        for r in self.recordings.values() {
            if !self.communications.contains_key(&r.communication_id) {
                out.push(format!("recording {} -> communication {}", r.id, r.communication_id));
            }
        }
        for a in self.annotations.values() {
            if !self.communications.contains_key(&a.communication_id) {
                out.push(format!("annotation {} -> communication {}", a.id, a.communication_id));
            }
        }
        for p in self.participations.values() {
            if !self.communications.contains_key(&p.communication_id) {
                out.push(format!("participation -> communication {}", p.communication_id));
            }
            if !self.speakers.contains_key(&p.speaker_id) {
                out.push(format!("participation -> speaker {}", p.speaker_id));
            }
        }
        out
    }

    pub fn recordings_of<'a>(&'a self, communication_id: &'a str) -> impl Iterator<Item = &'a Recording> + 'a {
        self.recordings
            .values()
            .filter(move |r| r.communication_id == communication_id)
    }

    pub fn speakers_of<'a>(&'a self, communication_id: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.participations
            .values()
            .filter(move |p| p.communication_id == communication_id)
            .map(|p| p.speaker_id.as_str())
    }

    /// Ids of the communications satisfying every predicate, sorted.
    pub fn select_subcorpus(&self, filter: &[Predicate]) -> Result<Vec<String>, ModelError> {
        let compiled = filter
            .iter()
            .map(|p| p.compile(&self.metadata_structure))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self
            .communications
            .values()
            .filter(|c| compiled.iter().all(|p| self.communication_matches(c, p)))
            .map(|c| c.id.clone())
            .collect())
    }

    fn communication_matches(&self, communication: &Communication, predicate: &CompiledPredicate) -> bool {
        match predicate.object {
            PredicateObject::Communication => predicate.test(communication.metadata.get(&predicate.attribute)),
            PredicateObject::Speaker => self.speakers_of(&communication.id).any(|speaker| {
                self.speakers
                    .get(speaker)
                    .is_some_and(|s| predicate.test(s.metadata.get(&predicate.attribute)))
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CompareOp {
    #[serde(rename = "=", alias = "==")]
    Eq,
    #[serde(rename = "!=", alias = "≠", alias = "<>")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=", alias = "≤")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=", alias = "≥")]
    Ge,
    #[serde(rename = "contains")]
    Contains,
}

impl CompareOp {
    pub fn parse(token: &str) -> Option<CompareOp> {
        Some(match token {
            "=" | "==" => CompareOp::Eq,
            "!=" | "≠" | "<>" => CompareOp::Ne,
            "<" => CompareOp::Lt,
            "<=" | "≤" => CompareOp::Le,
            ">" => CompareOp::Gt,
            ">=" | "≥" => CompareOp::Ge,
            "contains" | "~" => CompareOp::Contains,
            _ => return None,
        })
    }

    /// Whether the operator is defined for values of `datatype`.
    pub fn applies_to(self, datatype: DataType) -> bool {
        match self {
            CompareOp::Eq | CompareOp::Ne => true,
            CompareOp::Lt | CompareOp::Le | CompareOp::Gt | CompareOp::Ge => datatype.is_ordered(),
            CompareOp::Contains => datatype == DataType::Text,
        }
    }

    /// Evaluates `lhs op rhs`. Values of incomparable types never match.
    pub fn eval(self, lhs: &Value, rhs: &Value) -> bool {
        use std::cmp::Ordering::*;
        if self == CompareOp::Contains {
            return match (lhs, rhs) {
                (Value::Text(a), Value::Text(b)) => a.contains(b.as_str()),
                _ => false,
            };
        }
        let Some(ord) = lhs.compare(rhs) else {
            return false;
        };
        match self {
            CompareOp::Eq => ord == Equal,
            CompareOp::Ne => ord != Equal,
            CompareOp::Lt => ord == Less,
            CompareOp::Le => ord != Greater,
            CompareOp::Gt => ord == Greater,
            CompareOp::Ge => ord != Less,
            CompareOp::Contains => unreachable!(),
        }
    }
}

impl fmt::Display for CompareOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CompareOp::Eq => "=",
            CompareOp::Ne => "!=",
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
            CompareOp::Contains => "contains",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum PredicateObject {
    #[default]
    Communication,
    Speaker,
}

/// One metadata condition of a sub-corpus filter. Speaker predicates hold for
/// a communication when any participating speaker satisfies them. Missing
/// values never match.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predicate {
    #[serde(default)]
    pub object: PredicateObject,
    pub attribute: String,
    pub op: CompareOp,
    pub value: String,
}

impl Predicate {
    pub fn communication(attribute: &str, op: CompareOp, value: &str) -> Self {
        Predicate {
            object: PredicateObject::Communication,
            attribute: attribute.to_string(),
            op,
            value: value.to_string(),
        }
    }

    pub fn speaker(attribute: &str, op: CompareOp, value: &str) -> Self {
        Predicate {
            object: PredicateObject::Speaker,
            ..Self::communication(attribute, op, value)
        }
    }

    /// Parses `[speaker.]attribute OP literal`, e.g. `genre=interview` or
    /// `speaker.age>=30`.
    pub fn parse(text: &str) -> Option<Predicate> {
        const OPS: [&str; 10] = ["<=", ">=", "!=", "==", "≤", "≥", "≠", "=", "<", ">"];
        let (lhs, op, rhs) = if let Some(pos) = text.find(" contains ") {
            (&text[..pos], CompareOp::Contains, &text[pos + 10..])
        } else {
            let (pos, op) = OPS
                .iter()
                .filter_map(|op| text.find(op).map(|pos| (pos, *op)))
                .min_by_key(|(pos, op)| (*pos, std::cmp::Reverse(op.len())))?;
            (&text[..pos], CompareOp::parse(op)?, &text[pos + op.len()..])
        };
        let lhs = lhs.trim();
        let (object, attribute) = match lhs.split_once('.') {
            Some(("speaker", attr)) => (PredicateObject::Speaker, attr),
            Some(("communication", attr)) => (PredicateObject::Communication, attr),
            _ => (PredicateObject::Communication, lhs),
        };
        Some(Predicate {
            object,
            attribute: attribute.to_string(),
            op,
            value: rhs.trim().to_string(),
        })
    }

    fn compile(&self, metadata: &[MetadataAttribute]) -> Result<CompiledPredicate, ModelError> {
        let object = match self.object {
            PredicateObject::Communication => MetadataObject::Communication,
            PredicateObject::Speaker => MetadataObject::Speaker,
        };
        let attr = metadata
            .iter()
            .find(|m| m.object == object && m.id == self.attribute)
            .ok_or_else(|| ModelError::UnknownMetadataAttribute {
                object,
                attribute: self.attribute.clone(),
            })?;
        let mismatch = || ModelError::OperatorTypeMismatch {
            attribute: self.attribute.clone(),
            op: self.op,
            datatype: attr.datatype,
            literal: self.value.clone(),
        };
        if !self.op.applies_to(attr.datatype) {
            return Err(mismatch());
        }
        let literal = Value::parse(attr.datatype, &self.value).map_err(|_| mismatch())?;
        Ok(CompiledPredicate {
            object: self.object,
            attribute: self.attribute.clone(),
            op: self.op,
            literal,
        })
    }
}

struct CompiledPredicate {
    object: PredicateObject,
    attribute: String,
    op: CompareOp,
    literal: Value,
}

impl CompiledPredicate {
    fn test(&self, value: Option<&Value>) -> bool {
        value.is_some_and(|v| self.op.eval(v, &self.literal))
    }
}

/// One time-aligned unit of annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationElement {
    pub id: i64,
    pub t_min: Time,
    pub t_max: Time,
    pub label: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, Option<Value>>,
    #[serde(default)]
    pub parent: Option<i64>,
}

impl AnnotationElement {
    pub fn interval(id: i64, t_min: Time, t_max: Time, label: &str) -> Self {
        AnnotationElement {
            id,
            t_min,
            t_max,
            label: label.to_string(),
            attributes: BTreeMap::new(),
            parent: None,
        }
    }

    pub fn point(id: i64, t: Time, label: &str) -> Self {
        Self::interval(id, t, t, label)
    }

    pub fn with_attribute(mut self, id: &str, value: Option<Value>) -> Self {
        self.attributes.insert(id.to_string(), value);
        self
    }

    pub fn with_parent(mut self, parent: Option<i64>) -> Self {
        self.parent = parent;
        self
    }

    pub fn duration_ns(&self) -> i64 {
        self.t_max - self.t_min
    }

    pub fn attribute(&self, id: &str) -> Option<&Value> {
        self.attributes.get(id).and_then(Option::as_ref)
    }

    fn sort_key(&self) -> (Time, i64) {
        (self.t_min, self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ElementError {
    #[error("element {id}: {reason}")]
    Span { id: i64, reason: String },
    #[error("element {id}: unknown attribute {attribute:?}")]
    UnknownAttribute { id: i64, attribute: String },
    #[error("element {id}: attribute {attribute:?} expects {expected}")]
    TypeMismatch {
        id: i64,
        attribute: String,
        expected: DataType,
    },
    #[error("element {id}: value {value:?} of {attribute:?} is not in the vocabulary")]
    Vocabulary {
        id: i64,
        attribute: String,
        value: String,
    },
    #[error("element {id}: required attribute {attribute:?} is null")]
    MissingRequired { id: i64, attribute: String },
    #[error("element id {0} is used twice")]
    DuplicateId(i64),
    #[error("elements {0} and {1} overlap")]
    Overlap(i64, i64),
}

/// Checks one element against its level definition, coercing integer values
/// of real attributes in place.
pub fn conform_element(level: &AnnotationLevelDef, element: &mut AnnotationElement) -> Result<(), ElementError> {
    let id = element.id;
    let span_err = |reason: &str| ElementError::Span {
        id,
        reason: reason.to_string(),
    };
    if id < 1 {
        return Err(span_err("element ids start at 1"));
    }
    if element.t_min.ns() < 0 {
        return Err(span_err("negative start time"));
    }
    match level.kind {
        LevelKind::Interval if element.t_min >= element.t_max => {
            return Err(span_err("interval must have tMin < tMax"));
        }
        LevelKind::Point if element.t_min != element.t_max => {
            return Err(span_err("point must have tMin = tMax"));
        }
        _ => {}
    }
    for (key, value) in element.attributes.iter_mut() {
        let def = level.attribute(key).ok_or_else(|| ElementError::UnknownAttribute {
            id,
            attribute: key.clone(),
        })?;
        if let Some(v) = value.take() {
            let coerced = v.coerce(def.datatype).ok_or_else(|| ElementError::TypeMismatch {
                id,
                attribute: key.clone(),
                expected: def.datatype,
            })?;
            if let Value::Text(text) = &coerced {
                if !def.permits(text) {
                    return Err(ElementError::Vocabulary {
                        id,
                        attribute: key.clone(),
                        value: text.clone(),
                    });
                }
            }
            *value = Some(coerced);
        }
    }
    for def in level.attributes.iter().filter(|a| !a.optional) {
        if element.attribute(&def.id).is_none() {
            return Err(ElementError::MissingRequired {
                id,
                attribute: def.id.clone(),
            });
        }
    }
    Ok(())
}

/// Identifies the tier of one level for one annotation and speaker.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TierKey {
    pub communication_id: String,
    pub annotation_id: String,
    pub speaker_id: String,
    pub level_id: String,
}

impl TierKey {
    /// Key using the communication id as annotation id.
    pub fn new(communication_id: &str, speaker_id: &str, level_id: &str) -> Self {
        TierKey {
            communication_id: communication_id.to_string(),
            annotation_id: communication_id.to_string(),
            speaker_id: speaker_id.to_string(),
            level_id: level_id.to_string(),
        }
    }

    pub fn with_level(&self, level_id: &str) -> Self {
        TierKey {
            level_id: level_id.to_string(),
            ..self.clone()
        }
    }
}

/// Elements of one level for one annotation and speaker, kept ordered by
/// `(tMin, elementID)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tier {
    pub key: TierKey,
    elements: Vec<AnnotationElement>,
}

impl Tier {
    pub fn new(key: TierKey, mut elements: Vec<AnnotationElement>) -> Self {
        elements.sort_by_key(AnnotationElement::sort_key);
        Tier { key, elements }
    }

    pub fn empty(key: TierKey) -> Self {
        Tier {
            key,
            elements: Vec::new(),
        }
    }

    pub fn elements(&self) -> &[AnnotationElement] {
        &self.elements
    }

    pub fn into_elements(self) -> Vec<AnnotationElement> {
        self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn get(&self, id: i64) -> Option<&AnnotationElement> {
        self.elements.iter().find(|e| e.id == id)
    }

    /// Inserts at the ordered position.
    pub fn insert(&mut self, element: AnnotationElement) {
        let key = element.sort_key();
        let pos = self.elements.partition_point(|e| e.sort_key() <= key);
        self.elements.insert(pos, element);
    }

    pub fn remove(&mut self, id: i64) -> Option<AnnotationElement> {
        let pos = self.elements.iter().position(|e| e.id == id)?;
        Some(self.elements.remove(pos))
    }

    /// Applies `f` to every element and restores the ordering afterwards.
    pub fn update<F: FnMut(&mut AnnotationElement)>(&mut self, f: F) {
        self.elements.iter_mut().for_each(f);
        self.elements.sort_by_key(AnnotationElement::sort_key);
    }

    pub fn is_ordered(&self) -> bool {
        self.elements
            .windows(2)
            .all(|w| w[0].sort_key() <= w[1].sort_key())
    }

    /// Adjacent pairs `(earlier, later)` whose spans overlap.
    pub fn overlaps(&self) -> Vec<(i64, i64)> {
        self.elements
            .windows(2)
            .filter(|w| w[0].t_max > w[1].t_min)
            .map(|w| (w[0].id, w[1].id))
            .collect()
    }

    pub fn next_id(&self) -> i64 {
        self.elements.iter().map(|e| e.id).max().unwrap_or(0) + 1
    }

    /// Validates every element against the level, plus id uniqueness and
    /// non-overlap for interval levels.
    pub fn conform(&mut self, level: &AnnotationLevelDef) -> Result<(), ElementError> {
        let mut ids = BTreeSet::new();
        for element in &mut self.elements {
            if !ids.insert(element.id) {
                return Err(ElementError::DuplicateId(element.id));
            }
            conform_element(level, element)?;
        }
        if level.kind == LevelKind::Interval {
            if let Some(&(a, b)) = self.overlaps().first() {
                return Err(ElementError::Overlap(a, b));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::AnnotationAttributeDef;

    fn corpus() -> CorpusModel {
        CorpusModel::new(vec![
            MetadataAttribute::new(MetadataObject::Communication, "genre", DataType::Text),
            MetadataAttribute::new(MetadataObject::Communication, "year", DataType::Integer),
            MetadataAttribute::new(MetadataObject::Communication, "rate", DataType::Real),
            MetadataAttribute::new(MetadataObject::Speaker, "sex", DataType::Text),
        ])
    }

    fn comm(id: &str, genre: &str, year: i64) -> Entity {
        Entity::Communication(Communication {
            id: id.into(),
            metadata: [
                ("genre".to_string(), Value::Text(genre.into())),
                ("year".to_string(), Value::Integer(year)),
            ]
            .into(),
        })
    }

    #[test]
    fn upsert_speaker() {
        let mut c = corpus();
        c.upsert_entity(Entity::Speaker(Speaker {
            id: "spk1".into(),
            metadata: Metadata::new(),
        }))
        .unwrap();
        assert_eq!(c.speakers.len(), 1);
    }

    #[test]
    fn recording_needs_communication() {
        let mut c = corpus();
        let err = c
            .upsert_entity(Entity::Recording(Recording {
                id: "r1".into(),
                communication_id: "nope".into(),
                filename: "a.wav".into(),
                duration: Time::from_ms(1000),
                sample_rate_hz: 16000,
                channels: 1,
                metadata: Metadata::new(),
            }))
            .unwrap_err();
        assert!(matches!(err, ModelError::UnknownReference { .. }));
    }

    #[test]
    fn metadata_type_is_checked() {
        let mut c = corpus();
        let err = c
            .upsert_entity(Entity::Communication(Communication {
                id: "c1".into(),
                metadata: [("year".to_string(), Value::Text("abc".into()))].into(),
            }))
            .unwrap_err();
        assert!(matches!(err, ModelError::MetadataTypeMismatch { .. }));
        let err = c
            .upsert_entity(Entity::Communication(Communication {
                id: "c1".into(),
                metadata: [("colour".to_string(), Value::Text("red".into()))].into(),
            }))
            .unwrap_err();
        assert!(matches!(err, ModelError::UnknownMetadataAttribute { .. }));
        // Integers widen to reals.
        let stored = c
            .upsert_entity(Entity::Communication(Communication {
                id: "c1".into(),
                metadata: [("rate".to_string(), Value::Integer(3))].into(),
            }))
            .unwrap();
        assert_eq!(stored.metadata()["rate"], Value::Real(3.0));
    }

    #[test]
    fn deletion_is_restricted() {
        let mut c = corpus();
        c.upsert_entity(comm("c1", "interview", 2001)).unwrap();
        c.upsert_entity(Entity::Annotation(Annotation {
            id: "c1".into(),
            communication_id: "c1".into(),
            metadata: Metadata::new(),
        }))
        .unwrap();
        assert!(matches!(
            c.remove_entity(MetadataObject::Communication, "c1"),
            Err(ModelError::Referenced { .. })
        ));
        c.remove_entity(MetadataObject::Annotation, "c1").unwrap();
        c.remove_entity(MetadataObject::Communication, "c1").unwrap();
        assert!(c.communications.is_empty());
    }

    #[test]
    fn subcorpus_selection() {
        let mut c = corpus();
        c.upsert_entity(comm("c3", "interview", 2003)).unwrap();
        c.upsert_entity(comm("c1", "interview", 2001)).unwrap();
        c.upsert_entity(comm("c2", "news", 2002)).unwrap();
        assert_eq!(c.select_subcorpus(&[]).unwrap(), ["c1", "c2", "c3"]);
        assert_eq!(
            c.select_subcorpus(&[Predicate::communication("genre", CompareOp::Eq, "interview")])
                .unwrap(),
            ["c1", "c3"]
        );
        assert_eq!(
            c.select_subcorpus(&[Predicate::communication("year", CompareOp::Ge, "2002")])
                .unwrap(),
            ["c2", "c3"]
        );
        assert!(matches!(
            c.select_subcorpus(&[Predicate::communication("year", CompareOp::Lt, "x")]),
            Err(ModelError::OperatorTypeMismatch { .. })
        ));
        assert!(matches!(
            c.select_subcorpus(&[Predicate::communication("genre", CompareOp::Lt, "a")]),
            Err(ModelError::OperatorTypeMismatch { .. })
        ));
        assert!(matches!(
            c.select_subcorpus(&[Predicate::communication("nope", CompareOp::Eq, "a")]),
            Err(ModelError::UnknownMetadataAttribute { .. })
        ));
    }

    #[test]
    fn speaker_predicates_follow_participations() {
        let mut c = corpus();
        c.upsert_entity(comm("c1", "interview", 2001)).unwrap();
        c.upsert_entity(comm("c2", "interview", 2001)).unwrap();
        c.upsert_entity(Entity::Speaker(Speaker {
            id: "s1".into(),
            metadata: [("sex".to_string(), Value::Text("F".into()))].into(),
        }))
        .unwrap();
        c.upsert_entity(Entity::Participation(Participation {
            communication_id: "c2".into(),
            speaker_id: "s1".into(),
            role: "interviewee".into(),
            metadata: Metadata::new(),
        }))
        .unwrap();
        assert_eq!(
            c.select_subcorpus(&[Predicate::speaker("sex", CompareOp::Eq, "F")]).unwrap(),
            ["c2"]
        );
    }

    #[test]
    fn predicate_text_syntax() {
        assert_eq!(
            Predicate::parse("genre=interview").unwrap(),
            Predicate::communication("genre", CompareOp::Eq, "interview")
        );
        assert_eq!(
            Predicate::parse("speaker.age >= 30").unwrap(),
            Predicate::speaker("age", CompareOp::Ge, "30")
        );
        assert_eq!(
            Predicate::parse("title contains a=b").unwrap(),
            Predicate::communication("title", CompareOp::Contains, "a=b")
        );
        assert!(Predicate::parse("nothing").is_none());
    }

    #[test]
    fn element_conformance() {
        let level = AnnotationLevelDef::interval("syll")
            .with_attribute(AnnotationAttributeDef::new("prom", DataType::Text).with_vocabulary(["P", "0"]))
            .with_attribute(AnnotationAttributeDef::new("f0", DataType::Real).required());
        let ok = AnnotationElement::interval(1, Time::from_ms(0), Time::from_ms(10), "k@")
            .with_attribute("prom", Some(Value::Text("P".into())))
            .with_attribute("f0", Some(Value::Integer(120)));
        let mut e = ok.clone();
        conform_element(&level, &mut e).unwrap();
        assert_eq!(e.attribute("f0"), Some(&Value::Real(120.0)));

        let mut bad = ok.clone().with_attribute("prom", Some(Value::Text("X".into())));
        assert!(matches!(conform_element(&level, &mut bad), Err(ElementError::Vocabulary { .. })));
        let mut bad = ok.clone().with_attribute("f0", None);
        assert!(matches!(
            conform_element(&level, &mut bad),
            Err(ElementError::MissingRequired { .. })
        ));
        let mut bad = AnnotationElement::interval(1, Time::from_ms(5), Time::from_ms(5), "");
        assert!(matches!(conform_element(&level, &mut bad), Err(ElementError::Span { .. })));
    }

    #[test]
    fn tier_keeps_order() {
        let key = TierKey::new("c1", "s1", "syll");
        let mut tier = Tier::new(
            key,
            vec![
                AnnotationElement::interval(2, Time::from_ms(10), Time::from_ms(20), "b"),
                AnnotationElement::interval(1, Time::from_ms(0), Time::from_ms(10), "a"),
            ],
        );
        assert_eq!(tier.elements()[0].label, "a");
        tier.insert(AnnotationElement::interval(3, Time::from_ms(5), Time::from_ms(6), "c"));
        assert!(tier.is_ordered());
        assert_eq!(tier.overlaps(), vec![(1, 3)]);
        assert_eq!(tier.next_id(), 4);
    }
}
