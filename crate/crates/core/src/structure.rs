//! Metadata and annotation structure definitions.
//!
//! An [`AnnotationStructure`] is the catalog every other module consumes: the
//! levels of time-aligned annotation, their typed attributes, the relations
//! between levels and the metadata attributes attached to corpus entities.
//! Identifiers in the structure become table and column names in the store, so
//! they are validated lexically here.

mod xml;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use crate::value::DataType;
pub use xml::{read_structure, write_structure};

/// Column names with fixed meaning in every level table.
pub const RESERVED_LEVEL_COLUMNS: [&str; 7] = [
    "elementID",
    "annotationID",
    "speakerID",
    "tMin",
    "tMax",
    "label",
    "parentID",
];

/// Fixed columns of the entity tables; metadata attributes may not reuse them.
pub const RESERVED_ENTITY_COLUMNS: [&str; 7] = [
    "id",
    "communicationID",
    "speakerID",
    "filename",
    "durationNs",
    "sampleRateHz",
    "channels",
];

const MAX_IDENTIFIER_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StructureError {
    #[error("invalid identifier {0:?}")]
    InvalidIdentifier(String),
    #[error("level {0:?} already exists")]
    DuplicateLevel(String),
    #[error("unknown level {0:?}")]
    UnknownLevel(String),
    #[error("attribute {attribute:?} already exists on {owner}")]
    DuplicateAttribute { owner: String, attribute: String },
    #[error("{0:?} is a reserved column name")]
    ReservedName(String),
    #[error("attribute {0:?}: a vocabulary requires datatype Text and at least one item")]
    InvalidVocabulary(String),
    #[error("attribute {attribute:?}: datatype {datatype} is not allowed here")]
    InvalidDatatype { attribute: String, datatype: DataType },
    #[error("relation {0} would create a hierarchy cycle")]
    CycleDetected(String),
    #[error("relation {0} links a level to itself")]
    SelfRelation(String),
    #[error("relation {0} requires interval levels")]
    KindMismatch(String),
    #[error("relation {0} already exists")]
    DuplicateRelation(String),
    #[error("level {child:?} already has hierarchy parent {existing:?}")]
    MultipleHierarchyParents { child: String, existing: String },
    #[error("parse error at line {line}, column {column}: {message}")]
    ParseError {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported structure file version {0:?}")]
    SchemaVersionUnsupported(String),
}

/// Entity type that a metadata attribute describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetadataObject {
    Communication,
    Speaker,
    Recording,
    Annotation,
    Participation,
}

impl MetadataObject {
    pub const ALL: [MetadataObject; 5] = [
        MetadataObject::Communication,
        MetadataObject::Speaker,
        MetadataObject::Recording,
        MetadataObject::Annotation,
        MetadataObject::Participation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetadataObject::Communication => "Communication",
            MetadataObject::Speaker => "Speaker",
            MetadataObject::Recording => "Recording",
            MetadataObject::Annotation => "Annotation",
            MetadataObject::Participation => "Participation",
        }
    }

    pub fn from_token(token: &str) -> Option<MetadataObject> {
        MetadataObject::ALL
            .into_iter()
            .find(|o| o.as_str().eq_ignore_ascii_case(token))
    }

    /// Name of the entity table holding this object's rows.
    pub fn table(self) -> &'static str {
        match self {
            MetadataObject::Communication => "communication",
            MetadataObject::Speaker => "speaker",
            MetadataObject::Recording => "recording",
            MetadataObject::Annotation => "annotation",
            MetadataObject::Participation => "participation",
        }
    }
}

impl fmt::Display for MetadataObject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataAttribute {
    pub id: String,
    pub name: String,
    pub object: MetadataObject,
    pub datatype: DataType,
    pub optional: bool,
}

impl MetadataAttribute {
    pub fn new(object: MetadataObject, id: &str, datatype: DataType) -> Self {
        MetadataAttribute {
            id: id.to_string(),
            name: id.to_string(),
            object,
            datatype,
            optional: true,
        }
    }

    pub fn required(mut self) -> Self {
        self.optional = false;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationAttributeDef {
    pub id: String,
    pub name: String,
    pub datatype: DataType,
    pub optional: bool,
    pub vocabulary: Option<Vec<String>>,
}

impl AnnotationAttributeDef {
    pub fn new(id: &str, datatype: DataType) -> Self {
        AnnotationAttributeDef {
            id: id.to_string(),
            name: id.to_string(),
            datatype,
            optional: true,
            vocabulary: None,
        }
    }

    pub fn required(mut self) -> Self {
        self.optional = false;
        self
    }

    pub fn with_vocabulary<I, S>(mut self, items: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.vocabulary = Some(items.into_iter().map(Into::into).collect());
        self
    }

    pub fn permits(&self, value: &str) -> bool {
        self.vocabulary
            .as_ref()
            .is_none_or(|v| v.iter().any(|item| item == value))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LevelKind {
    Interval,
    Point,
}

impl LevelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LevelKind::Interval => "Interval",
            LevelKind::Point => "Point",
        }
    }

    pub fn from_token(token: &str) -> Option<LevelKind> {
        [LevelKind::Interval, LevelKind::Point]
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(token))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationLevelDef {
    pub id: String,
    pub name: String,
    pub kind: LevelKind,
    pub attributes: Vec<AnnotationAttributeDef>,
}

impl AnnotationLevelDef {
    pub fn new(id: &str, kind: LevelKind) -> Self {
        AnnotationLevelDef {
            id: id.to_string(),
            name: id.to_string(),
            kind,
            attributes: Vec::new(),
        }
    }

    pub fn interval(id: &str) -> Self {
        Self::new(id, LevelKind::Interval)
    }

    pub fn point(id: &str) -> Self {
        Self::new(id, LevelKind::Point)
    }

    pub fn with_attribute(mut self, def: AnnotationAttributeDef) -> Self {
        self.attributes.push(def);
        self
    }

    pub fn attribute(&self, id: &str) -> Option<&AnnotationAttributeDef> {
        self.attributes.iter().find(|a| a.id == id)
    }

    /// Table name in the store: `lvl_` followed by the id with `-` replaced by `_`.
    pub fn table_name(&self) -> String {
        level_table_name(&self.id)
    }
}

pub fn level_table_name(level_id: &str) -> String {
    format!("lvl_{}", level_id.replace('-', "_"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationKind {
    Hierarchy,
    Containment,
    Attachment,
}

impl RelationKind {
    pub const ALL: [RelationKind; 3] = [
        RelationKind::Hierarchy,
        RelationKind::Containment,
        RelationKind::Attachment,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RelationKind::Hierarchy => "Hierarchy",
            RelationKind::Containment => "Containment",
            RelationKind::Attachment => "Attachment",
        }
    }

    pub fn from_token(token: &str) -> Option<RelationKind> {
        RelationKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(token))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LevelRelation {
    pub kind: RelationKind,
    pub parent: String,
    pub child: String,
}

impl LevelRelation {
    pub fn new(kind: RelationKind, parent: &str, child: &str) -> Self {
        LevelRelation {
            kind,
            parent: parent.to_string(),
            child: child.to_string(),
        }
    }

    pub fn hierarchy(parent: &str, child: &str) -> Self {
        Self::new(RelationKind::Hierarchy, parent, child)
    }
}

impl fmt::Display for LevelRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({} -> {})", self.kind.as_str(), self.parent, self.child)
    }
}

/// Levels, relations and metadata attributes of a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AnnotationStructure {
    pub levels: Vec<AnnotationLevelDef>,
    pub relations: Vec<LevelRelation>,
    pub metadata: Vec<MetadataAttribute>,
}

/// Checks the attribute identifier rule: an ASCII lowercase letter followed by
/// letters, digits or `_`, at most 64 characters.
pub fn is_valid_attribute_id(id: &str) -> bool {
    let mut chars = id.chars();
    matches!(chars.next(), Some('a'..='z'))
        && id.len() <= MAX_IDENTIFIER_LEN
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Level ids additionally allow `-`, which maps to `_` in the table name.
pub fn is_valid_level_id(id: &str) -> bool {
    let mut chars = id.chars();
    matches!(chars.next(), Some('a'..='z'))
        && id.len() <= MAX_IDENTIFIER_LEN
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '-')
}

pub fn is_reserved_level_column(id: &str) -> bool {
    RESERVED_LEVEL_COLUMNS.iter().any(|r| r.eq_ignore_ascii_case(id))
}

fn is_reserved_entity_column(id: &str) -> bool {
    is_reserved_level_column(id)
        || RESERVED_ENTITY_COLUMNS.iter().any(|r| r.eq_ignore_ascii_case(id))
        || id.eq_ignore_ascii_case("role")
}

fn check_attribute_def(def: &AnnotationAttributeDef) -> Result<(), StructureError> {
    if !is_valid_attribute_id(&def.id) {
        return Err(StructureError::InvalidIdentifier(def.id.clone()));
    }
    if is_reserved_level_column(&def.id) {
        return Err(StructureError::ReservedName(def.id.clone()));
    }
    if def.datatype == DataType::DateTime {
        return Err(StructureError::InvalidDatatype {
            attribute: def.id.clone(),
            datatype: def.datatype,
        });
    }
    if let Some(vocab) = &def.vocabulary {
        if vocab.is_empty() || def.datatype != DataType::Text {
            return Err(StructureError::InvalidVocabulary(def.id.clone()));
        }
    }
    Ok(())
}

impl AnnotationStructure {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn level(&self, id: &str) -> Option<&AnnotationLevelDef> {
        self.levels.iter().find(|l| l.id == id)
    }

    fn level_mut(&mut self, id: &str) -> Option<&mut AnnotationLevelDef> {
        self.levels.iter_mut().find(|l| l.id == id)
    }

    pub fn level_index(&self, id: &str) -> Option<usize> {
        self.levels.iter().position(|l| l.id == id)
    }

    pub fn metadata_attribute(&self, object: MetadataObject, id: &str) -> Option<&MetadataAttribute> {
        self.metadata.iter().find(|m| m.object == object && m.id == id)
    }

    pub fn metadata_for(&self, object: MetadataObject) -> impl Iterator<Item = &MetadataAttribute> {
        self.metadata.iter().filter(move |m| m.object == object)
    }

    /// Hierarchy parent of a level, if any.
    pub fn hierarchy_parent(&self, child: &str) -> Option<&str> {
        self.relations
            .iter()
            .find(|r| r.kind == RelationKind::Hierarchy && r.child == child)
            .map(|r| r.parent.as_str())
    }

    pub fn hierarchy_children<'a>(&'a self, parent: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.relations
            .iter()
            .filter(move |r| r.kind == RelationKind::Hierarchy && r.parent == parent)
            .map(|r| r.child.as_str())
    }

    /// Adds a level. Existing levels keep their order.
    pub fn add_level(&mut self, def: AnnotationLevelDef) -> Result<&mut Self, StructureError> {
        if !is_valid_level_id(&def.id) {
            return Err(StructureError::InvalidIdentifier(def.id.clone()));
        }
        let table = def.table_name();
        if self.levels.iter().any(|l| l.id == def.id || l.table_name() == table) {
            return Err(StructureError::DuplicateLevel(def.id.clone()));
        }
        let mut seen = HashSet::new();
        for attr in &def.attributes {
            check_attribute_def(attr)?;
            if !seen.insert(attr.id.to_ascii_lowercase()) {
                return Err(StructureError::DuplicateAttribute {
                    owner: def.id.clone(),
                    attribute: attr.id.clone(),
                });
            }
        }
        self.levels.push(def);
        Ok(self)
    }

    pub fn add_attribute(
        &mut self,
        level_id: &str,
        def: AnnotationAttributeDef,
    ) -> Result<&mut Self, StructureError> {
        let level = self
            .level_mut(level_id)
            .ok_or_else(|| StructureError::UnknownLevel(level_id.to_string()))?;
        check_attribute_def(&def)?;
        if level.attributes.iter().any(|a| a.id.eq_ignore_ascii_case(&def.id)) {
            return Err(StructureError::DuplicateAttribute {
                owner: level_id.to_string(),
                attribute: def.id,
            });
        }
        level.attributes.push(def);
        Ok(self)
    }

    pub fn add_metadata(&mut self, attr: MetadataAttribute) -> Result<&mut Self, StructureError> {
        if !is_valid_attribute_id(&attr.id) {
            return Err(StructureError::InvalidIdentifier(attr.id.clone()));
        }
        if is_reserved_entity_column(&attr.id) {
            return Err(StructureError::ReservedName(attr.id.clone()));
        }
        if self
            .metadata
            .iter()
            .any(|m| m.object == attr.object && m.id.eq_ignore_ascii_case(&attr.id))
        {
            return Err(StructureError::DuplicateAttribute {
                owner: attr.object.to_string(),
                attribute: attr.id,
            });
        }
        self.metadata.push(attr);
        Ok(self)
    }

    pub fn add_relation(&mut self, rel: LevelRelation) -> Result<&mut Self, StructureError> {
        let parent = self
            .level(&rel.parent)
            .ok_or_else(|| StructureError::UnknownLevel(rel.parent.clone()))?;
        let child = self
            .level(&rel.child)
            .ok_or_else(|| StructureError::UnknownLevel(rel.child.clone()))?;
        if rel.parent == rel.child {
            return Err(StructureError::SelfRelation(rel.to_string()));
        }
        if matches!(rel.kind, RelationKind::Hierarchy | RelationKind::Containment)
            && (parent.kind != LevelKind::Interval || child.kind != LevelKind::Interval)
        {
            return Err(StructureError::KindMismatch(rel.to_string()));
        }
        if self.relations.contains(&rel) {
            return Err(StructureError::DuplicateRelation(rel.to_string()));
        }
        if rel.kind == RelationKind::Hierarchy {
            if hierarchy_reaches(&self.relations, &rel.child, &rel.parent) {
                return Err(StructureError::CycleDetected(rel.to_string()));
            }
            if let Some(existing) = self.hierarchy_parent(&rel.child) {
                return Err(StructureError::MultipleHierarchyParents {
                    child: rel.child.clone(),
                    existing: existing.to_string(),
                });
            }
        }
        self.relations.push(rel);
        Ok(self)
    }

    /// Removes a level together with the relations that mention it.
    pub fn remove_level(&mut self, id: &str) -> Result<AnnotationLevelDef, StructureError> {
        let idx = self
            .level_index(id)
            .ok_or_else(|| StructureError::UnknownLevel(id.to_string()))?;
        self.relations.retain(|r| r.parent != id && r.child != id);
        Ok(self.levels.remove(idx))
    }

    /// Levels ordered so that every relation parent precedes its children.
    /// Levels caught in a cycle keep their declaration order at the end.
    pub fn levels_parent_first(&self) -> Vec<&AnnotationLevelDef> {
        let mut placed: Vec<&AnnotationLevelDef> = Vec::with_capacity(self.levels.len());
        let mut done: HashSet<&str> = HashSet::new();
        loop {
            let before = placed.len();
            for level in &self.levels {
                if done.contains(level.id.as_str()) {
                    continue;
                }
                let ready = self
                    .relations
                    .iter()
                    .filter(|r| r.child == level.id && r.parent != level.id)
                    .all(|r| done.contains(r.parent.as_str()) || self.level(&r.parent).is_none());
                if ready {
                    done.insert(&level.id);
                    placed.push(level);
                }
            }
            if placed.len() == before {
                break;
            }
        }
        for level in &self.levels {
            if !done.contains(level.id.as_str()) {
                placed.push(level);
            }
        }
        placed
    }
}

/// Whether `to` is reachable from `from` following hierarchy edges parent → child.
fn hierarchy_reaches(relations: &[LevelRelation], from: &str, to: &str) -> bool {
    let mut stack = vec![from];
    let mut seen = HashSet::new();
    while let Some(node) = stack.pop() {
        if node == to {
            return true;
        }
        if !seen.insert(node) {
            continue;
        }
        stack.extend(
            relations
                .iter()
                .filter(|r| r.kind == RelationKind::Hierarchy && r.parent == node)
                .map(|r| r.child.as_str()),
        );
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FindingCode {
    InvalidIdentifier,
    DuplicateLevel,
    DuplicateAttribute,
    ReservedName,
    InvalidVocabulary,
    InvalidDatatype,
    UnknownLevel,
    SelfRelation,
    KindMismatch,
    DuplicateRelation,
    MultipleHierarchyParents,
    CycleDetected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub code: FindingCode,
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn count(&self, code: FindingCode) -> usize {
        self.findings.iter().filter(|f| f.code == code).count()
    }

    fn push(&mut self, code: FindingCode, path: String, message: impl Into<String>) {
        self.findings.push(Finding {
            code,
            path,
            message: message.into(),
        });
    }
}

/// Checks every structure invariant and reports findings as data.
pub fn validate_structure(structure: &AnnotationStructure) -> ValidationReport {
    let mut report = ValidationReport::default();

    let mut tables = HashSet::new();
    for (i, level) in structure.levels.iter().enumerate() {
        let path = format!("levels[{i}]");
        if !is_valid_level_id(&level.id) {
            report.push(FindingCode::InvalidIdentifier, path.clone(), format!("invalid level id {:?}", level.id));
        }
        if !tables.insert(level.table_name()) {
            report.push(FindingCode::DuplicateLevel, path.clone(), format!("duplicate level {:?}", level.id));
        }
        let mut attrs = HashSet::new();
        for (j, attr) in level.attributes.iter().enumerate() {
            let apath = format!("{path}.attributes[{j}]");
            match check_attribute_def(attr) {
                Ok(()) => {}
                Err(e) => {
                    let code = match e {
                        StructureError::InvalidIdentifier(_) => FindingCode::InvalidIdentifier,
                        StructureError::ReservedName(_) => FindingCode::ReservedName,
                        StructureError::InvalidDatatype { .. } => FindingCode::InvalidDatatype,
                        _ => FindingCode::InvalidVocabulary,
                    };
                    report.push(code, apath.clone(), e.to_string());
                }
            }
            if !attrs.insert(attr.id.to_ascii_lowercase()) {
                report.push(
                    FindingCode::DuplicateAttribute,
                    apath,
                    format!("duplicate attribute {:?} on level {:?}", attr.id, level.id),
                );
            }
        }
    }

    let mut meta = HashSet::new();
    for (i, attr) in structure.metadata.iter().enumerate() {
        let path = format!("metadata[{i}]");
        if !is_valid_attribute_id(&attr.id) {
            report.push(FindingCode::InvalidIdentifier, path.clone(), format!("invalid metadata id {:?}", attr.id));
        } else if is_reserved_entity_column(&attr.id) {
            report.push(FindingCode::ReservedName, path.clone(), format!("{:?} is reserved", attr.id));
        }
        if !meta.insert((attr.object, attr.id.to_ascii_lowercase())) {
            report.push(
                FindingCode::DuplicateAttribute,
                path,
                format!("duplicate metadata attribute {}.{}", attr.object, attr.id),
            );
        }
    }

    let mut seen_relations = HashSet::new();
    let mut hierarchy_parent: BTreeMap<&str, &str> = BTreeMap::new();
    let mut valid_hierarchy: Vec<&LevelRelation> = Vec::new();
    for (i, rel) in structure.relations.iter().enumerate() {
        let path = format!("relations[{i}]");
        let parent = structure.level(&rel.parent);
        let child = structure.level(&rel.child);
        let mut resolved = true;
        for (end, level) in [(&rel.parent, parent), (&rel.child, child)] {
            if level.is_none() {
                resolved = false;
                report.push(FindingCode::UnknownLevel, path.clone(), format!("{rel}: unknown level {end:?}"));
            }
        }
        if rel.parent == rel.child {
            report.push(FindingCode::SelfRelation, path.clone(), format!("{rel} links a level to itself"));
            continue;
        }
        if let (Some(p), Some(c)) = (parent, child) {
            if matches!(rel.kind, RelationKind::Hierarchy | RelationKind::Containment)
                && (p.kind != LevelKind::Interval || c.kind != LevelKind::Interval)
            {
                report.push(FindingCode::KindMismatch, path.clone(), format!("{rel} requires interval levels"));
            }
        }
        if !seen_relations.insert(rel) {
            report.push(FindingCode::DuplicateRelation, path.clone(), format!("{rel} is duplicated"));
            continue;
        }
        if rel.kind == RelationKind::Hierarchy && resolved {
            if let Some(existing) = hierarchy_parent.insert(&rel.child, &rel.parent) {
                report.push(
                    FindingCode::MultipleHierarchyParents,
                    path,
                    format!("level {:?} already has hierarchy parent {existing:?}", rel.child),
                );
            }
            valid_hierarchy.push(rel);
        }
    }

    let cyclic = cyclic_levels(&valid_hierarchy);
    if !cyclic.is_empty() {
        let names: Vec<&str> = cyclic.into_iter().collect();
        report.push(
            FindingCode::CycleDetected,
            "relations".to_string(),
            format!("hierarchy cycle through levels {}", names.join(", ")),
        );
    }
    report
}

/// Levels that lie on at least one hierarchy cycle (Kahn's algorithm leftovers
/// that can reach themselves).
fn cyclic_levels<'a>(edges: &[&'a LevelRelation]) -> BTreeSet<&'a str> {
    let nodes: BTreeSet<&str> = edges
        .iter()
        .flat_map(|r| [r.parent.as_str(), r.child.as_str()])
        .collect();
    let owned: Vec<LevelRelation> = edges.iter().map(|r| (*r).clone()).collect();
    nodes
        .into_iter()
        .filter(|n| {
            owned
                .iter()
                .filter(|r| r.parent == *n)
                .any(|r| hierarchy_reaches(&owned, &r.child, n))
        })
        .collect()
}
