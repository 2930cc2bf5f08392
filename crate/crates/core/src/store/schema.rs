//! Physical schema derived from an annotation structure.

use crate::structure::{AnnotationLevelDef, AnnotationStructure, MetadataObject};
use crate::value::DataType;

/// Tables present in every database regardless of the structure.
pub const SYSTEM_TABLES: [&str; 10] = [
    "sys_info",
    "sys_structure_levels",
    "sys_structure_attributes",
    "sys_structure_relations",
    "sys_structure_metadata",
    "communication",
    "speaker",
    "recording",
    "participation",
    "annotation",
];

pub(crate) const SYSTEM_DDL: &str = r#"
CREATE TABLE sys_info (
    key TEXT PRIMARY KEY,
    value TEXT NOT NULL
);
CREATE TABLE sys_structure_levels (
    ordinal INTEGER NOT NULL,
    id TEXT PRIMARY KEY,
    name TEXT NOT NULL,
    kind TEXT NOT NULL
);
CREATE TABLE sys_structure_attributes (
    level_id TEXT NOT NULL,
    ordinal INTEGER NOT NULL,
    id TEXT NOT NULL,
    name TEXT NOT NULL,
    datatype TEXT NOT NULL,
    optional INTEGER NOT NULL,
    vocabulary TEXT,
    PRIMARY KEY (level_id, id)
);
CREATE TABLE sys_structure_relations (
    ordinal INTEGER NOT NULL,
    kind TEXT NOT NULL,
    parent TEXT NOT NULL,
    child TEXT NOT NULL,
    PRIMARY KEY (kind, parent, child)
);
CREATE TABLE sys_structure_metadata (
    ordinal INTEGER NOT NULL,
    object TEXT NOT NULL,
    id TEXT NOT NULL,
    name TEXT NOT NULL,
    datatype TEXT NOT NULL,
    optional INTEGER NOT NULL,
    PRIMARY KEY (object, id)
);
CREATE TABLE communication (
    id TEXT PRIMARY KEY
);
CREATE TABLE speaker (
    id TEXT PRIMARY KEY
);
CREATE TABLE recording (
    id TEXT PRIMARY KEY,
    communicationID TEXT NOT NULL REFERENCES communication(id),
    filename TEXT NOT NULL,
    durationNs INTEGER NOT NULL,
    sampleRateHz INTEGER NOT NULL,
    channels INTEGER NOT NULL
);
CREATE TABLE participation (
    communicationID TEXT NOT NULL REFERENCES communication(id),
    speakerID TEXT NOT NULL REFERENCES speaker(id),
    role TEXT NOT NULL,
    PRIMARY KEY (communicationID, speakerID)
);
CREATE TABLE annotation (
    id TEXT PRIMARY KEY,
    communicationID TEXT NOT NULL REFERENCES communication(id)
);
"#;

/// Fixed (non-metadata) columns of each entity table.
pub fn entity_fixed_columns(object: MetadataObject) -> &'static [&'static str] {
    match object {
        MetadataObject::Communication | MetadataObject::Speaker => &["id"],
        MetadataObject::Recording => &[
            "id",
            "communicationID",
            "filename",
            "durationNs",
            "sampleRateHz",
            "channels",
        ],
        MetadataObject::Participation => &["communicationID", "speakerID", "role"],
        MetadataObject::Annotation => &["id", "communicationID"],
    }
}

/// Expected table layout for a structure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaPlan {
    pub system_tables: Vec<String>,
    pub level_tables: Vec<TablePlan>,
    pub entity_tables: Vec<TablePlan>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TablePlan {
    pub name: String,
    /// Column name and SQL type, in creation order.
    pub columns: Vec<(String, &'static str)>,
}

impl SchemaPlan {
    pub fn for_structure(structure: &AnnotationStructure) -> SchemaPlan {
        SchemaPlan {
            system_tables: SYSTEM_TABLES.iter().map(|t| t.to_string()).collect(),
            level_tables: structure
                .levels
                .iter()
                .map(|level| level_table_plan(structure, level))
                .collect(),
            entity_tables: MetadataObject::ALL
                .into_iter()
                .map(|object| entity_table_plan(structure, object))
                .collect(),
        }
    }
}

pub fn level_table_plan(structure: &AnnotationStructure, level: &AnnotationLevelDef) -> TablePlan {
    let mut columns: Vec<(String, &'static str)> = vec![
        ("elementID".into(), "INTEGER"),
        ("annotationID".into(), "TEXT"),
        ("speakerID".into(), "TEXT"),
        ("tMin".into(), "INTEGER"),
        ("tMax".into(), "INTEGER"),
        ("label".into(), "TEXT"),
    ];
    if structure.hierarchy_parent(&level.id).is_some() {
        columns.push(("parentID".into(), "INTEGER"));
    }
    columns.extend(
        level
            .attributes
            .iter()
            .map(|a| (a.id.clone(), a.datatype.sql_type())),
    );
    TablePlan {
        name: level.table_name(),
        columns,
    }
}

pub fn entity_table_plan(structure: &AnnotationStructure, object: MetadataObject) -> TablePlan {
    let mut columns: Vec<(String, &'static str)> = entity_fixed_columns(object)
        .iter()
        .map(|c| {
            let ty = match *c {
                "durationNs" | "sampleRateHz" | "channels" => "INTEGER",
                _ => "TEXT",
            };
            (c.to_string(), ty)
        })
        .collect();
    columns.extend(
        structure
            .metadata_for(object)
            .map(|m| (m.id.clone(), m.datatype.sql_type())),
    );
    TablePlan {
        name: object.table().to_string(),
        columns,
    }
}

pub(crate) fn quote(ident: &str) -> String {
    format!("\"{}\"", ident.replace('"', "\"\""))
}

pub(crate) fn create_level_table_sql(structure: &AnnotationStructure, level: &AnnotationLevelDef) -> String {
    let plan = level_table_plan(structure, level);
    let table = quote(&plan.name);
    let columns: Vec<String> = plan
        .columns
        .iter()
        .map(|(name, ty)| {
            let not_null = matches!(
                name.as_str(),
                "elementID" | "annotationID" | "speakerID" | "tMin" | "tMax" | "label"
            );
            let reference = if name == "annotationID" {
                " REFERENCES annotation(id)"
            } else {
                ""
            };
            format!(
                "{} {ty}{}{reference}",
                quote(name),
                if not_null { " NOT NULL" } else { "" }
            )
        })
        .collect();
    format!(
        "CREATE TABLE {table} ({}, PRIMARY KEY (\"annotationID\", \"speakerID\", \"elementID\"));\n\
         CREATE INDEX {} ON {table} (\"annotationID\", \"speakerID\", \"tMin\");",
        columns.join(", "),
        quote(&format!("{}_time", plan.name)),
    )
}

pub(crate) fn add_column_sql(table: &str, column: &str, datatype: DataType) -> String {
    format!(
        "ALTER TABLE {} ADD COLUMN {} {}",
        quote(table),
        quote(column),
        datatype.sql_type()
    )
}

pub(crate) fn drop_column_sql(table: &str, column: &str) -> String {
    format!("ALTER TABLE {} DROP COLUMN {}", quote(table), quote(column))
}
