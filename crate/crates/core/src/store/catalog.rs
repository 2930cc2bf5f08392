//! The `sys_structure_*` catalog tables.

use std::collections::BTreeSet;

use rusqlite::{params, Connection};

use super::schema::{self, SchemaPlan};
use super::{Result, StoreError};
use crate::structure::{
    AnnotationAttributeDef, AnnotationLevelDef, AnnotationStructure, LevelKind, LevelRelation,
    MetadataAttribute, MetadataObject, RelationKind,
};
use crate::value::DataType;

pub(super) fn write(conn: &Connection, structure: &AnnotationStructure) -> Result<()> {
    conn.execute_batch(
        "DELETE FROM sys_structure_levels; DELETE FROM sys_structure_attributes;
         DELETE FROM sys_structure_relations; DELETE FROM sys_structure_metadata;",
    )?;
    for (i, level) in structure.levels.iter().enumerate() {
        conn.execute(
            "INSERT INTO sys_structure_levels (ordinal, id, name, kind) VALUES (?1, ?2, ?3, ?4)",
            params![i as i64, level.id, level.name, level.kind.as_str()],
        )?;
        for (j, attr) in level.attributes.iter().enumerate() {
            let vocabulary = attr
                .vocabulary
                .as_ref()
                .map(|v| serde_json::to_string(v).expect("string list serializes"));
            conn.execute(
                "INSERT INTO sys_structure_attributes
                 (level_id, ordinal, id, name, datatype, optional, vocabulary)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)",
                params![
                    level.id,
                    j as i64,
                    attr.id,
                    attr.name,
                    attr.datatype.as_str(),
                    attr.optional,
                    vocabulary
                ],
            )?;
        }
    }
    for (i, rel) in structure.relations.iter().enumerate() {
        conn.execute(
            "INSERT INTO sys_structure_relations (ordinal, kind, parent, child) VALUES (?1, ?2, ?3, ?4)",
            params![i as i64, rel.kind.as_str(), rel.parent, rel.child],
        )?;
    }
    for (i, m) in structure.metadata.iter().enumerate() {
        conn.execute(
            "INSERT INTO sys_structure_metadata (ordinal, object, id, name, datatype, optional)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
            params![i as i64, m.object.as_str(), m.id, m.name, m.datatype.as_str(), m.optional],
        )?;
    }
    Ok(())
}

fn corrupt(detail: impl Into<String>) -> StoreError {
    StoreError::CorruptCatalog(detail.into())
}

pub(super) fn read(conn: &Connection) -> Result<AnnotationStructure> {
    let mut structure = AnnotationStructure::new();

    let mut stmt = conn.prepare("SELECT id, name, kind FROM sys_structure_levels ORDER BY ordinal")?;
    let levels = stmt
        .query_map([], |r| Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?, r.get::<_, String>(2)?)))?
        .collect::<rusqlite::Result<Vec<_>>>()?;
    let mut attr_stmt = conn.prepare(
        "SELECT id, name, datatype, optional, vocabulary FROM sys_structure_attributes
         WHERE level_id = ?1 ORDER BY ordinal",
    )?;
    for (id, name, kind) in levels {
        let kind = LevelKind::from_token(&kind).ok_or_else(|| corrupt(format!("level {id}: kind {kind:?}")))?;
        let mut level = AnnotationLevelDef::new(&id, kind);
        level.name = name;
        let attrs = attr_stmt
            .query_map([&id], |r| {
                Ok((
                    r.get::<_, String>(0)?,
                    r.get::<_, String>(1)?,
                    r.get::<_, String>(2)?,
                    r.get::<_, bool>(3)?,
                    r.get::<_, Option<String>>(4)?,
                ))
            })?
            .collect::<rusqlite::Result<Vec<_>>>()?;
        for (attr_id, attr_name, datatype, optional, vocabulary) in attrs {
            let datatype = DataType::from_token(&datatype)
                .ok_or_else(|| corrupt(format!("attribute {id}.{attr_id}: datatype {datatype:?}")))?;
            let mut attr = AnnotationAttributeDef::new(&attr_id, datatype);
            attr.name = attr_name;
            attr.optional = optional;
            attr.vocabulary = vocabulary
                .map(|v| serde_json::from_str::<Vec<String>>(&v))
                .transpose()
                .map_err(|e| corrupt(format!("attribute {id}.{attr_id}: vocabulary: {e}")))?;
            level.attributes.push(attr);
        }
        structure.levels.push(level);
    }

    let mut stmt = conn.prepare("SELECT kind, parent, child FROM sys_structure_relations ORDER BY ordinal")?;
    let relations = stmt
        .query_map([], |r| Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?, r.get::<_, String>(2)?)))?
        .collect::<rusqlite::Result<Vec<_>>>()?;
    for (kind, parent, child) in relations {
        let kind = RelationKind::from_token(&kind).ok_or_else(|| corrupt(format!("relation kind {kind:?}")))?;
        structure.relations.push(LevelRelation::new(kind, &parent, &child));
    }

    let mut stmt = conn
        .prepare("SELECT object, id, name, datatype, optional FROM sys_structure_metadata ORDER BY ordinal")?;
    let metadata = stmt
        .query_map([], |r| {
            Ok((
                r.get::<_, String>(0)?,
                r.get::<_, String>(1)?,
                r.get::<_, String>(2)?,
                r.get::<_, String>(3)?,
                r.get::<_, bool>(4)?,
            ))
        })?
        .collect::<rusqlite::Result<Vec<_>>>()?;
    for (object, id, name, datatype, optional) in metadata {
        let object = MetadataObject::from_token(&object).ok_or_else(|| corrupt(format!("metadata object {object:?}")))?;
        let datatype = DataType::from_token(&datatype)
            .ok_or_else(|| corrupt(format!("metadata {id}: datatype {datatype:?}")))?;
        let mut attr = MetadataAttribute::new(object, &id, datatype);
        attr.name = name;
        attr.optional = optional;
        structure.metadata.push(attr);
    }

    let report = crate::structure::validate_structure(&structure);
    if !report.is_valid() {
        let messages: Vec<String> = report.findings.iter().map(|f| f.message.clone()).collect();
        return Err(corrupt(messages.join("; ")));
    }
    Ok(structure)
}

/// Columns of a table as (name, declared type), in order.
pub(super) fn table_columns(conn: &Connection, table: &str) -> Result<Vec<(String, String)>> {
    let mut stmt = conn.prepare(&format!("PRAGMA table_info({})", schema::quote(table)))?;
    let columns = stmt
        .query_map([], |r| Ok((r.get::<_, String>(1)?, r.get::<_, String>(2)?)))?
        .collect::<rusqlite::Result<Vec<_>>>()?;
    Ok(columns)
}

/// Compares the physical tables with the layout implied by `structure`.
pub(super) fn check_physical(conn: &Connection, structure: &AnnotationStructure) -> Result<()> {
    let plan = SchemaPlan::for_structure(structure);
    let mut expected_levels = BTreeSet::new();
    for table in plan.level_tables.iter().chain(plan.entity_tables.iter()) {
        if table.name.starts_with("lvl_") {
            expected_levels.insert(table.name.clone());
        }
        let actual = table_columns(conn, &table.name)?;
        if actual.is_empty() {
            return Err(corrupt(format!("table {} is missing", table.name)));
        }
        let mut actual_sorted = actual.clone();
        actual_sorted.sort();
        let mut expected_sorted: Vec<(String, String)> =
            table.columns.iter().map(|(n, t)| (n.clone(), t.to_string())).collect();
        expected_sorted.sort();
        let names = |cols: &[(String, String)]| cols.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
        if names(&actual_sorted) != names(&expected_sorted) {
            return Err(corrupt(format!(
                "table {}: columns {:?}, catalog implies {:?}",
                table.name,
                names(&actual_sorted),
                names(&expected_sorted)
            )));
        }
        for ((name, actual_ty), (_, expected_ty)) in actual_sorted.iter().zip(expected_sorted.iter()) {
            if !actual_ty.eq_ignore_ascii_case(expected_ty) {
                return Err(corrupt(format!(
                    "column {}.{name}: type {actual_ty}, catalog implies {expected_ty}",
                    table.name
                )));
            }
        }
    }
    let mut stmt = conn.prepare("SELECT name FROM sqlite_master WHERE type = 'table' AND name LIKE 'lvl\\_%' ESCAPE '\\'")?;
    let present = stmt
        .query_map([], |r| r.get::<_, String>(0))?
        .collect::<rusqlite::Result<BTreeSet<_>>>()?;
    if let Some(extra) = present.difference(&expected_levels).next() {
        return Err(corrupt(format!("table {extra} has no catalog entry")));
    }
    Ok(())
}
