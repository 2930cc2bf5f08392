//! Structure changes on a live database.

use std::fmt;

use rusqlite::types::Value as SqlValue;
use rusqlite::{params, Connection};

use super::schema::{self, add_column_sql, drop_column_sql};
use super::{catalog, from_sql, to_sql, Result, StoreError};
use crate::structure::{validate_structure, AnnotationStructure, LevelKind, MetadataObject};
use crate::value::{DataType, Value};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SchemaChange {
    AddLevel(String),
    RemoveLevel(String),
    ChangeLevelKind { level: String, from: LevelKind, to: LevelKind },
    AddAttribute { level: String, attribute: String },
    RemoveAttribute { level: String, attribute: String },
    RetypeAttribute { level: String, attribute: String, from: DataType, to: DataType },
    AddParentLink { child: String },
    RemoveParentLink { child: String },
    AddMetadata { object: MetadataObject, attribute: String },
    RemoveMetadata { object: MetadataObject, attribute: String },
    RetypeMetadata { object: MetadataObject, attribute: String, from: DataType, to: DataType },
    /// Names, vocabularies, optionality or non-hierarchy relations.
    CatalogOnly(String),
}

impl SchemaChange {
    /// Changes that can lose stored data.
    pub fn is_destructive(&self) -> bool {
        matches!(
            self,
            SchemaChange::RemoveLevel(_)
                | SchemaChange::ChangeLevelKind { .. }
                | SchemaChange::RemoveAttribute { .. }
                | SchemaChange::RetypeAttribute { .. }
                | SchemaChange::RemoveParentLink { .. }
                | SchemaChange::RemoveMetadata { .. }
                | SchemaChange::RetypeMetadata { .. }
        )
    }
}

impl fmt::Display for SchemaChange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemaChange::AddLevel(l) => write!(f, "add level {l}"),
            SchemaChange::RemoveLevel(l) => write!(f, "remove level {l}"),
            SchemaChange::ChangeLevelKind { level, from, to } => {
                write!(f, "change kind of {level} from {} to {}", from.as_str(), to.as_str())
            }
            SchemaChange::AddAttribute { level, attribute } => write!(f, "add attribute {level}.{attribute}"),
            SchemaChange::RemoveAttribute { level, attribute } => write!(f, "remove attribute {level}.{attribute}"),
            SchemaChange::RetypeAttribute { level, attribute, from, to } => {
                write!(f, "retype {level}.{attribute} from {from} to {to}")
            }
            SchemaChange::AddParentLink { child } => write!(f, "add parent link to {child}"),
            SchemaChange::RemoveParentLink { child } => write!(f, "remove parent link from {child}"),
            SchemaChange::AddMetadata { object, attribute } => write!(f, "add {object} metadata {attribute}"),
            SchemaChange::RemoveMetadata { object, attribute } => write!(f, "remove {object} metadata {attribute}"),
            SchemaChange::RetypeMetadata { object, attribute, from, to } => {
                write!(f, "retype {object} metadata {attribute} from {from} to {to}")
            }
            SchemaChange::CatalogOnly(what) => write!(f, "{what}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MigrationReport {
    pub changes: Vec<SchemaChange>,
    /// Values that could not be converted by a retype and were set to null.
    pub nulled_values: usize,
}

/// Lists the changes turning `old` into `new`, removals first.
pub fn diff(old: &AnnotationStructure, new: &AnnotationStructure) -> Vec<SchemaChange> {
    let mut removals = Vec::new();
    let mut additions = Vec::new();
    let mut catalog_only = Vec::new();

    for level in &old.levels {
        if new.level(&level.id).is_none() {
            removals.push(SchemaChange::RemoveLevel(level.id.clone()));
        }
    }
    for level in &new.levels {
        let Some(before) = old.level(&level.id) else {
            additions.push(SchemaChange::AddLevel(level.id.clone()));
            continue;
        };
        if before.kind != level.kind {
            removals.push(SchemaChange::ChangeLevelKind {
                level: level.id.clone(),
                from: before.kind,
                to: level.kind,
            });
        }
        if before.name != level.name {
            catalog_only.push(SchemaChange::CatalogOnly(format!("rename level {}", level.id)));
        }
        for attr in &before.attributes {
            if level.attribute(&attr.id).is_none() {
                removals.push(SchemaChange::RemoveAttribute {
                    level: level.id.clone(),
                    attribute: attr.id.clone(),
                });
            }
        }
        for attr in &level.attributes {
            match before.attribute(&attr.id) {
                None => additions.push(SchemaChange::AddAttribute {
                    level: level.id.clone(),
                    attribute: attr.id.clone(),
                }),
                Some(prev) if prev.datatype != attr.datatype => removals.push(SchemaChange::RetypeAttribute {
                    level: level.id.clone(),
                    attribute: attr.id.clone(),
                    from: prev.datatype,
                    to: attr.datatype,
                }),
                Some(prev) if prev != attr => catalog_only.push(SchemaChange::CatalogOnly(format!(
                    "update attribute {}.{}",
                    level.id, attr.id
                ))),
                Some(_) => {}
            }
        }
        let had_parent = before_has_parent(old, &level.id);
        let has_parent = new.hierarchy_parent(&level.id).is_some();
        if had_parent && !has_parent {
            removals.push(SchemaChange::RemoveParentLink { child: level.id.clone() });
        } else if !had_parent && has_parent {
            additions.push(SchemaChange::AddParentLink { child: level.id.clone() });
        } else if had_parent && old.hierarchy_parent(&level.id) != new.hierarchy_parent(&level.id) {
            // Same column, different parent level: old links are meaningless.
            removals.push(SchemaChange::RemoveParentLink { child: level.id.clone() });
            additions.push(SchemaChange::AddParentLink { child: level.id.clone() });
        }
    }
    if old.relations != new.relations {
        catalog_only.push(SchemaChange::CatalogOnly("update relations".into()));
    }

    for m in &old.metadata {
        match new.metadata_attribute(m.object, &m.id) {
            None => removals.push(SchemaChange::RemoveMetadata {
                object: m.object,
                attribute: m.id.clone(),
            }),
            Some(n) if n.datatype != m.datatype => removals.push(SchemaChange::RetypeMetadata {
                object: m.object,
                attribute: m.id.clone(),
                from: m.datatype,
                to: n.datatype,
            }),
            Some(n) if n != m => catalog_only.push(SchemaChange::CatalogOnly(format!(
                "update {} metadata {}",
                m.object, m.id
            ))),
            Some(_) => {}
        }
    }
    for m in &new.metadata {
        if old.metadata_attribute(m.object, &m.id).is_none() {
            additions.push(SchemaChange::AddMetadata {
                object: m.object,
                attribute: m.id.clone(),
            });
        }
    }
    if catalog_only.is_empty() && removals.is_empty() && additions.is_empty() && old != new {
        catalog_only.push(SchemaChange::CatalogOnly("reorder structure".into()));
    }
    removals.into_iter().chain(additions).chain(catalog_only).collect()
}

fn before_has_parent(old: &AnnotationStructure, level: &str) -> bool {
    old.hierarchy_parent(level).is_some()
}

pub(super) fn apply(
    conn: &Connection,
    old: &AnnotationStructure,
    new: &AnnotationStructure,
    force: bool,
) -> Result<MigrationReport> {
    let report = validate_structure(new);
    if !report.is_valid() {
        let messages: Vec<String> = report.findings.iter().map(|f| f.message.clone()).collect();
        return Err(StoreError::InvalidStructure(messages.join("; ")));
    }
    let changes = diff(old, new);
    let destructive: Vec<SchemaChange> = changes.iter().filter(|c| c.is_destructive()).cloned().collect();
    if !destructive.is_empty() && !force {
        return Err(StoreError::DestructiveChangeRefused(destructive));
    }
    let tx = conn.unchecked_transaction()?;
    let mut nulled = 0;
    for change in &changes {
        nulled += execute(&tx, old, new, change).map_err(|e| StoreError::MigrationFailed(format!("{change}: {e}")))?;
    }
    catalog::write(&tx, new).map_err(|e| StoreError::MigrationFailed(e.to_string()))?;
    catalog::check_physical(&tx, new).map_err(|e| StoreError::MigrationFailed(e.to_string()))?;
    tx.commit()?;
    Ok(MigrationReport {
        changes,
        nulled_values: nulled,
    })
}

fn level_table(structure: &AnnotationStructure, level: &str) -> String {
    structure
        .level(level)
        .map(|l| l.table_name())
        .unwrap_or_else(|| crate::structure::level_table_name(level))
}

fn execute(conn: &Connection, old: &AnnotationStructure, new: &AnnotationStructure, change: &SchemaChange) -> Result<usize> {
    match change {
        SchemaChange::AddLevel(id) => {
            let level = new.level(id).expect("diffed level exists");
            conn.execute_batch(&schema::create_level_table_sql(new, level))?;
        }
        SchemaChange::RemoveLevel(id) => {
            conn.execute(&format!("DROP TABLE {}", schema::quote(&level_table(old, id))), [])?;
        }
        SchemaChange::ChangeLevelKind { level, to, .. } => {
            if *to == LevelKind::Point {
                conn.execute(
                    &format!("UPDATE {} SET tMax = tMin", schema::quote(&level_table(new, level))),
                    [],
                )?;
            }
        }
        SchemaChange::AddAttribute { level, attribute } => {
            let def = new.level(level).and_then(|l| l.attribute(attribute)).expect("diffed attribute exists");
            conn.execute(&add_column_sql(&level_table(new, level), attribute, def.datatype), [])?;
        }
        SchemaChange::RemoveAttribute { level, attribute } => {
            conn.execute(&drop_column_sql(&level_table(new, level), attribute), [])?;
        }
        SchemaChange::RetypeAttribute { level, attribute, from, to } => {
            return retype(conn, &level_table(new, level), attribute, *from, *to);
        }
        SchemaChange::AddParentLink { child } => {
            let table = level_table(new, child);
            let exists = catalog::table_columns(conn, &table)?.iter().any(|(c, _)| c == "parentID");
            if !exists {
                conn.execute(&format!("ALTER TABLE {} ADD COLUMN parentID INTEGER", schema::quote(&table)), [])?;
            }
        }
        SchemaChange::RemoveParentLink { child } => {
            let table = level_table(new, child);
            if new.hierarchy_parent(child).is_some() {
                conn.execute(&format!("UPDATE {} SET parentID = NULL", schema::quote(&table)), [])?;
            } else {
                conn.execute(&drop_column_sql(&table, "parentID"), [])?;
            }
        }
        SchemaChange::AddMetadata { object, attribute } => {
            let def = new.metadata_attribute(*object, attribute).expect("diffed metadata exists");
            conn.execute(&add_column_sql(object.table(), attribute, def.datatype), [])?;
        }
        SchemaChange::RemoveMetadata { object, attribute } => {
            conn.execute(&drop_column_sql(object.table(), attribute), [])?;
        }
        SchemaChange::RetypeMetadata { object, attribute, from, to } => {
            return retype(conn, object.table(), attribute, *from, *to);
        }
        SchemaChange::CatalogOnly(_) => {}
    }
    Ok(0)
}

/// Replaces a column by one of another type, converting values where
/// possible. Returns the number of values set to null.
fn retype(conn: &Connection, table: &str, column: &str, from: DataType, to: DataType) -> Result<usize> {
    let q_table = schema::quote(table);
    let q_col = schema::quote(column);
    let mut stmt = conn.prepare(&format!("SELECT rowid, {q_col} FROM {q_table}"))?;
    let mut rows = stmt.query([])?;
    let mut converted: Vec<(i64, SqlValue)> = Vec::new();
    let mut nulled = 0;
    while let Some(row) = rows.next()? {
        let rowid: i64 = row.get(0)?;
        let old = from_sql(row.get_ref(1)?, from).unwrap_or(None);
        let Some(old) = old else {
            converted.push((rowid, SqlValue::Null));
            continue;
        };
        let new = convert(&old, to);
        if new.is_none() {
            nulled += 1;
        }
        converted.push((rowid, to_sql(new.as_ref())));
    }
    drop(rows);
    drop(stmt);
    conn.execute(&drop_column_sql(table, column), [])?;
    conn.execute(&add_column_sql(table, column, to), [])?;
    let mut update = conn.prepare(&format!("UPDATE {q_table} SET {q_col} = ?1 WHERE rowid = ?2"))?;
    for (rowid, value) in converted {
        update.execute(params![value, rowid])?;
    }
    Ok(nulled)
}

fn convert(value: &Value, to: DataType) -> Option<Value> {
    if let Some(v) = value.clone().coerce(to) {
        return Some(v);
    }
    match (value, to) {
        (_, DataType::Text) => Some(Value::Text(value.to_string())),
        (Value::Real(r), DataType::Integer) if r.fract() == 0.0 && r.abs() < 9.0e15 => Some(Value::Integer(*r as i64)),
        _ => Value::parse(to, &value.to_string()).ok(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AnnotationElement, Communication, Entity, Speaker, Tier, TierKey};
    use crate::store::{Mode, Store};
    use crate::structure::{AnnotationAttributeDef, AnnotationLevelDef, LevelRelation};
    use crate::time::Time;

    fn base() -> AnnotationStructure {
        let mut s = AnnotationStructure::new();
        s.add_level(
            AnnotationLevelDef::interval("syll")
                .with_attribute(AnnotationAttributeDef::new("prom", DataType::Text))
                .with_attribute(AnnotationAttributeDef::new("score", DataType::Text)),
        )
        .unwrap();
        s.add_level(AnnotationLevelDef::interval("phones")).unwrap();
        s
    }

    fn populated(dir: &tempfile::TempDir) -> Store {
        let mut store = Store::create(dir.path().join("m.corpus"), &base()).unwrap();
        store
            .upsert_entity(Entity::Communication(Communication {
                id: "c".into(),
                ..Default::default()
            }))
            .unwrap();
        store
            .upsert_entity(Entity::Speaker(Speaker {
                id: "s".into(),
                ..Default::default()
            }))
            .unwrap();
        let tier = Tier::new(
            TierKey::new("c", "s", "syll"),
            vec![
                AnnotationElement::interval(1, Time::ZERO, Time::from_ms(100), "a")
                    .with_attribute("score", Some(Value::Text("12".into()))),
                AnnotationElement::interval(2, Time::from_ms(100), Time::from_ms(200), "b")
                    .with_attribute("score", Some(Value::Text("high".into()))),
            ],
        );
        store.save_tier(&tier).unwrap();
        store
    }

    #[test]
    fn additive_change_keeps_data() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = populated(&dir);
        let mut next = base();
        next.add_attribute("syll", AnnotationAttributeDef::new("delivery", DataType::Text))
            .unwrap();
        next.add_level(AnnotationLevelDef::interval("tok-min")).unwrap();
        next.add_relation(LevelRelation::hierarchy("syll", "phones")).unwrap();
        let report = store.apply_schema(&next, false).unwrap();
        assert!(report.changes.iter().all(|c| !c.is_destructive()));
        assert_eq!(store.introspect_schema().unwrap(), next);
        let tier = store.load_tier("syll", "c", None).unwrap();
        assert_eq!(tier.len(), 2);
        assert_eq!(tier.elements()[0].attributes.get("delivery"), Some(&None));
    }

    #[test]
    fn destructive_change_needs_force() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = populated(&dir);
        let mut next = base();
        next.levels[0].attributes.retain(|a| a.id != "prom");
        let err = store.apply_schema(&next, false).unwrap_err();
        assert!(matches!(err, StoreError::DestructiveChangeRefused(ref c) if c.len() == 1));
        assert_eq!(store.introspect_schema().unwrap(), base());
        store.apply_schema(&next, true).unwrap();
        assert_eq!(store.introspect_schema().unwrap(), next);
    }

    #[test]
    fn retype_converts_or_nulls() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = populated(&dir);
        let mut next = base();
        next.levels[0].attributes[1].datatype = DataType::Integer;
        let report = store.apply_schema(&next, true).unwrap();
        assert_eq!(report.nulled_values, 1);
        let tier = store.load_tier("syll", "c", None).unwrap();
        assert_eq!(tier.elements()[0].attribute("score"), Some(&Value::Integer(12)));
        assert_eq!(tier.elements()[1].attribute("score"), None);
    }

    #[test]
    fn failed_migration_rolls_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.corpus");
        let mut store = populated(&dir);
        // A table squatting on the name of the level about to be created.
        store
            .connection()
            .execute_batch("CREATE TABLE lvl_words (x INTEGER)")
            .unwrap();
        let mut next = base();
        next.add_attribute("syll", AnnotationAttributeDef::new("delivery", DataType::Text))
            .unwrap();
        next.add_level(AnnotationLevelDef::interval("words")).unwrap();
        assert!(matches!(
            store.apply_schema(&next, false),
            Err(StoreError::MigrationFailed(_))
        ));
        assert_eq!(store.structure(), &base());
        drop(store);
        let reopened = Store::open(&path, Mode::ReadOnly).unwrap();
        assert_eq!(reopened.structure(), &base());
        let cols = catalog::table_columns(reopened.connection(), "lvl_syll").unwrap();
        assert!(cols.iter().all(|(c, _)| c != "delivery"));
    }
}
