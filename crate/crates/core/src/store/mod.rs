//! Single-file relational persistence.
//!
//! The database schema is generated from the corpus [`AnnotationStructure`]:
//! every annotation level is a table named `lvl_<id>` (with `-` mapped to `_`)
//! and every attribute is a column of that table. Level tables share the key
//! columns `elementID`, `annotationID`, `speakerID`, `tMin`, `tMax` and `label`;
//! children of a hierarchy relation also carry `parentID`, which refers to the
//! `elementID` of the parent level row with the same annotation and speaker.
//! Times are integer nanoseconds. The structure itself is kept in the
//! `sys_structure_*` catalog tables so external SQL tools can read it.

mod catalog;
mod entities;
mod migrate;
pub mod schema;

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, OnceLock};

use rusqlite::types::ValueRef;
pub use rusqlite::types::Value as SqlValue;
use rusqlite::{params, Connection, OpenFlags, OptionalExtension};

use crate::model::{AnnotationElement, ElementError, ModelError, Tier, TierKey};
use crate::structure::{validate_structure, AnnotationLevelDef, AnnotationStructure, MetadataObject};
use crate::time::Time;
use crate::value::{format_datetime, parse_datetime, DataType, Value};

pub use migrate::{MigrationReport, SchemaChange};
pub use schema::{SchemaPlan, TablePlan};

const FORMAT_KEY: &str = "format";
const FORMAT_VALUE: &str = "praaline-corpus/1";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("database path {0} already exists and is not empty")]
    PathExists(PathBuf),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("database error: {0}")]
    Sql(#[from] rusqlite::Error),
    #[error("{0} is not a corpus database")]
    NotACorpus(PathBuf),
    #[error("invalid structure: {0}")]
    InvalidStructure(String),
    #[error("unknown level {0:?}")]
    UnknownLevel(String),
    #[error("constraint violation: {0}")]
    ConstraintViolation(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("another read-write handle is open on {0}")]
    WriterBusy(PathBuf),
    #[error("the database handle is read-only")]
    ReadOnly,
    #[error("destructive schema changes refused without force: {}", .0.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("; "))]
    DestructiveChangeRefused(Vec<SchemaChange>),
    #[error("migration failed and was rolled back: {0}")]
    MigrationFailed(String),
    #[error("catalog does not match the database: {0}")]
    CorruptCatalog(String),
    #[error("unexpected value in {table}.{column}: {detail}")]
    CorruptValue {
        table: String,
        column: String,
        detail: String,
    },
    #[error("several tiers match; pass a speaker: {}", .0.iter().map(|k| format!("{}/{}", k.annotation_id, k.speaker_id)).collect::<Vec<_>>().join(", "))]
    AmbiguousTier(Vec<TierKey>),
    #[error("only read-only statements are accepted")]
    NotReadOnlyStatement,
}

impl From<ElementError> for StoreError {
    fn from(e: ElementError) -> Self {
        StoreError::ConstraintViolation(e.to_string())
    }
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    ReadOnly,
    ReadWrite,
}

fn writers() -> &'static Mutex<HashSet<PathBuf>> {
    static WRITERS: OnceLock<Mutex<HashSet<PathBuf>>> = OnceLock::new();
    WRITERS.get_or_init(|| Mutex::new(HashSet::new()))
}

/// Registration of the single read-write handle for a database file.
#[derive(Debug)]
struct WriterLock(PathBuf);

impl WriterLock {
    fn acquire(path: &Path) -> Result<WriterLock> {
        let canonical = path.canonicalize()?;
        let mut set = writers().lock().unwrap_or_else(|e| e.into_inner());
        if !set.insert(canonical.clone()) {
            return Err(StoreError::WriterBusy(canonical));
        }
        Ok(WriterLock(canonical))
    }
}

impl Drop for WriterLock {
    fn drop(&mut self) {
        writers()
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .remove(&self.0);
    }
}

/// Handle on a corpus database file.
#[derive(Debug)]
pub struct Store {
    conn: Connection,
    path: PathBuf,
    mode: Mode,
    structure: AnnotationStructure,
    _writer: Option<WriterLock>,
}

impl Store {
    /// Creates a new database at `path` with the schema for `structure`.
    pub fn create(path: impl AsRef<Path>, structure: &AnnotationStructure) -> Result<Store> {
        let path = path.as_ref();
        let report = validate_structure(structure);
        if !report.is_valid() {
            let messages: Vec<String> = report.findings.iter().map(|f| f.message.clone()).collect();
            return Err(StoreError::InvalidStructure(messages.join("; ")));
        }
        if path.exists() && std::fs::metadata(path)?.len() > 0 {
            return Err(StoreError::PathExists(path.to_path_buf()));
        }
        let conn = Connection::open(path)?;
        let writer = WriterLock::acquire(path)?;
        conn.pragma_update(None, "foreign_keys", true)?;
        let tx = conn.unchecked_transaction()?;
        tx.execute_batch(schema::SYSTEM_DDL)?;
        tx.execute(
            "INSERT INTO sys_info (key, value) VALUES (?1, ?2)",
            params![FORMAT_KEY, FORMAT_VALUE],
        )?;
        for object in MetadataObject::ALL {
            for attr in structure.metadata_for(object) {
                tx.execute(&schema::add_column_sql(object.table(), &attr.id, attr.datatype), [])?;
            }
        }
        for level in &structure.levels {
            tx.execute_batch(&schema::create_level_table_sql(structure, level))?;
        }
        catalog::write(&tx, structure)?;
        tx.commit()?;
        Ok(Store {
            conn,
            path: path.to_path_buf(),
            mode: Mode::ReadWrite,
            structure: structure.clone(),
            _writer: Some(writer),
        })
    }

    /// Opens an existing database. At most one read-write handle per file may
    /// exist in a process.
    pub fn open(path: impl AsRef<Path>, mode: Mode) -> Result<Store> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(StoreError::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("no database at {}", path.display()),
            )));
        }
        let (conn, writer) = match mode {
            Mode::ReadOnly => (
                Connection::open_with_flags(path, OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX)?,
                None,
            ),
            Mode::ReadWrite => {
                let writer = WriterLock::acquire(path)?;
                (Connection::open(path)?, Some(writer))
            }
        };
        conn.pragma_update(None, "foreign_keys", true)?;
        conn.busy_timeout(std::time::Duration::from_secs(5))?;
        let format: Option<String> = conn
            .query_row("SELECT value FROM sys_info WHERE key = ?1", [FORMAT_KEY], |r| r.get(0))
            .optional()
            .unwrap_or(None);
        if format.as_deref() != Some(FORMAT_VALUE) {
            return Err(StoreError::NotACorpus(path.to_path_buf()));
        }
        let structure = catalog::read(&conn)?;
        Ok(Store {
            conn,
            path: path.to_path_buf(),
            mode,
            structure,
            _writer: writer,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Structure as recorded in the catalog when the handle was opened or last migrated.
    pub fn structure(&self) -> &AnnotationStructure {
        &self.structure
    }

    /// Underlying connection, for direct SQL by advanced callers.
    pub fn connection(&self) -> &Connection {
        &self.conn
    }

    pub(crate) fn require_writer(&self) -> Result<()> {
        match self.mode {
            Mode::ReadWrite => Ok(()),
            Mode::ReadOnly => Err(StoreError::ReadOnly),
        }
    }

    pub fn level(&self, id: &str) -> Result<&AnnotationLevelDef> {
        self.structure
            .level(id)
            .ok_or_else(|| StoreError::UnknownLevel(id.to_string()))
    }

    /// Reads the structure back from the catalog and checks it against the
    /// physical tables.
    pub fn introspect_schema(&self) -> Result<AnnotationStructure> {
        let structure = catalog::read(&self.conn)?;
        catalog::check_physical(&self.conn, &structure)?;
        Ok(structure)
    }

    /// Applies a new structure. Additive changes run directly; destructive ones
    /// (dropping levels, attributes or hierarchy links, changing types) need
    /// `force`. Everything runs in one transaction.
    pub fn apply_schema(&mut self, new: &AnnotationStructure, force: bool) -> Result<MigrationReport> {
        self.require_writer()?;
        let report = migrate::apply(&self.conn, &self.structure, new, force)?;
        self.structure = new.clone();
        Ok(report)
    }

    /// Replaces the tier identified by `tier.key` with the given elements.
    /// Returns the number of elements written. Nothing is written on error.
    pub fn save_tier(&mut self, tier: &Tier) -> Result<usize> {
        self.require_writer()?;
        let level = self.level(&tier.key.level_id)?.clone();
        let mut tier = tier.clone();
        tier.conform(&level)?;
        let has_parent = self.structure.hierarchy_parent(&level.id).is_some();
        if !has_parent {
            if let Some(e) = tier.elements().iter().find(|e| e.parent.is_some()) {
                return Err(StoreError::ConstraintViolation(format!(
                    "element {}: level {:?} has no hierarchy parent",
                    e.id, level.id
                )));
            }
        }

        let tx = self.conn.unchecked_transaction()?;
        ensure_tier_owner(&tx, &tier.key)?;
        let table = schema::quote(&level.table_name());
        tx.execute(
            &format!("DELETE FROM {table} WHERE annotationID = ?1 AND speakerID = ?2"),
            params![tier.key.annotation_id, tier.key.speaker_id],
        )?;
        let mut columns: Vec<String> = ["elementID", "annotationID", "speakerID", "tMin", "tMax", "label"]
            .iter()
            .map(|c| c.to_string())
            .collect();
        if has_parent {
            columns.push("parentID".into());
        }
        columns.extend(level.attributes.iter().map(|a| a.id.clone()));
        let sql = format!(
            "INSERT INTO {table} ({}) VALUES ({})",
            columns.iter().map(|c| schema::quote(c)).collect::<Vec<_>>().join(", "),
            (1..=columns.len()).map(|i| format!("?{i}")).collect::<Vec<_>>().join(", ")
        );
        {
            let mut stmt = tx.prepare(&sql)?;
            for e in tier.elements() {
                let mut row: Vec<SqlValue> = vec![
                    SqlValue::Integer(e.id),
                    SqlValue::Text(tier.key.annotation_id.clone()),
                    SqlValue::Text(tier.key.speaker_id.clone()),
                    SqlValue::Integer(e.t_min.ns()),
                    SqlValue::Integer(e.t_max.ns()),
                    SqlValue::Text(e.label.clone()),
                ];
                if has_parent {
                    row.push(e.parent.map_or(SqlValue::Null, SqlValue::Integer));
                }
                row.extend(level.attributes.iter().map(|a| to_sql(e.attribute(&a.id))));
                stmt.execute(rusqlite::params_from_iter(row))?;
            }
        }
        tx.commit()?;
        Ok(tier.len())
    }

    /// Loads exactly one tier.
    pub fn load_tier_by_key(&self, key: &TierKey) -> Result<Tier> {
        let level = self.level(&key.level_id)?;
        let elements = self.select_elements(
            level,
            "annotationID = ?1 AND speakerID = ?2",
            &[&key.annotation_id, &key.speaker_id],
        )?;
        Ok(Tier::new(key.clone(), elements.into_iter().map(|(_, e)| e).collect()))
    }

    /// All tiers of a level for a communication, ordered by (annotation, speaker).
    pub fn load_tiers(&self, level_id: &str, communication_id: &str) -> Result<Vec<Tier>> {
        let level = self.level(level_id)?;
        let rows = self.select_elements(
            level,
            "annotationID IN (SELECT id FROM annotation WHERE communicationID = ?1)",
            &[&communication_id],
        )?;
        let mut tiers: BTreeMap<(String, String), Vec<AnnotationElement>> = BTreeMap::new();
        for (key, element) in rows {
            tiers.entry(key).or_default().push(element);
        }
        Ok(tiers
            .into_iter()
            .map(|((annotation_id, speaker_id), elements)| {
                Tier::new(
                    TierKey {
                        communication_id: communication_id.to_string(),
                        annotation_id,
                        speaker_id,
                        level_id: level_id.to_string(),
                    },
                    elements,
                )
            })
            .collect())
    }

    /// Loads the tier of `level_id` for a communication, optionally restricted
    /// to one speaker. An absent tier loads as empty; several matching tiers
    /// are an error.
    pub fn load_tier(&self, level_id: &str, communication_id: &str, speaker_id: Option<&str>) -> Result<Tier> {
        let mut tiers: Vec<Tier> = self
            .load_tiers(level_id, communication_id)?
            .into_iter()
            .filter(|t| speaker_id.is_none_or(|s| t.key.speaker_id == s))
            .collect();
        match tiers.len() {
            0 => Ok(Tier::empty(TierKey::new(
                communication_id,
                speaker_id.unwrap_or(""),
                level_id,
            ))),
            1 => Ok(tiers.remove(0)),
            _ => Err(StoreError::AmbiguousTier(tiers.into_iter().map(|t| t.key).collect())),
        }
    }

    fn select_elements(
        &self,
        level: &AnnotationLevelDef,
        condition: &str,
        args: &[&dyn rusqlite::ToSql],
    ) -> Result<Vec<((String, String), AnnotationElement)>> {
        let has_parent = self.structure.hierarchy_parent(&level.id).is_some();
        let mut columns = vec!["elementID", "annotationID", "speakerID", "tMin", "tMax", "label"];
        if has_parent {
            columns.push("parentID");
        }
        columns.extend(level.attributes.iter().map(|a| a.id.as_str()));
        let table = level.table_name();
        let sql = format!(
            "SELECT {} FROM {} WHERE {condition} ORDER BY annotationID, speakerID, tMin, elementID",
            columns.iter().map(|c| schema::quote(c)).collect::<Vec<_>>().join(", "),
            schema::quote(&table),
        );
        let mut stmt = self.conn.prepare(&sql)?;
        let mut rows = stmt.query(args)?;
        let mut out = Vec::new();
        let first_attr = if has_parent { 7 } else { 6 };
        while let Some(row) = rows.next()? {
            let mut element = AnnotationElement {
                id: row.get(0)?,
                t_min: Time::from_ns(row.get(3)?),
                t_max: Time::from_ns(row.get(4)?),
                label: row.get(5)?,
                attributes: BTreeMap::new(),
                parent: if has_parent { row.get(6)? } else { None },
            };
            for (i, attr) in level.attributes.iter().enumerate() {
                let value = from_sql(row.get_ref(first_attr + i)?, attr.datatype).map_err(|detail| {
                    StoreError::CorruptValue {
                        table: table.clone(),
                        column: attr.id.clone(),
                        detail,
                    }
                })?;
                element.attributes.insert(attr.id.clone(), value);
            }
            out.push(((row.get(1)?, row.get(2)?), element));
        }
        Ok(out)
    }

    /// Moves element boundaries in place, all in one transaction:
    /// `(tier, elementID, new tMin, new tMax)`.
    pub(crate) fn update_boundaries(&mut self, moves: &[(TierKey, i64, Time, Time)]) -> Result<()> {
        self.require_writer()?;
        let tx = self.conn.unchecked_transaction()?;
        for (key, id, t_min, t_max) in moves {
            let level = self.level(&key.level_id)?;
            let sql = format!(
                "UPDATE {} SET tMin = ?1, tMax = ?2 WHERE annotationID = ?3 AND speakerID = ?4 AND elementID = ?5",
                schema::quote(&level.table_name())
            );
            tx.prepare_cached(&sql)?
                .execute(params![t_min.ns(), t_max.ns(), key.annotation_id, key.speaker_id, id])?;
        }
        tx.commit()?;
        Ok(())
    }

    /// Number of elements of a level, optionally restricted to communications.
    pub fn count_elements(&self, level_id: &str, communications: Option<&[String]>) -> Result<u64> {
        let level = self.level(level_id)?;
        let table = schema::quote(&level.table_name());
        let count: i64 = match communications {
            None => self
                .conn
                .query_row(&format!("SELECT COUNT(*) FROM {table}"), [], |r| r.get(0))?,
            Some(ids) => {
                let mut total = 0;
                let mut stmt = self.conn.prepare(&format!(
                    "SELECT COUNT(*) FROM {table} WHERE annotationID IN \
                     (SELECT id FROM annotation WHERE communicationID = ?1)"
                ))?;
                for id in ids {
                    total += stmt.query_row([id], |r| r.get::<_, i64>(0))?;
                }
                total
            }
        };
        Ok(count as u64)
    }

    /// Runs a read-only SQL statement and returns column names and rows.
    pub fn query_readonly(&self, sql: &str) -> Result<(Vec<String>, Vec<Vec<SqlValue>>)> {
        let mut stmt = self.conn.prepare(sql)?;
        if !stmt.readonly() {
            return Err(StoreError::NotReadOnlyStatement);
        }
        let names: Vec<String> = stmt.column_names().iter().map(|s| s.to_string()).collect();
        let n = names.len();
        let rows = stmt
            .query_map([], |row| (0..n).map(|i| row.get::<_, SqlValue>(i)).collect())?
            .collect::<rusqlite::Result<Vec<Vec<SqlValue>>>>()?;
        Ok((names, rows))
    }
}

/// Makes sure the annotation row behind a tier exists and belongs to the
/// tier's communication, and that the speaker exists.
fn ensure_tier_owner(conn: &Connection, key: &TierKey) -> Result<()> {
    let comm_exists: bool = conn
        .query_row("SELECT 1 FROM communication WHERE id = ?1", [&key.communication_id], |_| Ok(()))
        .optional()?
        .is_some();
    if !comm_exists {
        return Err(StoreError::Model(ModelError::UnknownReference {
            object: MetadataObject::Annotation,
            id: key.annotation_id.clone(),
            target: MetadataObject::Communication,
            target_id: key.communication_id.clone(),
        }));
    }
    let speaker_exists = conn
        .query_row("SELECT 1 FROM speaker WHERE id = ?1", [&key.speaker_id], |_| Ok(()))
        .optional()?
        .is_some();
    if !speaker_exists {
        return Err(StoreError::Model(ModelError::UnknownReference {
            object: MetadataObject::Annotation,
            id: key.annotation_id.clone(),
            target: MetadataObject::Speaker,
            target_id: key.speaker_id.clone(),
        }));
    }
    let owner: Option<String> = conn
        .query_row(
            "SELECT communicationID FROM annotation WHERE id = ?1",
            [&key.annotation_id],
            |r| r.get(0),
        )
        .optional()?;
    match owner {
        Some(c) if c == key.communication_id => Ok(()),
        Some(c) => Err(StoreError::ConstraintViolation(format!(
            "annotation {:?} belongs to communication {c:?}, not {:?}",
            key.annotation_id, key.communication_id
        ))),
        None => {
            conn.execute(
                "INSERT INTO annotation (id, communicationID) VALUES (?1, ?2)",
                params![key.annotation_id, key.communication_id],
            )?;
            Ok(())
        }
    }
}

pub(crate) fn to_sql(value: Option<&Value>) -> SqlValue {
    match value {
        None => SqlValue::Null,
        Some(Value::Text(s)) => SqlValue::Text(s.clone()),
        Some(Value::Integer(i)) => SqlValue::Integer(*i),
        Some(Value::Real(r)) => SqlValue::Real(*r),
        Some(Value::Boolean(b)) => SqlValue::Integer(*b as i64),
        Some(Value::DateTime(d)) => SqlValue::Text(format_datetime(d)),
    }
}

pub(crate) fn from_sql(raw: ValueRef<'_>, datatype: DataType) -> std::result::Result<Option<Value>, String> {
    let value = match (raw, datatype) {
        (ValueRef::Null, _) => return Ok(None),
        (ValueRef::Text(t), DataType::Text) => Value::Text(String::from_utf8_lossy(t).into_owned()),
        (ValueRef::Integer(i), DataType::Text) => Value::Text(i.to_string()),
        (ValueRef::Real(r), DataType::Text) => Value::Text(r.to_string()),
        (ValueRef::Integer(i), DataType::Integer) => Value::Integer(i),
        (ValueRef::Integer(i), DataType::Real) => Value::Real(i as f64),
        (ValueRef::Real(r), DataType::Real) => Value::Real(r),
        (ValueRef::Integer(0), DataType::Boolean) => Value::Boolean(false),
        (ValueRef::Integer(1), DataType::Boolean) => Value::Boolean(true),
        (ValueRef::Text(t), DataType::DateTime) => {
            let s = String::from_utf8_lossy(t);
            Value::DateTime(parse_datetime(&s).ok_or_else(|| format!("bad datetime {s:?}"))?)
        }
        (other, dt) => return Err(format!("{:?} is not a valid {dt}", other.data_type())),
    };
    Ok(Some(value))
}
