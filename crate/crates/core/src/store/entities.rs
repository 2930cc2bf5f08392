//! Persistence of communications, speakers, recordings, participations and
//! annotations.

use rusqlite::types::Value as SqlValue;
use rusqlite::{params_from_iter, Connection};

use super::schema::{self, entity_fixed_columns};
use super::{from_sql, to_sql, Result, Store, StoreError};
use crate::model::{
    Annotation, Communication, CorpusModel, Entity, Metadata, ModelError, Participation, Recording, Speaker,
};
use crate::structure::{AnnotationStructure, MetadataObject};
use crate::time::Time;

fn fixed_values(entity: &Entity) -> Vec<SqlValue> {
    let text = |s: &str| SqlValue::Text(s.to_string());
    match entity {
        Entity::Communication(c) => vec![text(&c.id)],
        Entity::Speaker(s) => vec![text(&s.id)],
        Entity::Recording(r) => vec![
            text(&r.id),
            text(&r.communication_id),
            text(&r.filename),
            SqlValue::Integer(r.duration.ns()),
            SqlValue::Integer(r.sample_rate_hz as i64),
            SqlValue::Integer(r.channels as i64),
        ],
        Entity::Participation(p) => vec![text(&p.communication_id), text(&p.speaker_id), text(&p.role)],
        Entity::Annotation(a) => vec![text(&a.id), text(&a.communication_id)],
    }
}

fn key_columns(object: MetadataObject) -> &'static [&'static str] {
    match object {
        MetadataObject::Participation => &["communicationID", "speakerID"],
        _ => &["id"],
    }
}

fn load_object(
    conn: &Connection,
    structure: &AnnotationStructure,
    object: MetadataObject,
) -> Result<Vec<(Vec<SqlValue>, Metadata)>> {
    let fixed = entity_fixed_columns(object);
    let attrs: Vec<_> = structure.metadata_for(object).collect();
    let columns: Vec<String> = fixed
        .iter()
        .map(|c| schema::quote(c))
        .chain(attrs.iter().map(|a| schema::quote(&a.id)))
        .collect();
    let sql = format!(
        "SELECT {} FROM {} ORDER BY {}",
        columns.join(", "),
        object.table(),
        key_columns(object).join(", ")
    );
    let mut stmt = conn.prepare(&sql)?;
    let mut rows = stmt.query([])?;
    let mut out = Vec::new();
    while let Some(row) = rows.next()? {
        let values = (0..fixed.len())
            .map(|i| row.get::<_, SqlValue>(i))
            .collect::<rusqlite::Result<Vec<_>>>()?;
        let mut metadata = Metadata::new();
        for (i, attr) in attrs.iter().enumerate() {
            let value = from_sql(row.get_ref(fixed.len() + i)?, attr.datatype).map_err(|detail| {
                StoreError::CorruptValue {
                    table: object.table().to_string(),
                    column: attr.id.clone(),
                    detail,
                }
            })?;
            if let Some(v) = value {
                metadata.insert(attr.id.clone(), v);
            }
        }
        out.push((values, metadata));
    }
    Ok(out)
}

fn text(v: &SqlValue) -> String {
    match v {
        SqlValue::Text(s) => s.clone(),
        SqlValue::Integer(i) => i.to_string(),
        other => format!("{other:?}"),
    }
}

fn int(v: &SqlValue) -> i64 {
    match v {
        SqlValue::Integer(i) => *i,
        _ => 0,
    }
}

impl Store {
    /// Reads every entity into memory.
    pub fn load_corpus(&self) -> Result<CorpusModel> {
        let structure = &self.structure;
        let mut model = CorpusModel::new(structure.metadata.clone());
        for (v, metadata) in load_object(&self.conn, structure, MetadataObject::Communication)? {
            let id = text(&v[0]);
            model.communications.insert(id.clone(), Communication { id, metadata });
        }
        for (v, metadata) in load_object(&self.conn, structure, MetadataObject::Speaker)? {
            let id = text(&v[0]);
            model.speakers.insert(id.clone(), Speaker { id, metadata });
        }
        for (v, metadata) in load_object(&self.conn, structure, MetadataObject::Recording)? {
            let r = Recording {
                id: text(&v[0]),
                communication_id: text(&v[1]),
                filename: text(&v[2]),
                duration: Time::from_ns(int(&v[3])),
                sample_rate_hz: int(&v[4]) as u32,
                channels: int(&v[5]) as u16,
                metadata,
            };
            model.recordings.insert(r.id.clone(), r);
        }
        for (v, metadata) in load_object(&self.conn, structure, MetadataObject::Participation)? {
            let p = Participation {
                communication_id: text(&v[0]),
                speaker_id: text(&v[1]),
                role: text(&v[2]),
                metadata,
            };
            model
                .participations
                .insert((p.communication_id.clone(), p.speaker_id.clone()), p);
        }
        for (v, metadata) in load_object(&self.conn, structure, MetadataObject::Annotation)? {
            let a = Annotation {
                id: text(&v[0]),
                communication_id: text(&v[1]),
                metadata,
            };
            model.annotations.insert(a.id.clone(), a);
        }
        Ok(model)
    }

    /// Inserts or replaces an entity. Metadata is checked against the declared
    /// attributes and references must resolve. Returns the stored entity.
    pub fn upsert_entity(&mut self, entity: Entity) -> Result<Entity> {
        self.require_writer()?;
        let mut model = self.load_corpus()?;
        let stored = model.upsert_entity(entity)?;
        let object = stored.object();
        let attrs: Vec<_> = self.structure.metadata_for(object).collect();
        let mut columns: Vec<String> = entity_fixed_columns(object).iter().map(|c| c.to_string()).collect();
        columns.extend(attrs.iter().map(|a| a.id.clone()));
        let mut values = fixed_values(&stored);
        values.extend(attrs.iter().map(|a| to_sql(stored.metadata().get(&a.id))));
        let keys = key_columns(object);
        let updates: Vec<String> = columns
            .iter()
            .filter(|c| !keys.contains(&c.as_str()))
            .map(|c| format!("{0} = excluded.{0}", schema::quote(c)))
            .collect();
        let conflict = if updates.is_empty() {
            "DO NOTHING".to_string()
        } else {
            format!("DO UPDATE SET {}", updates.join(", "))
        };
        let sql = format!(
            "INSERT INTO {} ({}) VALUES ({}) ON CONFLICT ({}) {conflict}",
            object.table(),
            columns.iter().map(|c| schema::quote(c)).collect::<Vec<_>>().join(", "),
            (1..=columns.len()).map(|i| format!("?{i}")).collect::<Vec<_>>().join(", "),
            keys.join(", "),
        );
        self.conn.execute(&sql, params_from_iter(values))?;
        Ok(stored)
    }

    /// Deletes an entity. Entities that others refer to cannot be deleted;
    /// deleting an annotation also deletes its annotation elements.
    /// Participations are addressed as `communication/speaker`.
    pub fn delete_entity(&mut self, object: MetadataObject, id: &str) -> Result<()> {
        self.require_writer()?;
        let mut model = self.load_corpus()?;
        model.remove_entity(object, id)?;
        let tx = self.conn.unchecked_transaction()?;
        match object {
            MetadataObject::Annotation => {
                for level in &self.structure.levels {
                    tx.execute(
                        &format!("DELETE FROM {} WHERE annotationID = ?1", schema::quote(&level.table_name())),
                        [id],
                    )?;
                }
                tx.execute("DELETE FROM annotation WHERE id = ?1", [id])?;
            }
            MetadataObject::Speaker => {
                for level in &self.structure.levels {
                    let used: i64 = tx.query_row(
                        &format!("SELECT COUNT(*) FROM {} WHERE speakerID = ?1", schema::quote(&level.table_name())),
                        [id],
                        |r| r.get(0),
                    )?;
                    if used > 0 {
                        return Err(ModelError::Referenced {
                            object,
                            id: id.to_string(),
                            by: format!("level {:?}", level.id),
                        }
                        .into());
                    }
                }
                tx.execute("DELETE FROM speaker WHERE id = ?1", [id])?;
            }
            MetadataObject::Participation => {
                let (c, s) = id.split_once('/').unwrap_or((id, ""));
                tx.execute(
                    "DELETE FROM participation WHERE communicationID = ?1 AND speakerID = ?2",
                    [c, s],
                )?;
            }
            MetadataObject::Communication | MetadataObject::Recording => {
                tx.execute(&format!("DELETE FROM {} WHERE id = ?1", object.table()), [id])?;
            }
        }
        tx.commit()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::MetadataAttribute;
    use crate::value::{DataType, Value};

    fn structure() -> AnnotationStructure {
        let mut s = AnnotationStructure::new();
        s.add_metadata(MetadataAttribute::new(MetadataObject::Speaker, "age", DataType::Integer))
            .unwrap();
        s.add_metadata(MetadataAttribute::new(MetadataObject::Communication, "genre", DataType::Text))
            .unwrap();
        s.add_metadata(MetadataAttribute::new(MetadataObject::Recording, "quality", DataType::Real))
            .unwrap();
        s
    }

    #[test]
    fn entities_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::create(dir.path().join("c.corpus"), &structure()).unwrap();
        let mut comm = Communication {
            id: "c1".into(),
            ..Default::default()
        };
        comm.metadata.insert("genre".into(), Value::Text("interview".into()));
        store.upsert_entity(Entity::Communication(comm.clone())).unwrap();
        let mut sp = Speaker {
            id: "s1".into(),
            ..Default::default()
        };
        sp.metadata.insert("age".into(), Value::Integer(41));
        store.upsert_entity(Entity::Speaker(sp.clone())).unwrap();
        let mut rec = Recording {
            id: "r1".into(),
            communication_id: "c1".into(),
            filename: "c1.wav".into(),
            duration: Time::from_ms(60_000),
            sample_rate_hz: 16_000,
            channels: 1,
            metadata: Metadata::new(),
        };
        rec.metadata.insert("quality".into(), Value::Integer(3));
        let stored = store.upsert_entity(Entity::Recording(rec.clone())).unwrap();
        let Entity::Recording(stored) = stored else { unreachable!() };
        assert_eq!(stored.metadata["quality"], Value::Real(3.0));
        store
            .upsert_entity(Entity::Participation(Participation {
                communication_id: "c1".into(),
                speaker_id: "s1".into(),
                role: "interviewee".into(),
                metadata: Metadata::new(),
            }))
            .unwrap();

        let model = store.load_corpus().unwrap();
        assert_eq!(model.communications["c1"], comm);
        assert_eq!(model.speakers["s1"], sp);
        assert_eq!(model.recordings["r1"], stored);
        assert_eq!(model.speakers_of("c1").collect::<Vec<_>>(), ["s1"]);

        sp.metadata.insert("age".into(), Value::Integer(42));
        store.upsert_entity(Entity::Speaker(sp.clone())).unwrap();
        assert_eq!(store.load_corpus().unwrap().speakers["s1"], sp);
    }

    #[test]
    fn references_are_checked() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::create(dir.path().join("c.corpus"), &structure()).unwrap();
        let err = store
            .upsert_entity(Entity::Annotation(Annotation {
                id: "a".into(),
                communication_id: "missing".into(),
                metadata: Metadata::new(),
            }))
            .unwrap_err();
        assert!(matches!(err, StoreError::Model(ModelError::UnknownReference { .. })));
        let mut bad = Speaker {
            id: "s".into(),
            ..Default::default()
        };
        bad.metadata.insert("age".into(), Value::Text("old".into()));
        assert!(matches!(
            store.upsert_entity(Entity::Speaker(bad)),
            Err(StoreError::Model(ModelError::MetadataTypeMismatch { .. }))
        ));
    }

    #[test]
    fn delete_is_restricted() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::create(dir.path().join("c.corpus"), &structure()).unwrap();
        store
            .upsert_entity(Entity::Communication(Communication {
                id: "c1".into(),
                ..Default::default()
            }))
            .unwrap();
        store
            .upsert_entity(Entity::Annotation(Annotation {
                id: "c1".into(),
                communication_id: "c1".into(),
                metadata: Metadata::new(),
            }))
            .unwrap();
        assert!(matches!(
            store.delete_entity(MetadataObject::Communication, "c1"),
            Err(StoreError::Model(ModelError::Referenced { .. }))
        ));
        store.delete_entity(MetadataObject::Annotation, "c1").unwrap();
        store.delete_entity(MetadataObject::Communication, "c1").unwrap();
        assert!(store.load_corpus().unwrap().communications.is_empty());
    }
}
