//! Corpus counts: communications, recordings, total recording time and
//! per-level element counts.

use serde::{Deserialize, Serialize};

use crate::model::Predicate;
use crate::store::{Result, Store};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LevelCount {
    pub level_id: String,
    pub elements: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StatsReport {
    pub communications: u64,
    pub recordings: u64,
    pub total_duration_ns: i64,
    pub levels: Vec<LevelCount>,
}

/// Counts over the whole corpus, or over the communications matching
/// `filter` when it is non-empty. Levels are reported in the given order.
pub fn corpus_stats(store: &Store, level_ids: &[String], filter: &[Predicate]) -> Result<StatsReport> {
    for id in level_ids {
        store.level(id)?;
    }
    let model = store.load_corpus()?;
    let selected = model.select_subcorpus(filter)?;
    let restrict = !filter.is_empty();
    let recordings: Vec<_> = model
        .recordings
        .values()
        .filter(|r| !restrict || selected.binary_search(&r.communication_id).is_ok())
        .collect();
    let mut levels = Vec::with_capacity(level_ids.len());
    for id in level_ids {
        let elements = store.count_elements(id, restrict.then_some(selected.as_slice()))?;
        levels.push(LevelCount {
            level_id: id.clone(),
            elements,
        });
    }
    Ok(StatsReport {
        communications: selected.len() as u64,
        recordings: recordings.len() as u64,
        total_duration_ns: recordings.iter().map(|r| r.duration.ns()).sum(),
        levels,
    })
}

impl StatsReport {
    /// Two-column `measure,value` table; level counts appear as `elements:<level>`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("measure,value\n");
        out.push_str(&format!("communications,{}\n", self.communications));
        out.push_str(&format!("recordings,{}\n", self.recordings));
        out.push_str(&format!("totalDurationNs,{}\n", self.total_duration_ns));
        for level in &self.levels {
            out.push_str(&format!("elements:{},{}\n", level.level_id, level.elements));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AnnotationElement, Communication, Entity, Metadata, Recording, Speaker, Tier, TierKey};
    use crate::structure::{AnnotationLevelDef, AnnotationStructure};
    use crate::time::Time;

    fn store(dir: &tempfile::TempDir) -> Store {
        let mut s = AnnotationStructure::new();
        s.add_level(AnnotationLevelDef::interval("tok-min")).unwrap();
        Store::create(dir.path().join("s.corpus"), &s).unwrap()
    }

    #[test]
    fn empty_corpus_counts_zero() {
        let dir = tempfile::tempdir().unwrap();
        let store = store(&dir);
        let report = corpus_stats(&store, &["tok-min".into()], &[]).unwrap();
        assert_eq!(report.communications, 0);
        assert_eq!(report.total_duration_ns, 0);
        assert_eq!(report.levels[0].elements, 0);
    }

    #[test]
    fn durations_sum_and_elements_count() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = store(&dir);
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
        for (id, secs) in [("r1", 60), ("r2", 30)] {
            store
                .upsert_entity(Entity::Recording(Recording {
                    id: id.into(),
                    communication_id: "c".into(),
                    filename: format!("{id}.wav"),
                    duration: Time::from_ms(secs * 1000),
                    sample_rate_hz: 16000,
                    channels: 1,
                    metadata: Metadata::new(),
                }))
                .unwrap();
        }
        let elements = (0..7)
            .map(|i| AnnotationElement::interval(i + 1, Time::from_ms(i * 10), Time::from_ms(i * 10 + 10), "w"))
            .collect();
        store
            .save_tier(&Tier::new(TierKey::new("c", "s", "tok-min"), elements))
            .unwrap();
        let report = corpus_stats(&store, &["tok-min".into()], &[]).unwrap();
        assert_eq!(report.total_duration_ns, 90_000_000_000);
        assert_eq!(report.recordings, 2);
        assert_eq!(report.levels[0].elements, 7);
        assert!(report.to_csv().contains("elements:tok-min,7\n"));
        assert!(corpus_stats(&store, &["nope".into()], &[]).is_err());
    }
}
