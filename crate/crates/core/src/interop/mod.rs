//! TextGrid import and export.

pub mod mapping;
pub mod textgrid;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

pub use mapping::{MappingError, MappingRule, MappingTarget, SpeakerRule, TierMapping};
pub use textgrid::{parse_textgrid, write_textgrid, TextGridDoc, TextGridError, TextGridItem, TextGridTier, TierKind};

use crate::model::{AnnotationElement, Tier, TierKey};
use crate::store::{Store, StoreError};
use crate::structure::{AnnotationStructure, LevelKind};
use crate::time::{Time, NS_PER_MS};
use crate::value::Value;

/// Boundary tolerance when merging attribute tiers onto existing elements.
pub const MERGE_TOLERANCE_NS: i64 = NS_PER_MS;

#[derive(Debug, thiserror::Error)]
pub enum InteropError {
    #[error(transparent)]
    TextGrid(#[from] TextGridError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("unknown level {0:?}")]
    UnknownLevel(String),
    #[error("unknown attribute {level}.{attribute}")]
    UnknownAttribute { level: String, attribute: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SavedTier {
    pub level_id: String,
    pub speaker_id: String,
    pub elements: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct MergedAttribute {
    pub tier: String,
    pub level_id: String,
    pub attribute: String,
    pub speaker_id: String,
    pub values: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct UnmatchedItem {
    pub tier: String,
    pub t1: Time,
    pub t2: Time,
    pub text: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ImportReport {
    pub saved: Vec<SavedTier>,
    pub merged: Vec<MergedAttribute>,
    pub skipped_tiers: Vec<String>,
    pub unmatched: Vec<UnmatchedItem>,
    /// Structural remarks on the input grid (items out of range and the like).
    pub findings: Vec<String>,
}

impl ImportReport {
    pub fn element_count(&self, level_id: &str) -> usize {
        self.saved
            .iter()
            .filter(|s| s.level_id == level_id)
            .map(|s| s.elements)
            .sum()
    }
}

/// How the tiers of a grid will be used.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImportPlan {
    /// (level, speaker) -> tier index providing the labels.
    pub labels: BTreeMap<(String, String), usize>,
    /// (tier index, level, attribute, speaker).
    pub attributes: Vec<(usize, String, String, String)>,
    pub skipped: Vec<String>,
}

impl ImportPlan {
    pub fn speakers(&self) -> BTreeSet<String> {
        self.labels
            .keys()
            .map(|(_, s)| s.clone())
            .chain(self.attributes.iter().map(|(_, _, _, s)| s.clone()))
            .collect()
    }
}

pub fn plan_import(
    structure: &AnnotationStructure,
    mapping: &TierMapping,
    doc: &TextGridDoc,
) -> Result<ImportPlan, MappingError> {
    mapping.validate(structure)?;
    let mut plan = ImportPlan::default();
    for (index, tier) in doc.tiers.iter().enumerate() {
        let Some((speaker, target)) = mapping.resolve(&tier.name)? else {
            plan.skipped.push(tier.name.clone());
            continue;
        };
        let level = structure
            .level(target.level())
            .ok_or_else(|| MappingError::UnknownLevel(target.level().to_string()))?;
        let compatible = matches!(
            (tier.kind, level.kind),
            (TierKind::IntervalTier, LevelKind::Interval) | (TierKind::TextTier, LevelKind::Point)
        );
        if !compatible {
            return Err(MappingError::KindMismatch {
                tier: tier.name.clone(),
                tier_kind: tier.kind.as_str(),
                level: level.id.clone(),
                level_kind: level.kind.as_str(),
            });
        }
        match target {
            MappingTarget::Label { level } => {
                let key = (level.clone(), speaker.clone());
                if let Some(&first) = plan.labels.get(&key) {
                    return Err(MappingError::DuplicateTarget {
                        level: level.clone(),
                        speaker,
                        first: doc.tiers[first].name.clone(),
                        second: tier.name.clone(),
                    });
                }
                plan.labels.insert(key, index);
            }
            MappingTarget::Attribute { level, attribute } => {
                plan.attributes.push((index, level.clone(), attribute.clone(), speaker));
            }
        }
    }
    Ok(plan)
}

/// Elements of a TextGrid tier. Blank intervals are gaps and are skipped.
fn tier_elements(tier: &TextGridTier) -> Vec<AnnotationElement> {
    tier.items
        .iter()
        .filter(|item| tier.kind == TierKind::TextTier || !item.text.trim().is_empty())
        .enumerate()
        .map(|(i, item)| match tier.kind {
            TierKind::IntervalTier => AnnotationElement::interval(i as i64 + 1, item.t1, item.t2, &item.text),
            TierKind::TextTier => AnnotationElement::point(i as i64 + 1, item.t1, &item.text),
        })
        .collect()
}

/// Index of the element of `parents` containing `t`, preferring the one
/// starting at or before it.
fn containing(parents: &[AnnotationElement], t: Time) -> Option<i64> {
    let idx = parents.partition_point(|p| p.t_min <= t);
    if idx == 0 {
        return None;
    }
    parents[..idx]
        .iter()
        .rev()
        .find(|p| p.t_min <= t && t <= p.t_max)
        .map(|p| p.id)
}

/// Sets each child's parent to the parent element containing its midpoint.
pub fn link_to_parents(children: &mut Tier, parents: &Tier) {
    let parents = parents.elements();
    children.update(|child| {
        let mid = Time::from_ns(child.t_min.ns() + (child.t_max.ns() - child.t_min.ns()) / 2);
        child.parent = containing(parents, mid);
    });
}

/// Imports the mapped tiers of `doc` into `communication_id`. Label tiers
/// replace the stored tiers of their level and speaker; attribute tiers are
/// merged onto the elements whose boundaries both match within 1 ms. Children
/// of hierarchy relations are linked to the parent containing their midpoint.
pub fn import_textgrid(
    store: &mut Store,
    communication_id: &str,
    mapping: &TierMapping,
    doc: &TextGridDoc,
) -> Result<ImportReport, InteropError> {
    let structure = store.structure().clone();
    let plan = plan_import(&structure, mapping, doc)?;
    let model = store.load_corpus()?;
    if !model.communications.contains_key(communication_id) {
        return Err(MappingError::UnknownCommunication(communication_id.to_string()).into());
    }
    let mut report = ImportReport {
        skipped_tiers: plan.skipped.clone(),
        findings: doc.findings(),
        ..Default::default()
    };

    let mut touched: BTreeMap<(String, String), Tier> = BTreeMap::new();
    for ((level, speaker), &index) in &plan.labels {
        let key = TierKey::new(communication_id, speaker, level);
        touched.insert((level.clone(), speaker.clone()), Tier::new(key, tier_elements(&doc.tiers[index])));
    }

    for (index, level_id, attribute, speaker) in &plan.attributes {
        let source = &doc.tiers[*index];
        let def = structure
            .level(level_id)
            .and_then(|l| l.attribute(attribute))
            .expect("validated mapping");
        let tier_key = (level_id.clone(), speaker.clone());
        if !touched.contains_key(&tier_key) {
            let stored = store.load_tier_by_key(&TierKey::new(communication_id, speaker, level_id))?;
            touched.insert(tier_key.clone(), stored);
        }
        let tier = touched.get_mut(&tier_key).expect("inserted above");
        let mut merged = 0;
        for item in &source.items {
            if item.text.is_empty() {
                continue;
            }
            let unmatched = |reason: String| UnmatchedItem {
                tier: source.name.clone(),
                t1: item.t1,
                t2: item.t2,
                text: item.text.clone(),
                reason,
            };
            let target = tier
                .elements()
                .iter()
                .filter(|e| {
                    e.t_min.abs_diff(item.t1) <= MERGE_TOLERANCE_NS && e.t_max.abs_diff(item.t2) <= MERGE_TOLERANCE_NS
                })
                .min_by_key(|e| (e.t_min.abs_diff(item.t1) + e.t_max.abs_diff(item.t2), e.id))
                .map(|e| e.id);
            let Some(id) = target else {
                report
                    .unmatched
                    .push(unmatched(format!("no {level_id} element within 1 ms")));
                continue;
            };
            let value = match Value::parse(def.datatype, &item.text) {
                Ok(v) => v,
                Err(e) => {
                    report.unmatched.push(unmatched(e.to_string()));
                    continue;
                }
            };
            if let Value::Text(s) = &value {
                if !def.permits(s) {
                    report
                        .unmatched
                        .push(unmatched(format!("{s:?} is not in the vocabulary of {attribute}")));
                    continue;
                }
            }
            tier.update(|e| {
                if e.id == id {
                    e.attributes.insert(attribute.clone(), Some(value.clone()));
                }
            });
            merged += 1;
        }
        report.merged.push(MergedAttribute {
            tier: source.name.clone(),
            level_id: level_id.clone(),
            attribute: attribute.clone(),
            speaker_id: speaker.clone(),
            values: merged,
        });
    }

    // Re-link hierarchy children whose own tier or parent tier changed.
    let order: Vec<String> = structure.levels_parent_first().iter().map(|l| l.id.clone()).collect();
    let speakers: BTreeSet<String> = touched.keys().map(|(_, s)| s.clone()).collect();
    for level_id in &order {
        let Some(parent_id) = structure.hierarchy_parent(level_id) else {
            continue;
        };
        for speaker in &speakers {
            let child_key = (level_id.clone(), speaker.clone());
            let parent_key = (parent_id.to_string(), speaker.clone());
            if !touched.contains_key(&child_key) && !touched.contains_key(&parent_key) {
                continue;
            }
            let parent = match touched.get(&parent_key) {
                Some(t) => t.clone(),
                None => store.load_tier_by_key(&TierKey::new(communication_id, speaker, parent_id))?,
            };
            if !touched.contains_key(&child_key) {
                let stored = store.load_tier_by_key(&TierKey::new(communication_id, speaker, level_id))?;
                if stored.is_empty() {
                    continue;
                }
                touched.insert(child_key.clone(), stored);
            }
            link_to_parents(touched.get_mut(&child_key).expect("present"), &parent);
        }
    }

    for level_id in &order {
        for ((level, speaker), tier) in &touched {
            if level != level_id {
                continue;
            }
            let elements = store.save_tier(tier)?;
            report.saved.push(SavedTier {
                level_id: level.clone(),
                speaker_id: speaker.clone(),
                elements,
            });
        }
    }
    Ok(report)
}

/// A level (labels) or one of its attributes, written `level` or `level.attribute`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportColumn {
    pub level: String,
    pub attribute: Option<String>,
}

impl ExportColumn {
    pub fn parse(text: &str) -> ExportColumn {
        match text.split_once('.') {
            Some((level, attribute)) => ExportColumn {
                level: level.to_string(),
                attribute: Some(attribute.to_string()),
            },
            None => ExportColumn {
                level: text.to_string(),
                attribute: None,
            },
        }
    }

    fn tier_name(&self) -> String {
        match &self.attribute {
            Some(a) => format!("{}-{a}", self.level),
            None => self.level.clone(),
        }
    }
}

/// Builds a grid with one tier per requested column (and per speaker when
/// several speakers have data; their tiers are named `<name>_<speaker>`).
/// Interval tiers are padded with empty intervals so they cover the grid;
/// the grid spans the longest recording or the last boundary.
pub fn export_textgrid(
    store: &Store,
    communication_id: &str,
    columns: &[ExportColumn],
    speaker: Option<&str>,
) -> Result<TextGridDoc, InteropError> {
    let structure = store.structure();
    for c in columns {
        let level = structure
            .level(&c.level)
            .ok_or_else(|| InteropError::UnknownLevel(c.level.clone()))?;
        if let Some(a) = &c.attribute {
            if level.attribute(a).is_none() {
                return Err(InteropError::UnknownAttribute {
                    level: c.level.clone(),
                    attribute: a.clone(),
                });
            }
        }
    }
    let mut loaded: BTreeMap<(String, String), Tier> = BTreeMap::new();
    let levels: BTreeSet<&str> = columns.iter().map(|c| c.level.as_str()).collect();
    for level in levels {
        for tier in store.load_tiers(level, communication_id)? {
            if speaker.is_none_or(|s| s == tier.key.speaker_id) {
                loaded.insert((level.to_string(), tier.key.speaker_id.clone()), tier);
            }
        }
    }
    let mut speakers: BTreeSet<String> = loaded.keys().map(|(_, s)| s.clone()).collect();
    if let Some(s) = speaker {
        speakers.insert(s.to_string());
    }
    let multi = speakers.len() > 1;

    let model = store.load_corpus()?;
    let xmin = loaded
        .values()
        .filter_map(|t| t.elements().first().map(|e| e.t_min))
        .min()
        .unwrap_or(Time::ZERO)
        .min(Time::ZERO);
    let xmax = loaded
        .values()
        .flat_map(|t| t.elements().iter().map(|e| e.t_max))
        .chain(model.recordings_of(communication_id).map(|r| r.duration))
        .max()
        .unwrap_or(Time::ZERO)
        .max(xmin);

    let mut tiers = Vec::new();
    for column in columns {
        let level = structure.level(&column.level).expect("checked above");
        let speaker_list: Vec<Option<&String>> = if speakers.is_empty() {
            vec![None]
        } else {
            speakers.iter().map(Some).collect()
        };
        for s in speaker_list {
            let elements: &[AnnotationElement] = s
                .and_then(|s| loaded.get(&(column.level.clone(), s.clone())))
                .map_or(&[], |t| t.elements());
            let text_of = |e: &AnnotationElement| match &column.attribute {
                Some(a) => e.attribute(a).map(|v| v.to_string()).unwrap_or_default(),
                None => e.label.clone(),
            };
            let mut name = column.tier_name();
            if multi {
                if let Some(s) = s {
                    name = format!("{name}_{s}");
                }
            }
            let items = match level.kind {
                LevelKind::Point => elements
                    .iter()
                    .map(|e| TextGridItem::new(e.t_min, e.t_min, &text_of(e)))
                    .collect(),
                LevelKind::Interval => {
                    let mut items = Vec::new();
                    let mut cursor = xmin;
                    for e in elements {
                        if e.t_min > cursor {
                            items.push(TextGridItem::new(cursor, e.t_min, ""));
                        }
                        items.push(TextGridItem::new(e.t_min, e.t_max, &text_of(e)));
                        cursor = cursor.max(e.t_max);
                    }
                    if !elements.is_empty() && cursor < xmax {
                        items.push(TextGridItem::new(cursor, xmax, ""));
                    }
                    items
                }
            };
            tiers.push(TextGridTier {
                name,
                kind: match level.kind {
                    LevelKind::Interval => TierKind::IntervalTier,
                    LevelKind::Point => TierKind::TextTier,
                },
                xmin,
                xmax,
                items,
            });
        }
    }
    Ok(TextGridDoc { xmin, xmax, tiers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Communication, Entity, Speaker};
    use crate::structure::{AnnotationAttributeDef, AnnotationLevelDef, LevelRelation};
    use crate::value::DataType;

    fn structure() -> AnnotationStructure {
        let mut s = AnnotationStructure::new();
        s.add_level(AnnotationLevelDef::interval("phones")).unwrap();
        s.add_level(
            AnnotationLevelDef::interval("syll")
                .with_attribute(AnnotationAttributeDef::new("prom", DataType::Text).with_vocabulary(["P", "0"])),
        )
        .unwrap();
        s.add_level(AnnotationLevelDef::interval("tok-min")).unwrap();
        s.add_relation(LevelRelation::hierarchy("syll", "phones")).unwrap();
        s.add_relation(LevelRelation::hierarchy("tok-min", "syll")).unwrap();
        s
    }

    fn store(dir: &tempfile::TempDir) -> Store {
        let mut store = Store::create(dir.path().join("i.corpus"), &structure()).unwrap();
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
        store
    }

    fn ms(v: i64) -> Time {
        Time::from_ms(v)
    }

    fn interval_tier(name: &str, items: &[(i64, i64, &str)]) -> TextGridTier {
        TextGridTier {
            name: name.into(),
            kind: TierKind::IntervalTier,
            xmin: Time::ZERO,
            xmax: ms(300),
            items: items.iter().map(|&(a, b, t)| TextGridItem::new(ms(a), ms(b), t)).collect(),
        }
    }

    fn grid() -> TextGridDoc {
        TextGridDoc {
            xmin: Time::ZERO,
            xmax: ms(300),
            tiers: vec![
                interval_tier("phones", &[(0, 50, "k"), (50, 100, "@"), (100, 200, "l"), (200, 300, "e")]),
                interval_tier("syll", &[(0, 100, "k@"), (100, 300, "le")]),
                interval_tier("tok-min", &[(0, 100, "que"), (100, 300, "les")]),
                interval_tier("notes", &[(0, 300, "x")]),
            ],
        }
    }

    #[test]
    fn imports_same_named_tiers_and_links_parents() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = store(&dir);
        let mapping = TierMapping::identity(store.structure(), "s");
        let report = import_textgrid(&mut store, "c", &mapping, &grid()).unwrap();
        assert_eq!(report.saved.len(), 3);
        assert_eq!(report.skipped_tiers, ["notes"]);
        assert_eq!(report.element_count("phones"), 4);
        let phones = store.load_tier("phones", "c", Some("s")).unwrap();
        let parents: Vec<Option<i64>> = phones.elements().iter().map(|e| e.parent).collect();
        assert_eq!(parents, [Some(1), Some(1), Some(2), Some(2)]);
    }

    #[test]
    fn attribute_tiers_merge_within_a_millisecond() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = store(&dir);
        let mut doc = grid();
        doc.tiers.push(TextGridTier {
            name: "syll-prom".into(),
            kind: TierKind::IntervalTier,
            xmin: Time::ZERO,
            xmax: ms(300),
            items: vec![
                TextGridItem::new(Time::from_ns(400_000), Time::from_ns(100_900_000), "P"),
                TextGridItem::new(ms(100), ms(250), "0"),
                TextGridItem::new(ms(250), ms(300), ""),
            ],
        });
        let mut mapping = TierMapping::identity(store.structure(), "s");
        mapping.rules.insert(
            0,
            MappingRule {
                pattern: "syll-prom".into(),
                target: MappingTarget::Attribute {
                    level: "syll".into(),
                    attribute: "prom".into(),
                },
            },
        );
        let report = import_textgrid(&mut store, "c", &mapping, &doc).unwrap();
        assert_eq!(report.merged[0].values, 1);
        assert_eq!(report.unmatched.len(), 1);
        assert_eq!(report.unmatched[0].text, "0");
        let syll = store.load_tier("syll", "c", None).unwrap();
        assert_eq!(syll.elements()[0].attribute("prom"), Some(&Value::Text("P".into())));
        assert_eq!(syll.elements()[1].attribute("prom"), None);
    }

    #[test]
    fn unknown_level_in_mapping() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = store(&dir);
        let mapping = TierMapping::parse("map x => words", "s").unwrap();
        assert!(matches!(
            import_textgrid(&mut store, "c", &mapping, &grid()),
            Err(InteropError::Mapping(MappingError::UnknownLevel(_)))
        ));
    }

    #[test]
    fn export_pads_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = store(&dir);
        let mapping = TierMapping::identity(store.structure(), "s");
        let mut doc = grid();
        doc.tiers.truncate(3);
        import_textgrid(&mut store, "c", &mapping, &doc).unwrap();
        let cols: Vec<ExportColumn> = ["phones", "syll", "tok-min"].map(ExportColumn::parse).to_vec();
        let exported = export_textgrid(&store, "c", &cols, None).unwrap();
        assert_eq!(exported, doc);

        let syll = export_textgrid(&store, "c", &[ExportColumn::parse("syll.prom")], None).unwrap();
        assert_eq!(syll.tiers[0].name, "syll-prom");
        assert_eq!(syll.tiers[0].items.len(), 2);
    }

    #[test]
    fn export_empty_level() {
        let dir = tempfile::tempdir().unwrap();
        let store = store(&dir);
        let doc = export_textgrid(&store, "c", &[ExportColumn::parse("syll")], None).unwrap();
        assert_eq!(doc.tiers.len(), 1);
        assert!(doc.tiers[0].items.is_empty());
        assert!(matches!(
            export_textgrid(&store, "c", &[ExportColumn::parse("nope")], None),
            Err(InteropError::UnknownLevel(_))
        ));
    }
}
