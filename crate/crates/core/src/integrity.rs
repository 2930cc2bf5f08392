//! Consistency of stored annotations with the declared level relations,
//! vocabularies and required attributes, and snapping of slightly misaligned
//! boundaries.
//!
//! Alignment constraints come from two relation kinds. Under Hierarchy, the
//! first child of a parent starts where the parent starts and the last child
//! ends where it ends; children in between must stay inside the parent.
//! Under Attachment, every child boundary coincides with the nearest parent
//! boundary (the earlier one on ties). A mismatch is correctable when it is
//! within the tolerance, every constraint on the boundaries sitting at that
//! instant of the tier agrees on one target, and moving them there keeps all
//! intervals non-empty without creating overlaps.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::{AnnotationElement, Tier, TierKey};
use crate::store::{Store, StoreError};
use crate::structure::{AnnotationStructure, LevelKind, LevelRelation, RelationKind};
use crate::time::{Time, NS_PER_MS};
use crate::value::Value;

#[derive(Debug, thiserror::Error)]
pub enum IntegrityError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("the structure does not match the database catalog")]
    CatalogMismatch,
    #[error("violations are stale; the data changed since they were produced: {0}")]
    StaleViolations(String),
    #[error("tolerance must not be negative")]
    NegativeTolerance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ViolationKind {
    Overlap,
    AlignmentMismatch,
    NotContained,
    OrphanChild,
    VocabularyViolation,
    MissingRequired,
    PointSpan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Boundary {
    Start,
    End,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Location {
    pub communication_id: String,
    pub annotation_id: String,
    pub speaker_id: String,
    pub level_id: String,
    pub element_id: i64,
    pub boundary: Option<Boundary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Violation {
    pub kind: ViolationKind,
    pub location: Location,
    /// Start of the offending element, for ordering and display.
    pub t_min: Time,
    /// Relation that produced the violation, if any.
    pub relation: Option<LevelRelation>,
    /// Attribute concerned by vocabulary and required-value violations.
    pub attribute: Option<String>,
    pub magnitude_ns: Option<i64>,
    pub correctable: bool,
}

impl Violation {
    pub fn describe(&self) -> String {
        let l = &self.location;
        let mut s = format!(
            "{:?} {}/{}/{} {} element {} at {}",
            self.kind, l.communication_id, l.annotation_id, l.speaker_id, l.level_id, l.element_id, self.t_min
        );
        if let Some(b) = l.boundary {
            s.push_str(&format!(" ({b:?})"));
        }
        if let Some(r) = &self.relation {
            s.push_str(&format!(" [{r}]"));
        }
        if let Some(a) = &self.attribute {
            s.push_str(&format!(" attribute {a}"));
        }
        if let Some(m) = self.magnitude_ns {
            s.push_str(&format!(" off by {m} ns"));
        }
        if self.correctable {
            s.push_str(" correctable");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckConfig {
    pub tolerance_ns: i64,
    /// Relations to check; `None` checks all declared relations.
    pub relations: Option<Vec<LevelRelation>>,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            tolerance_ns: NS_PER_MS,
            relations: None,
        }
    }
}

impl CheckConfig {
    fn selected<'a>(&'a self, structure: &'a AnnotationStructure) -> Vec<&'a LevelRelation> {
        structure
            .relations
            .iter()
            .filter(|r| self.relations.as_ref().is_none_or(|sel| sel.contains(r)))
            .collect()
    }
}

/// Tiers of one communication keyed by (level, annotation, speaker).
pub type TierMap = BTreeMap<(String, String, String), Vec<AnnotationElement>>;

/// Groups tiers by (level, annotation, speaker), sorting elements by (tMin, id).
pub fn tier_map(tiers: impl IntoIterator<Item = Tier>) -> TierMap {
    let mut map = TierMap::new();
    for tier in tiers {
        let key = (tier.key.level_id.clone(), tier.key.annotation_id.clone(), tier.key.speaker_id.clone());
        map.entry(key).or_default().extend(tier.into_elements());
    }
    for elements in map.values_mut() {
        elements.sort_by_key(|e| (e.t_min, e.id));
    }
    map
}

/// One alignment requirement on an element boundary.
#[derive(Debug, Clone)]
struct Constraint {
    element: i64,
    boundary: Boundary,
    relation: LevelRelation,
    target: Option<Time>,
}

fn boundary_time(e: &AnnotationElement, b: Boundary) -> Time {
    match b {
        Boundary::Start => e.t_min,
        Boundary::End => e.t_max,
    }
}

/// Nearest of the sorted `points` to `t`; the earlier one on ties.
fn nearest(points: &[Time], t: Time) -> Option<Time> {
    let idx = points.partition_point(|&p| p < t);
    let after = points.get(idx).copied();
    let before = idx.checked_sub(1).map(|i| points[i]);
    match (before, after) {
        (Some(b), Some(a)) => Some(if t - b <= a - t { b } else { a }),
        (b, a) => b.or(a),
    }
}

/// Children of each parent in order, for valid parent links.
fn children_by_parent<'a>(
    children: &'a [AnnotationElement],
    parents: &[AnnotationElement],
) -> BTreeMap<i64, Vec<&'a AnnotationElement>> {
    let ids: BTreeSet<i64> = parents.iter().map(|p| p.id).collect();
    let mut out: BTreeMap<i64, Vec<&AnnotationElement>> = BTreeMap::new();
    for c in children {
        if let Some(p) = c.parent.filter(|p| ids.contains(p)) {
            out.entry(p).or_default().push(c);
        }
    }
    out
}

fn constraints_for(
    structure: &AnnotationStructure,
    relations: &[&LevelRelation],
    tiers: &TierMap,
    key: &(String, String, String),
) -> Vec<Constraint> {
    let (level_id, annotation, speaker) = key;
    let Some(level) = structure.level(level_id) else {
        return Vec::new();
    };
    let children = &tiers[key];
    let empty = Vec::new();
    let mut out = Vec::new();
    for rel in relations.iter().filter(|r| &r.child == level_id) {
        let parents = tiers
            .get(&(rel.parent.clone(), annotation.clone(), speaker.clone()))
            .unwrap_or(&empty);
        match rel.kind {
            RelationKind::Hierarchy => {
                let by_id: BTreeMap<i64, &AnnotationElement> = parents.iter().map(|p| (p.id, p)).collect();
                for (pid, kids) in children_by_parent(children, parents) {
                    let p = by_id[&pid];
                    let first = kids[0];
                    let last = kids[kids.len() - 1];
                    out.push(Constraint {
                        element: first.id,
                        boundary: Boundary::Start,
                        relation: (*rel).clone(),
                        target: Some(p.t_min),
                    });
                    out.push(Constraint {
                        element: last.id,
                        boundary: Boundary::End,
                        relation: (*rel).clone(),
                        target: Some(p.t_max),
                    });
                }
            }
            RelationKind::Attachment => {
                let mut points: Vec<Time> = parents.iter().flat_map(|p| [p.t_min, p.t_max]).collect();
                points.sort();
                points.dedup();
                for c in children {
                    let sides: &[Boundary] = match level.kind {
                        LevelKind::Interval => &[Boundary::Start, Boundary::End],
                        LevelKind::Point => &[Boundary::Start],
                    };
                    for &b in sides {
                        out.push(Constraint {
                            element: c.id,
                            boundary: b,
                            relation: (*rel).clone(),
                            target: nearest(&points, boundary_time(c, b)),
                        });
                    }
                }
            }
            RelationKind::Containment => {}
        }
    }
    out
}

/// Boundaries of the tier sitting at instant `t`.
fn group_at(elements: &[AnnotationElement], t: Time) -> Vec<(i64, Boundary)> {
    let mut out = Vec::new();
    for e in elements {
        if e.t_min == t {
            out.push((e.id, Boundary::Start));
        }
        if e.t_max == t {
            out.push((e.id, Boundary::End));
        }
    }
    out
}

fn overlaps(a: &AnnotationElement, b: &AnnotationElement) -> bool {
    a.t_min < b.t_max && b.t_min < a.t_max
}

/// Elements after moving every boundary at `from` to `to`, if that keeps
/// intervals non-empty and creates no new overlap.
fn try_move(kind: LevelKind, elements: &[AnnotationElement], from: Time, to: Time) -> Option<Vec<AnnotationElement>> {
    let mut moved = elements.to_vec();
    let mut touched = Vec::new();
    for (i, e) in moved.iter_mut().enumerate() {
        let mut hit = false;
        if e.t_min == from {
            e.t_min = to;
            hit = true;
        }
        if e.t_max == from {
            e.t_max = to;
            hit = true;
        }
        if hit {
            touched.push(i);
        }
    }
    if kind == LevelKind::Interval {
        for &i in &touched {
            if moved[i].t_min >= moved[i].t_max {
                return None;
            }
            for j in 0..moved.len() {
                if j != i && overlaps(&moved[i], &moved[j]) && !overlaps(&elements[i], &elements[j]) {
                    return None;
                }
            }
        }
    }
    Some(moved)
}

/// Single target for the boundaries at instant `t`, if all constraints on
/// them agree and name one.
fn agreed_target(elements: &[AnnotationElement], constraints: &[Constraint], t: Time) -> Option<Time> {
    let group = group_at(elements, t);
    let mut targets = BTreeSet::new();
    for c in constraints {
        if group.contains(&(c.element, c.boundary)) {
            targets.insert(c.target?);
        }
    }
    if targets.len() == 1 {
        targets.into_iter().next()
    } else {
        None
    }
}

fn location(communication_id: &str, key: &(String, String, String), element: i64, boundary: Option<Boundary>) -> Location {
    Location {
        communication_id: communication_id.to_string(),
        annotation_id: key.1.clone(),
        speaker_id: key.2.clone(),
        level_id: key.0.clone(),
        element_id: element,
        boundary,
    }
}

fn check_tier(
    structure: &AnnotationStructure,
    communication_id: &str,
    tiers: &TierMap,
    key: &(String, String, String),
    relations: &[&LevelRelation],
    tolerance_ns: i64,
    out: &mut Vec<Violation>,
) {
    let Some(level) = structure.level(&key.0) else {
        return;
    };
    let elements = &tiers[key];
    let by_id: BTreeMap<i64, &AnnotationElement> = elements.iter().map(|e| (e.id, e)).collect();
    let violation = |kind, element: &AnnotationElement, boundary| Violation {
        kind,
        location: location(communication_id, key, element.id, boundary),
        t_min: element.t_min,
        relation: None,
        attribute: None,
        magnitude_ns: None,
        correctable: false,
    };

    let mut max_end: Option<Time> = None;
    for e in elements {
        let bad_span = match level.kind {
            LevelKind::Interval => e.t_min >= e.t_max,
            LevelKind::Point => e.t_min != e.t_max,
        };
        if bad_span {
            out.push(violation(ViolationKind::PointSpan, e, None));
        }
        if level.kind == LevelKind::Interval {
            if let Some(end) = max_end.filter(|&end| end > e.t_min) {
                out.push(Violation {
                    magnitude_ns: Some(end - e.t_min),
                    ..violation(ViolationKind::Overlap, e, None)
                });
            }
            max_end = Some(max_end.map_or(e.t_max, |m| m.max(e.t_max)));
        }
        for attr in &level.attributes {
            match e.attributes.get(&attr.id).and_then(|v| v.as_ref()) {
                None if !attr.optional => out.push(Violation {
                    attribute: Some(attr.id.clone()),
                    ..violation(ViolationKind::MissingRequired, e, None)
                }),
                Some(Value::Text(s)) if !attr.permits(s) => out.push(Violation {
                    attribute: Some(attr.id.clone()),
                    ..violation(ViolationKind::VocabularyViolation, e, None)
                }),
                _ => {}
            }
        }
    }

    let empty = Vec::new();
    for rel in relations.iter().filter(|r| r.child == key.0) {
        let parents = tiers.get(&(rel.parent.clone(), key.1.clone(), key.2.clone())).unwrap_or(&empty);
        match rel.kind {
            RelationKind::Hierarchy => {
                let parent_ids: BTreeSet<i64> = parents.iter().map(|p| p.id).collect();
                for e in elements {
                    if !e.parent.is_some_and(|p| parent_ids.contains(&p)) {
                        out.push(Violation {
                            relation: Some((*rel).clone()),
                            ..violation(ViolationKind::OrphanChild, e, None)
                        });
                    }
                }
                let parent_by_id: BTreeMap<i64, &AnnotationElement> = parents.iter().map(|p| (p.id, p)).collect();
                for (pid, kids) in children_by_parent(elements, parents) {
                    let p = parent_by_id[&pid];
                    for (i, c) in kids.iter().enumerate() {
                        let first = i == 0;
                        let last = i == kids.len() - 1;
                        if (!first && c.t_min < p.t_min) || (!last && c.t_max > p.t_max) {
                            out.push(Violation {
                                relation: Some((*rel).clone()),
                                ..violation(ViolationKind::NotContained, c, None)
                            });
                        }
                    }
                }
            }
            RelationKind::Containment => {
                for e in elements {
                    if !parents.iter().any(|p| p.t_min <= e.t_min && e.t_max <= p.t_max) {
                        out.push(Violation {
                            relation: Some((*rel).clone()),
                            ..violation(ViolationKind::NotContained, e, None)
                        });
                    }
                }
            }
            RelationKind::Attachment => {}
        }
    }

    let constraints = constraints_for(structure, relations, tiers, key);
    for c in &constraints {
        let e = by_id[&c.element];
        let current = boundary_time(e, c.boundary);
        if c.target == Some(current) {
            continue;
        }
        let magnitude = c.target.map(|t| t.abs_diff(current));
        let correctable = magnitude.is_some_and(|m| m <= tolerance_ns)
            && agreed_target(elements, &constraints, current)
                .is_some_and(|t| try_move(level.kind, elements, current, t).is_some());
        out.push(Violation {
            relation: Some(c.relation.clone()),
            magnitude_ns: magnitude,
            correctable,
            ..violation(ViolationKind::AlignmentMismatch, e, Some(c.boundary))
        });
    }
}

fn sort_violations(structure: &AnnotationStructure, violations: &mut [Violation]) {
    violations.sort_by(|a, b| {
        let rank = |v: &Violation| structure.level_index(&v.location.level_id).unwrap_or(usize::MAX);
        let key = |v: &Violation| {
            (
                rank(v),
                v.location.speaker_id.clone(),
                v.location.annotation_id.clone(),
                v.t_min,
                v.location.element_id,
                v.kind,
                v.location.boundary,
                v.relation.as_ref().map(|r| (r.kind, r.parent.clone())),
                v.attribute.clone(),
            )
        };
        key(a).cmp(&key(b))
    });
}

/// Checks in-memory tiers of one communication.
pub fn check_tiers(
    structure: &AnnotationStructure,
    communication_id: &str,
    tiers: &TierMap,
    config: &CheckConfig,
) -> Vec<Violation> {
    let relations = config.selected(structure);
    let mut out = Vec::new();
    for key in tiers.keys() {
        check_tier(structure, communication_id, tiers, key, &relations, config.tolerance_ns, &mut out);
    }
    sort_violations(structure, &mut out);
    out
}

fn load_communication(store: &Store, communication_id: &str) -> Result<TierMap, StoreError> {
    let mut tiers = Vec::new();
    for level in &store.structure().levels {
        tiers.extend(store.load_tiers(&level.id, communication_id)?);
    }
    Ok(tier_map(tiers))
}

/// Checks every stored tier of a communication.
pub fn check_annotation(
    store: &Store,
    communication_id: &str,
    config: &CheckConfig,
) -> Result<Vec<Violation>, IntegrityError> {
    if config.tolerance_ns < 0 {
        return Err(IntegrityError::NegativeTolerance);
    }
    if store.introspect_schema()? != *store.structure() {
        return Err(IntegrityError::CatalogMismatch);
    }
    let tiers = load_communication(store, communication_id)?;
    Ok(check_tiers(store.structure(), communication_id, &tiers, config))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct BoundaryMove {
    pub communication_id: String,
    pub annotation_id: String,
    pub speaker_id: String,
    pub level_id: String,
    pub element_id: i64,
    pub boundary: Boundary,
    pub from: Time,
    pub to: Time,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CorrectionReport {
    pub moves: Vec<BoundaryMove>,
    /// Input violations that are not correctable.
    pub skipped: Vec<Violation>,
    /// Correctable mismatches whose move became impossible after earlier moves.
    pub aborted: Vec<Violation>,
}

/// Level ids ordered so that parents of all selected relations come first.
fn levels_top_down(structure: &AnnotationStructure, relations: &[&LevelRelation]) -> Vec<String> {
    let mut placed: Vec<String> = Vec::new();
    let mut remaining: Vec<&str> = structure.levels.iter().map(|l| l.id.as_str()).collect();
    while !remaining.is_empty() {
        let ready: Vec<&str> = remaining
            .iter()
            .copied()
            .filter(|id| {
                relations
                    .iter()
                    .filter(|r| r.child == *id && r.parent != *id)
                    .all(|r| placed.contains(&r.parent))
            })
            .collect();
        if ready.is_empty() {
            placed.extend(remaining.iter().map(|s| s.to_string()));
            break;
        }
        remaining.retain(|id| !ready.contains(id));
        placed.extend(ready.into_iter().map(str::to_string));
    }
    placed
}

/// Snaps correctable boundaries of in-memory tiers, parents first. Returns the
/// moves applied and the correctable mismatches that could not be applied.
pub fn correct_tiers(
    structure: &AnnotationStructure,
    communication_id: &str,
    tiers: &mut TierMap,
    config: &CheckConfig,
) -> (Vec<BoundaryMove>, Vec<Violation>) {
    let relations = config.selected(structure);
    let mut moves = Vec::new();
    let mut aborted = Vec::new();
    for level_id in levels_top_down(structure, &relations) {
        let Some(level) = structure.level(&level_id) else {
            continue;
        };
        let keys: Vec<_> = tiers.keys().filter(|k| k.0 == level_id).cloned().collect();
        for key in keys {
            // Every move satisfies all constraints of the moved boundaries and
            // never unsettles a satisfied one, so the loop ends after at most
            // one move per boundary.
            let cap = 2 * tiers[&key].len() + 1;
            for _ in 0..cap {
                let mut found = Vec::new();
                check_tier(structure, communication_id, tiers, &key, &relations, config.tolerance_ns, &mut found);
                let Some(v) = found
                    .into_iter()
                    .find(|v| v.kind == ViolationKind::AlignmentMismatch && v.correctable)
                else {
                    break;
                };
                let constraints = constraints_for(structure, &relations, tiers, &key);
                let elements = &tiers[&key];
                let from = boundary_at(elements, &v);
                let Some(moved) = agreed_target(elements, &constraints, from)
                    .and_then(|to| try_move(level.kind, elements, from, to))
                else {
                    aborted.push(v);
                    break;
                };
                for (before, after) in elements.iter().zip(moved.iter()) {
                    for (b, old, new) in [
                        (Boundary::Start, before.t_min, after.t_min),
                        (Boundary::End, before.t_max, after.t_max),
                    ] {
                        if old != new {
                            moves.push(BoundaryMove {
                                communication_id: communication_id.to_string(),
                                annotation_id: key.1.clone(),
                                speaker_id: key.2.clone(),
                                level_id: key.0.clone(),
                                element_id: before.id,
                                boundary: b,
                                from: old,
                                to: new,
                            });
                        }
                    }
                }
                tiers.insert(key.clone(), moved);
            }
        }
    }
    (moves, aborted)
}

fn boundary_at(elements: &[AnnotationElement], v: &Violation) -> Time {
    elements
        .iter()
        .find(|e| e.id == v.location.element_id)
        .map(|e| boundary_time(e, v.location.boundary.unwrap_or(Boundary::Start)))
        .unwrap_or(v.t_min)
}

/// Applies boundary snapping for every communication that has correctable
/// violations in `violations`, after checking they still describe the data.
pub fn auto_correct(
    store: &mut Store,
    violations: &[Violation],
    config: &CheckConfig,
) -> Result<CorrectionReport, IntegrityError> {
    let mut report = CorrectionReport {
        skipped: violations.iter().filter(|v| !v.correctable).cloned().collect(),
        ..Default::default()
    };
    let communications: BTreeSet<&str> = violations
        .iter()
        .filter(|v| v.correctable)
        .map(|v| v.location.communication_id.as_str())
        .collect();
    let mut corrected = Vec::new();
    for comm in communications {
        let tiers = load_communication(store, comm)?;
        let current = check_tiers(store.structure(), comm, &tiers, config);
        if let Some(stale) = violations
            .iter()
            .filter(|v| v.location.communication_id == comm)
            .find(|v| !current.contains(v))
        {
            return Err(IntegrityError::StaleViolations(stale.describe()));
        }
        corrected.push((comm.to_string(), tiers));
    }
    let mut updates: Vec<(TierKey, i64, Time, Time)> = Vec::new();
    for (comm, mut tiers) in corrected {
        let before = tiers.clone();
        let (moves, aborted) = correct_tiers(store.structure(), &comm, &mut tiers, config);
        report.moves.extend(moves);
        report.aborted.extend(aborted);
        for (key, elements) in &tiers {
            let old: BTreeMap<i64, &AnnotationElement> = before[key].iter().map(|e| (e.id, e)).collect();
            for e in elements {
                let o = old[&e.id];
                if o.t_min != e.t_min || o.t_max != e.t_max {
                    updates.push((
                        TierKey {
                            communication_id: comm.clone(),
                            annotation_id: key.1.clone(),
                            speaker_id: key.2.clone(),
                            level_id: key.0.clone(),
                        },
                        e.id,
                        e.t_min,
                        e.t_max,
                    ));
                }
            }
        }
    }
    if !updates.is_empty() {
        store.update_boundaries(&updates)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Communication, Entity, Speaker};
    use crate::structure::{AnnotationAttributeDef, AnnotationLevelDef};
    use crate::value::DataType;

    fn s(secs: &str) -> Time {
        Time::parse_secs(secs).unwrap()
    }

    fn structure() -> AnnotationStructure {
        let mut st = AnnotationStructure::new();
        st.add_level(AnnotationLevelDef::interval("phones")).unwrap();
        st.add_level(
            AnnotationLevelDef::interval("syll")
                .with_attribute(AnnotationAttributeDef::new("prom", DataType::Text).with_vocabulary(["P", "0"])),
        )
        .unwrap();
        st.add_relation(LevelRelation::hierarchy("syll", "phones")).unwrap();
        st
    }

    fn figure_tiers(phone_start: &str) -> TierMap {
        let syll = Tier::new(
            TierKey::new("c", "s", "syll"),
            vec![AnnotationElement::interval(1, s("140.666"), s("140.818"), "k@")],
        );
        let phones = Tier::new(
            TierKey::new("c", "s", "phones"),
            vec![
                AnnotationElement::interval(1, s(phone_start), s("140.753"), "k").with_parent(Some(1)),
                AnnotationElement::interval(2, s("140.753"), s("140.818"), "@").with_parent(Some(1)),
            ],
        );
        tier_map([syll, phones])
    }

    #[test]
    fn aligned_figure_rows_are_clean() {
        let v = check_tiers(&structure(), "c", &figure_tiers("140.666"), &CheckConfig::default());
        assert!(v.is_empty(), "{v:?}");
    }

    #[test]
    fn half_millisecond_offset_is_correctable() {
        let v = check_tiers(&structure(), "c", &figure_tiers("140.6665"), &CheckConfig::default());
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::AlignmentMismatch);
        assert_eq!(v[0].magnitude_ns, Some(500_000));
        assert!(v[0].correctable);
        assert_eq!(v[0].location.boundary, Some(Boundary::Start));

        let strict = CheckConfig {
            tolerance_ns: 100_000,
            ..Default::default()
        };
        assert!(!check_tiers(&structure(), "c", &figure_tiers("140.6665"), &strict)[0].correctable);
    }

    #[test]
    fn correction_snaps_child_to_parent() {
        let st = structure();
        let mut tiers = figure_tiers("140.6665");
        let (moves, aborted) = correct_tiers(&st, "c", &mut tiers, &CheckConfig::default());
        assert!(aborted.is_empty());
        assert_eq!(moves.len(), 1);
        assert_eq!(moves[0].to, s("140.666"));
        assert!(check_tiers(&st, "c", &tiers, &CheckConfig::default()).is_empty());
    }

    #[test]
    fn vocabulary_and_orphans() {
        let st = structure();
        let mut tiers = figure_tiers("140.666");
        let key = ("syll".to_string(), "c".to_string(), "s".to_string());
        tiers.get_mut(&key).unwrap()[0]
            .attributes
            .insert("prom".into(), Some(Value::Text("X".into())));
        let pkey = ("phones".to_string(), "c".to_string(), "s".to_string());
        tiers.get_mut(&pkey).unwrap()[1].parent = None;
        let kinds: Vec<ViolationKind> = check_tiers(&st, "c", &tiers, &CheckConfig::default())
            .iter()
            .map(|v| v.kind)
            .collect();
        // The orphaned "@" also leaves "k" as last child, misaligned with the syllable end.
        assert_eq!(
            kinds,
            [
                ViolationKind::AlignmentMismatch,
                ViolationKind::OrphanChild,
                ViolationKind::VocabularyViolation
            ]
        );
    }

    #[test]
    fn attachment_snaps_to_nearest_earlier_on_ties() {
        let mut st = AnnotationStructure::new();
        st.add_level(AnnotationLevelDef::interval("a")).unwrap();
        st.add_level(AnnotationLevelDef::point("p")).unwrap();
        st.add_relation(LevelRelation::new(RelationKind::Attachment, "a", "p")).unwrap();
        let a = Tier::new(
            TierKey::new("c", "s", "a"),
            vec![
                AnnotationElement::interval(1, Time::from_ms(0), Time::from_ms(10), "x"),
                AnnotationElement::interval(2, Time::from_ms(10), Time::from_ms(11), "y"),
            ],
        );
        let p = Tier::new(
            TierKey::new("c", "s", "p"),
            vec![AnnotationElement::point(1, Time::from_ns(10_500_000), "t")],
        );
        let mut tiers = tier_map([a, p]);
        let v = check_tiers(&st, "c", &tiers, &CheckConfig::default());
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].magnitude_ns, Some(500_000));
        let (moves, _) = correct_tiers(&st, "c", &mut tiers, &CheckConfig::default());
        assert!(moves.iter().all(|m| m.to == Time::from_ms(10)));
    }

    #[test]
    fn overlap_is_measured_against_running_end() {
        let mut st = AnnotationStructure::new();
        st.add_level(AnnotationLevelDef::interval("w")).unwrap();
        let w = Tier::new(
            TierKey::new("c", "s", "w"),
            vec![
                AnnotationElement::interval(1, Time::from_ms(0), Time::from_ms(30), "a"),
                AnnotationElement::interval(2, Time::from_ms(10), Time::from_ms(15), "b"),
                AnnotationElement::interval(3, Time::from_ms(20), Time::from_ms(40), "c"),
            ],
        );
        let v = check_tiers(&st, "c", &tier_map([w]), &CheckConfig::default());
        let m: Vec<_> = v.iter().map(|v| (v.location.element_id, v.magnitude_ns)).collect();
        assert_eq!(m, [(2, Some(20_000_000)), (3, Some(10_000_000))]);
    }

    fn stored(dir: &tempfile::TempDir) -> Store {
        let mut store = Store::create(dir.path().join("k.corpus"), &structure()).unwrap();
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
        for ((level, _, _), elements) in figure_tiers("140.6665") {
            store
                .save_tier(&Tier::new(TierKey::new("c", "s", &level), elements))
                .unwrap();
        }
        store
    }

    #[test]
    fn auto_correct_on_store_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = stored(&dir);
        let config = CheckConfig::default();
        let v = check_annotation(&store, "c", &config).unwrap();
        assert_eq!(v.len(), 1);
        let report = auto_correct(&mut store, &v, &config).unwrap();
        assert_eq!(report.moves.len(), 1);
        assert!(check_annotation(&store, "c", &config).unwrap().is_empty());
        let again = auto_correct(&mut store, &[], &config).unwrap();
        assert_eq!(again, CorrectionReport::default());
    }

    #[test]
    fn stale_violations_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = stored(&dir);
        let config = CheckConfig::default();
        let mut v = check_annotation(&store, "c", &config).unwrap();
        v[0].magnitude_ns = Some(1);
        assert!(matches!(
            auto_correct(&mut store, &v, &config),
            Err(IntegrityError::StaleViolations(_))
        ));
    }

    #[test]
    fn non_correctable_violations_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = stored(&dir);
        let config = CheckConfig {
            tolerance_ns: 0,
            ..Default::default()
        };
        let v = check_annotation(&store, "c", &config).unwrap();
        let report = auto_correct(&mut store, &v, &config).unwrap();
        assert!(report.moves.is_empty());
        assert_eq!(report.skipped.len(), 1);
    }
}
