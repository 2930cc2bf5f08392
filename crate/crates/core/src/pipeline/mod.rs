//! Annotation cascades: ordered annotator steps applied to every
//! communication of a sub-corpus.
//!
//! Within a step, inputs are loaded from the store, annotators run in
//! parallel over communications, and outputs are written back before the next
//! step starts.

mod syllabify;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{ModelError, Predicate, Tier};
use crate::store::{Store, StoreError};
use crate::structure::AnnotationStructure;
use crate::value::{DataType, Value};

pub use syllabify::{syllabify, PhoneClass, ProfileError, SonorityProfile, Syllabification, SyllabifyError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid pipeline file: {0}")]
    Spec(String),
    #[error("unknown annotator {0:?}")]
    UnknownAnnotator(String),
    #[error("{annotator}: parameter {parameter}: {message}")]
    InvalidParameter {
        annotator: String,
        parameter: String,
        message: String,
    },
    #[error("step {step} ({annotator}): unknown level {level:?}")]
    UnknownLevel { step: usize, annotator: String, level: String },
    #[error("step {step} ({annotator}): unknown attribute {level}.{attribute}")]
    UnknownAttribute {
        step: usize,
        annotator: String,
        level: String,
        attribute: String,
    },
    #[error("step {step} ({annotator}) needs level {level:?}, which holds no data and is not produced by an earlier step")]
    DependencyUnsatisfied { step: usize, annotator: String, level: String },
    #[error("step {step} ({annotator}) failed on communication {communication}: {message}")]
    AnnotatorFailed {
        step: usize,
        annotator: String,
        communication: String,
        message: String,
    },
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("cannot start worker pool: {0}")]
    Workers(String),
}

/// Levels and attributes an annotator reads or writes. An empty attribute
/// list stands for the elements themselves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelUse {
    pub level: String,
    #[serde(default)]
    pub attributes: Vec<String>,
}

impl LevelUse {
    pub fn level(level: &str) -> Self {
        LevelUse {
            level: level.to_string(),
            attributes: Vec::new(),
        }
    }

    pub fn attribute(level: &str, attribute: &str) -> Self {
        LevelUse {
            level: level.to_string(),
            attributes: vec![attribute.to_string()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorSpec {
    pub name: String,
    pub requires: Vec<LevelUse>,
    pub produces: Vec<LevelUse>,
    pub parameters: BTreeMap<String, String>,
}

/// Input tiers of one communication, by level.
pub type Inputs = BTreeMap<String, Vec<Tier>>;

pub trait Annotator: Send + Sync {
    fn spec(&self) -> AnnotatorSpec;

    /// Output tiers for one communication. Must depend only on the inputs
    /// and the annotator's parameters.
    fn annotate(&self, inputs: &Inputs) -> Result<Vec<Tier>, String>;
}

/// Builds the syllable level from the phone level.
#[derive(Debug, Clone)]
pub struct Syllabifier {
    pub phones: String,
    pub syllables: String,
    pub profile: SonorityProfile,
    /// Whether phones get their syllable as parent.
    pub link_phones: bool,
    parameters: BTreeMap<String, String>,
}

impl Syllabifier {
    pub fn new(structure: &AnnotationStructure, phones: &str, syllables: &str, profile: SonorityProfile) -> Self {
        Syllabifier {
            phones: phones.to_string(),
            syllables: syllables.to_string(),
            profile,
            link_phones: structure.hierarchy_parent(phones) == Some(syllables),
            parameters: BTreeMap::from([
                ("phones".to_string(), phones.to_string()),
                ("syllables".to_string(), syllables.to_string()),
            ]),
        }
    }
}

impl Annotator for Syllabifier {
    fn spec(&self) -> AnnotatorSpec {
        let mut produces = vec![LevelUse::level(&self.syllables)];
        if self.link_phones {
            produces.push(LevelUse::level(&self.phones));
        }
        AnnotatorSpec {
            name: "syllabify".into(),
            requires: vec![LevelUse::level(&self.phones)],
            produces,
            parameters: self.parameters.clone(),
        }
    }

    fn annotate(&self, inputs: &Inputs) -> Result<Vec<Tier>, String> {
        let mut out = Vec::new();
        for phones in inputs.get(&self.phones).into_iter().flatten() {
            let s = syllabify(phones, &self.syllables, &self.profile).map_err(|e| e.to_string())?;
            out.push(s.syllables);
            if self.link_phones {
                out.push(s.phones);
            }
        }
        Ok(out)
    }
}

/// Stores `tMax - tMin` in nanoseconds in an integer attribute.
#[derive(Debug, Clone)]
pub struct Durations {
    pub level: String,
    pub attribute: String,
}

impl Durations {
    pub fn new(level: &str, attribute: &str) -> Self {
        Durations {
            level: level.to_string(),
            attribute: attribute.to_string(),
        }
    }
}

/// Copy of `tier` with the duration of every element in `attribute`.
pub fn annotate_durations(tier: &Tier, attribute: &str) -> Tier {
    let mut tier = tier.clone();
    tier.update(|e| {
        let d = e.duration_ns();
        e.attributes.insert(attribute.to_string(), Some(Value::Integer(d)));
    });
    tier
}

impl Annotator for Durations {
    fn spec(&self) -> AnnotatorSpec {
        AnnotatorSpec {
            name: "durations".into(),
            requires: vec![LevelUse::level(&self.level)],
            produces: vec![LevelUse::attribute(&self.level, &self.attribute)],
            parameters: BTreeMap::from([
                ("level".to_string(), self.level.clone()),
                ("attribute".to_string(), self.attribute.clone()),
            ]),
        }
    }

    fn annotate(&self, inputs: &Inputs) -> Result<Vec<Tier>, String> {
        Ok(inputs
            .get(&self.level)
            .into_iter()
            .flatten()
            .filter(|t| !t.is_empty())
            .map(|t| annotate_durations(t, &self.attribute))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum OnError {
    #[default]
    Abort,
    SkipCommunication,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSpec {
    pub annotator: String,
    #[serde(default)]
    pub parameters: BTreeMap<String, String>,
}

impl StepSpec {
    pub fn new(annotator: &str) -> Self {
        StepSpec {
            annotator: annotator.to_string(),
            parameters: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: &str) -> Self {
        self.parameters.insert(key.to_string(), value.to_string());
        self
    }
}

/// Contents of a pipeline file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PipelineSpec {
    pub steps: Vec<StepSpec>,
    #[serde(default)]
    pub subcorpus: Vec<Predicate>,
    #[serde(default)]
    pub on_error: OnError,
}

impl PipelineSpec {
    pub fn from_json(text: &str) -> Result<PipelineSpec, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Spec(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pipeline spec serializes")
    }
}

fn param<'a>(step: &'a StepSpec, key: &str, default: &'a str) -> &'a str {
    step.parameters.get(key).map(String::as_str).unwrap_or(default)
}

/// Instantiates a built-in annotator. Relative profile paths are resolved
/// against `base_dir`.
pub fn build_annotator(
    step: &StepSpec,
    structure: &AnnotationStructure,
    base_dir: &Path,
) -> Result<Box<dyn Annotator>, PipelineError> {
    let known: &[&str] = match step.annotator.as_str() {
        "syllabify" => &["phones", "syllables", "profile"],
        "durations" => &["level", "attribute"],
        other => return Err(PipelineError::UnknownAnnotator(other.to_string())),
    };
    if let Some(k) = step.parameters.keys().find(|k| !known.contains(&k.as_str())) {
        return Err(PipelineError::InvalidParameter {
            annotator: step.annotator.clone(),
            parameter: k.clone(),
            message: "unknown parameter".into(),
        });
    }
    match step.annotator.as_str() {
        "syllabify" => {
            let name = param(step, "profile", "french");
            let profile = match SonorityProfile::builtin(name) {
                Some(p) => p,
                None => {
                    let text = std::fs::read_to_string(base_dir.join(name)).map_err(|e| PipelineError::InvalidParameter {
                        annotator: step.annotator.clone(),
                        parameter: "profile".into(),
                        message: format!("{name}: {e}"),
                    })?;
                    SonorityProfile::parse(&text)?
                }
            };
            Ok(Box::new(Syllabifier::new(
                structure,
                param(step, "phones", "phones"),
                param(step, "syllables", "syll"),
                profile,
            )))
        }
        _ => Ok(Box::new(Durations::new(
            param(step, "level", "syll"),
            param(step, "attribute", "durNs"),
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "status", content = "message")]
pub enum StepStatus {
    Ok,
    Failed(String),
    /// Not run because the communication failed in an earlier step.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StepEntry {
    pub step: usize,
    pub annotator: String,
    pub communication_id: String,
    #[serde(flatten)]
    pub status: StepStatus,
    pub elements_written: usize,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunReport {
    pub entries: Vec<StepEntry>,
}

impl RunReport {
    pub fn elements_written(&self) -> usize {
        self.entries.iter().map(|e| e.elements_written).sum()
    }

    pub fn failures(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| matches!(e.status, StepStatus::Failed(_)))
            .count()
    }

    /// The report with timing fields zeroed.
    pub fn without_timings(&self) -> RunReport {
        RunReport {
            entries: self
                .entries
                .iter()
                .map(|e| StepEntry {
                    duration_ms: 0,
                    ..e.clone()
                })
                .collect(),
        }
    }
}

/// Checks that every step's inputs exist before anything runs: required
/// levels must hold data or be produced by an earlier step, and every
/// referenced level and attribute must be declared.
pub fn check_dependencies(store: &Store, annotators: &[Box<dyn Annotator>]) -> Result<(), PipelineError> {
    let structure = store.structure();
    let mut produced: BTreeSet<String> = BTreeSet::new();
    for (step, annotator) in annotators.iter().enumerate() {
        let spec = annotator.spec();
        for u in spec.requires.iter().chain(&spec.produces) {
            let level = structure.level(&u.level).ok_or_else(|| PipelineError::UnknownLevel {
                step,
                annotator: spec.name.clone(),
                level: u.level.clone(),
            })?;
            for a in &u.attributes {
                if level.attribute(a).is_none() {
                    return Err(PipelineError::UnknownAttribute {
                        step,
                        annotator: spec.name.clone(),
                        level: u.level.clone(),
                        attribute: a.clone(),
                    });
                }
            }
        }
        for u in &spec.produces {
            let level = structure.level(&u.level).expect("checked above");
            for a in &u.attributes {
                if spec.name == "durations" && level.attribute(a).is_some_and(|d| d.datatype != DataType::Integer) {
                    return Err(PipelineError::InvalidParameter {
                        annotator: spec.name.clone(),
                        parameter: "attribute".into(),
                        message: format!("{}.{a} is not an Integer attribute", u.level),
                    });
                }
            }
        }
        for u in &spec.requires {
            if !produced.contains(&u.level) && store.count_elements(&u.level, None)? == 0 {
                return Err(PipelineError::DependencyUnsatisfied {
                    step,
                    annotator: spec.name.clone(),
                    level: u.level.clone(),
                });
            }
        }
        produced.extend(spec.produces.iter().map(|u| u.level.clone()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads per step; 0 uses the default pool size.
    pub jobs: usize,
}

/// Runs a pipeline file's steps with built-in annotators.
pub fn run_pipeline(
    store: &mut Store,
    spec: &PipelineSpec,
    base_dir: &Path,
    options: RunOptions,
) -> Result<RunReport, PipelineError> {
    let annotators = spec
        .steps
        .iter()
        .map(|s| build_annotator(s, store.structure(), base_dir))
        .collect::<Result<Vec<_>, _>>()?;
    run_annotators(store, &annotators, &spec.subcorpus, spec.on_error, options)
}

/// Annotator output for one communication and its run time in milliseconds.
type Outcome = (Result<Vec<Tier>, String>, u64);

/// Runs annotators in order over the selected communications. Nothing is
/// written when the dependency check or the sub-corpus filter fails. Under
/// `Abort`, a failing step writes nothing and ends the run with
/// `AnnotatorFailed`; earlier steps stay written.
pub fn run_annotators(
    store: &mut Store,
    annotators: &[Box<dyn Annotator>],
    subcorpus: &[Predicate],
    on_error: OnError,
    options: RunOptions,
) -> Result<RunReport, PipelineError> {
    let communications = store.load_corpus()?.select_subcorpus(subcorpus)?;
    check_dependencies(store, annotators)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs)
        .build()
        .map_err(|e| PipelineError::Workers(e.to_string()))?;

    let mut report = RunReport::default();
    let mut failed: BTreeSet<String> = BTreeSet::new();
    for (step, annotator) in annotators.iter().enumerate() {
        let spec = annotator.spec();
        let mut inputs = Vec::new();
        for comm in &communications {
            if failed.contains(comm) {
                inputs.push(None);
                continue;
            }
            let mut map = Inputs::new();
            for u in &spec.requires {
                map.insert(u.level.clone(), store.load_tiers(&u.level, comm)?);
            }
            inputs.push(Some(map));
        }
        let results: Vec<Option<Outcome>> = pool.install(|| {
            inputs
                .par_iter()
                .map(|input| {
                    input.as_ref().map(|i| {
                        let started = Instant::now();
                        let out = annotator.annotate(i);
                        (out, started.elapsed().as_millis() as u64)
                    })
                })
                .collect()
        });

        if on_error == OnError::Abort {
            if let Some((comm, message)) = communications.iter().zip(&results).find_map(|(c, r)| match r {
                Some((Err(m), _)) => Some((c, m)),
                _ => None,
            }) {
                return Err(PipelineError::AnnotatorFailed {
                    step,
                    annotator: spec.name.clone(),
                    communication: comm.clone(),
                    message: message.clone(),
                });
            }
        }

        for (comm, result) in communications.iter().zip(results) {
            let entry = |status, elements_written, duration_ms| StepEntry {
                step,
                annotator: spec.name.clone(),
                communication_id: comm.clone(),
                status,
                elements_written,
                duration_ms,
            };
            match result {
                None => report.entries.push(entry(StepStatus::Skipped, 0, 0)),
                Some((Err(message), ms)) => {
                    failed.insert(comm.clone());
                    report.entries.push(entry(StepStatus::Failed(message), 0, ms));
                }
                Some((Ok(tiers), ms)) => {
                    let started = Instant::now();
                    let mut written = 0;
                    let mut ordered = tiers;
                    let order: Vec<String> = store
                        .structure()
                        .levels_parent_first()
                        .iter()
                        .map(|l| l.id.clone())
                        .collect();
                    ordered.sort_by_key(|t| order.iter().position(|l| *l == t.key.level_id));
                    for tier in &ordered {
                        written += store.save_tier(tier)?;
                    }
                    let total = ms + started.elapsed().as_millis() as u64;
                    report.entries.push(entry(StepStatus::Ok, written, total));
                }
            }
        }
    }
    Ok(report)
}
