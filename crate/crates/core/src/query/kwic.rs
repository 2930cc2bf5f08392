//! Keyword-in-context search over one level.

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::QueryError;
use crate::model::Predicate;
use crate::store::Store;
use crate::time::Time;

pub const DEFAULT_CONTEXT: usize = 7;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Pattern {
    /// Whole-value equality.
    Exact(String),
    /// Unanchored regular expression search.
    Regex(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConcordanceSpec {
    pub level: String,
    /// Attribute to search; the label when `None`.
    #[serde(default)]
    pub attribute: Option<String>,
    pub pattern: Pattern,
    #[serde(default = "default_context")]
    pub context: usize,
    #[serde(default)]
    pub subcorpus: Vec<Predicate>,
}

fn default_context() -> usize {
    DEFAULT_CONTEXT
}

impl ConcordanceSpec {
    pub fn new(level: &str, pattern: Pattern) -> Self {
        ConcordanceSpec {
            level: level.to_string(),
            attribute: None,
            pattern,
            context: DEFAULT_CONTEXT,
            subcorpus: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConcordanceHit {
    pub communication_id: String,
    pub speaker_id: String,
    pub element_id: i64,
    pub t_min: Time,
    #[serde(rename = "match")]
    pub matched: String,
    pub left: Vec<String>,
    pub right: Vec<String>,
}

impl ConcordanceHit {
    /// `left <match> right`, space separated.
    pub fn line(&self) -> String {
        let mut parts: Vec<String> = self.left.clone();
        parts.push(format!("<{}>", self.matched));
        parts.extend(self.right.iter().cloned());
        parts.join(" ")
    }
}

enum Matcher {
    Exact(String),
    Regex(Regex),
}

impl Matcher {
    fn matches(&self, value: &str) -> bool {
        match self {
            Matcher::Exact(s) => s == value,
            Matcher::Regex(r) => r.is_match(value),
        }
    }
}

/// Every element whose value matches, with up to `context` values of the
/// same tier on each side. Null attribute values read as empty strings.
/// Hits are ordered by communication, time, element id and speaker.
pub fn concordance(store: &Store, spec: &ConcordanceSpec) -> Result<Vec<ConcordanceHit>, QueryError> {
    let level = store
        .structure()
        .level(&spec.level)
        .ok_or_else(|| QueryError::UnknownLevel(spec.level.clone()))?;
    if let Some(a) = &spec.attribute {
        if level.attribute(a).is_none() {
            return Err(QueryError::UnknownField {
                level: spec.level.clone(),
                field: a.clone(),
            });
        }
    }
    let matcher = match &spec.pattern {
        Pattern::Exact(s) => Matcher::Exact(s.clone()),
        Pattern::Regex(r) => Matcher::Regex(Regex::new(r).map_err(|e| QueryError::InvalidPattern(e.to_string()))?),
    };
    let communications = store.load_corpus()?.select_subcorpus(&spec.subcorpus)?;
    let mut hits = Vec::new();
    for comm in &communications {
        for tier in store.load_tiers(&spec.level, comm)? {
            let values: Vec<String> = tier
                .elements()
                .iter()
                .map(|e| match &spec.attribute {
                    None => e.label.clone(),
                    Some(a) => e.attribute(a).map(|v| v.to_string()).unwrap_or_default(),
                })
                .collect();
            for (i, e) in tier.elements().iter().enumerate() {
                if !matcher.matches(&values[i]) {
                    continue;
                }
                let lo = i.saturating_sub(spec.context);
                let hi = (i + 1 + spec.context).min(values.len());
                hits.push(ConcordanceHit {
                    communication_id: comm.clone(),
                    speaker_id: tier.key.speaker_id.clone(),
                    element_id: e.id,
                    t_min: e.t_min,
                    matched: values[i].clone(),
                    left: values[lo..i].to_vec(),
                    right: values[i + 1..hi].to_vec(),
                });
            }
        }
    }
    hits.sort_by(|a, b| {
        (&a.communication_id, a.t_min, a.element_id, &a.speaker_id).cmp(&(&b.communication_id, b.t_min, b.element_id, &b.speaker_id))
    });
    Ok(hits)
}
