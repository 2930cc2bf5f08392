//! Sonority profiles and the rule-based syllabifier.
//!
//! Profile files are line based. Lines starting with `#` are comments; `#`
//! elsewhere is an ordinary label.
//!
//! ```text
//! # override a class rank
//! rank liquid 3
//! # phone labels of a class
//! class stop p b t d k g
//! # syllable nuclei (default: every vowel)
//! nucleus a e i
//! # allowed onset clusters (optional)
//! onset pl pR tR
//! # labels that separate syllabification runs
//! pause _ #
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::model::{AnnotationElement, Tier};

const FRENCH: &str = include_str!("../../profiles/french.txt");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProfileError {
    #[error("profile line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("nucleus {0:?} is not classified as a vowel")]
    NucleusNotVowel(String),
    #[error("classes {0} and {1} share sonority rank {2}")]
    RankCollision(PhoneClass, PhoneClass, i32),
    #[error("phone {label:?} is listed in both {first} and {second}")]
    DuplicatePhone {
        label: String,
        first: PhoneClass,
        second: PhoneClass,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SyllabifyError {
    #[error("phone {label:?} at {t_min} has no sonority class")]
    UnclassifiedPhone { label: String, t_min: String },
    #[error("phones starting at {t_min} contain consonants but no nucleus")]
    NoNucleus { t_min: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PhoneClass {
    Vowel,
    Glide,
    Liquid,
    Nasal,
    Fricative,
    /// Stops and affricates.
    Stop,
}

impl PhoneClass {
    pub const ALL: [PhoneClass; 6] = [
        PhoneClass::Vowel,
        PhoneClass::Glide,
        PhoneClass::Liquid,
        PhoneClass::Nasal,
        PhoneClass::Fricative,
        PhoneClass::Stop,
    ];

    pub fn default_rank(self) -> i32 {
        match self {
            PhoneClass::Vowel => 5,
            PhoneClass::Glide => 4,
            PhoneClass::Liquid => 3,
            PhoneClass::Nasal => 2,
            PhoneClass::Fricative => 1,
            PhoneClass::Stop => 0,
        }
    }

    pub fn from_token(token: &str) -> Option<PhoneClass> {
        Some(match token.to_ascii_lowercase().as_str() {
            "vowel" => PhoneClass::Vowel,
            "glide" => PhoneClass::Glide,
            "liquid" => PhoneClass::Liquid,
            "nasal" => PhoneClass::Nasal,
            "fricative" => PhoneClass::Fricative,
            "stop" | "affricate" => PhoneClass::Stop,
            _ => return None,
        })
    }
}

impl fmt::Display for PhoneClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhoneClass::Vowel => "vowel",
            PhoneClass::Glide => "glide",
            PhoneClass::Liquid => "liquid",
            PhoneClass::Nasal => "nasal",
            PhoneClass::Fricative => "fricative",
            PhoneClass::Stop => "stop",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SonorityProfile {
    pub ranks: BTreeMap<PhoneClass, i32>,
    pub phone_classes: BTreeMap<String, PhoneClass>,
    pub nuclei: BTreeSet<String>,
    /// When present, onsets of two or more consonants must be listed here.
    pub onset_whitelist: Option<BTreeSet<String>>,
    pub pauses: BTreeSet<String>,
}

impl SonorityProfile {
    /// Profile from explicit classes; nuclei default to all vowels.
    pub fn new(phone_classes: BTreeMap<String, PhoneClass>) -> SonorityProfile {
        let nuclei = phone_classes
            .iter()
            .filter(|(_, c)| **c == PhoneClass::Vowel)
            .map(|(l, _)| l.clone())
            .collect();
        SonorityProfile {
            ranks: PhoneClass::ALL.iter().map(|c| (*c, c.default_rank())).collect(),
            phone_classes,
            nuclei,
            onset_whitelist: None,
            pauses: BTreeSet::new(),
        }
    }

    pub fn french() -> SonorityProfile {
        SonorityProfile::parse(FRENCH).expect("built-in profile is valid")
    }

    /// Built-in profile by name.
    pub fn builtin(name: &str) -> Option<SonorityProfile> {
        match name {
            "french" | "fr" => Some(Self::french()),
            _ => None,
        }
    }

    pub fn parse(text: &str) -> Result<SonorityProfile, ProfileError> {
        let mut profile = SonorityProfile::new(BTreeMap::new());
        let mut nuclei: Option<BTreeSet<String>> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim_start().starts_with('#') {
                continue;
            }
            let mut words = raw.split_whitespace();
            let Some(keyword) = words.next() else { continue };
            let rest: Vec<&str> = words.collect();
            let syntax = |message: String| ProfileError::Syntax { line, message };
            match keyword {
                "class" => {
                    let (name, labels) = rest.split_first().ok_or_else(|| syntax("expected `class NAME LABEL...`".into()))?;
                    let class = PhoneClass::from_token(name).ok_or_else(|| syntax(format!("unknown class {name:?}")))?;
                    for label in labels {
                        if let Some(first) = profile.phone_classes.insert(label.to_string(), class) {
                            if first != class {
                                return Err(ProfileError::DuplicatePhone {
                                    label: label.to_string(),
                                    first,
                                    second: class,
                                });
                            }
                        }
                    }
                }
                "rank" => {
                    let [name, value] = rest[..] else {
                        return Err(syntax("expected `rank CLASS INTEGER`".into()));
                    };
                    let class = PhoneClass::from_token(name).ok_or_else(|| syntax(format!("unknown class {name:?}")))?;
                    let value = value.parse().map_err(|_| syntax(format!("rank {value:?} is not an integer")))?;
                    profile.ranks.insert(class, value);
                }
                "nucleus" | "nuclei" => nuclei.get_or_insert_with(BTreeSet::new).extend(rest.iter().map(|s| s.to_string())),
                "onset" | "onsets" => profile
                    .onset_whitelist
                    .get_or_insert_with(BTreeSet::new)
                    .extend(rest.iter().map(|s| s.to_string())),
                "pause" | "pauses" => profile.pauses.extend(rest.iter().map(|s| s.to_string())),
                other => return Err(syntax(format!("unknown keyword {other:?}"))),
            }
        }
        profile.nuclei = nuclei.unwrap_or_else(|| {
            profile
                .phone_classes
                .iter()
                .filter(|(_, c)| **c == PhoneClass::Vowel)
                .map(|(l, _)| l.clone())
                .collect()
        });
        profile.validate()?;
        Ok(profile)
    }

    /// Nuclei must be vowels and used classes must have distinct ranks.
    pub fn validate(&self) -> Result<(), ProfileError> {
        if let Some(n) = self
            .nuclei
            .iter()
            .find(|n| self.phone_classes.get(*n) != Some(&PhoneClass::Vowel))
        {
            return Err(ProfileError::NucleusNotVowel(n.clone()));
        }
        let used: BTreeSet<PhoneClass> = self.phone_classes.values().copied().collect();
        let mut seen: BTreeMap<i32, PhoneClass> = BTreeMap::new();
        for class in used {
            let rank = self.rank(class);
            if let Some(other) = seen.insert(rank, class) {
                return Err(ProfileError::RankCollision(other, class, rank));
            }
        }
        Ok(())
    }

    pub fn rank(&self, class: PhoneClass) -> i32 {
        self.ranks.get(&class).copied().unwrap_or(class.default_rank())
    }

    pub fn sonority(&self, label: &str) -> Option<i32> {
        self.phone_classes.get(label).map(|c| self.rank(*c))
    }

    pub fn is_nucleus(&self, label: &str) -> bool {
        self.nuclei.contains(label)
    }

    /// Whether the consonant labels form a legal onset. Empty and
    /// single-consonant onsets are always legal; longer ones must be on the
    /// whitelist when there is one, otherwise rise strictly in sonority.
    pub fn is_legal_onset(&self, cluster: &[&str]) -> bool {
        if cluster.len() <= 1 {
            return true;
        }
        match &self.onset_whitelist {
            Some(list) => list.contains(&cluster.concat()),
            None => cluster
                .windows(2)
                .all(|w| matches!((self.sonority(w[0]), self.sonority(w[1])), (Some(a), Some(b)) if a < b)),
        }
    }

    /// Number of consonants of an inter-nucleus cluster that go to the onset
    /// of the following syllable: the longest legal suffix.
    pub fn onset_length(&self, cluster: &[&str]) -> usize {
        (0..=cluster.len())
            .rev()
            .find(|&n| self.is_legal_onset(&cluster[cluster.len() - n..]))
            .unwrap_or(0)
    }

    /// Splits a run of phone labels (no pauses) into syllables, returned as
    /// index ranges.
    pub fn split(&self, labels: &[&str]) -> Result<Vec<std::ops::Range<usize>>, usize> {
        let nuclei: Vec<usize> = (0..labels.len()).filter(|&i| self.is_nucleus(labels[i])).collect();
        if nuclei.is_empty() {
            return if labels.is_empty() { Ok(Vec::new()) } else { Err(0) };
        }
        let mut starts = vec![0];
        for pair in nuclei.windows(2) {
            let cluster = &labels[pair[0] + 1..pair[1]];
            starts.push(pair[1] - self.onset_length(cluster));
        }
        let mut out = Vec::with_capacity(starts.len());
        for (i, &s) in starts.iter().enumerate() {
            let end = starts.get(i + 1).copied().unwrap_or(labels.len());
            out.push(s..end);
        }
        Ok(out)
    }
}

/// Syllable tier built from a phone tier, and the phone tier with each phone
/// linked to its syllable.
#[derive(Debug, Clone, PartialEq)]
pub struct Syllabification {
    pub syllables: Tier,
    pub phones: Tier,
}

/// Groups phones into syllables. Pause phones split the input into
/// independent runs and are left without a syllable.
pub fn syllabify(phones: &Tier, syllable_level: &str, profile: &SonorityProfile) -> Result<Syllabification, SyllabifyError> {
    let elements = phones.elements();
    for e in elements {
        let label = e.label.trim();
        if !profile.pauses.contains(label) && !label.is_empty() && profile.sonority(label).is_none() {
            return Err(SyllabifyError::UnclassifiedPhone {
                label: e.label.clone(),
                t_min: e.t_min.to_string(),
            });
        }
    }
    let is_pause = |e: &AnnotationElement| {
        let label = e.label.trim();
        label.is_empty() || profile.pauses.contains(label)
    };

    let mut syllables = Vec::new();
    let mut parents: Vec<Option<i64>> = vec![None; elements.len()];
    let mut i = 0;
    while i < elements.len() {
        if is_pause(&elements[i]) {
            i += 1;
            continue;
        }
        let start = i;
        while i < elements.len() && !is_pause(&elements[i]) {
            i += 1;
        }
        let run = &elements[start..i];
        let labels: Vec<&str> = run.iter().map(|e| e.label.trim()).collect();
        let ranges = profile.split(&labels).map_err(|_| SyllabifyError::NoNucleus {
            t_min: run[0].t_min.to_string(),
        })?;
        for range in ranges {
            let id = syllables.len() as i64 + 1;
            let first = &run[range.start];
            let last = &run[range.end - 1];
            syllables.push(AnnotationElement::interval(id, first.t_min, last.t_max, &labels[range.clone()].concat()));
            for p in &mut parents[start + range.start..start + range.end] {
                *p = Some(id);
            }
        }
    }
    let linked = elements
        .iter()
        .zip(parents)
        .map(|(e, p)| e.clone().with_parent(p))
        .collect();
    Ok(Syllabification {
        syllables: Tier::new(phones.key.with_level(syllable_level), syllables),
        phones: Tier::new(phones.key.clone(), linked),
    })
}
