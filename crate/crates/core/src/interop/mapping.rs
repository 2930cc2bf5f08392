//! Tier-to-level mapping files.
//!
//! ```text
//! # one rule per line; the first matching rule wins
//! speaker fixed spk1          # every tier belongs to spk1
//! speaker suffix _            # or: "syll_spk1" is tier "syll" of speaker "spk1"
//! map phones => phones        # tier label -> level label
//! map syll-prom => syll.prom  # tier label -> attribute of a level
//! map tok* => tok-min         # `*` and `?` wildcards
//! ```

use crate::structure::AnnotationStructure;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MappingError {
    #[error("mapping line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("mapping targets unknown level {0:?}")]
    UnknownLevel(String),
    #[error("mapping targets unknown attribute {level}.{attribute}")]
    UnknownAttribute { level: String, attribute: String },
    #[error("tiers {first:?} and {second:?} both map to the labels of {level} for speaker {speaker:?}")]
    DuplicateTarget {
        level: String,
        speaker: String,
        first: String,
        second: String,
    },
    #[error("tier {tier:?} is a {tier_kind} but level {level} holds {level_kind} elements")]
    KindMismatch {
        tier: String,
        tier_kind: &'static str,
        level: String,
        level_kind: &'static str,
    },
    #[error("tier {0:?} has no speaker suffix")]
    MissingSpeaker(String),
    #[error("unknown communication {0:?}")]
    UnknownCommunication(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpeakerRule {
    Fixed(String),
    /// Tier names end with `<separator><speakerID>`; the part before is matched.
    Suffix(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MappingTarget {
    Label { level: String },
    Attribute { level: String, attribute: String },
}

impl MappingTarget {
    pub fn level(&self) -> &str {
        match self {
            MappingTarget::Label { level } | MappingTarget::Attribute { level, .. } => level,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingRule {
    pub pattern: String,
    pub target: MappingTarget,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TierMapping {
    pub speaker: SpeakerRule,
    pub rules: Vec<MappingRule>,
}

/// Glob match with `*` (any run) and `?` (one character).
pub fn glob_match(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = text.chars().collect();
    let (mut pi, mut ti) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && (p[pi] == '?' || p[pi] == t[ti]) {
            pi += 1;
            ti += 1;
        } else if pi < p.len() && p[pi] == '*' {
            star = Some((pi, ti));
            pi += 1;
        } else if let Some((sp, st)) = star {
            pi = sp + 1;
            ti = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == '*')
}

impl TierMapping {
    /// Every level's label from the tier of the same name.
    pub fn identity(structure: &AnnotationStructure, speaker: &str) -> TierMapping {
        TierMapping {
            speaker: SpeakerRule::Fixed(speaker.to_string()),
            rules: structure
                .levels
                .iter()
                .map(|l| MappingRule {
                    pattern: l.id.clone(),
                    target: MappingTarget::Label { level: l.id.clone() },
                })
                .collect(),
        }
    }

    /// Parses a mapping file. Without a `speaker` line the speaker is
    /// `default_speaker`.
    pub fn parse(text: &str, default_speaker: &str) -> Result<TierMapping, MappingError> {
        let mut speaker = None;
        let mut rules = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let syntax = |message: &str| MappingError::Syntax {
                line,
                message: message.to_string(),
            };
            let (keyword, rest) = content.split_once(char::is_whitespace).unwrap_or((content, ""));
            let rest = rest.trim();
            match keyword {
                "speaker" => {
                    if speaker.is_some() {
                        return Err(syntax("speaker rule given twice"));
                    }
                    let (mode, arg) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
                    let arg = arg.trim();
                    if arg.is_empty() {
                        return Err(syntax("expected `speaker fixed ID` or `speaker suffix SEPARATOR`"));
                    }
                    speaker = Some(match mode {
                        "fixed" => SpeakerRule::Fixed(arg.to_string()),
                        "suffix" => SpeakerRule::Suffix(arg.to_string()),
                        _ => return Err(syntax("speaker mode must be `fixed` or `suffix`")),
                    });
                }
                "map" => {
                    let (pattern, target) = rest
                        .split_once("=>")
                        .ok_or_else(|| syntax("expected `map PATTERN => LEVEL[.ATTRIBUTE]`"))?;
                    let (pattern, target) = (pattern.trim(), target.trim());
                    if pattern.is_empty() || target.is_empty() || target.contains(char::is_whitespace) {
                        return Err(syntax("expected `map PATTERN => LEVEL[.ATTRIBUTE]`"));
                    }
                    let target = match target.split_once('.') {
                        Some((level, attribute)) if !level.is_empty() && !attribute.is_empty() => {
                            MappingTarget::Attribute {
                                level: level.to_string(),
                                attribute: attribute.to_string(),
                            }
                        }
                        Some(_) => return Err(syntax("empty level or attribute in target")),
                        None => MappingTarget::Label {
                            level: target.to_string(),
                        },
                    };
                    rules.push(MappingRule {
                        pattern: pattern.to_string(),
                        target,
                    });
                }
                _ => return Err(syntax(&format!("unknown keyword {keyword:?}"))),
            }
        }
        Ok(TierMapping {
            speaker: speaker.unwrap_or_else(|| SpeakerRule::Fixed(default_speaker.to_string())),
            rules,
        })
    }

    /// Checks every target against the structure.
    pub fn validate(&self, structure: &AnnotationStructure) -> Result<(), MappingError> {
        for rule in &self.rules {
            let level = structure
                .level(rule.target.level())
                .ok_or_else(|| MappingError::UnknownLevel(rule.target.level().to_string()))?;
            if let MappingTarget::Attribute { level: l, attribute } = &rule.target {
                if level.attribute(attribute).is_none() {
                    return Err(MappingError::UnknownAttribute {
                        level: l.clone(),
                        attribute: attribute.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Speaker and target for a tier name, or `None` when no rule matches.
    pub fn resolve(&self, tier_name: &str) -> Result<Option<(String, &MappingTarget)>, MappingError> {
        let (base, speaker) = match &self.speaker {
            SpeakerRule::Fixed(id) => (tier_name, id.clone()),
            SpeakerRule::Suffix(sep) => match tier_name.rsplit_once(sep.as_str()) {
                Some((base, speaker)) if !base.is_empty() && !speaker.is_empty() => (base, speaker.to_string()),
                _ => {
                    return if self.rules.iter().any(|r| glob_match(&r.pattern, tier_name)) {
                        Err(MappingError::MissingSpeaker(tier_name.to_string()))
                    } else {
                        Ok(None)
                    }
                }
            },
        };
        Ok(self
            .rules
            .iter()
            .find(|r| glob_match(&r.pattern, base))
            .map(|r| (speaker, &r.target)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::{AnnotationAttributeDef, AnnotationLevelDef};
    use crate::value::DataType;

    #[test]
    fn globbing() {
        assert!(glob_match("tok*", "tok-min"));
        assert!(glob_match("*", ""));
        assert!(glob_match("s?ll", "syll"));
        assert!(!glob_match("syll", "syll-prom"));
        assert!(glob_match("*-prom", "syll-prom"));
        assert!(!glob_match("a*b", "acbd"));
    }

    #[test]
    fn parse_and_resolve() {
        let text = "# comment\nspeaker suffix _\nmap syll-prom => syll.prom\nmap * => phones # fallback\n";
        let m = TierMapping::parse(text, "x").unwrap();
        assert_eq!(m.speaker, SpeakerRule::Suffix("_".into()));
        let (speaker, target) = m.resolve("syll-prom_spk2").unwrap().unwrap();
        assert_eq!(speaker, "spk2");
        assert_eq!(
            target,
            &MappingTarget::Attribute {
                level: "syll".into(),
                attribute: "prom".into()
            }
        );
        assert!(matches!(m.resolve("nosuffix"), Err(MappingError::MissingSpeaker(_))));
    }

    #[test]
    fn syntax_errors_carry_lines() {
        assert_eq!(
            TierMapping::parse("map a => b\nmap c d\n", "s").unwrap_err(),
            MappingError::Syntax {
                line: 2,
                message: "expected `map PATTERN => LEVEL[.ATTRIBUTE]`".into()
            }
        );
        assert!(TierMapping::parse("speaker loud x", "s").is_err());
        assert!(TierMapping::parse("frobnicate", "s").is_err());
    }

    #[test]
    fn validation_against_structure() {
        let mut s = AnnotationStructure::new();
        s.add_level(
            AnnotationLevelDef::interval("syll").with_attribute(AnnotationAttributeDef::new("prom", DataType::Text)),
        )
        .unwrap();
        TierMapping::parse("map x => syll.prom", "s").unwrap().validate(&s).unwrap();
        assert_eq!(
            TierMapping::parse("map x => words", "s").unwrap().validate(&s),
            Err(MappingError::UnknownLevel("words".into()))
        );
        assert!(matches!(
            TierMapping::parse("map x => syll.nope", "s").unwrap().validate(&s),
            Err(MappingError::UnknownAttribute { .. })
        ));
    }
}
