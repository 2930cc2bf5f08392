//! Deterministic synthetic corpora for the benchmarks.

use std::path::Path;

use praaline_core::interop::{TextGridItem, TextGridTier, TierKind};
use praaline_core::model::{Communication, Speaker};
use praaline_core::{
    AnnotationAttributeDef, AnnotationElement, AnnotationLevelDef, AnnotationStructure, DataType, Entity,
    LevelRelation, Store, TextGridDoc, Tier, TierKey, Time, Value,
};

const WORDS: [(&str, &[&[&str]]); 6] = [
    ("que", &[&["k", "@"]]),
    ("les", &[&["l", "e"]]),
    ("gens", &[&["Z", "a~"]]),
    ("parlent", &[&["p", "a", "R"], &["l", "@"]]),
    ("vite", &[&["v", "i", "t"]]),
    ("maintenant", &[&["m", "e~"], &["t", "@"], &["n", "a~"]]),
];

const PHONE_NS: i64 = 70_000_000;

pub fn structure() -> AnnotationStructure {
    let mut s = AnnotationStructure::default();
    s.add_level(AnnotationLevelDef::interval("tok")).unwrap();
    s.add_level(
        AnnotationLevelDef::interval("syll")
            .with_attribute(AnnotationAttributeDef::new("durNs", DataType::Integer))
            .with_attribute(AnnotationAttributeDef::new("prom", DataType::Text).with_vocabulary(["P", "0"])),
    )
    .unwrap();
    s.add_level(AnnotationLevelDef::interval("phones")).unwrap();
    s.add_relation(LevelRelation::hierarchy("tok", "syll")).unwrap();
    s.add_relation(LevelRelation::hierarchy("syll", "phones")).unwrap();
    s
}

/// Token, syllable and phone tiers of `tokens` consecutive words.
pub fn tiers(comm: &str, speaker: &str, tokens: usize) -> [Tier; 3] {
    let (mut tok, mut syll, mut phones) = (Vec::new(), Vec::new(), Vec::new());
    let mut t = 0;
    for i in 0..tokens {
        let (word, syllables) = WORDS[i % WORDS.len()];
        let tok_start = t;
        for s in syllables.iter() {
            let syll_start = t;
            for p in s.iter() {
                phones.push(AnnotationElement::interval(phones.len() as i64 + 1, Time::from_ns(t), Time::from_ns(t + PHONE_NS), p).with_parent(Some(syll.len() as i64 + 1)));
                t += PHONE_NS;
            }
            let prom = if (i + syll.len()) % 3 == 0 { "P" } else { "0" };
            syll.push(
                AnnotationElement::interval(syll.len() as i64 + 1, Time::from_ns(syll_start), Time::from_ns(t), &s.concat())
                    .with_attribute("prom", Some(Value::Text(prom.into())))
                    .with_parent(Some(tok.len() as i64 + 1)),
            );
        }
        tok.push(AnnotationElement::interval(tok.len() as i64 + 1, Time::from_ns(tok_start), Time::from_ns(t), word));
    }
    [
        Tier::new(TierKey::new(comm, speaker, "tok"), tok),
        Tier::new(TierKey::new(comm, speaker, "syll"), syll),
        Tier::new(TierKey::new(comm, speaker, "phones"), phones),
    ]
}

/// A store with `communications` communications of `tokens` words each.
pub fn store(path: &Path, communications: usize, tokens: usize) -> Store {
    let mut store = Store::create(path, &structure()).unwrap();
    store
        .upsert_entity(Entity::Speaker(Speaker {
            id: "spk".into(),
            ..Default::default()
        }))
        .unwrap();
    for c in 0..communications {
        let id = format!("c{c:03}");
        store
            .upsert_entity(Entity::Communication(Communication {
                id: id.clone(),
                ..Default::default()
            }))
            .unwrap();
        for tier in tiers(&id, "spk", tokens) {
            store.save_tier(&tier).unwrap();
        }
    }
    store
}

/// The tiers of [`tiers`] as a TextGrid.
pub fn textgrid(tokens: usize) -> TextGridDoc {
    let tiers = tiers("c", "s", tokens);
    let xmax = tiers[0].elements().last().map_or(Time::from_ns(1), |e| e.t_max);
    TextGridDoc {
        xmin: Time::ZERO,
        xmax,
        tiers: tiers
            .iter()
            .map(|t| TextGridTier {
                name: t.key.level_id.clone(),
                kind: TierKind::IntervalTier,
                xmin: Time::ZERO,
                xmax,
                items: t.elements().iter().map(|e| TextGridItem::new(e.t_min, e.t_max, &e.label)).collect(),
            })
            .collect(),
    }
}
