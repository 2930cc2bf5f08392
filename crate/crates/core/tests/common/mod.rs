//! Shared corpus generators and brute-force reference implementations.
#![allow(dead_code)]

pub mod oracles;

use std::path::{Path, PathBuf};

use praaline_core::model::{Communication, Participation, Speaker};
use praaline_core::structure::read_structure;
use praaline_core::{
    AnnotationAttributeDef, AnnotationElement, AnnotationLevelDef, AnnotationStructure, DataType, Entity,
    LevelKind, LevelRelation, MetadataAttribute, MetadataObject, RelationKind, Store, Tier, TierKey, TierMapping,
    Time, Value,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn ms(v: i64) -> Time {
    Time::from_ms(v)
}

/// Corpus with the Figure 2 extract imported as communication `fig2`,
/// speaker `spk1`.
pub fn figure2_store(dir: &Path) -> Store {
    let structure = read_structure(&std::fs::read(fixture("figure2.xml")).unwrap()).unwrap();
    let mut store = Store::create(dir.join("fig2.corpus"), &structure).unwrap();
    add_owner(&mut store, "fig2", "spk1");
    let doc = praaline_core::parse_textgrid(&std::fs::read(fixture("figure2.TextGrid")).unwrap()).unwrap();
    let mapping = TierMapping::identity(&structure, "spk1");
    praaline_core::import_textgrid(&mut store, "fig2", &mapping, &doc).unwrap();
    store
}

pub fn add_owner(store: &mut Store, comm: &str, speaker: &str) {
    store
        .upsert_entity(Entity::Communication(Communication {
            id: comm.into(),
            ..Default::default()
        }))
        .unwrap();
    store
        .upsert_entity(Entity::Speaker(Speaker {
            id: speaker.into(),
            ..Default::default()
        }))
        .unwrap();
}

/// Phrases, tokens, syllables, phones and tones with every relation kind.
pub fn prosody_structure() -> AnnotationStructure {
    let mut s = AnnotationStructure::new();
    s.add_level(AnnotationLevelDef::interval("ip")).unwrap();
    s.add_level(
        AnnotationLevelDef::interval("tok")
            .with_attribute(AnnotationAttributeDef::new("pos", DataType::Text).with_vocabulary(["NOM", "VER", "DET", "PRO"])),
    )
    .unwrap();
    s.add_level(
        AnnotationLevelDef::interval("syll")
            .with_attribute(AnnotationAttributeDef::new("durNs", DataType::Integer))
            .with_attribute(AnnotationAttributeDef::new("prom", DataType::Text).with_vocabulary(["P", "0"]))
            .with_attribute(AnnotationAttributeDef::new("f0", DataType::Real)),
    )
    .unwrap();
    s.add_level(AnnotationLevelDef::interval("phones")).unwrap();
    s.add_level(AnnotationLevelDef::point("tones")).unwrap();
    s.add_relation(LevelRelation::new(RelationKind::Containment, "ip", "tok")).unwrap();
    s.add_relation(LevelRelation::hierarchy("tok", "syll")).unwrap();
    s.add_relation(LevelRelation::hierarchy("syll", "phones")).unwrap();
    s.add_relation(LevelRelation::new(RelationKind::Attachment, "syll", "tones")).unwrap();
    s.add_metadata(MetadataAttribute::new(MetadataObject::Communication, "genre", DataType::Text))
        .unwrap();
    s.add_metadata(MetadataAttribute::new(MetadataObject::Speaker, "gender", DataType::Text))
        .unwrap();
    s.add_metadata(MetadataAttribute::new(MetadataObject::Speaker, "age", DataType::Integer))
        .unwrap();
    s
}

pub const WORDS: [&str; 12] = [
    "que", "les", "vingt", "cinq", "mille", "par", "exemple", "il", "faut", "savoir", "euh", "de",
];
const PHONES: [&str; 10] = ["p", "t", "k", "s", "l", "m", "a", "e", "i", "@"];

/// Tiers of one speaker: consistent phrases, tokens, syllables, phones and
/// tones, with random attribute values.
pub fn random_speaker_tiers(rng: &mut ChaCha8Rng, comm: &str, speaker: &str, max_tokens: usize) -> Vec<Tier> {
    let key = TierKey::new(comm, speaker, "tok");
    let (mut ip, mut tok, mut syll, mut phones, mut tones) = (vec![], vec![], vec![], vec![], vec![]);
    let mut t = rng.gen_range(0..50);
    let n_tok = rng.gen_range(1..=max_tokens);
    let mut ip_start: Option<i64> = None;
    let mut ip_left = 0;
    for _ in 0..n_tok {
        if rng.gen_bool(0.3) {
            if let Some(s) = ip_start.take() {
                let id = ip.len() as i64 + 1;
                ip.push(AnnotationElement::interval(id, ms(s), ms(t), "ip"));
            }
            t += rng.gen_range(10..100);
        }
        if ip_start.is_none() || ip_left == 0 {
            if let Some(s) = ip_start.take() {
                let id = ip.len() as i64 + 1;
                ip.push(AnnotationElement::interval(id, ms(s), ms(t), "ip"));
            }
            ip_start = Some(t);
            ip_left = rng.gen_range(1..=4);
        }
        ip_left -= 1;
        let tok_id = tok.len() as i64 + 1;
        let tok_start = t;
        for _ in 0..rng.gen_range(1..=3) {
            let syll_id = syll.len() as i64 + 1;
            let syll_start = t;
            let mut label = String::new();
            for _ in 0..rng.gen_range(1..=4) {
                let d = rng.gen_range(20..120);
                let p = PHONES.choose(rng).unwrap();
                label.push_str(p);
                phones.push(AnnotationElement::interval(phones.len() as i64 + 1, ms(t), ms(t + d), p).with_parent(Some(syll_id)));
                t += d;
            }
            let mut e = AnnotationElement::interval(syll_id, ms(syll_start), ms(t), &label).with_parent(Some(tok_id));
            if rng.gen_bool(0.9) {
                e = e.with_attribute("durNs", Some(Value::Integer((t - syll_start) * 1_000_000)));
            }
            if rng.gen_bool(0.8) {
                e = e.with_attribute("prom", Some(Value::Text(["P", "0"].choose(rng).unwrap().to_string())));
            }
            if rng.gen_bool(0.85) {
                e = e.with_attribute("f0", Some(Value::Real(rng.gen_range(80.0..300.0))));
            }
            syll.push(e);
            if rng.gen_bool(0.4) {
                let at = if rng.gen_bool(0.5) { syll_start } else { t };
                if tones.iter().all(|p: &AnnotationElement| p.t_min != ms(at)) {
                    tones.push(AnnotationElement::point(tones.len() as i64 + 1, ms(at), ["H", "L"].choose(rng).unwrap()));
                }
            }
        }
        let mut e = AnnotationElement::interval(tok_id, ms(tok_start), ms(t), WORDS.choose(rng).unwrap());
        if rng.gen_bool(0.8) {
            e = e.with_attribute("pos", Some(Value::Text(["NOM", "VER", "DET", "PRO"].choose(rng).unwrap().to_string())));
        }
        tok.push(e);
    }
    if let Some(s) = ip_start {
        ip.push(AnnotationElement::interval(ip.len() as i64 + 1, ms(s), ms(t), "ip"));
    }
    vec![
        Tier::new(key.with_level("ip"), ip),
        Tier::new(key.clone(), tok),
        Tier::new(key.with_level("syll"), syll),
        Tier::new(key.with_level("phones"), phones),
        Tier::new(key.with_level("tones"), tones),
    ]
}

/// A corpus of 1 to `max_comms` communications with one or two speakers each.
pub fn random_corpus(rng: &mut ChaCha8Rng, path: &Path, max_comms: usize, max_tokens: usize) -> Store {
    let mut store = Store::create(path, &prosody_structure()).unwrap();
    for i in 1..=4 {
        let mut sp = Speaker {
            id: format!("spk{i}"),
            ..Default::default()
        };
        sp.metadata
            .insert("gender".into(), Value::Text(["F", "M"].choose(rng).unwrap().to_string()));
        if rng.gen_bool(0.9) {
            sp.metadata.insert("age".into(), Value::Integer(rng.gen_range(20..70)));
        }
        store.upsert_entity(Entity::Speaker(sp)).unwrap();
    }
    for c in 1..=rng.gen_range(1..=max_comms) {
        let comm = format!("c{c:02}");
        let mut entity = Communication {
            id: comm.clone(),
            ..Default::default()
        };
        entity
            .metadata
            .insert("genre".into(), Value::Text(["interview", "news"].choose(rng).unwrap().to_string()));
        store.upsert_entity(Entity::Communication(entity)).unwrap();
        let mut speakers = ["spk1", "spk2", "spk3", "spk4"];
        speakers.shuffle(rng);
        for speaker in &speakers[..rng.gen_range(1..=2)] {
            store
                .upsert_entity(Entity::Participation(Participation {
                    communication_id: comm.clone(),
                    speaker_id: speaker.to_string(),
                    role: "speaker".into(),
                    metadata: Default::default(),
                }))
                .unwrap();
            for tier in random_speaker_tiers(rng, &comm, speaker, max_tokens) {
                store.save_tier(&tier).unwrap();
            }
        }
    }
    store
}

fn random_id(rng: &mut ChaCha8Rng, dash: bool) -> String {
    let first = (b'a' + rng.gen_range(0..26)) as char;
    let mut s = first.to_string();
    for _ in 0..rng.gen_range(0..8) {
        let c = match rng.gen_range(0..10) {
            0 => '_',
            1 if dash => '-',
            2 => (b'0' + rng.gen_range(0..10)) as char,
            3 if !dash => (b'A' + rng.gen_range(0..26)) as char,
            _ => (b'a' + rng.gen_range(0..26)) as char,
        };
        s.push(c);
    }
    s
}

const DATATYPES: [DataType; 4] = [DataType::Text, DataType::Integer, DataType::Real, DataType::Boolean];

/// A valid structure with random levels, attributes, relations and metadata.
pub fn random_structure(rng: &mut ChaCha8Rng) -> AnnotationStructure {
    let mut s = AnnotationStructure::new();
    for _ in 0..rng.gen_range(0..=6) {
        let kind = if rng.gen_bool(0.75) { LevelKind::Interval } else { LevelKind::Point };
        let mut level = AnnotationLevelDef::new(&random_id(rng, true), kind);
        for _ in 0..rng.gen_range(0..=4) {
            let datatype = *DATATYPES.choose(rng).unwrap();
            let mut a = AnnotationAttributeDef::new(&random_id(rng, false), datatype);
            if rng.gen_bool(0.3) {
                a = a.required();
            }
            if datatype == DataType::Text && rng.gen_bool(0.3) {
                a = a.with_vocabulary((0..rng.gen_range(1..4)).map(|i| format!("v{i}")));
            }
            if level.attribute(&a.id).is_none() && !praaline_core::structure::is_reserved_level_column(&a.id) {
                level = level.with_attribute(a);
            }
        }
        let _ = s.add_level(level);
    }
    let ids: Vec<String> = s.levels.iter().map(|l| l.id.clone()).collect();
    if ids.len() >= 2 {
        for _ in 0..rng.gen_range(0..ids.len() * 2) {
            let kind = *RelationKind::ALL.choose(rng).unwrap();
            let parent = ids.choose(rng).unwrap();
            let child = ids.choose(rng).unwrap();
            let _ = s.add_relation(LevelRelation::new(kind, parent, child));
        }
    }
    for _ in 0..rng.gen_range(0..=5) {
        let object = *MetadataObject::ALL.choose(rng).unwrap();
        let datatype = *[DataType::Text, DataType::Integer, DataType::Real, DataType::Boolean, DataType::DateTime]
            .choose(rng)
            .unwrap();
        let _ = s.add_metadata(MetadataAttribute::new(object, &random_id(rng, false), datatype));
    }
    s
}

fn random_value(rng: &mut ChaCha8Rng, def: &AnnotationAttributeDef) -> Option<Value> {
    if def.optional && rng.gen_bool(0.2) {
        return None;
    }
    Some(match def.datatype {
        DataType::Text => match &def.vocabulary {
            Some(v) => Value::Text(v.choose(rng).unwrap().clone()),
            None => Value::Text(
                (0..rng.gen_range(0..6))
                    .map(|_| *['a', 'é', ' ', '"', ',', '\'', 'ŋ', '\n'].choose(rng).unwrap())
                    .collect(),
            ),
        },
        DataType::Integer => Value::Integer(rng.gen()),
        DataType::Real => Value::Real(rng.gen_range(-1e6..1e6)),
        DataType::Boolean => Value::Boolean(rng.gen()),
        DataType::DateTime => unreachable!("levels have no datetime attributes"),
    })
}

/// Random non-overlapping elements conforming to `level`.
pub fn random_tier(rng: &mut ChaCha8Rng, structure: &AnnotationStructure, level: &AnnotationLevelDef, key: TierKey) -> Tier {
    let has_parent = structure.hierarchy_parent(&level.id).is_some();
    let mut t: i64 = rng.gen_range(0..1_000_000_000);
    let mut elements = Vec::new();
    for i in 0..rng.gen_range(0..40) {
        t += rng.gen_range(0..5_000_000);
        let d = rng.gen_range(1..300_000_000);
        let label: String = (0..rng.gen_range(0..5))
            .map(|_| *['a', 'ʒ', '@', ' ', '"', '_'].choose(rng).unwrap())
            .collect();
        let mut e = match level.kind {
            LevelKind::Interval => AnnotationElement::interval(i + 1, Time::from_ns(t), Time::from_ns(t + d), &label),
            LevelKind::Point => AnnotationElement::point(i + 1, Time::from_ns(t), &label),
        };
        if level.kind == LevelKind::Interval {
            t += d;
        } else {
            t += 1;
        }
        for a in &level.attributes {
            e.attributes.insert(a.id.clone(), random_value(rng, a));
        }
        if has_parent && rng.gen_bool(0.8) {
            e.parent = Some(rng.gen_range(1..50));
        }
        elements.push(e);
    }
    Tier::new(key, elements)
}
