//! Text, CSV and JSON renderings of command results.

use praaline_core::integrity::{BoundaryMove, CorrectionReport};
use praaline_core::model::CorpusModel;
use praaline_core::stats::StatsReport;
use praaline_core::store::{MigrationReport, SqlValue};
use praaline_core::{AnnotationStructure, Time, Violation};
use serde_json::{json, Map, Value as Json};

fn csv_field(text: &str) -> String {
    if text.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_string()
    }
}

fn sql_text(v: &SqlValue) -> String {
    match v {
        SqlValue::Null => String::new(),
        SqlValue::Integer(i) => i.to_string(),
        SqlValue::Real(r) => r.to_string(),
        SqlValue::Text(t) => t.clone(),
        SqlValue::Blob(b) => b.iter().map(|x| format!("{x:02x}")).collect(),
    }
}

fn sql_json(v: &SqlValue) -> Json {
    match v {
        SqlValue::Null => Json::Null,
        SqlValue::Integer(i) => json!(i),
        SqlValue::Real(r) => json!(r),
        SqlValue::Text(t) => json!(t),
        SqlValue::Blob(_) => json!(sql_text(v)),
    }
}

/// Query results as CSV; nulls are empty fields and blobs are hex.
pub fn rows_csv(columns: &[String], rows: &[Vec<SqlValue>]) -> String {
    let mut out = String::new();
    let line = |cells: Vec<String>| cells.iter().map(|c| csv_field(c)).collect::<Vec<_>>().join(",") + "\n";
    out.push_str(&line(columns.to_vec()));
    for row in rows {
        out.push_str(&line(row.iter().map(sql_text).collect()));
    }
    out
}

/// Query results as a JSON array of objects keyed by column name.
pub fn rows_json(columns: &[String], rows: &[Vec<SqlValue>]) -> String {
    let records: Vec<Json> = rows
        .iter()
        .map(|row| {
            let object: Map<String, Json> = columns.iter().cloned().zip(row.iter().map(sql_json)).collect();
            Json::Object(object)
        })
        .collect();
    pretty(&records)
}

/// Query results as tab-separated text.
pub fn rows_text(columns: &[String], rows: &[Vec<SqlValue>]) -> String {
    let mut out = columns.join("\t") + "\n";
    for row in rows {
        out.push_str(&row.iter().map(sql_text).collect::<Vec<_>>().join("\t"));
        out.push('\n');
    }
    out
}

pub fn pretty<T: serde::Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable output");
    s.push('\n');
    s
}

pub fn stats_text(report: &StatsReport) -> String {
    let mut out = format!(
        "communications  {}\nrecordings      {}\nduration        {} s\n",
        report.communications,
        report.recordings,
        Time::from_ns(report.total_duration_ns)
    );
    for level in &report.levels {
        out.push_str(&format!("elements {:<12} {}\n", level.level_id, level.elements));
    }
    out
}

pub fn structure_text(s: &AnnotationStructure) -> String {
    let mut out = String::new();
    for level in &s.levels {
        out.push_str(&format!("level {} ({})\n", level.id, level.kind.as_str()));
        for a in &level.attributes {
            out.push_str(&format!("  {} {}", a.id, a.datatype));
            if !a.optional {
                out.push_str(" required");
            }
            if let Some(v) = &a.vocabulary {
                out.push_str(&format!(" {{{}}}", v.join(", ")));
            }
            out.push('\n');
        }
    }
    for r in &s.relations {
        out.push_str(&format!("relation {r}\n"));
    }
    for m in &s.metadata {
        out.push_str(&format!("metadata {}.{} {}", m.object.as_str(), m.id, m.datatype));
        if !m.optional {
            out.push_str(" required");
        }
        out.push('\n');
    }
    out
}

pub fn migration_text(report: &MigrationReport) -> String {
    let mut out: String = report.changes.iter().map(|c| format!("{c}\n")).collect();
    if report.changes.is_empty() {
        out.push_str("no changes\n");
    }
    if report.nulled_values > 0 {
        out.push_str(&format!("{} values could not be converted and were cleared\n", report.nulled_values));
    }
    out
}

pub fn violations_text(violations: &[Violation]) -> String {
    violations.iter().map(|v| v.describe() + "\n").collect()
}

fn move_text(m: &BoundaryMove) -> String {
    format!(
        "moved {}/{}/{} {} element {} {:?} {} -> {}\n",
        m.communication_id, m.annotation_id, m.speaker_id, m.level_id, m.element_id, m.boundary, m.from, m.to
    )
}

pub fn correction_text(report: &CorrectionReport) -> String {
    let mut out: String = report.moves.iter().map(move_text).collect();
    for v in &report.aborted {
        out.push_str(&format!("not moved: {}\n", v.describe()));
    }
    out
}

fn metadata_text(metadata: &praaline_core::model::Metadata) -> String {
    metadata.iter().map(|(k, v)| format!(" {k}={v}")).collect()
}

/// One line per entity of the named collection; `None` for an unknown name.
pub fn corpus_text(model: &CorpusModel, what: &str) -> Option<String> {
    let lines: Vec<String> = match what {
        "communications" => model
            .communications
            .values()
            .map(|c| format!("{}{}", c.id, metadata_text(&c.metadata)))
            .collect(),
        "speakers" => model
            .speakers
            .values()
            .map(|s| format!("{}{}", s.id, metadata_text(&s.metadata)))
            .collect(),
        "participations" => model
            .participations
            .values()
            .map(|p| format!("{} {} {}{}", p.communication_id, p.speaker_id, p.role, metadata_text(&p.metadata)))
            .collect(),
        "recordings" => model
            .recordings
            .values()
            .map(|r| {
                format!(
                    "{} {} {} {} s {} Hz {} ch{}",
                    r.id,
                    r.communication_id,
                    r.filename,
                    r.duration,
                    r.sample_rate_hz,
                    r.channels,
                    metadata_text(&r.metadata)
                )
            })
            .collect(),
        _ => return None,
    };
    Some(lines.into_iter().map(|l| l + "\n").collect())
}

pub fn corpus_json(model: &CorpusModel, what: &str) -> Option<String> {
    Some(match what {
        "communications" => pretty(&model.communications.values().collect::<Vec<_>>()),
        "speakers" => pretty(&model.speakers.values().collect::<Vec<_>>()),
        "participations" => pretty(&model.participations.values().collect::<Vec<_>>()),
        "recordings" => pretty(&model.recordings.values().collect::<Vec<_>>()),
        _ => return None,
    })
}
