//! Subcommand handlers.

use std::io::Write;
use std::path::{Path, PathBuf};

use praaline_core::integrity::CheckConfig;
use praaline_core::interop::ExportColumn;
use praaline_core::model::{Communication, Metadata, Participation, Recording, Speaker};
use praaline_core::pipeline::RunOptions;
use praaline_core::query::{ConcordanceSpec, ExportFormat, Pattern};
use praaline_core::stats::corpus_stats;
use praaline_core::structure::{read_structure, write_structure};
use praaline_core::{
    auto_correct, build_dataset, check_annotation, concordance, export_textgrid, import_textgrid, parse_textgrid,
    run_pipeline, write_textgrid, DatasetSpec, Entity, MetadataObject, Mode, PipelineSpec, Predicate, Store,
    TierMapping, Time, Value,
};

use crate::config::{CliConfig, Environment, Format, Overrides};
use crate::render;
use crate::{Cli, CliError, Command, CorpusCommand, KwicArgs, Result, StructureCommand, EXIT_DOMAIN, EXIT_OK};

struct Context<'a> {
    env: &'a Environment,
    config: CliConfig,
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

impl Context<'_> {
    fn database(&self) -> Result<&Path> {
        self.config.database.as_deref().ok_or_else(|| {
            CliError::Usage(format!(
                "no database given; pass --db, set {} or set database in {}",
                crate::config::ENV_DB,
                crate::config::CONFIG_FILE
            ))
        })
    }

    fn open(&self, mode: Mode) -> Result<Store> {
        Ok(Store::open(self.database()?, mode)?)
    }

    fn path(&self, p: &Path) -> PathBuf {
        self.env.resolve(p)
    }

    fn read(&self, p: &Path) -> Result<Vec<u8>> {
        let path = self.path(p);
        std::fs::read(&path).map_err(|e| CliError::io(path, e))
    }

    fn read_text(&self, p: &Path) -> Result<String> {
        let bytes = self.read(p)?;
        String::from_utf8(bytes).map_err(|_| CliError::Invalid(format!("{}: not UTF-8 text", p.display())))
    }

    fn emit(&mut self, data: &[u8]) -> Result<()> {
        self.out.write_all(data).map_err(|e| CliError::io("<output>", e))
    }

    fn note(&mut self, message: &str) {
        let _ = writeln!(self.err, "{message}");
    }

    /// Writes `data` to `target` when given, otherwise to the output stream.
    fn emit_to(&mut self, target: Option<&Path>, data: &[u8]) -> Result<()> {
        match target {
            Some(p) => {
                let path = self.path(p);
                std::fs::write(&path, data).map_err(|e| CliError::io(path, e))
            }
            None => self.emit(data),
        }
    }

    /// The output format: the explicit flag, else the configured default when
    /// this command supports it, else `fallback`.
    fn format(&self, explicit: Option<&str>, allowed: &[Format], fallback: Format) -> Result<Format> {
        let names = || allowed.iter().map(|f| f.as_str()).collect::<Vec<_>>().join(", ");
        if let Some(token) = explicit {
            return match Format::parse(token) {
                Some(f) if allowed.contains(&f) => Ok(f),
                _ => Err(CliError::Usage(format!("unsupported format {token:?}; expected one of {}", names()))),
            };
        }
        Ok(self.config.format.filter(|f| allowed.contains(f)).unwrap_or(fallback))
    }
}

const TEXT_JSON: [Format; 2] = [Format::Text, Format::Json];
const ALL_FORMATS: [Format; 3] = [Format::Text, Format::Csv, Format::Json];

pub(crate) fn execute(cli: Cli, env: &Environment, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let overrides = Overrides {
        database: cli.db.clone(),
        tolerance_ms: match &cli.command {
            Command::Check { tolerance_ms, .. } => *tolerance_ms,
            _ => None,
        },
        context: match &cli.command {
            Command::Kwic(k) => k.context,
            _ => None,
        },
        format: None,
    };
    let config = CliConfig::resolve(&overrides, env)?;
    let mut cx = Context { env, config, out, err };
    match cli.command {
        Command::Init { structure, database } => init(&mut cx, &structure, database.as_deref()),
        Command::Structure(c) => structure(&mut cx, c),
        Command::Corpus(c) => corpus(&mut cx, c),
        Command::ImportTextgrid {
            file,
            communication,
            speaker,
            mapping,
            format,
        } => import(&mut cx, &file, &communication, speaker.as_deref(), mapping.as_deref(), format.as_deref()),
        Command::ExportTextgrid {
            communication,
            columns,
            speaker,
            output,
        } => export(&mut cx, &communication, &columns, speaker.as_deref(), output.as_deref()),
        Command::Check {
            communication,
            fix,
            format,
            ..
        } => check(&mut cx, &communication, fix, format.as_deref()),
        Command::Annotate { pipeline, jobs, format } => annotate(&mut cx, &pipeline, jobs, format.as_deref()),
        Command::Dataset { spec, format } => dataset(&mut cx, &spec, format.as_deref()),
        Command::Kwic(args) => kwic(&mut cx, &args),
        Command::Stats { level, filter, format } => stats(&mut cx, &level, &filter, format.as_deref()),
        Command::Sql { query, format } => sql(&mut cx, &query, format.as_deref()),
    }
}

fn init(cx: &mut Context, structure: &Path, database: Option<&Path>) -> Result<i32> {
    let s = read_structure(&cx.read(structure)?)?;
    let path = match database {
        Some(p) => cx.path(p),
        None => cx.database()?.to_path_buf(),
    };
    Store::create(&path, &s)?;
    cx.note(&format!("created {}", path.display()));
    Ok(EXIT_OK)
}

fn structure(cx: &mut Context, command: StructureCommand) -> Result<i32> {
    match command {
        StructureCommand::Show { format } => {
            let f = cx.format(format.as_deref(), &TEXT_JSON, Format::Text)?;
            let store = cx.open(Mode::ReadOnly)?;
            let text = match f {
                Format::Json => render::pretty(store.structure()),
                _ => render::structure_text(store.structure()),
            };
            cx.emit(text.as_bytes())?;
        }
        StructureCommand::Import { file, force } => {
            let new = read_structure(&cx.read(&file)?)?;
            let mut store = cx.open(Mode::ReadWrite)?;
            let report = store.apply_schema(&new, force)?;
            cx.emit(render::migration_text(&report).as_bytes())?;
        }
        StructureCommand::Export { output } => {
            let store = cx.open(Mode::ReadOnly)?;
            cx.emit_to(output.as_deref(), &write_structure(store.structure()))?;
        }
    }
    Ok(EXIT_OK)
}

/// Parses `key=value` pairs with the datatypes declared for `object`.
fn metadata(store: &Store, object: MetadataObject, pairs: &[String]) -> Result<Metadata> {
    let mut metadata = Metadata::new();
    for pair in pairs {
        let (key, literal) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("metadata {pair:?} is not key=value")))?;
        let attr = store
            .structure()
            .metadata_attribute(object, key)
            .ok_or_else(|| CliError::Invalid(format!("{object} has no metadata attribute {key:?}")))?;
        let value = Value::parse(attr.datatype, literal)
            .map_err(|e| CliError::Invalid(format!("metadata {key}: {e}")))?;
        metadata.insert(key.to_string(), value);
    }
    Ok(metadata)
}

fn corpus(cx: &mut Context, command: CorpusCommand) -> Result<i32> {
    if let CorpusCommand::List { what, format } = command {
        let f = cx.format(format.as_deref(), &TEXT_JSON, Format::Text)?;
        let model = cx.open(Mode::ReadOnly)?.load_corpus()?;
        let text = match f {
            Format::Json => render::corpus_json(&model, &what),
            _ => render::corpus_text(&model, &what),
        }
        .ok_or_else(|| {
            CliError::Usage(format!(
                "cannot list {what:?}; expected communications, speakers, participations or recordings"
            ))
        })?;
        cx.emit(text.as_bytes())?;
        return Ok(EXIT_OK);
    }
    let mut store = cx.open(Mode::ReadWrite)?;
    let entity = match command {
        CorpusCommand::AddCommunication { id, meta } => Entity::Communication(Communication {
            metadata: metadata(&store, MetadataObject::Communication, &meta)?,
            id,
        }),
        CorpusCommand::AddSpeaker { id, meta } => Entity::Speaker(Speaker {
            metadata: metadata(&store, MetadataObject::Speaker, &meta)?,
            id,
        }),
        CorpusCommand::AddParticipation {
            communication,
            speaker,
            role,
            meta,
        } => Entity::Participation(Participation {
            metadata: metadata(&store, MetadataObject::Participation, &meta)?,
            communication_id: communication,
            speaker_id: speaker,
            role,
        }),
        CorpusCommand::AddRecording {
            id,
            communication,
            file,
            duration,
            sample_rate,
            channels,
            meta,
        } => Entity::Recording(Recording {
            metadata: metadata(&store, MetadataObject::Recording, &meta)?,
            duration: Time::parse_secs(&duration)
                .map_err(|e| CliError::Usage(format!("invalid duration {duration:?}: {e}")))?,
            id,
            communication_id: communication,
            filename: file,
            sample_rate_hz: sample_rate,
            channels,
        }),
        CorpusCommand::List { .. } => unreachable!("handled above"),
    };
    store.upsert_entity(entity)?;
    Ok(EXIT_OK)
}

fn import(
    cx: &mut Context,
    file: &Path,
    communication: &str,
    speaker: Option<&str>,
    mapping: Option<&Path>,
    format: Option<&str>,
) -> Result<i32> {
    let f = cx.format(format, &TEXT_JSON, Format::Text)?;
    let doc = parse_textgrid(&cx.read(file)?)?;
    let mut store = cx.open(Mode::ReadWrite)?;
    let mapping = match (mapping, speaker) {
        (Some(m), _) => TierMapping::parse(&cx.read_text(m)?, speaker.unwrap_or(""))?,
        (None, Some(s)) => TierMapping::identity(store.structure(), s),
        (None, None) => return Err(CliError::Usage("--speaker is required without a --mapping file".into())),
    };
    let report = import_textgrid(&mut store, communication, &mapping, &doc)?;
    let text = match f {
        Format::Json => render::pretty(&report),
        _ => {
            let mut s: String = report
                .saved
                .iter()
                .map(|t| format!("saved {} {} {}\n", t.level_id, t.speaker_id, t.elements))
                .collect();
            for m in &report.merged {
                s.push_str(&format!("merged {} into {}.{} {} {}\n", m.tier, m.level_id, m.attribute, m.speaker_id, m.values));
            }
            for t in &report.skipped_tiers {
                s.push_str(&format!("skipped tier {t}\n"));
            }
            for u in &report.unmatched {
                s.push_str(&format!("unmatched {} {} {} {:?}: {}\n", u.tier, u.t1, u.t2, u.text, u.reason));
            }
            for finding in &report.findings {
                s.push_str(&format!("finding {finding}\n"));
            }
            s
        }
    };
    cx.emit(text.as_bytes())?;
    Ok(EXIT_OK)
}

fn export(
    cx: &mut Context,
    communication: &str,
    columns: &[String],
    speaker: Option<&str>,
    output: Option<&Path>,
) -> Result<i32> {
    let store = cx.open(Mode::ReadOnly)?;
    let columns: Vec<ExportColumn> = columns.iter().map(|c| ExportColumn::parse(c.trim())).collect();
    let doc = export_textgrid(&store, communication, &columns, speaker)?;
    cx.emit_to(output, &write_textgrid(&doc))?;
    Ok(EXIT_OK)
}

fn check(cx: &mut Context, communications: &[String], fix: bool, format: Option<&str>) -> Result<i32> {
    let f = cx.format(format, &TEXT_JSON, Format::Text)?;
    let config = CheckConfig {
        tolerance_ns: (cx.config.tolerance_ms * 1e6).round() as i64,
        relations: None,
    };
    let mut store = cx.open(if fix { Mode::ReadWrite } else { Mode::ReadOnly })?;
    let comms: Vec<String> = if communications.is_empty() {
        store.load_corpus()?.communications.into_keys().collect()
    } else {
        communications.to_vec()
    };
    let run_check = |store: &Store| -> Result<Vec<_>> {
        let mut all = Vec::new();
        for c in &comms {
            all.extend(check_annotation(store, c, &config)?);
        }
        Ok(all)
    };
    let found = run_check(&store)?;
    if !fix {
        let text = match f {
            Format::Json => render::pretty(&found),
            _ => render::violations_text(&found),
        };
        cx.emit(text.as_bytes())?;
        cx.note(&format!("{} violations", found.len()));
        return Ok(if found.is_empty() { EXIT_OK } else { EXIT_DOMAIN });
    }
    let report = auto_correct(&mut store, &found, &config)?;
    let remaining = run_check(&store)?;
    let text = match f {
        Format::Json => render::pretty(&serde_json::json!({
            "violations": found,
            "corrections": report,
            "remaining": remaining,
        })),
        _ => render::correction_text(&report) + &render::violations_text(&remaining),
    };
    cx.emit(text.as_bytes())?;
    cx.note(&format!(
        "{} violations, {} boundaries moved, {} remaining",
        found.len(),
        report.moves.len(),
        remaining.len()
    ));
    Ok(if remaining.is_empty() { EXIT_OK } else { EXIT_DOMAIN })
}

fn annotate(cx: &mut Context, pipeline: &Path, jobs: usize, format: Option<&str>) -> Result<i32> {
    let f = cx.format(format, &TEXT_JSON, Format::Text)?;
    let path = cx.path(pipeline);
    let spec = PipelineSpec::from_json(&cx.read_text(&path)?)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_else(|| cx.env.cwd.clone());
    let mut store = cx.open(Mode::ReadWrite)?;
    let report = run_pipeline(&mut store, &spec, &base, RunOptions { jobs })?;
    let text = match f {
        Format::Json => render::pretty(&report),
        _ => report
            .entries
            .iter()
            .map(|e| {
                let status = match &e.status {
                    praaline_core::pipeline::StepStatus::Ok => "ok".to_string(),
                    praaline_core::pipeline::StepStatus::Failed(m) => format!("failed: {m}"),
                    praaline_core::pipeline::StepStatus::Skipped => "skipped".to_string(),
                };
                format!("{} {} {} {} {}\n", e.step, e.annotator, e.communication_id, e.elements_written, status)
            })
            .collect(),
    };
    cx.emit(text.as_bytes())?;
    Ok(if report.failures() == 0 { EXIT_OK } else { EXIT_DOMAIN })
}

fn dataset(cx: &mut Context, spec: &Path, format: Option<&str>) -> Result<i32> {
    let f = cx.format(format, &ALL_FORMATS, Format::Csv)?;
    let spec = DatasetSpec::from_json(&cx.read_text(spec)?)?;
    let store = cx.open(Mode::ReadOnly)?;
    let d = build_dataset(&store, &spec)?;
    let text = match f {
        Format::Csv => d.export(ExportFormat::Csv),
        Format::Json => d.export(ExportFormat::Json),
        Format::Text => d.to_text(),
    };
    cx.emit(text.as_bytes())?;
    Ok(EXIT_OK)
}

fn predicates(filters: &[String]) -> Result<Vec<Predicate>> {
    filters
        .iter()
        .map(|f| Predicate::parse(f).ok_or_else(|| CliError::Usage(format!("invalid filter {f:?}"))))
        .collect()
}

fn kwic(cx: &mut Context, args: &KwicArgs) -> Result<i32> {
    let f = cx.format(args.format.as_deref(), &TEXT_JSON, Format::Text)?;
    let pattern = match (&args.exact, &args.regex) {
        (Some(s), _) => Pattern::Exact(s.clone()),
        (None, Some(r)) => Pattern::Regex(r.clone()),
        (None, None) => unreachable!("clap requires one pattern"),
    };
    let spec = ConcordanceSpec {
        attribute: args.attr.clone(),
        context: cx.config.context,
        subcorpus: predicates(&args.filter)?,
        ..ConcordanceSpec::new(&args.level, pattern)
    };
    let store = cx.open(Mode::ReadOnly)?;
    let hits = concordance(&store, &spec)?;
    let text = match f {
        Format::Json => render::pretty(&hits),
        _ => hits
            .iter()
            .map(|h| format!("{}\t{}\t{}\t{}\n", h.communication_id, h.speaker_id, h.t_min, h.line()))
            .collect(),
    };
    cx.emit(text.as_bytes())?;
    Ok(EXIT_OK)
}

fn stats(cx: &mut Context, levels: &[String], filters: &[String], format: Option<&str>) -> Result<i32> {
    let f = cx.format(format, &ALL_FORMATS, Format::Text)?;
    let filter = predicates(filters)?;
    let store = cx.open(Mode::ReadOnly)?;
    let levels: Vec<String> = if levels.is_empty() {
        store.structure().levels.iter().map(|l| l.id.clone()).collect()
    } else {
        levels.to_vec()
    };
    let report = corpus_stats(&store, &levels, &filter)?;
    let text = match f {
        Format::Csv => report.to_csv(),
        Format::Json => report.to_json() + "\n",
        Format::Text => render::stats_text(&report),
    };
    cx.emit(text.as_bytes())?;
    Ok(EXIT_OK)
}

fn sql(cx: &mut Context, query: &str, format: Option<&str>) -> Result<i32> {
    let f = cx.format(format, &ALL_FORMATS, Format::Text)?;
    let store = cx.open(Mode::ReadOnly)?;
    let (columns, rows) = store.query_readonly(query)?;
    let text = match f {
        Format::Csv => render::rows_csv(&columns, &rows),
        Format::Json => render::rows_json(&columns, &rows),
        Format::Text => render::rows_text(&columns, &rows),
    };
    cx.emit(text.as_bytes())?;
    Ok(EXIT_OK)
}
