//! The `praaline` command line. Every subcommand is a thin layer over one
//! library call in `praaline_core`; [`run`] takes its process surroundings as
//! arguments so it can be driven from tests.

pub mod commands;
pub mod config;
pub mod render;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{CliConfig, ConfigError, Environment, Format, Overrides};

use praaline_core::integrity::IntegrityError;
use praaline_core::interop::{InteropError, MappingError, TextGridError};
use praaline_core::pipeline::PipelineError;
use praaline_core::query::{QueryError, TableError};
use praaline_core::{ModelError, StoreError, StructureError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    TextGrid(#[from] TextGridError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Interop(#[from] InteropError),
    #[error(transparent)]
    Integrity(#[from] IntegrityError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => EXIT_USAGE,
            _ => EXIT_DOMAIN,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> CliError {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Batch tools for time-aligned speech corpora.
///
/// Settings are taken from command-line flags, then the environment
/// (PRAALINE_DB, PRAALINE_TOLERANCE_MS, PRAALINE_CONTEXT, PRAALINE_FORMAT),
/// then `praaline.toml` in the working directory (keys database,
/// tolerance_ms, context, format), then built-in defaults.
#[derive(Debug, Parser)]
#[command(name = "praaline", version, arg_required_else_help = true)]
pub struct Cli {
    /// Corpus database file.
    #[arg(long, global = true, value_name = "FILE")]
    pub db: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a corpus database from a structure file.
    Init {
        /// Structure XML file.
        #[arg(long, value_name = "FILE")]
        structure: PathBuf,
        /// Database file to create; defaults to the configured database.
        database: Option<PathBuf>,
    },
    /// Show, replace or export the corpus structure.
    #[command(subcommand)]
    Structure(StructureCommand),
    /// Add and list communications, speakers, participations and recordings.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Import a TextGrid into a communication.
    ImportTextgrid {
        file: PathBuf,
        #[arg(long)]
        communication: String,
        /// Speaker of every tier when no mapping file names one.
        #[arg(long)]
        speaker: Option<String>,
        /// Tier mapping file (`speaker fixed ID`, `speaker suffix SEP`, `map PATTERN => LEVEL[.ATTR]`).
        #[arg(long, value_name = "FILE")]
        mapping: Option<PathBuf>,
        #[arg(long)]
        format: Option<String>,
    },
    /// Export levels of a communication as a TextGrid.
    ExportTextgrid {
        #[arg(long)]
        communication: String,
        /// Comma-separated `level` or `level.attribute` columns.
        #[arg(long, value_delimiter = ',', required = true)]
        columns: Vec<String>,
        #[arg(long)]
        speaker: Option<String>,
        #[arg(short, long, value_name = "FILE")]
        output: Option<PathBuf>,
    },
    /// Check inter-level integrity; exits 1 when violations remain.
    Check {
        /// Communication to check; repeatable. Defaults to all.
        #[arg(long)]
        communication: Vec<String>,
        #[arg(long, value_name = "MS")]
        tolerance_ms: Option<f64>,
        /// Snap correctable boundaries and check again.
        #[arg(long)]
        fix: bool,
        /// text or json.
        #[arg(long)]
        format: Option<String>,
    },
    /// Run an annotation pipeline file.
    Annotate {
        #[arg(long, value_name = "FILE")]
        pipeline: PathBuf,
        /// Worker threads per step; 0 picks the number of CPUs.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[arg(long)]
        format: Option<String>,
    },
    /// Build a dataset from a JSON dataset spec.
    Dataset {
        #[arg(long, value_name = "FILE")]
        spec: PathBuf,
        /// csv, json or text.
        #[arg(long)]
        format: Option<String>,
    },
    /// Keyword-in-context concordance over one level.
    Kwic(KwicArgs),
    /// Corpus counts.
    Stats {
        /// Level to count; repeatable. Defaults to all levels.
        #[arg(long)]
        level: Vec<String>,
        /// Sub-corpus predicate such as `genre=interview` or `speaker.age>=30`; repeatable.
        #[arg(long)]
        filter: Vec<String>,
        /// text, csv or json.
        #[arg(long)]
        format: Option<String>,
    },
    /// Run a read-only SQL query against the database.
    Sql {
        query: String,
        /// text, csv or json.
        #[arg(long)]
        format: Option<String>,
    },
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("pattern").required(true).args(["exact", "regex"])))]
pub struct KwicArgs {
    #[arg(long)]
    pub level: String,
    /// Attribute to match instead of the label.
    #[arg(long)]
    pub attr: Option<String>,
    /// Match this text exactly.
    #[arg(long)]
    pub exact: Option<String>,
    /// Match this regular expression anywhere in the value.
    #[arg(long)]
    pub regex: Option<String>,
    /// Tokens of context on each side.
    #[arg(long)]
    pub context: Option<usize>,
    /// Sub-corpus predicate; repeatable.
    #[arg(long)]
    pub filter: Vec<String>,
    /// text or json.
    #[arg(long)]
    pub format: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum StructureCommand {
    /// Print levels, attributes, relations and metadata.
    Show {
        /// text or json.
        #[arg(long)]
        format: Option<String>,
    },
    /// Migrate the database to a new structure file.
    Import {
        file: PathBuf,
        /// Allow changes that drop data.
        #[arg(long)]
        force: bool,
    },
    /// Write the structure as XML.
    Export {
        #[arg(short, long, value_name = "FILE")]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum CorpusCommand {
    AddCommunication {
        id: String,
        /// Metadata value `key=value`; repeatable.
        #[arg(long = "meta", value_name = "KEY=VALUE")]
        meta: Vec<String>,
    },
    AddSpeaker {
        id: String,
        #[arg(long = "meta", value_name = "KEY=VALUE")]
        meta: Vec<String>,
    },
    AddParticipation {
        communication: String,
        speaker: String,
        #[arg(long, default_value = "")]
        role: String,
        #[arg(long = "meta", value_name = "KEY=VALUE")]
        meta: Vec<String>,
    },
    AddRecording {
        id: String,
        #[arg(long)]
        communication: String,
        #[arg(long)]
        file: String,
        /// Duration in seconds.
        #[arg(long)]
        duration: String,
        #[arg(long, default_value_t = 16000)]
        sample_rate: u32,
        #[arg(long, default_value_t = 1)]
        channels: u16,
        #[arg(long = "meta", value_name = "KEY=VALUE")]
        meta: Vec<String>,
    },
    /// List communications, speakers, participations or recordings.
    List {
        #[arg(default_value = "communications")]
        what: String,
        /// text or json.
        #[arg(long)]
        format: Option<String>,
    },
}

/// Runs one command line and returns the process exit code. Data goes to
/// `out`, diagnostics to `err`.
pub fn run<I, S>(args: I, env: &Environment, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = out.write_all(text.as_bytes());
                    EXIT_OK
                }
                _ => {
                    let _ = err.write_all(text.as_bytes());
                    EXIT_USAGE
                }
            };
        }
    };
    match commands::execute(cli, env, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
