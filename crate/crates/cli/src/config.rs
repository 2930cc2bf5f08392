//! Settings resolved from flags, environment variables, `praaline.toml` in
//! the working directory and built-in defaults, in that order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const CONFIG_FILE: &str = "praaline.toml";
pub const ENV_DB: &str = "PRAALINE_DB";
pub const ENV_TOLERANCE_MS: &str = "PRAALINE_TOLERANCE_MS";
pub const ENV_CONTEXT: &str = "PRAALINE_CONTEXT";
pub const ENV_FORMAT: &str = "PRAALINE_FORMAT";

pub const DEFAULT_TOLERANCE_MS: f64 = 1.0;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("{source_name}: invalid {key} {value:?}: {message}")]
    Value {
        source_name: String,
        key: String,
        value: String,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Json,
    Csv,
}

impl Format {
    pub fn parse(token: &str) -> Option<Format> {
        match token.to_ascii_lowercase().as_str() {
            "text" => Some(Format::Text),
            "json" => Some(Format::Json),
            "csv" => Some(Format::Csv),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Format::Text => "text",
            Format::Json => "json",
            Format::Csv => "csv",
        }
    }
}

/// Process surroundings, injectable for tests.
#[derive(Debug, Clone, Default)]
pub struct Environment {
    pub cwd: PathBuf,
    pub vars: BTreeMap<String, String>,
}

impl Environment {
    pub fn from_process() -> Environment {
        Environment {
            cwd: std::env::current_dir().unwrap_or_else(|_| PathBuf::from(".")),
            vars: std::env::vars().filter(|(k, _)| k.starts_with("PRAALINE_")).collect(),
        }
    }

    pub fn new(cwd: &Path) -> Environment {
        Environment {
            cwd: cwd.to_path_buf(),
            vars: BTreeMap::new(),
        }
    }

    pub fn with_var(mut self, key: &str, value: &str) -> Environment {
        self.vars.insert(key.to_string(), value.to_string());
        self
    }

    /// `path` made absolute against the working directory.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.cwd.join(path)
        }
    }
}

/// Values given on the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub database: Option<PathBuf>,
    pub tolerance_ms: Option<f64>,
    pub context: Option<usize>,
    pub format: Option<Format>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub database: Option<PathBuf>,
    pub tolerance_ms: f64,
    pub context: usize,
    /// Output format when the command supports it and none is given.
    pub format: Option<Format>,
}

#[derive(Debug, Default)]
struct Layer {
    database: Option<PathBuf>,
    tolerance_ms: Option<f64>,
    context: Option<usize>,
    format: Option<Format>,
}

fn invalid(source_name: &str, key: &str, value: &str, message: &str) -> ConfigError {
    ConfigError::Value {
        source_name: source_name.to_string(),
        key: key.to_string(),
        value: value.to_string(),
        message: message.to_string(),
    }
}

fn parse_tolerance(source_name: &str, key: &str, value: &str) -> Result<f64, ConfigError> {
    match value.trim().parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
        _ => Err(invalid(source_name, key, value, "expected a non-negative number of milliseconds")),
    }
}

fn parse_context(source_name: &str, key: &str, value: &str) -> Result<usize, ConfigError> {
    value
        .trim()
        .parse()
        .map_err(|_| invalid(source_name, key, value, "expected a non-negative integer"))
}

fn parse_format(source_name: &str, key: &str, value: &str) -> Result<Format, ConfigError> {
    Format::parse(value.trim()).ok_or_else(|| invalid(source_name, key, value, "expected text, json or csv"))
}

fn env_layer(env: &Environment) -> Result<Layer, ConfigError> {
    let mut layer = Layer::default();
    if let Some(v) = env.vars.get(ENV_DB).filter(|v| !v.is_empty()) {
        layer.database = Some(env.resolve(Path::new(v)));
    }
    if let Some(v) = env.vars.get(ENV_TOLERANCE_MS) {
        layer.tolerance_ms = Some(parse_tolerance("environment", ENV_TOLERANCE_MS, v)?);
    }
    if let Some(v) = env.vars.get(ENV_CONTEXT) {
        layer.context = Some(parse_context("environment", ENV_CONTEXT, v)?);
    }
    if let Some(v) = env.vars.get(ENV_FORMAT) {
        layer.format = Some(parse_format("environment", ENV_FORMAT, v)?);
    }
    Ok(layer)
}

fn file_layer(env: &Environment) -> Result<Layer, ConfigError> {
    let path = env.cwd.join(CONFIG_FILE);
    let text = match std::fs::read_to_string(&path) {
        Ok(text) => text,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Layer::default()),
        Err(e) => {
            return Err(ConfigError::File {
                path,
                message: e.to_string(),
            })
        }
    };
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::File {
        path: path.clone(),
        message: e.message().to_string(),
    })?;
    let name = CONFIG_FILE;
    let mut layer = Layer::default();
    for (key, value) in &table {
        let shown = value.to_string();
        match (key.as_str(), value) {
            ("database", toml::Value::String(s)) => layer.database = Some(env.resolve(Path::new(s))),
            ("tolerance_ms", toml::Value::Integer(i)) => layer.tolerance_ms = Some(parse_tolerance(name, key, &i.to_string())?),
            ("tolerance_ms", toml::Value::Float(f)) => layer.tolerance_ms = Some(parse_tolerance(name, key, &f.to_string())?),
            ("context", toml::Value::Integer(i)) => layer.context = Some(parse_context(name, key, &i.to_string())?),
            ("format", toml::Value::String(s)) => layer.format = Some(parse_format(name, key, s)?),
            ("database" | "format", _) => return Err(invalid(name, key, &shown, "expected a string")),
            ("tolerance_ms" | "context", _) => return Err(invalid(name, key, &shown, "expected a number")),
            _ => return Err(invalid(name, key, &shown, "unknown setting")),
        }
    }
    Ok(layer)
}

impl CliConfig {
    /// Resolves every setting; any malformed source is an error.
    pub fn resolve(overrides: &Overrides, env: &Environment) -> Result<CliConfig, ConfigError> {
        let from_env = env_layer(env)?;
        let from_file = file_layer(env)?;
        Ok(CliConfig {
            database: overrides
                .database
                .as_deref()
                .map(|p| env.resolve(p))
                .or(from_env.database)
                .or(from_file.database),
            tolerance_ms: overrides
                .tolerance_ms
                .or(from_env.tolerance_ms)
                .or(from_file.tolerance_ms)
                .unwrap_or(DEFAULT_TOLERANCE_MS),
            context: overrides
                .context
                .or(from_env.context)
                .or(from_file.context)
                .unwrap_or(praaline_core::query::DEFAULT_CONTEXT),
            format: overrides.format.or(from_env.format).or(from_file.format),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_is_flag_env_file_default() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(CONFIG_FILE), "database = \"file.corpus\"\ncontext = 3\ntolerance_ms = 2.5\n").unwrap();
        let env = Environment::new(dir.path()).with_var(ENV_CONTEXT, "5");
        let c = CliConfig::resolve(&Overrides::default(), &env).unwrap();
        assert_eq!(c.database, Some(dir.path().join("file.corpus")));
        assert_eq!(c.context, 5);
        assert_eq!(c.tolerance_ms, 2.5);
        assert_eq!(c.format, None);

        let env = env.with_var(ENV_DB, "env.corpus");
        let flags = Overrides {
            context: Some(9),
            ..Default::default()
        };
        let c = CliConfig::resolve(&flags, &env).unwrap();
        assert_eq!(c.database, Some(dir.path().join("env.corpus")));
        assert_eq!(c.context, 9);
    }

    #[test]
    fn defaults_without_sources() {
        let dir = tempfile::tempdir().unwrap();
        let c = CliConfig::resolve(&Overrides::default(), &Environment::new(dir.path())).unwrap();
        assert_eq!(c.database, None);
        assert_eq!(c.tolerance_ms, DEFAULT_TOLERANCE_MS);
        assert_eq!(c.context, 7);
    }

    #[test]
    fn malformed_sources_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let env = Environment::new(dir.path()).with_var(ENV_TOLERANCE_MS, "-1");
        assert!(CliConfig::resolve(&Overrides::default(), &env).is_err());
        std::fs::write(dir.path().join(CONFIG_FILE), "colour = \"red\"\n").unwrap();
        assert!(CliConfig::resolve(&Overrides::default(), &Environment::new(dir.path())).is_err());
        std::fs::write(dir.path().join(CONFIG_FILE), "context = \"many\"\n").unwrap();
        assert!(CliConfig::resolve(&Overrides::default(), &Environment::new(dir.path())).is_err());
        std::fs::write(dir.path().join(CONFIG_FILE), "context = \n").unwrap();
        assert!(CliConfig::resolve(&Overrides::default(), &Environment::new(dir.path())).is_err());
    }
}
