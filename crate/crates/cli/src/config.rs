//! Config files and flag precedence: flag, then file, then default.

use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

/// Bad flags, bad config or out-of-range parameters. Exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// A parsed config file with the shared keys split off.
#[derive(Debug, Default)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    /// Command-specific fields.
    pub body: Map<String, Value>,
}

pub fn load(path: Option<&Path>, command: &str) -> anyhow::Result<ConfigFile> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let Value::Object(mut body) = serde_json::from_str(&text)
        .map_err(|e| usage(format!("config {} is not valid JSON: {e}", path.display())))?
    else {
        return Err(usage("config must be a JSON object"));
    };
    match body.remove("command") {
        Some(Value::String(c)) if c == command => {}
        Some(other) => {
            return Err(usage(format!("config is for command {other}, not {command:?}")));
        }
        None => return Err(usage("config lacks a \"command\" field")),
    }
    let seed = take(&mut body, "seed")?;
    let threads = take(&mut body, "threads")?;
    Ok(ConfigFile { seed, threads, body })
}

fn take<T: DeserializeOwned>(body: &mut Map<String, Value>, key: &str) -> anyhow::Result<Option<T>> {
    body.remove(key)
        .map(|v| serde_json::from_value(v).map_err(|e| usage(format!("config field {key:?}: {e}"))))
        .transpose()
}

/// Deserializes the command-specific part of a config file.
pub fn from_body<T: DeserializeOwned + Default>(body: Map<String, Value>) -> anyhow::Result<T> {
    if body.is_empty() {
        return Ok(T::default());
    }
    serde_json::from_value(Value::Object(body)).map_err(|e| usage(format!("config: {e}")))
}

#[derive(Debug, Clone)]
pub struct Globals {
    pub seed: u64,
    pub seed_explicit: bool,
    pub strict_seed: bool,
    pub threads: Option<usize>,
}

impl Globals {
    pub fn resolve(
        seed: Option<u64>,
        threads: Option<usize>,
        strict_seed: bool,
        file: &ConfigFile,
    ) -> anyhow::Result<Self> {
        let seed_given = seed.or(file.seed);
        let threads = threads.or(file.threads);
        if threads == Some(0) {
            return Err(usage("--threads must be at least 1"));
        }
        Ok(Self {
            seed: seed_given.unwrap_or(0),
            seed_explicit: seed_given.is_some(),
            strict_seed,
            threads,
        })
    }

    /// For commands that draw random numbers.
    pub fn require_seed(&self) -> anyhow::Result<()> {
        if self.strict_seed && !self.seed_explicit {
            return Err(usage("--strict-seed is set but no seed was given"));
        }
        Ok(())
    }
}

/// Fills each `None` field of `$flags` from `$file`.
macro_rules! overlay {
    ($flags:expr, $file:expr; $($field:ident),* $(,)?) => {
        $(
            if $flags.$field.is_none() {
                $flags.$field = $file.$field.take();
            }
        )*
    };
}
pub(crate) use overlay;

/// Clap value parser for the library's snake_case serde enums.
pub fn snake<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|e| e.to_string())
}

pub fn required<T>(v: Option<T>, what: &str) -> anyhow::Result<T> {
    v.ok_or_else(|| usage(format!("missing required {what}")))
}
