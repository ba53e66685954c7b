//! Run-directory plumbing shared by the commands.

use std::fmt;
use std::fs;
use std::path::Path;

use hnirm_core::{CodeScale, Error, ResponseDataset};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const SEED_ENV: &str = "HNIRM_SEED";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug)]
pub enum CliError {
    /// Bad input or arguments; exit code 1.
    Validation(String),
    /// Failure while computing; exit code 2.
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Writes through a temporary file in the same directory and renames it.
pub fn write_atomic(path: &Path, contents: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

pub fn write_json(path: &Path, v: &Value) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(v).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_manifest(dir: &Path) -> CliResult<Value> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// `--seed`, then the `HNIRM_SEED` environment variable.
pub fn env_seed(flag: Option<u64>) -> CliResult<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Validation(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

pub fn parse_scale(s: &str, data: &ResponseDataset) -> CliResult<CodeScale> {
    match s {
        "binary" => Ok(CodeScale::Binary),
        "auto" => {
            let binary = data.respondents.iter().all(|r| r.codes.iter().all(|&c| c == 0 || c == 1));
            Ok(if binary { CodeScale::Binary } else { CodeScale::default() })
        }
        _ => match s.strip_prefix("likert:").map(str::parse::<i64>) {
            Some(Ok(cut)) => Ok(CodeScale::Likert { cut }),
            _ => Err(CliError::Validation(format!(
                "unknown scale `{s}`, expected auto, binary or likert:CUT"
            ))),
        },
    }
}

pub fn scale_name(s: CodeScale) -> String {
    match s {
        CodeScale::Binary => "binary".into(),
        CodeScale::Likert { cut } => format!("likert:{cut}"),
    }
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Validation(format!("cannot create {}: {e}", dir.display())))
}
