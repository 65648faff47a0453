use std::path::Path;

use prefsim::ingest::{ingest_prism_like, Dataset};
use prefsim::json::read_jsonl;
use prefsim::model::Trial;
use serde::de::DeserializeOwned;

use crate::error::{CliError, Classify};

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).invalid(&format!("cannot read {}", path.display()))
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    read_jsonl(&read_text(path)?).invalid(&format!("invalid row in {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_text(path)?).invalid(&format!("invalid JSON in {}", path.display()))
}

/// Ingests a trial file, logging per-line diagnostics as warnings.
pub fn read_trials(path: &Path) -> Result<Dataset, CliError> {
    let data = ingest_prism_like(path).invalid(&format!("cannot ingest {}", path.display()))?;
    for d in &data.report.diagnostics {
        log::warn!("{}:{}: {}", path.display(), d.line, d.message);
    }
    Ok(data)
}

pub fn trials_only(path: &Path) -> Result<Vec<Trial>, CliError> {
    let data = read_trials(path)?;
    if data.trials.is_empty() {
        return Err(CliError::invalid(format!("{} holds no valid trials", path.display())));
    }
    Ok(data.trials)
}

/// Writes to `out`, or stdout when absent.
pub fn emit(out: Option<&Path>, content: &str) -> Result<(), CliError> {
    match out {
        Some(p) => write_file(p, content),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

pub fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).runtime(&format!("cannot create {}", dir.display()))?;
    }
    std::fs::write(path, content).runtime(&format!("cannot write {}", path.display()))
}

pub fn out_dir(out: Option<&Path>, command: &str) -> Result<std::path::PathBuf, CliError> {
    let dir = out.ok_or_else(|| CliError::invalid(format!("{command} needs --out <DIR>")))?;
    std::fs::create_dir_all(dir).runtime(&format!("cannot create {}", dir.display()))?;
    Ok(dir.to_path_buf())
}
