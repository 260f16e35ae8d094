//! Writers for the run directory: `report.json`, `summary.csv`,
//! `manifest.json` and `plots/`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use time::format_description::well_known::Rfc3339;
use time::OffsetDateTime;

use crate::error::CliError;
use crate::plots;
use crate::runner::{Outcome, Table};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "CPS_LAB_OUT";
pub const DEFAULT_OUT: &str = "cps-lab-out";
pub const MANIFEST_VERSION: u32 = 1;

/// `--out`, then the config's `output_dir`, then `$CPS_LAB_OUT`, then `./cps-lab-out`.
pub fn resolve_output_dir(flag: Option<&Path>, config: Option<&Path>) -> PathBuf {
    flag.or(config)
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub tool: &'static str,
    pub version: &'static str,
    pub experiment: String,
    pub verdict: String,
    pub config_path: String,
    pub config_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_seed: Option<u64>,
    pub seed_from_command_line: bool,
    pub path_seed_rule: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_paths: Option<usize>,
    pub threads: usize,
    pub parallel: bool,
    pub created_utc: String,
    pub files: Vec<String>,
}

pub const PATH_SEED_RULE: &str = "seed_i = splitmix64(base_seed ^ splitmix64(i)), ChaCha8 stream per path";

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::output(path.display().to_string(), e))?;
    text.push('\n');
    write(path, text.as_bytes())
}

/// RFC 4180 CSV: comma separated, CRLF line ends, quoting only where needed.
pub fn csv_bytes(table: &Table) -> Result<Vec<u8>, CliError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    w.write_record(&table.header).map_err(|e| CliError::output("summary.csv", e))?;
    for row in &table.rows {
        w.write_record(row).map_err(|e| CliError::output("summary.csv", e))?;
    }
    w.into_inner().map_err(|e| CliError::output("summary.csv", e))
}

pub fn now_rfc3339() -> String {
    OffsetDateTime::now_utc().format(&Rfc3339).unwrap_or_else(|_| "unknown".into())
}

/// Write report, table and figures into `dir`; returns the files written,
/// relative to `dir`. The manifest is written separately, last.
pub fn write_outputs(dir: &Path, outcome: &Outcome, plots_enabled: bool) -> Result<Vec<String>, CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
    write_json(&dir.join("report.json"), &outcome.report)?;
    write(&dir.join("summary.csv"), &csv_bytes(&outcome.table)?)?;
    let mut files = vec!["report.json".to_string(), "summary.csv".to_string()];
    if plots_enabled && !outcome.figures.is_empty() {
        let plot_dir = dir.join("plots");
        match fs::create_dir_all(&plot_dir) {
            Ok(()) => {
                for fig in &outcome.figures {
                    match plots::render(fig, &plot_dir) {
                        Ok(_) => files.push(format!("plots/{}.svg", fig.name)),
                        Err(e) => log::warn!("plot {} skipped: {e}", fig.name),
                    }
                }
            }
            Err(e) => log::warn!("cannot create {}: {e}; plots skipped", plot_dir.display()),
        }
    }
    Ok(files)
}
