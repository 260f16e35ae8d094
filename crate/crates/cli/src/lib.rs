//! Configuration-driven experiments on top of `cps-core`.
//!
//! [`validate_file`] checks a config without simulating; [`run_file`] runs it
//! and writes the output directory.

pub mod config;
pub mod error;
pub mod output;
pub mod plots;
pub mod runner;

use std::path::{Path, PathBuf};

pub use config::{Diagnostic, Experiment, Plan};
pub use error::CliError;
pub use runner::{Outcome, Report, RunVerdict};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Reported in the manifest; the pool itself is configured by the binary.
    pub threads: Option<usize>,
    pub no_plots: bool,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub verdict: RunVerdict,
    pub outcome: Outcome,
}

/// Parse and validate; on success the plan is ready to run.
pub fn validate_file(path: &Path) -> Result<Plan, CliError> {
    let loaded = config::load(path)?;
    config::validate(&loaded.config).map_err(CliError::Invalid)
}

pub fn run_file(path: &Path, opts: &RunOptions) -> Result<RunSummary, CliError> {
    let loaded = config::load(path)?;
    let mut plan = config::validate(&loaded.config).map_err(CliError::Invalid)?;
    if let Some(seed) = opts.seed {
        if plan.simulation.is_none() {
            log::warn!("--seed has no effect on `{}`", plan.experiment);
        }
        plan.base_seed = seed;
    }
    let dir = output::resolve_output_dir(opts.out.as_deref(), plan.output_dir.as_deref());
    log::info!("running `{}` into {}", plan.experiment, dir.display());
    let outcome = runner::run(&plan)?;
    let mut files = output::write_outputs(&dir, &outcome, !opts.no_plots)?;
    files.push("manifest.json".into());
    let simulates = plan.simulation.is_some();
    let manifest = output::Manifest {
        manifest_version: output::MANIFEST_VERSION,
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        experiment: plan.experiment.to_string(),
        verdict: outcome.report.verdict.as_str().into(),
        config_path: loaded.path.display().to_string(),
        config_sha256: output::sha256_hex(loaded.text.as_bytes()),
        base_seed: simulates.then_some(plan.base_seed),
        seed_from_command_line: opts.seed.is_some(),
        path_seed_rule: output::PATH_SEED_RULE,
        n_paths: simulates.then_some(plan.n_paths),
        threads: opts.threads.unwrap_or_else(current_threads),
        parallel: cps_core::par::is_parallel(),
        created_utc: output::now_rfc3339(),
        files,
    };
    output::write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(RunSummary { output_dir: dir, verdict: outcome.report.verdict, outcome })
}

#[cfg(feature = "parallel")]
fn current_threads() -> usize {
    rayon::current_num_threads()
}

#[cfg(not(feature = "parallel"))]
fn current_threads() -> usize {
    1
}

/// Size the global pool; a no-op without the `parallel` feature.
pub fn configure_threads(threads: Option<usize>) -> Result<(), CliError> {
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Threads(e.to_string()))?;
    }
    #[cfg(not(feature = "parallel"))]
    if threads.is_some_and(|n| n > 1) {
        log::warn!("built without the parallel feature; --threads ignored");
    }
    Ok(())
}
