//! Experiment configuration files and their static validation.
//!
//! A config is a single TOML document. Unknown keys are rejected at parse time,
//! and blocks that belong to a different experiment are rejected at validation
//! time, so a config file is an unambiguous record of what was run.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, OnceLock};

use cps_core::arbitrage::{PriceMap, StrategySpec, ThresholdLattice, DEFAULT_TOL};
use cps_core::events::{EventLattice, TauRule, DEFAULT_BINS, MIN_ENSEMBLE};
use cps_core::measure::{make_chain_measure, BucketPolicy};
use cps_core::pathgen::{ModelSpec, TimeGrid};
use cps_core::retirement::{CrossingMode, LadderParams};
use cps_core::transforms::{
    analyze_drop, classify_limits, Builtin, DropAnalysis, TailClass, TransformRegistry, TransformSpec, MIN_PROBE,
    MIN_RESOLUTION,
};
use cps_core::Extent;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    CpsBuild,
    ConditionTest,
    NaTest,
    ArbitrageScan,
    TransformAnalyze,
    CfsWitness,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::CpsBuild => "cps-build",
            Experiment::ConditionTest => "condition-test",
            Experiment::NaTest => "na-test",
            Experiment::ArbitrageScan => "arbitrage-scan",
            Experiment::TransformAnalyze => "transform-analyze",
            Experiment::CfsWitness => "cfs-witness",
        }
    }

    /// Parameter block read by this experiment, if any.
    fn block(self) -> &'static str {
        match self {
            Experiment::CpsBuild => "cps",
            Experiment::ConditionTest | Experiment::NaTest => "events",
            Experiment::ArbitrageScan => "arbitrage",
            Experiment::TransformAnalyze => "transform",
            Experiment::CfsWitness => "witness",
        }
    }

    fn simulates(self) -> bool {
        self != Experiment::TransformAnalyze
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub n_paths: Option<usize>,
    pub base_seed: Option<u64>,
    /// Relative paths resolve against the working directory.
    pub output_dir: Option<PathBuf>,
    pub model: Option<ModelConfig>,
    pub grid: Option<GridConfig>,
    pub hypothesis: Option<HypothesisConfig>,
    pub cps: Option<CpsConfig>,
    pub events: Option<EventsConfig>,
    pub arbitrage: Option<ArbitrageConfig>,
    pub transform: Option<TransformConfig>,
    pub witness: Option<WitnessConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverName {
    Brownian,
    Fbm,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub driver: DriverName,
    pub hurst: Option<f64>,
    #[serde(default = "one")]
    pub sigma: f64,
    #[serde(default)]
    pub x0: f64,
    /// Builtin transform name applied pointwise to the driver.
    pub transform: Option<String>,
    /// Optional positive scale: the model becomes `scale * f(driver)`.
    pub scale: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "one")]
    pub horizon: f64,
    pub steps: usize,
}

/// Requested check of the transform hypothesis against a window bound `delta0`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisConfig {
    pub delta0: f64,
    #[serde(rename = "box", default = "default_box")]
    pub search_box: [f64; 2],
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpsConfig {
    pub eps0: Vec<f64>,
    #[serde(default)]
    pub mode: CrossingMode,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_horizon_rungs")]
    pub horizon_rungs: usize,
    #[serde(default = "default_max_buckets")]
    pub max_buckets: usize,
    #[serde(default = "default_min_visits")]
    pub min_visits: u64,
    #[serde(default = "default_min_effective_visits")]
    pub min_effective_visits: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventsConfig {
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_tau_rules")]
    pub tau: Vec<TauRule>,
    #[serde(default = "default_h")]
    pub h: Vec<f64>,
    #[serde(default = "default_delta")]
    pub delta: Vec<f64>,
    #[serde(default = "default_c")]
    pub c: Vec<f64>,
}

impl Default for EventsConfig {
    fn default() -> Self {
        EventsConfig {
            bins: default_bins(),
            tau: default_tau_rules(),
            h: default_h(),
            delta: default_delta(),
            c: default_c(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArbitrageConfig {
    #[serde(default = "default_min_wait")]
    pub min_wait: Vec<f64>,
    /// Deterministic trade times; defaults to quarters of the horizon.
    pub times: Option<Vec<f64>>,
    /// First-hit levels; defaults to `x0 ± 0.25` and `x0 ± 0.5`.
    pub levels: Option<Vec<f64>>,
    /// Cap for first-hit rules; defaults to 0.9 of the horizon.
    pub level_cap: Option<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub price_map: PriceMap,
    /// When set, a scan outcome that disagrees is a FAIL.
    pub expect_certificate: Option<bool>,
    /// Explicit strategies evaluated on the same ensemble.
    #[serde(default)]
    pub strategies: Vec<StrategySpec>,
}

impl Default for ArbitrageConfig {
    fn default() -> Self {
        ArbitrageConfig {
            min_wait: default_min_wait(),
            times: None,
            levels: None,
            level_cap: None,
            tol: default_tol(),
            price_map: PriceMap::default(),
            expect_certificate: None,
            strategies: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformConfig {
    pub ids: Vec<String>,
    #[serde(rename = "box", default = "default_box")]
    pub search_box: [f64; 2],
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    /// Wider boxes for the monotonicity check; each must contain `box`.
    #[serde(default = "default_widen")]
    pub widen: Vec<[f64; 2]>,
    /// Scale factors for the linearity check.
    #[serde(default = "default_scales")]
    pub scales: Vec<f64>,
    pub delta0: Option<f64>,
    /// Externally stated values of `d` to compare against, by transform id.
    #[serde(default)]
    pub reference_d: BTreeMap<String, f64>,
    #[serde(default = "default_reference_tol")]
    pub reference_tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WitnessExpectation {
    /// No path may stay inside the tube.
    #[default]
    Empty,
    /// Some path must stay inside the tube.
    Nonempty,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WitnessConfig {
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub expect: WitnessExpectation,
}

fn one() -> f64 {
    1.0
}
fn default_box() -> [f64; 2] {
    [-10.0, 10.0]
}
fn default_resolution() -> usize {
    100_000
}
fn default_beta() -> f64 {
    0.1
}
fn default_horizon_rungs() -> usize {
    200
}
fn default_max_buckets() -> usize {
    BucketPolicy::default().max_buckets
}
fn default_min_visits() -> u64 {
    BucketPolicy::default().min_visits
}
fn default_min_effective_visits() -> f64 {
    200.0
}
fn default_bins() -> usize {
    DEFAULT_BINS
}
fn default_tau_rules() -> Vec<TauRule> {
    vec![TauRule::Deterministic { time: 0.0 }, TauRule::Deterministic { time: 0.25 }]
}
fn default_h() -> Vec<f64> {
    vec![0.5]
}
fn default_delta() -> Vec<f64> {
    vec![0.75, 1.0]
}
fn default_c() -> Vec<f64> {
    vec![0.25, 0.5]
}
fn default_min_wait() -> Vec<f64> {
    vec![0.0, 0.25]
}
fn default_tol() -> f64 {
    DEFAULT_TOL
}
fn default_widen() -> Vec<[f64; 2]> {
    vec![[-20.0, 20.0], [-40.0, 40.0]]
}
fn default_scales() -> Vec<f64> {
    vec![0.5, 2.0]
}
fn default_reference_tol() -> f64 {
    1e-3
}

/// The calibrated default condition lattice.
pub fn default_event_lattice() -> EventLattice {
    let e = EventsConfig::default();
    EventLattice { tau_rules: e.tau, h: e.h, delta: e.delta, c: e.c }
}

/// Default threshold lattice for a model started at `x0` on `[0, horizon]`.
pub fn default_threshold_lattice(x0: f64, horizon: f64) -> ThresholdLattice {
    ThresholdLattice {
        times: [0.0, 0.25, 0.5, 0.75].iter().map(|q| q * horizon).collect(),
        levels: [-0.5, -0.25, 0.25, 0.5].iter().map(|d| x0 + d).collect(),
        level_cap: 0.9 * horizon,
    }
}

/// One validation failure, located by its config field.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Model, grid and transforms needed to generate paths.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub model: ModelSpec,
    pub grid: TimeGrid,
    pub registry: TransformRegistry,
}

#[derive(Debug, Clone)]
pub struct CpsParams {
    pub ladders: Vec<LadderParams>,
    pub beta: f64,
    pub horizon_rungs: usize,
    pub policy: BucketPolicy,
    pub min_effective_visits: f64,
}

#[derive(Debug, Clone)]
pub struct ArbitrageParams {
    pub min_wait: Vec<f64>,
    pub lattice: ThresholdLattice,
    pub tol: f64,
    pub price_map: PriceMap,
    pub expect_certificate: Option<bool>,
    pub strategies: Vec<StrategySpec>,
}

#[derive(Debug, Clone)]
pub struct TransformParams {
    pub specs: Vec<TransformSpec>,
    pub search_box: [f64; 2],
    pub resolution: usize,
    pub widen: Vec<[f64; 2]>,
    pub scales: Vec<f64>,
    pub delta0: Option<f64>,
    pub reference_d: BTreeMap<String, f64>,
    pub reference_tol: f64,
}

#[derive(Debug, Clone)]
pub struct WitnessParams {
    pub alpha: Vec<f64>,
    pub expect: WitnessExpectation,
    pub base: Builtin,
}

#[derive(Debug, Clone)]
pub enum Params {
    Cps(CpsParams),
    Condition { lattice: EventLattice, bins: usize },
    Na { lattice: EventLattice, bins: usize },
    Arbitrage(ArbitrageParams),
    Transform(TransformParams),
    Witness(WitnessParams),
}

/// Outcome of the transform hypothesis check, kept for the report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisCheck {
    pub transform: String,
    pub delta0: f64,
    pub tails: TailClass,
    /// `d` for divergent tails `(-inf, +inf)`, `d0` for `(+inf, -inf)`.
    pub functional: String,
    pub value: Extent,
    pub analysis: DropAnalysis,
    pub holds: bool,
}

/// A fully validated, ready-to-run experiment.
#[derive(Debug, Clone)]
pub struct Plan {
    pub experiment: Experiment,
    pub n_paths: usize,
    pub base_seed: u64,
    pub output_dir: Option<PathBuf>,
    pub simulation: Option<Simulation>,
    pub hypothesis: Option<HypothesisCheck>,
    pub params: Params,
}

/// Raw text plus parsed config.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub path: PathBuf,
    pub text: String,
    pub config: ExperimentConfig,
}

pub fn load(path: &Path) -> Result<LoadedConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    let config = parse(&text).map_err(|message| CliError::Parse { path: path.to_path_buf(), message })?;
    Ok(LoadedConfig { path: path.to_path_buf(), text, config })
}

/// Parse TOML; the error message carries line and column context.
pub fn parse(text: &str) -> Result<ExperimentConfig, String> {
    toml::from_str(text).map_err(|e| e.to_string())
}

#[derive(Default)]
struct Checker {
    diags: Vec<Diagnostic>,
}

impl Checker {
    fn fail(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.diags.push(Diagnostic { field: field.into(), message: message.into() });
    }

    fn ensure(&mut self, ok: bool, field: &str, message: impl FnOnce() -> String) {
        if !ok {
            self.fail(field, message());
        }
    }

    fn core<T>(&mut self, field: &str, r: cps_core::Result<T>) -> Option<T> {
        r.map_err(|e| self.fail(field, e.to_string())).ok()
    }
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

/// Validate `config` and resolve defaults. No paths are simulated.
pub fn validate(config: &ExperimentConfig) -> Result<Plan, Vec<Diagnostic>> {
    let mut ck = Checker::default();
    let exp = config.experiment;

    let blocks = [
        ("cps", config.cps.is_some()),
        ("events", config.events.is_some()),
        ("arbitrage", config.arbitrage.is_some()),
        ("transform", config.transform.is_some()),
        ("witness", config.witness.is_some()),
    ];
    for (name, present) in blocks {
        if present && name != exp.block() {
            ck.fail(name, format!("block is not read by experiment `{exp}`"));
        }
    }

    let simulation = if exp.simulates() { simulation(config, &mut ck) } else { None };
    if !exp.simulates() {
        for (field, present) in [
            ("model", config.model.is_some()),
            ("grid", config.grid.is_some()),
            ("n_paths", config.n_paths.is_some()),
            ("base_seed", config.base_seed.is_some()),
            ("hypothesis", config.hypothesis.is_some()),
        ] {
            if present {
                ck.fail(field, format!("`{exp}` does not simulate paths; remove this key"));
            }
        }
    }
    let n_paths = config.n_paths.unwrap_or(0);
    if exp.simulates() {
        match config.n_paths {
            None => ck.fail("n_paths", "required"),
            Some(0) => ck.fail("n_paths", "must be positive"),
            Some(n) if matches!(exp, Experiment::ConditionTest | Experiment::NaTest) && n < MIN_ENSEMBLE => {
                ck.fail("n_paths", format!("event estimates need at least {MIN_ENSEMBLE} paths, got {n}"))
            }
            _ => {}
        }
        ck.ensure(config.base_seed.is_some(), "base_seed", || "required".into());
    }

    let hypothesis = match (&config.hypothesis, &simulation) {
        (Some(h), Some(sim)) => hypothesis_check(h, sim, &mut ck),
        _ => None,
    };

    let params = match exp {
        Experiment::CpsBuild => cps_params(config, &mut ck).map(Params::Cps),
        Experiment::ConditionTest | Experiment::NaTest => {
            let e = config.events.clone().unwrap_or_default();
            let lattice = EventLattice { tau_rules: e.tau, h: e.h, delta: e.delta, c: e.c };
            ck.ensure(e.bins >= 1, "events.bins", || "must be at least 1".into());
            check_lattice(&lattice, simulation.as_ref(), &mut ck);
            Some(if exp == Experiment::ConditionTest {
                Params::Condition { lattice, bins: e.bins }
            } else {
                Params::Na { lattice, bins: e.bins }
            })
        }
        Experiment::ArbitrageScan => arbitrage_params(config, simulation.as_ref(), &mut ck).map(Params::Arbitrage),
        Experiment::TransformAnalyze => transform_params(config, &mut ck).map(Params::Transform),
        Experiment::CfsWitness => witness_params(config, simulation.as_ref(), &mut ck).map(Params::Witness),
    };

    match params {
        Some(params) if ck.diags.is_empty() => Ok(Plan {
            experiment: exp,
            n_paths,
            base_seed: config.base_seed.unwrap_or(0),
            output_dir: config.output_dir.clone(),
            simulation,
            hypothesis,
            params,
        }),
        _ => Err(ck.diags),
    }
}

fn builtin(name: &str, field: &str, ck: &mut Checker) -> Option<Builtin> {
    let b = Builtin::from_name(name);
    if b.is_none() {
        let known: Vec<&str> = Builtin::ALL.iter().map(|b| b.name()).collect();
        ck.fail(field, format!("unknown transform `{name}`; known: {}", known.join(", ")));
    }
    b
}

fn simulation(config: &ExperimentConfig, ck: &mut Checker) -> Option<Simulation> {
    let Some(m) = &config.model else {
        ck.fail("model", "required");
        return None;
    };
    let Some(g) = &config.grid else {
        ck.fail("grid", "required");
        return None;
    };
    let mut spec = match (m.driver, m.hurst) {
        (DriverName::Brownian, None) => ModelSpec::brownian(m.sigma, m.x0),
        (DriverName::Brownian, Some(_)) => {
            ck.fail("model.hurst", "only the fbm driver takes a Hurst index");
            return None;
        }
        (DriverName::Fbm, Some(h)) => ModelSpec::fbm(h, m.sigma, m.x0),
        (DriverName::Fbm, None) => {
            ck.fail("model.hurst", "required for the fbm driver");
            return None;
        }
    };
    ck.core("model", spec.validate())?;
    let mut registry = TransformRegistry::with_builtins();
    match (&m.transform, m.scale) {
        (Some(name), None) => {
            builtin(name, "model.transform", ck)?;
            spec = spec.with_transform(name.clone());
        }
        (Some(name), Some(scale)) => {
            let b = builtin(name, "model.transform", ck)?;
            let id = format!("scaled_{name}");
            ck.core("model.scale", registry.register_scaled(&id, b, scale))?;
            spec = spec.with_transform(id);
        }
        (None, Some(_)) => {
            ck.fail("model.scale", "a scale needs a transform");
            return None;
        }
        (None, None) => {}
    }
    let grid = ck.core("grid", TimeGrid::new(g.horizon, g.steps))?;
    Some(Simulation { model: spec, grid, registry })
}

type DropKey = (String, u64, u64, u64, usize);

/// Drop analyses are pure functions of their inputs; validation and the
/// transform experiment share them.
pub fn cached_drop(spec: &TransformSpec, search_box: [f64; 2], resolution: usize) -> cps_core::Result<DropAnalysis> {
    static CACHE: OnceLock<Mutex<HashMap<DropKey, DropAnalysis>>> = OnceLock::new();
    let key = (
        format!("{}:{}", spec.id, spec.builtin.name()),
        spec.alpha.to_bits(),
        search_box[0].to_bits(),
        search_box[1].to_bits(),
        resolution,
    );
    let cache = CACHE.get_or_init(Mutex::default);
    if let Some(hit) = cache.lock().expect("drop cache poisoned").get(&key) {
        return Ok(hit.clone());
    }
    let analysis = analyze_drop(spec, search_box, resolution)?;
    cache.lock().expect("drop cache poisoned").insert(key, analysis.clone());
    Ok(analysis)
}

fn hypothesis_check(h: &HypothesisConfig, sim: &Simulation, ck: &mut Checker) -> Option<HypothesisCheck> {
    let Some(id) = &sim.model.transform else {
        ck.fail("hypothesis", "the model has no transform to check");
        return None;
    };
    if !positive(h.delta0) {
        ck.fail("hypothesis.delta0", format!("must be positive, got {}", h.delta0));
        return None;
    }
    let spec = sim.registry.get(id).expect("registered during model resolution").clone();
    let analysis = ck.core("hypothesis", cached_drop(&spec, h.search_box, h.resolution))?;
    let tails = classify_limits(&spec, MIN_PROBE);
    let (functional, value, holds, message) = match tails {
        TailClass::CaseA => {
            let holds = analysis.d.finite().is_some_and(|d| d > -h.delta0);
            let msg = format!(
                "transform `{id}` diverges to -inf/+inf and needs min over y >= x of f(y) - f(x) > -delta0 = {}, \
                 but the grid oracle on [{}, {}] gives d = {}",
                -h.delta0,
                h.search_box[0],
                h.search_box[1],
                fmt_extent(analysis.d, "-inf"),
            );
            ("d", analysis.d, holds, msg)
        }
        TailClass::CaseB => {
            let holds = analysis.d0.finite().is_some_and(|d0| d0 < h.delta0);
            let msg = format!(
                "transform `{id}` diverges to +inf/-inf and needs max over y >= x of f(y) - f(x) < delta0 = {}, \
                 but the grid oracle on [{}, {}] gives d0 = {}",
                h.delta0,
                h.search_box[0],
                h.search_box[1],
                fmt_extent(analysis.d0, "+inf"),
            );
            ("d0", analysis.d0, holds, msg)
        }
        TailClass::Neither => {
            let msg =
                format!("transform `{id}` has no divergent tails of either orientation, so the hypothesis cannot hold");
            ("none", Extent::Unbounded, false, msg)
        }
    };
    if !holds {
        ck.fail("hypothesis.delta0", message);
    }
    Some(HypothesisCheck {
        transform: id.clone(),
        delta0: h.delta0,
        tails,
        functional: functional.into(),
        value,
        analysis,
        holds,
    })
}

fn fmt_extent(e: Extent, unbounded: &str) -> String {
    match e {
        Extent::Finite(v) => format!("{v}"),
        Extent::Unbounded => unbounded.to_string(),
    }
}

fn check_values(values: &[f64], field: &str, ck: &mut Checker) {
    if values.is_empty() {
        ck.fail(field, "must not be empty");
    }
    for (i, &v) in values.iter().enumerate() {
        ck.ensure(positive(v), &format!("{field}[{i}]"), || format!("must be positive and finite, got {v}"));
    }
}

fn check_lattice(lattice: &EventLattice, sim: Option<&Simulation>, ck: &mut Checker) {
    check_values(&lattice.h, "events.h", ck);
    check_values(&lattice.delta, "events.delta", ck);
    check_values(&lattice.c, "events.c", ck);
    ck.ensure(!lattice.tau_rules.is_empty(), "events.tau", || "must not be empty".into());
    let Some(sim) = sim else { return };
    let horizon = sim.grid.horizon();
    for (i, rule) in lattice.tau_rules.iter().enumerate() {
        for &h in &lattice.h {
            if !(h > 0.0 && h < horizon) {
                continue;
            }
            if let Err(e) = rule.validate(horizon, h) {
                ck.fail(format!("events.tau[{i}]"), e.to_string());
            }
        }
    }
    for (i, &h) in lattice.h.iter().enumerate() {
        ck.ensure(h < horizon, &format!("events.h[{i}]"), || format!("must be below the horizon {horizon}, got {h}"));
    }
}

fn cps_params(config: &ExperimentConfig, ck: &mut Checker) -> Option<CpsParams> {
    let Some(c) = &config.cps else {
        ck.fail("cps", "required for cps-build");
        return None;
    };
    ck.ensure(!c.eps0.is_empty(), "cps.eps0", || "must not be empty".into());
    let ladders: Vec<LadderParams> = c
        .eps0
        .iter()
        .enumerate()
        .filter_map(|(i, &e)| ck.core(&format!("cps.eps0[{i}]"), LadderParams::new(e, c.mode)))
        .collect();
    if let Some(&e) = c.eps0.first() {
        ck.core("cps.beta", make_chain_measure(e.max(f64::MIN_POSITIVE), c.beta));
    }
    ck.ensure(c.horizon_rungs >= 1, "cps.horizon_rungs", || "must be at least 1".into());
    ck.ensure(c.max_buckets >= 1, "cps.max_buckets", || "must be at least 1".into());
    ck.ensure(c.min_effective_visits >= 1.0, "cps.min_effective_visits", || "must be at least 1".into());
    Some(CpsParams {
        ladders,
        beta: c.beta,
        horizon_rungs: c.horizon_rungs,
        policy: BucketPolicy { max_buckets: c.max_buckets, min_visits: c.min_visits },
        min_effective_visits: c.min_effective_visits,
    })
}

fn arbitrage_params(config: &ExperimentConfig, sim: Option<&Simulation>, ck: &mut Checker) -> Option<ArbitrageParams> {
    let a = config.arbitrage.clone().unwrap_or_default();
    let (x0, horizon) = sim.map_or((0.0, 1.0), |s| (s.model.x0, s.grid.horizon()));
    let default = default_threshold_lattice(x0, horizon);
    let lattice = ThresholdLattice {
        times: a.times.unwrap_or(default.times),
        levels: a.levels.unwrap_or(default.levels),
        level_cap: a.level_cap.unwrap_or(default.level_cap),
    };
    ck.ensure(!lattice.times.is_empty() || !lattice.levels.is_empty(), "arbitrage", || {
        "threshold lattice is empty".into()
    });
    for (i, &t) in lattice.times.iter().enumerate() {
        ck.ensure(t.is_finite() && t >= 0.0, &format!("arbitrage.times[{i}]"), || {
            format!("must be a time >= 0, got {t}")
        });
    }
    for (i, &l) in lattice.levels.iter().enumerate() {
        ck.ensure(l.is_finite(), &format!("arbitrage.levels[{i}]"), || "must be finite".into());
    }
    ck.ensure(lattice.level_cap.is_finite() && lattice.level_cap >= 0.0, "arbitrage.level_cap", || {
        format!("must be a time >= 0, got {}", lattice.level_cap)
    });
    ck.ensure(!a.min_wait.is_empty(), "arbitrage.min_wait", || "must not be empty".into());
    for (i, &h) in a.min_wait.iter().enumerate() {
        ck.ensure(h.is_finite() && h >= 0.0, &format!("arbitrage.min_wait[{i}]"), || format!("must be >= 0, got {h}"));
    }
    ck.ensure(a.tol.is_finite() && a.tol >= 0.0, "arbitrage.tol", || format!("must be >= 0, got {}", a.tol));
    for (i, s) in a.strategies.iter().enumerate() {
        ck.core(&format!("arbitrage.strategies[{i}]"), s.validate());
    }
    Some(ArbitrageParams {
        min_wait: a.min_wait,
        lattice,
        tol: a.tol,
        price_map: a.price_map,
        expect_certificate: a.expect_certificate,
        strategies: a.strategies,
    })
}

fn transform_params(config: &ExperimentConfig, ck: &mut Checker) -> Option<TransformParams> {
    let Some(t) = &config.transform else {
        ck.fail("transform", "required for transform-analyze");
        return None;
    };
    ck.ensure(!t.ids.is_empty(), "transform.ids", || "must not be empty".into());
    let specs: Vec<TransformSpec> = t
        .ids
        .iter()
        .enumerate()
        .filter_map(|(i, id)| builtin(id, &format!("transform.ids[{i}]"), ck).map(TransformSpec::builtin))
        .collect();
    let [lo, hi] = t.search_box;
    ck.ensure(lo.is_finite() && hi.is_finite() && lo < hi, "transform.box", || {
        format!("[{lo}, {hi}] is not a finite interval")
    });
    ck.ensure(t.resolution >= MIN_RESOLUTION, "transform.resolution", || {
        format!("must be at least {MIN_RESOLUTION}, got {}", t.resolution)
    });
    for (i, &[wlo, whi]) in t.widen.iter().enumerate() {
        ck.ensure(
            wlo <= lo && whi >= hi && wlo.is_finite() && whi.is_finite(),
            &format!("transform.widen[{i}]"),
            || format!("[{wlo}, {whi}] does not contain the base box [{lo}, {hi}]"),
        );
    }
    check_values(&t.scales, "transform.scales", ck);
    if let Some(d) = t.delta0 {
        ck.ensure(positive(d), "transform.delta0", || format!("must be positive, got {d}"));
    }
    for id in t.reference_d.keys() {
        ck.ensure(t.ids.contains(id), &format!("transform.reference_d.{id}"), || "not among transform.ids".into());
    }
    Some(TransformParams {
        specs,
        search_box: t.search_box,
        resolution: t.resolution,
        widen: t.widen.clone(),
        scales: t.scales.clone(),
        delta0: t.delta0,
        reference_d: t.reference_d.clone(),
        reference_tol: t.reference_tol,
    })
}

fn witness_params(config: &ExperimentConfig, sim: Option<&Simulation>, ck: &mut Checker) -> Option<WitnessParams> {
    let Some(w) = &config.witness else {
        ck.fail("witness", "required for cfs-witness");
        return None;
    };
    for (i, &a) in w.alpha.iter().enumerate() {
        ck.ensure(a > 0.0 && a <= 1.0, &format!("witness.alpha[{i}]"), || format!("must lie in (0, 1], got {a}"));
    }
    ck.ensure(!w.alpha.is_empty(), "witness.alpha", || "must not be empty".into());
    let model = config.model.as_ref()?;
    ck.ensure(model.scale.is_none(), "model.scale", || {
        "the tube witness scales the transform by each alpha; remove model.scale".into()
    });
    let base = match &model.transform {
        Some(name) => builtin(name, "model.transform", ck)?,
        None => Builtin::Identity,
    };
    if let Some(sim) = sim {
        let horizon = sim.grid.horizon();
        ck.ensure(horizon == 1.0, "grid.horizon", || format!("the tube witness runs on [0, 1], got horizon {horizon}"));
    }
    Some(WitnessParams { alpha: w.alpha.clone(), expect: w.expect, base })
}
