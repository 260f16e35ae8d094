//! Executes a validated [`Plan`] and collects everything the writers need.

use std::collections::BTreeMap;

use cps_core::arbitrage::{
    evaluate_strategy, scan_threshold_strategies, strategy_gains, PnlReport, PnlVerdict, ScanReport,
};
use cps_core::events::{
    cfs_violation_witness, check_condition_a, check_na_condition, BinTally, CfsWitness, ConditionReport, EventEstimate,
    TauRule, Verdict,
};
use cps_core::measure::{
    expected_terminal, level_martingale_check, make_chain_measure, reweight_ensemble, weighted_terminal_mean,
    ChainMeasure, LevelCheck, TerminalExpectation, WeightedMean,
};
use cps_core::pathgen::{Ensemble, ModelSpec, PathGenerator, PathSource, TimeGrid};
use cps_core::retirement::{build_ladder, validate_sandwich, CrossingMode, FactorRange, LadderResult, SandwichReport};
use cps_core::stats::Summary;
use cps_core::transforms::{alpha_bound, classify_limits, AlphaInterval, Builtin, TailClass, TransformSpec, MIN_PROBE};
use cps_core::Extent;
use serde::Serialize;

use crate::config::{
    cached_drop, ArbitrageParams, CpsParams, Experiment, HypothesisCheck, Params, Plan, Simulation, TransformParams,
    WitnessExpectation, WitnessParams,
};
use crate::error::CliError;
use crate::plots::{Figure, Series};

pub const SCHEMA_VERSION: u32 = 1;

/// Tolerances of the cps-build verdict.
pub const CHAIN_DEFECT_TOL: f64 = 1e-14;
pub const STOPPED_EXPECTATION_TOL: f64 = 1e-10;
pub const TERMINAL_Z_MAX: f64 = 2.0;
pub const LEVEL_Z_MAX: f64 = 3.0;
/// Absolute-plus-relative slack when comparing drop values across boxes and scales.
pub const DROP_TOL: f64 = 1e-12;
/// Allowed gap between the grid oracle and the critical-point value of `d`.
pub const CRITICAL_POINT_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RunVerdict {
    Pass,
    Fail,
    Completed,
}

impl RunVerdict {
    fn from_bool(ok: bool) -> Self {
        if ok {
            RunVerdict::Pass
        } else {
            RunVerdict::Fail
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RunVerdict::Pass => "PASS",
            RunVerdict::Fail => "FAIL",
            RunVerdict::Completed => "COMPLETED",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub experiment: Experiment,
    pub verdict: RunVerdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_paths: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<TimeGrid>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hypothesis: Option<HypothesisCheck>,
    pub results: Results,
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum Results {
    Cps(Vec<CpsResult>),
    Condition(ConditionResult),
    Arbitrage(ArbitrageResult),
    Transform(Vec<TransformResult>),
    Witness(WitnessResult),
}

/// Rows of `summary.csv`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Report,
    pub table: Table,
    pub figures: Vec<Figure>,
}

pub fn run(plan: &Plan) -> Result<Outcome, CliError> {
    let (verdict, results, table, figures) = match &plan.params {
        Params::Cps(p) => run_cps(plan, p)?,
        Params::Condition { lattice, bins } => {
            let ensemble = ensemble(plan)?;
            condition_outcome(check_condition_a(&ensemble, lattice, *bins)?)?
        }
        Params::Na { lattice, bins } => {
            let ensemble = ensemble(plan)?;
            condition_outcome(check_na_condition(&ensemble, lattice, *bins)?)?
        }
        Params::Arbitrage(p) => run_arbitrage(plan, p)?,
        Params::Transform(p) => run_transform(p)?,
        Params::Witness(p) => run_witness(plan, p)?,
    };
    let sim = plan.simulation.as_ref();
    let report = Report {
        schema_version: SCHEMA_VERSION,
        experiment: plan.experiment,
        verdict,
        n_paths: sim.map(|_| plan.n_paths),
        base_seed: sim.map(|_| plan.base_seed),
        model: sim.map(|s| s.model.clone()),
        grid: sim.map(|s| s.grid),
        hypothesis: plan.hypothesis.clone(),
        results,
    };
    Ok(Outcome { report, table, figures })
}

type Parts = (RunVerdict, Results, Table, Vec<Figure>);

fn simulation(plan: &Plan) -> &Simulation {
    plan.simulation.as_ref().expect("validated simulating experiment")
}

fn ensemble(plan: &Plan) -> Result<Ensemble, CliError> {
    let sim = simulation(plan);
    let generator = PathGenerator::new(sim.model.clone(), sim.grid, &sim.registry)?;
    Ok(Ensemble::new(generator, plan.n_paths, plan.base_seed)?)
}

fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else if x != 0.0 && !(1e-4..1e15).contains(&x.abs()) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn extent(e: Extent) -> String {
    match e {
        Extent::Finite(v) => num(v),
        Extent::Unbounded => "unbounded".into(),
    }
}

// ---------------------------------------------------------------- cps-build

#[derive(Debug, Clone, Serialize)]
pub struct SandwichSummary {
    pub paths: u64,
    pub checked_points: u64,
    pub walk_over_price: FactorRange,
    pub anchor_over_price: FactorRange,
    pub rung_step: FactorRange,
    pub combined: FactorRange,
    pub envelope: [f64; 2],
    pub paths_outside_envelope: u64,
    /// Largest grid-snap allowance seen (zero in interpolated mode).
    pub max_tolerance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CpsResult {
    pub eps0: f64,
    pub mode: CrossingMode,
    pub rungs: Summary,
    pub sandwich: SandwichSummary,
    pub chain: ChainMeasure,
    pub mass_defect: f64,
    pub martingale_defect: f64,
    pub z0: f64,
    pub terminal_expectation: TerminalExpectation,
    pub tail_start: usize,
    pub effective_sample_size: f64,
    pub weighted_terminal: WeightedMean,
    pub terminal_z_score: f64,
    pub level_checks: Vec<LevelCheck>,
    pub max_abs_level_z: f64,
    pub checks: BTreeMap<String, bool>,
    pub pass: bool,
}

fn summarize_sandwich(reports: &[SandwichReport]) -> SandwichSummary {
    let first = &reports[0];
    let mut s = SandwichSummary {
        paths: reports.len() as u64,
        checked_points: 0,
        walk_over_price: first.walk_over_price,
        anchor_over_price: first.anchor_over_price,
        rung_step: first.rung_step,
        combined: first.combined,
        envelope: first.envelope,
        paths_outside_envelope: 0,
        max_tolerance: 0.0,
    };
    s.walk_over_price.violations = 0;
    s.anchor_over_price.violations = 0;
    s.rung_step.violations = 0;
    s.combined.violations = 0;
    for r in reports {
        s.checked_points += r.checked_points;
        s.walk_over_price.merge(&r.walk_over_price);
        s.anchor_over_price.merge(&r.anchor_over_price);
        s.rung_step.merge(&r.rung_step);
        s.combined.merge(&r.combined);
        s.paths_outside_envelope += u64::from(!r.envelope_holds);
        s.max_tolerance = s.max_tolerance.max(r.tolerance);
    }
    s
}

fn run_cps(plan: &Plan, p: &CpsParams) -> Result<Parts, CliError> {
    let ensemble = ensemble(plan)?;
    // One pass over the paths builds every ladder; paths are not kept.
    let per_path: Vec<Vec<(LadderResult, SandwichReport)>> = ensemble.map_paths(|_, path| {
        p.ladders
            .iter()
            .map(|params| {
                let ladder = build_ladder(path, params);
                let report = validate_sandwich(path, &ladder, params).expect("ladder built from this path");
                (ladder, report)
            })
            .collect()
    });

    let mut results = Vec::new();
    let mut figures = Vec::new();
    let mut table = Table::new(&[
        "eps0",
        "mode",
        "paths",
        "mean_rungs",
        "walk_violations",
        "anchor_violations",
        "rung_step_violations",
        "combined_min",
        "combined_max",
        "paths_outside_envelope",
        "mass_defect",
        "martingale_defect",
        "stopped_expectation",
        "weighted_terminal_mean",
        "weighted_terminal_se",
        "terminal_z",
        "effective_sample_size",
        "levels_checked",
        "max_abs_level_z",
        "pass",
    ]);
    for (k, params) in p.ladders.iter().enumerate() {
        let mut ladders = Vec::with_capacity(per_path.len());
        let mut sandwiches = Vec::with_capacity(per_path.len());
        for v in &per_path {
            ladders.push(v[k].0.clone());
            sandwiches.push(v[k].1.clone());
        }
        let rung_counts: Vec<f64> = ladders.iter().map(|l| l.n_moves() as f64).collect();
        let sandwich = summarize_sandwich(&sandwiches);
        let chain = make_chain_measure(params.eps0, p.beta)?;
        let z0 = ladders[0].z0();
        let terminal_expectation = expected_terminal(&chain, z0, p.horizon_rungs)?;
        let rw = reweight_ensemble(&ladders, &chain, p.policy)?;
        let weighted = weighted_terminal_mean(&ladders, &rw);
        let terminal_z = if weighted.std_error > 0.0 { (weighted.mean - z0) / weighted.std_error } else { 0.0 };
        let level_checks = level_martingale_check(&ladders, &rw, p.min_effective_visits);
        let max_abs_level_z = level_checks.iter().map(|c| c.z_score.abs()).fold(0.0, f64::max);

        let mut checks = BTreeMap::new();
        let snap = params.mode == CrossingMode::GridSnap;
        // Grid-snapped walks drift from the price by construction, so only the
        // per-rung factors are held to the bound there.
        checks.insert("walk_factor_within_bound".to_string(), snap || sandwich.walk_over_price.violations == 0);
        checks.insert("anchor_factor_within_bound".to_string(), sandwich.anchor_over_price.violations == 0);
        checks.insert("rung_step_within_bound".to_string(), sandwich.rung_step.violations == 0);
        checks.insert("envelope_holds".to_string(), snap || sandwich.paths_outside_envelope == 0);
        checks.insert(
            "chain_identities".to_string(),
            chain.mass_defect().abs() <= CHAIN_DEFECT_TOL && chain.martingale_defect().abs() <= CHAIN_DEFECT_TOL,
        );
        checks.insert(
            "stopped_expectation".to_string(),
            (terminal_expectation.stopped / z0 - 1.0).abs() <= STOPPED_EXPECTATION_TOL,
        );
        checks.insert("weighted_terminal_mean".to_string(), terminal_z.abs() <= TERMINAL_Z_MAX);
        checks.insert("level_martingale".to_string(), max_abs_level_z < LEVEL_Z_MAX);
        let pass = checks.values().all(|&b| b);

        table.rows.push(vec![
            num(params.eps0),
            format!("{:?}", params.mode).to_lowercase(),
            ladders.len().to_string(),
            num(cps_core::stats::mean(&rung_counts)),
            sandwich.walk_over_price.violations.to_string(),
            sandwich.anchor_over_price.violations.to_string(),
            sandwich.rung_step.violations.to_string(),
            num(sandwich.combined.min),
            num(sandwich.combined.max),
            sandwich.paths_outside_envelope.to_string(),
            num(chain.mass_defect()),
            num(chain.martingale_defect()),
            num(terminal_expectation.stopped),
            num(weighted.mean),
            num(weighted.std_error),
            num(terminal_z),
            num(rw.effective_sample_size),
            level_checks.len().to_string(),
            num(max_abs_level_z),
            pass.to_string(),
        ]);

        let first = ensemble.path(0);
        let ladder = &ladders[0];
        let steps: Vec<(f64, f64)> =
            ladder.taus.iter().zip(&ladder.z_values).take(ladder.retired_at).map(|(&t, &z)| (t, z.ln())).collect();
        figures.push(Figure {
            name: format!("ladder_eps{}", params.eps0),
            title: format!("First path and its ladder, eps0 = {}", params.eps0),
            x_label: "t".into(),
            y_label: "log price".into(),
            series: vec![
                Series::line("path", first.knots().collect()),
                Series::steps("log Z", &steps, first.horizon()),
            ],
        });
        figures.push(Figure {
            name: format!("levels_eps{}", params.eps0),
            title: format!("Per-level martingale z-scores, eps0 = {}", params.eps0),
            x_label: "level k".into(),
            y_label: "z".into(),
            series: vec![Series::points("z", level_checks.iter().map(|c| (c.level as f64, c.z_score)).collect())],
        });

        results.push(CpsResult {
            eps0: params.eps0,
            mode: params.mode,
            rungs: Summary::of(&rung_counts).expect("non-empty ensemble"),
            sandwich,
            mass_defect: chain.mass_defect(),
            martingale_defect: chain.martingale_defect(),
            chain,
            z0,
            terminal_expectation,
            tail_start: rw.tail_start,
            effective_sample_size: rw.effective_sample_size,
            weighted_terminal: weighted,
            terminal_z_score: terminal_z,
            level_checks,
            max_abs_level_z,
            checks,
            pass,
        });
    }
    let verdict = RunVerdict::from_bool(results.iter().all(|r| r.pass));
    Ok((verdict, Results::Cps(results), table, figures))
}

// ------------------------------------------------------- condition / NA tests

#[derive(Debug, Clone, Serialize)]
pub struct ConditionResult {
    #[serde(flatten)]
    pub report: ConditionReport,
    /// Human-readable description of each failing cell.
    pub failing: Vec<String>,
}

fn tau_label(t: &TauRule) -> String {
    match *t {
        TauRule::Deterministic { time } => format!("deterministic({time})"),
        TauRule::FirstHit { level, cap } => format!("first_hit({level}, cap {cap})"),
    }
}

fn bin_label(b: &BinTally) -> String {
    let lo = b.lower.map_or("-inf".to_string(), |v| format!("{v:.4}"));
    let hi = b.upper.map_or("+inf".to_string(), |v| format!("{v:.4}"));
    format!("({lo}, {hi}]")
}

fn worst_bin(cell: &EventEstimate) -> Option<&BinTally> {
    cell.conditioning_bins
        .as_ref()?
        .iter()
        .filter(|b| b.total > 0)
        .min_by(|a, b| (a.hits as f64 / a.total as f64).total_cmp(&(b.hits as f64 / b.total as f64)))
}

pub fn describe_cell(cell: &EventEstimate) -> String {
    let s = &cell.spec;
    let mut text = format!(
        "j={} tau={} h={} delta={} c={}: {} of {} paths",
        s.j,
        tau_label(&s.tau),
        s.h,
        extent(s.delta),
        s.c,
        cell.hits,
        cell.n_paths
    );
    if let Some(b) = worst_bin(cell) {
        text.push_str(&format!(", worst bin X_tau in {} has {} of {}", bin_label(b), b.hits, b.total));
    }
    text
}

fn condition_outcome(report: ConditionReport) -> Result<Parts, CliError> {
    let mut table = Table::new(&[
        "j",
        "tau",
        "h",
        "delta",
        "c",
        "hits",
        "n_paths",
        "p_hat",
        "wilson_lo",
        "wilson_hi",
        "worst_bin",
        "worst_bin_hits",
        "worst_bin_total",
        "empty_bins",
        "pass",
    ]);
    for cell in &report.cells {
        let s = &cell.spec;
        let worst = worst_bin(cell);
        table.rows.push(vec![
            format!("{}", s.j),
            tau_label(&s.tau),
            num(s.h),
            extent(s.delta),
            num(s.c),
            cell.hits.to_string(),
            cell.n_paths.to_string(),
            num(cell.p_hat),
            num(cell.wilson_lo),
            num(cell.wilson_hi),
            worst.map_or(String::new(), bin_label),
            worst.map_or(String::new(), |b| b.hits.to_string()),
            worst.map_or(String::new(), |b| b.total.to_string()),
            cell.empty_bins.to_string(),
            cell.passes().to_string(),
        ]);
    }
    let lows: Vec<(f64, f64)> = report
        .cells
        .iter()
        .enumerate()
        .map(|(i, c)| (i as f64, worst_bin(c).map_or(c.wilson_lo, |b| b.wilson_lo)))
        .collect();
    let p_hats: Vec<(f64, f64)> = report.cells.iter().enumerate().map(|(i, c)| (i as f64, c.p_hat)).collect();
    let figure = Figure {
        name: "event_cells".into(),
        title: format!("Event cells, condition {:?}", report.condition),
        x_label: "cell".into(),
        y_label: "probability".into(),
        series: vec![Series::points("p_hat", p_hats), Series::points("worst-bin Wilson lower bound", lows)],
    };
    let failing = report.failing_cells.iter().map(|&i| describe_cell(&report.cells[i])).collect();
    let verdict = match report.verdict {
        Verdict::Pass => RunVerdict::Pass,
        Verdict::Fail => RunVerdict::Fail,
    };
    Ok((verdict, Results::Condition(ConditionResult { report, failing }), table, vec![figure]))
}

// ------------------------------------------------------------ arbitrage-scan

#[derive(Debug, Clone, Serialize)]
pub struct ArbitrageResult {
    pub lattice: cps_core::arbitrage::ThresholdLattice,
    pub scans: Vec<ScanReport>,
    pub strategies: Vec<PnlReport>,
    pub certificate_found: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expect_certificate: Option<bool>,
}

fn pnl_row(table: &mut Table, source: String, min_wait: f64, counts: [String; 3], best: &PnlReport) {
    let [candidates, admissible, certificates] = counts;
    table.rows.push(vec![
        source,
        num(min_wait),
        candidates,
        admissible,
        certificates,
        format!("{:?}", best.verdict),
        num(best.gains.min),
        num(best.gains.mean),
        num(best.gains.max),
        num(best.frac_positive_beyond_tol),
        num(best.frac_negative_beyond_tol),
        best.gains_digest.clone(),
    ]);
}

fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64)> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) {
        return Vec::new();
    }
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0u64; bins];
    for &v in values {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let mut out = Vec::with_capacity(3 * bins);
    for (i, &c) in counts.iter().enumerate() {
        let x = lo + i as f64 * width;
        out.extend([(x, 0.0), (x, c as f64), (x + width, c as f64), (x + width, 0.0)]);
    }
    out
}

fn run_arbitrage(plan: &Plan, p: &ArbitrageParams) -> Result<Parts, CliError> {
    let ensemble = ensemble(plan)?;
    let mut table = Table::new(&[
        "source",
        "min_wait",
        "candidates",
        "admissible",
        "certificates",
        "verdict",
        "gain_min",
        "gain_mean",
        "gain_max",
        "frac_positive",
        "frac_negative",
        "gains_digest",
    ]);
    let mut scans = Vec::new();
    for &h in &p.min_wait {
        let scan = scan_threshold_strategies(&ensemble, h, &p.lattice, p.tol, p.price_map)?;
        pnl_row(
            &mut table,
            format!("scan best #{}", scan.best_index),
            h,
            [scan.candidates.to_string(), scan.admissible.to_string(), scan.certificates.len().to_string()],
            &scan.best,
        );
        scans.push(scan);
    }
    let mut strategies = Vec::new();
    let mut figures = Vec::new();
    for (i, s) in p.strategies.iter().enumerate() {
        let report = evaluate_strategy(&ensemble, s, p.price_map, p.tol)?;
        let certified = usize::from(report.verdict == PnlVerdict::ArbitrageCertificate);
        pnl_row(
            &mut table,
            format!("strategy {i}"),
            s.min_wait,
            [String::new(), String::new(), certified.to_string()],
            &report,
        );
        let gains = strategy_gains(&ensemble, s, p.price_map)?;
        figures.push(Figure {
            name: format!("strategy_{i}_gains"),
            title: format!("Gains of strategy {i}"),
            x_label: "gain".into(),
            y_label: "paths".into(),
            series: vec![Series::line("count", histogram(&gains, 40))],
        });
        strategies.push(report);
    }
    figures.push(Figure {
        name: "scan_best".into(),
        title: "Best scanned strategy by minimal waiting time".into(),
        x_label: "minimal waiting time".into(),
        y_label: "gain".into(),
        series: vec![
            Series::points("min gain", scans.iter().map(|s| (s.min_wait, s.best.gains.min)).collect()),
            Series::points("mean gain", scans.iter().map(|s| (s.min_wait, s.best.gains.mean)).collect()),
        ],
    });
    let certificate_found = scans.iter().any(|s| s.certificate_found)
        || strategies.iter().any(|r| r.verdict == PnlVerdict::ArbitrageCertificate);
    let verdict = match p.expect_certificate {
        Some(expected) => RunVerdict::from_bool(expected == certificate_found),
        None => RunVerdict::Completed,
    };
    let result = ArbitrageResult {
        lattice: p.lattice.clone(),
        scans,
        strategies,
        certificate_found,
        expect_certificate: p.expect_certificate,
    };
    Ok((verdict, Results::Arbitrage(result), table, figures))
}

// --------------------------------------------------------- transform-analyze

#[derive(Debug, Clone, Serialize)]
pub struct WideningCheck {
    pub search_box: [f64; 2],
    pub resolution: usize,
    pub d_on_box: f64,
    pub d0_on_box: f64,
    /// `d` can only fall and `d0` only rise as the box grows.
    pub monotone: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingCheck {
    pub alpha: f64,
    pub d_on_box: f64,
    pub d0_on_box: f64,
    pub linear: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransformResult {
    pub id: String,
    pub tails: TailClass,
    pub d: Extent,
    pub d0: Extent,
    pub d_on_box: f64,
    pub d0_on_box: f64,
    pub search_box: [f64; 2],
    pub resolution: usize,
    /// Largest fall between local extrema, known in closed form.
    pub critical_point_d: f64,
    pub agrees_with_critical_points: bool,
    pub widening: Vec<WideningCheck>,
    pub scaling: Vec<ScalingCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_interval: Option<AlphaInterval>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_note: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agrees_with_reference: Option<bool>,
    pub pass: bool,
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= DROP_TOL * (1.0 + a.abs().max(b.abs()))
}

fn analyze_one(spec: &TransformSpec, p: &TransformParams) -> Result<TransformResult, CliError> {
    let base = cached_drop(spec, p.search_box, p.resolution)?;
    let base_width = p.search_box[1] - p.search_box[0];
    let mut widening = Vec::new();
    let (mut prev_d, mut prev_d0) = (base.d_on_box, base.d0_on_box);
    let mut boxes = p.widen.clone();
    boxes.sort_by(|a, b| (a[1] - a[0]).total_cmp(&(b[1] - b[0])));
    for b in boxes {
        // Same spacing as the base grid, so the wider grid contains it.
        let resolution = (p.resolution as f64 * (b[1] - b[0]) / base_width).round() as usize;
        let a = cached_drop(spec, b, resolution)?;
        let monotone = a.d_on_box <= prev_d + DROP_TOL * (1.0 + prev_d.abs())
            && a.d0_on_box >= prev_d0 - DROP_TOL * (1.0 + prev_d0.abs());
        prev_d = a.d_on_box;
        prev_d0 = a.d0_on_box;
        widening.push(WideningCheck {
            search_box: b,
            resolution,
            d_on_box: a.d_on_box,
            d0_on_box: a.d0_on_box,
            monotone,
        });
    }
    let mut scaling = Vec::new();
    for &alpha in &p.scales {
        let scaled = TransformSpec::scaled(format!("{}*{alpha}", spec.id), spec.builtin, alpha * spec.alpha)?;
        let a = cached_drop(&scaled, p.search_box, p.resolution)?;
        let linear = close(a.d_on_box, alpha * base.d_on_box) && close(a.d0_on_box, alpha * base.d0_on_box);
        scaling.push(ScalingCheck { alpha, d_on_box: a.d_on_box, d0_on_box: a.d0_on_box, linear });
    }
    let (alpha_interval, alpha_note) = match p.delta0 {
        Some(delta0) => match alpha_bound(spec, delta0, &base) {
            Ok(i) => (Some(i), None),
            Err(e) => (None, Some(e.to_string())),
        },
        None => (None, None),
    };
    let critical_point_d = spec.alpha * spec.builtin.critical_point_drop();
    let agrees_with_critical_points = (base.d_on_box - critical_point_d).abs() <= CRITICAL_POINT_TOL;
    let reference_d = p.reference_d.get(&spec.id).copied();
    let agrees_with_reference = reference_d.map(|r| (base.d_on_box - r).abs() <= p.reference_tol);
    let pass = agrees_with_critical_points && widening.iter().all(|w| w.monotone) && scaling.iter().all(|s| s.linear);
    debug_assert_eq!(base.tails, classify_limits(spec, MIN_PROBE));
    Ok(TransformResult {
        id: spec.id.clone(),
        tails: base.tails,
        d: base.d,
        d0: base.d0,
        d_on_box: base.d_on_box,
        d0_on_box: base.d0_on_box,
        search_box: p.search_box,
        resolution: p.resolution,
        critical_point_d,
        agrees_with_critical_points,
        widening,
        scaling,
        alpha_interval,
        alpha_note,
        reference_d,
        agrees_with_reference,
        pass,
    })
}

fn run_transform(p: &TransformParams) -> Result<Parts, CliError> {
    let results: Vec<TransformResult> = p.specs.iter().map(|s| analyze_one(s, p)).collect::<Result<_, _>>()?;
    let mut table = Table::new(&[
        "id",
        "tails",
        "d",
        "d0",
        "d_on_box",
        "d0_on_box",
        "critical_point_d",
        "reference_d",
        "agrees_with_reference",
        "widening_monotone",
        "scaling_linear",
        "alpha_upper",
        "pass",
    ]);
    for r in &results {
        table.rows.push(vec![
            r.id.clone(),
            format!("{:?}", r.tails),
            extent(r.d),
            extent(r.d0),
            num(r.d_on_box),
            num(r.d0_on_box),
            num(r.critical_point_d),
            r.reference_d.map_or(String::new(), num),
            r.agrees_with_reference.map_or(String::new(), |b| b.to_string()),
            r.widening.iter().all(|w| w.monotone).to_string(),
            r.scaling.iter().all(|s| s.linear).to_string(),
            r.alpha_interval.map_or(String::new(), |i| extent(i.upper)),
            r.pass.to_string(),
        ]);
    }
    let xs: Vec<f64> = (0..=600).map(|i| -3.0 + i as f64 * 0.01).collect();
    let figure = Figure {
        name: "transforms".into(),
        title: "Transforms on [-3, 3]".into(),
        x_label: "x".into(),
        y_label: "f(x)".into(),
        series: p
            .specs
            .iter()
            .map(|s| Series::line(s.id.clone(), xs.iter().map(|&x| (x, s.apply(x))).collect()))
            .collect(),
    };
    let verdict = RunVerdict::from_bool(results.iter().all(|r| r.pass));
    Ok((verdict, Results::Transform(results), table, vec![figure]))
}

// --------------------------------------------------------------- cfs-witness

#[derive(Debug, Clone, Serialize)]
pub struct WitnessResult {
    pub base_transform: Builtin,
    pub expect: WitnessExpectation,
    pub witnesses: Vec<CfsWitness>,
}

fn run_witness(plan: &Plan, p: &WitnessParams) -> Result<Parts, CliError> {
    let sim = simulation(plan);
    let mut registry = sim.registry.clone();
    let mut witnesses = Vec::new();
    for &alpha in &p.alpha {
        let id = format!("{}_x{alpha}", p.base.name());
        registry.register_scaled(&id, p.base, alpha)?;
        let model = sim.model.clone().with_transform(id);
        let generator = PathGenerator::new(model, sim.grid, &registry)?;
        let ensemble = Ensemble::new(generator, plan.n_paths, plan.base_seed)?;
        witnesses.push(cfs_violation_witness(&ensemble, alpha)?);
    }
    let mut table =
        Table::new(&["alpha", "n_paths", "inside", "fraction_inside", "wilson_hi", "distance_min", "distance_median"]);
    for w in &witnesses {
        table.rows.push(vec![
            num(w.alpha),
            w.n_paths.to_string(),
            w.inside.to_string(),
            num(w.fraction_inside),
            num(w.wilson_hi),
            num(w.distance.min),
            num(w.distance.median),
        ]);
    }
    let ok = witnesses.iter().all(|w| match p.expect {
        WitnessExpectation::Empty => w.inside == 0,
        WitnessExpectation::Nonempty => w.inside > 0,
    });
    let figure = Figure {
        name: "tube_distance".into(),
        title: "Closest approach to the tube around S_0 - t".into(),
        x_label: "alpha".into(),
        y_label: "sup |S_t - S_0 + t|".into(),
        series: vec![
            Series::points("minimum over paths", witnesses.iter().map(|w| (w.alpha, w.distance.min)).collect()),
            Series::line("tube radius", witnesses.iter().map(|w| (w.alpha, w.alpha)).collect()),
        ],
    };
    let result = WitnessResult { base_transform: p.base, expect: p.expect, witnesses };
    Ok((RunVerdict::from_bool(ok), Results::Witness(result), table, vec![figure]))
}
