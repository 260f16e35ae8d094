//! Frictionless P&L of simple strategies with a minimal waiting time between
//! trades, and a small lattice search for arbitrage certificates.
//!
//! The search only ever certifies arbitrage; finding nothing is reported as
//! "no certificate found" over the searched class, never as no-arbitrage.

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::pathgen::{PathSource, ReplayInfo, SamplePath};
use crate::stats::Summary;

pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum TradeRule {
    Deterministic {
        time: f64,
    },
    /// First time the process reaches `level` after the previous trade, or
    /// `cap` if it does not.
    FirstHitAbs {
        level: f64,
        cap: f64,
    },
}

impl TradeRule {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            TradeRule::Deterministic { time } => time.is_finite() && time >= 0.0,
            TradeRule::FirstHitAbs { level, cap } => level.is_finite() && cap.is_finite() && cap >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(param(format!("malformed trade rule {self:?}")))
        }
    }

    fn latest(&self) -> f64 {
        match *self {
            TradeRule::Deterministic { time } => time,
            TradeRule::FirstHitAbs { cap, .. } => cap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Leg {
    pub entry: TradeRule,
    pub exit: TradeRule,
    pub size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    pub legs: Vec<Leg>,
    #[serde(default)]
    pub min_wait: f64,
}

impl StrategySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_wait.is_finite() && self.min_wait >= 0.0) {
            return Err(param(format!("min_wait must be non-negative, got {}", self.min_wait)));
        }
        for leg in &self.legs {
            leg.entry.validate()?;
            leg.exit.validate()?;
            if !leg.size.is_finite() {
                return Err(param("leg size must be finite"));
            }
        }
        Ok(())
    }

    /// The same trades with every size negated.
    pub fn negated(&self) -> StrategySpec {
        StrategySpec { legs: self.legs.iter().map(|l| Leg { size: -l.size, ..*l }).collect(), min_wait: self.min_wait }
    }

    /// Buy at time 0 and sell at the first hit of `level`, capped at `cap`.
    pub fn buy_and_hold_until_hit(level: f64, cap: f64) -> StrategySpec {
        StrategySpec {
            legs: vec![Leg {
                entry: TradeRule::Deterministic { time: 0.0 },
                exit: TradeRule::FirstHitAbs { level, cap },
                size: 1.0,
            }],
            min_wait: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PriceMap {
    /// The path is a log-price.
    #[default]
    Exp,
    /// The path is already on the price scale.
    Identity,
}

impl PriceMap {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            PriceMap::Exp => x.exp(),
            PriceMap::Identity => x,
        }
    }
}

/// Gain of one path plus how the waiting-time rule intervened.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PathOutcome {
    pub gain: f64,
    pub deferred: u32,
    pub skipped: u32,
    pub clipped: bool,
}

struct Resolved {
    t: f64,
    value: f64,
    deferred: bool,
    clipped: bool,
}

/// Trade time for `rule`, searching from `anchor` and deferring anything
/// earlier than `earliest`. `None` when the trade would land after the horizon.
fn resolve(rule: &TradeRule, path: &SamplePath, anchor: f64, earliest: f64) -> Option<Resolved> {
    let horizon = path.horizon();
    let clipped = rule.latest() > horizon;
    let (t, value) = match *rule {
        TradeRule::Deterministic { time } => {
            let t = time.min(horizon);
            (t, None)
        }
        TradeRule::FirstHitAbs { level, cap } => {
            let cap = cap.min(horizon);
            match path.first_hit(level, anchor, cap) {
                Some(t) => (t, Some(level)),
                None => (cap.max(anchor), None),
            }
        }
    };
    if t >= earliest {
        if t > horizon {
            return None;
        }
        let value = value.unwrap_or_else(|| path.value_at(t));
        return Some(Resolved { t, value, deferred: false, clipped });
    }
    if earliest > horizon {
        return None;
    }
    Some(Resolved { t: earliest, value: path.value_at(earliest), deferred: true, clipped })
}

pub fn evaluate_path(path: &SamplePath, strategy: &StrategySpec, price_map: PriceMap) -> PathOutcome {
    let h = strategy.min_wait;
    let mut out = PathOutcome::default();
    let mut last: Option<f64> = None;
    for leg in &strategy.legs {
        let anchor = last.unwrap_or(0.0);
        let earliest = last.map_or(0.0, |t| t + h);
        let Some(entry) = resolve(&leg.entry, path, anchor, earliest) else {
            out.skipped += 1;
            continue;
        };
        let Some(exit) = resolve(&leg.exit, path, entry.t, entry.t + h) else {
            out.skipped += 1;
            out.clipped |= entry.clipped;
            continue;
        };
        out.deferred += u32::from(entry.deferred) + u32::from(exit.deferred);
        out.clipped |= entry.clipped || exit.clipped;
        out.gain += leg.size * (price_map.apply(exit.value) - price_map.apply(entry.value));
        last = Some(exit.t);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PnlVerdict {
    ArbitrageCertificate,
    NoArbitrageEvidence,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnlReport {
    pub strategy: StrategySpec,
    pub price_map: PriceMap,
    pub n_paths: u64,
    pub gains: Summary,
    pub tol: f64,
    pub frac_negative_beyond_tol: f64,
    pub frac_positive_beyond_tol: f64,
    pub verdict: PnlVerdict,
    pub deferred_trades: u64,
    pub skipped_legs: u64,
    /// Some rule referred to a time beyond the horizon and was clipped to it.
    pub clipped_rules: bool,
    /// FNV-1a digest of the per-path gains' bit patterns, in path order.
    pub gains_digest: String,
    pub replay: Option<ReplayInfo>,
}

pub fn gains_digest(gains: &[f64]) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for g in gains {
        for byte in g.to_bits().to_le_bytes() {
            hash ^= u64::from(byte);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    format!("{hash:016x}")
}

fn verdict(neg: u64, pos: u64) -> PnlVerdict {
    match (neg, pos) {
        (0, p) if p > 0 => PnlVerdict::ArbitrageCertificate,
        (n, 0) if n > 0 => PnlVerdict::Inconclusive,
        _ => PnlVerdict::NoArbitrageEvidence,
    }
}

fn build_report(
    strategy: &StrategySpec,
    price_map: PriceMap,
    tol: f64,
    outcomes: &[PathOutcome],
    replay: Option<ReplayInfo>,
) -> PnlReport {
    let gains: Vec<f64> = outcomes.iter().map(|o| o.gain).collect();
    let n = gains.len() as u64;
    let neg = gains.iter().filter(|&&g| g < -tol).count() as u64;
    let pos = gains.iter().filter(|&&g| g > tol).count() as u64;
    PnlReport {
        strategy: strategy.clone(),
        price_map,
        n_paths: n,
        gains: Summary::of(&gains).expect("non-empty ensemble"),
        tol,
        frac_negative_beyond_tol: neg as f64 / n as f64,
        frac_positive_beyond_tol: pos as f64 / n as f64,
        verdict: verdict(neg, pos),
        deferred_trades: outcomes.iter().map(|o| u64::from(o.deferred)).sum(),
        skipped_legs: outcomes.iter().map(|o| u64::from(o.skipped)).sum(),
        clipped_rules: outcomes.iter().any(|o| o.clipped),
        gains_digest: gains_digest(&gains),
        replay,
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if tol.is_finite() && tol >= 0.0 {
        Ok(())
    } else {
        Err(param(format!("tolerance must be non-negative, got {tol}")))
    }
}

/// Per-path gains, in path order.
pub fn strategy_gains<S: PathSource + ?Sized>(
    source: &S,
    strategy: &StrategySpec,
    price_map: PriceMap,
) -> Result<Vec<f64>> {
    strategy.validate()?;
    Ok(source.map_paths(|_, p| evaluate_path(p, strategy, price_map).gain))
}

pub fn evaluate_strategy<S: PathSource + ?Sized>(
    source: &S,
    strategy: &StrategySpec,
    price_map: PriceMap,
    tol: f64,
) -> Result<PnlReport> {
    strategy.validate()?;
    check_tol(tol)?;
    if source.n_paths() == 0 {
        return Err(param("cannot evaluate a strategy on an empty ensemble"));
    }
    let outcomes = source.map_paths(|_, p| evaluate_path(p, strategy, price_map));
    Ok(build_report(strategy, price_map, tol, &outcomes, source.replay_info()))
}

/// Thresholds searched by [`scan_threshold_strategies`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdLattice {
    pub times: Vec<f64>,
    pub levels: Vec<f64>,
    /// Cap applied to every first-hit rule.
    pub level_cap: f64,
}

impl ThresholdLattice {
    fn rules(&self) -> Vec<TradeRule> {
        let mut rules: Vec<TradeRule> = self.times.iter().map(|&time| TradeRule::Deterministic { time }).collect();
        rules.extend(self.levels.iter().map(|&level| TradeRule::FirstHitAbs { level, cap: self.level_cap }));
        rules
    }

    /// Candidate strategies: a flat baseline first, then every ordered pair of
    /// rules traded long and short. Deterministic pairs that cannot be in
    /// order are left out.
    pub fn candidates(&self, min_wait: f64) -> Vec<StrategySpec> {
        let rules = self.rules();
        let mut out = vec![StrategySpec { legs: Vec::new(), min_wait }];
        for entry in &rules {
            for exit in &rules {
                if let (TradeRule::Deterministic { time: a }, TradeRule::Deterministic { time: b }) = (entry, exit) {
                    if b <= a {
                        continue;
                    }
                }
                for size in [1.0, -1.0] {
                    out.push(StrategySpec { legs: vec![Leg { entry: *entry, exit: *exit, size }], min_wait });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub min_wait: f64,
    pub candidates: usize,
    /// Candidates whose trades never needed deferral or skipping on any path.
    pub admissible: usize,
    pub certificate_found: bool,
    /// Lattice indices of admissible candidates with a certificate.
    pub certificates: Vec<usize>,
    pub best_index: usize,
    pub best: PnlReport,
}

/// Evaluate every admissible lattice strategy and pick, among the flat
/// baseline and the candidates with positive mean gain, the one with the
/// largest minimum gain (ties: larger mean, then lower index).
///
/// A candidate is admissible only if the waiting time never forced a deferral
/// or skip on any path, so enlarging `min_wait` can only remove candidates.
pub fn scan_threshold_strategies<S: PathSource + ?Sized>(
    source: &S,
    min_wait: f64,
    lattice: &ThresholdLattice,
    tol: f64,
    price_map: PriceMap,
) -> Result<ScanReport> {
    check_tol(tol)?;
    if lattice.times.is_empty() && lattice.levels.is_empty() {
        return Err(param("threshold lattice is empty"));
    }
    if source.n_paths() == 0 {
        return Err(param("cannot scan on an empty ensemble"));
    }
    let candidates = lattice.candidates(min_wait);
    for c in &candidates {
        c.validate()?;
    }
    let per_path: Vec<Vec<PathOutcome>> =
        source.map_paths(|_, p| candidates.iter().map(|c| evaluate_path(p, c, price_map)).collect());
    let replay = source.replay_info();

    let mut admissible = 0;
    let mut certificates = Vec::new();
    let mut best: Option<(usize, PnlReport)> = None;
    for (ci, c) in candidates.iter().enumerate() {
        let outcomes: Vec<PathOutcome> = per_path.iter().map(|v| v[ci]).collect();
        if outcomes.iter().any(|o| o.deferred > 0 || o.skipped > 0) {
            continue;
        }
        admissible += 1;
        let report = build_report(c, price_map, tol, &outcomes, replay.clone());
        if report.verdict == PnlVerdict::ArbitrageCertificate {
            certificates.push(ci);
        }
        if ci > 0 && report.gains.mean <= 0.0 {
            continue;
        }
        let better = match &best {
            None => true,
            Some((_, b)) => {
                report.gains.min > b.gains.min || (report.gains.min == b.gains.min && report.gains.mean > b.gains.mean)
            }
        };
        if better {
            best = Some((ci, report));
        }
    }
    let (best_index, best) = best.expect("the flat baseline is always admissible");
    Ok(ScanReport {
        min_wait,
        candidates: candidates.len(),
        admissible,
        certificate_found: !certificates.is_empty(),
        certificates,
        best_index,
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pathgen::TimeGrid;

    fn path(values: Vec<f64>) -> SamplePath {
        let n = values.len() - 1;
        SamplePath::new(TimeGrid::new(1.0, n).unwrap(), values, 0, "test").unwrap()
    }

    fn leg(entry: TradeRule, exit: TradeRule, size: f64) -> Leg {
        Leg { entry, exit, size }
    }

    const fn det(time: f64) -> TradeRule {
        TradeRule::Deterministic { time }
    }

    #[test]
    fn buy_and_hold_snaps_to_level() {
        let p = path(vec![0.0, 0.2, 0.7, 0.1, 0.0]);
        let s = StrategySpec::buy_and_hold_until_hit(0.5, 1.0);
        let o = evaluate_path(&p, &s, PriceMap::Identity);
        assert_eq!(o.gain, 0.5);
        assert_eq!((o.deferred, o.skipped, o.clipped), (0, 0, false));
        let miss = StrategySpec::buy_and_hold_until_hit(0.9, 1.0);
        assert_eq!(evaluate_path(&p, &miss, PriceMap::Identity).gain, 0.0);
    }

    #[test]
    fn waiting_time_defers_and_skips() {
        let p = path(vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        let s = StrategySpec { legs: vec![leg(det(0.0), det(0.25), 1.0)], min_wait: 0.5 };
        let o = evaluate_path(&p, &s, PriceMap::Identity);
        assert_eq!(o.deferred, 1);
        assert_eq!(o.gain, 2.0);
        let two =
            StrategySpec { legs: vec![leg(det(0.0), det(0.5), 1.0), leg(det(0.5), det(1.0), 1.0)], min_wait: 0.75 };
        let o = evaluate_path(&p, &two, PriceMap::Identity);
        assert_eq!((o.deferred, o.skipped), (1, 1));
        assert_eq!(o.gain, 3.0);
    }

    #[test]
    fn clipped_rule_is_flagged() {
        let p = path(vec![0.0, 1.0, 2.0]);
        let s = StrategySpec { legs: vec![leg(det(0.0), det(3.0), 1.0)], min_wait: 0.0 };
        let o = evaluate_path(&p, &s, PriceMap::Exp);
        assert!(o.clipped);
        assert_eq!(o.gain, 2f64.exp() - 1.0);
    }

    #[test]
    fn verdict_table() {
        assert_eq!(verdict(0, 3), PnlVerdict::ArbitrageCertificate);
        assert_eq!(verdict(0, 0), PnlVerdict::NoArbitrageEvidence);
        assert_eq!(verdict(2, 3), PnlVerdict::NoArbitrageEvidence);
        assert_eq!(verdict(2, 0), PnlVerdict::Inconclusive);
    }

    #[test]
    fn zero_size_has_no_evidence() {
        let paths = vec![path(vec![0.0, 1.0, -1.0]), path(vec![0.0, -1.0, 2.0])];
        let s = StrategySpec { legs: vec![leg(det(0.0), det(1.0), 0.0)], min_wait: 0.0 };
        let r = evaluate_strategy(&paths, &s, PriceMap::Exp, DEFAULT_TOL).unwrap();
        assert_eq!(r.verdict, PnlVerdict::NoArbitrageEvidence);
        assert_eq!((r.gains.min, r.gains.max), (0.0, 0.0));
        assert!(r.replay.is_none());
    }

    #[test]
    fn digest_distinguishes_gains() {
        assert_eq!(gains_digest(&[1.0, 2.0]), gains_digest(&[1.0, 2.0]));
        assert_ne!(gains_digest(&[1.0, 2.0]), gains_digest(&[2.0, 1.0]));
        assert_ne!(gains_digest(&[0.0]), gains_digest(&[-0.0]));
    }

    #[test]
    fn long_waiting_time_leaves_only_the_baseline() {
        let paths = vec![path(vec![0.0, 1.0, -1.0]), path(vec![0.0, -1.0, 2.0])];
        let lattice = ThresholdLattice { times: vec![0.0, 0.5, 1.0], levels: vec![0.5], level_cap: 1.0 };
        let r = scan_threshold_strategies(&paths, 1.5, &lattice, 0.0, PriceMap::Identity).unwrap();
        assert_eq!(r.admissible, 1);
        assert_eq!(r.best_index, 0);
        assert!(!r.certificate_found);
        assert_eq!((r.best.gains.min, r.best.gains.max), (0.0, 0.0));
    }

    #[test]
    fn empty_lattice_rejected() {
        let paths = vec![path(vec![0.0, 1.0, -1.0])];
        let lattice = ThresholdLattice { times: vec![], levels: vec![], level_cap: 1.0 };
        assert!(scan_threshold_strategies(&paths, 0.0, &lattice, 0.0, PriceMap::Exp).is_err());
    }
}
