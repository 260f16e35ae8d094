//! Path events built from the increments `L_t = X_{tau+t} - X_tau` after a
//! stopping time, their Monte Carlo frequencies, and the lattice checks built
//! on them.
//!
//! * `j = 0`: `sup |L| < delta` on `[0, T - tau)`.
//! * `j = +1`: `sup L < delta` on `[0, h]` and `sup L < -c` on `[h, T - tau)`.
//! * `j = -1`: `inf L > -delta` on `[0, h]` and `inf L > c` on `[h, T - tau)`.
//!
//! Conditional positivity given the past cannot be decided from samples; the
//! surrogate used here is positivity of the hit frequency inside every
//! populated quantile bin of `X_tau`.

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::extent::Extent;
use crate::pathgen::{PathSource, SamplePath};
use crate::stats::{quantile_sorted, wilson_interval, Summary, Z_95};

/// Smallest ensemble accepted by the estimators.
pub const MIN_ENSEMBLE: usize = 1_000;
pub const DEFAULT_BINS: usize = 8;

pub const SURROGATE_NOTE: &str = "conditional positivity is tested as a positive hit count \
     in every populated quantile bin of X_tau";
pub const CONTAINMENT_NOTE: &str = "every member of F^j(tau, h, delta, c) also belongs to \
     F^j(tau, h, unbounded, c), so a PASS of condition A on matching parameters implies a PASS here";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum TauRule {
    Deterministic {
        time: f64,
    },
    /// First time the path reaches `level`, or `cap` if it never does.
    FirstHit {
        level: f64,
        cap: f64,
    },
}

impl TauRule {
    /// Latest value the rule can take.
    pub fn latest(&self) -> f64 {
        match *self {
            TauRule::Deterministic { time } => time,
            TauRule::FirstHit { cap, .. } => cap,
        }
    }

    /// `(tau, X_tau)`; a first hit reports the level itself.
    pub fn evaluate(&self, path: &SamplePath) -> (f64, f64) {
        match *self {
            TauRule::Deterministic { time } => (time, path.value_at(time)),
            TauRule::FirstHit { level, cap } => match path.first_hit(level, 0.0, cap) {
                Some(t) => (t, level),
                None => (cap, path.value_at(cap)),
            },
        }
    }

    /// Checks `0 <= tau < horizon - h` for every value the rule can take.
    pub fn validate(&self, horizon: f64, h: f64) -> Result<()> {
        let latest = self.latest();
        if !(latest >= 0.0 && latest < horizon - h) {
            return Err(Error::SpecViolation(format!(
                "stopping rule {self:?} can reach {latest}, outside [0, {}) for h = {h}",
                horizon - h
            )));
        }
        if let TauRule::FirstHit { level, .. } = *self {
            if !level.is_finite() {
                return Err(param("first-hit level must be finite"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub j: i8,
    pub tau: TauRule,
    pub h: f64,
    pub delta: Extent,
    pub c: f64,
}

impl EventSpec {
    pub fn validate(&self, horizon: f64) -> Result<()> {
        if !matches!(self.j, -1..=1) {
            return Err(param(format!("event index j must be -1, 0 or 1, got {}", self.j)));
        }
        if !(self.h > 0.0 && self.h < horizon) {
            return Err(param(format!("h must lie in (0, {horizon}), got {}", self.h)));
        }
        if let Extent::Finite(d) = self.delta {
            if !(d > 0.0 && d.is_finite()) {
                return Err(param(format!("delta must be positive, got {d}")));
            }
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(param(format!("c must be positive, got {}", self.c)));
        }
        self.tau.validate(horizon, self.h)
    }
}

/// Extremes of `L` over the two windows after `tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowExtrema {
    pub first_max: f64,
    pub first_min: f64,
    pub second_max: f64,
    pub second_min: f64,
}

impl WindowExtrema {
    /// Windows `[tau, tau + h]` and `[tau + h, T)`; knots at `T` are excluded.
    pub fn compute(path: &SamplePath, tau: f64, x_tau: f64, h: f64) -> WindowExtrema {
        let split = tau + h;
        let horizon = path.horizon();
        let at_split = path.value_at(split) - x_tau;
        let mut w = WindowExtrema {
            first_max: at_split.max(0.0),
            first_min: at_split.min(0.0),
            second_max: at_split,
            second_min: at_split,
        };
        for (t, x) in path.knots_after(tau) {
            if t >= horizon {
                break;
            }
            let l = x - x_tau;
            if t < split {
                w.first_max = w.first_max.max(l);
                w.first_min = w.first_min.min(l);
            } else if t > split {
                w.second_max = w.second_max.max(l);
                w.second_min = w.second_min.min(l);
            }
        }
        w
    }

    pub fn contains(&self, j: i8, delta: Extent, c: f64) -> bool {
        match j {
            0 => match delta {
                Extent::Unbounded => true,
                Extent::Finite(d) => {
                    let sup = self.first_max.max(self.second_max).max(-self.first_min.min(self.second_min));
                    sup < d
                }
            },
            1 => delta.finite().is_none_or(|d| self.first_max < d) && self.second_max < -c,
            _ => delta.finite().is_none_or(|d| self.first_min > -d) && self.second_min > c,
        }
    }
}

/// Membership of one path in the event.
pub fn event_member(path: &SamplePath, spec: &EventSpec) -> Result<bool> {
    spec.validate(path.horizon())?;
    let (tau, x_tau) = spec.tau.evaluate(path);
    check_tau(tau, path.horizon(), spec.h)?;
    Ok(WindowExtrema::compute(path, tau, x_tau, spec.h).contains(spec.j, spec.delta, spec.c))
}

fn check_tau(tau: f64, horizon: f64, h: f64) -> Result<()> {
    if tau >= 0.0 && tau < horizon - h {
        Ok(())
    } else {
        Err(Error::SpecViolation(format!("tau = {tau} is outside [0, {}) for h = {h}", horizon - h)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinTally {
    /// Bin is `(lower, upper]`; `None` marks an open end.
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub hits: u64,
    pub total: u64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEstimate {
    pub spec: EventSpec,
    pub n_paths: u64,
    pub hits: u64,
    pub p_hat: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    /// Per-bin tallies by quantiles of `X_tau`, empty bins included.
    pub conditioning_bins: Option<Vec<BinTally>>,
    pub empty_bins: usize,
}

impl EventEstimate {
    /// Positive frequency overall, and in every populated bin when binned.
    pub fn passes(&self) -> bool {
        match &self.conditioning_bins {
            Some(bins) => bins.iter().all(|b| b.total == 0 || b.wilson_lo > 0.0),
            None => self.wilson_lo > 0.0,
        }
    }
}

/// Quantile edges `e_1 <= ... <= e_{bins-1}`; a value goes to the bin counting
/// the edges strictly below it.
fn quantile_edges(values: &[f64], bins: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    (1..bins).map(|k| quantile_sorted(&sorted, k as f64 / bins as f64)).collect()
}

fn tally(spec: EventSpec, x_tau: &[f64], member: &[bool], bins: usize) -> EventEstimate {
    let n = member.len() as u64;
    let hits = member.iter().filter(|&&m| m).count() as u64;
    let (wilson_lo, wilson_hi) = wilson_interval(hits, n, Z_95);
    let (conditioning_bins, empty_bins) = if bins > 1 {
        let edges = quantile_edges(x_tau, bins);
        let mut counts = vec![(0u64, 0u64); bins];
        for (&x, &m) in x_tau.iter().zip(member) {
            let b = edges.partition_point(|&e| e < x);
            counts[b].1 += 1;
            counts[b].0 += u64::from(m);
        }
        let tallies: Vec<BinTally> = counts
            .iter()
            .enumerate()
            .map(|(b, &(hits, total))| {
                let (lo, hi) = wilson_interval(hits, total, Z_95);
                BinTally {
                    lower: b.checked_sub(1).map(|i| edges[i]),
                    upper: edges.get(b).copied(),
                    hits,
                    total,
                    wilson_lo: lo,
                    wilson_hi: hi,
                }
            })
            .collect();
        let empty = tallies.iter().filter(|t| t.total == 0).count();
        (Some(tallies), empty)
    } else {
        (None, 0)
    };
    EventEstimate {
        spec,
        n_paths: n,
        hits,
        p_hat: hits as f64 / n as f64,
        wilson_lo,
        wilson_hi,
        conditioning_bins,
        empty_bins,
    }
}

/// Evaluates many specs over one pass of the ensemble, computing window
/// extrema once per distinct `(tau rule, h)`.
fn run_specs<S: PathSource + ?Sized>(source: &S, specs: &[EventSpec], bins: usize) -> Result<Vec<EventEstimate>> {
    let n = source.n_paths();
    if n < MIN_ENSEMBLE {
        return Err(param(format!("event estimates need at least {MIN_ENSEMBLE} paths, got {n}")));
    }
    let horizon = source.horizon();
    for s in specs {
        s.validate(horizon)?;
    }
    let mut taus: Vec<TauRule> = Vec::new();
    let mut groups: Vec<(usize, f64)> = Vec::new();
    let mut cell_group = Vec::with_capacity(specs.len());
    for s in specs {
        let ti = taus.iter().position(|t| *t == s.tau).unwrap_or_else(|| {
            taus.push(s.tau);
            taus.len() - 1
        });
        let gi = groups.iter().position(|&(t, h)| t == ti && h == s.h).unwrap_or_else(|| {
            groups.push((ti, s.h));
            groups.len() - 1
        });
        cell_group.push(gi);
    }

    let per_path: Vec<Result<(Vec<f64>, Vec<bool>)>> = source.map_paths(|_, path| {
        let evaluated: Vec<(f64, f64)> = taus.iter().map(|r| r.evaluate(path)).collect();
        let mut extrema = Vec::with_capacity(groups.len());
        for &(ti, h) in &groups {
            let (tau, x_tau) = evaluated[ti];
            check_tau(tau, path.horizon(), h)?;
            extrema.push(WindowExtrema::compute(path, tau, x_tau, h));
        }
        let members = specs.iter().zip(&cell_group).map(|(s, &g)| extrema[g].contains(s.j, s.delta, s.c)).collect();
        Ok((evaluated.iter().map(|e| e.1).collect(), members))
    });
    let per_path: Vec<(Vec<f64>, Vec<bool>)> = per_path.into_iter().collect::<Result<_>>()?;

    let x_by_tau: Vec<Vec<f64>> = (0..taus.len()).map(|ti| per_path.iter().map(|p| p.0[ti]).collect()).collect();
    Ok(specs
        .iter()
        .enumerate()
        .map(|(ci, s)| {
            let member: Vec<bool> = per_path.iter().map(|p| p.1[ci]).collect();
            tally(*s, &x_by_tau[groups[cell_group[ci]].0], &member, bins)
        })
        .collect())
}

pub fn estimate_event<S: PathSource + ?Sized>(source: &S, spec: &EventSpec, bins: usize) -> Result<EventEstimate> {
    Ok(run_specs(source, std::slice::from_ref(spec), bins)?.remove(0))
}

/// Finite parameter lattice shared by both condition checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLattice {
    pub tau_rules: Vec<TauRule>,
    pub h: Vec<f64>,
    pub delta: Vec<f64>,
    pub c: Vec<f64>,
}

impl EventLattice {
    pub fn validate(&self, horizon: f64) -> Result<()> {
        if self.tau_rules.is_empty() || self.h.is_empty() || self.delta.is_empty() || self.c.is_empty() {
            return Err(param("event lattice has an empty axis"));
        }
        for r in &self.tau_rules {
            for &h in &self.h {
                r.validate(horizon, h)?;
            }
        }
        Ok(())
    }

    fn specs(&self, js: &[i8], deltas: &[Extent]) -> Vec<EventSpec> {
        let mut out = Vec::new();
        for &tau in &self.tau_rules {
            for &h in &self.h {
                for &delta in deltas {
                    for &c in &self.c {
                        for &j in js {
                            out.push(EventSpec { j, tau, h, delta, c });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    A,
    Na,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: Condition,
    pub n_paths: u64,
    pub bins: usize,
    pub verdict: Verdict,
    pub cells: Vec<EventEstimate>,
    /// Indices into `cells` that failed.
    pub failing_cells: Vec<usize>,
    pub notes: Vec<String>,
}

fn condition_report(
    condition: Condition,
    cells: Vec<EventEstimate>,
    bins: usize,
    notes: Vec<String>,
) -> ConditionReport {
    let failing_cells: Vec<usize> = cells.iter().enumerate().filter(|(_, c)| !c.passes()).map(|(i, _)| i).collect();
    ConditionReport {
        condition,
        n_paths: cells.first().map_or(0, |c| c.n_paths),
        bins,
        verdict: if failing_cells.is_empty() { Verdict::Pass } else { Verdict::Fail },
        cells,
        failing_cells,
        notes,
    }
}

/// All three event families over the full lattice.
pub fn check_condition_a<S: PathSource + ?Sized>(
    source: &S,
    lattice: &EventLattice,
    bins: usize,
) -> Result<ConditionReport> {
    lattice.validate(source.horizon())?;
    let deltas: Vec<Extent> = lattice.delta.iter().map(|&d| Extent::Finite(d)).collect();
    let cells = run_specs(source, &lattice.specs(&[-1, 0, 1], &deltas), bins)?;
    Ok(condition_report(Condition::A, cells, bins, vec![SURROGATE_NOTE.to_string()]))
}

/// The `j = ±1` families with the first-window bound dropped; the lattice's
/// `delta` axis is ignored.
pub fn check_na_condition<S: PathSource + ?Sized>(
    source: &S,
    lattice: &EventLattice,
    bins: usize,
) -> Result<ConditionReport> {
    lattice.validate(source.horizon())?;
    let cells = run_specs(source, &lattice.specs(&[-1, 1], &[Extent::Unbounded]), bins)?;
    Ok(condition_report(Condition::Na, cells, bins, vec![SURROGATE_NOTE.to_string(), CONTAINMENT_NOTE.to_string()]))
}

/// How close paths come to the tube around `S_0 - t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfsWitness {
    pub alpha: f64,
    pub n_paths: u64,
    /// Paths with `sup_t |S_t - S_0 + t| < alpha`.
    pub inside: u64,
    pub fraction_inside: f64,
    pub wilson_hi: f64,
    pub distance: Summary,
}

/// `sup` over `[0, T]` of `|S_t - S_0 + t|`; exact for piecewise-linear paths
/// because the deviation is linear between knots.
pub fn tube_distance(path: &SamplePath) -> f64 {
    let s0 = path.initial();
    path.knots().map(|(t, x)| (x - s0 + t).abs()).fold(0.0, f64::max)
}

pub fn cfs_violation_witness<S: PathSource + ?Sized>(source: &S, alpha: f64) -> Result<CfsWitness> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(param(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if source.horizon() != 1.0 {
        return Err(param(format!("the tube witness needs horizon 1, got {}", source.horizon())));
    }
    let distances = source.map_paths(|_, p| tube_distance(p));
    let inside = distances.iter().filter(|&&d| d < alpha).count() as u64;
    let n = distances.len() as u64;
    Ok(CfsWitness {
        alpha,
        n_paths: n,
        inside,
        fraction_inside: inside as f64 / n as f64,
        wilson_hi: wilson_interval(inside, n, Z_95).1,
        distance: Summary::of(&distances).ok_or_else(|| param("empty ensemble"))?,
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

    fn spec(j: i8, h: f64, delta: f64, c: f64) -> EventSpec {
        EventSpec { j, tau: TauRule::Deterministic { time: 0.0 }, h, delta: Extent::Finite(delta), c }
    }

    #[test]
    fn constant_path() {
        let p = path(vec![0.3; 9]);
        assert!(event_member(&p, &spec(0, 0.5, 1e-9, 1.0)).unwrap());
        assert!(!event_member(&p, &spec(1, 0.5, 1.0, 1e-9)).unwrap());
        assert!(!event_member(&p, &spec(-1, 0.5, 1.0, 1e-9)).unwrap());
    }

    #[test]
    fn falling_witness() {
        // Falls linearly by 2c over [0, h] and stays there.
        let c = 0.4;
        let values: Vec<f64> = (0..=8).map(|i| if i <= 4 { -2.0 * c * i as f64 / 4.0 } else { -2.0 * c }).collect();
        let p = path(values);
        assert!(event_member(&p, &spec(1, 0.5, c, c)).unwrap());
        assert!(!event_member(&p, &spec(-1, 0.5, c, c)).unwrap());
        // The fall is not finished before h = 0.25.
        assert!(!event_member(&p, &spec(1, 0.25, c, c)).unwrap());
    }

    #[test]
    fn horizon_knot_is_excluded() {
        let mut values = vec![0.0; 9];
        values[4] = -1.0;
        values[5] = -1.0;
        values[6] = -1.0;
        values[7] = -1.0;
        values[8] = 5.0;
        let p = path(values);
        // The jump to 5 at T is outside [h, T), but the piece leading to it is not.
        let w = WindowExtrema::compute(&p, 0.0, 0.0, 0.5);
        assert_eq!(w.second_max, -1.0);
    }

    #[test]
    fn first_hit_rule() {
        let p = path((0..=8).map(|i| i as f64 / 8.0).collect());
        let r = TauRule::FirstHit { level: 0.3, cap: 0.45 };
        let (t, x) = r.evaluate(&p);
        assert!((t - 0.3).abs() < 1e-15);
        assert_eq!(x, 0.3);
        let miss = TauRule::FirstHit { level: 2.0, cap: 0.45 };
        assert_eq!(miss.evaluate(&p), (0.45, 0.45));
    }

    #[test]
    fn tau_range_violations() {
        let p = path(vec![0.0; 5]);
        let mut s = spec(0, 0.5, 1.0, 1.0);
        s.tau = TauRule::Deterministic { time: 0.75 };
        assert!(matches!(event_member(&p, &s), Err(Error::SpecViolation(_))));
        s.tau = TauRule::FirstHit { level: 1.0, cap: 0.5 };
        assert!(matches!(event_member(&p, &s), Err(Error::SpecViolation(_))));
        assert!(event_member(&p, &spec(2, 0.5, 1.0, 1.0)).is_err());
    }

    #[test]
    fn edges_and_bins() {
        let xs: Vec<f64> = (0..100).map(f64::from).collect();
        let members: Vec<bool> = (0..100).map(|i| i % 2 == 0).collect();
        let e = tally(spec(0, 0.5, 1.0, 1.0), &xs, &members, 4);
        let bins = e.conditioning_bins.as_ref().unwrap();
        assert_eq!(bins.iter().map(|b| b.total).collect::<Vec<_>>(), vec![25, 25, 25, 25]);
        assert_eq!(e.hits, 50);
        assert!(e.passes());
        // Tied values collapse into the first bin; the rest are reported empty.
        let tied = tally(spec(0, 0.5, 1.0, 1.0), &[1.0; 10], &[true; 10], 4);
        assert_eq!(tied.empty_bins, 3);
        assert!(tied.passes());
    }

    #[test]
    fn tube_distance_is_exact() {
        let p = path((0..=4).map(|i| -(i as f64) / 4.0).collect());
        assert_eq!(tube_distance(&p), 0.0);
        let q = path(vec![0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(tube_distance(&q), 1.0);
    }
}
