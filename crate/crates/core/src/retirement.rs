//! First-exit ladder of a path and the retired geometric walk built on it.
//!
//! Starting from `tau_0 = 0`, each rung ends at the first time the path leaves
//! the open band `(X_{tau_{n-1}} - b, X_{tau_{n-1}} + b)` with
//! `b = ln(1 + eps0)`; the sign of the exit is `R_n`, and the walk is
//! `Z_n = Z_0 (1 + eps0)^{R_1 + ... + R_n}` with `Z_0 = exp(X_0)`. The ladder
//! retires (`R_N = 0`) at the horizon.
//!
//! In interpolated mode the exit time is found by linear interpolation inside
//! the crossing piece and the exit value is snapped onto the barrier, so the
//! rung values are exactly `X_0 + k_n b`. Touching the barrier counts as exit.

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::pathgen::SamplePath;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CrossingMode {
    #[default]
    Interpolated,
    GridSnap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderParams {
    pub eps0: f64,
    /// `ln(1 + eps0)`.
    pub barrier: f64,
    pub mode: CrossingMode,
}

impl LadderParams {
    pub fn new(eps0: f64, mode: CrossingMode) -> Result<LadderParams> {
        if !(eps0.is_finite() && eps0 > 0.0) {
            return Err(param(format!("transaction cost eps0 must be positive, got {eps0}")));
        }
        Ok(LadderParams { eps0, barrier: eps0.ln_1p(), mode })
    }

    /// Log-price of level `k`: `x0 + k b`.
    pub fn level_value(&self, x0: f64, k: i64) -> f64 {
        x0 + k as f64 * self.barrier
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderResult {
    pub eps0: f64,
    pub mode: CrossingMode,
    /// `tau_0 = 0, ..., tau_N = T`.
    pub taus: Vec<f64>,
    /// `k_n = R_1 + ... + R_n`, `N + 1` entries.
    pub levels: Vec<i64>,
    /// `R_1, ..., R_N`; only the last is zero.
    pub signs: Vec<i8>,
    /// `X_{tau_n}`, `N + 1` entries.
    pub x_at_tau: Vec<f64>,
    /// `Z_n = Z_0 (1 + eps0)^{k_n}`, `N + 1` entries.
    pub z_values: Vec<f64>,
    /// Index `N` of the retiring step.
    pub retired_at: usize,
}

impl LadderResult {
    /// Number of non-retiring rungs.
    pub fn n_moves(&self) -> usize {
        self.retired_at - 1
    }

    pub fn z0(&self) -> f64 {
        self.z_values[0]
    }

    pub fn terminal_z(&self) -> f64 {
        self.z_values[self.retired_at]
    }
}

/// Running state of the scan.
struct Scan {
    taus: Vec<f64>,
    levels: Vec<i64>,
    signs: Vec<i8>,
    x_at_tau: Vec<f64>,
}

impl Scan {
    fn push(&mut self, t: f64, sign: i8, x: f64) {
        let k = self.levels[self.levels.len() - 1] + i64::from(sign);
        self.taus.push(t);
        self.signs.push(sign);
        self.levels.push(k);
        self.x_at_tau.push(x);
    }

    fn last_tau(&self) -> f64 {
        self.taus[self.taus.len() - 1]
    }
}

pub fn build_ladder(path: &SamplePath, params: &LadderParams) -> LadderResult {
    let horizon = path.horizon();
    let x0 = path.initial();
    let b = params.barrier;
    let mut scan = Scan { taus: vec![0.0], levels: vec![0], signs: Vec::new(), x_at_tau: vec![x0] };
    let mut anchor = x0;
    let (mut ts, mut xs) = (0.0_f64, x0);

    for (te, xe) in path.knots_after(0.0) {
        match params.mode {
            CrossingMode::Interpolated => loop {
                let up = xe - anchor >= b;
                let down = anchor - xe >= b;
                if !(up || down) {
                    break;
                }
                let sign: i8 = if up { 1 } else { -1 };
                let k = scan.levels[scan.levels.len() - 1] + i64::from(sign);
                let target = params.level_value(x0, k);
                let frac = (target - xs) / (xe - xs);
                let mut t = (ts + (te - ts) * frac).clamp(ts, te);
                if t <= scan.last_tau() {
                    t = scan.last_tau().next_up();
                }
                // An exit exactly at the horizon is a retirement.
                if t >= horizon {
                    break;
                }
                scan.push(t, sign, target);
                anchor = target;
                ts = t;
                xs = target;
            },
            CrossingMode::GridSnap => {
                let up = xe - anchor >= b;
                let down = anchor - xe >= b;
                if (up || down) && te < horizon {
                    scan.push(te, if up { 1 } else { -1 }, xe);
                    anchor = xe;
                }
            }
        }
        ts = te;
        xs = xe;
    }

    scan.push(horizon, 0, path.terminal());
    let z0 = x0.exp();
    let growth = 1.0 + params.eps0;
    let z_values = scan.levels.iter().map(|&k| z0 * growth.powi(k as i32)).collect();
    let retired_at = scan.signs.len();
    LadderResult {
        eps0: params.eps0,
        mode: params.mode,
        taus: scan.taus,
        levels: scan.levels,
        signs: scan.signs,
        x_at_tau: scan.x_at_tau,
        z_values,
        retired_at,
    }
}

/// `(1 + eps0)^3 - 1`, evaluated in Horner form.
pub fn effective_epsilon(eps0: f64) -> f64 {
    eps0 * (3.0 + eps0 * (3.0 + eps0))
}

/// Observed range of one ratio factor, plus bound violations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorRange {
    pub min: f64,
    pub max: f64,
    pub violations: u64,
}

impl FactorRange {
    fn empty() -> Self {
        FactorRange { min: f64::INFINITY, max: f64::NEG_INFINITY, violations: 0 }
    }

    /// Record a log-ratio against the symmetric bound `|log| <= limit`.
    fn record(&mut self, log_ratio: f64, limit: f64) {
        self.min = self.min.min(log_ratio);
        self.max = self.max.max(log_ratio);
        if log_ratio > limit || -log_ratio > limit {
            self.violations += 1;
        }
    }

    fn to_ratio(self) -> Self {
        FactorRange { min: self.min.exp(), max: self.max.exp(), violations: self.violations }
    }

    pub fn merge(&mut self, other: &FactorRange) {
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
        self.violations += other.violations;
    }
}

/// Per-path check of the three ratio factors behind the consistent price system.
///
/// All ranges are ratios (not logs). Bounds are checked in log space, where
/// the barrier `b = ln(1 + eps0)` is the exact limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub eps0: f64,
    pub mode: CrossingMode,
    pub rungs: usize,
    pub checked_points: u64,
    /// Extra allowance in log units: 0 in interpolated mode, the largest
    /// one-step increment of the path in grid-snap mode.
    pub tolerance: f64,
    /// `Z_n / Y_{tau_n}`.
    pub walk_over_price: FactorRange,
    /// `Y_{tau_{n-1}} / Y_t` for `t` in `[tau_{n-1}, tau_n]`.
    pub anchor_over_price: FactorRange,
    /// `Y_{tau_n} / Y_{tau_{n-1}}`.
    pub rung_step: FactorRange,
    /// Product of the three, `Z_n / Y_t`, against `(1 + eps0)^{±3}`.
    pub combined: FactorRange,
    pub envelope: [f64; 2],
    pub envelope_holds: bool,
}

impl SandwichReport {
    pub fn factor_violations(&self) -> u64 {
        self.walk_over_price.violations + self.anchor_over_price.violations + self.rung_step.violations
    }
}

pub fn validate_sandwich(path: &SamplePath, ladder: &LadderResult, params: &LadderParams) -> Result<SandwichReport> {
    let n_rungs = ladder.retired_at;
    let consistent = ladder.eps0 == params.eps0
        && ladder.mode == params.mode
        && n_rungs >= 1
        && ladder.taus.len() == n_rungs + 1
        && ladder.levels.len() == n_rungs + 1
        && ladder.x_at_tau.len() == n_rungs + 1
        && ladder.x_at_tau[0] == path.initial()
        && ladder.taus[n_rungs] == path.horizon()
        && ladder.x_at_tau[n_rungs] == path.terminal();
    if !consistent {
        return Err(Error::Contract("ladder was not built from this path with these parameters".into()));
    }
    let b = params.barrier;
    let x0 = path.initial();
    let interpolated = params.mode == CrossingMode::Interpolated;
    let tol = if interpolated { 0.0 } else { path.max_abs_increment() };
    let limit = b + tol;

    // log(Y_{tau_n} / Y_{tau_{n-1}}); exact multiples of b on snapped rungs.
    let step_log = |n: usize| {
        if interpolated && n < n_rungs {
            (ladder.levels[n] - ladder.levels[n - 1]) as f64 * b
        } else {
            ladder.x_at_tau[n] - ladder.x_at_tau[n - 1]
        }
    };
    // log(Z_n / Y_{tau_n}).
    let walk_log = |n: usize| params.level_value(x0, ladder.levels[n]) - ladder.x_at_tau[n];

    let mut walk = FactorRange::empty();
    let mut anchor = FactorRange::empty();
    let mut step = FactorRange::empty();
    let mut combined = FactorRange::empty();
    let mut checked = 0u64;

    walk.record(walk_log(0), limit);
    let mut knots = path.knots().peekable();
    for n in 1..=n_rungs {
        let (start, end) = (ladder.taus[n - 1], ladder.taus[n]);
        let a = ladder.x_at_tau[n - 1];
        let wl = walk_log(n);
        let sl = step_log(n);
        walk.record(wl, limit);
        step.record(sl, limit);
        // Interior knots of [tau_{n-1}, tau_n).
        while let Some(&(t, x)) = knots.peek() {
            if t >= end {
                break;
            }
            knots.next();
            if t < start {
                continue;
            }
            let al = a - x;
            anchor.record(al, limit);
            combined.record(wl + al + sl, 3.0 * limit);
            checked += 1;
        }
        // The closed right end, with the rung's own value.
        anchor.record(-sl, limit);
        combined.record(wl, 3.0 * limit);
        checked += 1;
    }

    let growth = 1.0 + params.eps0;
    let violations = walk.violations + anchor.violations + step.violations;
    Ok(SandwichReport {
        eps0: params.eps0,
        mode: params.mode,
        rungs: n_rungs,
        checked_points: checked,
        tolerance: tol,
        walk_over_price: walk.to_ratio(),
        anchor_over_price: anchor.to_ratio(),
        rung_step: step.to_ratio(),
        combined: combined.to_ratio(),
        envelope: [growth.powi(-3), growth.powi(3)],
        envelope_holds: violations == 0 && combined.violations == 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pathgen::{generate_brownian, TimeGrid};
    use approx::assert_abs_diff_eq;

    fn params(eps0: f64) -> LadderParams {
        LadderParams::new(eps0, CrossingMode::Interpolated).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(LadderParams::new(0.0, CrossingMode::Interpolated).is_err());
        assert!(LadderParams::new(-0.1, CrossingMode::GridSnap).is_err());
        let p = params(0.2);
        assert_eq!(p.barrier, 0.2f64.ln_1p());
    }

    #[test]
    fn constant_path_retires_immediately() {
        let g = TimeGrid::new(2.0, 16).unwrap();
        let x0 = 0.7;
        let path = SamplePath::new(g, vec![x0; 17], 0, "const").unwrap();
        let ladder = build_ladder(&path, &params(0.3));
        assert_eq!(ladder.taus, vec![0.0, 2.0]);
        assert_eq!(ladder.signs, vec![0]);
        assert_eq!(ladder.z_values, vec![x0.exp(), x0.exp()]);
        assert_eq!(ladder.retired_at, 1);
        let rep = validate_sandwich(&path, &ladder, &params(0.3)).unwrap();
        assert!(rep.envelope_holds);
        for f in [rep.walk_over_price, rep.anchor_over_price, rep.rung_step, rep.combined] {
            assert_eq!((f.min, f.max), (1.0, 1.0));
        }
    }

    #[test]
    fn ramp_path_hits_two_rungs() {
        // 0 -> 2b linearly over [0, T/2], then flat.
        let eps0 = 0.25;
        let p = params(eps0);
        let b = p.barrier;
        let n = 64;
        let g = TimeGrid::new(1.0, n).unwrap();
        let values: Vec<f64> =
            (0..=n).map(|i| if i <= n / 2 { 2.0 * b * (i as f64 / (n / 2) as f64) } else { 2.0 * b }).collect();
        let path = SamplePath::new(g, values, 0, "ramp").unwrap();
        let ladder = build_ladder(&path, &p);
        assert_eq!(ladder.signs, vec![1, 1, 0]);
        assert_abs_diff_eq!(ladder.taus[1], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(ladder.taus[2], 0.5, epsilon = 1e-12);
        assert_eq!(ladder.taus[3], 1.0);
        assert_eq!(ladder.levels, vec![0, 1, 2, 2]);
        assert_abs_diff_eq!(ladder.z_values[1], 1.0 + eps0, epsilon = 1e-15);
        assert_abs_diff_eq!(ladder.z_values[2], (1.0 + eps0) * (1.0 + eps0), epsilon = 1e-15);
    }

    #[test]
    fn large_step_crosses_several_barriers_in_one_cell() {
        let p = params(0.1);
        let b = p.barrier;
        let g = TimeGrid::new(1.0, 2).unwrap();
        let path = SamplePath::new(g, vec![0.0, 3.5 * b, 3.5 * b], 0, "jump").unwrap();
        let ladder = build_ladder(&path, &p);
        assert_eq!(ladder.signs, vec![1, 1, 1, 0]);
        for (n, &t) in ladder.taus[1..4].iter().enumerate() {
            assert_abs_diff_eq!(t, 0.5 * (n as f64 + 1.0) / 3.5, epsilon = 1e-12);
        }
        let rep = validate_sandwich(&path, &ladder, &p).unwrap();
        assert!(rep.envelope_holds);
    }

    #[test]
    fn grid_snap_uses_grid_points() {
        let p = LadderParams::new(0.1, CrossingMode::GridSnap).unwrap();
        let b = p.barrier;
        let g = TimeGrid::new(1.0, 4).unwrap();
        let path = SamplePath::new(g, vec![0.0, 0.5 * b, 1.5 * b, 0.2 * b, 0.1 * b], 0, "h").unwrap();
        let ladder = build_ladder(&path, &p);
        assert_eq!(ladder.signs, vec![1, -1, 0]);
        assert_eq!(ladder.taus, vec![0.0, 0.5, 0.75, 1.0]);
        assert_eq!(ladder.x_at_tau[1], 1.5 * b);
        let rep = validate_sandwich(&path, &ladder, &p).unwrap();
        assert_eq!(rep.tolerance, path.max_abs_increment());
        assert_eq!(rep.rung_step.violations, 0);
    }

    #[test]
    fn exit_exactly_at_horizon_retires() {
        let p = params(0.5);
        let b = p.barrier;
        let g = TimeGrid::new(1.0, 2).unwrap();
        let path = SamplePath::new(g, vec![0.0, 0.5 * b, b], 0, "edge").unwrap();
        let ladder = build_ladder(&path, &p);
        assert_eq!(ladder.signs, vec![0]);
        assert_eq!(ladder.taus, vec![0.0, 1.0]);
        assert!(validate_sandwich(&path, &ladder, &p).unwrap().envelope_holds);
    }

    #[test]
    fn mismatched_ladder_is_rejected() {
        let g = TimeGrid::new(1.0, 256).unwrap();
        let path = generate_brownian(g, 1.0, 0.0, 5).unwrap();
        let other = generate_brownian(g, 1.0, 0.0, 6).unwrap();
        let ladder = build_ladder(&path, &params(0.2));
        assert!(matches!(validate_sandwich(&other, &ladder, &params(0.2)), Err(Error::Contract(_))));
        assert!(validate_sandwich(&path, &ladder, &params(0.3)).is_err());
    }

    #[test]
    fn effective_epsilon_values() {
        assert_eq!(effective_epsilon(0.1), 0.331);
        assert_eq!(effective_epsilon(0.0), 0.0);
        assert_eq!(effective_epsilon(1.0), 7.0);
        assert_abs_diff_eq!(effective_epsilon(0.2), 0.728, epsilon = 1e-15);
    }
}
