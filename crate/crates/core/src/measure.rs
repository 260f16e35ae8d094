//! An explicit martingale measure for the retired walk.
//!
//! Under the level chain `Q` each rung moves up with probability
//! `q+ = (1 - beta) / (eps0 + 2)`, down with `q- = (1 - beta)(1 + eps0) / (eps0 + 2)`
//! and retires with `q0 = beta`. These solve `q+ + q- = 1 - beta` and
//! `q+ (1 + eps0) + q- / (1 + eps0) = 1 - beta`, so `Z_n` is a `Q`-martingale that
//! retires geometrically.
//!
//! On simulated ladders `Q` is realized by likelihood-ratio weights against
//! the empirical sign frequencies per rung index.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::par;
use crate::retirement::LadderResult;
use crate::stats::neumaier_sum;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainMeasure {
    pub eps0: f64,
    pub beta: f64,
    pub q_plus: f64,
    pub q_minus: f64,
    pub q_zero: f64,
}

pub fn make_chain_measure(eps0: f64, beta: f64) -> Result<ChainMeasure> {
    if !(eps0.is_finite() && eps0 > 0.0) {
        return Err(param(format!("eps0 must be positive, got {eps0}")));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(param(format!("retirement probability beta must lie in (0, 1), got {beta}")));
    }
    let live = 1.0 - beta;
    Ok(ChainMeasure {
        eps0,
        beta,
        q_plus: live / (eps0 + 2.0),
        q_minus: live * (1.0 + eps0) / (eps0 + 2.0),
        q_zero: beta,
    })
}

impl ChainMeasure {
    pub fn prob(&self, sign: i8) -> f64 {
        match sign {
            1 => self.q_plus,
            -1 => self.q_minus,
            _ => self.q_zero,
        }
    }

    /// `q+ + q- + q0 - 1`.
    pub fn mass_defect(&self) -> f64 {
        self.q_plus + self.q_minus + self.q_zero - 1.0
    }

    /// `q+ (1 + eps0) + q- / (1 + eps0) + q0 - 1`.
    pub fn martingale_defect(&self) -> f64 {
        let g = 1.0 + self.eps0;
        self.q_plus * g + self.q_minus / g + self.q_zero - 1.0
    }
}

/// `E_Q[Z_{H ∧ N}]` for a walk started at `z0`, split by what happened by rung `H`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerminalExpectation {
    pub horizon_rungs: usize,
    /// `E_Q[Z_{H ∧ N}]`; equals `z0` by the martingale property.
    pub stopped: f64,
    /// `E_Q[Z_N ; N <= H]`, the mass already retired.
    pub retired: f64,
    /// `E_Q[Z_H ; N > H]`, equal to `z0 (1 - beta)^H`.
    pub active_remainder: f64,
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Exact dynamic programme over levels `-H..=H`, with survival masses in log space.
pub fn expected_terminal(chain: &ChainMeasure, z0: f64, horizon_rungs: usize) -> Result<TerminalExpectation> {
    if horizon_rungs == 0 {
        return Err(param("horizon_rungs must be at least 1"));
    }
    if !(z0.is_finite() && z0 > 0.0) {
        return Err(param(format!("z0 must be positive, got {z0}")));
    }
    let h = horizon_rungs;
    let width = 2 * h + 1;
    let log_step = chain.eps0.ln_1p();
    let (lq_plus, lq_minus, lq_zero) = (chain.q_plus.ln(), chain.q_minus.ln(), chain.q_zero.ln());
    let level_value = |idx: usize| z0 * ((idx as f64 - h as f64) * log_step).exp();

    // mass[idx]: log Q(alive at level idx - H after the current number of rungs).
    let mut mass = vec![f64::NEG_INFINITY; width];
    mass[h] = 0.0;
    let mut retired_terms = Vec::new();
    for step in 0..h {
        let mut next = vec![f64::NEG_INFINITY; width];
        for idx in (h - step)..=(h + step) {
            let m = mass[idx];
            if m == f64::NEG_INFINITY {
                continue;
            }
            retired_terms.push((m + lq_zero).exp() * level_value(idx));
            next[idx + 1] = log_add(next[idx + 1], m + lq_plus);
            next[idx - 1] = log_add(next[idx - 1], m + lq_minus);
        }
        mass = next;
    }
    let retired = neumaier_sum(retired_terms);
    let active_remainder = neumaier_sum(mass.iter().enumerate().map(|(idx, &m)| {
        if m == f64::NEG_INFINITY {
            0.0
        } else {
            m.exp() * level_value(idx)
        }
    }));
    Ok(TerminalExpectation { horizon_rungs, stopped: retired + active_remainder, retired, active_remainder })
}

/// The consistent price system at the rung times: exactly the walk values.
pub fn conditional_cps_values(_chain: &ChainMeasure, ladder: &LadderResult) -> Vec<f64> {
    ladder.z_values.clone()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathWeight {
    /// Position of the ladder in the input sequence.
    pub path_index: usize,
    pub log_weight: f64,
    /// Self-normalized weight; all weights sum to 1.
    pub weight: f64,
}

/// Sign counts for one rung-index bucket.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignCounts {
    pub up: u64,
    pub down: u64,
    pub retire: u64,
}

impl SignCounts {
    fn add(&mut self, sign: i8) {
        match sign {
            1 => self.up += 1,
            -1 => self.down += 1,
            _ => self.retire += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.up + self.down + self.retire
    }

    fn count(&self, sign: i8) -> u64 {
        match sign {
            1 => self.up,
            -1 => self.down,
            _ => self.retire,
        }
    }
}

/// How rungs are grouped into states for the empirical frequencies.
///
/// A state is the pair (rung index, previous sign). Rung index `n` stands on
/// its own while at least `min_visits` ladders reach it, every state at `n`
/// saw both directions or neither, and `n < max_buckets - 1`; later indices
/// share one pooled tail state whatever their previous sign. The previous
/// sign is kept because exits located inside a grid cell carry a little
/// momentum from the crossing piece.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketPolicy {
    pub max_buckets: usize,
    pub min_visits: u64,
}

impl Default for BucketPolicy {
    fn default() -> Self {
        BucketPolicy { max_buckets: 64, min_visits: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reweighting {
    pub chain: ChainMeasure,
    pub policy: BucketPolicy,
    /// First rung index of the pooled tail.
    pub tail_start: usize,
    /// Counts per state, indexed by `3 * rung + previous sign + 1`.
    pub buckets: Vec<SignCounts>,
    pub weights: Vec<PathWeight>,
    /// Kish effective sample size `1 / sum w^2`.
    pub effective_sample_size: f64,
}

impl Reweighting {}

fn state_index(step: usize, previous: i8, tail: usize) -> usize {
    if step >= tail {
        // The pooled tail forgets the previous sign too.
        3 * tail + 1
    } else {
        3 * step + (previous + 1) as usize
    }
}

/// `(state, sign)` for every rung of a ladder.
fn states(ladder: &LadderResult, tail: usize) -> impl Iterator<Item = (usize, i8)> + '_ {
    ladder.signs.iter().enumerate().map(move |(step, &s)| {
        let previous = if step == 0 { 0 } else { ladder.signs[step - 1] };
        (state_index(step, previous, tail), s)
    })
}

fn tail_start(ladders: &[LadderResult], policy: BucketPolicy) -> usize {
    let longest = ladders.iter().map(|l| l.signs.len()).max().unwrap_or(0);
    let mut ending = vec![0u64; longest + 1];
    for l in ladders {
        ending[l.signs.len()] += 1;
    }
    // Unpooled counts, used to stop before a state that saw one direction only.
    let mut counts = vec![SignCounts::default(); 3 * longest.max(1)];
    for l in ladders {
        for (state, s) in states(l, usize::MAX) {
            counts[state].add(s);
        }
    }
    let one_sided = |n: usize| counts[3 * n..3 * n + 3].iter().any(|c| (c.up == 0) != (c.down == 0));
    // Ladders with more than `n` signs visit rung index `n`.
    let mut visits = ladders.len() as u64;
    for (n, e) in ending.iter().enumerate() {
        visits -= e;
        if visits < policy.min_visits || n + 1 >= policy.max_buckets || (n < longest && one_sided(n)) {
            return n;
        }
    }
    longest
}

/// Likelihood ratio of one rung, in log space.
fn log_ratio(chain: &ChainMeasure, counts: &SignCounts, sign: i8) -> f64 {
    chain.prob(sign).ln() - (counts.count(sign) as f64).ln() + (counts.total() as f64).ln()
}

/// Reweight the ensemble so that rung signs follow `chain`.
///
/// Fails when some state saw moves in only one direction: the weights could
/// then not represent the other branch, and the reweighted walk would not be a
/// martingale. States where no ladder retired are fine, since `Q` restricted
/// to the observed moves still balances.
pub fn reweight_ensemble(ladders: &[LadderResult], chain: &ChainMeasure, policy: BucketPolicy) -> Result<Reweighting> {
    if ladders.is_empty() {
        return Err(param("cannot reweight an empty ensemble"));
    }
    if policy.max_buckets == 0 {
        return Err(param("max_buckets must be at least 1"));
    }
    let tail = tail_start(ladders, policy);
    let mut buckets = vec![SignCounts::default(); 3 * (tail + 1)];
    for ladder in ladders {
        for (state, s) in states(ladder, tail) {
            buckets[state].add(s);
        }
    }
    for (i, c) in buckets.iter().enumerate() {
        if (c.up == 0) != (c.down == 0) {
            let state = if i / 3 == tail {
                format!("pooled tail from rung {tail}")
            } else {
                format!("rung {}, previous sign {}", i / 3, (i % 3) as i8 - 1)
            };
            return Err(Error::DegenerateEnsemble(format!(
                "state ({state}) saw {} up and {} down moves; enlarge the ensemble",
                c.up, c.down
            )));
        }
    }
    let logs: Vec<f64> = par::map_slice(ladders, |ladder| {
        neumaier_sum(states(ladder, tail).map(|(state, s)| log_ratio(chain, &buckets[state], s)))
    });
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total = neumaier_sum(raw.iter().copied());
    let weights: Vec<PathWeight> = logs
        .iter()
        .zip(&raw)
        .enumerate()
        .map(|(path_index, (&log_weight, &r))| PathWeight { path_index, log_weight, weight: r / total })
        .collect();
    let ess = 1.0 / neumaier_sum(weights.iter().map(|w| w.weight * w.weight));
    Ok(Reweighting { chain: *chain, policy, tail_start: tail, buckets, weights, effective_sample_size: ess })
}

/// Self-normalized weighted mean with its delta-method standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedMean {
    pub mean: f64,
    pub std_error: f64,
    pub count: u64,
    /// Kish effective sample size of the weights.
    pub effective_count: f64,
}

/// Items are `(cluster, log weight, value)` with clusters contiguous. The
/// standard error treats clusters, not items, as independent.
fn weighted_mean_from_logs(items: &[(usize, f64, f64)]) -> WeightedMean {
    let top = items.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = items.iter().map(|p| (p.1 - top).exp()).collect();
    let total = neumaier_sum(w.iter().copied());
    let mean = neumaier_sum(w.iter().zip(items).map(|(w, p)| w * p.2)) / total;
    let mut squares = Vec::new();
    let mut current: Option<(usize, f64)> = None;
    for (w, p) in w.iter().zip(items) {
        let term = w / total * (p.2 - mean);
        current = match current {
            Some((c, acc)) if c == p.0 => Some((c, acc + term)),
            Some((_, acc)) => {
                squares.push(acc * acc);
                Some((p.0, term))
            }
            None => Some((p.0, term)),
        };
    }
    if let Some((_, acc)) = current {
        squares.push(acc * acc);
    }
    let effective_count = total * total / neumaier_sum(w.iter().map(|w| w * w));
    WeightedMean { mean, std_error: neumaier_sum(squares).sqrt(), count: items.len() as u64, effective_count }
}

/// Weighted mean of the retirement value `Z_N` over the ensemble.
pub fn weighted_terminal_mean(ladders: &[LadderResult], reweighting: &Reweighting) -> WeightedMean {
    let items: Vec<(usize, f64, f64)> =
        reweighting.weights.iter().map(|w| (w.path_index, w.log_weight, ladders[w.path_index].terminal_z())).collect();
    weighted_mean_from_logs(&items)
}

/// One-step conditional mean of `Z_{n+1} / Z_n` for walks sitting at level `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelCheck {
    pub level: i64,
    pub visits: u64,
    /// Kish effective number of visits under the weights.
    pub effective_visits: f64,
    /// Weighted mean of `Z_{n+1} / Z_n`; a martingale gives 1.
    pub mean_ratio: f64,
    pub std_error: f64,
    /// `(mean_ratio - 1) / std_error`, zero when both vanish.
    pub z_score: f64,
}

/// Pool every visit to each level (before retirement) and compare the weighted
/// next-step mean against the current value, using the prefix weights up to
/// the next rung. Repeat visits by one path are clustered in the error.
///
/// Levels are reported when their effective number of visits reaches
/// `min_effective_visits`; raw counts overstate the information when a few
/// paths carry most of the weight.
pub fn level_martingale_check(
    ladders: &[LadderResult],
    reweighting: &Reweighting,
    min_effective_visits: f64,
) -> Vec<LevelCheck> {
    let growth = 1.0 + reweighting.chain.eps0;
    let mut by_level: BTreeMap<i64, Vec<(usize, f64, f64)>> = BTreeMap::new();
    for (index, ladder) in ladders.iter().enumerate() {
        let mut prefix = 0.0;
        for (step, (state, s)) in states(ladder, reweighting.tail_start).enumerate() {
            prefix += log_ratio(&reweighting.chain, &reweighting.buckets[state], s);
            let ratio = match s {
                1 => growth,
                -1 => 1.0 / growth,
                _ => 1.0,
            };
            by_level.entry(ladder.levels[step]).or_default().push((index, prefix, ratio));
        }
    }
    by_level
        .into_iter()
        .map(|(level, items)| (level, weighted_mean_from_logs(&items)))
        .filter(|(_, m)| m.effective_count >= min_effective_visits)
        .map(|(level, m)| {
            let dev = m.mean - 1.0;
            let z_score = if m.std_error > 0.0 {
                dev / m.std_error
            } else if dev == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            LevelCheck {
                level,
                visits: m.count,
                effective_visits: m.effective_count,
                mean_ratio: m.mean,
                std_error: m.std_error,
                z_score,
            }
        })
        .collect()
}
