//! Deterministic continuous maps `f` used to build transformed processes `f(X)`.
//!
//! Besides evaluation, the module measures the drop functional
//! `d = inf_{y >= x} (f(y) - f(x))` and the rise functional
//! `d0 = sup_{y >= x} (f(y) - f(x))` with a brute-force grid oracle, classifies
//! tail behaviour, and derives the admissible scale factors `alpha` for which
//! `alpha * f` keeps the drop below a tolerance `delta0`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::extent::Extent;

/// Smallest grid resolution accepted by [`analyze_drop`].
pub const MIN_RESOLUTION: usize = 1_000;
/// Smallest probe accepted by [`classify_limits`].
pub const MIN_PROBE: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    Identity,
    /// `x + tanh(x)`: strictly increasing, unbounded in both directions.
    MonotoneSigmoidLike,
    /// `x^3 + x^2`.
    CubicPlusSquare,
    /// `|x|` for `x >= -1`, `x + 2` below.
    PiecewiseEx3,
}

impl Builtin {
    pub const ALL: [Builtin; 4] =
        [Builtin::Identity, Builtin::MonotoneSigmoidLike, Builtin::CubicPlusSquare, Builtin::PiecewiseEx3];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::Identity => "identity",
            Builtin::MonotoneSigmoidLike => "monotone_sigmoid_like",
            Builtin::CubicPlusSquare => "cubic_plus_square",
            Builtin::PiecewiseEx3 => "piecewise_ex3",
        }
    }

    pub fn from_name(name: &str) -> Option<Builtin> {
        Builtin::ALL.into_iter().find(|b| b.name() == name)
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Builtin::Identity => x,
            Builtin::MonotoneSigmoidLike => x + x.tanh(),
            Builtin::CubicPlusSquare => x * x * x + x * x,
            Builtin::PiecewiseEx3 => {
                if x >= -1.0 {
                    x.abs()
                } else {
                    x + 2.0
                }
            }
        }
    }

    /// Points where the map changes monotonicity (local extrema or kinks), ascending.
    ///
    /// A transformed path inserts a knot wherever its driver crosses one of
    /// these, so extrema of `f` along a grid cell are never skipped.
    pub fn turning_points(self) -> &'static [f64] {
        match self {
            Builtin::Identity | Builtin::MonotoneSigmoidLike => &[],
            Builtin::CubicPlusSquare => &[-2.0 / 3.0, 0.0],
            Builtin::PiecewiseEx3 => &[-1.0, 0.0],
        }
    }

    pub fn is_non_decreasing(self) -> bool {
        self.turning_points().is_empty()
    }

    /// Drop `d` from the local extrema: the largest fall from a local maximum
    /// to a later local minimum. A cross-check for the grid oracle only.
    pub fn critical_point_drop(self) -> f64 {
        match self {
            Builtin::Identity | Builtin::MonotoneSigmoidLike => 0.0,
            // f(0) - f(-2/3)
            Builtin::CubicPlusSquare => -4.0 / 27.0,
            // f(0) - f(-1)
            Builtin::PiecewiseEx3 => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Builtin,
    Scaled,
}

/// A registered transform: a builtin, optionally wrapped as `alpha * f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub id: String,
    pub kind: TransformKind,
    pub builtin: Builtin,
    pub alpha: f64,
}

impl TransformSpec {
    pub fn builtin(b: Builtin) -> TransformSpec {
        TransformSpec { id: b.name().to_string(), kind: TransformKind::Builtin, builtin: b, alpha: 1.0 }
    }

    pub fn scaled(id: impl Into<String>, b: Builtin, alpha: f64) -> Result<TransformSpec> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(param(format!("scale alpha must be positive, got {alpha}")));
        }
        Ok(TransformSpec { id: id.into(), kind: TransformKind::Scaled, builtin: b, alpha })
    }

    pub fn apply(&self, x: f64) -> f64 {
        match self.kind {
            TransformKind::Builtin => self.builtin.eval(x),
            TransformKind::Scaled => self.alpha * self.builtin.eval(x),
        }
    }

    pub fn turning_points(&self) -> &'static [f64] {
        self.builtin.turning_points()
    }
}

/// Immutable-after-construction lookup of transforms by id.
#[derive(Debug, Clone)]
pub struct TransformRegistry {
    entries: BTreeMap<String, TransformSpec>,
}

impl Default for TransformRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl TransformRegistry {
    pub fn with_builtins() -> Self {
        let entries = Builtin::ALL.into_iter().map(|b| (b.name().to_string(), TransformSpec::builtin(b))).collect();
        TransformRegistry { entries }
    }

    /// Register `alpha * builtin` under `id`. Ids are unique.
    pub fn register_scaled(&mut self, id: &str, builtin: Builtin, alpha: f64) -> Result<()> {
        if self.entries.contains_key(id) {
            return Err(Error::Configuration(format!("transform id `{id}` already registered")));
        }
        let spec = TransformSpec::scaled(id, builtin, alpha)?;
        self.entries.insert(id.to_string(), spec);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&TransformSpec> {
        self.entries.get(id).ok_or_else(|| Error::Configuration(format!("unknown transform id `{id}`")))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

pub fn evaluate(registry: &TransformRegistry, id: &str, x: f64) -> Result<f64> {
    Ok(registry.get(id)?.apply(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailClass {
    /// `f(-inf) = -inf`, `f(+inf) = +inf`.
    CaseA,
    /// `f(-inf) = +inf`, `f(+inf) = -inf`.
    CaseB,
    Neither,
}

/// Numerically classify the tails of `f` from samples at `±probe` and `±2 probe`.
///
/// A tail counts as divergent when `f` moves monotonically outward over
/// `[probe, 2 probe]` by at least 1% of its excursion from `f(0)`; this rejects
/// bounded maps such as `atan` while accepting logarithmic growth. Probes below
/// [`MIN_PROBE`] are raised to it.
pub fn classify_limits_fn(f: impl Fn(f64) -> f64, probe: f64) -> TailClass {
    let p = if probe.is_finite() { probe.max(MIN_PROBE) } else { MIN_PROBE };
    let f0 = f(0.0);
    let (fp, f2p, fm, f2m) = (f(p), f(2.0 * p), f(-p), f(-2.0 * p));
    if ![fp, f2p, fm, f2m, f0].iter().all(|v| v.is_finite()) {
        return TailClass::Neither;
    }
    let outward = |inner: f64, outer: f64, sign: f64| {
        let excursion = sign * (inner - f0);
        let step = sign * (outer - inner);
        excursion > 0.0 && step > 0.0 && step >= 1e-2 * excursion
    };
    if outward(fp, f2p, 1.0) && outward(fm, f2m, -1.0) {
        TailClass::CaseA
    } else if outward(fp, f2p, -1.0) && outward(fm, f2m, 1.0) {
        TailClass::CaseB
    } else {
        TailClass::Neither
    }
}

pub fn classify_limits(spec: &TransformSpec, probe: f64) -> TailClass {
    classify_limits_fn(|x| spec.apply(x), probe)
}

/// Drop and rise functionals of a transform, measured on a finite box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropAnalysis {
    pub transform_id: String,
    /// `inf_{y >= x} (f(y) - f(x))`; unbounded (towards `-inf`) when the tails force it.
    pub d: Extent,
    /// `sup_{y >= x} (f(y) - f(x))`; unbounded (towards `+inf`) when the tails force it.
    pub d0: Extent,
    /// The grid oracle's value of `d` on the box, before the tail override.
    pub d_on_box: f64,
    pub d0_on_box: f64,
    pub tails: TailClass,
    pub search_box: [f64; 2],
    pub grid_resolution: usize,
}

/// Grid oracle for `(d, d0)` on `box`, with `resolution` intervals.
///
/// Uses suffix minima/maxima: `d = min_i (min_{j >= i} f_j - f_i)`.
pub fn drop_on_grid(f: impl Fn(f64) -> f64, search_box: [f64; 2], resolution: usize) -> Result<(f64, f64)> {
    let [lo, hi] = search_box;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(param(format!("search box [{lo}, {hi}] must be a nonempty finite interval")));
    }
    if resolution < MIN_RESOLUTION {
        return Err(param(format!("grid resolution {resolution} below the minimum {MIN_RESOLUTION}")));
    }
    let width = hi - lo;
    let values: Vec<f64> = (0..=resolution).map(|i| f(lo + width * (i as f64 / resolution as f64))).collect();
    let mut suffix_min = f64::INFINITY;
    let mut suffix_max = f64::NEG_INFINITY;
    let mut d = 0.0_f64;
    let mut d0 = 0.0_f64;
    for &v in values.iter().rev() {
        suffix_min = suffix_min.min(v);
        suffix_max = suffix_max.max(v);
        d = d.min(suffix_min - v);
        d0 = d0.max(suffix_max - v);
    }
    Ok((d, d0))
}

pub fn analyze_drop_fn(
    transform_id: &str,
    f: impl Fn(f64) -> f64,
    search_box: [f64; 2],
    resolution: usize,
) -> Result<DropAnalysis> {
    let (d_box, d0_box) = drop_on_grid(&f, search_box, resolution)?;
    let tails = classify_limits_fn(&f, MIN_PROBE);
    // Diverging tails make the corresponding functional unbounded on the real line.
    let d = match tails {
        TailClass::CaseB => Extent::Unbounded,
        _ => Extent::Finite(d_box),
    };
    let d0 = match tails {
        TailClass::CaseA => Extent::Unbounded,
        _ => Extent::Finite(d0_box),
    };
    Ok(DropAnalysis {
        transform_id: transform_id.to_string(),
        d,
        d0,
        d_on_box: d_box,
        d0_on_box: d0_box,
        tails,
        search_box,
        grid_resolution: resolution,
    })
}

pub fn analyze_drop(spec: &TransformSpec, search_box: [f64; 2], resolution: usize) -> Result<DropAnalysis> {
    analyze_drop_fn(&spec.id, |x| spec.apply(x), search_box, resolution)
}

/// Open interval `(0, upper)` of admissible scale factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaInterval {
    pub upper: Extent,
    pub case: TailClass,
}

impl AlphaInterval {
    pub fn contains(&self, alpha: f64) -> bool {
        alpha > 0.0
            && match self.upper {
                Extent::Finite(u) => alpha < u,
                Extent::Unbounded => true,
            }
    }
}

/// Admissible `alpha` such that `alpha * f` has drop (case a) or rise (case b)
/// strictly inside `delta0`.
pub fn alpha_bound(spec: &TransformSpec, delta0: f64, analysis: &DropAnalysis) -> Result<AlphaInterval> {
    if analysis.transform_id != spec.id {
        return Err(Error::Contract(format!(
            "drop analysis computed for `{}` but applied to `{}`",
            analysis.transform_id, spec.id
        )));
    }
    if !(delta0.is_finite() && delta0 > 0.0) {
        return Err(param(format!("delta0 must be positive, got {delta0}")));
    }
    let case = classify_limits(spec, MIN_PROBE);
    let functional = match case {
        TailClass::CaseA => analysis.d,
        TailClass::CaseB => analysis.d0,
        TailClass::Neither => {
            return Err(Error::Contract(format!(
                "transform `{}` has no divergent tails of either orientation",
                spec.id
            )))
        }
    };
    let magnitude = functional.finite().map(f64::abs).ok_or_else(|| {
        Error::Contract(format!(
            "transform `{}`: the governing functional is unbounded, no alpha is admissible",
            spec.id
        ))
    })?;
    let upper = if magnitude == 0.0 { Extent::Unbounded } else { Extent::Finite(delta0 / magnitude) };
    Ok(AlphaInterval { upper, case })
}
