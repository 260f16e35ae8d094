//! Seeded continuous-path ensembles on uniform grids.
//!
//! A [`SamplePath`] stores values at the grid times. Off-grid, the path is the
//! linear interpolation through its knots: the grid values plus, for
//! transformed models, extra knots where the driving path crosses a turning
//! point of the transform. Every barrier and window computation downstream
//! uses this convention.

mod export;
mod fbm;

pub use export::{read_ensemble, write_ensemble, write_path_csv, ENSEMBLE_MAGIC, ENSEMBLE_VERSION};
pub use fbm::{fgn_autocovariance, FgnSynthesizer, DENSE_FALLBACK_MAX, NEGATIVE_EIGEN_TOL};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::par;
use crate::transforms::{TransformRegistry, TransformSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<TimeGrid> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(param(format!("horizon must be positive and finite, got {horizon}")));
        }
        if n_steps < 2 {
            return Err(param(format!("grid needs at least 2 steps, got {n_steps}")));
        }
        Ok(TimeGrid { horizon, n_steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// `t_i = i T / n`; `time(n) == T` exactly.
    pub fn time(&self, i: usize) -> f64 {
        if i >= self.n_steps {
            return self.horizon;
        }
        self.horizon * (i as f64 / self.n_steps as f64)
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(|i| self.time(i))
    }

    /// Index of the first grid time strictly after `t` (may be `n_steps + 1`).
    pub fn first_index_after(&self, t: f64) -> usize {
        if t < 0.0 {
            return 0;
        }
        let guess = (t / self.dt()).floor();
        let mut i = if guess.is_finite() { (guess.max(0.0) as usize).min(self.n_steps + 1) } else { 0 };
        while i > 0 && self.time(i - 1) > t {
            i -= 1;
        }
        while i <= self.n_steps && self.time(i) <= t {
            i += 1;
        }
        i
    }
}

/// A knot strictly inside a grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub t: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    pub grid: TimeGrid,
    /// Values at the grid times, `n_steps + 1` entries.
    pub values: Vec<f64>,
    /// Sorted interior knots; empty for untransformed models.
    pub extra_knots: Vec<Knot>,
    pub seed: u64,
    pub model_tag: String,
}

impl SamplePath {
    pub fn new(grid: TimeGrid, values: Vec<f64>, seed: u64, model_tag: impl Into<String>) -> Result<Self> {
        if values.len() != grid.n_steps() + 1 {
            return Err(param(format!("path has {} values, grid expects {}", values.len(), grid.n_steps() + 1)));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("path value {i} is not finite")));
        }
        Ok(SamplePath { grid, values, extra_knots: Vec::new(), seed, model_tag: model_tag.into() })
    }

    pub fn horizon(&self) -> f64 {
        self.grid.horizon()
    }

    pub fn initial(&self) -> f64 {
        self.values[0]
    }

    pub fn terminal(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// All knots `(t, x)` in time order, starting at `t = 0`.
    pub fn knots(&self) -> Knots<'_> {
        Knots { path: self, next_grid: 0, next_extra: 0 }
    }

    /// Knots with time strictly greater than `t`.
    pub fn knots_after(&self, t: f64) -> Knots<'_> {
        Knots {
            path: self,
            next_grid: self.grid.first_index_after(t),
            next_extra: self.extra_knots.partition_point(|k| k.t <= t),
        }
    }

    /// Path value at time `t` by linear interpolation between knots.
    pub fn value_at(&self, t: f64) -> f64 {
        match self.piece_at(t) {
            Err(x) => x,
            Ok((lt, lx, rt, rx)) => {
                if t == lt {
                    return lx;
                }
                lx + (rx - lx) * ((t - lt) / (rt - lt))
            }
        }
    }

    /// Knot interval `(lt, lx, rt, rx)` containing `t`, or the endpoint value
    /// when `t` is outside `(0, T)`.
    fn piece_at(&self, t: f64) -> std::result::Result<(f64, f64, f64, f64), f64> {
        if t <= 0.0 {
            return Err(self.values[0]);
        }
        if t >= self.horizon() {
            return Err(self.terminal());
        }
        let gi = self.grid.first_index_after(t);
        let (mut lt, mut lx) = (self.grid.time(gi - 1), self.values[gi - 1]);
        let (mut rt, mut rx) = (self.grid.time(gi), self.values[gi]);
        let e = self.extra_knots.partition_point(|k| k.t <= t);
        if e > 0 && self.extra_knots[e - 1].t > lt {
            lt = self.extra_knots[e - 1].t;
            lx = self.extra_knots[e - 1].value;
        }
        if e < self.extra_knots.len() && self.extra_knots[e].t < rt {
            rt = self.extra_knots[e].t;
            rx = self.extra_knots[e].value;
        }
        Ok((lt, lx, rt, rx))
    }

    /// Rounding error of `value_at(t)` when `t` itself carries one rounding:
    /// value rounding plus the slope times the time rounding.
    fn value_rounding(&self, t: f64, level: f64) -> f64 {
        let x = self.value_at(t);
        let slope_term = match self.piece_at(t) {
            Ok((lt, lx, rt, rx)) => (rx - lx).abs() * t.max(1.0) / (rt - lt),
            Err(_) => 0.0,
        };
        4.0 * f64::EPSILON * (x.abs().max(level.abs()).max(1.0) + slope_term)
    }

    /// Largest absolute change between consecutive knots.
    pub fn max_abs_increment(&self) -> f64 {
        let mut prev: Option<f64> = None;
        let mut best = 0.0_f64;
        for (_, x) in self.knots() {
            if let Some(p) = prev {
                best = best.max((x - p).abs());
            }
            prev = Some(x);
        }
        best
    }

    /// First time in `[from, until]` at which the path reaches `level`, with the
    /// crossing located by linear interpolation inside the piece.
    pub fn first_hit(&self, level: f64, from: f64, until: f64) -> Option<f64> {
        let until = until.min(self.horizon());
        if from > until {
            return None;
        }
        let mut t0 = from;
        let mut x0 = self.value_at(from);
        // `from` is often itself an interpolated hit of `level`, which
        // `value_at` only reproduces up to rounding.
        if (x0 - level).abs() <= self.value_rounding(from, level) {
            return Some(from);
        }
        for (t1, x1) in self.knots_after(from) {
            let crossed = (x0 < level && x1 >= level) || (x0 > level && x1 <= level);
            if crossed {
                let frac = (level - x0) / (x1 - x0);
                let t = (t0 + (t1 - t0) * frac).clamp(t0, t1);
                return (t <= until).then_some(t);
            }
            if t1 >= until {
                return None;
            }
            t0 = t1;
            x0 = x1;
        }
        None
    }
}

pub struct Knots<'a> {
    path: &'a SamplePath,
    next_grid: usize,
    next_extra: usize,
}

impl Iterator for Knots<'_> {
    type Item = (f64, f64);

    fn next(&mut self) -> Option<(f64, f64)> {
        let p = self.path;
        let grid_t = (self.next_grid <= p.grid.n_steps()).then(|| p.grid.time(self.next_grid));
        let extra = p.extra_knots.get(self.next_extra);
        match (grid_t, extra) {
            (Some(gt), Some(k)) if k.t < gt => {
                self.next_extra += 1;
                Some((k.t, k.value))
            }
            (Some(gt), _) => {
                let v = p.values[self.next_grid];
                self.next_grid += 1;
                Some((gt, v))
            }
            (None, Some(k)) => {
                self.next_extra += 1;
                Some((k.t, k.value))
            }
            (None, None) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Driver {
    Brownian,
    FractionalBrownian { hurst: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Brownian,
    FractionalBrownian,
    Transformed,
}

/// Generating model: a Gaussian driver `x0 + sigma * B`, optionally composed
/// pointwise with a registered transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub driver: Driver,
    pub sigma: f64,
    pub x0: f64,
    pub transform: Option<String>,
}

impl ModelSpec {
    pub fn brownian(sigma: f64, x0: f64) -> ModelSpec {
        ModelSpec { driver: Driver::Brownian, sigma, x0, transform: None }
    }

    pub fn fbm(hurst: f64, sigma: f64, x0: f64) -> ModelSpec {
        ModelSpec { driver: Driver::FractionalBrownian { hurst }, sigma, x0, transform: None }
    }

    pub fn with_transform(mut self, id: impl Into<String>) -> ModelSpec {
        self.transform = Some(id.into());
        self
    }

    pub fn kind(&self) -> ModelKind {
        match (&self.transform, self.driver) {
            (Some(_), _) => ModelKind::Transformed,
            (None, Driver::Brownian) => ModelKind::Brownian,
            (None, Driver::FractionalBrownian { .. }) => ModelKind::FractionalBrownian,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(param(format!("volatility must be positive, got {}", self.sigma)));
        }
        if !self.x0.is_finite() {
            return Err(param("initial value must be finite"));
        }
        if let Driver::FractionalBrownian { hurst } = self.driver {
            fbm::check_hurst(hurst)?;
        }
        Ok(())
    }

    pub fn tag(&self) -> String {
        let driver = match self.driver {
            Driver::Brownian => format!("brownian(sigma={},x0={})", self.sigma, self.x0),
            Driver::FractionalBrownian { hurst } => {
                format!("fbm(H={hurst},sigma={},x0={})", self.sigma, self.x0)
            }
        };
        match &self.transform {
            Some(id) => format!("{id}({driver})"),
            None => driver,
        }
    }
}

/// SplitMix64 finalizer: a bijection on `u64`.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of path `index` in an ensemble: `splitmix64(base ^ splitmix64(index))`.
///
/// Injective in `index` for a fixed base, since both mixing steps and the XOR
/// are bijections.
pub fn path_seed(base_seed: u64, index: u64) -> u64 {
    splitmix64(base_seed ^ splitmix64(index))
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn cumulate(x0: f64, sigma: f64, increments: &[f64]) -> Vec<f64> {
    let mut values = Vec::with_capacity(increments.len() + 1);
    values.push(x0);
    let mut cum = 0.0;
    for inc in increments {
        cum += inc;
        values.push(x0 + sigma * cum);
    }
    values
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(param(format!("volatility must be positive, got {sigma}")))
    }
}

fn brownian_values(grid: &TimeGrid, sigma: f64, x0: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng_for(seed);
    let sd = grid.dt().sqrt();
    let incs: Vec<f64> = (0..grid.n_steps()).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
    cumulate(x0, sigma, &incs)
}

pub fn generate_brownian(grid: TimeGrid, sigma: f64, x0: f64, seed: u64) -> Result<SamplePath> {
    check_sigma(sigma)?;
    let values = brownian_values(&grid, sigma, x0, seed);
    SamplePath::new(grid, values, seed, ModelSpec::brownian(sigma, x0).tag())
}

pub fn generate_fbm(grid: TimeGrid, hurst: f64, sigma: f64, x0: f64, seed: u64) -> Result<SamplePath> {
    check_sigma(sigma)?;
    let synth = FgnSynthesizer::new(grid.n_steps(), grid.dt(), hurst)?;
    let incs = synth.sample(&mut rng_for(seed));
    SamplePath::new(grid, cumulate(x0, sigma, &incs), seed, ModelSpec::fbm(hurst, sigma, x0).tag())
}

/// Apply `f` pointwise to a driving path, inserting knots where the driver
/// crosses a turning point of `f`.
pub fn compose_transform(driver: &SamplePath, f: &TransformSpec, model_tag: String) -> SamplePath {
    let grid = driver.grid;
    let values: Vec<f64> = driver.values.iter().map(|&x| f.apply(x)).collect();
    let turning = f.turning_points();
    let mut extra_knots = Vec::new();
    if !turning.is_empty() {
        for i in 0..grid.n_steps() {
            let (u, v) = (driver.values[i], driver.values[i + 1]);
            if u == v {
                continue;
            }
            let (t0, t1) = (grid.time(i), grid.time(i + 1));
            let mut push = |c: f64| {
                if (u < c && c < v) || (v < c && c < u) {
                    let t = t0 + (t1 - t0) * ((c - u) / (v - u));
                    if t > t0 && t < t1 {
                        extra_knots.push(Knot { t, value: f.apply(c) });
                    }
                }
            };
            if v > u {
                turning.iter().copied().for_each(&mut push);
            } else {
                turning.iter().rev().copied().for_each(&mut push);
            }
        }
    }
    SamplePath { grid, values, extra_knots, seed: driver.seed, model_tag }
}

/// Resolved generator for one model on one grid; cheap to share across threads.
#[derive(Debug, Clone)]
pub struct PathGenerator {
    spec: ModelSpec,
    grid: TimeGrid,
    transform: Option<TransformSpec>,
    fgn: Option<FgnSynthesizer>,
    tag: String,
}

impl PathGenerator {
    pub fn new(spec: ModelSpec, grid: TimeGrid, registry: &TransformRegistry) -> Result<Self> {
        spec.validate()?;
        let transform = match &spec.transform {
            Some(id) => Some(registry.get(id)?.clone()),
            None => None,
        };
        let fgn = match spec.driver {
            Driver::FractionalBrownian { hurst } => Some(FgnSynthesizer::new(grid.n_steps(), grid.dt(), hurst)?),
            Driver::Brownian => None,
        };
        let tag = spec.tag();
        Ok(PathGenerator { spec, grid, transform, fgn, tag })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    /// Driving path (before any transform).
    pub fn driver(&self, seed: u64) -> SamplePath {
        let values = match &self.fgn {
            Some(synth) => {
                let incs = synth.sample(&mut rng_for(seed));
                cumulate(self.spec.x0, self.spec.sigma, &incs)
            }
            None => brownian_values(&self.grid, self.spec.sigma, self.spec.x0, seed),
        };
        SamplePath { grid: self.grid, values, extra_knots: Vec::new(), seed, model_tag: self.tag.clone() }
    }

    pub fn sample(&self, seed: u64) -> SamplePath {
        let driver = self.driver(seed);
        match &self.transform {
            Some(f) => compose_transform(&driver, f, self.tag.clone()),
            None => driver,
        }
    }
}

pub fn generate_ensemble(
    spec: &ModelSpec,
    grid: TimeGrid,
    n_paths: usize,
    base_seed: u64,
    registry: &TransformRegistry,
) -> Result<Vec<SamplePath>> {
    Ensemble::new(PathGenerator::new(spec.clone(), grid, registry)?, n_paths, base_seed)?.collect()
}

/// Where an ensemble's paths came from, enough to regenerate them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayInfo {
    pub model: ModelSpec,
    pub grid: TimeGrid,
    pub base_seed: u64,
    pub n_paths: usize,
}

/// Anything that can hand out a fixed, ordered collection of paths.
pub trait PathSource: Sync {
    fn n_paths(&self) -> usize;

    fn horizon(&self) -> f64;

    /// Apply `f(index, path)` to every path; results in index order.
    fn map_paths<T, F>(&self, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize, &SamplePath) -> T + Sync + Send;

    fn replay_info(&self) -> Option<ReplayInfo> {
        None
    }
}

impl PathSource for [SamplePath] {
    fn n_paths(&self) -> usize {
        self.len()
    }

    fn horizon(&self) -> f64 {
        self.first().map_or(0.0, SamplePath::horizon)
    }

    fn map_paths<T, F>(&self, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize, &SamplePath) -> T + Sync + Send,
    {
        par::map_indexed(self.len(), |i| f(i, &self[i]))
    }
}

impl PathSource for Vec<SamplePath> {
    fn n_paths(&self) -> usize {
        self.len()
    }

    fn horizon(&self) -> f64 {
        self.as_slice().horizon()
    }

    fn map_paths<T, F>(&self, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize, &SamplePath) -> T + Sync + Send,
    {
        self.as_slice().map_paths(f)
    }
}

/// Lazily generated ensemble: path `i` is produced on demand from
/// `path_seed(base_seed, i)` and dropped after use.
#[derive(Debug, Clone)]
pub struct Ensemble {
    generator: PathGenerator,
    n_paths: usize,
    base_seed: u64,
}

impl Ensemble {
    pub fn new(generator: PathGenerator, n_paths: usize, base_seed: u64) -> Result<Self> {
        if n_paths == 0 {
            return Err(param("ensemble needs at least one path"));
        }
        Ok(Ensemble { generator, n_paths, base_seed })
    }

    pub fn generator(&self) -> &PathGenerator {
        &self.generator
    }

    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    pub fn seed(&self, index: usize) -> u64 {
        path_seed(self.base_seed, index as u64)
    }

    pub fn path(&self, index: usize) -> SamplePath {
        self.generator.sample(self.seed(index))
    }

    pub fn collect(&self) -> Result<Vec<SamplePath>> {
        Ok(par::map_indexed(self.n_paths, |i| self.path(i)))
    }
}

impl PathSource for Ensemble {
    fn n_paths(&self) -> usize {
        self.n_paths
    }

    fn horizon(&self) -> f64 {
        self.generator.grid.horizon()
    }

    fn map_paths<T, F>(&self, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize, &SamplePath) -> T + Sync + Send,
    {
        par::map_indexed(self.n_paths, |i| f(i, &self.path(i)))
    }

    fn replay_info(&self) -> Option<ReplayInfo> {
        Some(ReplayInfo {
            model: self.generator.spec.clone(),
            grid: self.generator.grid,
            base_seed: self.base_seed,
            n_paths: self.n_paths,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::Builtin;
    use proptest::prelude::*;

    fn grid() -> TimeGrid {
        TimeGrid::new(1.0, 64).unwrap()
    }

    #[test]
    fn grid_invariants() {
        let g = TimeGrid::new(2.5, 7).unwrap();
        let t: Vec<f64> = g.times().collect();
        assert_eq!(t.len(), 8);
        assert_eq!(t[0], 0.0);
        assert_eq!(t[7], 2.5);
        assert!(t.windows(2).all(|w| w[0] < w[1]));
        assert!(TimeGrid::new(1.0, 1).is_err());
        assert!(TimeGrid::new(0.0, 10).is_err());
        assert!(TimeGrid::new(f64::INFINITY, 10).is_err());
    }

    #[test]
    fn first_index_after_brackets() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        assert_eq!(g.first_index_after(-1.0), 0);
        assert_eq!(g.first_index_after(0.0), 1);
        assert_eq!(g.first_index_after(0.3), 4);
        assert_eq!(g.first_index_after(0.35), 4);
        assert_eq!(g.first_index_after(1.0), 11);
    }

    #[test]
    fn brownian_starts_at_x0_and_is_deterministic() {
        let a = generate_brownian(grid(), 1.0, 0.0, 42).unwrap();
        let b = generate_brownian(grid(), 1.0, 0.0, 42).unwrap();
        assert_eq!(a.values[0], 0.0);
        assert_eq!(a, b);
        let c = generate_brownian(grid(), 1.0, 0.0, 43).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn generator_errors() {
        assert!(generate_brownian(grid(), 0.0, 0.0, 1).is_err());
        assert!(generate_brownian(grid(), -1.0, 0.0, 1).is_err());
        assert!(matches!(generate_fbm(grid(), 1.0, 1.0, 0.0, 1), Err(Error::Parameter(_))));
        let reg = TransformRegistry::with_builtins();
        let spec = ModelSpec::brownian(1.0, 0.0).with_transform("missing");
        assert!(matches!(PathGenerator::new(spec, grid(), &reg), Err(Error::Configuration(_))));
    }

    #[test]
    fn fbm_is_deterministic_and_finite() {
        let a = generate_fbm(grid(), 0.7, 1.0, 0.3, 9).unwrap();
        let b = generate_fbm(grid(), 0.7, 1.0, 0.3, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.values[0], 0.3);
        assert!(a.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn ensemble_seeds_are_distinct_and_reproducible() {
        let reg = TransformRegistry::with_builtins();
        let spec = ModelSpec::brownian(1.0, 0.0);
        let a = generate_ensemble(&spec, grid(), 3, 7, &reg).unwrap();
        let b = generate_ensemble(&spec, grid(), 3, 7, &reg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].seed, a[1].seed);
        assert_ne!(a[1].seed, a[2].seed);
        assert_ne!(a[0].seed, a[2].seed);
        assert!(generate_ensemble(&spec, grid(), 0, 7, &reg).is_err());
    }

    #[test]
    fn identity_transform_reproduces_driver() {
        let reg = TransformRegistry::with_builtins();
        let raw = generate_ensemble(&ModelSpec::fbm(0.3, 1.0, 0.0), grid(), 4, 11, &reg).unwrap();
        let tr =
            generate_ensemble(&ModelSpec::fbm(0.3, 1.0, 0.0).with_transform("identity"), grid(), 4, 11, &reg).unwrap();
        for (r, t) in raw.iter().zip(&tr) {
            assert_eq!(r.values, t.values);
            assert!(t.extra_knots.is_empty());
        }
    }

    #[test]
    fn transformed_path_keeps_turning_point_values() {
        let g = TimeGrid::new(1.0, 2).unwrap();
        let driver = SamplePath::new(g, vec![0.5, -1.5, -0.5], 0, "hand").unwrap();
        let f = TransformSpec::builtin(Builtin::PiecewiseEx3);
        let p = compose_transform(&driver, &f, "ex3".into());
        assert_eq!(p.values, vec![0.5, 0.5, 0.5]);
        // Crossings of 0 then -1 on the way down, -1 again on the way up.
        let knots: Vec<(f64, f64)> = p.extra_knots.iter().map(|k| (k.t, k.value)).collect();
        assert_eq!(knots.len(), 3);
        assert!((knots[0].0 - 0.125).abs() < 1e-15 && knots[0].1 == 0.0);
        assert!((knots[1].0 - 0.375).abs() < 1e-15 && knots[1].1 == 1.0);
        assert!((knots[2].0 - 0.75).abs() < 1e-15 && knots[2].1 == 1.0);
        assert_eq!(p.value_at(0.375), 1.0);
        let all: Vec<f64> = p.knots().map(|k| k.0).collect();
        assert!(all.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(all.len(), 6);
    }

    #[test]
    fn value_at_interpolates() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let p = SamplePath::new(g, vec![0.0, 1.0, -1.0, 0.0, 2.0], 0, "hand").unwrap();
        assert_eq!(p.value_at(0.125), 0.5);
        assert_eq!(p.value_at(0.25), 1.0);
        assert_eq!(p.value_at(0.375), 0.0);
        assert_eq!(p.value_at(1.0), 2.0);
        assert_eq!(p.value_at(7.0), 2.0);
        assert_eq!(p.max_abs_increment(), 2.0);
    }

    #[test]
    fn first_hit_interpolates_crossing() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let p = SamplePath::new(g, vec![0.0, 1.0, -1.0, 0.0, 2.0], 0, "hand").unwrap();
        assert_eq!(p.first_hit(0.5, 0.0, 1.0), Some(0.125));
        assert_eq!(p.first_hit(-0.5, 0.0, 1.0), Some(0.4375));
        assert_eq!(p.first_hit(1.5, 0.0, 1.0), Some(0.9375));
        assert_eq!(p.first_hit(1.5, 0.0, 0.9), None);
        assert_eq!(p.first_hit(3.0, 0.0, 1.0), None);
        assert_eq!(p.first_hit(0.5, 0.3, 1.0), Some(0.3125));
        assert_eq!(p.first_hit(0.0, 0.0, 1.0), Some(0.0));
    }

    proptest! {
        #[test]
        fn path_seed_injective_in_index(base in any::<u64>(), i in any::<u64>(), j in any::<u64>()) {
            prop_assume!(i != j);
            prop_assert_ne!(path_seed(base, i), path_seed(base, j));
        }

        #[test]
        fn knots_are_ordered_and_cover_the_grid(seed in any::<u64>(), which in 0usize..4) {
            let reg = TransformRegistry::with_builtins();
            let id = Builtin::ALL[which].name();
            let gen = PathGenerator::new(
                ModelSpec::brownian(1.5, -0.4).with_transform(id),
                TimeGrid::new(1.0, 128).unwrap(),
                &reg,
            ).unwrap();
            let p = gen.sample(seed);
            let ks: Vec<(f64, f64)> = p.knots().collect();
            prop_assert_eq!(ks.len(), 129 + p.extra_knots.len());
            prop_assert!(ks.windows(2).all(|w| w[0].0 < w[1].0));
            for (t, x) in &ks {
                prop_assert_eq!(p.value_at(*t), *x);
            }
        }
    }
}
