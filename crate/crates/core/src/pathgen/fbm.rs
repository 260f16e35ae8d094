//! Fractional Gaussian noise synthesis.
//!
//! Davies-Harte circulant embedding of the unit-spacing fGn autocovariance,
//! with an exact dense Cholesky fallback when the embedding has an eigenvalue
//! below `-NEGATIVE_EIGEN_TOL`.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{param, Error, Result};

/// Eigenvalues in `[-NEGATIVE_EIGEN_TOL, 0)` are rounded to zero.
pub const NEGATIVE_EIGEN_TOL: f64 = 1e-12;
/// Largest size for which the O(n^2) dense fallback is attempted.
pub const DENSE_FALLBACK_MAX: usize = 4096;

/// Autocovariance of unit-spacing fGn at lag `k`.
pub fn fgn_autocovariance(hurst: f64, k: usize) -> f64 {
    let h2 = 2.0 * hurst;
    let k = k as f64;
    0.5 * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).abs().powf(h2))
}

#[derive(Clone)]
enum Method {
    Circulant {
        /// `sqrt(lambda_k / m)` for k = 0..=n, m = 2n.
        scale: Vec<f64>,
        fft: Arc<dyn Fft<f64>>,
    },
    Dense {
        /// Row-major lower Cholesky factor.
        lower: Vec<f64>,
    },
}

#[derive(Clone)]
pub struct FgnSynthesizer {
    n: usize,
    hurst: f64,
    step_scale: f64,
    method: Method,
}

impl std::fmt::Debug for FgnSynthesizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FgnSynthesizer")
            .field("n", &self.n)
            .field("hurst", &self.hurst)
            .field("dense", &self.is_dense())
            .finish()
    }
}

impl FgnSynthesizer {
    /// Synthesizer for `n` increments of fBm on a grid with spacing `dt`.
    pub fn new(n: usize, dt: f64, hurst: f64) -> Result<Self> {
        check_hurst(hurst)?;
        if n == 0 {
            return Err(param("fGn length must be positive"));
        }
        match circulant(n, hurst)? {
            Some(method) => Ok(FgnSynthesizer { n, hurst, step_scale: dt.powf(hurst), method }),
            None => Self::dense(n, dt, hurst),
        }
    }

    /// Exact O(n^2) synthesizer, also used as the fallback.
    pub fn dense(n: usize, dt: f64, hurst: f64) -> Result<Self> {
        check_hurst(hurst)?;
        if n > DENSE_FALLBACK_MAX {
            return Err(Error::Numerical(format!(
                "circulant embedding is not nonnegative definite and n = {n} exceeds the dense fallback limit {DENSE_FALLBACK_MAX}"
            )));
        }
        let lower = cholesky_toeplitz(n, hurst)?;
        Ok(FgnSynthesizer { n, hurst, step_scale: dt.powf(hurst), method: Method::Dense { lower } })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.method, Method::Dense { .. })
    }

    /// Number of standard normals consumed per sample.
    pub fn normals_needed(&self) -> usize {
        match self.method {
            Method::Circulant { .. } => 2 * self.n,
            Method::Dense { .. } => self.n,
        }
    }

    /// Map a vector of standard normals to fGn increments (linear in `z`).
    pub fn from_normals(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.normals_needed(), "normal count mismatch");
        let n = self.n;
        match &self.method {
            Method::Circulant { scale, fft } => {
                let m = 2 * n;
                let mut w = vec![Complex::new(0.0, 0.0); m];
                w[0] = Complex::new(scale[0] * z[0], 0.0);
                w[n] = Complex::new(scale[n] * z[1], 0.0);
                let half = std::f64::consts::FRAC_1_SQRT_2;
                for k in 1..n {
                    let s = scale[k] * half;
                    let c = Complex::new(s * z[2 * k], s * z[2 * k + 1]);
                    w[k] = c;
                    w[m - k] = c.conj();
                }
                fft.process(&mut w);
                w[..n].iter().map(|c| c.re * self.step_scale).collect()
            }
            Method::Dense { lower } => (0..n)
                .map(|i| {
                    let row = &lower[i * n..i * n + i + 1];
                    let acc: f64 = row.iter().zip(z).map(|(l, zi)| l * zi).sum();
                    acc * self.step_scale
                })
                .collect(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.normals_needed()).map(|_| rng.sample(StandardNormal)).collect();
        self.from_normals(&z)
    }
}

pub(crate) fn check_hurst(hurst: f64) -> Result<()> {
    if hurst > 0.0 && hurst < 1.0 {
        Ok(())
    } else {
        Err(param(format!("Hurst parameter must lie in (0, 1), got {hurst}")))
    }
}

fn circulant(n: usize, hurst: f64) -> Result<Option<Method>> {
    let m = 2 * n;
    let mut c: Vec<Complex<f64>> = (0..m)
        .map(|j| {
            let lag = if j <= n { j } else { m - j };
            Complex::new(fgn_autocovariance(hurst, lag), 0.0)
        })
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(m);
    fft.process(&mut c);
    let mut scale = Vec::with_capacity(n + 1);
    for ev in c.iter().take(n + 1) {
        let mut lambda = ev.re;
        if !lambda.is_finite() {
            return Err(Error::Numerical("non-finite circulant eigenvalue".into()));
        }
        if lambda < 0.0 {
            if lambda < -NEGATIVE_EIGEN_TOL {
                return Ok(None);
            }
            lambda = 0.0;
        }
        scale.push((lambda / m as f64).sqrt());
    }
    Ok(Some(Method::Circulant { scale, fft }))
}

fn cholesky_toeplitz(n: usize, hurst: f64) -> Result<Vec<f64>> {
    let gamma: Vec<f64> = (0..n).map(|k| fgn_autocovariance(hurst, k)).collect();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = gamma[i - j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::Numerical(format!("fGn covariance is not positive definite at row {i}")));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}
