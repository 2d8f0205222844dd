//! Analytic covariance of measured elevation increments.
//!
//! Error-free terrain is modelled as 2-D fractional Brownian motion; the
//! measurement error is a zero-mean stationary Gaussian field with isotropic
//! Gaussian or exponential correlation. Working with increments relative to
//! the patch centre makes the observed field Gaussian with the closed-form
//! covariance assembled here, together with its four parameter derivatives
//! and a seeded sampler used to validate every estimator against known
//! ground truth.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CovError {
    #[error("covariance matrix is not positive definite even after jitter")]
    DegenerateModel,
}

/// Shape of the error spatial correlation function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseShape {
    /// exp(-d²/(2σ_c²)); correlation drops to ~0.61 at d = σ_c.
    Gaussian,
    /// exp(-|d|/σ_c).
    Exponential,
}

/// Error-free terrain parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FbmParams {
    /// Amplitude variance of elevation increments at unit distance, m².
    pub sigma_x2: f64,
    /// Hurst exponent in (0,1); lower is rougher.
    pub hurst: f64,
}

/// Measurement-error parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    /// Error variance, m².
    pub sigma_e2: f64,
    /// Squared correlation width, pixels².
    pub sigma_corr2: f64,
    pub shape: NoiseShape,
}

/// Full per-patch parameter vector (σ_x², H_q, σ_e², σ_Corr²).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theta {
    pub fbm: FbmParams,
    pub noise: NoiseParams,
}

/// Parameter selector for covariance derivatives, in FIM order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThetaParam {
    SigmaX2,
    Hurst,
    SigmaE2,
    SigmaCorr2,
}

/// Covariance of error-free increments ΔZ(t1,s1) and ΔZ(t2,s2).
pub fn fbm_increment_cov(t1: f64, s1: f64, t2: f64, s2: f64, fbm: &FbmParams) -> f64 {
    let r1 = t1 * t1 + s1 * s1;
    let r2 = t2 * t2 + s2 * s2;
    let d = (t1 - t2) * (t1 - t2) + (s1 - s2) * (s1 - s2);
    0.5 * fbm.sigma_x2 * (pow_h(r1, fbm.hurst) + pow_h(r2, fbm.hurst) - pow_h(d, fbm.hurst))
}

/// Error covariance at lag `d` pixels.
pub fn noise_cov(d: f64, noise: &NoiseParams) -> f64 {
    noise.sigma_e2 * correlation(d, noise)
}

#[inline]
fn correlation(d: f64, noise: &NoiseParams) -> f64 {
    match noise.shape {
        NoiseShape::Gaussian => (-d * d / (2.0 * noise.sigma_corr2)).exp(),
        NoiseShape::Exponential => (-d.abs() / noise.sigma_corr2.sqrt()).exp(),
    }
}

#[inline]
fn pow_h(r_sq: f64, h: f64) -> f64 {
    if r_sq <= 0.0 { 0.0 } else { (h * r_sq.ln()).exp() }
}

/// x^H · ln(x) with the x→0 limit taken as 0.
#[inline]
fn pow_h_log(r_sq: f64, h: f64) -> f64 {
    if r_sq <= 0.0 {
        0.0
    } else {
        let l = r_sq.ln();
        (h * l).exp() * l
    }
}

/// Precomputed pairwise geometry for a fixed coordinate list.
///
/// All patches extracted at the same half size share coordinates, so the
/// log- and distance tables are computed once and reused across every
/// likelihood evaluation.
#[derive(Debug, Clone)]
pub struct CovContext {
    n: usize,
    coords: Vec<(i32, i32)>,
    /// r_i² = t_i² + s_i² and its log, per coordinate.
    r_sq: Vec<f64>,
    ln_r_sq: Vec<f64>,
    /// Pairwise squared lag d0² and its log (upper triangle, row-major).
    d_sq: Vec<f64>,
    ln_d_sq: Vec<f64>,
}

impl CovContext {
    pub fn new(coords: &[(i32, i32)]) -> Self {
        let n = coords.len();
        let r_sq: Vec<f64> = coords
            .iter()
            .map(|&(t, s)| (t * t + s * s) as f64)
            .collect();
        let ln_r_sq = r_sq.iter().map(|&r| if r > 0.0 { r.ln() } else { 0.0 }).collect();
        let mut d_sq = vec![0.0; n * n];
        let mut ln_d_sq = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let dt = (coords[i].0 - coords[j].0) as f64;
                let ds = (coords[i].1 - coords[j].1) as f64;
                let d2 = dt * dt + ds * ds;
                d_sq[i * n + j] = d2;
                d_sq[j * n + i] = d2;
                let l = if d2 > 0.0 { d2.ln() } else { 0.0 };
                ln_d_sq[i * n + j] = l;
                ln_d_sq[j * n + i] = l;
            }
        }
        Self { n, coords: coords.to_vec(), r_sq, ln_r_sq, d_sq, ln_d_sq }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn coords(&self) -> &[(i32, i32)] {
        &self.coords
    }

    /// Covariance matrix of observed increments for `theta`.
    pub fn cov(&self, theta: &Theta) -> DMatrix<f64> {
        let f = self.fbm_structure(theta.fbm.hurst);
        let e = self.noise_structure(theta.noise.sigma_corr2, theta.noise.shape);
        assemble_cov(theta.fbm.sigma_x2, &f, theta.noise.sigma_e2, &e)
    }

    /// fBm increment covariance at unit amplitude: cov = σ_x² · F(H).
    ///
    /// Hot path: r_i^{2H} is one exponential per coordinate; only the
    /// pairwise lag term costs one exponential per matrix entry.
    pub fn fbm_structure(&self, hurst: f64) -> DMatrix<f64> {
        let n = self.n;
        let pow_r: Vec<f64> = self
            .r_sq
            .iter()
            .zip(&self.ln_r_sq)
            .map(|(&r, &l)| if r > 0.0 { (hurst * l).exp() } else { 0.0 })
            .collect();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = pow_r[i];
            for j in i + 1..n {
                let d = self.d_sq[i * n + j];
                let pd = if d > 0.0 { (hurst * self.ln_d_sq[i * n + j]).exp() } else { 0.0 };
                let v = 0.5 * (pow_r[i] + pow_r[j] - pd);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    /// Error increment covariance at unit variance: cov = σ_e² · Ẽ(σ_Corr²).
    ///
    /// Entry (i,j) is ρ(d0) + 1 - ρ(r_i) - ρ(r_j): subtracting the centre
    /// pixel couples every pair through it.
    pub fn noise_structure(&self, sigma_corr2: f64, shape: NoiseShape) -> DMatrix<f64> {
        let n = self.n;
        let unit = NoiseParams { sigma_e2: 1.0, sigma_corr2, shape };
        let rho_r: Vec<f64> = self.r_sq.iter().map(|&r| correlation(r.sqrt(), &unit)).collect();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 2.0 - 2.0 * rho_r[i];
            for j in i + 1..n {
                let d0 = self.d_sq[i * n + j].sqrt();
                let v = correlation(d0, &unit) + 1.0 - rho_r[i] - rho_r[j];
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    /// Elementwise partial derivative of [`CovContext::cov`] in `which`.
    pub fn derivative(&self, theta: &Theta, which: ThetaParam) -> DMatrix<f64> {
        let n = self.n;
        let mut m = DMatrix::zeros(n, n);
        let h = theta.fbm.hurst;
        let noise = &theta.noise;
        match which {
            ThetaParam::SigmaX2 => {
                for i in 0..n {
                    for j in i..n {
                        let v = 0.5
                            * (exp_h(self.ln_r_sq[i], self.r_sq[i], h)
                                + exp_h(self.ln_r_sq[j], self.r_sq[j], h)
                                - exp_h(self.ln_d_sq[i * n + j], self.d_sq[i * n + j], h));
                        m[(i, j)] = v;
                        m[(j, i)] = v;
                    }
                }
            }
            ThetaParam::Hurst => {
                let sx2 = theta.fbm.sigma_x2;
                for i in 0..n {
                    for j in i..n {
                        let v = 0.5
                            * sx2
                            * (exp_h_log(self.ln_r_sq[i], self.r_sq[i], h)
                                + exp_h_log(self.ln_r_sq[j], self.r_sq[j], h)
                                - exp_h_log(self.ln_d_sq[i * n + j], self.d_sq[i * n + j], h));
                        m[(i, j)] = v;
                        m[(j, i)] = v;
                    }
                }
            }
            ThetaParam::SigmaE2 => {
                let rho_r: Vec<f64> =
                    self.r_sq.iter().map(|&r| correlation(r.sqrt(), noise)).collect();
                for i in 0..n {
                    for j in i..n {
                        let d0 = self.d_sq[i * n + j].sqrt();
                        let v = correlation(d0, noise) + 1.0 - rho_r[i] - rho_r[j];
                        m[(i, j)] = v;
                        m[(j, i)] = v;
                    }
                }
            }
            ThetaParam::SigmaCorr2 => {
                // d/dσ_c² of σ_e²·ρ(d); the zero-lag term is constant in σ_c².
                let term = |d: f64| -> f64 {
                    match noise.shape {
                        NoiseShape::Gaussian => {
                            d * d * (-d * d / (2.0 * noise.sigma_corr2)).exp()
                                / (2.0 * noise.sigma_corr2 * noise.sigma_corr2)
                        }
                        NoiseShape::Exponential => {
                            let sc = noise.sigma_corr2.sqrt();
                            d * (-d / sc).exp() / (2.0 * sc * sc * sc)
                        }
                    }
                };
                let t_r: Vec<f64> = self.r_sq.iter().map(|&r| term(r.sqrt())).collect();
                for i in 0..n {
                    for j in i..n {
                        let d0 = self.d_sq[i * n + j].sqrt();
                        let v = noise.sigma_e2 * (term(d0) - t_r[i] - t_r[j]);
                        m[(i, j)] = v;
                        m[(j, i)] = v;
                    }
                }
            }
        }
        m
    }
}

#[inline]
fn exp_h(ln_r_sq: f64, r_sq: f64, h: f64) -> f64 {
    if r_sq <= 0.0 { 0.0 } else { (h * ln_r_sq).exp() }
}

#[inline]
fn exp_h_log(ln_r_sq: f64, r_sq: f64, h: f64) -> f64 {
    if r_sq <= 0.0 { 0.0 } else { (h * ln_r_sq).exp() * ln_r_sq }
}

/// Relative diagonal jitter applied once before Cholesky factorisation.
pub const CHOLESKY_JITTER: f64 = 1e-10;

/// Add `CHOLESKY_JITTER · trace/n` to the diagonal.
pub fn apply_jitter(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return;
    }
    let jitter = CHOLESKY_JITTER * m.trace() / n as f64;
    for i in 0..n {
        m[(i, i)] += jitter;
    }
}

/// Covariance matrix of observed increments (Gaussian or exponential error
/// correlation per `theta.noise.shape`).
pub fn observed_cov_matrix(coords: &[(i32, i32)], theta: &Theta) -> DMatrix<f64> {
    CovContext::new(coords).cov(theta)
}

/// Partial derivative of [`observed_cov_matrix`] in the named parameter.
pub fn cov_derivative(coords: &[(i32, i32)], theta: &Theta, which: ThetaParam) -> DMatrix<f64> {
    CovContext::new(coords).derivative(theta, which)
}

/// One zero-mean Gaussian draw with the analytic increment covariance.
///
/// Deterministic given `seed`. A parameter vector with zero total variance
/// yields all-zero increments.
pub fn sample_patch(coords: &[(i32, i32)], theta: &Theta, seed: u64) -> Result<Vec<f64>, CovError> {
    let ctx = CovContext::new(coords);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    sample_with_rng(&ctx, theta, &mut rng)
}

/// Sampler core reused by the tile simulator with externally managed RNG
/// streams.
pub fn sample_with_rng(
    ctx: &CovContext,
    theta: &Theta,
    rng: &mut impl rand::Rng,
) -> Result<Vec<f64>, CovError> {
    let n = ctx.len();
    let mut cov = ctx.cov(theta);
    if cov.trace() <= 0.0 {
        return Ok(vec![0.0; n]);
    }
    apply_jitter(&mut cov);
    let chol = nalgebra::Cholesky::new(cov).ok_or(CovError::DegenerateModel)?;
    let eps = nalgebra::DVector::from_iterator(
        n,
        (0..n).map(|_| StandardNormal.sample(rng)),
    );
    Ok((chol.l() * eps).iter().copied().collect())
}
