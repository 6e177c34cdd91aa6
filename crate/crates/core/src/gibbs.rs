//! Block Gibbs samplers for the Bayesian graphical lasso (Gaussian
//! likelihood, "BG") and its multivariate-t variant ("BT").
//!
//! The prior is the Laplace/exponential product restricted to positive
//! definite matrices: `ω_ij ~ DE(λ)` off the diagonal, `ω_ii ~ Exp(λ/2)`.
//! Off-diagonals are written as normal scale mixtures with latent variances
//! `τ_ij`, and one column of `Ω` is updated at a time through
//! `(β, γ̃) = (ω₁₂, ω₂₂ − ω₁₂ᵀ Ω₁₁⁻¹ ω₁₂)`, which keeps every draw positive
//! definite. For BT a single shared mixing scale `u ~ Ga(ν/2, ν/2)`
//! multiplies the precision by `νu/(ν−2)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, StandardNormal};

use crate::error::{GgmError, Result};
use crate::model::{cholesky, quad_forms, spd_inverse, DataMatrix, PrecisionMatrix};
use crate::rng::{stream_rng, StreamRng};
use crate::wbb::{Method, PosteriorSample, SampleMeta};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GibbsConfig {
    /// Degrees of freedom of the t likelihood; ignored by BG.
    pub nu: f64,
    pub n_keep: usize,
    pub n_burn: usize,
    /// Shape `r` and rate `s` of the Gamma prior on λ.
    pub lambda_shape: f64,
    pub lambda_rate: f64,
    /// Debug switch: hold `u` at this value instead of sampling it.
    pub fixed_u: Option<f64>,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            nu: 3.0,
            n_keep: 6000,
            n_burn: 4000,
            lambda_shape: 0.01,
            lambda_rate: 0.01,
            fixed_u: None,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 2.0) {
            return Err(GgmError::InvalidParameter(format!("nu = {} must exceed 2", self.nu)));
        }
        if !(self.lambda_shape > 0.0 && self.lambda_rate > 0.0) {
            return Err(GgmError::InvalidParameter("lambda prior must have positive shape and rate".into()));
        }
        if self.n_keep == 0 {
            return Err(GgmError::InvalidParameter("n_keep must be >= 1".into()));
        }
        if let Some(u) = self.fixed_u {
            if !(u > 0.0) {
                return Err(GgmError::InvalidParameter(format!("fixed u = {u}")));
            }
        }
        Ok(())
    }

    /// Precision multiplier `νu/(ν−2)` for a given `u`.
    fn scale(&self, u: f64) -> f64 {
        self.nu * u / (self.nu - 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Likelihood {
    Gaussian,
    StudentT,
}

/// Latent variables carried alongside `Ω`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentScales {
    /// Symmetric; only off-diagonal entries are used.
    pub tau: DMatrix<f64>,
    pub u: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub struct GibbsState {
    pub omega: PrecisionMatrix,
    pub latent: LatentScales,
}

fn gamma_draw<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| GgmError::Numerical(format!("Gamma({shape}, {rate}): {e}")))?;
    Ok(g.sample(rng))
}

/// Inverse-Gaussian draw by the transformation-with-uniform-correction
/// method, with the smaller root written in a cancellation-free form.
pub fn inverse_gaussian<R: Rng + ?Sized>(mean: f64, shape: f64, rng: &mut R) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let r = mean * z * z / (2.0 * shape);
        let x = mean / (1.0 + r + (r * r + 2.0 * r).sqrt());
        let v = if rng.random::<f64>() <= mean / (mean + x) {
            x
        } else {
            mean * mean / x
        };
        if v > 0.0 && v.is_finite() {
            return v;
        }
    }
}

/// `u | Y, Ω ~ Ga((np+ν)/2, ν/(2(ν−2))·Σ yᵢᵀΩyᵢ + ν/2)`.
pub fn sample_u<R: Rng + ?Sized>(y: &DataMatrix, omega: &PrecisionMatrix, nu: f64, rng: &mut R) -> Result<f64> {
    let q: f64 = quad_forms(y, omega)?.iter().sum();
    sample_u_from(y.nrows(), omega.dim(), q, nu, rng)
}

fn sample_u_from<R: Rng + ?Sized>(n: usize, p: usize, q: f64, nu: f64, rng: &mut R) -> Result<f64> {
    if !(nu > 2.0) {
        return Err(GgmError::InvalidParameter(format!("nu = {nu} must exceed 2")));
    }
    let shape = 0.5 * ((n * p) as f64 + nu);
    let rate = nu / (2.0 * (nu - 2.0)) * q + 0.5 * nu;
    gamma_draw(shape, rate, rng)
}

/// `Σ_{i<j} |ω_ij| + ½ Σ ω_ii`: the prior exponent divided by λ.
fn prior_norm(omega: &DMatrix<f64>) -> f64 {
    let p = omega.nrows();
    let mut acc = 0.0;
    for j in 0..p {
        acc += 0.5 * omega[(j, j)];
        for i in 0..j {
            acc += omega[(i, j)].abs();
        }
    }
    acc
}

/// Log of the collapsed joint kernel `p(Y | Ω, u) π(Ω | λ) π(λ) π(u)` up to
/// a constant, with `yty = YᵀY`. For the Gaussian likelihood `u` is unused.
pub fn log_joint(
    omega: &PrecisionMatrix,
    lambda: f64,
    u: f64,
    yty: &DMatrix<f64>,
    n: usize,
    cfg: &GibbsConfig,
    lik: Likelihood,
) -> f64 {
    let p = omega.dim();
    let m = (p * (p + 1) / 2) as f64;
    let trace = yty.component_mul(omega.values()).sum();
    let (c, log_u_terms) = match lik {
        Likelihood::Gaussian => (1.0, 0.0),
        Likelihood::StudentT => {
            let nu = cfg.nu;
            let c = cfg.scale(u);
            (c, 0.5 * (n * p) as f64 * u.ln() + (0.5 * nu - 1.0) * u.ln() - 0.5 * nu * u)
        }
    };
    0.5 * n as f64 * omega.log_det() - 0.5 * c * trace
        + m * lambda.ln()
        - lambda * prior_norm(omega.values())
        + (cfg.lambda_shape - 1.0) * lambda.ln()
        - cfg.lambda_rate * lambda
        + log_u_terms
}

/// Log of the augmented prior terms `Π_{i<j} N(ω_ij; 0, τ_ij) Exp(τ_ij; λ²/2)`.
pub fn log_tau_kernel(omega: &PrecisionMatrix, latent: &LatentScales) -> f64 {
    let p = omega.dim();
    let l2 = latent.lambda * latent.lambda;
    let mut acc = 0.0;
    for j in 0..p {
        for i in 0..j {
            let t = latent.tau[(i, j)];
            let w = omega.get(i, j);
            acc += -0.5 * (2.0 * PI * t).ln() - 0.5 * w * w / t + (0.5 * l2).ln() - 0.5 * l2 * t;
        }
    }
    acc
}

/// One sampler chain; `sweep` performs a full scan of the conditionals.
#[derive(Debug, Clone)]
pub struct GibbsChain {
    yty: DMatrix<f64>,
    n: usize,
    cfg: GibbsConfig,
    lik: Likelihood,
    state: GibbsState,
    rng: StreamRng,
}

impl GibbsChain {
    /// Starts at `Ω = I`, `τ ≡ 1`, `λ = 1` and `u = 1` (or the fixed value).
    pub fn new(y: &DataMatrix, cfg: &GibbsConfig, lik: Likelihood, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let p = y.ncols();
        let state = GibbsState {
            omega: PrecisionMatrix::identity(p),
            latent: LatentScales {
                tau: DMatrix::from_element(p, p, 1.0),
                u: cfg.fixed_u.unwrap_or(1.0),
                lambda: 1.0,
            },
        };
        Self::from_state(y, cfg, lik, state, stream_rng(seed, 0))
    }

    pub fn from_state(y: &DataMatrix, cfg: &GibbsConfig, lik: Likelihood, state: GibbsState, rng: StreamRng) -> Result<Self> {
        cfg.validate()?;
        if state.omega.dim() != y.ncols() {
            return Err(GgmError::Dimension {
                expected: state.omega.dim(),
                got: y.ncols(),
            });
        }
        Ok(Self {
            yty: gram(y),
            n: y.nrows(),
            cfg: *cfg,
            lik,
            state,
            rng,
        })
    }

    pub fn state(&self) -> &GibbsState {
        &self.state
    }

    /// Replaces the data, keeping the current parameters.
    pub fn set_data(&mut self, y: &DataMatrix) -> Result<()> {
        if y.ncols() != self.state.omega.dim() {
            return Err(GgmError::Dimension {
                expected: self.state.omega.dim(),
                got: y.ncols(),
            });
        }
        self.yty = gram(y);
        self.n = y.nrows();
        Ok(())
    }

    pub fn rng(&mut self) -> &mut StreamRng {
        &mut self.rng
    }

    /// Columns of `Ω` given `(τ, λ, u)`, then `u | Ω`, then `λ | Ω`
    /// (with `τ` integrated out), then `τ | Ω, λ`.
    pub fn sweep(&mut self) -> Result<()> {
        let p = self.state.omega.dim();
        let c = match self.lik {
            Likelihood::Gaussian => 1.0,
            Likelihood::StudentT => self.cfg.scale(self.state.latent.u),
        };
        let s = &self.yty * c;
        let mut omega = self.state.omega.values().clone();
        for j in 0..p {
            update_column(&mut omega, &self.state.latent, &s, self.n, j, &mut self.rng)?;
        }
        let omega = PrecisionMatrix::new(omega)
            .map_err(|e| GgmError::Numerical(format!("Gibbs column update lost definiteness: {e}")))?;

        if self.lik == Likelihood::StudentT {
            self.state.latent.u = match self.cfg.fixed_u {
                Some(u) => u,
                None => {
                    let q = self.yty.component_mul(omega.values()).sum();
                    sample_u_from(self.n, p, q, self.cfg.nu, &mut self.rng)?
                }
            };
        }

        let shape = self.cfg.lambda_shape + (p * (p + 1) / 2) as f64;
        let rate = self.cfg.lambda_rate + prior_norm(omega.values());
        let lambda = gamma_draw(shape, rate, &mut self.rng)?.max(f64::MIN_POSITIVE);
        self.state.latent.lambda = lambda;

        sample_tau(&omega, &mut self.state.latent, &mut self.rng);
        self.state.omega = omega;
        Ok(())
    }
}

fn gram(y: &DataMatrix) -> DMatrix<f64> {
    let mut g = y.values().tr_mul(y.values());
    let p = g.nrows();
    for i in 0..p {
        for j in 0..i {
            g[(j, i)] = g[(i, j)];
        }
    }
    g
}

fn sample_tau<R: Rng + ?Sized>(omega: &PrecisionMatrix, latent: &mut LatentScales, rng: &mut R) {
    let p = omega.dim();
    let lambda = latent.lambda;
    for j in 0..p {
        for i in 0..j {
            let a = omega.get(i, j).abs().max(f64::MIN_POSITIVE);
            let inv = inverse_gaussian(lambda / a, lambda * lambda, rng);
            latent.tau[(i, j)] = 1.0 / inv;
            latent.tau[(j, i)] = 1.0 / inv;
        }
    }
}

/// Draws column `j` of `Ω` from its full conditional, with `s` the (scaled)
/// Gram matrix.
fn update_column<R: Rng + ?Sized>(
    omega: &mut DMatrix<f64>,
    latent: &LatentScales,
    s: &DMatrix<f64>,
    n: usize,
    j: usize,
    rng: &mut R,
) -> Result<()> {
    let p = omega.nrows();
    let lambda = latent.lambda;
    let s22 = s[(j, j)];
    let gam = gamma_draw(0.5 * n as f64 + 1.0, 0.5 * (s22 + lambda), rng)?;
    if p == 1 {
        omega[(0, 0)] = gam;
        return Ok(());
    }
    let idx: Vec<usize> = (0..p).filter(|&k| k != j).collect();
    let o11 = omega.select_rows(&idx).select_columns(&idx);
    let o11_inv = spd_inverse(&o11).map_err(|e| GgmError::Numerical(format!("column {j}: Ω₁₁ inversion failed: {e}")))?;
    let s12 = DVector::from_iterator(p - 1, idx.iter().map(|&k| s[(k, j)]));

    let mut cinv = &o11_inv * (s22 + lambda);
    for (a, &k) in idx.iter().enumerate() {
        cinv[(a, a)] += 1.0 / latent.tau[(k, j)];
    }
    let l = cholesky(&cinv).map_err(|e| GgmError::Numerical(format!("column {j}: conditional precision: {e}")))?;
    let lt = l.transpose();
    // mean = −C s₁₂ with C = (L Lᵀ)⁻¹; noise L⁻ᵀ z has covariance C.
    let half = l
        .solve_lower_triangular(&(-&s12))
        .ok_or_else(|| GgmError::Numerical("triangular solve failed".into()))?;
    let z = DVector::from_fn(p - 1, |_, _| rng.sample::<f64, _>(StandardNormal));
    let beta = lt
        .solve_upper_triangular(&(half + z))
        .ok_or_else(|| GgmError::Numerical("triangular solve failed".into()))?;

    let w22 = gam + (beta.transpose() * &o11_inv * &beta)[(0, 0)];
    for (a, &k) in idx.iter().enumerate() {
        omega[(k, j)] = beta[a];
        omega[(j, k)] = beta[a];
    }
    omega[(j, j)] = w22;
    Ok(())
}

fn run_chain(y: &DataMatrix, cfg: &GibbsConfig, lik: Likelihood, seed: u64) -> Result<PosteriorSample> {
    if y.nrows() < 2 {
        return Err(GgmError::InvalidParameter("Gibbs samplers need n >= 2".into()));
    }
    let mut chain = GibbsChain::new(y, cfg, lik, seed)?;
    for _ in 0..cfg.n_burn {
        chain.sweep()?;
    }
    let mut draws = Vec::with_capacity(cfg.n_keep);
    let mut lambdas = Vec::with_capacity(cfg.n_keep);
    for _ in 0..cfg.n_keep {
        chain.sweep()?;
        draws.push(chain.state.omega.clone());
        lambdas.push(chain.state.latent.lambda);
    }
    let (method, nu) = match lik {
        Likelihood::Gaussian => (Method::Bg, None),
        Likelihood::StudentT => (Method::Bt, Some(cfg.nu)),
    };
    let meta = SampleMeta {
        method,
        gamma: None,
        nu,
        seed,
        lambda: lambdas,
        converged: vec![true; cfg.n_keep],
    };
    PosteriorSample::new(draws, meta)
}

/// Bayesian graphical lasso with Gaussian likelihood.
pub fn bg_gibbs(y: &DataMatrix, cfg: &GibbsConfig, seed: u64) -> Result<PosteriorSample> {
    run_chain(y, cfg, Likelihood::Gaussian, seed)
}

/// Bayesian graphical lasso with the shared-scale multivariate-t likelihood.
pub fn bt_gibbs(y: &DataMatrix, cfg: &GibbsConfig, seed: u64) -> Result<PosteriorSample> {
    run_chain(y, cfg, Likelihood::StudentT, seed)
}

/// Draws `(λ, Ω, τ, u)` from the prior: `λ` from its Gamma prior, `Ω | λ`
/// by rejection from the untruncated product prior, then `τ | Ω, λ` and `u`.
pub fn sample_prior<R: Rng + ?Sized>(p: usize, cfg: &GibbsConfig, lik: Likelihood, rng: &mut R) -> Result<GibbsState> {
    cfg.validate()?;
    let lambda = gamma_draw(cfg.lambda_shape, cfg.lambda_rate, rng)?.max(f64::MIN_POSITIVE);
    let diag = Exp::new(0.5 * lambda).map_err(|e| GgmError::Numerical(e.to_string()))?;
    let off = Exp::new(lambda).map_err(|e| GgmError::Numerical(e.to_string()))?;
    let omega = loop {
        let mut m = DMatrix::<f64>::zeros(p, p);
        for j in 0..p {
            m[(j, j)] = diag.sample(rng);
            for i in 0..j {
                let v = off.sample(rng);
                let v = if rng.random::<bool>() { v } else { -v };
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        if let Ok(o) = PrecisionMatrix::new(m) {
            break o;
        }
    };
    let u = match (lik, cfg.fixed_u) {
        (Likelihood::Gaussian, _) => 1.0,
        (Likelihood::StudentT, Some(u)) => u,
        (Likelihood::StudentT, None) => gamma_draw(0.5 * cfg.nu, 0.5 * cfg.nu, rng)?,
    };
    let mut latent = LatentScales {
        tau: DMatrix::from_element(p, p, 1.0),
        u,
        lambda,
    };
    sample_tau(&omega, &mut latent, rng);
    Ok(GibbsState { omega, latent })
}

/// `n` rows from the sampling model at `state`: `N(0, (cΩ)⁻¹)` with `c = 1`
/// for the Gaussian likelihood and `c = νu/(ν−2)` for the t likelihood.
pub fn sample_data<R: Rng + ?Sized>(
    state: &GibbsState,
    n: usize,
    cfg: &GibbsConfig,
    lik: Likelihood,
    rng: &mut R,
) -> Result<DataMatrix> {
    let c = match lik {
        Likelihood::Gaussian => 1.0,
        Likelihood::StudentT => cfg.scale(state.latent.u),
    };
    let p = state.omega.dim();
    let l = state.omega.cholesky_factor() * c.sqrt();
    let lt = l.transpose();
    let mut values = DMatrix::<f64>::zeros(n, p);
    for i in 0..n {
        let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = lt
            .solve_upper_triangular(&z)
            .ok_or_else(|| GgmError::Numerical("triangular solve failed".into()))?;
        values.set_row(i, &x.transpose());
    }
    DataMatrix::new(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mean_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (v / n).sqrt())
    }

    fn normal_data(n: usize, p: usize, seed: u64) -> DataMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        DataMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn inverse_gaussian_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (mu, shape) in [(1.0, 1.0), (0.2, 3.0), (50.0, 0.5)] {
            let xs: Vec<f64> = (0..200_000).map(|_| inverse_gaussian(mu, shape, &mut rng)).collect();
            let (m, _) = mean_se(&xs);
            let se = (mu * mu * mu / shape / xs.len() as f64).sqrt();
            assert!((m - mu).abs() < 4.0 * se, "mu {mu}: {m}");
            assert!(xs.iter().all(|x| *x > 0.0));
        }
    }

    #[test]
    fn u_conditional_zero_rows() {
        let y = DataMatrix::from_rows(&vec![vec![0.0; 3]; 4]).unwrap();
        let omega = PrecisionMatrix::identity(3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<f64> = (0..100_000).map(|_| sample_u(&y, &omega, 3.0, &mut rng).unwrap()).collect();
        let (m, se) = mean_se(&xs);
        assert!((m - 15.0 / 3.0).abs() < 3.0 * se);
    }

    #[test]
    fn u_conditional_kernel_ratio_is_constant() {
        // Joint kernel in u divided by the Gamma density must not depend on u.
        let y = normal_data(6, 2, 3);
        let omega = PrecisionMatrix::new(DMatrix::from_row_slice(2, 2, &[1.2, 0.3, 0.3, 0.8])).unwrap();
        let cfg = GibbsConfig::default();
        let yty = gram(&y);
        let q = yty.component_mul(omega.values()).sum();
        let shape = 0.5 * (12.0 + cfg.nu);
        let rate = cfg.nu / (2.0 * (cfg.nu - 2.0)) * q + 0.5 * cfg.nu;
        let diffs: Vec<f64> = [0.2, 0.7, 1.0, 2.5, 6.0]
            .iter()
            .map(|&u| {
                log_joint(&omega, 0.4, u, &yty, 6, &cfg, Likelihood::StudentT) - ((shape - 1.0) * f64::ln(u) - rate * u)
            })
            .collect();
        for d in &diffs {
            assert!((d - diffs[0]).abs() < 1e-8);
        }
    }

    #[test]
    fn lambda_conditional_kernel_ratio_is_constant() {
        let y = normal_data(6, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = GibbsConfig::default();
        let st = sample_prior(3, &GibbsConfig { lambda_shape: 10.0, lambda_rate: 10.0, ..cfg }, Likelihood::Gaussian, &mut rng).unwrap();
        let yty = gram(&y);
        let shape = cfg.lambda_shape + 6.0;
        let rate = cfg.lambda_rate + prior_norm(st.omega.values());
        let diffs: Vec<f64> = [0.05, 0.3, 1.0, 4.0]
            .iter()
            .map(|&l| {
                log_joint(&st.omega, l, 1.0, &yty, 6, &cfg, Likelihood::Gaussian) - ((shape - 1.0) * f64::ln(l) - rate * l)
            })
            .collect();
        for d in &diffs {
            assert!((d - diffs[0]).abs() < 1e-8);
        }
    }

    #[test]
    fn tau_conditional_kernel_ratio_is_constant() {
        // 1/τ ~ IG(λ/|ω|, λ²): the density of τ is the IG density of 1/τ times 1/τ².
        let omega = PrecisionMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, -0.3, -0.3, 1.0])).unwrap();
        let lambda: f64 = 0.8;
        let (mu, shape) = (lambda / 0.3, lambda * lambda);
        let ig_log = |x: f64| 0.5 * (shape / (2.0 * PI * x.powi(3))).ln() - shape * (x - mu).powi(2) / (2.0 * mu * mu * x);
        let diffs: Vec<f64> = [0.05, 0.4, 1.0, 3.0]
            .iter()
            .map(|&t| {
                let latent = LatentScales {
                    tau: DMatrix::from_element(2, 2, t),
                    u: 1.0,
                    lambda,
                };
                log_tau_kernel(&omega, &latent) - (ig_log(1.0 / t) - 2.0 * f64::ln(t))
            })
            .collect();
        for d in &diffs {
            assert!((d - diffs[0]).abs() < 1e-8);
        }
    }

    #[test]
    fn column_conditional_kernel_ratio_is_constant() {
        // Along a line in β with γ̃ held fixed, the augmented joint minus the
        // Gaussian log density of β is constant.
        let p = 3;
        let y = normal_data(8, p, 5);
        let s = gram(&y);
        let base = DMatrix::from_row_slice(3, 3, &[1.5, 0.2, -0.1, 0.2, 1.1, 0.3, -0.1, 0.3, 0.9]);
        let latent = LatentScales {
            tau: DMatrix::from_row_slice(3, 3, &[1.0, 0.7, 0.4, 0.7, 1.0, 1.3, 0.4, 1.3, 1.0]),
            u: 1.0,
            lambda: 0.6,
        };
        let j = 2;
        let idx = [0usize, 1];
        let o11 = base.select_rows(&idx).select_columns(&idx);
        let o11_inv = spd_inverse(&o11).unwrap();
        let gam = 0.7;
        let s12 = DVector::from_vec(vec![s[(0, j)], s[(1, j)]]);
        let mut cinv = &o11_inv * (s[(j, j)] + latent.lambda);
        cinv[(0, 0)] += 1.0 / latent.tau[(0, j)];
        cinv[(1, 1)] += 1.0 / latent.tau[(1, j)];
        let c = cinv.clone().try_inverse().unwrap();
        let mean = -(&c * &s12);
        let diffs: Vec<f64> = [-0.6, -0.1, 0.2, 0.5]
            .iter()
            .map(|&t| {
                let beta = DVector::from_vec(vec![t, 0.3 - 0.5 * t]);
                let mut m = base.clone();
                for a in 0..2 {
                    m[(a, j)] = beta[a];
                    m[(j, a)] = beta[a];
                }
                m[(j, j)] = gam + (beta.transpose() * &o11_inv * &beta)[(0, 0)];
                let om = PrecisionMatrix::new(m).unwrap();
                // Augmented joint: likelihood, Gaussian off-diagonal terms, diagonal Exp(λ/2).
                let mut joint = 0.5 * 8.0 * om.log_det() - 0.5 * s.component_mul(om.values()).sum();
                for jj in 0..p {
                    joint -= 0.5 * latent.lambda * om.get(jj, jj);
                    for ii in 0..jj {
                        joint -= 0.5 * om.get(ii, jj).powi(2) / latent.tau[(ii, jj)];
                    }
                }
                let d = &beta - &mean;
                let normal = -0.5 * (d.transpose() * &cinv * &d)[(0, 0)];
                joint - normal
            })
            .collect();
        for d in &diffs {
            assert!((d - diffs[0]).abs() < 1e-8, "{diffs:?}");
        }
    }

    #[test]
    fn draws_are_positive_definite_and_deterministic() {
        let y = normal_data(30, 4, 6);
        let cfg = GibbsConfig {
            n_keep: 200,
            n_burn: 50,
            ..GibbsConfig::default()
        };
        let a = bg_gibbs(&y, &cfg, 1).unwrap();
        let b = bg_gibbs(&y, &cfg, 1).unwrap();
        assert_eq!(a.draws(), b.draws());
        assert!(a.draws().iter().all(|d| cholesky(d.values()).is_ok()));
        let t = bt_gibbs(&y, &cfg, 1).unwrap();
        assert_eq!(t.len(), 200);
        assert_eq!(t.meta().method, Method::Bt);
    }

    #[test]
    fn fixed_u_reduces_t_to_gaussian() {
        let y = normal_data(20, 3, 7);
        let base = GibbsConfig {
            n_keep: 50,
            n_burn: 10,
            ..GibbsConfig::default()
        };
        let fixed = GibbsConfig {
            fixed_u: Some((base.nu - 2.0) / base.nu),
            ..base
        };
        let g = bg_gibbs(&y, &base, 3).unwrap();
        let t = bt_gibbs(&y, &fixed, 3).unwrap();
        for (a, b) in g.draws().iter().zip(t.draws()) {
            assert!(a.max_abs_diff(b) < 1e-12);
        }
    }

    #[test]
    fn single_variable_chain() {
        let y = normal_data(10, 1, 8);
        let cfg = GibbsConfig {
            n_keep: 20,
            n_burn: 5,
            ..GibbsConfig::default()
        };
        let s = bg_gibbs(&y, &cfg, 2).unwrap();
        assert!(s.draws().iter().all(|d| d.get(0, 0) > 0.0));
    }
}
