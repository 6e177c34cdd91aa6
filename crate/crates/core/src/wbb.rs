//! Weighted Bayesian bootstrap.
//!
//! Each replicate draws `w ~ (n+1)·Dirichlet(1, …, 1)` and minimizes the
//! reweighted γ-objective; `w₀` scales the penalty and `w₁…wₙ` the data.
//! The WBB-within-Gibbs variant alternates one such fit with a Gamma draw of
//! the penalty level.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GgmError, Result};
use crate::gamma_mm::{initial_omega, mm_fit, GammaConfig};
use crate::model::{DataMatrix, PrecisionMatrix};
use crate::rng::stream_rng;

/// Bootstrap weights `(w₀, w₁, …, wₙ)` summing to `n + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    values: Vec<f64>,
}

impl WeightVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(GgmError::InvalidParameter(
                "weight vector needs w0 and at least one data weight".into(),
            ));
        }
        if values.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(GgmError::InvalidParameter(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let target = values.len() as f64;
        let sum: f64 = values.iter().sum();
        if (sum - target).abs() > 1e-9 * target {
            return Err(GgmError::InvalidParameter(format!(
                "weights sum to {sum}, expected {target}"
            )));
        }
        Ok(Self { values })
    }

    /// All weights equal to one: the unweighted MAP problem.
    pub fn uniform(n: usize) -> Self {
        Self {
            values: vec![1.0; n + 1],
        }
    }

    /// Number of observations `n` (the vector has `n + 1` entries).
    pub fn n(&self) -> usize {
        self.values.len() - 1
    }

    pub fn w0(&self) -> f64 {
        self.values[0]
    }

    pub fn data_weights(&self) -> &[f64] {
        &self.values[1..]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// `(n+1)·e / Σe` with `e` a vector of `n + 1` standard exponentials.
pub fn dirichlet_weights<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<WeightVector> {
    if n == 0 {
        return Err(GgmError::InvalidParameter("n must be >= 1".into()));
    }
    let e: Vec<f64> = (0..=n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = e.iter().sum();
    let scale = (n + 1) as f64 / total;
    Ok(WeightVector {
        values: e.into_iter().map(|x| x * scale).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Wbb,
    Wbbg,
    Bg,
    Bt,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleMeta {
    pub method: Method,
    pub gamma: Option<f64>,
    pub nu: Option<f64>,
    pub seed: u64,
    /// Penalty level of each draw; constant unless λ is sampled.
    pub lambda: Vec<f64>,
    pub converged: Vec<bool>,
}

/// A set of posterior draws of the precision matrix.
#[derive(Debug, Clone)]
pub struct PosteriorSample {
    draws: Vec<PrecisionMatrix>,
    meta: SampleMeta,
}

impl PosteriorSample {
    pub fn new(draws: Vec<PrecisionMatrix>, meta: SampleMeta) -> Result<Self> {
        let Some(first) = draws.first() else {
            return Err(GgmError::InvalidParameter("posterior sample needs at least one draw".into()));
        };
        let p = first.dim();
        if let Some(bad) = draws.iter().find(|d| d.dim() != p) {
            return Err(GgmError::Dimension {
                expected: p,
                got: bad.dim(),
            });
        }
        if meta.lambda.len() != draws.len() || meta.converged.len() != draws.len() {
            return Err(GgmError::Dimension {
                expected: draws.len(),
                got: meta.lambda.len().min(meta.converged.len()),
            });
        }
        Ok(Self { draws, meta })
    }

    pub fn draws(&self) -> &[PrecisionMatrix] {
        &self.draws
    }

    pub fn meta(&self) -> &SampleMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.draws[0].dim()
    }

    /// Values of entry `(i, j)` across draws.
    pub fn entry(&self, i: usize, j: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d.get(i, j)).collect()
    }

    /// Entrywise posterior mean (not necessarily sparse).
    pub fn mean(&self) -> nalgebra::DMatrix<f64> {
        let mut acc = nalgebra::DMatrix::zeros(self.dim(), self.dim());
        for d in &self.draws {
            acc += d.values();
        }
        acc / self.draws.len() as f64
    }

    pub fn converged_fraction(&self) -> f64 {
        let ok = self.meta.converged.iter().filter(|c| **c).count();
        ok as f64 / self.len() as f64
    }
}

/// Gamma prior `Ga(a, b)` (shape, rate) on the penalty level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperPrior {
    pub a: f64,
    pub b: f64,
}

impl Default for HyperPrior {
    fn default() -> Self {
        Self { a: 0.1, b: 0.1 }
    }
}

impl HyperPrior {
    pub fn validate(&self) -> Result<()> {
        if self.a > 0.0 && self.b > 0.0 && self.a.is_finite() && self.b.is_finite() {
            Ok(())
        } else {
            Err(GgmError::InvalidParameter(format!("hyper-prior a = {}, b = {}", self.a, self.b)))
        }
    }
}

/// How replicate weights are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightScheme {
    #[default]
    Dirichlet,
    /// Every weight fixed at 1; each replicate reproduces the MAP estimate.
    Unit,
}

/// Weighted Bayesian bootstrap with Dirichlet weights.
pub fn wbb_sample(y: &DataMatrix, cfg: &GammaConfig, m: usize, seed: u64) -> Result<PosteriorSample> {
    wbb_sample_with(y, cfg, m, seed, WeightScheme::Dirichlet)
}

/// Replicate `r` uses stream `r` of `seed`, so the output does not depend
/// on the rayon pool it runs in.
pub fn wbb_sample_with(
    y: &DataMatrix,
    cfg: &GammaConfig,
    m: usize,
    seed: u64,
    scheme: WeightScheme,
) -> Result<PosteriorSample> {
    cfg.validate()?;
    if m == 0 {
        return Err(GgmError::InvalidParameter("M must be >= 1".into()));
    }
    let n = y.nrows();
    let omega0 = initial_omega(y, cfg.lambda)?;
    let fits: Vec<(PrecisionMatrix, bool)> = (0..m as u64)
        .into_par_iter()
        .map(|r| {
            let w = match scheme {
                WeightScheme::Dirichlet => dirichlet_weights(n, &mut stream_rng(seed, r))?,
                WeightScheme::Unit => WeightVector::uniform(n),
            };
            let st = mm_fit(y, &w, cfg, &omega0)?;
            Ok((st.omega, st.converged))
        })
        .collect::<Result<_>>()?;
    let (draws, converged): (Vec<_>, Vec<_>) = fits.into_iter().unzip();
    let meta = SampleMeta {
        method: Method::Wbb,
        gamma: Some(cfg.gamma),
        nu: None,
        seed,
        lambda: vec![cfg.lambda; m],
        converged,
    };
    PosteriorSample::new(draws, meta)
}

/// `λ | Ω ~ Ga(a, b + ‖Ω‖₁)`, floored away from zero.
pub fn sample_lambda<R: Rng + ?Sized>(omega: &PrecisionMatrix, hp: &HyperPrior, rng: &mut R) -> Result<f64> {
    let rate = hp.b + omega.l1_norm();
    let dist = Gamma::new(hp.a, 1.0 / rate).map_err(|e| GgmError::Numerical(e.to_string()))?;
    let lambda = dist.sample(rng);
    if !lambda.is_finite() {
        return Err(GgmError::Numerical(format!("lambda draw {lambda}")));
    }
    Ok(lambda.max(f64::MIN_POSITIVE))
}

/// WBB within Gibbs: alternate a weighted fit at the current λ with a draw
/// of λ given the fit. `cfg.lambda` is the starting value. The chain is
/// sequential; the first `burnin` iterations are discarded.
pub fn wbbg_sample(
    y: &DataMatrix,
    cfg: &GammaConfig,
    hp: &HyperPrior,
    m: usize,
    burnin: usize,
    seed: u64,
) -> Result<PosteriorSample> {
    cfg.validate()?;
    hp.validate()?;
    if m == 0 {
        return Err(GgmError::InvalidParameter("M must be >= 1".into()));
    }
    let n = y.nrows();
    let mut rng = stream_rng(seed, 0);
    let mut lambda = cfg.lambda;
    let mut omega = initial_omega(y, lambda)?;
    let mut draws = Vec::with_capacity(m);
    let mut lambdas = Vec::with_capacity(m);
    let mut converged = Vec::with_capacity(m);
    for t in 0..burnin + m {
        let w = dirichlet_weights(n, &mut rng)?;
        let step_cfg = GammaConfig { lambda, ..*cfg };
        let st = mm_fit(y, &w, &step_cfg, &omega)?;
        omega = st.omega;
        if t >= burnin {
            draws.push(omega.clone());
            lambdas.push(lambda);
            converged.push(st.converged);
        }
        lambda = sample_lambda(&omega, hp, &mut rng)?;
    }
    let meta = SampleMeta {
        method: Method::Wbbg,
        gamma: Some(cfg.gamma),
        nu: None,
        seed,
        lambda: lambdas,
        converged,
    };
    PosteriorSample::new(draws, meta)
}
