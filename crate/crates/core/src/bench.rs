//! The estimators compared in the simulation study, and a replicate loop
//! that scores them against a known truth.
//!
//! * `br`: WBB posterior under the γ-likelihood
//! * `br-wbbg`: WBB within Gibbs, λ sampled
//! * `bg` / `bt`: Gaussian and t Bayesian graphical lasso by Gibbs
//! * `fr`: penalized γ-likelihood point estimate (the WBB objective with unit weights)
//! * `fg`: graphical lasso on the sample covariance

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GgmError, Result};
use crate::gamma_mm::{initial_omega, mm_fit, GammaConfig};
use crate::gibbs::{bg_gibbs, bt_gibbs, GibbsConfig};
use crate::glasso::{glasso_solve, GlassoConfig};
use crate::model::{sample_covariance, DataMatrix, PrecisionMatrix};
use crate::rng::sub_seed;
use crate::selection::{compute_metrics, median_probability_select, MetricsReport, DEFAULT_EPS};
use crate::simgen::{generate, ScenarioSpec};
use crate::wbb::{wbb_sample, wbbg_sample, HyperPrior, Method, PosteriorSample, SampleMeta, WeightVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Br,
    BrWbbg,
    Bg,
    Bt,
    Fr,
    Fg,
}

impl Estimator {
    pub const ALL: [Estimator; 6] = [Self::Br, Self::BrWbbg, Self::Bg, Self::Bt, Self::Fr, Self::Fg];

    pub fn name(self) -> &'static str {
        match self {
            Self::Br => "br",
            Self::BrWbbg => "br-wbbg",
            Self::Bg => "bg",
            Self::Bt => "bt",
            Self::Fr => "fr",
            Self::Fg => "fg",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == s)
    }

    /// Step of the λ grid `{λ_min·i : i = 1..5}`.
    pub fn lambda_min(self) -> f64 {
        match self {
            Self::Fg => 0.04,
            _ => 0.02,
        }
    }

    pub fn is_bayesian(self) -> bool {
        !matches!(self, Self::Fr | Self::Fg)
    }
}

/// Grid `{λ_min·i : i = 1..=k}`.
pub fn lambda_grid(est: Estimator, k: usize) -> Vec<f64> {
    (1..=k).map(|i| est.lambda_min() * i as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub estimator: Estimator,
    pub gamma: f64,
    pub lambda: f64,
    /// Selection threshold on `|ω_ij|`.
    pub eps: f64,
    /// MM stopping tolerance.
    pub eps_prime: f64,
    /// Posterior draws kept.
    pub samples: usize,
    /// Discarded leading iterations for the chains (`br-wbbg`, `bg`, `bt`).
    pub burnin: usize,
    pub nu: f64,
    /// Gamma prior on λ for `br-wbbg`.
    pub hyper: HyperPrior,
}

impl EstimatorConfig {
    pub fn new(estimator: Estimator) -> Self {
        Self {
            estimator,
            gamma: 0.1,
            lambda: estimator.lambda_min(),
            eps: DEFAULT_EPS,
            eps_prime: 1e-4,
            samples: 1000,
            burnin: 500,
            nu: 3.0,
            hyper: HyperPrior::default(),
        }
    }

    fn gamma_config(&self) -> GammaConfig {
        GammaConfig {
            eps_prime: self.eps_prime,
            ..GammaConfig::new(self.gamma, self.lambda)
        }
    }

    fn gibbs_config(&self) -> GibbsConfig {
        GibbsConfig {
            nu: self.nu,
            n_keep: self.samples,
            n_burn: self.burnin,
            ..GibbsConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(GgmError::InvalidParameter(format!("eps = {}", self.eps)));
        }
        match self.estimator {
            Estimator::Fg => GlassoConfig::with_rho(self.lambda).validate(),
            Estimator::Bg | Estimator::Bt => self.gibbs_config().validate(),
            Estimator::BrWbbg => {
                self.hyper.validate()?;
                self.gamma_config().validate()
            }
            _ => self.gamma_config().validate(),
        }?;
        if self.estimator.is_bayesian() && self.samples == 0 {
            return Err(GgmError::InvalidParameter("need at least one draw".into()));
        }
        Ok(())
    }
}

/// Point estimate, optional posterior sample, and convergence of one fit.
#[derive(Debug, Clone)]
pub struct Fit {
    pub estimate: PrecisionMatrix,
    pub sample: Option<PosteriorSample>,
    pub objective: Option<f64>,
    pub converged: bool,
}

impl Fit {
    /// Draws for selection; a point estimate acts as a one-draw sample.
    pub fn selection_sample(&self) -> Result<PosteriorSample> {
        match &self.sample {
            Some(s) => Ok(s.clone()),
            None => PosteriorSample::new(
                vec![self.estimate.clone()],
                SampleMeta {
                    method: Method::Wbb,
                    gamma: None,
                    nu: None,
                    seed: 0,
                    lambda: vec![f64::NAN],
                    converged: vec![self.converged],
                },
            ),
        }
    }
}

/// Runs one estimator. Bayesian methods report the posterior mean as their
/// point estimate.
pub fn fit_estimator(y: &DataMatrix, cfg: &EstimatorConfig, seed: u64) -> Result<Fit> {
    cfg.validate()?;
    let from_sample = |s: PosteriorSample| -> Result<Fit> {
        let estimate = PrecisionMatrix::new(s.mean())?;
        let converged = s.converged_fraction() == 1.0;
        Ok(Fit {
            estimate,
            sample: Some(s),
            objective: None,
            converged,
        })
    };
    match cfg.estimator {
        Estimator::Br => from_sample(wbb_sample(y, &cfg.gamma_config(), cfg.samples, seed)?),
        Estimator::BrWbbg => from_sample(wbbg_sample(
            y,
            &cfg.gamma_config(),
            &cfg.hyper,
            cfg.samples,
            cfg.burnin,
            seed,
        )?),
        Estimator::Bg => from_sample(bg_gibbs(y, &cfg.gibbs_config(), seed)?),
        Estimator::Bt => from_sample(bt_gibbs(y, &cfg.gibbs_config(), seed)?),
        Estimator::Fr => {
            let gc = cfg.gamma_config();
            let st = mm_fit(y, &WeightVector::uniform(y.nrows()), &gc, &initial_omega(y, gc.lambda)?)?;
            Ok(Fit {
                estimate: st.omega,
                sample: None,
                objective: Some(st.objective),
                converged: st.converged,
            })
        }
        Estimator::Fg => {
            let sol = glasso_solve(&sample_covariance(y), &GlassoConfig::with_rho(cfg.lambda))?;
            let objective = crate::glasso::glasso_objective(&sample_covariance(y), &sol.omega, cfg.lambda);
            Ok(Fit {
                estimate: sol.omega,
                sample: None,
                objective: Some(objective),
                converged: sol.converged,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Replicate {
    pub rep: usize,
    pub data_seed: u64,
    pub fit_seed: u64,
    pub n_contaminated: usize,
    pub converged: bool,
    pub metrics: MetricsReport,
}

/// Generates `reps` data sets from `spec` and scores `cfg` on each.
/// Replicate `r` takes its data seed from stream `2r` and its sampler seed
/// from stream `2r + 1` of `spec.seed`.
pub fn simulate(spec: &ScenarioSpec, cfg: &EstimatorConfig, reps: usize) -> Result<Vec<Replicate>> {
    cfg.validate()?;
    spec.validate()?;
    // Parallelism lives inside WBB; the Gibbs chains are sequential, so
    // spread their replicates instead.
    let run = |rep: usize| -> Result<Replicate> {
        let data_seed = sub_seed(spec.seed, 2 * rep as u64);
        let fit_seed = sub_seed(spec.seed, 2 * rep as u64 + 1);
        let sc = generate(&ScenarioSpec {
            seed: data_seed,
            ..spec.clone()
        })?;
        let fit = fit_estimator(&sc.data, cfg, fit_seed)?;
        let edges = median_probability_select(&fit.selection_sample()?, cfg.eps)?;
        let metrics = compute_metrics(&spec.omega, &fit.estimate, fit.sample.as_ref(), Some(&edges))?;
        Ok(Replicate {
            rep,
            data_seed,
            fit_seed,
            n_contaminated: sc.contaminated.iter().filter(|&&c| c).count(),
            converged: fit.converged,
            metrics,
        })
    };
    if matches!(cfg.estimator, Estimator::Br) {
        (0..reps).map(run).collect()
    } else {
        (0..reps).into_par_iter().map(run).collect()
    }
}

/// Mean of each metric over replicates; a metric is reported only if every
/// replicate has it.
pub fn aggregate(reps: &[Replicate]) -> MetricsReport {
    let k = reps.len().max(1) as f64;
    let mean = |f: &dyn Fn(&MetricsReport) -> Option<f64>| -> Option<f64> {
        let v: Option<Vec<f64>> = reps.iter().map(|r| f(&r.metrics)).collect();
        v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / k)
    };
    MetricsReport {
        rmse: reps.iter().map(|r| r.metrics.rmse).sum::<f64>() / k,
        al: mean(&|m| m.al),
        cp: mean(&|m| m.cp),
        tpr: mean(&|m| m.tpr),
        fpr: mean(&|m| m.fpr),
        fdr: mean(&|m| m.fdr),
    }
}
