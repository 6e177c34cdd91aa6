//! Penalized negative γ-likelihood and its majorize-minimize solver.
//!
//! The weighted objective is
//!
//! ```text
//! L_w(Ω) = −(1/γ) log{(1/n) Σ wᵢ f(yᵢ|Ω)^γ} + γ/(2(1+γ)) log|Ω| + w₀λ‖Ω‖₁
//! ```
//!
//! Jensen's inequality on the log-sum, with normalized weights
//! `sᵢ* ∝ wᵢ f(yᵢ|Ω⁽ᵗ⁾)^γ`, bounds it above by
//! `(1/(2(1+γ))) [tr(S*Ω) − log|Ω| + ρ‖Ω‖₁] + K` where
//! `S* = (1+γ) Σ sᵢ* yᵢyᵢᵀ` and `ρ = 2(1+γ)λw₀`. Each MM step is therefore
//! one graphical-lasso solve.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{GgmError, Result};
use crate::glasso::{glasso_objective, glasso_solve, GlassoConfig};
use crate::model::{mirror_lower, quad_forms, sample_covariance, DataMatrix, PrecisionMatrix, SampleCov};
use crate::wbb::WeightVector;

/// Normalized weights below this are flushed to zero.
pub const WEIGHT_FLUSH: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaConfig {
    pub gamma: f64,
    pub lambda: f64,
    /// MM stops once `max |Δω_ij| < eps_prime`.
    pub eps_prime: f64,
    pub max_mm: usize,
}

impl Default for GammaConfig {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            lambda: 0.02,
            eps_prime: 1e-4,
            max_mm: 200,
        }
    }
}

impl GammaConfig {
    pub fn new(gamma: f64, lambda: f64) -> Self {
        Self {
            gamma,
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(GgmError::InvalidParameter(format!("{name} = {v}")))
            }
        };
        positive("gamma", self.gamma)?;
        positive("lambda", self.lambda)?;
        positive("eps_prime", self.eps_prime)?;
        if self.max_mm == 0 {
            return Err(GgmError::InvalidParameter("max_mm must be >= 1".into()));
        }
        Ok(())
    }
}

/// Surrogate built at `omega`, plus the bookkeeping of a finished fit.
#[derive(Debug, Clone)]
pub struct MMState {
    pub omega: PrecisionMatrix,
    pub s_star: Vec<f64>,
    pub s_surrogate: SampleCov,
    pub rho: f64,
    /// Weighted objective at `omega`.
    pub objective: f64,
    /// Additive constant making the surrogate touch the objective at `omega`.
    pub surrogate_const: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective at the initial point and after every MM step.
    pub trace: Vec<f64>,
}

impl MMState {
    /// Upper bound on the objective at `other`, tight at `self.omega`.
    pub fn surrogate_value(&self, other: &PrecisionMatrix, gamma: f64) -> f64 {
        glasso_objective(&self.s_surrogate, other, self.rho) / (2.0 * (1.0 + gamma))
            + self.surrogate_const
    }
}

fn check_inputs(y: &DataMatrix, omega: &PrecisionMatrix, w: &WeightVector) -> Result<()> {
    if y.ncols() != omega.dim() {
        return Err(GgmError::Dimension {
            expected: omega.dim(),
            got: y.ncols(),
        });
    }
    if w.n() != y.nrows() {
        return Err(GgmError::Dimension {
            expected: y.nrows() + 1,
            got: w.values().len(),
        });
    }
    if w.data_weights().iter().all(|&x| x == 0.0) {
        return Err(GgmError::ZeroWeights);
    }
    Ok(())
}

/// `γ log f(yᵢ|Ω) + log wᵢ` per row, `None` where `wᵢ = 0`.
fn log_terms(y: &DataMatrix, omega: &PrecisionMatrix, w: &WeightVector, gamma: f64) -> Result<Vec<Option<f64>>> {
    let p = omega.dim() as f64;
    let base = -0.5 * p * (2.0 * PI).ln() + 0.5 * omega.log_det();
    let q = quad_forms(y, omega)?;
    Ok(q.iter()
        .zip(w.data_weights())
        .map(|(&qi, &wi)| (wi > 0.0).then(|| gamma * (base - 0.5 * qi) + wi.ln()))
        .collect())
}

fn log_sum_exp(terms: &[Option<f64>]) -> f64 {
    let max = terms.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().flatten().map(|t| (t - max).exp()).sum();
    max + sum.ln()
}

fn objective_from_lse(lse: f64, n: usize, omega: &PrecisionMatrix, w0: f64, cfg: &GammaConfig) -> f64 {
    let g = cfg.gamma;
    -(lse - (n as f64).ln()) / g
        + g / (2.0 * (1.0 + g)) * omega.log_det()
        + w0 * cfg.lambda * omega.l1_norm()
}

/// Weighted penalized negative γ-likelihood.
pub fn gamma_objective(omega: &PrecisionMatrix, y: &DataMatrix, w: &WeightVector, cfg: &GammaConfig) -> Result<f64> {
    check_inputs(y, omega, w)?;
    let terms = log_terms(y, omega, w, cfg.gamma)?;
    Ok(objective_from_lse(log_sum_exp(&terms), y.nrows(), omega, w.w0(), cfg))
}

/// Builds the Jensen majorizer at `omega`.
pub fn mm_surrogate(y: &DataMatrix, omega: &PrecisionMatrix, w: &WeightVector, cfg: &GammaConfig) -> Result<MMState> {
    cfg.validate()?;
    check_inputs(y, omega, w)?;
    let g = cfg.gamma;
    let terms = log_terms(y, omega, w, g)?;
    let lse = log_sum_exp(&terms);
    if !lse.is_finite() {
        return Err(GgmError::DegenerateWeights);
    }

    let mut s_star: Vec<f64> = terms
        .iter()
        .map(|t| match t {
            Some(t) => {
                let s = (t - lse).exp();
                if s < WEIGHT_FLUSH {
                    0.0
                } else {
                    s
                }
            }
            None => 0.0,
        })
        .collect();
    let total: f64 = s_star.iter().sum();
    if !(total > 0.0) {
        return Err(GgmError::DegenerateWeights);
    }
    s_star.iter_mut().for_each(|s| *s /= total);

    let p = omega.dim();
    let yv = y.values();
    let mut s_mat = DMatrix::<f64>::zeros(p, p);
    for (i, &si) in s_star.iter().enumerate() {
        if si == 0.0 {
            continue;
        }
        let c = (1.0 + g) * si;
        for b in 0..p {
            let yb = c * yv[(i, b)];
            for a in b..p {
                s_mat[(a, b)] += yb * yv[(i, a)];
            }
        }
    }
    mirror_lower(&mut s_mat);
    let s_surrogate = SampleCov::from_psd_unchecked(s_mat);
    let rho = 2.0 * (1.0 + g) * cfg.lambda * w.w0();

    let objective = objective_from_lse(lse, y.nrows(), omega, w.w0(), cfg);
    let surrogate_const = objective - glasso_objective(&s_surrogate, omega, rho) / (2.0 * (1.0 + g));
    Ok(MMState {
        omega: omega.clone(),
        s_star,
        s_surrogate,
        rho,
        objective,
        surrogate_const,
        iterations: 0,
        converged: false,
        trace: vec![objective],
    })
}

/// `diag(1/(S_ii + λ))` from the unweighted sample covariance.
pub fn initial_omega(y: &DataMatrix, lambda: f64) -> Result<PrecisionMatrix> {
    let s = sample_covariance(y);
    let diag: Vec<f64> = (0..s.dim()).map(|i| 1.0 / (s.values()[(i, i)] + lambda)).collect();
    PrecisionMatrix::from_diagonal(&diag)
}

/// Minimizes the weighted objective by repeated majorization from `omega0`.
pub fn mm_fit(y: &DataMatrix, w: &WeightVector, cfg: &GammaConfig, omega0: &PrecisionMatrix) -> Result<MMState> {
    let mut state = mm_surrogate(y, omega0, w, cfg)?;
    let mut trace = vec![state.objective];
    let mut delta = 1.0_f64;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_mm {
        iterations += 1;
        let inner_tol = (0.01 * delta).max(1e-7);
        let mut next = step(y, w, cfg, &state, inner_tol)?;
        if next.objective > state.objective && inner_tol > 1e-10 {
            // Inexact inner solve overshot; redo it tightly before giving up.
            next = step(y, w, cfg, &state, 1e-10)?;
        }
        if next.objective > state.objective {
            converged = delta < cfg.eps_prime;
            break;
        }
        delta = next.omega.max_abs_diff(&state.omega);
        trace.push(next.objective);
        state = next;
        if delta < cfg.eps_prime {
            converged = true;
            break;
        }
    }

    state.iterations = iterations;
    state.converged = converged;
    state.trace = trace;
    Ok(state)
}

fn step(y: &DataMatrix, w: &WeightVector, cfg: &GammaConfig, state: &MMState, tol: f64) -> Result<MMState> {
    let gcfg = GlassoConfig {
        rho: state.rho,
        tol,
        ..GlassoConfig::default()
    };
    let sol = glasso_solve(&state.s_surrogate, &gcfg)?;
    mm_surrogate(y, &sol.omega, w, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glasso::kkt_residual;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normal_rows(n: usize, p: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect()
    }

    fn random_pd(p: usize, rng: &mut ChaCha8Rng) -> PrecisionMatrix {
        let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-0.5..0.5));
        PrecisionMatrix::new(a.tr_mul(&a) + DMatrix::identity(p, p) * 0.5).unwrap()
    }

    fn random_weights(n: usize, rng: &mut ChaCha8Rng) -> WeightVector {
        crate::wbb::dirichlet_weights(n, rng).unwrap()
    }

    #[test]
    fn objective_at_identity_single_zero_row() {
        let p = 3;
        let y = DataMatrix::from_rows(&[vec![0.0; p]]).unwrap();
        let cfg = GammaConfig::new(0.1, 0.3);
        let v = gamma_objective(&PrecisionMatrix::identity(p), &y, &WeightVector::uniform(1), &cfg).unwrap();
        let expected = 0.5 * p as f64 * (2.0 * PI).ln() + 0.3 * p as f64;
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn duplicate_rows_match_single_row() {
        let row = vec![0.3, -1.2, 0.7];
        let cfg = GammaConfig::new(0.2, 0.1);
        let omega = random_pd(3, &mut ChaCha8Rng::seed_from_u64(1));
        let one = DataMatrix::from_rows(&[row.clone()]).unwrap();
        let many = DataMatrix::from_rows(&vec![row; 5]).unwrap();
        let a = gamma_objective(&omega, &one, &WeightVector::uniform(1), &cfg).unwrap();
        let b = gamma_objective(&omega, &many, &WeightVector::uniform(5), &cfg).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let (n, p) = (15, 4);
            let y = DataMatrix::from_rows(&normal_rows(n, p, &mut rng)).unwrap();
            let omega = random_pd(p, &mut rng);
            let w = random_weights(n, &mut rng);
            let cfg = GammaConfig::new(0.3, 0.05);
            // Plain densities, no log-domain tricks.
            let inv = omega.inverse();
            let det = inv.determinant().recip();
            let mut acc = 0.0;
            for i in 0..n {
                let yi = y.row(i);
                let q = (yi.transpose() * omega.values() * &yi)[(0, 0)];
                let f = (2.0 * PI).powf(-(p as f64) / 2.0) * det.sqrt() * (-0.5 * q).exp();
                acc += w.data_weights()[i] * f.powf(cfg.gamma);
            }
            let l1: f64 = omega.values().iter().map(|v| v.abs()).sum();
            let direct = -(acc / n as f64).ln() / cfg.gamma
                + cfg.gamma / (2.0 * (1.0 + cfg.gamma)) * det.ln()
                + w.w0() * cfg.lambda * l1;
            let v = gamma_objective(&omega, &y, &w, &cfg).unwrap();
            assert!((v - direct).abs() < 1e-10, "{v} vs {direct}");
        }
    }

    #[test]
    fn zero_data_weights_rejected() {
        let y = DataMatrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let w = WeightVector::new(vec![3.0, 0.0, 0.0]).unwrap();
        let err = gamma_objective(&PrecisionMatrix::identity(1), &y, &w, &GammaConfig::default());
        assert!(matches!(err, Err(GgmError::ZeroWeights)));
    }

    #[test]
    fn surrogate_symmetric_and_single_point_cases() {
        let cfg = GammaConfig::new(0.1, 0.2);
        let omega = PrecisionMatrix::identity(2);
        let y = DataMatrix::from_rows(&vec![vec![0.5, -1.0]; 4]).unwrap();
        let st = mm_surrogate(&y, &omega, &WeightVector::uniform(4), &cfg).unwrap();
        for s in &st.s_star {
            assert!((s - 0.25).abs() < 1e-15);
        }
        assert!((st.rho - 2.0 * 1.1 * 0.2).abs() < 1e-15);

        let y1 = DataMatrix::from_rows(&[vec![0.5, -1.0]]).unwrap();
        let st = mm_surrogate(&y1, &omega, &WeightVector::uniform(1), &cfg).unwrap();
        assert_eq!(st.s_star, vec![1.0]);
        let expect = [[0.25, -0.5], [-0.5, 1.0]];
        for a in 0..2 {
            for b in 0..2 {
                assert!((st.s_surrogate.values()[(a, b)] - 1.1 * expect[a][b]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn extreme_outlier_is_flushed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let clean_rows = normal_rows(10, 3, &mut rng);
        let mut rows = clean_rows.clone();
        rows.push(vec![1e3 / 3f64.sqrt(); 3]);
        let cfg = GammaConfig::new(0.1, 0.1);
        let omega = PrecisionMatrix::identity(3);
        let clean = mm_surrogate(&DataMatrix::from_rows(&clean_rows).unwrap(), &omega, &WeightVector::uniform(10), &cfg).unwrap();
        let dirty = mm_surrogate(&DataMatrix::from_rows(&rows).unwrap(), &omega, &WeightVector::uniform(11), &cfg).unwrap();
        assert_eq!(dirty.s_star[10], 0.0);
        let diff = (clean.s_surrogate.values() - dirty.s_surrogate.values()).amax();
        assert!(diff < 1e-12);
    }

    #[test]
    fn weights_redescend_along_a_ray() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut rows = normal_rows(8, 3, &mut rng);
        let dir = [0.6, -0.3, 0.9];
        let omega = random_pd(3, &mut rng);
        let cfg = GammaConfig::new(0.1, 0.1);
        let mut last = f64::INFINITY;
        for k in 1..=30 {
            let t = 0.5 * k as f64;
            rows[0] = dir.iter().map(|d| d * t).collect();
            let st = mm_surrogate(&DataMatrix::from_rows(&rows).unwrap(), &omega, &WeightVector::uniform(8), &cfg).unwrap();
            assert!(st.s_star[0] < last);
            last = st.s_star[0];
        }
    }

    #[test]
    fn surrogate_majorizes_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let (n, p) = (rng.random_range(3..30), rng.random_range(1..6));
            let y = DataMatrix::from_rows(&normal_rows(n, p, &mut rng)).unwrap();
            let w = random_weights(n, &mut rng);
            let cfg = GammaConfig::new(rng.random_range(0.05..0.5), 0.1);
            let a = random_pd(p, &mut rng);
            let b = random_pd(p, &mut rng);
            let st = mm_surrogate(&y, &a, &w, &cfg).unwrap();
            let gap_b = st.surrogate_value(&b, cfg.gamma) - gamma_objective(&b, &y, &w, &cfg).unwrap();
            let gap_a = st.surrogate_value(&a, cfg.gamma) - st.objective;
            assert!(gap_b >= -1e-10);
            assert!(gap_a.abs() < 1e-10);
        }
    }

    #[test]
    fn mm_descends_and_reaches_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let (n, p) = (40, 5);
            let y = DataMatrix::from_rows(&normal_rows(n, p, &mut rng)).unwrap();
            let w = random_weights(n, &mut rng);
            let cfg = GammaConfig::new(0.1, 0.05);
            let st = mm_fit(&y, &w, &cfg, &initial_omega(&y, cfg.lambda).unwrap()).unwrap();
            assert!(st.converged);
            for pair in st.trace.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-10);
            }
            assert!(kkt_residual(&st.s_surrogate, &st.omega, st.rho) < 1e-4);
        }
    }

    #[test]
    fn huge_outlier_leaves_estimate_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rows = normal_rows(50, 4, &mut rng);
        let clean = DataMatrix::from_rows(&rows).unwrap();
        let mut dirty_rows = rows.clone();
        dirty_rows.push(vec![5e5, -5e5, 5e5, 5e5]);
        let dirty = DataMatrix::from_rows(&dirty_rows).unwrap();
        let cfg = GammaConfig::new(0.1, 0.05);
        let omega0 = initial_omega(&clean, cfg.lambda).unwrap();
        let a = mm_fit(&clean, &WeightVector::uniform(50), &cfg, &omega0).unwrap();
        let b = mm_fit(&dirty, &WeightVector::uniform(51), &cfg, &omega0).unwrap();
        assert!(a.omega.max_abs_diff(&b.omega) < 1e-6);
    }

    #[test]
    fn scalar_fit_matches_grid_minimum() {
        let y = DataMatrix::from_rows(&[vec![0.4], vec![-1.3], vec![2.1]]).unwrap();
        let w = WeightVector::uniform(3);
        let cfg = GammaConfig {
            eps_prime: 1e-9,
            max_mm: 10_000,
            ..GammaConfig::new(0.1, 0.2)
        };
        let obj = |om: f64| {
            let acc: f64 = [0.4f64, -1.3, 2.1]
                .iter()
                .map(|x| ((2.0 * PI).powf(-0.5) * om.sqrt() * (-0.5 * om * x * x).exp()).powf(cfg.gamma))
                .sum();
            -(acc / 3.0).ln() / cfg.gamma + cfg.gamma / (2.0 * (1.0 + cfg.gamma)) * om.ln() + cfg.lambda * om
        };
        let (mut lo, mut hi) = (1e-3, 10.0);
        for _ in 0..6 {
            let step = (hi - lo) / 1000.0;
            let best = (0..=1000)
                .map(|k| lo + k as f64 * step)
                .min_by(|a, b| obj(*a).total_cmp(&obj(*b)))
                .unwrap();
            lo = (best - step).max(1e-6);
            hi = best + step;
        }
        let grid = 0.5 * (lo + hi);
        let st = mm_fit(&y, &w, &cfg, &initial_omega(&y, cfg.lambda).unwrap()).unwrap();
        assert!((st.omega.get(0, 0) - grid).abs() < 1e-4, "{} vs {grid}", st.omega.get(0, 0));
    }
}
