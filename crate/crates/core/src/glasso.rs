//! Graphical lasso: `min_{Ω ≻ 0} tr(SΩ) − log|Ω| + ρ‖Ω‖₁`, with the
//! penalty applied to every entry including the diagonal.
//!
//! The solver is blockwise coordinate descent on the covariance estimate
//! `W = Ω⁻¹`: each column is updated by solving a lasso regression with
//! cyclic coordinate descent, and `Ω` is recovered from `W` and the
//! regression coefficients once the sweeps have settled. With the diagonal
//! penalized, `W_ii = S_ii + ρ` throughout.

use nalgebra::DMatrix;

use crate::error::{GgmError, Result};
use crate::model::{cholesky, chol_inverse, PrecisionMatrix, SampleCov};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlassoConfig {
    pub rho: f64,
    /// Stop when the mean absolute change of the off-diagonal of `W` falls
    /// below `tol` times the mean absolute off-diagonal of `S`.
    pub tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
}

impl Default for GlassoConfig {
    fn default() -> Self {
        Self {
            rho: 0.0,
            tol: 1e-6,
            max_outer: 500,
            max_inner: 1000,
        }
    }
}

impl GlassoConfig {
    pub fn with_rho(rho: f64) -> Self {
        Self {
            rho,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 0.0) || !self.rho.is_finite() {
            return Err(GgmError::InvalidParameter(format!("rho = {}", self.rho)));
        }
        if !(self.tol > 0.0) {
            return Err(GgmError::InvalidParameter(format!("tol = {}", self.tol)));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(GgmError::InvalidParameter("iteration caps must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GlassoSolution {
    pub omega: PrecisionMatrix,
    pub w_cov: SampleCov,
    pub iterations: usize,
    pub converged: bool,
    /// `−log|W|` after each sweep; nonincreasing since every column update
    /// maximizes `log|W|` over its box constraint.
    pub dual_trace: Vec<f64>,
}

/// `tr(SΩ) − log|Ω| + ρ‖Ω‖₁`.
pub fn glasso_objective(s: &SampleCov, omega: &PrecisionMatrix, rho: f64) -> f64 {
    let trace = s.values().component_mul(omega.values()).sum();
    trace - omega.log_det() + rho * omega.l1_norm()
}

#[inline]
fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

pub fn glasso_solve(s: &SampleCov, cfg: &GlassoConfig) -> Result<GlassoSolution> {
    cfg.validate()?;
    let p = s.dim();
    let sv = s.values();
    let rho = cfg.rho;

    if rho == 0.0 {
        let chol = cholesky(sv)
            .map_err(|_| GgmError::Singular("rho = 0 requires a positive-definite S".into()))?;
        let omega = PrecisionMatrix::new(chol_inverse(&chol))?;
        return Ok(GlassoSolution {
            omega,
            w_cov: s.clone(),
            iterations: 0,
            converged: true,
            dual_trace: Vec::new(),
        });
    }

    let mut w = sv.clone();
    for i in 0..p {
        w[(i, i)] += rho;
    }
    if p == 1 {
        let omega = PrecisionMatrix::new(DMatrix::from_element(1, 1, 1.0 / w[(0, 0)]))?;
        return Ok(GlassoSolution {
            omega,
            w_cov: SampleCov::from_psd_unchecked(w),
            iterations: 0,
            converged: true,
            dual_trace: Vec::new(),
        });
    }

    let mut off_abs = 0.0;
    for i in 0..p {
        for j in 0..p {
            if i != j {
                off_abs += sv[(i, j)].abs();
            }
        }
    }
    let n_off = (p * (p - 1)) as f64;
    let threshold = cfg.tol * (off_abs / n_off + 1e-12);
    let inner_threshold = (cfg.tol * 1e-4).min(1e-10);

    // Column j keeps its coefficients in beta[j], indexed by the other
    // variables in increasing order.
    let mut beta = vec![vec![0.0; p - 1]; p];
    let mut w11 = DMatrix::<f64>::zeros(p - 1, p - 1);
    let mut s12 = vec![0.0; p - 1];
    let mut w12 = vec![0.0; p - 1];
    let mut dual_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_outer {
        iterations += 1;
        let mut change = 0.0;
        for j in 0..p {
            let others = |k: usize| if k < j { k } else { k + 1 };
            for a in 0..p - 1 {
                s12[a] = sv[(others(a), j)];
                for b in 0..p - 1 {
                    w11[(a, b)] = w[(others(a), others(b))];
                }
            }
            let b = &mut beta[j];
            // Residual r_k = s12_k − Σ_l W11_kl β_l is updated incrementally.
            let mut grad: Vec<f64> = (0..p - 1)
                .map(|a| (0..p - 1).map(|c| w11[(a, c)] * b[c]).sum())
                .collect();
            for _ in 0..cfg.max_inner {
                let mut max_delta: f64 = 0.0;
                for k in 0..p - 1 {
                    let diag = w11[(k, k)];
                    let partial = s12[k] - (grad[k] - diag * b[k]);
                    let new = soft_threshold(partial, rho) / diag;
                    let delta = new - b[k];
                    if delta != 0.0 {
                        for a in 0..p - 1 {
                            grad[a] += w11[(a, k)] * delta;
                        }
                        b[k] = new;
                        max_delta = max_delta.max(delta.abs());
                    }
                }
                if max_delta < inner_threshold {
                    break;
                }
            }
            for a in 0..p - 1 {
                w12[a] = (0..p - 1).map(|c| w11[(a, c)] * b[c]).sum();
            }
            for a in 0..p - 1 {
                let k = others(a);
                change += (w[(k, j)] - w12[a]).abs() * 2.0;
                w[(k, j)] = w12[a];
                w[(j, k)] = w12[a];
            }
        }
        if let Ok(l) = cholesky(&w) {
            let log_det_w = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
            dual_trace.push(-log_det_w);
        }
        if change / n_off < threshold {
            converged = true;
            break;
        }
    }

    let omega = recover_precision(&w, &beta)?;
    Ok(GlassoSolution {
        omega,
        w_cov: SampleCov::from_psd_unchecked(w),
        iterations,
        converged,
        dual_trace,
    })
}

/// Largest violation of the subgradient optimality conditions at `omega`.
pub fn kkt_residual(s: &SampleCov, omega: &PrecisionMatrix, rho: f64) -> f64 {
    let w = omega.inverse();
    let p = s.dim();
    let mut worst: f64 = 0.0;
    for i in 0..p {
        for j in 0..p {
            let g = s.values()[(i, j)] - w[(i, j)];
            let o = omega.get(i, j);
            let v = if o > 0.0 {
                (g + rho).abs()
            } else if o < 0.0 {
                (g - rho).abs()
            } else {
                (g.abs() - rho).max(0.0)
            };
            worst = worst.max(v);
        }
    }
    worst
}

fn recover_precision(w: &DMatrix<f64>, beta: &[Vec<f64>]) -> Result<PrecisionMatrix> {
    let p = w.nrows();
    let mut omega = DMatrix::<f64>::zeros(p, p);
    for j in 0..p {
        let others = |k: usize| if k < j { k } else { k + 1 };
        let b = &beta[j];
        let dot: f64 = (0..p - 1).map(|a| w[(others(a), j)] * b[a]).sum();
        let denom = w[(j, j)] - dot;
        if !(denom > 0.0) {
            return Err(GgmError::Numerical(format!(
                "nonpositive Schur complement {denom:e} in column {j}"
            )));
        }
        let omega_jj = 1.0 / denom;
        omega[(j, j)] = omega_jj;
        for a in 0..p - 1 {
            omega[(others(a), j)] = -b[a] * omega_jj;
        }
    }
    match PrecisionMatrix::new(omega) {
        Ok(o) => Ok(o),
        // Column recoveries can disagree slightly before full convergence;
        // fall back to the exact inverse of W.
        Err(_) => PrecisionMatrix::new(chol_inverse(&cholesky(w)?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample_covariance, spd_inverse, DataMatrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cov(p: usize, n: usize, seed: u64) -> SampleCov {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mix = DMatrix::from_fn(p, p, |i, j| {
            if i == j {
                1.0
            } else {
                rng.random_range(-0.4..0.4)
            }
        });
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let z: Vec<f64> = (0..p)
                    .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                    .collect();
                (0..p).map(|i| (0..p).map(|k| mix[(i, k)] * z[k]).sum()).collect()
            })
            .collect();
        sample_covariance(&DataMatrix::from_rows(&rows).unwrap())
    }

    #[test]
    fn diagonal_closed_form() {
        let s = SampleCov::new(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            1.0, 2.5, 0.3,
        ])))
        .unwrap();
        let sol = glasso_solve(&s, &GlassoConfig::with_rho(0.2)).unwrap();
        for (i, sii) in [1.0, 2.5, 0.3].iter().enumerate() {
            assert!((sol.omega.get(i, i) - 1.0 / (sii + 0.2)).abs() < 1e-12);
        }
        assert_eq!(sol.omega.get(0, 1), 0.0);
        assert!(sol.converged);
    }

    #[test]
    fn unpenalized_recovers_inverse() {
        let s = random_cov(5, 40, 2);
        let sol = glasso_solve(&s, &GlassoConfig::with_rho(0.0)).unwrap();
        let inv = spd_inverse(s.values()).unwrap();
        assert!((sol.omega.values() - inv).amax() < 1e-8);
    }

    #[test]
    fn singular_input_without_penalty() {
        let y = DataMatrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let s = sample_covariance(&y);
        assert!(matches!(
            glasso_solve(&s, &GlassoConfig::with_rho(0.0)),
            Err(GgmError::Singular(_))
        ));
        // Any positive penalty makes the same problem well posed.
        assert!(glasso_solve(&s, &GlassoConfig::with_rho(0.1)).is_ok());
    }

    #[test]
    fn kkt_and_inverse_relation_on_random_instances() {
        for seed in 0..20 {
            let s = random_cov(6, 30, seed);
            let rho = 0.05 + 0.02 * seed as f64;
            let sol = glasso_solve(&s, &GlassoConfig::with_rho(rho)).unwrap();
            assert!(sol.converged);
            assert!(kkt_residual(&s, &sol.omega, rho) < 1e-4, "seed {seed}");
            let id = sol.omega.values() * sol.w_cov.values();
            assert!((id - DMatrix::identity(6, 6)).amax() < 1e-3);
        }
    }

    #[test]
    fn dual_objective_is_monotone_and_gap_closes() {
        for seed in 0..20 {
            let s = random_cov(8, 25, 100 + seed);
            let rho = 0.1;
            let sol = glasso_solve(&s, &GlassoConfig::with_rho(rho)).unwrap();
            for pair in sol.dual_trace.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-10, "seed {seed}: {pair:?}");
            }
            // primal optimum equals p + log|W*|
            let primal = glasso_objective(&s, &sol.omega, rho);
            let dual = 8.0 - sol.dual_trace.last().unwrap();
            assert!((primal - dual).abs() < 1e-5, "seed {seed}: gap {}", primal - dual);
        }
    }

    #[test]
    fn permutation_invariance() {
        let s = random_cov(5, 30, 77);
        let perm = [3, 0, 4, 1, 2];
        let sp = DMatrix::from_fn(5, 5, |i, j| s.values()[(perm[i], perm[j])]);
        let a = glasso_solve(&s, &GlassoConfig::with_rho(0.08)).unwrap();
        let b = glasso_solve(&SampleCov::new(sp).unwrap(), &GlassoConfig::with_rho(0.08)).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert!((a.omega.get(perm[i], perm[j]) - b.omega.get(i, j)).abs() < 1e-6);
            }
        }
    }

    fn off_diagonal_nnz(omega: &PrecisionMatrix) -> usize {
        let p = omega.dim();
        (0..p)
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .filter(|&(i, j)| omega.get(i, j).abs() > 1e-8)
            .count()
    }

    // The support is not nested along the path in general, so individual
    // instances may gain an edge; the total over instances must not grow
    // and every solution on the grid must be optimal.
    #[test]
    fn sparsity_decreases_along_rho_grid() {
        let grid = [0.02, 0.05, 0.1, 0.2, 0.4];
        let mut totals = [0usize; 5];
        for seed in 0..20 {
            let s = random_cov(6, 20, 500 + seed);
            for (g, &rho) in grid.iter().enumerate() {
                let sol = glasso_solve(&s, &GlassoConfig::with_rho(rho)).unwrap();
                assert!(kkt_residual(&s, &sol.omega, rho) < 1e-6);
                totals[g] += off_diagonal_nnz(&sol.omega);
            }
        }
        for pair in totals.windows(2) {
            assert!(pair[1] <= pair[0], "{totals:?}");
        }
        assert_eq!(totals[4] < totals[0], true);
    }

    #[test]
    fn support_can_grow_with_rho() {
        // Entry (0, 1) is zero at rho = 0.02 and nonzero at rho = 0.05; both
        // solutions satisfy the optimality conditions.
        let s = random_cov(6, 20, 506);
        let a = glasso_solve(&s, &GlassoConfig::with_rho(0.02)).unwrap();
        let b = glasso_solve(&s, &GlassoConfig::with_rho(0.05)).unwrap();
        assert!(kkt_residual(&s, &a.omega, 0.02) < 1e-6);
        assert!(kkt_residual(&s, &b.omega, 0.05) < 1e-6);
        assert_eq!(a.omega.get(0, 1), 0.0);
        assert!(b.omega.get(0, 1).abs() > 1e-3);
    }

    #[test]
    fn two_by_two_matches_grid_search() {
        let s = SampleCov::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0])).unwrap();
        let rho = 0.1;
        let f = |a: f64, b: f64, c: f64| {
            let det = a * b - c * c;
            if a <= 0.0 || det <= 0.0 {
                return f64::INFINITY;
            }
            a + b + c - det.ln() + rho * (a.abs() + b.abs() + 2.0 * c.abs())
        };
        // Coarse-to-fine grid over (a, b, c).
        let (mut centre, mut step) = ([1.0, 1.0, 0.0], 0.25);
        while step > 1e-4 {
            let mut best = (f64::INFINITY, centre);
            for i in -8..=8 {
                for j in -8..=8 {
                    for k in -8..=8 {
                        let x = [
                            centre[0] + i as f64 * step,
                            centre[1] + j as f64 * step,
                            centre[2] + k as f64 * step,
                        ];
                        let v = f(x[0], x[1], x[2]);
                        if v < best.0 {
                            best = (v, x);
                        }
                    }
                }
            }
            centre = best.1;
            step /= 4.0;
        }
        let sol = glasso_solve(&s, &GlassoConfig::with_rho(rho)).unwrap();
        assert!((sol.omega.get(0, 0) - centre[0]).abs() < 1e-3);
        assert!((sol.omega.get(1, 1) - centre[1]).abs() < 1e-3);
        assert!((sol.omega.get(0, 1) - centre[2]).abs() < 1e-3);
    }

    #[test]
    fn output_is_exactly_symmetric() {
        let s = random_cov(7, 30, 9);
        let sol = glasso_solve(&s, &GlassoConfig::with_rho(0.07)).unwrap();
        let o = sol.omega.values();
        assert_eq!(o, &o.transpose());
    }

    #[test]
    fn rejects_bad_config() {
        let s = random_cov(3, 10, 1);
        let cfg = GlassoConfig {
            rho: -1.0,
            ..GlassoConfig::default()
        };
        assert!(glasso_solve(&s, &cfg).is_err());
    }
}
