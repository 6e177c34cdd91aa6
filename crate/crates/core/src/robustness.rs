//! Low-dimensional quadrature checks of posterior robustness.
//!
//! Four unnormalized posteriors for a `p = 1` or `p = 2` precision matrix
//! under the prior `exp(−λ‖Ω‖₁)` on the positive-definite cone:
//!
//! * `gamma`: `|Ω|^{1/(2(1+γ))} {Σᵢ exp(−γ qᵢ/2)}^{1/γ}`
//! * `kl`: the ordinary Gaussian likelihood `|Ω|^{n/2} exp(−Σᵢ qᵢ/2)`
//! * `t`: `Πᵢ |Ω|^{1/2} (1 + qᵢ/(ν−2))^{−(ν+p)}`
//! * `dp`: `exp(Q)` with `Q = (2π)^{−αp/2} |Ω|^{α/2} [(1/α) Σᵢ exp(−α qᵢ/2) − n(1+α)^{1−α/2}]`
//!
//! where `qᵢ = yᵢᵀΩyᵢ`. The `t` and `dp` forms follow the displayed
//! formulas; `textbook: true` switches to the exponent `−(ν+p)/2` and to the
//! constant `n(1+α)^{−1−p/2}` of the usual density-power objective.
//!
//! Densities are normalized by the trapezoid rule: on a log-spaced grid
//! (trapezoid in `log ω`) followed by a linear tail for `p = 1`, and on a
//! tensor grid masked to the positive-definite region for `p = 2`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{GgmError, Result};
use crate::model::cholesky;
use crate::rng::stream_rng;

/// Largest tolerated tail mass beyond the end of a grid.
pub const TAIL_LIMIT: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PosteriorKind {
    Gamma {
        gamma: f64,
    },
    Kl,
    T {
        nu: f64,
        #[serde(default)]
        textbook: bool,
    },
    Dp {
        alpha: f64,
        #[serde(default)]
        textbook: bool,
    },
}

impl PosteriorKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Gamma { .. } => "gamma",
            Self::Kl => "kl",
            Self::T { .. } => "t",
            Self::Dp { .. } => "dp",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Gamma { gamma } => gamma > 0.0,
            Self::Kl => true,
            Self::T { nu, .. } => nu > 2.0,
            Self::Dp { alpha, .. } => alpha > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(GgmError::InvalidParameter(format!("invalid tuning for {self:?}")))
        }
    }

    /// Log-likelihood part of the kernel from `log|Ω|` and the quadratic
    /// forms. With no observations the likelihood is taken to be flat.
    fn log_lik(&self, p: usize, log_det: f64, quads: &[f64]) -> f64 {
        if quads.is_empty() {
            return 0.0;
        }
        let n = quads.len() as f64;
        let pf = p as f64;
        match *self {
            Self::Gamma { gamma } => {
                let max = quads.iter().map(|q| -0.5 * gamma * q).fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = quads.iter().map(|q| (-0.5 * gamma * q - max).exp()).sum();
                log_det / (2.0 * (1.0 + gamma)) + (max + s.ln()) / gamma
            }
            Self::Kl => 0.5 * n * log_det - 0.5 * quads.iter().sum::<f64>(),
            Self::T { nu, textbook } => {
                let e = if textbook { 0.5 * (nu + pf) } else { nu + pf };
                quads.iter().map(|q| 0.5 * log_det - e * (q / (nu - 2.0)).ln_1p()).sum()
            }
            Self::Dp { alpha, textbook } => {
                let c = dp_constant(alpha, p, textbook);
                let s: f64 = quads.iter().map(|q| (-0.5 * alpha * q).exp()).sum();
                (2.0 * PI).powf(-0.5 * alpha * pf) * (0.5 * alpha * log_det).exp() * (s / alpha - n * c)
            }
        }
    }
}

fn dp_constant(alpha: f64, p: usize, textbook: bool) -> f64 {
    if textbook {
        (1.0 + alpha).powf(-1.0 - 0.5 * p as f64)
    } else {
        (1.0 + alpha).powf(1.0 - 0.5 * alpha)
    }
}

fn quad(omega: &DMatrix<f64>, y: &[f64]) -> f64 {
    let p = y.len();
    let mut acc = 0.0;
    for a in 0..p {
        for b in 0..p {
            acc += y[a] * omega[(a, b)] * y[b];
        }
    }
    acc
}

/// Log of the unnormalized posterior at `omega`; `−∞` off the
/// positive-definite cone.
pub fn log_unnormalized_posterior(kind: &PosteriorKind, omega: &DMatrix<f64>, data: &[Vec<f64>], lambda: f64) -> f64 {
    let p = omega.nrows();
    let Ok(l) = cholesky(omega) else {
        return f64::NEG_INFINITY;
    };
    let log_det = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let quads: Vec<f64> = data.iter().map(|y| quad(omega, y)).collect();
    let l1: f64 = omega.iter().map(|v| v.abs()).sum();
    debug_assert!(data.iter().all(|y| y.len() == p));
    kind.log_lik(p, log_det, &quads) - lambda * l1
}

/// Scalar case of [`log_unnormalized_posterior`].
pub fn log_kernel_1d(kind: &PosteriorKind, omega: f64, data: &[f64], lambda: f64) -> f64 {
    if !(omega > 0.0) {
        return f64::NEG_INFINITY;
    }
    let quads: Vec<f64> = data.iter().map(|y| omega * y * y).collect();
    kind.log_lik(1, omega.ln(), &quads) - lambda * omega
}

fn log_kernel_2d(kind: &PosteriorKind, w: [f64; 3], data: &[[f64; 2]], lambda: f64, quads: &mut Vec<f64>) -> f64 {
    let [w11, w22, w12] = w;
    let det = w11 * w22 - w12 * w12;
    if !(w11 > 0.0 && det > 0.0) {
        return f64::NEG_INFINITY;
    }
    quads.clear();
    quads.extend(data.iter().map(|y| w11 * y[0] * y[0] + 2.0 * w12 * y[0] * y[1] + w22 * y[1] * y[1]));
    kind.log_lik(2, det.ln(), quads) - lambda * (w11 + w22 + 2.0 * w12.abs())
}

/// Quadrature nodes and trapezoid weights on `(0, ω_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1d {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Grid1d {
    /// Log-spaced on `[10⁻¹² ω_max, ω_max/2]` (three quarters of the nodes),
    /// then linear up to `ω_max`.
    pub fn hybrid(omega_max: f64, n: usize) -> Result<Self> {
        if !(omega_max > 0.0 && omega_max.is_finite()) || n < 8 {
            return Err(GgmError::InvalidParameter(format!(
                "grid needs omega_max > 0 and >= 8 points (got {omega_max}, {n})"
            )));
        }
        let n_log = 3 * n / 4;
        let n_lin = n - n_log + 1;
        let (lo, mid) = ((omega_max * 1e-12).ln(), (0.5 * omega_max).ln());
        let du = (mid - lo) / (n_log - 1) as f64;
        let h = 0.5 * omega_max / (n_lin - 1) as f64;

        let mut points = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for k in 0..n_log {
            let x = (lo + du * k as f64).exp();
            let end = k == 0 || k == n_log - 1;
            points.push(x);
            weights.push(if end { 0.5 } else { 1.0 } * du * x);
        }
        *points.last_mut().unwrap() = 0.5 * omega_max;
        weights[n_log - 1] += 0.5 * h;
        for k in 1..n_lin {
            points.push(0.5 * omega_max + h * k as f64);
            weights.push(if k == n_lin - 1 { 0.5 * h } else { h });
        }
        Ok(Self { points, weights })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn omega_max(&self) -> f64 {
        *self.points.last().unwrap()
    }
}

/// A normalized density tabulated on a [`Grid1d`].
#[derive(Debug, Clone, PartialEq)]
pub struct Density1d {
    pub grid: Grid1d,
    pub density: Vec<f64>,
}

impl Density1d {
    pub fn integral(&self) -> f64 {
        self.grid.weights.iter().zip(&self.density).map(|(w, d)| w * d).sum()
    }

    pub fn mean(&self) -> f64 {
        let g = &self.grid;
        (0..g.len()).map(|k| g.weights[k] * g.points[k] * self.density[k]).sum()
    }

    /// Grid node with the largest density, and the index of that node.
    pub fn mode(&self) -> (f64, usize) {
        let k = (0..self.density.len())
            .max_by(|&a, &b| self.density[a].total_cmp(&self.density[b]))
            .unwrap();
        (self.grid.points[k], k)
    }

    /// `∫ |π − π'|` for two densities on the same grid.
    pub fn l1_distance(&self, other: &Density1d) -> Result<f64> {
        if self.grid != other.grid {
            return Err(GgmError::InvalidParameter("densities live on different grids".into()));
        }
        Ok((0..self.density.len())
            .map(|k| self.grid.weights[k] * (self.density[k] - other.density[k]).abs())
            .sum())
    }
}

/// Normalizes the scalar kernel on `grid`, refusing grids whose estimated
/// tail mass beyond the last node exceeds [`TAIL_LIMIT`].
pub fn normalize_1d(kind: &PosteriorKind, data: &[f64], lambda: f64, grid: &Grid1d) -> Result<Density1d> {
    kind.validate()?;
    if !(lambda > 0.0) {
        return Err(GgmError::InvalidParameter(format!("lambda = {lambda}")));
    }
    let logk: Vec<f64> = grid.points.iter().map(|&w| log_kernel_1d(kind, w, data, lambda)).collect();
    let max = logk.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(GgmError::Numerical("kernel is not finite anywhere on the grid".into()));
    }
    let mut density: Vec<f64> = logk.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = grid.weights.iter().zip(&density).map(|(w, d)| w * d).sum();
    density.iter_mut().for_each(|d| *d /= z);

    // Exponential extrapolation of the tail from the last two nodes.
    let n = grid.len();
    let slope = (logk[n - 1] - logk[n - 2]) / (grid.points[n - 1] - grid.points[n - 2]);
    let tail = if slope < 0.0 {
        density[n - 1] / -slope
    } else {
        f64::INFINITY
    };
    if !(tail <= TAIL_LIMIT) {
        return Err(GgmError::GridTooShort {
            tail_mass: tail,
            limit: TAIL_LIMIT,
        });
    }
    Ok(Density1d { grid: grid.clone(), density })
}

/// Maximizer of the scalar kernel: a log-spaced scan followed by golden
/// section in `log ω`.
pub fn mode_1d(kind: &PosteriorKind, data: &[f64], lambda: f64) -> f64 {
    let f = |u: f64| log_kernel_1d(kind, u.exp(), data, lambda);
    let (lo, hi, steps) = (-30.0_f64, 12.0_f64, 840);
    let du = (hi - lo) / steps as f64;
    let best = (0..=steps)
        .map(|k| lo + du * k as f64)
        .max_by(|a, b| f(*a).total_cmp(&f(*b)))
        .unwrap();
    let (mut a, mut b) = (best - du, best + du);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    while b - a > 1e-12 {
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - r * (b - a);
        d = a + r * (b - a);
    }
    (0.5 * (a + b)).exp()
}

/// Upper grid end at which every kernel in `datasets` has dropped at least
/// `e^{-60}` below its maximum.
pub fn auto_omega_max(kind: &PosteriorKind, datasets: &[&[f64]], lambda: f64) -> f64 {
    let mut out = 0.0_f64;
    for data in datasets {
        let m = mode_1d(kind, data, lambda);
        let top = log_kernel_1d(kind, m, data, lambda);
        let mut w = m.max(1e-3) * 2.0;
        for _ in 0..200 {
            if log_kernel_1d(kind, w, data, lambda) < top - 60.0 {
                break;
            }
            w *= 1.5;
        }
        out = out.max(w);
    }
    out
}

/// Default node count for scalar grids.
pub const GRID_POINTS_1D: usize = 4001;
/// Default nodes per axis for `p = 2` tensor grids.
pub const GRID_POINTS_2D: usize = 101;

/// Clean data plus outliers `y = a + b·z` whose magnitude grows with `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierExperiment {
    pub clean: Vec<Vec<f64>>,
    pub offsets: Vec<Vec<f64>>,
    pub directions: Vec<Vec<f64>>,
}

impl OutlierExperiment {
    /// `n` standard-normal clean points (`p = 1` or `2`) and one outlier
    /// at `z` along the first axis.
    pub fn standard(n: usize, p: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 0);
        let clean = (0..n)
            .map(|_| (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let mut dir = vec![0.0; p];
        dir[0] = 1.0;
        Self {
            clean,
            offsets: vec![vec![0.0; p]],
            directions: vec![dir],
        }
    }

    pub fn dim(&self) -> usize {
        self.clean.first().or(self.offsets.first()).map_or(0, |r| r.len())
    }

    pub fn n_outliers(&self) -> usize {
        self.offsets.len()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.dim();
        let rows = self.clean.iter().chain(&self.offsets).chain(&self.directions);
        if p == 0 || rows.clone().any(|r| r.len() != p) || self.offsets.len() != self.directions.len() {
            return Err(GgmError::InvalidParameter("inconsistent outlier experiment".into()));
        }
        if rows.flatten().any(|v| !v.is_finite()) {
            return Err(GgmError::InvalidParameter("non-finite value in outlier experiment".into()));
        }
        Ok(())
    }

    /// Contaminated data set at magnitude `z`.
    pub fn data_at(&self, z: f64) -> Vec<Vec<f64>> {
        let mut d = self.clean.clone();
        for (a, b) in self.offsets.iter().zip(&self.directions) {
            d.push(a.iter().zip(b).map(|(a, b)| a + b * z).collect());
        }
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub z: f64,
    pub l1: f64,
}

fn column(data: &[Vec<f64>]) -> Vec<f64> {
    data.iter().map(|r| r[0]).collect()
}

/// `∫ |π(Ω | D_z) − π(Ω | D*)| dΩ` for each `z`, by quadrature.
pub fn robustness_curve(kind: &PosteriorKind, exp: &OutlierExperiment, lambda: f64, zs: &[f64]) -> Result<Vec<CurvePoint>> {
    kind.validate()?;
    exp.validate()?;
    match exp.dim() {
        1 => {
            let clean = column(&exp.clean);
            zs.iter()
                .map(|&z| {
                    let dirty = column(&exp.data_at(z));
                    let w = auto_omega_max(kind, &[&clean, &dirty], lambda);
                    let grid = Grid1d::hybrid(w, GRID_POINTS_1D)?;
                    let a = normalize_1d(kind, &dirty, lambda, &grid)?;
                    let b = normalize_1d(kind, &clean, lambda, &grid)?;
                    Ok(CurvePoint { z, l1: a.l1_distance(&b)? })
                })
                .collect()
        }
        2 => {
            let clean = pairs(&exp.clean);
            zs.iter()
                .map(|&z| {
                    let dirty = pairs(&exp.data_at(z));
                    let (a, b) = normalize_2d_pair(kind, &dirty, &clean, lambda)?;
                    let l1 = (0..a.density.len())
                        .map(|k| a.weights[k] * (a.density[k] - b.density[k]).abs())
                        .sum();
                    Ok(CurvePoint { z, l1 })
                })
                .collect()
        }
        p => Err(GgmError::InvalidParameter(format!("quadrature supports p = 1 or 2, got {p}"))),
    }
}

fn pairs(data: &[Vec<f64>]) -> Vec<[f64; 2]> {
    data.iter().map(|r| [r[0], r[1]]).collect()
}

/// Density on the masked `(ω₁₁, ω₂₂, ω₁₂)` tensor grid; `weights` already
/// include the trapezoid factors.
#[derive(Debug, Clone)]
pub struct Density2d {
    pub w_max: f64,
    pub weights: Vec<f64>,
    pub density: Vec<f64>,
}

impl Density2d {
    pub fn integral(&self) -> f64 {
        self.weights.iter().zip(&self.density).map(|(w, d)| w * d).sum()
    }
}

fn trapezoid_axis(lo: f64, hi: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let h = (hi - lo) / (n - 1) as f64;
    let x = (0..n).map(|k| lo + h * k as f64).collect();
    let w = (0..n).map(|k| if k == 0 || k == n - 1 { 0.5 * h } else { h }).collect();
    (x, w)
}

/// `(ω₁₁, ω₂₂) ∈ [0, w_max]²`, `ω₁₂ ∈ [−w_max, w_max]`, masked to the
/// positive-definite region.
pub fn normalize_2d(kind: &PosteriorKind, data: &[[f64; 2]], lambda: f64, w_max: f64, n: usize) -> Result<Density2d> {
    kind.validate()?;
    let (d, wd) = trapezoid_axis(0.0, w_max, n);
    let (o, wo) = trapezoid_axis(-w_max, w_max, n);
    let mut logk = Vec::with_capacity(n * n * n);
    let mut weights = Vec::with_capacity(n * n * n);
    let mut on_edge = Vec::with_capacity(n * n * n);
    let mut buf = Vec::with_capacity(data.len());
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                logk.push(log_kernel_2d(kind, [d[a], d[b], o[c]], data, lambda, &mut buf));
                weights.push(wd[a] * wd[b] * wo[c]);
                on_edge.push(a == n - 1 || b == n - 1);
            }
        }
    }
    let max = logk.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(GgmError::Numerical("kernel is not finite anywhere on the grid".into()));
    }
    let mut density: Vec<f64> = logk.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = weights.iter().zip(&density).map(|(w, x)| w * x).sum();
    density.iter_mut().for_each(|x| *x /= z);
    // Mass sitting on the outer faces bounds what lies beyond them.
    let edge: f64 = (0..density.len()).filter(|&k| on_edge[k]).map(|k| weights[k] * density[k]).sum();
    if edge > 1e-8 {
        return Err(GgmError::GridTooShort {
            tail_mass: edge,
            limit: 1e-8,
        });
    }
    Ok(Density2d { w_max, weights, density })
}

/// Normalizes both densities on a common grid, widening it until the
/// outer faces carry negligible mass.
fn normalize_2d_pair(kind: &PosteriorKind, a: &[[f64; 2]], b: &[[f64; 2]], lambda: f64) -> Result<(Density2d, Density2d)> {
    let cols: Vec<Vec<f64>> = [a, b]
        .iter()
        .flat_map(|d| (0..2).map(move |k| d.iter().map(|r| r[k]).collect::<Vec<_>>()))
        .collect();
    let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
    let mut w_max = auto_omega_max(kind, &refs, lambda);
    let mut last = f64::NAN;
    for _ in 0..6 {
        match (
            normalize_2d(kind, a, lambda, w_max, GRID_POINTS_2D),
            normalize_2d(kind, b, lambda, w_max, GRID_POINTS_2D),
        ) {
            (Ok(da), Ok(db)) => return Ok((da, db)),
            (Err(GgmError::GridTooShort { tail_mass, .. }), _) | (_, Err(GgmError::GridTooShort { tail_mass, .. })) => {
                last = tail_mass;
                w_max *= 2.0;
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
    }
    Err(GgmError::GridTooShort {
        tail_mass: last,
        limit: 1e-8,
    })
}

/// `log k(Ω | D_z) − log k(Ω | D*)` for the unnormalized kernels.
pub fn log_kernel_ratio(kind: &PosteriorKind, omega: &DMatrix<f64>, exp: &OutlierExperiment, z: f64, lambda: f64) -> f64 {
    log_unnormalized_posterior(kind, omega, &exp.data_at(z), lambda)
        - log_unnormalized_posterior(kind, omega, &exp.clean, lambda)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LimitRow {
    /// `[π(Ω_k|D_z)/π(Ω_k|D*)] / [π(Ω_0|D_z)/π(Ω_0|D*)]` at the given `z`.
    pub observed: f64,
    /// `exp(−κ|L|(|Ω_k|^{α/2} − |Ω_0|^{α/2}))` with `κ = (2π)^{−αp/2} c`.
    pub predicted: f64,
}

/// Ratio of posterior ratios across `omegas` for the DP posterior against
/// the large-`z` limit. Normalizing constants cancel, so no quadrature is
/// needed.
pub fn dp_limit_ratio(
    exp: &OutlierExperiment,
    alpha: f64,
    textbook: bool,
    omegas: &[DMatrix<f64>],
    z: f64,
) -> Result<Vec<LimitRow>> {
    exp.validate()?;
    if omegas.len() < 2 {
        return Err(GgmError::InvalidParameter("need at least two Ω points".into()));
    }
    let p = exp.dim();
    let kind = PosteriorKind::Dp { alpha, textbook };
    kind.validate()?;
    let kappa = (2.0 * PI).powf(-0.5 * alpha * p as f64) * dp_constant(alpha, p, textbook);
    let l = exp.n_outliers() as f64;
    let mut dets = Vec::with_capacity(omegas.len());
    let mut ratios = Vec::with_capacity(omegas.len());
    for om in omegas {
        let chol = cholesky(om)?;
        let log_det = 2.0 * chol.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        dets.push((0.5 * alpha * log_det).exp());
        // λ cancels in the ratio; any positive value will do.
        ratios.push(log_kernel_ratio(&kind, om, exp, z, 1.0));
    }
    Ok((0..omegas.len())
        .map(|k| LimitRow {
            observed: (ratios[k] - ratios[0]).exp(),
            predicted: (-kappa * l * (dets[k] - dets[0])).exp(),
        })
        .collect())
}

/// L1 distance below which a posterior counts as having recovered from
/// the outlier.
pub const ROBUST_L1: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub kind: PosteriorKind,
    pub curve: Vec<CurvePoint>,
    /// Curve nonincreasing in `z` with the last value below [`ROBUST_L1`].
    pub robust: bool,
}

pub fn assess(kind: &PosteriorKind, exp: &OutlierExperiment, lambda: f64, zs: &[f64]) -> Result<Verdict> {
    let curve = robustness_curve(kind, exp, lambda, zs)?;
    let monotone = curve.windows(2).all(|w| w[1].l1 <= w[0].l1);
    let robust = monotone && curve.last().is_some_and(|c| c.l1 < ROBUST_L1);
    Ok(Verdict {
        kind: *kind,
        curve,
        robust,
    })
}
