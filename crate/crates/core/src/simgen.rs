//! Synthetic data: true precision matrices, contaminated samples, and the
//! preprocessing used on real data (Hotelling T² screening, median/MAD
//! scaling).

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{GgmError, Result};
use crate::model::{mirror_lower, spd_inverse, DataMatrix, PrecisionMatrix};
use crate::rng::stream_rng;

const A_DIAG: [f64; 12] = [
    0.239, 1.554, 0.362, 0.199, 0.349, 0.295, 0.715, 0.164, 0.518, 0.379, 0.159, 0.207,
];

// Zero-based (row, col, value) of the nonzero upper off-diagonals.
const A_OFF: [(usize, usize, f64); 13] = [
    (0, 1, 0.117),
    (0, 7, 0.031),
    (2, 3, 0.002),
    (3, 4, 0.094),
    (4, 11, -0.036),
    (5, 6, -0.229),
    (5, 7, 0.002),
    (7, 8, 0.112),
    (7, 9, -0.028),
    (7, 10, -0.008),
    (8, 9, -0.193),
    (8, 10, -0.09),
    (9, 10, 0.167),
];

/// The fixed 12 × 12 sparse benchmark precision matrix.
pub fn matrix_a() -> PrecisionMatrix {
    let mut m = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&A_DIAG));
    for &(i, j, v) in &A_OFF {
        m[(i, j)] = v;
        m[(j, i)] = v;
    }
    PrecisionMatrix::new(m).expect("benchmark matrix is positive definite")
}

/// Banded AR(2) precision: 1 on the diagonal, 0.5 and 0.25 on the first two bands.
pub fn matrix_ar2(p: usize) -> Result<PrecisionMatrix> {
    if p < 3 {
        return Err(GgmError::InvalidParameter(format!("AR(2) needs p >= 3, got {p}")));
    }
    let m = DMatrix::from_fn(p, p, |i, j| match i.abs_diff(j) {
        0 => 1.0,
        1 => 0.5,
        2 => 0.25,
        _ => 0.0,
    });
    PrecisionMatrix::new(m)
}

/// Undirected simple graph on `p` nodes; edges stored as `(i, j)` with `i < j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    pub p: usize,
    pub edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    pub fn empty(p: usize) -> Self {
        Self {
            p,
            edges: BTreeSet::new(),
        }
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    fn insert(&mut self, i: usize, j: usize) -> bool {
        self.edges.insert((i.min(j), i.max(j)))
    }

    fn remove(&mut self, i: usize, j: usize) {
        self.edges.remove(&(i.min(j), i.max(j)));
    }
}

/// Ring lattice with `nei` neighbours on each side, each lattice edge
/// rewired with probability `rewire` to a uniformly chosen new endpoint.
pub fn watts_strogatz<R: Rng + ?Sized>(p: usize, nei: usize, rewire: f64, rng: &mut R) -> Result<Graph> {
    if p < 2 * nei + 1 || !(0.0..=1.0).contains(&rewire) {
        return Err(GgmError::InvalidParameter(format!(
            "small-world graph needs p > 2·nei and rewire in [0,1] (p={p}, nei={nei}, rewire={rewire})"
        )));
    }
    let mut g = Graph::empty(p);
    for i in 0..p {
        for k in 1..=nei {
            g.insert(i, (i + k) % p);
        }
    }
    for k in 1..=nei {
        for i in 0..p {
            let j = (i + k) % p;
            if !g.contains(i, j) || rng.random::<f64>() >= rewire {
                continue;
            }
            // A node adjacent to everyone has nowhere to rewire to.
            let free: Vec<usize> = (0..p).filter(|&t| t != i && !g.contains(i, t)).collect();
            if free.is_empty() {
                continue;
            }
            let t = free[rng.random_range(0..free.len())];
            g.remove(i, j);
            g.insert(i, t);
        }
    }
    Ok(g)
}

/// Preferential attachment: each new node links to `m` distinct existing
/// nodes chosen with probability proportional to degree.
pub fn barabasi_albert<R: Rng + ?Sized>(p: usize, m: usize, rng: &mut R) -> Result<Graph> {
    if m == 0 || p <= m {
        return Err(GgmError::InvalidParameter(format!(
            "scale-free graph needs 1 <= m < p (p={p}, m={m})"
        )));
    }
    let mut g = Graph::empty(p);
    let mut degree = vec![0usize; p];
    for v in 1..p {
        let mut targets = BTreeSet::new();
        let k = m.min(v);
        while targets.len() < k {
            let total: usize = (0..v).filter(|u| !targets.contains(u)).map(|u| degree[u].max(1)).sum();
            let mut r = rng.random_range(0..total);
            for u in (0..v).filter(|u| !targets.contains(u)) {
                let d = degree[u].max(1);
                if r < d {
                    targets.insert(u);
                    break;
                }
                r -= d;
            }
        }
        for u in targets {
            g.insert(u, v);
            degree[u] += 1;
            degree[v] += 1;
        }
    }
    Ok(g)
}

/// Random precision matrix supported on `graph`, shifted so that its
/// smallest eigenvalue is exactly 0.1.
pub fn precision_from_graph<R: Rng + ?Sized>(graph: &Graph, rng: &mut R) -> Result<PrecisionMatrix> {
    let p = graph.p;
    let draw = |rng: &mut R| {
        let mag = rng.random_range(0.25..=0.75);
        if rng.random::<bool>() {
            mag
        } else {
            -mag
        }
    };
    let mut e = DMatrix::<f64>::zeros(p, p);
    for &(i, j) in &graph.edges {
        // E is not symmetric: both directions are drawn independently.
        let a = draw(rng);
        let b = draw(rng);
        e[(i, j)] = 0.5 * (a + b);
    }
    for &(i, j) in &graph.edges {
        e[(j, i)] = e[(i, j)];
    }
    let lmin = e.clone().symmetric_eigenvalues().min();
    for i in 0..p {
        e[(i, i)] += 0.1 - lmin;
    }
    PrecisionMatrix::new(e)
}

/// Truth-matrix families used in the benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum GraphSpec {
    FixedA,
    Ar2 { p: usize },
    SmallWorld { p: usize, nei: usize, rewire: f64 },
    ScaleFree { p: usize, m: usize },
}

impl GraphSpec {
    pub fn small_world(p: usize) -> Self {
        Self::SmallWorld { p, nei: 2, rewire: 0.1 }
    }

    pub fn scale_free(p: usize) -> Self {
        Self::ScaleFree { p, m: 1 }
    }

    pub fn build<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PrecisionMatrix> {
        match *self {
            Self::FixedA => Ok(matrix_a()),
            Self::Ar2 { p } => matrix_ar2(p),
            Self::SmallWorld { p, nei, rewire } => precision_from_graph(&watts_strogatz(p, nei, rewire, rng)?, rng),
            Self::ScaleFree { p, m } => precision_from_graph(&barabasi_albert(p, m, rng)?, rng),
        }
    }
}

/// Outlier law mixed into the clean Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScenarioKind {
    /// No contamination.
    A,
    /// `N(0, 30 I)`.
    B,
    /// `N(η·(1,1,1,0,…,0), I)`.
    C { eta: f64 },
}

#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub omega: PrecisionMatrix,
    pub contamination: f64,
    pub n: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, omega: PrecisionMatrix, n: usize, seed: u64) -> Self {
        Self {
            kind,
            omega,
            contamination: 0.1,
            n,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.contamination) {
            return Err(GgmError::InvalidParameter(format!(
                "contamination ratio {} not in [0, 1)",
                self.contamination
            )));
        }
        if let ScenarioKind::C { eta } = self.kind {
            if !(eta > 0.0) {
                return Err(GgmError::InvalidParameter(format!("eta = {eta}")));
            }
        }
        if self.n == 0 {
            return Err(GgmError::InvalidParameter("n must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub data: DataMatrix,
    /// `true` for rows drawn from the contaminating component.
    pub contaminated: Vec<bool>,
}

/// Draws `n` rows from the scenario mixture using stream 0 of `spec.seed`.
pub fn generate(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, 0);
    let p = spec.omega.dim();
    let l = spec.omega.cholesky_factor();
    let mut values = DMatrix::<f64>::zeros(spec.n, p);
    let mut contaminated = vec![false; spec.n];
    let mut z = vec![0.0; p];
    for i in 0..spec.n {
        let outlier = match spec.kind {
            ScenarioKind::A => false,
            _ => rng.random::<f64>() < spec.contamination,
        };
        for zk in z.iter_mut() {
            *zk = rng.sample(StandardNormal);
        }
        if !outlier {
            // Lᵀx = z gives Cov(x) = (L Lᵀ)⁻¹ = Ω⁻¹.
            for a in (0..p).rev() {
                let mut s = z[a];
                for b in a + 1..p {
                    s -= l[(b, a)] * values[(i, b)];
                }
                values[(i, a)] = s / l[(a, a)];
            }
        } else {
            contaminated[i] = true;
            for a in 0..p {
                values[(i, a)] = match spec.kind {
                    ScenarioKind::B => 30f64.sqrt() * z[a],
                    ScenarioKind::C { eta } => z[a] + if a < 3 { eta } else { 0.0 },
                    ScenarioKind::A => unreachable!(),
                };
            }
        }
    }
    Ok(Scenario {
        data: DataMatrix::new(values)?,
        contaminated,
    })
}

/// Drops rows whose Mahalanobis distance from the sample mean exceeds the
/// `1 − α` quantile of `χ²_p`. Returns the kept rows and flagged indices.
pub fn hotelling_filter(y: &DataMatrix, alpha: f64) -> Result<(DataMatrix, Vec<usize>)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(GgmError::InvalidParameter(format!("alpha = {alpha}")));
    }
    let (n, p) = (y.nrows(), y.ncols());
    if n <= p {
        return Err(GgmError::Singular(format!("Hotelling filter needs n > p (n={n}, p={p})")));
    }
    let mean = y.values().row_mean();
    let mut centered = y.values().clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let mut cov = centered.tr_mul(&centered) / n as f64;
    mirror_lower(&mut cov);
    let prec = spd_inverse(&cov).map_err(|_| GgmError::Singular("sample covariance is singular".into()))?;
    let chi = ChiSquared::new(p as f64).map_err(|e| GgmError::Numerical(e.to_string()))?;
    let threshold = chi.inverse_cdf(1.0 - alpha);

    let mut kept = Vec::new();
    let mut flagged = Vec::new();
    for (i, row) in centered.row_iter().enumerate() {
        let d = (row * &prec * row.transpose())[(0, 0)];
        if d > threshold {
            flagged.push(i);
        } else {
            kept.push(i);
        }
    }
    Ok((y.select_rows(&kept)?, flagged))
}

/// Consistency constant turning the MAD into a normal-scale estimate.
pub const MAD_SCALE: f64 = 1.4826;

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Column-wise `(y − median) / (1.4826 · MAD)`.
pub fn mad_normalize(y: &DataMatrix) -> Result<DataMatrix> {
    let mut out = y.values().clone();
    for (c, mut col) in out.column_iter_mut().enumerate() {
        let mut v: Vec<f64> = col.iter().cloned().collect();
        let med = median(&mut v);
        let mut dev: Vec<f64> = v.iter().map(|x| (x - med).abs()).collect();
        let mad = median(&mut dev);
        if mad == 0.0 {
            return Err(GgmError::ZeroMad { column: c });
        }
        let scale = MAD_SCALE * mad;
        col.apply(|x| *x = (*x - med) / scale);
    }
    let data = DataMatrix::new(out)?;
    match y.header() {
        Some(h) => data.with_header(h.to_vec()),
        None => Ok(data),
    }
}
