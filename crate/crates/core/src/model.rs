//! Dense matrix types shared by every estimator: observations, precision
//! matrices and sample covariances, plus Gaussian log densities.
//!
//! All densities are evaluated in the log domain. Determinants come from the
//! Cholesky factor computed once when a [`PrecisionMatrix`] is constructed.

use std::f64::consts::PI;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{GgmError, Result};

/// Relative pivot floor for the positive-definiteness check.
pub const PD_PIVOT_TOL: f64 = 1e-12;

/// `n × p` observation matrix; row `i` is observation `y_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
    header: Option<Vec<String>>,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(GgmError::InvalidParameter(
                "data matrix needs at least one row and one column".into(),
            ));
        }
        for row in 0..values.nrows() {
            for col in 0..values.ncols() {
                if !values[(row, col)].is_finite() {
                    return Err(GgmError::NonFinite { row, col });
                }
            }
        }
        Ok(Self {
            values,
            header: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        for r in rows {
            if r.len() != p {
                return Err(GgmError::Dimension {
                    expected: p,
                    got: r.len(),
                });
            }
        }
        Self::new(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
    }

    pub fn with_header(mut self, header: Vec<String>) -> Result<Self> {
        if header.len() != self.ncols() {
            return Err(GgmError::Dimension {
                expected: self.ncols(),
                got: header.len(),
            });
        }
        self.header = Some(header);
        Ok(self)
    }

    /// Reads comma-separated observations, one per line. A first line whose
    /// cells are not all numeric is taken as a header; any non-numeric cell
    /// after that is an error.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let mut header = None;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (idx, record) in rdr.records().enumerate() {
            let line = idx + 1;
            let record = record.map_err(|e| GgmError::Parse {
                line,
                msg: e.to_string(),
            })?;
            let parsed: Vec<std::result::Result<f64, _>> =
                record.iter().map(str::parse::<f64>).collect();
            if idx == 0 && parsed.iter().any(|c| c.is_err()) {
                header = Some(record.iter().map(str::to_owned).collect::<Vec<_>>());
                continue;
            }
            let mut row = Vec::with_capacity(parsed.len());
            for (col, cell) in parsed.into_iter().enumerate() {
                match cell {
                    Ok(v) if v.is_finite() => row.push(v),
                    _ => {
                        return Err(GgmError::Parse {
                            line,
                            msg: format!("non-numeric cell in column {}", col + 1),
                        })
                    }
                }
            }
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(GgmError::Parse {
                        line,
                        msg: format!("expected {} columns, found {}", first.len(), row.len()),
                    });
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(GgmError::Parse {
                line: 0,
                msg: "no observations".into(),
            });
        }
        let data = Self::from_rows(&rows)?;
        match header {
            Some(h) => data.with_header(h).map_err(|_| GgmError::Parse {
                line: 1,
                msg: "header width does not match data".into(),
            }),
            None => Ok(data),
        }
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(std::io::BufReader::new(file))
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn header(&self) -> Option<&[String]> {
        self.header.as_deref()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.values.row(i).transpose()
    }

    /// Keeps the rows whose indices are listed, in order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let p = self.ncols();
        let m = DMatrix::from_fn(rows.len(), p, |i, j| self.values[(rows[i], j)]);
        let mut out = Self::new(m)?;
        out.header = self.header.clone();
        Ok(out)
    }

    /// Appends the rows of `other` below this matrix.
    pub fn stack(&self, other: &DataMatrix) -> Result<Self> {
        if other.ncols() != self.ncols() {
            return Err(GgmError::Dimension {
                expected: self.ncols(),
                got: other.ncols(),
            });
        }
        let n = self.nrows();
        let m = DMatrix::from_fn(n + other.nrows(), self.ncols(), |i, j| {
            if i < n {
                self.values[(i, j)]
            } else {
                other.values[(i - n, j)]
            }
        });
        let mut out = Self::new(m)?;
        out.header = self.header.clone();
        Ok(out)
    }
}

/// Symmetric positive-definite `p × p` precision matrix.
#[derive(Debug, Clone)]
pub struct PrecisionMatrix {
    values: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_det: f64,
}

impl PartialEq for PrecisionMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values
    }
}

impl PrecisionMatrix {
    /// Symmetrizes `(M + Mᵀ)/2` and verifies positive definiteness.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        let values = symmetrize(values)?;
        let chol = cholesky(&values)?;
        let log_det = 2.0 * chol.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Self {
            values,
            chol,
            log_det,
        })
    }

    pub fn identity(p: usize) -> Self {
        Self::new(DMatrix::identity(p, p)).expect("identity is positive definite")
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    /// Lower-triangular Cholesky factor `L` with `Ω = L Lᵀ`.
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `Σ_ij |ω_ij|` over every entry, diagonal included.
    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    pub fn quad_form(&self, y: &[f64]) -> f64 {
        quad_form(&self.values, y)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        chol_inverse(&self.chol)
    }

    pub fn max_abs_diff(&self, other: &PrecisionMatrix) -> f64 {
        (&self.values - &other.values).amax()
    }
}

/// Symmetric positive semi-definite sample covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCov {
    values: DMatrix<f64>,
}

impl SampleCov {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        let values = symmetrize(values)?;
        let eig = values.clone().symmetric_eigenvalues();
        let max = eig.iter().cloned().fold(0.0_f64, f64::max);
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -1e-10 * max.max(f64::MIN_POSITIVE) {
            return Err(GgmError::InvalidParameter(format!(
                "covariance has negative eigenvalue {min:e}"
            )));
        }
        Ok(Self { values })
    }

    /// Trusted constructor for matrices that are PSD by construction.
    pub(crate) fn from_psd_unchecked(values: DMatrix<f64>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
}

/// `S = YᵀY / n`.
pub fn sample_covariance(y: &DataMatrix) -> SampleCov {
    let n = y.nrows() as f64;
    let mut s = y.values().tr_mul(y.values()) / n;
    mirror_lower(&mut s);
    SampleCov::from_psd_unchecked(s)
}

/// Log density of `N_p(0, Ω⁻¹)` at `y`.
pub fn gaussian_log_density(y: &[f64], omega: &PrecisionMatrix) -> Result<f64> {
    let p = omega.dim();
    if y.len() != p {
        return Err(GgmError::Dimension {
            expected: p,
            got: y.len(),
        });
    }
    Ok(-0.5 * p as f64 * (2.0 * PI).ln() + 0.5 * omega.log_det() - 0.5 * omega.quad_form(y))
}

/// `yᵢᵀΩyᵢ` for every row, via `‖Lᵀyᵢ‖²`.
pub fn quad_forms(y: &DataMatrix, omega: &PrecisionMatrix) -> Result<Vec<f64>> {
    if y.ncols() != omega.dim() {
        return Err(GgmError::Dimension {
            expected: omega.dim(),
            got: y.ncols(),
        });
    }
    let yl = y.values() * omega.cholesky_factor();
    Ok(yl.row_iter().map(|r| r.norm_squared()).collect())
}

pub fn log_det(omega: &PrecisionMatrix) -> f64 {
    omega.log_det()
}

pub(crate) fn quad_form(m: &DMatrix<f64>, y: &[f64]) -> f64 {
    let p = y.len();
    let mut acc = 0.0;
    for j in 0..p {
        let mut col = 0.0;
        for i in 0..p {
            col += m[(i, j)] * y[i];
        }
        acc += col * y[j];
    }
    acc
}

fn symmetrize(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(GgmError::Dimension {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    let p = m.nrows();
    let mut out = m;
    for i in 0..p {
        if !out[(i, i)].is_finite() {
            return Err(GgmError::NonFinite { row: i, col: i });
        }
        for j in 0..i {
            let v = 0.5 * (out[(i, j)] + out[(j, i)]);
            if !v.is_finite() {
                return Err(GgmError::NonFinite { row: i, col: j });
            }
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

pub(crate) fn mirror_lower(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for i in 0..p {
        for j in 0..i {
            let v = m[(i, j)];
            m[(j, i)] = v;
        }
    }
}

/// Cholesky factorization with a scale-aware pivot check.
pub fn cholesky(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = a.nrows();
    let max_diag = (0..p).map(|i| a[(i, i)]).fold(0.0_f64, f64::max);
    let floor = PD_PIVOT_TOL * max_diag;
    let mut l = DMatrix::<f64>::zeros(p, p);
    for j in 0..p {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > floor) || !d.is_finite() || max_diag <= 0.0 {
            return Err(GgmError::NotPositiveDefinite { index: j, pivot: d });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..p {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Inverse of `L Lᵀ` from its lower factor; the result is exactly symmetric.
pub(crate) fn chol_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let p = l.nrows();
    // L⁻¹ by forward substitution, then (L⁻¹)ᵀ L⁻¹.
    let mut linv = DMatrix::<f64>::zeros(p, p);
    for j in 0..p {
        linv[(j, j)] = 1.0 / l[(j, j)];
        for i in (j + 1)..p {
            let mut s = 0.0;
            for k in j..i {
                s += l[(i, k)] * linv[(k, j)];
            }
            linv[(i, j)] = -s / l[(i, i)];
        }
    }
    let mut inv = linv.tr_mul(&linv);
    mirror_lower(&mut inv);
    inv
}

/// Inverse of a symmetric positive-definite matrix.
pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(chol_inverse(&cholesky(a)?))
}
