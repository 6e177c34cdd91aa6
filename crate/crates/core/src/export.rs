//! Writers for samples, summaries, estimates and edge sets.
//!
//! Floats are written with 17 significant digits so two runs can be
//! diffed byte for byte. Each file opens with a provenance record: a `#`
//! comment block for CSV, a `//` block for DOT, a `provenance` key for JSON.

use std::io::Write;

use serde::ser::{Serialize, SerializeMap, Serializer};
use serde_json::value::RawValue;

use crate::error::{GgmError, Result};
use crate::model::PrecisionMatrix;
use crate::selection::{quantile_type7, EdgeSet};
use crate::wbb::PosteriorSample;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// `x` with 17 significant digits; non-finite values spell themselves out.
/// Negative zero prints as zero.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{:.16e}", x + 0.0)
    } else {
        x.to_string()
    }
}

/// A float serialized through [`fmt_f64`]; non-finite values become `null`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Num(pub f64);

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return s.serialize_none();
        }
        let raw = RawValue::from_string(fmt_f64(self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

fn nums(v: &[f64]) -> Vec<Num> {
    v.iter().copied().map(Num).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    /// SHA-256 of the canonical run configuration.
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_sha256: impl Into<String>, seed: u64) -> Self {
        Self {
            tool: "rggm".into(),
            version: VERSION.into(),
            config_sha256: config_sha256.into(),
            seed,
        }
    }

    fn lines(&self) -> [String; 3] {
        [
            format!("{} {}", self.tool, self.version),
            format!("config_sha256 {}", self.config_sha256),
            format!("seed {}", self.seed),
        ]
    }

    pub fn write_comment<W: Write>(&self, w: &mut W, prefix: &str) -> Result<()> {
        for l in self.lines() {
            writeln!(w, "{prefix} {l}")?;
        }
        Ok(())
    }
}

/// `{"provenance": …, "result": body}`.
pub fn write_json<W: Write, T: Serialize>(w: &mut W, prov: &Provenance, body: &T) -> Result<()> {
    struct Wrapped<'a, T>(&'a Provenance, &'a T);
    impl<T: Serialize> Serialize for Wrapped<'_, T> {
        fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
            let mut m = s.serialize_map(Some(2))?;
            m.serialize_entry("provenance", self.0)?;
            m.serialize_entry("result", self.1)?;
            m.end()
        }
    }
    serde_json::to_writer_pretty(&mut *w, &Wrapped(prov, body))?;
    writeln!(w)?;
    Ok(())
}

/// Column names `w_i_j` over the lower triangle, diagonal included, row by row.
pub fn sample_columns(p: usize) -> Vec<(usize, usize)> {
    (0..p).flat_map(|i| (0..=i).map(move |j| (i, j))).collect()
}

/// One row per draw, one column per lower-triangle entry.
pub fn write_samples_csv<W: Write>(w: &mut W, prov: &Provenance, sample: &PosteriorSample) -> Result<()> {
    prov.write_comment(w, "#")?;
    let cols = sample_columns(sample.dim());
    let mut out = csv::Writer::from_writer(w);
    let header: Vec<String> = cols.iter().map(|(i, j)| format!("w_{}_{}", i + 1, j + 1)).collect();
    out.write_record(&header).map_err(csv_err)?;
    for d in sample.draws() {
        out.write_record(cols.iter().map(|&(i, j)| fmt_f64(d.get(i, j))))
            .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> GgmError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => GgmError::Io(io),
        other => GgmError::Numerical(format!("{other:?}")),
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct EntrySummary {
    pub i: usize,
    pub j: usize,
    pub mean: Num,
    pub q025: Num,
    pub q975: Num,
    pub prob_small: Num,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SampleSummary {
    pub p: usize,
    pub draws: usize,
    pub eps: Num,
    pub lambda_mean: Num,
    pub converged_fraction: Num,
    pub mean: Vec<Vec<Num>>,
    pub entries: Vec<EntrySummary>,
}

/// Means, 2.5% and 97.5% quantiles and `P(|ω_ij| < ε)` per entry.
/// Indices are 1-based.
pub fn summarize(sample: &PosteriorSample, eps: f64) -> SampleSummary {
    let p = sample.dim();
    let m = sample.len() as f64;
    let mean = sample.mean();
    let entries = sample_columns(p)
        .into_iter()
        .map(|(i, j)| {
            let mut v = sample.entry(i, j);
            let small = v.iter().filter(|x| x.abs() < eps).count() as f64 / m;
            v.sort_by(f64::total_cmp);
            EntrySummary {
                i: i + 1,
                j: j + 1,
                mean: Num(mean[(i, j)]),
                q025: Num(quantile_type7(&v, 0.025)),
                q975: Num(quantile_type7(&v, 0.975)),
                prob_small: Num(small),
            }
        })
        .collect();
    let lam = &sample.meta().lambda;
    SampleSummary {
        p,
        draws: sample.len(),
        eps: Num(eps),
        lambda_mean: Num(lam.iter().sum::<f64>() / lam.len() as f64),
        converged_fraction: Num(sample.converged_fraction()),
        mean: matrix_rows(&mean),
        entries,
    }
}

pub fn matrix_rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<Num>> {
    (0..m.nrows())
        .map(|i| nums(&m.row(i).iter().copied().collect::<Vec<_>>()))
        .collect()
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct Estimate {
    pub method: String,
    pub gamma: Option<Num>,
    pub lambda: Num,
    pub objective: Option<Num>,
    pub converged: bool,
    pub omega: Vec<Vec<Num>>,
}

impl Estimate {
    pub fn new(method: &str, gamma: Option<f64>, lambda: f64, objective: Option<f64>, converged: bool, omega: &PrecisionMatrix) -> Self {
        Self {
            method: method.into(),
            gamma: gamma.map(Num),
            lambda: Num(lambda),
            objective: objective.map(Num),
            converged,
            omega: matrix_rows(omega.values()),
        }
    }
}

/// Node labels: the CSV header when present, else `V1..Vp`.
pub fn node_labels(header: Option<&[String]>, p: usize) -> Vec<String> {
    match header {
        Some(h) if h.len() == p => h.to_vec(),
        _ => (1..=p).map(|k| format!("V{k}")).collect(),
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct PairRecord {
    pub from: String,
    pub to: String,
    pub included: bool,
    pub inclusion_prob: Num,
}

/// Adjacency list keyed by node label, plus per-pair inclusion
/// probabilities.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Adjacency {
    pub eps: Num,
    pub nodes: Vec<String>,
    pub adjacency: std::collections::BTreeMap<String, Vec<String>>,
    pub pairs: Vec<PairRecord>,
}

impl Adjacency {
    pub fn new(edges: &EdgeSet, labels: &[String]) -> Result<Self> {
        if labels.len() != edges.p {
            return Err(GgmError::Dimension {
                expected: edges.p,
                got: labels.len(),
            });
        }
        let mut adjacency: std::collections::BTreeMap<String, Vec<String>> =
            labels.iter().map(|l| (l.clone(), Vec::new())).collect();
        for (a, b) in edges.edges() {
            adjacency.get_mut(&labels[a]).unwrap().push(labels[b].clone());
            adjacency.get_mut(&labels[b]).unwrap().push(labels[a].clone());
        }
        let pairs = edges
            .pairs
            .iter()
            .zip(&edges.prob_small)
            .zip(&edges.included)
            .map(|((&(i, j), &ps), &inc)| PairRecord {
                from: labels[i].clone(),
                to: labels[j].clone(),
                included: inc,
                inclusion_prob: Num(1.0 - ps),
            })
            .collect();
        Ok(Self {
            eps: Num(edges.eps),
            nodes: labels.to_vec(),
            adjacency,
            pairs,
        })
    }
}

fn dot_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Undirected DOT graph; every variable is a node, selected pairs are edges.
pub fn write_dot<W: Write>(w: &mut W, prov: &Provenance, edges: &EdgeSet, labels: &[String]) -> Result<()> {
    if labels.len() != edges.p {
        return Err(GgmError::Dimension {
            expected: edges.p,
            got: labels.len(),
        });
    }
    prov.write_comment(w, "//")?;
    writeln!(w, "graph ggm {{")?;
    for l in labels {
        writeln!(w, "  {};", dot_quote(l))?;
    }
    for (i, j) in edges.edges() {
        writeln!(w, "  {} -- {};", dot_quote(&labels[i]), dot_quote(&labels[j]))?;
    }
    writeln!(w, "}}")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::median_probability_select;
    use crate::wbb::{Method, SampleMeta};
    use nalgebra::DMatrix;

    fn sample() -> PosteriorSample {
        let a = PrecisionMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
        let b = PrecisionMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0])).unwrap();
        let meta = SampleMeta {
            method: Method::Wbb,
            gamma: Some(0.1),
            nu: None,
            seed: 1,
            lambda: vec![0.1, 0.3],
            converged: vec![true, false],
        };
        PosteriorSample::new(vec![a, b], meta).unwrap()
    }

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02e23, f64::MIN_POSITIVE] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
            let mantissa = s.split('e').next().unwrap().replace(['-', '.'], "");
            assert_eq!(mantissa.len(), 17);
        }
        assert_eq!(serde_json::to_string(&Num(0.5)).unwrap(), "5.0000000000000000e-1");
        assert_eq!(serde_json::to_string(&Num(f64::NAN)).unwrap(), "null");
    }

    #[test]
    fn samples_csv_layout() {
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, &Provenance::new("abc", 7), &sample()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], format!("# rggm {VERSION}"));
        assert_eq!(lines[2], "# seed 7");
        assert_eq!(lines[3], "w_1_1,w_2_1,w_2_2");
        assert_eq!(lines[4], "2.0000000000000000e0,5.0000000000000000e-1,1.0000000000000000e0");
        assert_eq!(lines.len(), 6);
    }

    #[test]
    fn summary_values() {
        let s = summarize(&sample(), 0.1);
        assert_eq!(s.entries.len(), 3);
        let off = &s.entries[1];
        assert_eq!((off.i, off.j), (2, 1));
        assert_eq!(off.mean, Num(0.25));
        assert_eq!(off.prob_small, Num(0.5));
        assert_eq!(off.q025, Num(0.0125));
        assert_eq!(s.lambda_mean, Num(0.2));
        assert_eq!(s.converged_fraction, Num(0.5));
        let mut buf = Vec::new();
        write_json(&mut buf, &Provenance::new("h", 1), &s).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["provenance"]["config_sha256"], "h");
        assert_eq!(v["result"]["mean"][1][0].as_f64(), Some(0.25));
    }

    #[test]
    fn dot_and_adjacency_use_labels() {
        let edges = median_probability_select(&sample(), 0.01).unwrap();
        let labels = node_labels(Some(&["a\"x".to_string(), "b".to_string()]), 2);
        let mut buf = Vec::new();
        write_dot(&mut buf, &Provenance::new("h", 1), &edges, &labels).unwrap();
        let text = String::from_utf8(buf).unwrap();
        // One of two draws is exactly zero: P(small) = 0.5, so excluded.
        assert!(!text.contains("--"));
        assert!(text.contains("\"a\\\"x\";"));
        let v = serde_json::to_value(Adjacency::new(&edges, &labels).unwrap()).unwrap();
        assert_eq!(v["adjacency"]["b"].as_array().unwrap().len(), 0);
        assert_eq!(v["pairs"][0]["inclusion_prob"].as_f64(), Some(0.5));
        assert_eq!(node_labels(None, 2), vec!["V1", "V2"]);
    }
}
