//! Subcommand bodies. Every output is assembled in memory and written only
//! once the computation has succeeded, so a failed run leaves nothing
//! behind.

use std::fs;
use std::path::Path;

use robust_ggm::bench::{aggregate, fit_estimator, lambda_grid, simulate as run_sim, Estimator, EstimatorConfig, Fit};
use robust_ggm::export::{
    fmt_f64, matrix_rows, node_labels, summarize, write_dot, write_json, write_samples_csv, Adjacency, Estimate, Num,
    Provenance,
};
use robust_ggm::gamma_mm::GammaConfig;
use robust_ggm::robustness::{assess, dp_limit_ratio, log_kernel_ratio, OutlierExperiment, PosteriorKind};
use robust_ggm::rng::stream_rng;
use robust_ggm::selection::{median_probability_select, EdgeSet, MetricsReport};
use robust_ggm::simgen::{generate, hotelling_filter, mad_normalize, GraphSpec, ScenarioKind, ScenarioSpec};
use robust_ggm::wbb::{wbb_sample_with, PosteriorSample, WeightScheme};
use robust_ggm::{DataMatrix, PrecisionMatrix};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::{CliError, FitArgs, GenArgs, Preprocess, SampleArgs, SimulateArgs, Tuning, VerifyArgs};

type Res<T> = Result<T, CliError>;

fn sha_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the resolved configuration. Keys serialize sorted, so the hash
/// does not depend on field order.
fn config_hash(cfg: &serde_json::Value) -> String {
    sha_hex(&serde_json::to_vec(cfg).expect("JSON value serializes"))
}

/// Files to be written together.
#[derive(Default)]
struct Outputs(Vec<(String, Vec<u8>)>);

impl Outputs {
    fn add(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> robust_ggm::Result<()>) -> Res<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.0.push((name.to_owned(), buf));
        Ok(())
    }

    fn write(self, dir: &Path) -> Res<()> {
        fs::create_dir_all(dir)?;
        for (name, bytes) in self.0 {
            fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }
}

fn load(path: &Path, pre: &Preprocess) -> Res<(DataMatrix, String, usize)> {
    let bytes = fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let mut y = DataMatrix::from_csv_reader(bytes.as_slice())?;
    let mut dropped = 0;
    if let Some(alpha) = pre.hotelling {
        let (kept, flagged) = hotelling_filter(&y, alpha)?;
        dropped = flagged.len();
        y = kept;
    }
    if pre.mad {
        y = mad_normalize(&y)?;
    }
    Ok((y, sha_hex(&bytes), dropped))
}

fn estimator_config(method: Estimator, t: &Tuning) -> EstimatorConfig {
    EstimatorConfig {
        gamma: t.gamma,
        lambda: t.lambda.unwrap_or(method.lambda_min()),
        eps: t.eps,
        eps_prime: t.eps_prime,
        ..EstimatorConfig::new(method)
    }
}

fn add_edges(out: &mut Outputs, prov: &Provenance, edges: &EdgeSet, labels: &[String]) -> Res<()> {
    let adj = Adjacency::new(edges, labels)?;
    out.add("edges.json", |w| write_json(w, prov, &adj))?;
    out.add("edges.dot", |w| write_dot(w, prov, edges, labels))
}

pub fn fit(a: &FitArgs) -> Res<()> {
    if a.method.is_bayesian() {
        return Err(CliError::Input(format!(
            "fit takes a point-estimate method (fr, fg); use `sample --method {}`",
            a.method.name()
        )));
    }
    let (y, input_sha, dropped) = load(&a.input, &a.pre)?;
    let cfg = estimator_config(a.method, &a.tuning);
    let hash = config_hash(&json!({
        "command": "fit",
        "input_sha256": input_sha,
        "estimator": cfg,
        "mad": a.pre.mad,
        "hotelling": a.pre.hotelling,
    }));
    let prov = Provenance::new(hash, a.tuning.seed);
    let f = fit_estimator(&y, &cfg, a.tuning.seed)?;
    let edges = median_probability_select(&f.selection_sample()?, cfg.eps)?;
    let labels = node_labels(y.header(), y.ncols());

    let gamma = (a.method == Estimator::Fr).then_some(cfg.gamma);
    let est = Estimate::new(a.method.name(), gamma, cfg.lambda, f.objective, f.converged, &f.estimate);
    let mut out = Outputs::default();
    out.add("estimate.json", |w| {
        write_json(
            w,
            &prov,
            &FitOut {
                estimate: &est,
                n: y.nrows(),
                hotelling_dropped: dropped,
            },
        )
    })?;
    add_edges(&mut out, &prov, &edges, &labels)?;
    out.write(&a.out)?;
    check_converged(&f)
}

fn check_converged(f: &Fit) -> Res<()> {
    let frac = f.sample.as_ref().map_or(if f.converged { 1.0 } else { 0.0 }, |s| s.converged_fraction());
    if frac < 1.0 {
        Err(CliError::NotConverged(format!(
            "optimizer hit its iteration cap ({:.1}% of fits converged); outputs written",
            100.0 * frac
        )))
    } else {
        Ok(())
    }
}

pub fn sample(a: &SampleArgs) -> Res<()> {
    if !a.method.is_bayesian() {
        return Err(CliError::Input(format!(
            "sample takes br, br-wbbg, bg or bt; use `fit --method {}`",
            a.method.name()
        )));
    }
    if a.unit_weights && a.method != Estimator::Br {
        return Err(CliError::Input("--unit-weights applies to br only".into()));
    }
    let (y, input_sha, dropped) = load(&a.input, &a.pre)?;
    let cfg = EstimatorConfig {
        samples: a.samples,
        burnin: a.burnin,
        nu: a.nu,
        ..estimator_config(a.method, &a.tuning)
    };
    let hash = config_hash(&json!({
        "command": "sample",
        "input_sha256": input_sha,
        "estimator": cfg,
        "unit_weights": a.unit_weights,
        "mad": a.pre.mad,
        "hotelling": a.pre.hotelling,
    }));
    let prov = Provenance::new(hash, a.tuning.seed);
    let f = if a.unit_weights {
        cfg.validate()?;
        let gc = GammaConfig {
            eps_prime: cfg.eps_prime,
            ..GammaConfig::new(cfg.gamma, cfg.lambda)
        };
        let s = wbb_sample_with(&y, &gc, cfg.samples, a.tuning.seed, WeightScheme::Unit)?;
        Fit {
            estimate: PrecisionMatrix::new(s.mean())?,
            converged: s.converged_fraction() == 1.0,
            sample: Some(s),
            objective: None,
        }
    } else {
        fit_estimator(&y, &cfg, a.tuning.seed)?
    };
    let s: &PosteriorSample = f.sample.as_ref().expect("Bayesian fits carry a sample");
    let edges = median_probability_select(s, cfg.eps)?;
    let labels = node_labels(y.header(), y.ncols());
    let summary = summarize(s, cfg.eps);

    let mut out = Outputs::default();
    out.add("samples.csv", |w| write_samples_csv(w, &prov, s))?;
    out.add("summary.json", |w| {
        write_json(
            w,
            &prov,
            &SampleOut {
                method: a.method.name(),
                n: y.nrows(),
                hotelling_dropped: dropped,
                summary: &summary,
            },
        )
    })?;
    add_edges(&mut out, &prov, &edges, &labels)?;
    out.write(&a.out)?;
    check_converged(&f)
}

/// Scenario file for `simulate` and `gen`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScenarioFile {
    #[serde(flatten)]
    kind: ScenarioKind,
    graph: GraphSpec,
    n: usize,
    #[serde(default = "default_contamination")]
    contamination: f64,
    #[serde(default)]
    seed: u64,
}

fn default_contamination() -> f64 {
    0.1
}

/// Stream of the scenario seed that draws a random truth graph; data
/// replicates use the low streams.
const TRUTH_STREAM: u64 = 1 << 40;

fn load_scenario(path: &Path) -> Res<(ScenarioFile, ScenarioSpec, String)> {
    let bytes = fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let file: ScenarioFile =
        serde_json::from_slice(&bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let omega = file.graph.build(&mut stream_rng(file.seed, TRUTH_STREAM))?;
    let spec = ScenarioSpec {
        contamination: file.contamination,
        ..ScenarioSpec::new(file.kind, omega, file.n, file.seed)
    };
    spec.validate()?;
    Ok((file, spec, sha_hex(&bytes)))
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_owned(), fmt_f64)
}

fn metric_cells(m: &MetricsReport) -> [String; 6] {
    [fmt_f64(m.rmse), opt(m.al), opt(m.cp), opt(m.tpr), opt(m.fpr), opt(m.fdr)]
}

pub fn simulate(a: &SimulateArgs) -> Res<()> {
    let (file, spec, _) = load_scenario(&a.scenario)?;
    if a.reps == 0 {
        return Err(CliError::Input("--reps must be >= 1".into()));
    }
    let base = EstimatorConfig {
        samples: a.samples,
        burnin: a.burnin,
        nu: a.nu,
        ..estimator_config(a.method, &a.tuning)
    };
    let lambdas = match a.lambda_grid {
        Some(k) if k > 0 => lambda_grid(a.method, k),
        Some(_) => return Err(CliError::Input("--lambda-grid must be >= 1".into())),
        None => vec![base.lambda],
    };
    let hash = config_hash(&json!({
        "command": "simulate",
        "scenario": file,
        "estimator": base,
        "lambdas": lambdas,
        "reps": a.reps,
    }));
    let prov = Provenance::new(hash, spec.seed);

    let header = "method,lambda,rep,data_seed,fit_seed,n_contaminated,converged,rmse,al,cp,tpr,fpr,fdr";
    let mut rep_lines = vec![header.to_owned()];
    let mut agg_lines = vec!["method,lambda,reps,rmse,al,cp,tpr,fpr,fdr".to_owned()];
    let mut all_converged = true;
    for &lambda in &lambdas {
        let cfg = EstimatorConfig { lambda, ..base };
        let reps = run_sim(&spec, &cfg, a.reps)?;
        for r in &reps {
            all_converged &= r.converged;
            let mut row = vec![
                a.method.name().to_owned(),
                fmt_f64(lambda),
                r.rep.to_string(),
                r.data_seed.to_string(),
                r.fit_seed.to_string(),
                r.n_contaminated.to_string(),
                r.converged.to_string(),
            ];
            row.extend(metric_cells(&r.metrics));
            rep_lines.push(row.join(","));
        }
        let mut row = vec![a.method.name().to_owned(), fmt_f64(lambda), reps.len().to_string()];
        row.extend(metric_cells(&aggregate(&reps)));
        agg_lines.push(row.join(","));
    }

    let prov_ref = &prov;
    let csv = |lines: Vec<String>| {
        move |w: &mut Vec<u8>| -> robust_ggm::Result<()> {
            prov_ref.write_comment(w, "#")?;
            for l in &lines {
                w.extend_from_slice(l.as_bytes());
                w.push(b'\n');
            }
            Ok(())
        }
    };
    let mut out = Outputs::default();
    out.add("replicates.csv", csv(rep_lines))?;
    out.add("metrics.csv", csv(agg_lines))?;
    out.add("run.json", |w| {
        write_json(
            w,
            &prov,
            &SimulateOut {
                scenario: &file,
                truth: matrix_rows(spec.omega.values()),
                estimator: &base,
                lambdas: lambdas.iter().map(|&l| Num(l)).collect(),
                reps: a.reps,
            },
        )
    })?;
    out.write(&a.out)?;
    if all_converged {
        Ok(())
    } else {
        Err(CliError::NotConverged("some replicate fits hit the iteration cap; outputs written".into()))
    }
}

pub fn gen(a: &GenArgs) -> Res<()> {
    let (file, spec, _) = load_scenario(&a.scenario)?;
    let sc = generate(&spec)?;
    let prov = Provenance::new(config_hash(&json!({ "command": "gen", "scenario": file })), spec.seed);
    let p = spec.omega.dim();
    let labels = node_labels(None, p);
    let mut out = Outputs::default();
    out.add("data.csv", |w| {
        prov.write_comment(w, "#")?;
        w.extend_from_slice(labels.join(",").as_bytes());
        w.push(b'\n');
        for row in sc.data.values().row_iter() {
            let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
            w.extend_from_slice(cells.join(",").as_bytes());
            w.push(b'\n');
        }
        Ok(())
    })?;
    out.add("truth.json", |w| {
        write_json(
            w,
            &prov,
            &GenOut {
                scenario: &file,
                omega: matrix_rows(spec.omega.values()),
                contaminated: &sc.contaminated,
            },
        )
    })?;
    out.write(&a.out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VerifyCase {
    #[serde(flatten)]
    kind: PosteriorKind,
    /// Expected verdict; `gamma` is expected robust, the rest not.
    expect_robust: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerifySpec {
    n: usize,
    p: usize,
    seed: u64,
    lambda: f64,
    zs: Vec<f64>,
    cases: Vec<VerifyCase>,
}

impl Default for VerifySpec {
    fn default() -> Self {
        let case = |kind| VerifyCase {
            kind,
            expect_robust: None,
        };
        Self {
            n: 20,
            p: 1,
            seed: 1,
            lambda: 1.0,
            zs: vec![5.0, 10.0, 20.0, 50.0],
            cases: vec![
                case(PosteriorKind::Gamma { gamma: 0.1 }),
                case(PosteriorKind::Kl),
                case(PosteriorKind::T { nu: 3.0, textbook: false }),
                case(PosteriorKind::Dp { alpha: 0.5, textbook: false }),
            ],
        }
    }
}

pub fn verify(a: &VerifyArgs) -> Res<()> {
    let spec = match &a.spec {
        None => VerifySpec::default(),
        Some(path) => {
            let bytes = fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            serde_json::from_slice(&bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        }
    };
    if spec.zs.is_empty() || spec.zs.windows(2).any(|w| !(w[0] < w[1])) || !(spec.zs[0] > 0.0) {
        return Err(CliError::Input("zs must be positive and strictly increasing".into()));
    }
    if !(spec.lambda > 0.0) {
        return Err(CliError::Input("lambda must be positive".into()));
    }
    let exp = OutlierExperiment::standard(spec.n, spec.p, spec.seed);
    exp.validate()?;
    let prov = Provenance::new(
        config_hash(&json!({ "command": "verify", "spec": spec })),
        spec.seed,
    );
    // Test points for the pointwise limits.
    let omegas: Vec<nalgebra::DMatrix<f64>> = [0.5, 1.0, 2.0]
        .iter()
        .map(|&s| nalgebra::DMatrix::identity(spec.p, spec.p) * s)
        .collect();

    let prov_ref = &prov;
    let mut out = Outputs::default();
    let mut verdicts = Vec::new();
    let mut all_pass = true;
    for case in &spec.cases {
        let v = assess(&case.kind, &exp, spec.lambda, &spec.zs)?;
        let expected = case.expect_robust.unwrap_or(matches!(case.kind, PosteriorKind::Gamma { .. }));
        let mut props = vec![Property {
            property: "verdict",
            expected_robust: Some(expected),
            max_abs_dev: None,
            pass: v.robust == expected,
        }];
        match case.kind {
            PosteriorKind::Gamma { .. } => {
                let worst = omegas
                    .iter()
                    .map(|om| log_kernel_ratio(&case.kind, om, &exp, 1e6, spec.lambda).exp_m1().abs())
                    .fold(0.0, f64::max);
                props.push(Property::deviation("ratio_limit_z1e6", worst, 1e-8));
            }
            PosteriorKind::Dp { alpha, textbook } => {
                let rows = dp_limit_ratio(&exp, alpha, textbook, &omegas, 1e3)?;
                let worst = rows.iter().map(|r| (r.observed - r.predicted).abs()).fold(0.0, f64::max);
                props.push(Property::deviation("limit_ratio_z1e3", worst, 1e-3));
            }
            _ => {}
        }
        let pass = props.iter().all(|p| p.pass);
        all_pass &= pass;
        let name = case_file_name(&case.kind);
        let curve = v.curve.clone();
        out.add(&format!("curve_{name}.csv"), move |w| {
            prov_ref.write_comment(w, "#")?;
            w.extend_from_slice(b"z,l1\n");
            for c in &curve {
                w.extend_from_slice(format!("{},{}\n", fmt_f64(c.z), fmt_f64(c.l1)).as_bytes());
            }
            Ok(())
        })?;
        verdicts.push(KindVerdict {
            kind: case.kind,
            robust: v.robust,
            curve: v.curve.iter().map(|c| [Num(c.z), Num(c.l1)]).collect(),
            properties: props,
            pass,
        });
        eprintln!(
            "{:<6} {:<11} L1(z={}) = {:.4}  {}",
            name,
            if v.robust { "robust" } else { "not-robust" },
            spec.zs.last().unwrap(),
            v.curve.last().map_or(f64::NAN, |c| c.l1),
            if pass { "pass" } else { "FAIL" }
        );
    }
    out.add("verdict.json", |w| {
        write_json(
            w,
            &prov,
            &VerifyOut {
                spec: &spec,
                verdicts: &verdicts,
                all_pass,
            },
        )
    })?;
    out.write(&a.out)
}

fn case_file_name(k: &PosteriorKind) -> String {
    let tb = |t: bool| if t { "_textbook" } else { "" };
    match *k {
        PosteriorKind::Gamma { gamma } => format!("gamma_{gamma}"),
        PosteriorKind::Kl => "kl".into(),
        PosteriorKind::T { nu, textbook } => format!("t_{nu}{}", tb(textbook)),
        PosteriorKind::Dp { alpha, textbook } => format!("dp_{alpha}{}", tb(textbook)),
    }
}

// Output payloads. These stay typed rather than going through
// `serde_json::Value`, which would reformat the fixed-width numbers.

#[derive(Serialize)]
struct FitOut<'a> {
    estimate: &'a Estimate,
    n: usize,
    hotelling_dropped: usize,
}

#[derive(Serialize)]
struct SampleOut<'a> {
    method: &'static str,
    n: usize,
    hotelling_dropped: usize,
    summary: &'a robust_ggm::export::SampleSummary,
}

#[derive(Serialize)]
struct SimulateOut<'a> {
    scenario: &'a ScenarioFile,
    truth: Vec<Vec<Num>>,
    estimator: &'a EstimatorConfig,
    lambdas: Vec<Num>,
    reps: usize,
}

#[derive(Serialize)]
struct GenOut<'a> {
    scenario: &'a ScenarioFile,
    omega: Vec<Vec<Num>>,
    contaminated: &'a [bool],
}

#[derive(Serialize)]
struct Property {
    property: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    expected_robust: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_abs_dev: Option<Num>,
    pass: bool,
}

impl Property {
    fn deviation(property: &'static str, dev: f64, tol: f64) -> Self {
        Self {
            property,
            expected_robust: None,
            max_abs_dev: Some(Num(dev)),
            pass: dev < tol,
        }
    }
}

#[derive(Serialize)]
struct KindVerdict {
    kind: PosteriorKind,
    robust: bool,
    /// `[z, L1]` pairs.
    curve: Vec<[Num; 2]>,
    properties: Vec<Property>,
    pass: bool,
}

#[derive(Serialize)]
struct VerifyOut<'a> {
    spec: &'a VerifySpec,
    verdicts: &'a [KindVerdict],
    all_pass: bool,
}
