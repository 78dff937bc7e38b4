use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::Serialize;
use spdgeom::ecd::{self, Dgf, FitMethod, FitOptions};
use spdgeom::io::{self, ModelJson};
use spdgeom::optim::{self, KarcherProblem, Method, MedianProblem, Problem, SDivergenceProblem, SolverConfig, Status};
use spdgeom::oracles::{self, Kernels, Suite};
use spdgeom::random::{random_spd, trial_rng};
use spdgeom::{SpdMatrix, SymMatrix};

use crate::config::{Command, RunConfig};
use crate::{CliError, Outcome};

pub const DEFAULT_SEED: u64 = 1;
const DEFAULT_BENCH_N: usize = 10_000;
const DEFAULT_BENCH_METHODS: [FitMethod; 5] = [FitMethod::Fp, FitMethod::Fp2, FitMethod::Sd, FitMethod::Cg, FitMethod::Lbfgs];
const DEFAULT_GMEAN_TOL: f64 = 1e-9;

type CmdResult = Result<Outcome, CliError>;

pub(crate) fn dispatch(cmd: &Command, cfg: &RunConfig, kernels: &Kernels) -> CmdResult {
    match cmd {
        Command::Sample { .. } => cmd_sample(cfg),
        Command::Fit { .. } => cmd_fit(cfg),
        Command::Bench { .. } => cmd_bench(cfg),
        Command::Gmean { .. } => cmd_gmean(cfg),
        Command::Check { .. } => cmd_check(cfg, kernels),
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn data_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

/// The scatter used when none is supplied: a random SPD matrix drawn from
/// a stream of `seed` reserved for the dimension.
pub fn random_scatter(d: usize, seed: u64) -> SpdMatrix {
    random_spd(&mut trial_rng(seed, d as u64), d)
}

fn dgf_from(cfg: &RunConfig, d: usize) -> Result<Dgf, CliError> {
    let name = cfg.dgf.as_deref().unwrap_or("gaussian");
    let need = |v: Option<f64>, flag: &str| v.ok_or_else(|| usage(format!("--dgf {name} needs --{flag}")));
    let dgf = match name {
        "gaussian" => Dgf::gaussian(d),
        "kotz" => Dgf::Kotz { alpha: need(cfg.alpha, "alpha")?, b: cfg.b.unwrap_or(2.0), beta: need(cfg.beta, "beta")? },
        "student_t" | "t" => Dgf::StudentT { nu: need(cfg.nu, "nu")? },
        "power_exponential" => Dgf::PowerExponential { nu: need(cfg.nu, "nu")?, b: need(cfg.b, "b")? },
        "w_dist" => Dgf::WDist { nu: need(cfg.nu, "nu")?, b: need(cfg.b, "b")? },
        "elliptical_gamma" => Dgf::EllipticalGamma { nu: need(cfg.nu, "nu")?, b: need(cfg.b, "b")? },
        "pearson_ii" => Dgf::PearsonII { nu: need(cfg.nu, "nu")? },
        "logistic" => Dgf::Logistic,
        other => return Err(usage(format!("unknown dgf `{other}`"))),
    };
    dgf.validate()?;
    Ok(dgf)
}

/// `dir/stem.suffix` for an output file `dir/stem.ext`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| data_err(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| data_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    serde_json::to_writer_pretty(create(path)?, value).map_err(|e| data_err(path, e))
}

#[derive(Serialize)]
struct Metadata<'a> {
    version: &'static str,
    created_unix_s: u64,
    elapsed_s: f64,
    config: &'a RunConfig,
}

/// Wall-clock facts live here so that the data files stay reproducible.
fn write_metadata(path: &Path, cfg: &RunConfig, started: Instant) -> Result<(), CliError> {
    let meta = Metadata {
        version: env!("CARGO_PKG_VERSION"),
        created_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        elapsed_s: started.elapsed().as_secs_f64(),
        config: cfg,
    };
    write_json(path, &meta)
}

fn cmd_sample(cfg: &RunConfig) -> CmdResult {
    let started = Instant::now();
    let seed = cfg.seed.unwrap_or(DEFAULT_SEED);
    let n = cfg.n.ok_or_else(|| usage("sample needs --n"))?;
    let scatter = match (&cfg.scatter, cfg.dim) {
        (Some(path), dim) => {
            let s = io::read_spd(path).map_err(|e| data_err(path, e))?;
            if dim.is_some_and(|d| d != s.dim()) {
                return Err(usage(format!("--dim does not match the {}×{} scatter", s.dim(), s.dim())));
            }
            s
        }
        (None, Some(0)) => return Err(usage("--dim must be positive")),
        (None, Some(d)) => random_scatter(d, seed),
        (None, None) => return Err(usage("sample needs --dim or --scatter")),
    };
    let dgf = dgf_from(cfg, scatter.dim())?;
    let data = ecd::sample(&dgf, &scatter, n, seed)?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("samples.csv"));
    io::write_dataset(&out, &data).map_err(|e| data_err(&out, e))?;
    write_json(&sibling(&out, "provenance.json"), &data.provenance)?;
    write_metadata(&sibling(&out, "meta.json"), cfg, started)?;
    Ok(Outcome {
        stdout: format!("wrote {} samples of {dgf} in dimension {} to {}\n", n, scatter.dim(), out.display()),
        ..Default::default()
    })
}

fn fit_options(method: FitMethod, tol: Option<f64>) -> FitOptions {
    let mut opts = FitOptions::with_method(method);
    if let Some(t) = tol {
        opts.fp.step_tol = t;
        opts.solver.grad_tol = t;
    }
    opts
}

fn write_trace(path: &Path, trace: &[optim::TraceRow]) -> Result<(), CliError> {
    optim::write_trace_csv(create(path)?, trace, true).map_err(|e| data_err(path, e))
}

fn cmd_fit(cfg: &RunConfig) -> CmdResult {
    let started = Instant::now();
    let path = cfg.data.as_ref().ok_or_else(|| usage("fit needs --data"))?;
    let data = io::read_dataset(path).map_err(|e| match e {
        spdgeom::Error::Parse { .. } => usage(format!("{}: {e}", path.display())),
        e => data_err(path, e),
    })?;
    let dgf = dgf_from(cfg, data.dim())?;
    let method = FitMethod::from_str(cfg.method.as_deref().unwrap_or("auto"))?;
    let fit = ecd::mle_fit(&dgf, &data, &fit_options(method, cfg.tol))?;

    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("model.json"));
    let model = ModelJson::from_fit(&dgf, &fit);
    write_json(&out, &model)?;
    write_trace(&sibling(&out, "trace.csv"), &fit.trace)?;
    write_metadata(&sibling(&out, "meta.json"), cfg, started)?;

    let mut stdout = String::new();
    let _ = writeln!(stdout, "dgf        {dgf}");
    let _ = writeln!(stdout, "method     {}", fit.method);
    let _ = writeln!(stdout, "status     {}", fit.status);
    let _ = writeln!(stdout, "iterations {}", fit.iterations());
    let _ = writeln!(stdout, "final_nll  {}", fit.final_nll);
    let _ = writeln!(stdout, "grad_norm  {:e}", fit.final_grad_norm());
    let _ = writeln!(stdout, "model      {}", out.display());
    let mut stderr = String::new();
    for w in &fit.existence.warnings {
        let _ = writeln!(
            stderr,
            "warning: {} samples lie in a {:?} of dimension {} (bound {}); the estimate may not exist",
            w.count, format!("{:?}", w.kind).to_lowercase(), w.subspace_dim, w.bound
        );
    }
    let code = if fit.status == Status::Converged {
        0
    } else {
        let _ = writeln!(stderr, "error: solver stopped with status {}", fit.status);
        4
    };
    Ok(Outcome { stdout, stderr, code })
}

/// File names of one bench cell: the dataset and the trace of each method.
pub fn bench_file_names(dim: usize, beta: f64, methods: &[FitMethod]) -> (String, Vec<String>) {
    let cell = format!("d{dim}_beta{beta}");
    (format!("data_{cell}.csv"), methods.iter().map(|m| format!("trace_{cell}_{m}.csv")).collect())
}

struct BenchRow {
    method: FitMethod,
    dim: usize,
    beta: f64,
    alpha: f64,
    iters: Option<usize>,
    time_s: f64,
    final_cost: f64,
    status: String,
}

/// Settings shared by every bench cell.
struct BenchSetup<'a> {
    b: f64,
    n: usize,
    seed: u64,
    methods: &'a [FitMethod],
    tol: Option<f64>,
    dir: &'a Path,
}

fn run_cell(setup: &BenchSetup<'_>, dim: usize, beta: f64, alpha: f64) -> Vec<BenchRow> {
    let BenchSetup { b, n, seed, methods, tol, dir } = *setup;
    let failed = |status: String| -> Vec<BenchRow> {
        methods
            .iter()
            .map(|&method| BenchRow { method, dim, beta, alpha, iters: None, time_s: f64::NAN, final_cost: f64::NAN, status: status.clone() })
            .collect()
    };
    let (data_name, trace_names) = bench_file_names(dim, beta, methods);
    let dgf = Dgf::Kotz { alpha, b, beta };
    let data = match dgf.validate().and_then(|_| ecd::sample(&dgf, &random_scatter(dim, seed), n, seed)) {
        Ok(d) => d,
        Err(e) => return failed(format!("error: {e}")),
    };
    if let Err(e) = io::write_dataset(&dir.join(data_name), &data) {
        return failed(format!("error: {e}"));
    }
    methods
        .iter()
        .zip(trace_names)
        .map(|(&method, trace_name)| {
            let t = Instant::now();
            let res = ecd::mle_fit(&dgf, &data, &fit_options(method, tol));
            let time_s = t.elapsed().as_secs_f64();
            match res {
                Ok(fit) => {
                    let status = match write_trace(&dir.join(trace_name), &fit.trace) {
                        Ok(()) => fit.status.to_string(),
                        Err(e) => format!("error: {e}"),
                    };
                    BenchRow { method, dim, beta, alpha, iters: Some(fit.iterations()), time_s, final_cost: fit.final_nll, status }
                }
                Err(e) => BenchRow { method, dim, beta, alpha, iters: None, time_s, final_cost: f64::NAN, status: format!("error: {e}") },
            }
        })
        .collect()
}

fn cmd_bench(cfg: &RunConfig) -> CmdResult {
    let started = Instant::now();
    let dims = cfg.dims.clone().unwrap_or_default();
    let betas = cfg.betas.clone().unwrap_or_default();
    if dims.is_empty() || betas.is_empty() {
        return Err(usage("bench needs a non-empty grid: give --dims and --betas"));
    }
    let methods = match &cfg.methods {
        Some(names) if !names.is_empty() => names
            .iter()
            .map(|m| match FitMethod::from_str(m) {
                Ok(FitMethod::Auto) => Err(usage("bench methods must be explicit, not auto")),
                Ok(m) => Ok(m),
                Err(e) => Err(e.into()),
            })
            .collect::<Result<Vec<_>, CliError>>()?,
        _ => DEFAULT_BENCH_METHODS.to_vec(),
    };
    let alpha_of = |beta: f64| -> Result<f64, CliError> {
        match (cfg.alpha, cfg.alpha_ratio) {
            (Some(a), None) => Ok(a),
            (None, Some(r)) => Ok(r * beta),
            (Some(_), Some(_)) => Err(usage("give only one of --alpha and --alpha-ratio")),
            (None, None) => Err(usage("bench needs --alpha or --alpha-ratio")),
        }
    };
    let b = cfg.b.unwrap_or(2.0);
    let n = cfg.n.unwrap_or(DEFAULT_BENCH_N);
    let seed = cfg.seed.unwrap_or(DEFAULT_SEED);
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("bench"));
    fs::create_dir_all(&dir).map_err(|e| data_err(&dir, e))?;

    let cells = dims
        .iter()
        .flat_map(|&d| betas.iter().map(move |&beta| (d, beta)))
        .map(|(d, beta)| Ok((d, beta, alpha_of(beta)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let setup = BenchSetup { b, n, seed, methods: &methods, tol: cfg.tol, dir: &dir };
    let rows: Vec<BenchRow> = cells
        .par_iter()
        .map(|&(d, beta, alpha)| run_cell(&setup, d, beta, alpha))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();

    let summary = dir.join("summary.csv");
    let mut w = csv::Writer::from_writer(create(&summary)?);
    let csv_err = |e: csv::Error| data_err(&summary, e);
    w.write_record(["method", "dim", "beta", "alpha", "iters", "time_s", "final_cost", "status"]).map_err(csv_err)?;
    let mut stdout = String::new();
    let _ = writeln!(stdout, "{:<6} {:>4} {:>6} {:>6} {:>6} {:>10} {:>22}  status", "method", "dim", "beta", "alpha", "iters", "time_s", "final_cost");
    for r in &rows {
        let iters = r.iters.map_or_else(String::new, |k| k.to_string());
        w.write_record([
            r.method.to_string(),
            r.dim.to_string(),
            r.beta.to_string(),
            r.alpha.to_string(),
            iters.clone(),
            r.time_s.to_string(),
            r.final_cost.to_string(),
            r.status.clone(),
        ])
        .map_err(csv_err)?;
        let _ = writeln!(
            stdout,
            "{:<6} {:>4} {:>6} {:>6} {:>6} {:>10.4} {:>22}  {}",
            r.method.to_string(), r.dim, r.beta, r.alpha, iters, r.time_s, r.final_cost, r.status
        );
    }
    w.flush().map_err(|e| data_err(&summary, e))?;
    drop(w);
    write_metadata(&dir.join("meta.json"), cfg, started)?;

    let ok = rows.iter().any(|r| r.status == Status::Converged.to_string());
    let mut stderr = String::new();
    let failures = rows.iter().filter(|r| r.status != Status::Converged.to_string()).count();
    if failures > 0 {
        let _ = writeln!(stderr, "warning: {failures} of {} runs did not converge; see {}", rows.len(), summary.display());
    }
    Ok(Outcome { stdout, stderr, code: if ok { 0 } else { 4 } })
}

fn log_euclidean_mean(mats: &[SpdMatrix], weights: &[f64]) -> Result<SpdMatrix, CliError> {
    let d = mats[0].dim();
    let mut acc = nalgebra::DMatrix::zeros(d, d);
    for (m, w) in mats.iter().zip(weights) {
        acc += m.log().as_matrix() * *w;
    }
    Ok(SymMatrix::symmetrize(acc).exp()?)
}

fn cmd_gmean(cfg: &RunConfig) -> CmdResult {
    let inputs = cfg.inputs.clone().unwrap_or_default();
    if inputs.is_empty() {
        return Err(usage("gmean needs at least one matrix file"));
    }
    let mats = inputs
        .iter()
        .map(|p| io::read_spd(p).map_err(|e| data_err(p, e)))
        .collect::<Result<Vec<_>, _>>()?;
    if mats.iter().any(|m| m.dim() != mats[0].dim()) {
        return Err(CliError::Data("input matrices differ in dimension".into()));
    }
    let weights = match &cfg.weights {
        Some(w) if !w.is_empty() => {
            if w.len() != mats.len() {
                return Err(usage(format!("{} weights for {} matrices", w.len(), mats.len())));
            }
            let total: f64 = w.iter().sum();
            if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || !(total > 0.0) {
                return Err(usage("weights must be non-negative with a positive sum"));
            }
            w.iter().map(|v| v / total).collect()
        }
        _ => optim::uniform_weights(mats.len()),
    };
    let objective = cfg.objective.as_deref().unwrap_or("mean");
    let method = Method::from_str(cfg.method.as_deref().unwrap_or("lbfgs"))?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("mean.csv"));

    let (result, status, iters, cost) = if mats.len() == 1 {
        (mats[0].clone(), Status::Converged, 0, 0.0)
    } else {
        let problem: Box<dyn Problem> = match objective {
            "mean" => Box::new(KarcherProblem::new(mats.clone(), weights.clone())?),
            "median" => Box::new(MedianProblem::new(mats.clone(), weights.clone())?),
            "s_divergence" => Box::new(SDivergenceProblem::new(mats.clone(), weights.clone())?),
            other => return Err(usage(format!("unknown objective `{other}`"))),
        };
        let solver = SolverConfig {
            grad_tol: cfg.tol.unwrap_or(DEFAULT_GMEAN_TOL),
            max_iter: 5000,
            initial_point: Some(log_euclidean_mean(&mats, &weights)?),
            ..SolverConfig::new(method)
        };
        let rep = optim::solve(problem.as_ref(), &solver)?;
        let (iters, cost) = (rep.iterations(), rep.final_cost());
        (rep.minimizer, rep.status, iters, cost)
    };
    io::write_matrix(&out, result.as_matrix()).map_err(|e| data_err(&out, e))?;
    let stdout = format!(
        "objective  {objective}\nmethod     {}\nstatus     {status}\niterations {iters}\ncost       {cost}\noutput     {}\n",
        method.name(),
        out.display()
    );
    if status == Status::Converged {
        Ok(Outcome { stdout, ..Default::default() })
    } else {
        Ok(Outcome { stdout, stderr: format!("error: solver stopped with status {status}\n"), code: 4 })
    }
}

fn cmd_check(cfg: &RunConfig, kernels: &Kernels) -> CmdResult {
    let suite = Suite::from_str(cfg.suite.as_deref().unwrap_or("all"))?;
    let trials = cfg.trials.unwrap_or(oracles::DEFAULT_TRIALS);
    if trials == 0 {
        return Err(usage("--trials must be positive"));
    }
    let seed = cfg.seed.unwrap_or(oracles::DEFAULT_SEED);
    let reports = oracles::run_suite_with(kernels, suite, trials, seed)?;
    let width = reports.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
    let mut stdout = String::new();
    let _ = writeln!(stdout, "{:<width$}  {:>7}  {:>10}  {:>12}", "name", "trials", "violations", "worst_slack");
    for r in &reports {
        let _ = writeln!(stdout, "{:<width$}  {:>7}  {:>10}  {:>12.3e}", r.name, r.trials, r.violations, r.worst_slack);
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    if failed == 0 {
        Ok(Outcome { stdout, ..Default::default() })
    } else {
        let e = CliError::CheckFailed(failed);
        Ok(Outcome { stdout, stderr: format!("error: {e}\n"), code: e.code() })
    }
}

