use std::path::Path;

use spdgeom::ecd::FitMethod;
use spdgeom::io::{self, ModelJson};
use spdgeom::manifold::dist_thompson;
use spdgeom::oracles::Kernels;
use spdgeom::random::{random_spd, rng};
use spdgeom::spd::geometric_mean;
use spdgeom::{Result, SpdMatrix};

fn cli(args: &[&str]) -> (i32, String, String) {
    cli_with(&Kernels::default(), args)
}

fn cli_with(kernels: &Kernels, args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("spdgeom").chain(args.iter().copied());
    let code = spdgeom_cli::run_with_kernels(argv, kernels, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn model(path: &Path) -> ModelJson {
    ModelJson::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn sample_is_byte_identical_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for out in [&a, &b] {
        let args = ["sample", "--dgf", "kotz", "--alpha", "1", "--beta", "0.5", "--b", "2", "--dim", "4", "--n", "1000", "--seed", "7", "--out", s(out)];
        assert_eq!(cli(&args).0, 0);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(
        std::fs::read(dir.path().join("a.provenance.json")).unwrap(),
        std::fs::read(dir.path().join("b.provenance.json")).unwrap()
    );
    assert!(dir.path().join("a.meta.json").exists());
    let other = dir.path().join("c.csv");
    cli(&["sample", "--dgf", "kotz", "--alpha", "1", "--beta", "0.5", "--dim", "4", "--n", "1000", "--seed", "8", "--out", s(&other)]);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&other).unwrap());
}

#[test]
fn empty_sample_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e.csv");
    assert_eq!(cli(&["sample", "--dim", "3", "--n", "0", "--out", s(&out)]).0, 0);
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "x1,x2,x3\n");
}

#[test]
fn gaussian_sample_covariance_is_near_scatter() {
    let dir = tempfile::tempdir().unwrap();
    let scatter = random_spd(&mut rng(4), 3);
    let sfile = dir.path().join("s.json");
    io::write_matrix(&sfile, scatter.as_matrix()).unwrap();
    let out = dir.path().join("g.csv");
    assert_eq!(cli(&["sample", "--scatter", s(&sfile), "--n", "20000", "--out", s(&out)]).0, 0);
    let c = io::read_dataset(&out).unwrap().second_moment().unwrap();
    let err = (c.as_matrix() - scatter.as_matrix()).norm() / scatter.as_matrix().norm();
    assert!(err < 3.0 * 3.0 / (20000f64).sqrt(), "relative error {err}");
}

#[test]
fn bad_sample_parameters_are_usage_errors() {
    assert_eq!(cli(&["sample", "--dgf", "kotz", "--alpha", "-1", "--beta", "1", "--dim", "2", "--n", "5"]).0, 2);
    assert_eq!(cli(&["sample", "--dgf", "kotz", "--beta", "1", "--dim", "2", "--n", "5"]).0, 2);
    assert_eq!(cli(&["sample", "--dgf", "nope", "--dim", "2", "--n", "5"]).0, 2);
    assert_eq!(cli(&["sample", "--n", "5"]).0, 2);
    assert_eq!(cli(&["sample", "--dgf", "logistic", "--dim", "2", "--n", "5"]).0, 2);
    assert_eq!(cli(&["frobnicate"]).0, 2);
    assert_eq!(cli(&["--help"]).0, 0);
}

fn sample_file(dir: &Path, name: &str, extra: &[&str]) -> std::path::PathBuf {
    let out = dir.join(name);
    let mut args = vec!["sample", "--out", s(&out)];
    args.extend_from_slice(extra);
    let (code, _, err) = cli(&args);
    assert_eq!(code, 0, "{err}");
    out
}

#[test]
fn gaussian_fit_returns_second_moment() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample_file(dir.path(), "d.csv", &["--dim", "5", "--n", "3000", "--seed", "2"]);
    let out = dir.path().join("m.json");
    let (code, stdout, _) = cli(&["fit", "--data", s(&data), "--method", "auto", "--out", s(&out)]);
    assert_eq!(code, 0);
    assert!(stdout.contains("converged"));
    let m = model(&out);
    assert_eq!(m.diagnostics.method, FitMethod::Fp);
    assert!(m.diagnostics.existence.ok);
    let c = io::read_dataset(&data).unwrap().second_moment().unwrap();
    assert!(dist_thompson(&m.scatter().unwrap(), &c).unwrap() <= 1e-6);
    let trace = std::fs::read_to_string(dir.path().join("m.trace.csv")).unwrap();
    assert!(trace.starts_with("iter,cost,grad_norm,delta_t_step,time_s\n"));
}

#[test]
fn fp2_and_lbfgs_fits_agree() {
    let dir = tempfile::tempdir().unwrap();
    let kotz = ["--dgf", "kotz", "--alpha", "1", "--beta", "0.5", "--b", "2"];
    let mut args = vec!["--dim", "4", "--n", "2000", "--seed", "7"];
    args.extend_from_slice(&kotz);
    let data = sample_file(dir.path(), "d.csv", &args);
    let mut scatters = Vec::new();
    for method in ["fp2", "lbfgs"] {
        let out = dir.path().join(format!("{method}.json"));
        let mut args = vec!["fit", "--data", s(&data), "--method", method, "--out", s(&out)];
        args.extend_from_slice(&kotz);
        assert_eq!(cli(&args).0, 0);
        scatters.push(model(&out).scatter().unwrap());
    }
    assert!(dist_thompson(&scatters[0], &scatters[1]).unwrap() <= 1e-4);
}

#[test]
fn fit_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample_file(dir.path(), "d.csv", &["--dim", "3", "--n", "200"]);
    let out = dir.path().join("m.json");
    let kotz = ["--dgf", "kotz", "--alpha", "1", "--beta", "0.5"];

    let mut args = vec!["fit", "--data", s(&data), "--method", "cccp", "--out", s(&out)];
    args.extend_from_slice(&kotz);
    let (code, _, err) = cli(&args);
    assert_eq!(code, 2);
    assert!(err.contains("incompatible"), "{err}");

    let flat = dir.path().join("flat.csv");
    std::fs::write(&flat, "x1,x2,x3\n1,0,0\n0,1,0\n2,3,0\n-1,1,0\n").unwrap();
    assert_eq!(cli(&["fit", "--data", s(&flat), "--out", s(&out)]).0, 3);

    assert_eq!(cli(&["fit", "--data", s(&dir.path().join("missing.csv")), "--out", s(&out)]).0, 3);

    let mut args = vec!["fit", "--data", s(&data), "--method", "lbfgs", "--tol", "1e-300", "--out", s(&out)];
    args.extend_from_slice(&kotz);
    let (code, _, err) = cli(&args);
    assert_eq!(code, 4, "{err}");
    assert!(out.exists());
}

#[test]
fn bench_writes_traces_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let args = ["bench", "--dims", "2,3", "--betas", "0.5,1", "--alpha-ratio", "1", "--n", "300", "--methods", "fp,fp2,lbfgs", "--threads", "2", "--out", s(&out)];
    let (code, stdout, err) = cli(&args);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("lbfgs"));
    let methods = [FitMethod::Fp, FitMethod::Fp2, FitMethod::Lbfgs];
    for d in [2, 3] {
        for beta in [0.5, 1.0] {
            let (data, traces) = spdgeom_cli::bench_file_names(d, beta, &methods);
            assert!(out.join(data).exists());
            for t in traces {
                assert!(out.join(&t).exists(), "{t}");
            }
        }
    }
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let lines: Vec<_> = summary.lines().collect();
    assert_eq!(lines[0], "method,dim,beta,alpha,iters,time_s,final_cost,status");
    assert_eq!(lines.len(), 1 + 4 * 3);
}

#[test]
fn bench_records_failures_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let args = ["bench", "--dims", "3", "--betas", "0.5", "--alpha", "1", "--n", "200", "--methods", "cccp,fp", "--out", s(&out)];
    let (code, _, err) = cli(&args);
    assert_eq!(code, 0);
    assert!(err.contains("1 of 2 runs"), "{err}");
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.contains("cccp,3,0.5,1,,"));
}

#[test]
fn bench_needs_a_grid() {
    assert_eq!(cli(&["bench", "--alpha", "1"]).0, 2);
    assert_eq!(cli(&["bench", "--dims", "4", "--alpha", "1"]).0, 2);
    assert_eq!(cli(&["bench", "--dims", "4", "--betas", "1"]).0, 2);
    assert_eq!(cli(&["bench", "--dims", "4", "--betas", "1", "--alpha", "1", "--methods", "auto"]).0, 2);
}

fn write_mats(dir: &Path, mats: &[SpdMatrix]) -> Vec<String> {
    mats.iter()
        .enumerate()
        .map(|(i, m)| {
            let p = dir.join(format!("m{i}.csv"));
            io::write_matrix(&p, m.as_matrix()).unwrap();
            p.to_str().unwrap().to_string()
        })
        .collect()
}

fn gmean(dir: &Path, files: &[String], extra: &[&str]) -> Result<(i32, SpdMatrix)> {
    let out = dir.join("mean.json");
    let mut args = vec!["gmean"];
    args.extend(files.iter().map(String::as_str));
    args.extend_from_slice(&["--out", s(&out)]);
    args.extend_from_slice(extra);
    let code = cli(&args).0;
    Ok((code, io::read_spd(&out)?))
}

#[test]
fn gmean_of_two_is_the_midpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(8);
    let (a, b) = (random_spd(&mut r, 4), random_spd(&mut r, 4));
    let files = write_mats(dir.path(), &[a.clone(), b.clone()]);
    let (code, m) = gmean(dir.path(), &files, &[]).unwrap();
    assert_eq!(code, 0);
    assert!(dist_thompson(&m, &geometric_mean(&a, &b).unwrap()).unwrap() <= 1e-8);
}

#[test]
fn gmean_of_one_is_itself() {
    let dir = tempfile::tempdir().unwrap();
    let a = random_spd(&mut rng(9), 3);
    let files = write_mats(dir.path(), &[a.clone()]);
    for objective in ["mean", "median"] {
        let (code, m) = gmean(dir.path(), &files, &["--objective", objective]).unwrap();
        assert_eq!(code, 0);
        assert_eq!(m, a);
    }
}

#[test]
fn gmean_of_commuting_diagonals_is_elementwise() {
    let dir = tempfile::tempdir().unwrap();
    let diags = [[1.0, 2.0, 5.0], [4.0, 0.5, 3.0], [2.0, 8.0, 0.1]];
    let w = [1.0, 2.0, 1.0];
    let mats: Vec<_> = diags.iter().map(|d| SpdMatrix::from_diagonal(d).unwrap()).collect();
    let files = write_mats(dir.path(), &mats);
    let (code, m) = gmean(dir.path(), &files, &["--weights", "1,2,1", "--method", "cg"]).unwrap();
    assert_eq!(code, 0);
    let expected: Vec<f64> = (0..3)
        .map(|i| (0..3).map(|k| diags[k][i].powf(w[k] / 4.0)).product())
        .collect();
    let exp = SpdMatrix::from_diagonal(&expected).unwrap();
    assert!(dist_thompson(&m, &exp).unwrap() <= 1e-8);
}

#[test]
fn gmean_rejects_non_pd_input() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "1,2\n2,1\n").unwrap();
    let good = write_mats(dir.path(), &[SpdMatrix::identity(2)]);
    assert_eq!(cli(&["gmean", &good[0], s(&bad)]).0, 3);
    assert_eq!(cli(&["gmean"]).0, 2);
    assert_eq!(cli(&["gmean", &good[0], "--objective", "mode", "--weights", "1"]).0, 0);
}

#[test]
fn check_thompson_lists_only_thompson_rows() {
    let (code, stdout, _) = cli(&["check", "--suite", "thompson", "--trials", "50"]);
    assert_eq!(code, 0);
    let rows: Vec<_> = stdout.lines().skip(1).collect();
    assert_eq!(rows.len(), 21);
    assert!(rows.iter().all(|r| r.starts_with("thompson")), "{stdout}");
    assert!(stdout.lines().next().unwrap().contains("worst_slack"));
}

fn skewed_geodesic(a: &SpdMatrix, b: &SpdMatrix, t: f64) -> Result<SpdMatrix> {
    spdgeom::spd::geodesic(a, b, (t * 1.1).min(1.0))
}

#[test]
fn check_fails_on_a_corrupted_kernel() {
    let bad = Kernels { geodesic: skewed_geodesic, ..Kernels::default() };
    let (code, _, err) = cli_with(&bad, &["check", "--suite", "gconvex", "--trials", "50"]);
    assert_ne!(code, 0);
    assert!(err.contains("violations"));
}

#[test]
fn config_file_supplies_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.csv");
    let cfg = dir.path().join("run.json");
    let json = format!(r#"{{"command": "sample", "dim": 2, "n": 7, "seed": 3, "out": {:?}}}"#, s(&out));
    std::fs::write(&cfg, json).unwrap();
    assert_eq!(cli(&["sample", "--config", s(&cfg)]).0, 0);
    assert_eq!(io::read_dataset(&out).unwrap().len(), 7);
    assert_eq!(cli(&["sample", "--n", "4", "--config", s(&cfg)]).0, 0);
    assert_eq!(io::read_dataset(&out).unwrap().len(), 4);
    assert_eq!(cli(&["check", "--config", s(&cfg)]).0, 2);
}
