//! Command-line arguments and the JSON run configuration that mirrors them.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "spdgeom",
    version,
    about = "Sampling, scatter estimation, matrix means and inequality checks on SPD matrices"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Seed for every random draw [default: 1]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file (sample, fit, gmean) or directory (bench)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads [default: number of cores]
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Stopping tolerance for fit, bench and gmean
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// JSON file with values for any flag; flags given on the command line win
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DgfArgs {
    /// gaussian, kotz, student_t, power_exponential, w_dist, elliptical_gamma,
    /// pearson_ii or logistic [default: gaussian]
    #[arg(long)]
    pub dgf: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Scale parameter; for kotz it defaults to 2
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub nu: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a dataset from an elliptical distribution
    Sample {
        #[command(flatten)]
        dgf: DgfArgs,
        /// Dimension; a random scatter is drawn from the seed unless --scatter is given
        #[arg(long)]
        dim: Option<usize>,
        /// Number of samples
        #[arg(long)]
        n: Option<usize>,
        /// Scatter matrix file (CSV or .json)
        #[arg(long)]
        scatter: Option<PathBuf>,
    },
    /// Fit the scatter matrix by maximum likelihood
    Fit {
        /// Dataset file (CSV or .json)
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        dgf: DgfArgs,
        /// auto, fp, fp2, cccp, sd, cg or lbfgs [default: auto]
        #[arg(long)]
        method: Option<String>,
    },
    /// Run every method on a grid of Kotz problems
    Bench {
        /// Dimensions, comma separated
        #[arg(long, value_delimiter = ',')]
        dims: Vec<usize>,
        /// Kotz beta values, comma separated
        #[arg(long, value_delimiter = ',')]
        betas: Vec<f64>,
        /// Fixed Kotz alpha
        #[arg(long)]
        alpha: Option<f64>,
        /// Use alpha = ratio * beta in every cell
        #[arg(long)]
        alpha_ratio: Option<f64>,
        /// Kotz b [default: 2]
        #[arg(long)]
        b: Option<f64>,
        /// Methods, comma separated [default: fp,fp2,sd,cg,lbfgs]
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
        /// Samples per cell [default: 10000]
        #[arg(long)]
        n: Option<usize>,
    },
    /// Weighted geometric mean, median or S-divergence mean of matrices
    Gmean {
        /// Matrix files (CSV or .json)
        inputs: Vec<PathBuf>,
        /// Weights, comma separated; normalized to sum to one [default: uniform]
        #[arg(long, value_delimiter = ',')]
        weights: Vec<f64>,
        /// mean, median or s_divergence [default: mean]
        #[arg(long)]
        objective: Option<String>,
        /// sd, cg or lbfgs [default: lbfgs]
        #[arg(long)]
        method: Option<String>,
    },
    /// Run randomized inequality checks; exits 0 iff there are no violations
    Check {
        /// all, thompson, gconvex, log_gconvex, majorization, kronecker or contraction [default: all]
        #[arg(long)]
        suite: Option<String>,
        /// Trials per check [default: 1000]
        #[arg(long)]
        trials: Option<usize>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Sample { .. } => "sample",
            Command::Fit { .. } => "fit",
            Command::Bench { .. } => "bench",
            Command::Gmean { .. } => "gmean",
            Command::Check { .. } => "check",
        }
    }
}

/// Every flag of every command, all optional. A config file holds the same
/// fields in JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub tol: Option<f64>,
    pub dgf: Option<String>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub b: Option<f64>,
    pub nu: Option<f64>,
    pub dim: Option<usize>,
    pub n: Option<usize>,
    pub scatter: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub method: Option<String>,
    pub dims: Option<Vec<usize>>,
    pub betas: Option<Vec<f64>>,
    pub alpha_ratio: Option<f64>,
    pub methods: Option<Vec<String>>,
    pub inputs: Option<Vec<PathBuf>>,
    pub weights: Option<Vec<f64>>,
    pub objective: Option<String>,
    pub suite: Option<String>,
    pub trials: Option<usize>,
}

fn non_empty<T: Clone>(v: &[T]) -> Option<Vec<T>> {
    (!v.is_empty()).then(|| v.to_vec())
}

macro_rules! overlay_fields {
    ($top:ident, $base:ident; $($f:ident),*) => {
        RunConfig { $($f: $top.$f.or($base.$f)),* }
    };
}

impl RunConfig {
    pub fn from_cli(cli: &Cli) -> Self {
        let g = &cli.global;
        let mut cfg = RunConfig {
            command: Some(cli.command.name().to_string()),
            seed: g.seed,
            out: g.out.clone(),
            threads: g.threads,
            tol: g.tol,
            ..Default::default()
        };
        let set_dgf = |cfg: &mut RunConfig, a: &DgfArgs| {
            cfg.dgf = a.dgf.clone();
            cfg.alpha = a.alpha;
            cfg.beta = a.beta;
            cfg.b = a.b;
            cfg.nu = a.nu;
        };
        match &cli.command {
            Command::Sample { dgf, dim, n, scatter } => {
                set_dgf(&mut cfg, dgf);
                cfg.dim = *dim;
                cfg.n = *n;
                cfg.scatter = scatter.clone();
            }
            Command::Fit { data, dgf, method } => {
                set_dgf(&mut cfg, dgf);
                cfg.data = data.clone();
                cfg.method = method.clone();
            }
            Command::Bench { dims, betas, alpha, alpha_ratio, b, methods, n } => {
                cfg.dims = non_empty(dims);
                cfg.betas = non_empty(betas);
                cfg.alpha = *alpha;
                cfg.alpha_ratio = *alpha_ratio;
                cfg.b = *b;
                cfg.methods = non_empty(methods);
                cfg.n = *n;
            }
            Command::Gmean { inputs, weights, objective, method } => {
                cfg.inputs = non_empty(inputs);
                cfg.weights = non_empty(weights);
                cfg.objective = objective.clone();
                cfg.method = method.clone();
            }
            Command::Check { suite, trials } => {
                cfg.suite = suite.clone();
                cfg.trials = *trials;
            }
        }
        cfg
    }

    /// Fields set in `self` win over those in `base`.
    pub fn overlay(self, base: RunConfig) -> RunConfig {
        overlay_fields!(self, base; command, seed, out, threads, tol, dgf, alpha, beta, b, nu, dim, n,
            scatter, data, method, dims, betas, alpha_ratio, methods, inputs, weights, objective, suite, trials)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, CliError> {
        serde_json::from_str(s).map_err(|e| CliError::Usage(format!("bad config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
