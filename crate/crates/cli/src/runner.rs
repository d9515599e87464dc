use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;
use thiserror::Error;

use rayon::prelude::*;

use fedadmm::analysis::{check_rate_bound, compute_constants, validate_stepsize, RateParameters, RateReport};
use fedadmm::equivalence::{dr_config_for, lockstep_verify_pair, EquivalenceReport};
use fedadmm::problems::{
    generate_synthetic, make_logistic_instance, make_mlp_instance, make_quadratic_instance, read_dataset,
    write_dataset, FederatedDataset, Manifest, SigmoidMlp, SyntheticSpec,
};
use fedadmm::seeds::{derive_u64, purpose};
use fedadmm::{run, Algorithm, CompositeProblem, ModelVector, RunConfig, RunTrace, Verbosity};

use crate::config::{ConfigError, DataSource, ExperimentConfig, ProblemKind};

pub const METRICS_HEADER: &str = "round,sampled_count,train_loss,train_accuracy,grad_mapping_norm_sq,cum_wall_ms";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Library(#[from] fedadmm::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("equivalence check failed at round {round}: max deviation {deviation:e} > {threshold:e}")]
    EquivalenceFailed {
        round: usize,
        deviation: f64,
        threshold: f64,
    },
}

impl CliError {
    /// 1: equivalence failure; 3: the iteration itself broke down; 2: anything
    /// the user can fix in the invocation or config.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::EquivalenceFailed { .. } => 1,
            CliError::Library(fedadmm::Error::NonFinite { .. } | fedadmm::Error::ToleranceNotMet { .. }) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// What a finished command produced.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub output_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub summary: String,
    pub warnings: Vec<String>,
}

/// A problem together with its natural starting point.
pub struct Built {
    pub problem: CompositeProblem,
    pub default_x0: Option<ModelVector>,
}

fn load_data(source: &DataSource) -> Result<FederatedDataset> {
    Ok(match source {
        DataSource::Synthetic(spec) => generate_synthetic(spec)?,
        DataSource::Directory(dir) => read_dataset(dir)?,
    })
}

pub fn build_problem(cfg: &ExperimentConfig) -> Result<Built> {
    let (problem, default_x0) = match &cfg.problem {
        ProblemKind::Quadratic {
            clients,
            dim,
            seed,
            eig_min,
            eig_max,
        } => {
            let inst = make_quadratic_instance(*clients, *dim, *seed, (*eig_min, *eig_max))?;
            (inst.problem.with_optimal_value(inst.optimal_value), None)
        }
        ProblemKind::Logistic { data, ridge } => (make_logistic_instance(&load_data(data)?, *ridge)?, None),
        ProblemKind::Mlp {
            data,
            ridge,
            hidden,
            init_seed,
        } => {
            let data = load_data(data)?;
            let shard = data
                .shards
                .first()
                .ok_or_else(|| ConfigError::at_none("dataset has no shards"))?;
            let net = SigmoidMlp {
                input_dim: shard.input_dim,
                hidden: *hidden,
                classes: shard.classes,
            };
            let problem = make_mlp_instance(&data, *hidden, *ridge, *init_seed)?;
            (problem, Some(net.init_params(*init_seed)))
        }
    };
    // with_regularizer drops the F* hint unless g stays zero
    let problem = if cfg.regularizer.is_zero() {
        problem
    } else {
        problem.with_regularizer(cfg.regularizer.clone())?
    };
    Ok(Built { problem, default_x0 })
}

/// Library configuration for replication `r` (0 uses the configured seed).
pub fn run_config(cfg: &ExperimentConfig, built: &Built, replication: usize) -> Result<RunConfig> {
    let n = built.problem.n_clients();
    let sampling = cfg.sampling.build(n).map_err(|e| ConfigError {
        line: cfg.line_of("run", "sampling"),
        message: e.to_string(),
    })?;
    let seed = if replication == 0 {
        cfg.seed
    } else {
        derive_u64(cfg.seed, purpose::REPLICATION, replication as u64)
    };
    let mut rc = RunConfig::new(cfg.eta, cfg.rounds, sampling)
        .with_alpha(cfg.alpha)
        .with_seed(seed)
        .with_solver(cfg.solver)
        .with_eps(cfg.tolerance)
        .with_dr_init(cfg.feddr_init);
    if let Some(x0) = cfg.x0.clone().or_else(|| built.default_x0.clone()) {
        rc = rc.with_x0(x0);
    }
    rc.validate(n, built.problem.dimension())?;
    if cfg.algorithm.requires_full_participation() && !rc.sampling.is_full() {
        return Err(ConfigError {
            line: cfg.line_of("run", "sampling"),
            message: format!(
                "{} requires all clients to update at each communication round",
                cfg.algorithm
            ),
        }
        .into());
    }
    if cfg.algorithm == Algorithm::FedPd && !cfg.regularizer.is_zero() {
        return Err(ConfigError {
            line: cfg.line_of("problem", "regularizer"),
            message: format!("fedpd requires g = 0, got {}", cfg.regularizer),
        }
        .into());
    }
    Ok(rc)
}

/// Relative output directories are placed under `root` when given.
pub fn output_dir(cfg: &ExperimentConfig, root: Option<&Path>) -> PathBuf {
    match root {
        Some(r) if cfg.output_dir.is_relative() => r.join(&cfg.output_dir),
        _ => cfg.output_dir.clone(),
    }
}

/// Step-size settings that run but fall outside what the theory covers.
pub fn warnings(cfg: &ExperimentConfig, built: &Built) -> Vec<String> {
    let p = &built.problem;
    let l = p.lipschitz();
    let mut out = Vec::new();
    if matches!(cfg.algorithm, Algorithm::FedAdmm | Algorithm::FedPd) {
        if let Ok(bound) = validate_stepsize(l, cfg.analysis.gamma4) {
            if cfg.eta <= bound {
                out.push(format!(
                    "eta = {} is not above {bound:.4} (L = {l:.4}, gamma4 = {}); the O(1/K) guarantee does not apply",
                    cfg.eta, cfg.analysis.gamma4
                ));
            }
        }
    }
    let convex = p.clients().iter().all(|c| c.curvature().is_convex());
    let prox_step = cfg.algorithm.server_step(cfg.eta);
    if !convex && prox_step * l >= 1.0 {
        out.push(format!(
            "local prox step {prox_step} is not below 1/L = {:.4} for a nonconvex loss; local subproblems may be ill-posed",
            1.0 / l
        ));
    }
    out
}

/// Parses the file and builds everything a run needs without iterating.
/// Returns the resolved config and any step-size warnings.
pub fn validate(cfg: &ExperimentConfig) -> Result<(String, Vec<String>)> {
    let built = build_problem(cfg)?;
    run_config(cfg, &built, 0)?;
    Ok((cfg.resolved(), warnings(cfg, &built)))
}

pub fn metrics_csv(cfg: &ExperimentConfig, trace: &RunTrace) -> String {
    let mut out = format!(
        "# fedadmm metrics v1 algorithm={} problem={}\n{METRICS_HEADER}\n",
        trace.algorithm,
        cfg.problem.id()
    );
    for row in &trace.rows {
        let m = &row.metrics;
        let acc = m.accuracy.map(|a| format!("{a:e}")).unwrap_or_default();
        let wall = if cfg.wall_clock { m.cum_wall_ms } else { 0.0 };
        let _ = writeln!(
            out,
            "{},{},{:e},{},{:e},{:e}",
            row.round,
            row.sampled.len(),
            m.objective,
            acc,
            m.grad_mapping_sq,
            wall
        );
    }
    out
}

pub fn trace_jsonl(trace: &RunTrace) -> String {
    let labels = trace.family.labels();
    let mut out = String::new();
    for row in &trace.rows {
        let clients: Vec<_> = row
            .clients
            .iter()
            .flatten()
            .map(|c| {
                json!({
                    labels[0]: c.first.as_slice(),
                    labels[1]: c.second.as_slice(),
                    labels[2]: c.reflected.as_slice(),
                })
            })
            .collect();
        let line = json!({
            "round": row.round,
            "sampled": row.sampled,
            "xbar": row.xbar.as_slice(),
            "xtilde": row.xtilde.as_slice(),
            "clients": clients,
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}

fn write(dir: &Path, name: &str, contents: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(io(&path))?;
    files.push(path);
    Ok(())
}

fn suffix(r: usize) -> String {
    if r == 0 {
        String::new()
    } else {
        format!("_rep{r}")
    }
}

/// `run` verb: all replications, then the optional rate check.
pub fn execute_run(cfg: &ExperimentConfig, root: Option<&Path>) -> Result<Outcome> {
    let built = build_problem(cfg)?;
    let configs: Vec<RunConfig> = (0..cfg.replications)
        .map(|r| run_config(cfg, &built, r))
        .collect::<Result<_>>()?;
    if cfg.analysis.rate_check {
        rate_preconditions(cfg, &built)?;
    }

    let dir = output_dir(cfg, root);
    fs::create_dir_all(&dir).map_err(io(&dir))?;
    let mut files = Vec::new();
    write(&dir, "resolved.cfg", &cfg.resolved(), &mut files)?;

    let traces = configs
        .par_iter()
        .map(|rc| run(cfg.algorithm, &built.problem, rc, cfg.verbosity))
        .collect::<fedadmm::Result<Vec<RunTrace>>>()?;
    for (r, trace) in traces.iter().enumerate() {
        write(&dir, &format!("metrics{}.csv", suffix(r)), &metrics_csv(cfg, trace), &mut files)?;
        if cfg.verbosity == Verbosity::FullIterates {
            write(&dir, &format!("trace{}.jsonl", suffix(r)), &trace_jsonl(trace), &mut files)?;
        }
    }

    let last = traces[0].rows.last().expect("a run has at least its initial row");
    let mut summary = format!(
        "{} on {}: {} rounds, F = {:e}, grad mapping^2 = {:e}",
        cfg.algorithm,
        cfg.problem.id(),
        cfg.rounds,
        last.metrics.objective,
        last.metrics.grad_mapping_sq
    );
    if let Some(acc) = last.metrics.accuracy {
        let _ = write!(summary, ", accuracy = {acc:.4}");
    }

    if cfg.analysis.rate_check {
        let report = rate_report(cfg, &built, &configs[0], &traces)?;
        write(&dir, "rate_report.csv", &report.to_csv(), &mut files)?;
        let worst = report.rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
        let _ = write!(
            summary,
            "\nrate bound {} over {} replication(s), worst lhs/rhs = {worst:e}",
            if report.passed() { "holds" } else { "VIOLATED" },
            report.replications
        );
    }
    Ok(Outcome {
        output_dir: dir,
        files,
        summary,
        warnings: warnings(cfg, &built),
    })
}

fn rate_preconditions(cfg: &ExperimentConfig, built: &Built) -> Result<()> {
    let bad = |message: String| -> Result<()> {
        Err(ConfigError {
            line: cfg.line_of("analysis", "rate_check"),
            message,
        }
        .into())
    };
    if !matches!(cfg.algorithm, Algorithm::FedAdmm | Algorithm::FedPd) {
        return bad(format!("rate_check applies to fedadmm and fedpd, not {}", cfg.algorithm));
    }
    if built.problem.optimal_value_hint().is_none() {
        return bad("rate_check needs a quadratic problem with g = zero (F* must be known)".into());
    }
    Ok(())
}

fn rate_report(cfg: &ExperimentConfig, built: &Built, rc: &RunConfig, traces: &[RunTrace]) -> Result<RateReport> {
    let a = &cfg.analysis;
    let constants = compute_constants(&RateParameters {
        lipschitz: built.problem.lipschitz(),
        eta: cfg.eta,
        p_hat: rc.sampling.p_hat(),
        gamma1: a.gamma1,
        gamma2: a.gamma2,
        gamma3: a.gamma3,
        gamma4: a.gamma4,
    })
    .map_err(|e| ConfigError {
        line: cfg.line_of("run", "eta"),
        message: e.to_string(),
    })?;
    Ok(check_rate_bound(&built.problem, traces, &constants, &cfg.tolerance)?)
}

/// `equivalence` verb: FedADMM with penalty `eta` against FedDR with step
/// `1/eta`, in lockstep.
pub fn execute_equivalence(cfg: &ExperimentConfig, root: Option<&Path>) -> Result<(Outcome, EquivalenceReport)> {
    let built = build_problem(cfg)?;
    let admm = run_config(cfg, &built, 0)?;
    let mut dr = dr_config_for(&admm);
    dr.master_seed = cfg.dr_seed;
    let report = lockstep_verify_pair(&built.problem, &admm, &dr, cfg.negative_control).map_err(|e| match e {
        fedadmm::Error::Config(message) if cfg.dr_seed != cfg.seed && !cfg.negative_control => ConfigError {
            line: cfg.line_of("equivalence", "dr_seed"),
            message: format!("{message}; set negative_control = true to compare different seeds"),
        }
        .into(),
        other => CliError::from(other),
    })?;

    let dir = output_dir(cfg, root);
    fs::create_dir_all(&dir).map_err(io(&dir))?;
    let mut files = Vec::new();
    write(&dir, "resolved.cfg", &cfg.resolved(), &mut files)?;
    write(&dir, "equivalence.csv", &report.to_csv(), &mut files)?;
    let summary = format!(
        "{} rounds, max deviation {:e}: {}",
        cfg.rounds,
        report.max_deviation(),
        if report.passed() { "equivalent" } else { "NOT equivalent" }
    );
    Ok((
        Outcome {
            output_dir: dir,
            files,
            summary,
            warnings: Vec::new(),
        },
        report,
    ))
}

/// Converts a failed report into the matching error.
pub fn require_pass(report: &EquivalenceReport) -> Result<()> {
    match report.first_failure() {
        None => Ok(()),
        Some(row) => Err(CliError::EquivalenceFailed {
            round: row.round,
            deviation: row.max_deviation(),
            threshold: row.threshold,
        }),
    }
}

/// `gen-data` verb.
pub fn generate_dataset(spec: &SyntheticSpec, out: &Path) -> Result<Manifest> {
    spec.validate()?;
    let data = generate_synthetic(spec)?;
    Ok(write_dataset(out, &data)?)
}

impl ConfigError {
    fn at_none(message: &str) -> Self {
        ConfigError {
            line: None,
            message: message.to_string(),
        }
    }
}
