//! Experiment files: `[section]` headers and `key = value` lines, `#`
//! comments. Every key has a default except `experiment.algorithm` and
//! `problem.kind`. See `configs/` for annotated examples.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fedadmm::algorithms::Algorithm;
use fedadmm::problems::SyntheticSpec;
use fedadmm::{DrInit, EpsSchedule, LocalSolver, ModelVector, Regularizer, SamplingScheme, Verbosity};

/// Parse or validation failure, anchored to a line of the file when one is
/// responsible.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: Option<usize>, message: impl Into<String>) -> Self {
        ConfigError {
            line,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

const SCHEMA: &[(&str, &[&str])] = &[
    ("experiment", &["algorithm", "output_dir", "replications", "verbosity", "wall_clock"]),
    (
        "problem",
        &[
            "kind", "clients", "dim", "seed", "eig_min", "eig_max", "dataset", "alpha", "beta", "data_seed",
            "input_dim", "classes", "ridge", "hidden", "init_seed", "regularizer",
        ],
    ),
    (
        "run",
        &["eta", "alpha", "rounds", "sampling", "seed", "solver", "tolerance", "x0", "feddr_init"],
    ),
    ("analysis", &["rate_check", "gamma1", "gamma2", "gamma3", "gamma4"]),
    ("equivalence", &["dr_seed", "negative_control"]),
];

/// One value with the line it came from (`None` for overrides).
#[derive(Clone, Debug)]
struct Entry {
    value: String,
    line: Option<usize>,
}

/// Raw `section.key → value` table.
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    entries: BTreeMap<(String, String), Entry>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::default();
        let mut section: Option<String> = None;
        for (idx, line) in text.lines().enumerate() {
            let lineno = Some(idx + 1);
            let content = strip_comment(line).trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::at(lineno, "unterminated section header"))?
                    .trim();
                if !SCHEMA.iter().any(|(s, _)| *s == name) {
                    return Err(ConfigError::at(lineno, format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| ConfigError::at(lineno, "expected `key = value`"))?;
            let sec = section
                .clone()
                .ok_or_else(|| ConfigError::at(lineno, "key outside of any section"))?;
            raw.insert(&sec, key.trim(), value.trim(), lineno)?;
        }
        Ok(raw)
    }

    fn insert(&mut self, section: &str, key: &str, value: &str, line: Option<usize>) -> Result<(), ConfigError> {
        let keys = SCHEMA
            .iter()
            .find(|(s, _)| *s == section)
            .map(|(_, k)| *k)
            .ok_or_else(|| ConfigError::at(line, format!("unknown section [{section}]")))?;
        if !keys.contains(&key) {
            return Err(ConfigError::at(line, format!("unknown key `{key}` in [{section}]")));
        }
        let slot = (section.to_string(), key.to_string());
        if line.is_some() {
            if let Some(prev) = self.entries.get(&slot) {
                if prev.line.is_some() {
                    return Err(ConfigError::at(line, format!("duplicate key `{key}` in [{section}]")));
                }
            }
        }
        self.entries.insert(
            slot,
            Entry {
                value: value.to_string(),
                line,
            },
        );
        Ok(())
    }

    /// Applies a `section.key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::at(None, format!("override `{assignment}` is not `section.key=value`"));
        let (path, value) = assignment.split_once('=').ok_or_else(bad)?;
        let (section, key) = path.trim().split_once('.').ok_or_else(bad)?;
        self.insert(section.trim(), key.trim(), value.trim(), None)
    }

    fn get(&self, section: &str, key: &str) -> Option<&Entry> {
        self.entries.get(&(section.to_string(), key.to_string()))
    }

    fn line(&self, section: &str, key: &str) -> Option<usize> {
        self.get(section, key).and_then(|e| e.line)
    }

    fn parsed<T>(&self, section: &str, key: &str, default: T) -> Result<T, ConfigError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        match self.get(section, key) {
            None => Ok(default),
            Some(e) => e
                .value
                .parse()
                .map_err(|err| ConfigError::at(e.line, format!("{section}.{key}: {err} (got `{}`)", e.value))),
        }
    }

    fn required(&self, section: &str, key: &str) -> Result<&Entry, ConfigError> {
        self.get(section, key)
            .ok_or_else(|| ConfigError::at(None, format!("missing required key {section}.{key}")))
    }

    fn custom<T>(
        &self,
        section: &str,
        key: &str,
        default: T,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T, ConfigError> {
        match self.get(section, key) {
            None => Ok(default),
            Some(e) => parse(&e.value).map_err(|msg| ConfigError::at(e.line, format!("{section}.{key}: {msg}"))),
        }
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

/// Where the classification shards come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Directory(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProblemKind {
    Quadratic {
        clients: usize,
        dim: usize,
        seed: u64,
        eig_min: f64,
        eig_max: f64,
    },
    Logistic {
        data: DataSource,
        ridge: f64,
    },
    Mlp {
        data: DataSource,
        ridge: f64,
        hidden: usize,
        init_seed: u64,
    },
}

impl ProblemKind {
    pub fn id(&self) -> &'static str {
        match self {
            ProblemKind::Quadratic { .. } => "quadratic",
            ProblemKind::Logistic { .. } => "logistic",
            ProblemKind::Mlp { .. } => "mlp",
        }
    }
}

/// Sampling as written in the file; the client count is known only once the
/// problem is built.
#[derive(Clone, Debug, PartialEq)]
pub enum SamplingSpec {
    Full,
    Uniform(usize),
    Bernoulli(Vec<f64>),
}

impl SamplingSpec {
    pub fn build(&self, n: usize) -> fedadmm::Result<SamplingScheme> {
        match self {
            SamplingSpec::Full => Ok(SamplingScheme::full(n)),
            SamplingSpec::Uniform(s) => SamplingScheme::uniform(n, *s),
            SamplingSpec::Bernoulli(p) if p.len() == 1 => SamplingScheme::bernoulli(vec![p[0]; n]),
            SamplingSpec::Bernoulli(p) => SamplingScheme::bernoulli(p.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisSpec {
    pub rate_check: bool,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub gamma4: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub output_dir: PathBuf,
    pub replications: usize,
    pub verbosity: Verbosity,
    pub wall_clock: bool,
    pub problem: ProblemKind,
    pub regularizer: Regularizer,
    pub eta: f64,
    pub alpha: f64,
    pub rounds: usize,
    pub sampling: SamplingSpec,
    pub seed: u64,
    pub solver: LocalSolver,
    pub tolerance: EpsSchedule,
    pub x0: Option<ModelVector>,
    pub feddr_init: DrInit,
    pub analysis: AnalysisSpec,
    pub dr_seed: u64,
    pub negative_control: bool,
    raw: RawConfig,
}

impl ExperimentConfig {
    pub fn from_text(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::parse(text)?;
        for o in overrides {
            raw.set(o)?;
        }
        Self::from_raw(raw)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::at(None, format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text, overrides)
    }

    fn from_raw(raw: RawConfig) -> Result<Self, ConfigError> {
        let alg = raw.required("experiment", "algorithm")?;
        let algorithm = Algorithm::from_id(&alg.value).ok_or_else(|| {
            let known: Vec<&str> = Algorithm::ALL.iter().map(|a| a.id()).collect();
            ConfigError::at(
                alg.line,
                format!("unknown algorithm `{}` (expected one of {})", alg.value, known.join(", ")),
            )
        })?;
        let output_dir = PathBuf::from(raw.parsed("experiment", "output_dir", "out".to_string())?);
        let replications: usize = raw.parsed("experiment", "replications", 1)?;
        if replications == 0 {
            return Err(ConfigError::at(
                raw.line("experiment", "replications"),
                "replications must be at least 1",
            ));
        }
        let verbosity = raw.custom("experiment", "verbosity", Verbosity::Summary, |v| match v {
            "summary" => Ok(Verbosity::Summary),
            "full" => Ok(Verbosity::FullIterates),
            _ => Err(format!("expected `summary` or `full`, got `{v}`")),
        })?;
        let wall_clock = raw.parsed("experiment", "wall_clock", false)?;

        let problem = parse_problem(&raw)?;
        let iterative = !matches!(problem, ProblemKind::Quadratic { .. });
        let regularizer = raw.custom("problem", "regularizer", Regularizer::Zero, parse_regularizer)?;
        if let Err(e) = regularizer.validate() {
            return Err(ConfigError::at(raw.line("problem", "regularizer"), e.to_string()));
        }

        let eta = raw.parsed("run", "eta", 1.0)?;
        let alpha = raw.parsed("run", "alpha", 1.0)?;
        let rounds = raw.parsed("run", "rounds", 100)?;
        let sampling = raw.custom("run", "sampling", SamplingSpec::Uniform(10), parse_sampling)?;
        let seed = raw.parsed("run", "seed", 0)?;
        let default_solver = if iterative {
            LocalSolver::sgd_default()
        } else {
            LocalSolver::ExactProx
        };
        let solver = raw.custom("run", "solver", default_solver, parse_solver)?;
        let default_tol = if solver.is_exact() {
            EpsSchedule::Harmonic { eps0: 0.0 }
        } else {
            EpsSchedule::Unchecked
        };
        let tolerance = raw.custom("run", "tolerance", default_tol, parse_tolerance)?;
        let x0 = raw.custom("run", "x0", None, |v| {
            if v == "zeros" {
                return Ok(None);
            }
            parse_list(v).map(|xs| Some(ModelVector::from(xs)))
        })?;
        let feddr_init = raw.custom("run", "feddr_init", DrInit::Prox, |v| match v {
            "prox" => Ok(DrInit::Prox),
            "consensus" => Ok(DrInit::Consensus),
            _ => Err(format!("expected `prox` or `consensus`, got `{v}`")),
        })?;

        let analysis = AnalysisSpec {
            rate_check: raw.parsed("analysis", "rate_check", false)?,
            gamma1: raw.parsed("analysis", "gamma1", 1.0)?,
            gamma2: raw.parsed("analysis", "gamma2", 1.0)?,
            gamma3: raw.parsed("analysis", "gamma3", 1.0)?,
            gamma4: raw.parsed("analysis", "gamma4", 0.1)?,
        };
        let dr_seed = raw.parsed("equivalence", "dr_seed", seed)?;
        let negative_control = raw.parsed("equivalence", "negative_control", false)?;

        Ok(ExperimentConfig {
            algorithm,
            output_dir,
            replications,
            verbosity,
            wall_clock,
            problem,
            regularizer,
            eta,
            alpha,
            rounds,
            sampling,
            seed,
            solver,
            tolerance,
            x0,
            feddr_init,
            analysis,
            dr_seed,
            negative_control,
            raw,
        })
    }

    /// Line of `section.key` in the source file, if it was written there.
    pub fn line_of(&self, section: &str, key: &str) -> Option<usize> {
        self.raw.line(section, key)
    }

    /// Canonical text with every default filled in; parsing it back yields
    /// the same configuration.
    pub fn resolved(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        kv("[experiment]\nalgorithm", self.algorithm.id().to_string());
        kv("output_dir", self.output_dir.display().to_string());
        kv("replications", self.replications.to_string());
        kv(
            "verbosity",
            match self.verbosity {
                Verbosity::Summary => "summary",
                Verbosity::FullIterates => "full",
            }
            .to_string(),
        );
        kv("wall_clock", self.wall_clock.to_string());

        kv("\n[problem]\nkind", self.problem.id().to_string());
        match &self.problem {
            ProblemKind::Quadratic {
                clients,
                dim,
                seed,
                eig_min,
                eig_max,
            } => {
                kv("clients", clients.to_string());
                kv("dim", dim.to_string());
                kv("seed", seed.to_string());
                kv("eig_min", eig_min.to_string());
                kv("eig_max", eig_max.to_string());
            }
            ProblemKind::Logistic { data, ridge } => {
                write_data(&mut kv, data);
                kv("ridge", ridge.to_string());
            }
            ProblemKind::Mlp {
                data,
                ridge,
                hidden,
                init_seed,
            } => {
                write_data(&mut kv, data);
                kv("ridge", ridge.to_string());
                kv("hidden", hidden.to_string());
                kv("init_seed", init_seed.to_string());
            }
        }
        kv("regularizer", self.regularizer.to_string());

        kv("\n[run]\neta", self.eta.to_string());
        kv("alpha", self.alpha.to_string());
        kv("rounds", self.rounds.to_string());
        kv("sampling", sampling_text(&self.sampling));
        kv("seed", self.seed.to_string());
        kv("solver", solver_text(&self.solver));
        kv(
            "tolerance",
            match self.tolerance {
                EpsSchedule::Harmonic { eps0 } => format!("harmonic:{eps0}"),
                EpsSchedule::Unchecked => "none".into(),
            },
        );
        kv("x0", self.x0.as_ref().map_or("zeros".into(), |x| join(x.as_slice())));
        kv(
            "feddr_init",
            match self.feddr_init {
                DrInit::Prox => "prox",
                DrInit::Consensus => "consensus",
            }
            .to_string(),
        );

        kv("\n[analysis]\nrate_check", self.analysis.rate_check.to_string());
        kv("gamma1", self.analysis.gamma1.to_string());
        kv("gamma2", self.analysis.gamma2.to_string());
        kv("gamma3", self.analysis.gamma3.to_string());
        kv("gamma4", self.analysis.gamma4.to_string());

        kv("\n[equivalence]\ndr_seed", self.dr_seed.to_string());
        kv("negative_control", self.negative_control.to_string());
        out
    }
}

fn write_data(kv: &mut impl FnMut(&str, String), data: &DataSource) {
    match data {
        DataSource::Synthetic(spec) => {
            kv("dataset", "synthetic".into());
            kv("alpha", spec.alpha.to_string());
            kv("beta", spec.beta.to_string());
            kv("data_seed", spec.seed.to_string());
            kv("clients", spec.n_clients.to_string());
            kv("input_dim", spec.input_dim.to_string());
            kv("classes", spec.classes.to_string());
        }
        DataSource::Directory(dir) => kv("dataset", format!("dir:{}", dir.display())),
    }
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn sampling_text(s: &SamplingSpec) -> String {
    match s {
        SamplingSpec::Full => "full".into(),
        SamplingSpec::Uniform(s) => format!("uniform:{s}"),
        SamplingSpec::Bernoulli(p) => format!("bernoulli:{}", join(p)),
    }
}

fn solver_text(s: &LocalSolver) -> String {
    match *s {
        LocalSolver::ExactProx => "exact".into(),
        LocalSolver::GradientDescent { iters, lr } => format!("gd:{iters},{lr}"),
        LocalSolver::StochasticGd { iters, lr, batch } => format!("sgd:{iters},{lr},{batch}"),
    }
}

fn parse_list(v: &str) -> Result<Vec<f64>, String> {
    v.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect()
}

fn parse_num<T: FromStr>(t: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    t.trim().parse().map_err(|e| format!("`{t}`: {e}"))
}

fn parse_sampling(v: &str) -> Result<SamplingSpec, String> {
    if v == "full" {
        return Ok(SamplingSpec::Full);
    }
    match v.split_once(':') {
        Some(("uniform", s)) => Ok(SamplingSpec::Uniform(parse_num(s)?)),
        Some(("bernoulli", p)) => Ok(SamplingSpec::Bernoulli(parse_list(p)?)),
        _ => Err(format!(
            "expected `full`, `uniform:<S>` or `bernoulli:<p>[,<p>...]`, got `{v}`"
        )),
    }
}

fn parse_solver(v: &str) -> Result<LocalSolver, String> {
    if v == "exact" {
        return Ok(LocalSolver::ExactProx);
    }
    let (kind, args) = v.split_once(':').unwrap_or((v, ""));
    let parts: Vec<&str> = args.split(',').collect();
    let solver = match (kind, parts.as_slice()) {
        ("gd", [iters, lr]) => LocalSolver::GradientDescent {
            iters: parse_num(iters)?,
            lr: parse_num(lr)?,
        },
        ("sgd", [iters, lr, batch]) => LocalSolver::StochasticGd {
            iters: parse_num(iters)?,
            lr: parse_num(lr)?,
            batch: parse_num(batch)?,
        },
        _ => {
            return Err(format!(
                "expected `exact`, `gd:<iters>,<lr>` or `sgd:<iters>,<lr>,<batch>`, got `{v}`"
            ))
        }
    };
    solver.validate().map_err(|e| e.to_string())?;
    Ok(solver)
}

fn parse_tolerance(v: &str) -> Result<EpsSchedule, String> {
    match v.split_once(':') {
        None if v == "none" => Ok(EpsSchedule::Unchecked),
        Some(("harmonic", e)) => {
            let eps0: f64 = parse_num(e)?;
            if eps0 >= 0.0 && eps0.is_finite() {
                Ok(EpsSchedule::Harmonic { eps0 })
            } else {
                Err(format!("eps0 must be nonnegative, got {eps0}"))
            }
        }
        _ => Err(format!("expected `none` or `harmonic:<eps0>`, got `{v}`")),
    }
}

fn parse_regularizer(v: &str) -> Result<Regularizer, String> {
    if v == "zero" {
        return Ok(Regularizer::Zero);
    }
    let (kind, args) = v.split_once(':').ok_or_else(|| format!("unknown regularizer `{v}`"))?;
    match kind {
        "l1" => Ok(Regularizer::L1 { lambda: parse_num(args)? }),
        "ball" => Ok(Regularizer::Ball { radius: parse_num(args)? }),
        "box" => {
            let (lo, hi) = args.split_once(',').ok_or("box needs `box:<lo>,<hi>`")?;
            Ok(Regularizer::Box {
                lo: parse_num(lo)?,
                hi: parse_num(hi)?,
            })
        }
        _ => Err(format!(
            "expected `zero`, `l1:<lambda>`, `box:<lo>,<hi>` or `ball:<radius>`, got `{v}`"
        )),
    }
}

fn parse_problem(raw: &RawConfig) -> Result<ProblemKind, ConfigError> {
    let kind = raw.required("problem", "kind")?;
    match kind.value.as_str() {
        "quadratic" => {
            let eig_min: f64 = raw.parsed("problem", "eig_min", 0.5)?;
            let eig_max: f64 = raw.parsed("problem", "eig_max", 4.0)?;
            if !(eig_min >= 0.0 && eig_max >= eig_min && eig_max > 0.0) {
                return Err(ConfigError::at(
                    raw.line("problem", "eig_max").or(raw.line("problem", "eig_min")),
                    format!("need 0 <= eig_min <= eig_max, eig_max > 0 (got {eig_min}, {eig_max})"),
                ));
            }
            Ok(ProblemKind::Quadratic {
                clients: positive(raw, "clients", 30)?,
                dim: positive(raw, "dim", 10)?,
                seed: raw.parsed("problem", "seed", 1)?,
                eig_min,
                eig_max,
            })
        }
        "logistic" => Ok(ProblemKind::Logistic {
            data: parse_data(raw)?,
            ridge: ridge(raw)?,
        }),
        "mlp" => Ok(ProblemKind::Mlp {
            data: parse_data(raw)?,
            ridge: ridge(raw)?,
            hidden: positive(raw, "hidden", 32)?,
            init_seed: raw.parsed("problem", "init_seed", 1)?,
        }),
        other => Err(ConfigError::at(
            kind.line,
            format!("unknown problem kind `{other}` (expected quadratic, logistic or mlp)"),
        )),
    }
}

fn positive(raw: &RawConfig, key: &str, default: usize) -> Result<usize, ConfigError> {
    let v = raw.parsed("problem", key, default)?;
    if v == 0 {
        return Err(ConfigError::at(raw.line("problem", key), format!("problem.{key} must be positive")));
    }
    Ok(v)
}

fn ridge(raw: &RawConfig) -> Result<f64, ConfigError> {
    let r: f64 = raw.parsed("problem", "ridge", 0.0)?;
    if !(r >= 0.0 && r.is_finite()) {
        return Err(ConfigError::at(raw.line("problem", "ridge"), "problem.ridge must be nonnegative"));
    }
    Ok(r)
}

fn parse_data(raw: &RawConfig) -> Result<DataSource, ConfigError> {
    let name: String = raw.parsed("problem", "dataset", "synthetic-0-0".to_string())?;
    let line = raw.line("problem", "dataset");
    if let Some(dir) = name.strip_prefix("dir:") {
        return Ok(DataSource::Directory(PathBuf::from(dir)));
    }
    let data_seed = raw.parsed("problem", "data_seed", 1)?;
    let base = if name == "synthetic" {
        SyntheticSpec::new(raw.parsed("problem", "alpha", 0.0)?, raw.parsed("problem", "beta", 0.0)?, data_seed)
    } else {
        SyntheticSpec::preset(&name, data_seed).ok_or_else(|| {
            ConfigError::at(
                line,
                format!("unknown dataset `{name}` (expected a synthetic preset, `synthetic` or `dir:<path>`)"),
            )
        })?
    };
    let spec = SyntheticSpec {
        n_clients: positive(raw, "clients", base.n_clients)?,
        input_dim: positive(raw, "input_dim", base.input_dim)?,
        classes: raw.parsed("problem", "classes", base.classes)?,
        ..base
    };
    if let Err(e) = spec.validate() {
        let at = raw
            .line("problem", "alpha")
            .or(raw.line("problem", "beta"))
            .or(raw.line("problem", "classes"))
            .or(line);
        return Err(ConfigError::at(at, e.to_string()));
    }
    Ok(DataSource::Synthetic(spec))
}
