//! The JSON config document and its resolution into problems and schedules.

use std::fs::File;
use std::path::{Path, PathBuf};

use fbkit::experiments::{self, gen_instance, CompareOptions, InstanceSpec, Method};
use fbkit::operators::{read_vector_csv, LeastSquares, LinearOp};
use fbkit::regularizers::Regularizer;
use fbkit::solver::{ErrorSchedule, InertiaRule, Problem, RestartRule, Schedule, StopRule};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub problem: Option<ProblemConfig>,
    /// Methods to run; each command fills in its own default list.
    #[serde(default)]
    pub methods: Option<Vec<MethodSpec>>,
    #[serde(default)]
    pub stop: StopRule,
    #[serde(default)]
    pub compare: CompareOptions,
    /// Accuracy of the reference solution `x⋆`.
    #[serde(default = "default_reference_tol")]
    pub reference_tol: f64,
    #[serde(default)]
    pub analysis: Analysis,
    #[serde(default)]
    pub rates: RatesConfig,
}

fn default_reference_tol() -> f64 {
    1e-14
}

impl Default for Config {
    fn default() -> Self {
        Config {
            problem: None,
            methods: None,
            stop: StopRule::default(),
            compare: CompareOptions::default(),
            reference_tol: default_reference_tol(),
            analysis: Analysis::default(),
            rates: RatesConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    /// A seeded synthetic recovery instance.
    Instance(InstanceSpec),
    /// One of the shipped presets; replaced by its instance in the echoed config.
    Preset(String),
    Files(FilesConfig),
}

/// A problem read from CSV files. Relative paths are resolved against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilesConfig {
    pub operator: OperatorConfig,
    pub data: PathBuf,
    pub regularizer: RegularizerConfig,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorConfig {
    /// Row-major, header-free CSV matrix.
    Matrix(PathBuf),
    /// Flat CSV kernel of a circular convolution on `Rⁿ`.
    Kernel { path: PathBuf, n: usize },
    Identity(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegularizerConfig {
    L1,
    /// Blocks as half-open index ranges `[start, end)`.
    L12 { blocks: Vec<[usize; 2]> },
    Linf,
    Tv1d,
    Nuclear { rows: usize, cols: usize },
}

/// A schedule with its step size given relative to `β`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub label: String,
    pub inertia: InertiaRule,
    #[serde(default = "one")]
    pub gamma_over_beta: f64,
    #[serde(default)]
    pub error: Option<ErrorSchedule>,
    #[serde(default)]
    pub restart: Option<RestartRule>,
}

fn one() -> f64 {
    1.0
}

impl MethodSpec {
    pub fn fb() -> Self {
        MethodSpec {
            label: "fb".into(),
            inertia: InertiaRule::Constant { a: 0.0, b: 0.0 },
            gamma_over_beta: 1.0,
            error: None,
            restart: None,
        }
    }

    pub fn from_method(m: &Method, beta: f64) -> Self {
        MethodSpec {
            label: m.label.clone(),
            inertia: m.schedule.inertia.clone(),
            gamma_over_beta: m.schedule.gamma / beta,
            error: m.schedule.error.clone(),
            restart: m.restart,
        }
    }

    pub fn method(&self, beta: f64) -> Method {
        Method {
            label: self.label.clone(),
            schedule: Schedule { inertia: self.inertia.clone(), gamma: self.gamma_over_beta * beta, error: self.error.clone() },
            restart: self.restart,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Analysis {
    #[serde(default = "yes")]
    pub identification: bool,
    #[serde(default = "yes")]
    pub rates: bool,
    #[serde(default = "yes")]
    pub curve: bool,
    #[serde(default = "yes")]
    pub region: bool,
    #[serde(default = "yes")]
    pub bounds: bool,
}

fn yes() -> bool {
    true
}

impl Default for Analysis {
    fn default() -> Self {
        Analysis { identification: true, rates: true, curve: true, region: true, bounds: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesConfig {
    /// Limiting inertia; defaults to the limit of the first method.
    #[serde(default)]
    pub a: Option<f64>,
    #[serde(default)]
    pub b: Option<f64>,
    /// Use this `η̄` instead of solving a problem (curve and scalar report only).
    #[serde(default)]
    pub eta_bar: Option<f64>,
    #[serde(default = "default_curve_points")]
    pub curve_points: usize,
    #[serde(default = "default_region_points")]
    pub region_points: usize,
    #[serde(default = "default_region_gammas")]
    pub gamma_over_beta: Vec<f64>,
    /// Margin required by the region feasibility test.
    #[serde(default)]
    pub tau: f64,
}

fn default_curve_points() -> usize {
    301
}

fn default_region_points() -> usize {
    201
}

fn default_region_gammas() -> Vec<f64> {
    vec![1.0, 1.25]
}

impl Default for RatesConfig {
    fn default() -> Self {
        RatesConfig {
            a: None,
            b: None,
            eta_bar: None,
            curve_points: default_curve_points(),
            region_points: default_region_points(),
            gamma_over_beta: default_region_gammas(),
            tau: 0.0,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Config = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(ProblemConfig::Files(f)) = &mut cfg.problem {
            f.resolve_paths(base)?;
        }
        Ok(cfg)
    }

    /// Applies `--preset` and `--seed`, and replaces a named preset by its instance.
    pub fn apply_overrides(&mut self, preset: Option<&str>, seed: Option<u64>) -> Result<(), CliError> {
        if let Some(name) = preset {
            self.problem = Some(ProblemConfig::Preset(name.to_string()));
        }
        if let Some(ProblemConfig::Preset(name)) = &self.problem {
            let spec = experiments::preset(name).map_err(|e| CliError::Config(e.to_string()))?;
            self.problem = Some(ProblemConfig::Instance(spec));
        }
        if let Some(seed) = seed {
            match &mut self.problem {
                Some(ProblemConfig::Instance(spec)) => spec.seed = seed,
                _ => return Err(CliError::Config("--seed needs a generated instance".into())),
            }
        }
        if !(self.reference_tol > 0.0) {
            return Err(CliError::Config(format!("reference_tol must be positive, got {}", self.reference_tol)));
        }
        if let Some(methods) = &self.methods {
            check_labels(methods)?;
        }
        Ok(())
    }

    pub fn build_problem(&self) -> Result<BuiltProblem, CliError> {
        match &self.problem {
            None => Err(CliError::Config("no problem given (use \"problem\" in the config or --preset)".into())),
            Some(ProblemConfig::Preset(_)) => unreachable!("presets are resolved by apply_overrides"),
            Some(ProblemConfig::Instance(spec)) => {
                let inst = gen_instance(spec).map_err(|e| CliError::Config(e.to_string()))?;
                Ok(BuiltProblem { problem: inst.problem, lambda: inst.lambda, spec: Some(spec.clone()) })
            }
            Some(ProblemConfig::Files(f)) => Ok(BuiltProblem { problem: f.build()?, lambda: f.lambda, spec: None }),
        }
    }

    /// The configured methods, or `default` when none are given.
    pub fn methods_or(&mut self, default: impl FnOnce() -> Vec<MethodSpec>) -> Vec<MethodSpec> {
        self.methods.get_or_insert_with(default).clone()
    }
}

pub struct BuiltProblem {
    pub problem: Problem,
    pub lambda: f64,
    pub spec: Option<InstanceSpec>,
}

fn check_labels(methods: &[MethodSpec]) -> Result<(), CliError> {
    if methods.is_empty() {
        return Err(CliError::Config("\"methods\" is empty".into()));
    }
    for (i, m) in methods.iter().enumerate() {
        let ok = !m.label.is_empty() && m.label.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if !ok {
            return Err(CliError::Config(format!("method label {:?} must be non-empty [A-Za-z0-9_-]", m.label)));
        }
        if methods[..i].iter().any(|o| o.label == m.label) {
            return Err(CliError::Config(format!("duplicate method label {:?}", m.label)));
        }
    }
    Ok(())
}

fn absolute(base: &Path, p: &Path) -> Result<PathBuf, CliError> {
    let joined = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    joined
        .canonicalize()
        .map_err(|e| CliError::Config(format!("cannot resolve {}: {e}", joined.display())))
}

fn open(p: &Path) -> Result<File, CliError> {
    File::open(p).map_err(|e| CliError::Config(format!("cannot open {}: {e}", p.display())))
}

impl FilesConfig {
    fn resolve_paths(&mut self, base: &Path) -> Result<(), CliError> {
        self.data = absolute(base, &self.data)?;
        match &mut self.operator {
            OperatorConfig::Matrix(p) | OperatorConfig::Kernel { path: p, .. } => *p = absolute(base, p)?,
            OperatorConfig::Identity(_) => {}
        }
        Ok(())
    }

    fn build(&self) -> Result<Problem, CliError> {
        let cfg = |e: fbkit::error::Error| CliError::Config(e.to_string());
        let op = match &self.operator {
            OperatorConfig::Matrix(p) => LinearOp::dense_from_csv(open(p)?).map_err(cfg)?,
            OperatorConfig::Kernel { path, n } => LinearOp::kernel_from_csv(open(path)?, *n).map_err(cfg)?,
            OperatorConfig::Identity(n) => LinearOp::Identity(*n),
        };
        let data = read_vector_csv(open(&self.data)?).map_err(cfg)?;
        let n = op.cols();
        let reg = match &self.regularizer {
            RegularizerConfig::L1 => Regularizer::l1(n, self.lambda),
            RegularizerConfig::L12 { blocks } => {
                Regularizer::l12(blocks.iter().map(|&[s, e]| (s..e).collect()).collect(), self.lambda)
            }
            RegularizerConfig::Linf => Regularizer::linf(n, self.lambda),
            RegularizerConfig::Tv1d => Regularizer::tv1d(n, self.lambda),
            RegularizerConfig::Nuclear { rows, cols } => Regularizer::nuclear(*rows, *cols, self.lambda),
        }
        .map_err(cfg)?;
        let f = LeastSquares::new(op, data).map_err(cfg)?;
        Problem::new(f, reg).map_err(cfg)
    }
}
