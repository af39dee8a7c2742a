use fbkit::error::Error;
use fbkit::experiments::{
    self, reference_solution, required_measurements, run_experiment, standard_methods, write_plot_csv, Reference,
    PRESET_NAMES,
};
use fbkit::identification::{self, IdentificationReport};
use fbkit::rates::{self, BestRates, RateReport, Regime};
use fbkit::solver::{self, Branch, Problem, RunOptions, StopReason, Trace};
use nalgebra::DVector;
use serde::Serialize;

use crate::config::{BuiltProblem, Config, MethodSpec};
use crate::output::OutDir;
use crate::CliError;

/// What a command reports back to the dispatcher.
#[derive(Debug, Default)]
pub struct Outcome {
    pub diverged: bool,
}

fn lib(e: Error) -> CliError {
    CliError::Run(e.to_string())
}

fn trace_csv(trace: &Trace) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).map_err(lib)?;
    Ok(buf)
}

#[derive(Debug, Serialize)]
struct ReferenceSummary {
    signature: String,
    residual: f64,
    refined: bool,
    iterations: usize,
}

impl From<&Reference> for ReferenceSummary {
    fn from(r: &Reference) -> Self {
        ReferenceSummary {
            signature: r.signature.to_string(),
            residual: r.residual,
            refined: r.refined,
            iterations: r.iterations,
        }
    }
}

#[derive(Debug, Serialize)]
struct ProblemSummary {
    dim: usize,
    beta: f64,
    lambda: f64,
    polyhedral: bool,
}

impl ProblemSummary {
    fn new(b: &BuiltProblem) -> Self {
        ProblemSummary {
            dim: b.problem.dim(),
            beta: b.problem.beta(),
            lambda: b.lambda,
            polyhedral: b.problem.reg.is_polyhedral(),
        }
    }
}

#[derive(Debug, Serialize)]
struct RunSummary {
    label: String,
    iterations: usize,
    stop_reason: Option<StopReason>,
    diverged_at: Option<usize>,
    objective: f64,
    step_norm: f64,
    error: Option<f64>,
    signature: String,
    identification: Option<IdentificationReport>,
    rates: Option<RateReport>,
    notes: Vec<String>,
}

#[derive(Debug, Serialize)]
struct SolveSummary {
    problem: ProblemSummary,
    reference: Option<ReferenceSummary>,
    runs: Vec<RunSummary>,
}

fn rate_report_at(problem: &Problem, r: &Reference, gamma: f64, a: f64, b: f64) -> Result<RateReport, Error> {
    let m = rates::build_restricted(problem, &r.x, &r.signature, gamma)?;
    rates::rate_report(&m, a, b, problem.reg.is_polyhedral())
}

pub fn solve(cfg: &mut Config, out: &mut OutDir) -> Result<Outcome, CliError> {
    let built = cfg.build_problem()?;
    let p = &built.problem;
    let methods = cfg.methods_or(|| vec![MethodSpec::fb()]);
    let needs_reference = cfg.analysis.identification || cfg.analysis.rates;
    let reference = if needs_reference { Some(reference_solution(p, cfg.reference_tol).map_err(lib)?) } else { None };
    let x0 = DVector::zeros(p.dim());
    let mut outcome = Outcome::default();
    let mut runs = Vec::new();
    for spec in &methods {
        let method = spec.method(p.beta());
        method.schedule.validate(p.beta()).map_err(|e| CliError::Config(format!("method {:?}: {e}", spec.label)))?;
        let opts = RunOptions {
            stop: cfg.stop,
            x_ref: reference.as_ref().map(|r| r.x.clone()),
            restart: method.restart,
            ..RunOptions::default()
        };
        let (trace, diverged_at) = match solver::run(p, &method.schedule, &x0, &opts) {
            Ok(t) => (t, None),
            Err(Error::Diverged { iteration, trace }) => (*trace, Some(iteration)),
            Err(e) => return Err(lib(e)),
        };
        out.write(&format!("trace_{}.csv", spec.label), &trace_csv(&trace)?)?;
        let mut notes = Vec::new();
        let mut identification = None;
        let mut rate = None;
        if let (Some(r), None) = (&reference, diverged_at) {
            if cfg.analysis.identification {
                match identification::report(p, &trace, &x0, &r.x, &r.signature, method.schedule.gamma) {
                    Ok(rep) => identification = Some(rep),
                    Err(e) => notes.push(format!("identification: {e}")),
                }
            }
            if cfg.analysis.rates {
                let (a, b) = method.schedule.limit_inertia();
                match rate_report_at(p, r, method.schedule.gamma, a, b) {
                    Ok(rep) => rate = Some(rep),
                    Err(e) => notes.push(format!("rates: {e}")),
                }
            }
        }
        outcome.diverged |= diverged_at.is_some();
        let last = trace.last();
        runs.push(RunSummary {
            label: spec.label.clone(),
            iterations: trace.iterations(),
            stop_reason: trace.meta.stop_reason,
            diverged_at,
            objective: last.obj,
            step_norm: last.step_norm,
            error: last.err,
            signature: last.signature.to_string(),
            identification,
            rates: rate,
            notes,
        });
    }
    let summary = SolveSummary {
        problem: ProblemSummary::new(&built),
        reference: reference.as_ref().map(ReferenceSummary::from),
        runs,
    };
    out.write_json("summary.json", &summary)?;
    Ok(outcome)
}

/// Rates of the scalar model with a given `η̄`.
#[derive(Debug, Serialize)]
struct ScalarRates {
    eta_bar: f64,
    a: f64,
    b: f64,
    sigma_max: [f64; 2],
    rho: f64,
    converges: bool,
    oscillation_period: Option<f64>,
    a_opt: f64,
    rho_opt: f64,
    regime: Regime,
}

#[derive(Debug, Serialize)]
struct RatesOutput {
    problem: Option<ProblemSummary>,
    reference: Option<ReferenceSummary>,
    scalar: Option<ScalarRates>,
    report: Option<RateReport>,
    curve_file: Option<String>,
    region: Vec<RegionSummary>,
}

#[derive(Debug, Serialize)]
struct RegionSummary {
    gamma_over_beta: f64,
    grid_points: usize,
    feasible_cells: usize,
    total_cells: usize,
    file: String,
}

fn write_curve(out: &mut OutDir, eta_bar: f64, points: usize) -> Result<String, CliError> {
    let mut text = String::from("a,rho\n");
    for (a, rho) in rates::rate_curve(eta_bar, &rates::unit_grid(points)) {
        text.push_str(&format!("{a:e},{rho:e}\n"));
    }
    let name = "curve.csv".to_string();
    out.write(&name, text.as_bytes())?;
    Ok(name)
}

fn write_regions(cfg: &Config, out: &mut OutDir) -> Result<Vec<RegionSummary>, CliError> {
    let rc = &cfg.rates;
    if rc.gamma_over_beta.iter().any(|g| !(*g > 0.0 && *g < 2.0)) {
        return Err(CliError::Config(format!("gamma_over_beta values must lie in ]0, 2[, got {:?}", rc.gamma_over_beta)));
    }
    let grid = rates::unit_grid(rc.region_points);
    let mut summaries = Vec::new();
    for &g in &rc.gamma_over_beta {
        let cells = rates::region_map(g, rc.tau, &grid);
        let mut text = String::from("a,b,branch,feasible\n");
        for c in &cells {
            let branch = match c.branch {
                Branch::First => "first",
                Branch::Second => "second",
            };
            text.push_str(&format!("{:e},{:e},{branch},{}\n", c.a, c.b, c.feasible));
        }
        let file = format!("region_gamma{g}.csv");
        out.write(&file, text.as_bytes())?;
        summaries.push(RegionSummary {
            gamma_over_beta: g,
            grid_points: rc.region_points,
            feasible_cells: cells.iter().filter(|c| c.feasible).count(),
            total_cells: cells.len(),
            file,
        });
    }
    Ok(summaries)
}

pub fn rates_cmd(cfg: &mut Config, out: &mut OutDir) -> Result<Outcome, CliError> {
    let mut result = RatesOutput { problem: None, reference: None, scalar: None, report: None, curve_file: None, region: Vec::new() };
    let eta_bar = match (cfg.rates.eta_bar, &cfg.problem) {
        (Some(eta), None) => {
            if !(0.0..=1.0).contains(&eta) {
                return Err(CliError::Config(format!("eta_bar must lie in [0, 1], got {eta}")));
            }
            let (a, b) = (cfg.rates.a.unwrap_or(0.0), cfg.rates.b.unwrap_or(cfg.rates.a.unwrap_or(0.0)));
            cfg.rates.a = Some(a);
            cfg.rates.b = Some(b);
            let (rho, sigma) = rates::spectral_radius(&[eta], a, b);
            let (a_opt, rho_opt) = rates::optimal_inertia(eta, (a != b).then_some(b));
            result.scalar = Some(ScalarRates {
                eta_bar: eta,
                a,
                b,
                sigma_max: [sigma.re, sigma.im],
                rho,
                converges: rates::convergence_condition(eta, a, b),
                oscillation_period: rates::oscillation_period(sigma),
                a_opt,
                rho_opt,
                regime: Regime::Analyzed,
            });
            eta
        }
        (Some(_), Some(_)) => return Err(CliError::Config("give either rates.eta_bar or a problem, not both".into())),
        (None, _) => {
            let built = cfg.build_problem()?;
            let p = &built.problem;
            let methods = cfg.methods_or(|| vec![MethodSpec::fb()]);
            let first = methods[0].method(p.beta());
            let (la, lb) = first.schedule.limit_inertia();
            let a = *cfg.rates.a.get_or_insert(la);
            let b = *cfg.rates.b.get_or_insert(lb);
            let r = reference_solution(p, cfg.reference_tol).map_err(lib)?;
            let report = rate_report_at(p, &r, first.schedule.gamma, a, b).map_err(lib)?;
            let eta = report.eta_max;
            result.problem = Some(ProblemSummary::new(&built));
            result.reference = Some(ReferenceSummary::from(&r));
            result.report = Some(report);
            eta
        }
    };
    if cfg.analysis.curve {
        result.curve_file = Some(write_curve(out, eta_bar, cfg.rates.curve_points)?);
    }
    if cfg.analysis.region {
        result.region = write_regions(cfg, out)?;
    }
    out.write_json("rates.json", &result)?;
    Ok(Outcome::default())
}

pub fn region(cfg: &mut Config, out: &mut OutDir) -> Result<Outcome, CliError> {
    let summaries = write_regions(cfg, out)?;
    out.write_json("region.json", &summaries)?;
    Ok(Outcome::default())
}

#[derive(Debug, Serialize)]
struct BoundsOutput {
    problem: ProblemSummary,
    reference: ReferenceSummary,
    method: String,
    identification: IdentificationReport,
    best_rates: Option<BestRates>,
    measurements: Option<usize>,
    required_measurements: Option<f64>,
    notes: Vec<String>,
}

pub fn bounds(cfg: &mut Config, out: &mut OutDir) -> Result<Outcome, CliError> {
    let built = cfg.build_problem()?;
    let p = &built.problem;
    let methods = cfg.methods_or(|| vec![MethodSpec::fb()]);
    let method = methods[0].method(p.beta());
    let r = reference_solution(p, cfg.reference_tol).map_err(lib)?;
    let x0 = DVector::zeros(p.dim());
    let opts = RunOptions { stop: cfg.stop, x_ref: Some(r.x.clone()), restart: method.restart, ..RunOptions::default() };
    let trace = match solver::run(p, &method.schedule, &x0, &opts) {
        Ok(t) => t,
        Err(Error::Diverged { .. }) => return Ok(Outcome { diverged: true }),
        Err(e) => return Err(lib(e)),
    };
    let id = identification::report(p, &trace, &x0, &r.x, &r.signature, method.schedule.gamma).map_err(lib)?;
    let mut notes = Vec::new();
    let best = match rates::best_rates(id.ri_alpha, p.beta()) {
        Ok(b) => Some(b),
        Err(e) => {
            notes.push(format!("best rates: {e}"));
            None
        }
    };
    let required = match &built.spec {
        Some(spec) => match required_measurements(&spec.structure, 1.1) {
            Ok(m) => Some(m),
            Err(e) => {
                notes.push(format!("required measurements: {e}"));
                None
            }
        },
        None => None,
    };
    if !method.schedule.inertia_free() {
        notes.push("identification bounds are established for the plain forward-backward iteration".into());
    }
    let result = BoundsOutput {
        problem: ProblemSummary::new(&built),
        reference: ReferenceSummary::from(&r),
        method: methods[0].label.clone(),
        identification: id,
        best_rates: best,
        measurements: built.spec.as_ref().map(|s| s.m),
        required_measurements: required,
        notes,
    };
    out.write_json("bounds.json", &result)?;
    Ok(Outcome::default())
}

pub fn list_presets() -> String {
    let mut s = String::new();
    for name in PRESET_NAMES {
        let spec = experiments::preset(name).expect("shipped preset");
        s.push_str(&format!("{name}\t{}\n", serde_json::to_string(&spec).expect("serializable spec")));
    }
    s
}

pub fn experiment(cfg: &mut Config, out: &mut OutDir) -> Result<Outcome, CliError> {
    let built = cfg.build_problem()?;
    let Some(spec) = built.spec.clone() else {
        return Err(CliError::Config("experiment needs a generated instance or preset".into()));
    };
    let beta = built.problem.beta();
    let methods = cfg.methods_or(|| standard_methods(beta).iter().map(|m| MethodSpec::from_method(m, beta)).collect());
    let methods: Vec<_> = methods.iter().map(|m| m.method(beta)).collect();
    for m in &methods {
        m.schedule.validate(beta).map_err(|e| CliError::Config(format!("method {:?}: {e}", m.label)))?;
    }
    let output = match run_experiment(&spec, Some(methods), cfg.reference_tol, &cfg.compare) {
        Ok(o) => o,
        Err(Error::Diverged { .. }) => return Ok(Outcome { diverged: true }),
        Err(e) => return Err(lib(e)),
    };
    for rep in &output.reports {
        out.write(&format!("trace_{}.csv", rep.method.label), &trace_csv(&rep.trace)?)?;
        let mut buf = Vec::new();
        write_plot_csv(rep, &mut buf).map_err(lib)?;
        out.write(&format!("plot_{}.csv", rep.method.label), &buf)?;
    }
    out.write_json("experiment.json", &output)?;
    Ok(Outcome::default())
}
