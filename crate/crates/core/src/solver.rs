//! Inertial forward-backward iteration
//!
//! ```text
//! y_a = x_k + a_k (x_k − x_{k−1})
//! y_b = x_k + b_k (x_k − x_{k−1})
//! x_{k+1} = prox_{γ_k R}(y_a − γ_k (∇F(y_b) + ξ_k))
//! ```
//!
//! with `x_{−1} = x_0`, pluggable inertia schedules, optional gradient errors and
//! per-iteration trace recording.

use std::io::Write;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::operators::LeastSquares;
use crate::regularizers::{ManifoldSignature, Regularizer, SIGNATURE_TOL};

/// Relative slack of the step-size box `[ε, 2β − ε̄]`, as a fraction of `β`.
pub const STEP_SLACK: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 50_000;
pub const DEFAULT_STEP_TOL: f64 = 1e-12;

/// `Φ = F + R` with `F(x) = ½‖y − Lx‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub smooth: LeastSquares,
    pub reg: Regularizer,
}

impl Problem {
    pub fn new(smooth: LeastSquares, reg: Regularizer) -> Result<Self> {
        check_len(smooth.dim(), reg.dim())?;
        Ok(Problem { smooth, reg })
    }

    pub fn dim(&self) -> usize {
        self.smooth.dim()
    }

    pub fn beta(&self) -> f64 {
        self.smooth.beta()
    }

    pub fn objective(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.smooth.value(x)? + self.reg.eval(x)?)
    }

    pub fn grad(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.smooth.grad(x)
    }

    /// One forward-backward map `prox_{γR}(x − γ∇F(x))`.
    pub fn fb_map(&self, gamma: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        let z = x - self.grad(x)? * gamma;
        self.reg.prox(gamma, &z)
    }
}

/// Rule producing the inertial parameters `(a_k, b_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum InertiaRule {
    Constant { a: f64, b: f64 },
    /// `a_k = b_k = (k − 1)/(k + q)`.
    FistaQ { q: f64 },
    /// `t_k = (1 + √(1 + p t²_{k−1}))/2`, `a_k = b_k = (t_{k−1} − 1)/t_k`, `t_0 = 1`.
    PRule { p: f64 },
    /// `a_k = min(a_cap, c/(k^e ‖x_k − x_{k−1}‖²))`, same for `b_k` with `b_cap`.
    Online {
        a_cap: f64,
        b_cap: f64,
        #[serde(default = "default_online_c")]
        c: f64,
        #[serde(default = "default_online_exponent")]
        exponent: f64,
    },
}

fn default_online_c() -> f64 {
    1e5
}

fn default_online_exponent() -> f64 {
    2.0
}

/// Magnitude rule `k ↦ ‖ξ_k‖`; the direction is a fixed seeded unit vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ErrorSchedule {
    /// `‖ξ_k‖ = scale / k^exponent`.
    Power { scale: f64, exponent: f64, seed: u64 },
    /// Measured magnitudes for `k = 1, 2, …` (zero past the end). A finite sample says
    /// nothing about the family it came from, so summability is not decided for it.
    Table { magnitudes: Vec<f64>, seed: u64 },
}

impl ErrorSchedule {
    pub fn magnitude(&self, k: usize) -> f64 {
        match self {
            ErrorSchedule::Power { scale, exponent, .. } => scale / (k.max(1) as f64).powf(*exponent),
            ErrorSchedule::Table { magnitudes, .. } => magnitudes.get(k.wrapping_sub(1)).copied().unwrap_or(0.0),
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ErrorSchedule::Power { seed, .. } | ErrorSchedule::Table { seed, .. } => *seed,
        }
    }

    /// Unit direction shared by every `ξ_k`.
    pub fn direction(&self, n: usize) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed());
        let d = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let norm = d.norm();
        if norm > 0.0 {
            d / norm
        } else {
            d
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub inertia: InertiaRule,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorSchedule>,
}

/// Parameters of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
    /// `t_k` for the p-rule, to be stored in the state after the step.
    pub t: Option<f64>,
}

impl Schedule {
    pub fn constant(a: f64, b: f64, gamma: f64) -> Self {
        Schedule { inertia: InertiaRule::Constant { a, b }, gamma, error: None }
    }

    pub fn fb(gamma: f64) -> Self {
        Self::constant(0.0, 0.0, gamma)
    }

    pub fn fista(q: f64, gamma: f64) -> Self {
        Schedule { inertia: InertiaRule::FistaQ { q }, gamma, error: None }
    }

    pub fn p_rule(p: f64, gamma: f64) -> Self {
        Schedule { inertia: InertiaRule::PRule { p }, gamma, error: None }
    }

    pub fn with_error(mut self, error: ErrorSchedule) -> Self {
        self.error = Some(error);
        self
    }

    /// Checks the parameter box of each rule against `β`.
    ///
    /// FISTA accepts `q = 2` (used in comparisons) although sequence convergence is
    /// only known for `q > 2`; see [`Schedule::sequence_convergence_known`].
    pub fn validate(&self, beta: f64) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        let g = self.gamma;
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        match self.inertia {
            InertiaRule::Constant { a, b } => {
                if !unit(a) || !unit(b) {
                    return bad(format!("inertia ({a}, {b}) outside [0, 1]²"));
                }
                let (lo, hi) = (STEP_SLACK * beta, (2.0 - STEP_SLACK) * beta);
                if !(lo..=hi).contains(&g) {
                    return bad(format!("gamma {g} outside [{lo}, {hi}]"));
                }
            }
            InertiaRule::FistaQ { q } => {
                if !(q >= 2.0) {
                    return bad(format!("FISTA needs q ≥ 2, got {q}"));
                }
                if !(g > 0.0 && g <= beta) {
                    return bad(format!("FISTA needs gamma in ]0, β], got {g}"));
                }
            }
            InertiaRule::PRule { p } => {
                if !(p > 0.0 && p.is_finite()) {
                    return bad(format!("p must be positive, got {p}"));
                }
                if !(g > 0.0 && g <= beta) {
                    return bad(format!("p-rule needs gamma in ]0, β], got {g}"));
                }
            }
            InertiaRule::Online { a_cap, b_cap, c, exponent } => {
                if !unit(a_cap) || !unit(b_cap) {
                    return bad(format!("caps ({a_cap}, {b_cap}) outside [0, 1]²"));
                }
                if !(c > 0.0) || !(exponent > 1.0) {
                    return bad(format!("online rule needs c > 0 and exponent > 1, got {c}, {exponent}"));
                }
                let (lo, hi) = (STEP_SLACK * beta, (2.0 - STEP_SLACK) * beta);
                if !(lo..=hi).contains(&g) {
                    return bad(format!("gamma {g} outside [{lo}, {hi}]"));
                }
            }
        }
        if let Some(ErrorSchedule::Power { scale, .. }) = &self.error {
            if !(*scale >= 0.0) {
                return bad(format!("error scale must be non-negative, got {scale}"));
            }
        }
        Ok(())
    }

    pub fn sequence_convergence_known(&self) -> bool {
        !matches!(self.inertia, InertiaRule::FistaQ { q } if q <= 2.0)
    }

    /// Coefficients of the step with schedule index `k ≥ 1`, where `k` counts steps
    /// since the start (or the last restart) and `state` holds `x_k`, `x_{k−1}`, `t_{k−1}`.
    pub fn eval(&self, k: usize, state: &SolverState) -> Coefficients {
        let kf = k.max(1) as f64;
        let (a, b, t) = match self.inertia {
            InertiaRule::Constant { a, b } => (a, b, None),
            InertiaRule::FistaQ { q } => {
                let a = (kf - 1.0) / (kf + q);
                (a, a, None)
            }
            InertiaRule::PRule { p } => {
                let t_prev = state.t;
                let t = 0.5 * (1.0 + (1.0 + p * t_prev * t_prev).sqrt());
                let a = (t_prev - 1.0) / t;
                (a, a, Some(t))
            }
            InertiaRule::Online { a_cap, b_cap, c, exponent } => {
                let d2 = (&state.x - &state.x_prev).norm_squared();
                let ck = if d2 > 0.0 { c / (kf.powf(exponent) * d2) } else { f64::INFINITY };
                (a_cap.min(ck), b_cap.min(ck), None)
            }
        };
        Coefficients { a, b, gamma: self.gamma, t }
    }

    /// Limits `(a, b)` of the inertia sequence as `k → ∞` (FISTA and the p-rule with
    /// `p = 4` tend to 1, the p-rule in general to `p/4` for `p < 4`).
    pub fn limit_inertia(&self) -> (f64, f64) {
        match self.inertia {
            InertiaRule::Constant { a, b } => (a, b),
            InertiaRule::FistaQ { .. } => (1.0, 1.0),
            InertiaRule::PRule { p } => {
                let a = (p / 4.0).min(1.0);
                (a, a)
            }
            InertiaRule::Online { a_cap, b_cap, .. } => (a_cap, b_cap),
        }
    }

    /// Whether `a_k ≡ 0` along the whole run.
    pub fn inertia_free(&self) -> bool {
        match self.inertia {
            InertiaRule::Constant { a, .. } => a == 0.0,
            InertiaRule::Online { a_cap, .. } => a_cap == 0.0,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    /// Index of the current iterate.
    pub k: usize,
    pub x: DVector<f64>,
    pub x_prev: DVector<f64>,
    /// `t_{k}` of the p-rule (1 at start and after a restart).
    pub t: f64,
    /// Steps since the start or the last restart; drives the schedule index.
    pub clock: usize,
}

impl SolverState {
    pub fn new(x0: DVector<f64>) -> Self {
        SolverState { k: 0, x_prev: x0.clone(), x: x0, t: 1.0, clock: 0 }
    }

    /// Drops the momentum: `x_{k−1} ← x_k`, `t ← 1`, schedule index back to 1.
    pub fn restart(&mut self) {
        self.x_prev = self.x.clone();
        self.t = 1.0;
        self.clock = 0;
    }
}

/// Extrapolated points `(y_a, y_b)`.
pub fn extrapolate(state: &SolverState, a: f64, b: f64) -> (DVector<f64>, DVector<f64>) {
    let d = &state.x - &state.x_prev;
    (&state.x + &d * a, &state.x + &d * b)
}

/// One inertial step from `state`; `xi` is an additive gradient error.
pub fn step(problem: &Problem, state: &SolverState, c: Coefficients, xi: Option<&DVector<f64>>) -> Result<SolverState> {
    let (ya, yb) = extrapolate(state, c.a, c.b);
    let mut g = problem.grad(&yb)?;
    if let Some(xi) = xi {
        check_len(g.len(), xi.len())?;
        g += xi;
    }
    let x_next = problem.reg.prox(c.gamma, &(ya - g * c.gamma))?;
    Ok(SolverState {
        k: state.k + 1,
        x_prev: state.x.clone(),
        x: x_next,
        t: c.t.unwrap_or(state.t),
        clock: state.clock + 1,
    })
}

/// When to drop the momentum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestartRule {
    /// `⟨y_a − x_{k+1}, x_{k+1} − x_k⟩ > 0`: the step opposes the generalized gradient.
    Gradient,
    /// `Φ(x_{k+1}) > Φ(x_k)`.
    Objective,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopRule {
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Stop when `‖x_k − x_{k−1}‖ ≤ step_tol·max(1, ‖x_k‖)`.
    #[serde(default = "default_step_tol")]
    pub step_tol: Option<f64>,
    /// Stop when `‖x_k − x_ref‖ ≤ ref_tol` (needs a reference point).
    #[serde(default)]
    pub ref_tol: Option<f64>,
}

fn default_max_iter() -> usize {
    DEFAULT_MAX_ITER
}

fn default_step_tol() -> Option<f64> {
    Some(DEFAULT_STEP_TOL)
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule { max_iter: DEFAULT_MAX_ITER, step_tol: Some(DEFAULT_STEP_TOL), ref_tol: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub stop: StopRule,
    pub x_ref: Option<DVector<f64>>,
    pub restart: Option<RestartRule>,
    pub keep_iterates: bool,
    pub sig_tol: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { stop: StopRule::default(), x_ref: None, restart: None, keep_iterates: false, sig_tol: SIGNATURE_TOL }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIter,
    StepTol,
    RefTol,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub k: usize,
    /// Coefficients of the step that produced `x_k` (zero and `NaN`-free at `k = 0`).
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
    pub obj: f64,
    pub err: Option<f64>,
    pub step_norm: f64,
    #[serde(skip)]
    pub signature: ManifoldSignature,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceMeta {
    pub schedule: Schedule,
    pub error_seed: Option<u64>,
    pub stop_reason: Option<StopReason>,
    /// Iterations after which the momentum was dropped.
    pub restarts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub meta: TraceMeta,
    pub x_final: DVector<f64>,
    /// All iterates `x_0, …` when requested.
    pub iterates: Option<Vec<DVector<f64>>>,
}

impl Trace {
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn last(&self) -> &TraceRecord {
        self.records.last().expect("a trace always holds the initial record")
    }

    pub fn errors(&self) -> Option<Vec<f64>> {
        self.records.iter().map(|r| r.err).collect()
    }

    /// CSV with columns `k,a,b,gamma,obj,err,step_norm,sig_hash,sig_desc`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "a", "b", "gamma", "obj", "err", "step_norm", "sig_hash", "sig_desc"])?;
        for r in &self.records {
            w.write_record([
                r.k.to_string(),
                r.a.to_string(),
                r.b.to_string(),
                r.gamma.to_string(),
                r.obj.to_string(),
                r.err.map(|e| e.to_string()).unwrap_or_default(),
                r.step_norm.to_string(),
                format!("{:016x}", r.signature.digest()),
                r.signature.describe(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn record(
    problem: &Problem,
    state: &SolverState,
    c: Coefficients,
    opts: &RunOptions,
) -> Result<TraceRecord> {
    let x = &state.x;
    let signature = match problem.reg.signature(x, opts.sig_tol) {
        Ok(s) => s,
        // ℓ∞ at the origin has no max-set; record it as the empty one
        Err(Error::DegenerateSignature(_)) => ManifoldSignature::MaxSet { indices: vec![], signs: vec![0; x.len()] },
        Err(e) => return Err(e),
    };
    Ok(TraceRecord {
        k: state.k,
        a: c.a,
        b: c.b,
        gamma: c.gamma,
        obj: problem.objective(x)?,
        err: opts.x_ref.as_ref().map(|r| (x - r).norm()),
        step_norm: (x - &state.x_prev).norm(),
        signature,
    })
}

/// Runs the iteration from `x0` until a stopping test fires.
///
/// Returns [`Error::Diverged`] with the partial trace if an iterate stops being finite.
pub fn run(problem: &Problem, schedule: &Schedule, x0: &DVector<f64>, opts: &RunOptions) -> Result<Trace> {
    check_len(problem.dim(), x0.len())?;
    if let Some(r) = &opts.x_ref {
        check_len(problem.dim(), r.len())?;
    }
    schedule.validate(problem.beta())?;
    let direction = schedule.error.as_ref().map(|e| e.direction(problem.dim()));
    let mut state = SolverState::new(x0.clone());
    let zero = Coefficients { a: 0.0, b: 0.0, gamma: schedule.gamma, t: None };
    let mut trace = Trace {
        records: vec![record(problem, &state, zero, opts)?],
        meta: TraceMeta {
            schedule: schedule.clone(),
            error_seed: schedule.error.as_ref().map(ErrorSchedule::seed),
            stop_reason: None,
            restarts: Vec::new(),
        },
        x_final: x0.clone(),
        iterates: opts.keep_iterates.then(|| vec![x0.clone()]),
    };
    let mut obj = trace.records[0].obj;
    if opts.stop.max_iter == 0 {
        trace.meta.stop_reason = Some(StopReason::MaxIter);
        return Ok(trace);
    }
    loop {
        let c = schedule.eval(state.clock + 1, &state);
        let xi = match (&schedule.error, &direction) {
            (Some(e), Some(d)) => Some(d * e.magnitude(state.k + 1)),
            _ => None,
        };
        let next = step(problem, &state, c, xi.as_ref())?;
        if next.x.iter().any(|v| !v.is_finite()) {
            trace.x_final = state.x;
            return Err(Error::Diverged { iteration: next.k, trace: Box::new(trace) });
        }
        let restart = match opts.restart {
            Some(RestartRule::Gradient) => {
                let (ya, _) = extrapolate(&state, c.a, c.b);
                (&ya - &next.x).dot(&(&next.x - &state.x)) > 0.0
            }
            Some(RestartRule::Objective) => problem.objective(&next.x)? > obj,
            None => false,
        };
        state = next;
        let rec = record(problem, &state, c, opts)?;
        obj = rec.obj;
        if !obj.is_finite() {
            trace.x_final = state.x;
            return Err(Error::Diverged { iteration: state.k, trace: Box::new(trace) });
        }
        let step_norm = rec.step_norm;
        let err = rec.err;
        trace.records.push(rec);
        if let Some(it) = trace.iterates.as_mut() {
            it.push(state.x.clone());
        }
        if restart {
            state.restart();
            trace.meta.restarts.push(state.k);
        }
        let reason = if matches!((opts.stop.ref_tol, err), (Some(t), Some(e)) if e <= t) {
            Some(StopReason::RefTol)
        } else if matches!(opts.stop.step_tol, Some(t) if step_norm <= t * state.x.norm().max(1.0)) {
            Some(StopReason::StepTol)
        } else if state.k >= opts.stop.max_iter {
            Some(StopReason::MaxIter)
        } else {
            None
        };
        if reason.is_some() {
            trace.meta.stop_reason = reason;
            trace.x_final = state.x;
            return Ok(trace);
        }
    }
}

/// Which inequality of the global convergence condition applies at `(a, b, γ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `a < (γ/2β)b`: `(1 + a) − γ/(2β)(1 + b)² > τ`.
    First,
    /// `b ≤ a` or `(γ/2β)b ≤ a < b`: `(1 − 3a) − γ/(2β)(1 − b)² > τ`.
    Second,
}

/// Applicable branch and the value of its left-hand side.
///
/// The condition is stated for non-decreasing `a_k, b_k, γ_k`; only the inequality
/// itself is evaluated here.
pub fn unconditional_margin(a: f64, b: f64, gamma: f64, beta: f64) -> (Branch, f64) {
    let r = gamma / (2.0 * beta);
    if a < r * b {
        (Branch::First, (1.0 + a) - r * (1.0 + b).powi(2))
    } else {
        (Branch::Second, (1.0 - 3.0 * a) - r * (1.0 - b).powi(2))
    }
}

/// Strict test `margin > τ`. Margins within a few ulps of `τ` count as equal, so
/// boundary points such as `a = b = √5 − 2` at `γ = β` are not admitted by rounding.
pub fn check_unconditional(a: f64, b: f64, gamma: f64, beta: f64, tau: f64) -> bool {
    let (branch, m) = unconditional_margin(a, b, gamma, beta);
    let r = gamma / (2.0 * beta);
    let scale = match branch {
        Branch::First => (1.0 + a).max(r * (1.0 + b).powi(2)),
        Branch::Second => (1.0 + 3.0 * a).max(r * (1.0 - b).powi(2)),
    };
    m - tau > 8.0 * f64::EPSILON * scale.max(tau.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCheck {
    Holds,
    Fails,
    CannotVerify,
}

/// Summability of the gradient errors: `Σ k‖ξ_k‖ < ∞` (i.e. `s > 2`) for inertial
/// schedules, `Σ ‖ξ_k‖ < ∞` (`s > 1`) when `a_k ≡ 0`. Only the power family `C/k^s`
/// is decided; tables give [`ErrorCheck::CannotVerify`].
pub fn check_error_schedule(schedule: &Schedule) -> ErrorCheck {
    match &schedule.error {
        None => ErrorCheck::Holds,
        Some(ErrorSchedule::Power { scale, exponent, .. }) => {
            let need = if schedule.inertia_free() { 1.0 } else { 2.0 };
            if *scale == 0.0 || *exponent > need {
                ErrorCheck::Holds
            } else {
                ErrorCheck::Fails
            }
        }
        Some(ErrorSchedule::Table { .. }) => ErrorCheck::CannotVerify,
    }
}
