//! Seeded synthetic recovery instances, reference solutions, and the comparison of
//! observed local rates with the spectral predictions.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::identification::{self, IdentificationReport};
use crate::operators::{LeastSquares, LinearOp};
use crate::rates::{self, RateReport};
use crate::regularizers::{ManifoldSignature, Regularizer, SIGNATURE_TOL};
use crate::solver::{self, Problem, RestartRule, RunOptions, Schedule, StopReason, StopRule, Trace};

/// Plain FB budget of the reference solve before switching to the restarted p-rule.
pub const REFERENCE_FB_ITER: usize = 20_000;
pub const REFERENCE_MAX_ITER: usize = 2_000_000;
pub const DEFAULT_BURN_IN: usize = 10;
/// Minimum number of points in a rate-fitting window.
pub const MIN_WINDOW: usize = 20;

/// Ground-truth structure; `n` is the ambient dimension except for `Nuclear`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Structure {
    L1 { n: usize, sparsity: usize },
    L12 { n: usize, block_size: usize, active_blocks: usize },
    Linf { n: usize, saturated: usize },
    Tv1d { n: usize, jumps: usize },
    Nuclear { rows: usize, cols: usize, rank: usize },
}

impl Structure {
    pub fn dim(&self) -> usize {
        match *self {
            Structure::L1 { n, .. }
            | Structure::L12 { n, .. }
            | Structure::Linf { n, .. }
            | Structure::Tv1d { n, .. } => n,
            Structure::Nuclear { rows, cols, .. } => rows * cols,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        match *self {
            Structure::L1 { n, sparsity } if sparsity > n => bad(format!("sparsity {sparsity} > n = {n}")),
            Structure::L12 { n, block_size, active_blocks } => {
                if block_size == 0 || n % block_size != 0 {
                    bad(format!("block size {block_size} does not divide n = {n}"))
                } else if active_blocks > n / block_size {
                    bad(format!("{active_blocks} active blocks > {} blocks", n / block_size))
                } else {
                    Ok(())
                }
            }
            Structure::Linf { n, saturated } if saturated == 0 || saturated > n => {
                bad(format!("saturated count {saturated} outside [1, {n}]"))
            }
            Structure::Tv1d { n, jumps } if n == 0 || jumps > n - 1 => bad(format!("{jumps} jumps in a signal of length {n}")),
            Structure::Nuclear { rows, cols, rank } if rank > rows.min(cols) => {
                bad(format!("rank {rank} exceeds min({rows}, {cols})"))
            }
            _ if self.dim() == 0 => bad("empty dimension".into()),
            _ => Ok(()),
        }
    }

    pub fn regularizer(&self, weight: f64) -> Result<Regularizer> {
        match *self {
            Structure::L1 { n, .. } => Regularizer::l1(n, weight),
            Structure::L12 { n, block_size, .. } => Regularizer::l12_uniform(n, block_size, weight),
            Structure::Linf { n, .. } => Regularizer::linf(n, weight),
            Structure::Tv1d { n, .. } => Regularizer::tv1d(n, weight),
            Structure::Nuclear { rows, cols, .. } => Regularizer::nuclear(rows, cols, weight),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaRule {
    #[serde(default = "one")]
    pub c_lambda: f64,
    #[serde(default = "default_floor")]
    pub floor: f64,
}

fn one() -> f64 {
    1.0
}

fn default_floor() -> f64 {
    1e-3
}

fn default_noise_rel() -> f64 {
    1e-3
}

impl Default for LambdaRule {
    fn default() -> Self {
        LambdaRule { c_lambda: 1.0, floor: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    pub structure: Structure,
    /// Number of measurements.
    pub m: usize,
    /// `‖w‖ = noise_rel·‖L x_ob‖` unless `noise_norm` is set.
    #[serde(default = "default_noise_rel")]
    pub noise_rel: f64,
    #[serde(default)]
    pub noise_norm: Option<f64>,
    #[serde(default)]
    pub lambda: LambdaRule,
    pub seed: u64,
}

/// A generated problem with its ground truth.
#[derive(Debug, Clone)]
pub struct Instance {
    pub problem: Problem,
    pub x_ob: DVector<f64>,
    pub noise_norm: f64,
    pub lambda: f64,
}

/// `λ = 10‖w‖` in the presets: with `‖w‖ = 10⁻³‖L x_ob‖` this keeps the solution's
/// structure close to the ground truth at the shipped sample sizes.
pub const PRESET_C_LAMBDA: f64 = 10.0;

pub const PRESET_NAMES: [&str; 5] = ["lasso", "group-lasso", "linf", "tv", "nuclear"];

/// The shipped recovery presets (the nuclear one at a reduced 12×12, rank-2 scale).
pub fn preset(name: &str) -> Result<InstanceSpec> {
    let structure = match name {
        "lasso" => Structure::L1 { n: 128, sparsity: 8 },
        "group-lasso" => Structure::L12 { n: 128, block_size: 4, active_blocks: 3 },
        "linf" => Structure::Linf { n: 128, saturated: 10 },
        "tv" => Structure::Tv1d { n: 128, jumps: 8 },
        "nuclear" => Structure::Nuclear { rows: 12, cols: 12, rank: 2 },
        _ => return Err(Error::InvalidInput(format!("unknown preset {name:?}; known: {}", PRESET_NAMES.join(", ")))),
    };
    let m = match name {
        "lasso" | "tv" => 48,
        "group-lasso" => 60,
        "linf" => 123,
        _ => required_measurements(&structure, 1.2)?.ceil() as usize,
    };
    Ok(InstanceSpec {
        structure,
        m,
        noise_rel: default_noise_rel(),
        noise_norm: None,
        lambda: LambdaRule { c_lambda: PRESET_C_LAMBDA, ..LambdaRule::default() },
        seed: 1,
    })
}

fn signed_magnitude(rng: &mut ChaCha8Rng) -> f64 {
    let v = rng.random_range(0.5..=1.5);
    if rng.random_bool(0.5) {
        v
    } else {
        -v
    }
}

fn sorted_sample(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut v = sample(rng, n, k).into_vec();
    v.sort_unstable();
    v
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn ground_truth(s: &Structure, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let n = s.dim();
    let mut x = DVector::zeros(n);
    match *s {
        Structure::L1 { sparsity, .. } => {
            for i in sorted_sample(rng, n, sparsity) {
                x[i] = signed_magnitude(rng);
            }
        }
        Structure::L12 { block_size, active_blocks, .. } => {
            for b in sorted_sample(rng, n / block_size, active_blocks) {
                for i in b * block_size..(b + 1) * block_size {
                    x[i] = signed_magnitude(rng);
                }
            }
        }
        Structure::Linf { saturated, .. } => {
            let peak = rng.random_range(0.5..=1.5);
            let top = sorted_sample(rng, n, saturated);
            for i in 0..n {
                x[i] = rng.random_range(-0.5 * peak..=0.5 * peak);
            }
            for i in top {
                x[i] = if rng.random_bool(0.5) { peak } else { -peak };
            }
        }
        Structure::Tv1d { jumps, .. } => {
            let at = sorted_sample(rng, n - 1, jumps);
            let mut level = 0.0;
            let mut next = at.iter().peekable();
            for i in 0..n {
                if i > 0 && next.peek() == Some(&&(i - 1)) {
                    level += signed_magnitude(rng);
                    next.next();
                }
                x[i] = level;
            }
        }
        Structure::Nuclear { rows, cols, rank } => {
            let u = gaussian_matrix(rng, rows, rank).qr().q();
            let v = gaussian_matrix(rng, cols, rank).qr().q();
            let s = DVector::from_fn(rank, |_, _| rng.random_range(0.5..=1.5));
            let xm = u * DMatrix::from_diagonal(&s) * v.transpose();
            x = DVector::from_column_slice(xm.as_slice());
        }
    }
    x
}

/// Draws `L` (i.i.d. standard normal), the structured `x_ob`, and `y = L x_ob + w`.
pub fn gen_instance(spec: &InstanceSpec) -> Result<Instance> {
    spec.structure.validate()?;
    if spec.m == 0 {
        return Err(Error::InvalidInput("need at least one measurement".into()));
    }
    if !(spec.noise_rel >= 0.0) || spec.noise_norm.is_some_and(|w| !(w >= 0.0)) {
        return Err(Error::InvalidInput("noise level must be non-negative".into()));
    }
    let n = spec.structure.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let l = gaussian_matrix(&mut rng, spec.m, n);
    let x_ob = ground_truth(&spec.structure, &mut rng);
    let clean = &l * &x_ob;
    let noise_norm = spec.noise_norm.unwrap_or(spec.noise_rel * clean.norm());
    let mut y = clean;
    if noise_norm > 0.0 {
        let dir = DVector::from_fn(spec.m, |_, _| rng.sample::<f64, _>(StandardNormal));
        y += dir.normalize() * noise_norm;
    }
    let lambda = choose_lambda(noise_norm, spec.lambda.c_lambda, spec.lambda.floor)?;
    let smooth = LeastSquares::new(LinearOp::Dense(l), y)?;
    let problem = Problem::new(smooth, spec.structure.regularizer(lambda)?)?;
    Ok(Instance { problem, x_ob, noise_norm, lambda })
}

/// Gaussian sample-size bound for exact manifold recovery (natural logarithm).
/// Total variation has no such bound.
pub fn required_measurements(s: &Structure, c: f64) -> Result<f64> {
    if !(c >= 1.0) {
        return Err(Error::InvalidInput(format!("constant c must be ≥ 1, got {c}")));
    }
    s.validate()?;
    Ok(match *s {
        Structure::L1 { n, sparsity } => {
            let s = sparsity as f64;
            2.0 * c * s * (n as f64).ln() + s
        }
        Structure::L12 { n, block_size, active_blocks } => {
            let nb = (n / block_size) as f64;
            let s = active_blocks as f64;
            let n = n as f64;
            let t = (n / nb).sqrt() + (2.0 * nb.ln()).sqrt();
            (1.0 + c) * s * t * t + s * n / nb
        }
        Structure::Linf { n, saturated } => {
            let s = saturated as f64;
            n as f64 - s + 2.0 * c * s * (s / 2.0).ln()
        }
        Structure::Nuclear { rows, cols, rank } => {
            let r = rank as f64;
            c * r * (3.0 * rows as f64 + 3.0 * cols as f64 - 5.0 * r)
        }
        Structure::Tv1d { .. } => {
            return Err(Error::Unsupported("no measurement bound for total variation".into()))
        }
    })
}

/// `λ = c·‖w‖`, or `floor` for noiseless data.
pub fn choose_lambda(noise_norm: f64, c_lambda: f64, floor: f64) -> Result<f64> {
    if !(c_lambda > 0.0) || !(floor > 0.0) || !(noise_norm >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "need c > 0, floor > 0, ‖w‖ ≥ 0; got {c_lambda}, {floor}, {noise_norm}"
        )));
    }
    Ok(if noise_norm == 0.0 { floor } else { c_lambda * noise_norm })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaSweepEntry {
    pub c_lambda: f64,
    pub lambda: f64,
    pub signature: String,
    pub nd_margin: f64,
    pub ri_alpha: f64,
    pub recovery_error: f64,
}

/// Re-solves one instance for several `c_λ` and records the structure found.
pub fn lambda_sweep(spec: &InstanceSpec, cs: &[f64], tol: f64) -> Result<Vec<LambdaSweepEntry>> {
    cs.iter()
        .map(|&c| {
            let mut s = spec.clone();
            s.lambda.c_lambda = c;
            let inst = gen_instance(&s)?;
            let r = reference_solution(&inst.problem, tol)?;
            let basis = inst.problem.reg.tangent_basis(&r.signature)?;
            Ok(LambdaSweepEntry {
                c_lambda: c,
                lambda: inst.lambda,
                signature: r.signature.to_string(),
                nd_margin: identification::check_nd(&inst.problem, &r.x, &r.signature)?,
                ri_alpha: identification::check_ri(&inst.problem, &basis)?,
                recovery_error: (&r.x - &inst.x_ob).norm(),
            })
        })
        .collect()
}

/// Result of [`reference_solution`].
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub x: DVector<f64>,
    pub signature: ManifoldSignature,
    /// Iterate before the finite-termination refinement.
    pub x_iterative: DVector<f64>,
    pub iterations: usize,
    pub refined: bool,
    /// `dist(−∇F(x), ∂R(x))` at the returned point.
    pub residual: f64,
}

/// `dist(−∇F(x), ∂R(x))`.
pub fn optimality_residual(problem: &Problem, x: &DVector<f64>) -> Result<f64> {
    let g = problem.grad(x)?;
    problem.reg.subdiff_distance(x, &(-g), SIGNATURE_TOL)
}

/// High-accuracy minimizer: FB with `γ = β` until `‖x_k − x_{k−1}‖ ≤ tol·max(1, ‖x_k‖)`,
/// then one finite-termination refinement for polyhedral `R`.
///
/// If FB has not converged after [`REFERENCE_FB_ITER`] steps the solve continues with
/// the restarted p-rule (`p = 4`), which has the same fixed points.
pub fn reference_solution(problem: &Problem, tol: f64) -> Result<Reference> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tol must be positive, got {tol}")));
    }
    let beta = problem.beta();
    let stop = |max_iter| StopRule { max_iter, step_tol: Some(tol), ref_tol: None };
    let fb_opts = RunOptions { stop: stop(REFERENCE_FB_ITER), ..Default::default() };
    let mut tr = solver::run(problem, &Schedule::fb(beta), &DVector::zeros(problem.dim()), &fb_opts)?;
    let mut iterations = tr.iterations();
    if tr.meta.stop_reason != Some(StopReason::StepTol) {
        let opts = RunOptions {
            stop: stop(REFERENCE_MAX_ITER),
            restart: Some(RestartRule::Gradient),
            ..Default::default()
        };
        tr = solver::run(problem, &Schedule::p_rule(4.0, beta), &tr.x_final, &opts)?;
        iterations += tr.iterations();
        if tr.meta.stop_reason != Some(StopReason::StepTol) {
            return Err(Error::NoConvergence { iterations, estimate: tr.last().step_norm });
        }
    }
    let x_iterative = tr.x_final;
    let signature = problem.reg.signature(&x_iterative, SIGNATURE_TOL)?;
    let residual = optimality_residual(problem, &x_iterative)?;
    let mut out = Reference {
        x: x_iterative.clone(),
        signature,
        x_iterative,
        iterations,
        refined: false,
        residual,
    };
    if problem.reg.is_polyhedral() {
        if let Ok(xr) = finite_termination(problem, &out.x, &out.signature) {
            let res = optimality_residual(problem, &xr)?;
            let sig = problem.reg.signature(&xr, SIGNATURE_TOL)?;
            if sig == out.signature && res <= out.residual {
                out.x = xr;
                out.residual = res;
                out.refined = true;
            }
        }
    }
    Ok(out)
}

/// Closed-form minimizer on the identified tangent space of a polyhedral `R`:
/// `x = B (BᵀLᵀLB)⁻¹ (BᵀLᵀy − Bᵀe)`, with `e` the Riemannian gradient of `R` at `x_K`.
pub fn finite_termination(problem: &Problem, x_k: &DVector<f64>, sig: &ManifoldSignature) -> Result<DVector<f64>> {
    check_len(problem.dim(), x_k.len())?;
    if !problem.reg.is_polyhedral() {
        return Err(Error::Unsupported("finite termination needs a polyhedral regularizer".into()));
    }
    let b = problem.reg.tangent_basis(sig)?.basis;
    if b.ncols() == 0 {
        return Ok(DVector::zeros(problem.dim()));
    }
    let h = problem.smooth.restricted_hessian(&b)?;
    let e = problem.reg.riemannian_gradient(x_k, sig)?;
    let lty = problem.smooth.op().adjoint(problem.smooth.data())?;
    let rhs = b.tr_mul(&(lty - e));
    let chol = h
        .cholesky()
        .ok_or_else(|| Error::RestrictedInjectivity(format!("restricted Hessian on {sig} is singular")))?;
    Ok(&b * chol.solve(&rhs))
}

/// Least-squares fit of `log err_k` against `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    /// Per-iteration contraction `exp(slope)`.
    pub factor: f64,
    pub slope: f64,
    /// Fitted on the local maxima only (non-monotone window).
    pub envelope: bool,
    pub points: usize,
    pub first: usize,
    pub last: usize,
}

fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Window `[start, last]` where `last` is the final index with `err > floor`.
fn window(errs: &[f64], start: usize, floor: f64) -> Result<(usize, usize)> {
    let last = errs.iter().rposition(|&e| e > floor);
    match last {
        Some(last) if last >= start && last - start + 1 >= MIN_WINDOW => Ok((start, last)),
        _ => Err(Error::InvalidInput(format!(
            "fewer than {MIN_WINDOW} errors above {floor:e} from index {start}"
        ))),
    }
}

/// Observed local rate of `errs` (indexed by iteration) from `start` on.
///
/// Monotone windows are fitted point by point; otherwise only on the local maxima,
/// i.e. the upper envelope of the oscillation. With fewer than three maxima the
/// running maximum from the right stands in for the envelope.
pub fn observed_rate(errs: &[f64], start: usize, floor: f64) -> Result<RateFit> {
    let (first, last) = window(errs, start, floor)?;
    let w = &errs[first..=last];
    let monotone = w.windows(2).all(|p| p[1] <= p[0]);
    let pts: Vec<(f64, f64)> = if monotone {
        w.iter()
            .enumerate()
            .filter(|(_, e)| **e > floor)
            .map(|(i, e)| ((first + i) as f64, e.ln()))
            .collect()
    } else {
        let peaks: Vec<(f64, f64)> = (1..w.len() - 1)
            .filter(|&i| w[i] >= w[i - 1] && w[i] >= w[i + 1] && w[i] > floor)
            .map(|i| ((first + i) as f64, w[i].ln()))
            .collect();
        if peaks.len() >= 3 {
            peaks
        } else {
            // window shorter than a few periods: non-increasing upper envelope
            let mut env = w.to_vec();
            for i in (0..env.len() - 1).rev() {
                env[i] = env[i].max(env[i + 1]);
            }
            env.iter()
                .enumerate()
                .filter(|(_, e)| **e > floor)
                .map(|(i, e)| ((first + i) as f64, e.ln()))
                .collect()
        }
    };
    if pts.len() < 3 {
        return Err(Error::InvalidInput(format!("only {} usable points in the window", pts.len())));
    }
    let slope = ls_slope(&pts);
    Ok(RateFit { factor: slope.exp(), slope, envelope: !monotone, points: pts.len(), first, last })
}

/// Median spacing of the local minima of `errs` inside the fitting window.
pub fn oscillation_spacing(errs: &[f64], start: usize, floor: f64) -> Option<f64> {
    let (first, last) = window(errs, start, floor).ok()?;
    let w = &errs[first..=last];
    let mins: Vec<usize> = (1..w.len() - 1).filter(|&i| w[i] < w[i - 1] && w[i] <= w[i + 1]).collect();
    if mins.len() < 3 {
        return None;
    }
    let mut gaps: Vec<f64> = mins.windows(2).map(|p| (p[1] - p[0]) as f64).collect();
    gaps.sort_by(f64::total_cmp);
    let h = gaps.len() / 2;
    Some(if gaps.len() % 2 == 1 { gaps[h] } else { 0.5 * (gaps[h - 1] + gaps[h]) })
}

/// `min (Φ(x⋆+δ) − Φ(x⋆))/‖δ‖²` over `n_samples` seeded `δ` uniform in the ball of
/// the given radius. A negative value means `x⋆` is not a minimizer.
pub fn quadratic_growth_check(
    problem: &Problem,
    x_star: &DVector<f64>,
    n_samples: usize,
    radius: f64,
    seed: u64,
) -> Result<f64> {
    check_len(problem.dim(), x_star.len())?;
    if n_samples == 0 || !(radius > 0.0) {
        return Err(Error::InvalidInput("need samples and a positive radius".into()));
    }
    let n = problem.dim();
    let op = problem.smooth.op();
    let r = problem.smooth.data() - op.apply(x_star)?;
    let r0 = problem.reg.eval(x_star)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..n_samples {
        let dir = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
        let u: f64 = rng.random();
        let delta = dir * (radius * u.powf(1.0 / n as f64));
        let ld = op.apply(&delta)?;
        // ½‖r − Lδ‖² − ½‖r‖² without the cancellation
        let df = -r.dot(&ld) + 0.5 * ld.norm_squared();
        let dr = problem.reg.eval(&(x_star + &delta))? - r0;
        worst = worst.min((df + dr) / delta.norm_squared());
    }
    Ok(worst)
}

/// A labelled schedule with its restart policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Method {
    pub label: String,
    pub schedule: Schedule,
    #[serde(default)]
    pub restart: Option<RestartRule>,
}

/// FB, iFB (p-rule tending to `√5 − 2 − 10⁻³`), FISTA with `q ∈ {2, 50}`, and
/// FISTA `q = 2` with gradient restart, all at `γ = β`.
pub fn standard_methods(beta: f64) -> Vec<Method> {
    let a = 5f64.sqrt() - 2.0 - 1e-3;
    let m = |label: &str, schedule, restart| Method { label: label.into(), schedule, restart };
    vec![
        m("fb", Schedule::fb(beta), None),
        m("ifb", Schedule::p_rule(4.0 * a, beta), None),
        m("fista-q2", Schedule::fista(2.0, beta), None),
        m("fista-q50", Schedule::fista(50.0, beta), None),
        m("fista-q2-restart", Schedule::fista(2.0, beta), Some(RestartRule::Gradient)),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareOptions {
    #[serde(default = "default_compare_iter")]
    pub max_iter: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    /// Runs stop once `‖x_k − x⋆‖ ≤ err_floor·max(1, ‖x⋆‖)`, and fits ignore smaller errors.
    #[serde(default = "default_err_floor")]
    pub err_floor: f64,
}

fn default_compare_iter() -> usize {
    20_000
}

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

fn default_err_floor() -> f64 {
    1e-12
}

impl Default for CompareOptions {
    fn default() -> Self {
        CompareOptions { max_iter: default_compare_iter(), burn_in: DEFAULT_BURN_IN, err_floor: default_err_floor() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OscillationCheck {
    pub predicted_period: f64,
    pub measured_spacing: Option<f64>,
    /// `|measured − predicted| ≤ 1`.
    pub within_one: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FiniteTerminationCheck {
    pub k: usize,
    pub distance_to_reference: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub method: Method,
    pub iterations: usize,
    pub stop_reason: Option<StopReason>,
    pub identification: IdentificationReport,
    pub rates: Option<RateReport>,
    pub fit: Option<RateFit>,
    pub observed_slope: Option<f64>,
    /// `log ρ(M)` at the schedule's limiting parameters.
    pub predicted_slope: Option<f64>,
    pub slope_rel_error: Option<f64>,
    pub oscillation: Option<OscillationCheck>,
    pub finite_termination: Option<FiniteTerminationCheck>,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub trace: Trace,
}

/// Runs every method from `x0 = 0` and compares observed and predicted local rates.
pub fn compare(
    problem: &Problem,
    methods: &[Method],
    reference: &Reference,
    opts: &CompareOptions,
) -> Result<Vec<ExperimentReport>> {
    let one = |m: &Method| compare_one(problem, m, reference, opts);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        methods.par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        methods.iter().map(one).collect()
    }
}

fn compare_one(problem: &Problem, method: &Method, reference: &Reference, opts: &CompareOptions) -> Result<ExperimentReport> {
    let x_star = &reference.x;
    let sig = &reference.signature;
    let floor = opts.err_floor * x_star.norm().max(1.0);
    let run_opts = RunOptions {
        stop: StopRule { max_iter: opts.max_iter, step_tol: None, ref_tol: Some(floor) },
        x_ref: Some(x_star.clone()),
        restart: method.restart,
        keep_iterates: problem.reg.is_polyhedral(),
        sig_tol: SIGNATURE_TOL,
    };
    let x0 = DVector::zeros(problem.dim());
    let mut trace = solver::run(problem, &method.schedule, &x0, &run_opts)?;
    let gamma = method.schedule.gamma;
    let ident = identification::report(problem, &trace, &x0, x_star, sig, gamma)?;
    let mut notes = Vec::new();
    if !method.schedule.sequence_convergence_known() {
        notes.push("sequence convergence not established for this schedule".into());
    }
    let (a, b) = method.schedule.limit_inertia();
    let rates = rates::build_restricted(problem, x_star, sig, gamma)
        .and_then(|m| rates::rate_report(&m, a, b, problem.reg.is_polyhedral()));
    let rates = match rates {
        Ok(r) => Some(r),
        Err(e) => {
            notes.push(format!("rate prediction unavailable: {e}"));
            None
        }
    };
    let errs = trace.errors().unwrap_or_default();
    let fit = match ident.k_observed {
        Some(k) => match observed_rate(&errs, k + opts.burn_in, floor) {
            Ok(f) => Some(f),
            Err(e) => {
                notes.push(format!("no observed rate: {e}"));
                None
            }
        },
        None => {
            notes.push("manifold not identified within the budget".into());
            None
        }
    };
    let predicted_slope = rates.as_ref().map(|r| r.rho.ln());
    let observed_slope = fit.map(|f| f.slope);
    let slope_rel_error = match (observed_slope, predicted_slope) {
        (Some(o), Some(p)) if p != 0.0 => Some(((o - p) / p).abs()),
        _ => None,
    };
    let oscillation = match (&rates, ident.k_observed) {
        (Some(r), Some(k)) => r.oscillation_period.map(|p| {
            let s = oscillation_spacing(&errs, k + opts.burn_in, floor);
            OscillationCheck { predicted_period: p, measured_spacing: s, within_one: s.is_some_and(|s| (s - p).abs() <= 1.0) }
        }),
        _ => None,
    };
    let finite = match (ident.k_observed, trace.iterates.as_ref()) {
        (Some(k), Some(it)) => {
            let xt = finite_termination(problem, &it[k], sig)?;
            Some(FiniteTerminationCheck {
                k,
                distance_to_reference: (&xt - x_star).norm(),
                residual: optimality_residual(problem, &xt)?,
            })
        }
        _ => None,
    };
    trace.iterates = None;
    Ok(ExperimentReport {
        method: method.clone(),
        iterations: trace.iterations(),
        stop_reason: trace.meta.stop_reason,
        identification: ident,
        rates,
        fit,
        observed_slope,
        predicted_slope,
        slope_rel_error,
        oscillation,
        finite_termination: finite,
        notes,
        trace,
    })
}

/// Everything produced by one end-to-end experiment.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentOutput {
    pub instance: InstanceSpec,
    pub lambda: f64,
    pub noise_norm: f64,
    pub beta: f64,
    /// Gaussian sample-size bound at `c = 1.1` (absent for total variation).
    pub required_measurements: Option<f64>,
    pub reference_signature: String,
    pub reference_residual: f64,
    pub reference_refined: bool,
    pub recovery_error: f64,
    pub quadratic_growth: Option<f64>,
    pub reports: Vec<ExperimentReport>,
}

/// Generates the instance, solves it to `tol`, and compares `methods`
/// ([`standard_methods`] when `None`).
pub fn run_experiment(
    spec: &InstanceSpec,
    methods: Option<Vec<Method>>,
    tol: f64,
    opts: &CompareOptions,
) -> Result<ExperimentOutput> {
    let inst = gen_instance(spec)?;
    let p = &inst.problem;
    let reference = reference_solution(p, tol)?;
    let methods = methods.unwrap_or_else(|| standard_methods(p.beta()));
    let reports = compare(p, &methods, &reference, opts)?;
    Ok(ExperimentOutput {
        instance: spec.clone(),
        lambda: inst.lambda,
        noise_norm: inst.noise_norm,
        beta: p.beta(),
        required_measurements: required_measurements(&spec.structure, 1.1).ok(),
        reference_signature: reference.signature.to_string(),
        reference_residual: reference.residual,
        reference_refined: reference.refined,
        recovery_error: (&reference.x - &inst.x_ob).norm(),
        quadratic_growth: quadratic_growth_check(p, &reference.x, 1000, 1e-3, spec.seed).ok(),
        reports,
    })
}

/// Plot series: `k, observed ‖x_k − x⋆‖, predicted err_K·ρ^{k−K}` (empty
/// before identification or without a prediction).
pub fn write_plot_csv<W: Write>(report: &ExperimentReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "observed", "predicted"])?;
    let errs = report.trace.errors().unwrap_or_default();
    let anchor = report
        .identification
        .k_observed
        .zip(report.rates.as_ref())
        .and_then(|(k, r)| errs.get(k).map(|&e| (k, e, r.rho)));
    for (k, e) in errs.iter().enumerate() {
        let pred = match anchor {
            Some((k0, e0, rho)) if k >= k0 => format!("{:e}", e0 * rho.powi((k - k0) as i32)),
            _ => String::new(),
        };
        w.write_record([k.to_string(), format!("{e:e}"), pred])?;
    }
    w.flush()?;
    Ok(())
}
