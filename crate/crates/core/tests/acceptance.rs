//! Acceptance suite: one `PASS`/`FAIL` line per criterion, tolerances pinned.
//!
//! Run with `cargo test -p fbkit --test acceptance -- --test-threads=1` to get the
//! lines in criterion order.

use std::f64::consts::PI;
use std::fs::OpenOptions;
use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use fbkit::experiments::{
    compare, finite_termination, gen_instance, observed_rate, optimality_residual, oscillation_spacing, preset,
    quadratic_growth_check, reference_solution, CompareOptions, ExperimentOutput, Method, Reference, PRESET_NAMES,
};
use fbkit::identification;
use fbkit::operators::{LeastSquares, LinearOp};
use fbkit::principal_cosines;
use fbkit::rates::{self, RestrictedMatrices};
use fbkit::regularizers::{project_l1_ball, Regularizer, SIGNATURE_TOL};
use fbkit::solver::{self, check_unconditional, unconditional_margin, Problem, RunOptions, Schedule, StopRule};
use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Written to the stderr device, past the harness capture, so the line shows
/// without `--nocapture`.
fn verdict(id: u32, title: &str, pass: bool, detail: &str) {
    let line = format!("[{}] criterion {id:>2}: {title} | {detail}\n", if pass { "PASS" } else { "FAIL" });
    let direct = OpenOptions::new().append(true).open("/dev/stderr").and_then(|mut f| f.write_all(line.as_bytes()));
    if direct.is_err() {
        eprint!("{line}");
    }
}

static EXPERIMENTS: [OnceLock<ExperimentOutput>; 5] = [const { OnceLock::new() }; 5];

/// Full comparison on a preset, computed once per test binary.
fn experiment(name: &str) -> &'static ExperimentOutput {
    let i = PRESET_NAMES.iter().position(|p| *p == name).unwrap();
    EXPERIMENTS[i].get_or_init(|| {
        fbkit::experiments::run_experiment(&preset(name).unwrap(), None, 1e-14, &CompareOptions::default()).unwrap()
    })
}

fn report<'a>(out: &'a ExperimentOutput, label: &str) -> &'a fbkit::experiments::ExperimentReport {
    out.reports.iter().find(|r| r.method.label == label).unwrap()
}

fn lasso_with_reference() -> (Problem, Reference) {
    let inst = gen_instance(&preset("lasso").unwrap()).unwrap();
    let r = reference_solution(&inst.problem, 1e-14).unwrap();
    (inst.problem, r)
}

#[test]
fn criterion_01_fb_rate_on_lasso() {
    let t = Instant::now();
    let (p, r) = lasso_with_reference();
    let fb = vec![Method { label: "fb".into(), schedule: Schedule::fb(p.beta()), restart: None }];
    let rep = compare(&p, &fb, &r, &CompareOptions::default()).unwrap().remove(0);
    let secs = t.elapsed().as_secs_f64();
    let k = rep.identification.k_observed;
    let err = rep.slope_rel_error.unwrap_or(f64::INFINITY);
    let eta_bar = rep.rates.as_ref().map(|r| r.eta_max).unwrap_or(f64::NAN);
    let pass = k.is_some() && err <= 0.05 && secs <= 30.0;
    verdict(
        1,
        "FB rate on polyhedral LASSO",
        pass,
        &format!(
            "K = {k:?}, η̄ = {eta_bar:.6}, observed factor = {:.6}, log-slope rel. error = {err:.2e} (≤ 0.05), {secs:.2} s (≤ 30)",
            rep.fit.map(|f| f.factor).unwrap_or(f64::NAN)
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_02_fista_limit_rate() {
    let (p, r) = lasso_with_reference();
    let m = rates::build_restricted(&p, &r.x, &r.signature, p.beta()).unwrap();
    let etas = rates::eta_spectrum(&m).unwrap();
    let target = etas.last().unwrap().sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d0 = DVector::from_fn(2 * m.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let tr = rates::linearized_trace(&rates::explicit_m(&m, 1.0, 1.0), &d0, 3000);
    let lin = observed_rate(&tr, 200, 0.0).unwrap();
    let lin_err = (lin.factor - target).abs() / target;

    let out = experiment("lasso");
    let q50 = report(out, "fista-q50");
    let fit = q50.fit.unwrap();
    let predicted = q50.rates.as_ref().unwrap().rho;
    let nl_err = (fit.factor - predicted).abs() / predicted;
    let pass = lin_err <= 0.01 && nl_err <= 0.10;
    verdict(
        2,
        "FISTA-limit rate √η̄",
        pass,
        &format!(
            "linearized envelope {:.6} vs √η̄ = {target:.6} (rel. {lin_err:.2e} ≤ 0.01); FISTA q=50 envelope {:.6} vs {predicted:.6} (rel. {nl_err:.3} ≤ 0.10; log-slope rel. {:.2})",
            lin.factor,
            fit.factor,
            q50.slope_rel_error.unwrap_or(f64::NAN)
        ),
    );
    assert!(pass);
}

fn random_system(rng: &mut ChaCha8Rng, d: usize, curved: bool) -> RestrictedMatrices {
    let q = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal)).qr().q();
    let hs = DVector::from_fn(d, |_, _| rng.random_range(0.05..1.9));
    let h = &q * DMatrix::from_diagonal(&hs) * q.transpose();
    let h = (&h + h.transpose()) * 0.5;
    let u = if curved {
        let c = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let u = &c * c.transpose() * rng.random_range(0.01..0.5);
        (&u + u.transpose()) * 0.5
    } else {
        DMatrix::zeros(d, d)
    };
    RestrictedMatrices::from_parts(h, u, 1.0, 0.05, 1.0).unwrap()
}

/// Worst distance of a greedy nearest matching between two multisets.
fn multiset_distance(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for x in a {
        let (j, d) = b
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, y)| (j, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .unwrap();
        used[j] = true;
        worst = worst.max(d);
    }
    worst
}

#[test]
fn criterion_03_eigenvalue_map_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst, mut complex, mut unequal) = (0.0f64, 0usize, 0usize);
    for i in 0..50 {
        let d = rng.random_range(1..=8);
        // b ≠ a only with W = Id
        let equal = i % 2 == 0;
        let m = random_system(&mut rng, d, equal);
        let a = rng.random_range(0.0..1.0);
        let b = if equal { a } else { rng.random_range(0.0..1.0) };
        unequal += usize::from(!equal);
        let roots: Vec<Complex<f64>> = rates::eta_spectrum(&m)
            .unwrap()
            .iter()
            .flat_map(|&e| {
                let (s1, s2) = rates::sigma_roots(e, a, b);
                [s1, s2]
            })
            .collect();
        complex += roots.iter().filter(|z| z.im != 0.0).count();
        let ev = rates::explicit_m_eigenvalues(&m, a, b).unwrap();
        worst = worst.max(multiset_distance(&roots, &ev));
    }
    let pass = worst <= 1e-9 && complex > 0;
    verdict(
        3,
        "eigenvalue-map oracle",
        pass,
        &format!("50 systems ({unequal} with b ≠ a, W = Id), {complex} complex roots, worst mismatch {worst:.2e} (≤ 1e-9)"),
    );
    assert!(pass);
}

fn local_minima_spacing(errs: &[f64]) -> Option<f64> {
    oscillation_spacing(errs, 0, 0.0)
}

/// Separable LASSO `L = Q diag(l)` with `β = 1` and restricted spectrum
/// `η = 1 − l²` on the support; the smallest `l² = 0.25` gives `η̄ = 0.75`.
fn lasso_with_eta_075() -> Problem {
    let n = 20;
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let q = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal)).qr().q();
    let l2: [f64; 5] = [0.25, 0.6, 0.7, 0.9, 1.0];
    let l = DVector::from_fn(n, |i, _| if i < l2.len() { l2[i].sqrt() } else { 1.0 });
    let op = &q * DMatrix::from_diagonal(&l);
    let mut x_ob = DVector::zeros(n);
    for i in 0..l2.len() {
        x_ob[i] = if i % 2 == 0 { 1.0 } else { -1.2 };
    }
    let y = &op * &x_ob;
    let f = LeastSquares::with_beta(LinearOp::Dense(op), y, 1.0).unwrap();
    Problem::new(f, Regularizer::l1(n, 0.01).unwrap()).unwrap()
}

#[test]
fn criterion_04_oscillation_law() {
    let (a, eta_bar) = (0.6, 0.75);
    let (s, _) = rates::sigma_roots(eta_bar, a, a);
    let theta = s.im.abs().atan2(s.re);
    let period = PI / theta;
    let sigma_ok = (s.re - 0.6).abs() < 1e-15 && (s.im.abs() - 0.3).abs() < 1e-15;

    // linearized dynamics on a diagonal system with η = {0.75, 0.5, 0.2}
    let m = RestrictedMatrices::from_parts(
        DMatrix::from_diagonal(&DVector::from_column_slice(&[0.25, 0.5, 0.8])),
        DMatrix::zeros(3, 3),
        1.0,
        0.25,
        1.0,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d0 = DVector::from_fn(6, |_, _| rng.sample::<f64, _>(StandardNormal));
    let lin = rates::linearized_trace(&rates::explicit_m(&m, a, a), &d0, 300);
    let lin_spacing = local_minima_spacing(&lin[20..]).unwrap_or(f64::NAN);

    // the same limits on a nonlinear LASSO run
    let p = lasso_with_eta_075();
    let r = reference_solution(&p, 1e-14).unwrap();
    let mr = rates::build_restricted(&p, &r.x, &r.signature, 1.0).unwrap();
    let nl_eta = *rates::eta_spectrum(&mr).unwrap().last().unwrap();
    let opts = RunOptions {
        stop: StopRule { max_iter: 5000, step_tol: None, ref_tol: Some(1e-13) },
        x_ref: Some(r.x.clone()),
        ..Default::default()
    };
    let tr = solver::run(&p, &Schedule::constant(a, a, 1.0), &DVector::zeros(p.dim()), &opts).unwrap();
    let k = identification::detect_identification(&tr, &r.signature).unwrap_or(usize::MAX);
    let errs = tr.errors().unwrap();
    let nl_spacing = oscillation_spacing(&errs, k.min(errs.len()), 1e-13).unwrap_or(f64::NAN);
    let pass = sigma_ok
        && (nl_eta - eta_bar).abs() < 1e-12
        && (lin_spacing - period).abs() <= 1.0
        && (nl_spacing - period).abs() <= 2.0;
    verdict(
        4,
        "oscillation law",
        pass,
        &format!(
            "σ_max = {:.4}{:+.4}i, π/θ = {period:.4}; linearized spacing {lin_spacing} (±1); LASSO (η̄ = {nl_eta:.6}, K = {k}) spacing {nl_spacing} (±2)",
            s.re, s.im
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_05_optimal_inertia_minimum() {
    let (p, r) = lasso_with_reference();
    let beta = p.beta();
    // warm start on the identified manifold
    let fb_opts = RunOptions { x_ref: Some(r.x.clone()), keep_iterates: true, ..Default::default() };
    let fb = solver::run(&p, &Schedule::fb(beta), &DVector::zeros(p.dim()), &fb_opts).unwrap();
    let k = identification::detect_identification(&fb, &r.signature).unwrap();
    let x_start = fb.iterates.as_ref().unwrap()[k].clone();
    let m = rates::build_restricted(&p, &r.x, &r.signature, beta).unwrap();
    let eta_bar = *rates::eta_spectrum(&m).unwrap().last().unwrap();
    let (a_opt, rho_opt) = rates::optimal_inertia(eta_bar, None);
    // the window has to reach well below 1e-12 to cover a few periods near a_opt
    let floor = 1e-13 * r.x.norm().max(1.0);
    let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.05).collect();
    let observed: Vec<f64> = grid
        .iter()
        .map(|&a| {
            let opts = RunOptions {
                stop: StopRule { max_iter: 50_000, step_tol: None, ref_tol: Some(floor) },
                x_ref: Some(r.x.clone()),
                ..Default::default()
            };
            let tr = solver::run(&p, &Schedule::constant(a, a, beta), &x_start, &opts).unwrap();
            observed_rate(&tr.errors().unwrap(), 0, floor)
                .map(|f| f.factor)
                .unwrap_or(f64::INFINITY)
        })
        .collect();
    let (i_min, best) = observed
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .map(|(i, v)| (i, *v))
        .unwrap();
    let a_best = grid[i_min];
    let rel = (best - rho_opt).abs() / rho_opt;
    let pass = (a_best - a_opt).abs() <= 0.05 + 1e-12 && rel <= 0.05;
    verdict(
        5,
        "optimal-inertia minimum",
        pass,
        &format!(
            "η̄ = {eta_bar:.6}, a_opt = {a_opt:.4}, argmin over grid = {a_best:.2} (±0.05); min observed {best:.5} vs 1 − √(1 − η̄) = {rho_opt:.5} (rel. {rel:.3} ≤ 0.05)"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_06_finite_termination() {
    let mut lines = Vec::new();
    let mut pass = true;
    for name in ["lasso", "linf", "tv"] {
        let out = experiment(name);
        let inst = gen_instance(&preset(name).unwrap()).unwrap();
        let r = reference_solution(&inst.problem, 1e-14).unwrap();
        let checks: Vec<_> = out.reports.iter().filter_map(|rep| rep.finite_termination.map(|f| (rep, f))).collect();
        let worst = checks.iter().map(|(_, f)| f.distance_to_reference).fold(0.0, f64::max);
        let worst_res = checks.iter().map(|(_, f)| f.residual).fold(0.0, f64::max);
        // one more from an identified iterate of a fresh run, against the unrefined solve
        let (rep, _) = checks.first().expect("no method identified the manifold");
        let opts = RunOptions { keep_iterates: true, x_ref: Some(r.x.clone()), restart: rep.method.restart, ..Default::default() };
        let stop = StopRule { max_iter: rep.iterations, step_tol: None, ref_tol: None };
        let tr = solver::run(&inst.problem, &rep.method.schedule, &DVector::zeros(inst.problem.dim()), &RunOptions { stop, ..opts })
            .unwrap();
        let k = identification::detect_identification(&tr, &r.signature).unwrap();
        let xt = finite_termination(&inst.problem, &tr.iterates.as_ref().unwrap()[k], &r.signature).unwrap();
        let d_iter = (&xt - &r.x_iterative).norm();
        let res = optimality_residual(&inst.problem, &xt).unwrap();
        let ok = !checks.is_empty() && worst <= 1e-10 && worst_res <= 1e-8 && (&xt - &r.x).norm() <= 1e-10 && res <= 1e-8;
        pass &= ok;
        lines.push(format!(
            "{name}: {} runs identified, max ‖x_FT − x_ref‖ = {worst:.1e} (≤ 1e-10), residual {:.1e}; from {} at K = {k}: vs unrefined solve {d_iter:.1e}",
            checks.len(),
            worst_res.max(res),
            rep.method.label
        ));
    }
    verdict(6, "finite termination", pass, &lines.join("; "));
    assert!(pass);
}

#[test]
fn criterion_07_identification_bounds() {
    let mut lines = Vec::new();
    let mut pass = true;
    for name in PRESET_NAMES {
        let fb = report(experiment(name), "fb");
        let id = &fb.identification;
        let hyp = id.nd_margin > 0.0 && id.ri_alpha > 0.0;
        match (id.k_bound_separable, id.k_observed) {
            (Some(b), Some(k)) if hyp => {
                let ok = (k as f64) <= b;
                pass &= ok;
                lines.push(format!("{name}: K = {k} ≤ {b:.3e} {}", if ok { "ok" } else { "VIOLATED" }));
            }
            (Some(b), None) if hyp => {
                pass = false;
                lines.push(format!("{name}: separable bound {b:.3e} but no identification"));
            }
            _ => lines.push(format!(
                "{name}: general bound {} (hypothesis verified: {}), K = {:?}",
                id.k_bound_general.map_or("undefined".into(), |b| format!("{b:.3e}")),
                id.general_hypothesis_verified,
                id.k_observed
            )),
        }
        pass &= !id.general_hypothesis_verified;
    }
    let separable = ["lasso", "group-lasso"].iter().all(|n| report(experiment(n), "fb").identification.k_bound_separable.is_some());
    pass &= separable;
    verdict(7, "identification bounds", pass, &lines.join("; "));
    assert!(pass);
}

fn grid_argmin_2d(lo: f64, hi: f64, steps: usize, f: impl Fn(f64, f64) -> f64) -> (f64, f64) {
    let h = (hi - lo) / steps as f64;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..=steps {
        for j in 0..=steps {
            let (x, y) = (lo + i as f64 * h, lo + j as f64 * h);
            let v = f(x, y);
            if v < best.0 {
                best = (v, x, y);
            }
        }
    }
    (best.1, best.2)
}

#[test]
fn criterion_08_prox_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 12;
    let kinds = [
        Regularizer::l1(n, 0.7).unwrap(),
        Regularizer::l12_uniform(n, 3, 0.7).unwrap(),
        Regularizer::linf(n, 0.7).unwrap(),
        Regularizer::tv1d(n, 0.7).unwrap(),
        Regularizer::nuclear(3, 4, 0.7).unwrap(),
    ];
    let mut worst = 0.0f64;
    for r in &kinds {
        for _ in 0..200 {
            let gamma = rng.random_range(0.05..3.0);
            let scale = rng.random_range(0.1..5.0);
            let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal) * scale);
            let p = r.prox(gamma, &z).unwrap();
            worst = worst.max(r.subdiff_distance(&p, &((&z - &p) / gamma), SIGNATURE_TOL).unwrap());
        }
    }
    // Moreau identity for the ℓ∞ prox and the ℓ1-ball projection
    let linf = &kinds[2];
    let (mut moreau_worst_ulps, mut bitwise) = (0.0f64, 0usize);
    for _ in 0..200 {
        let gamma = rng.random_range(0.1..4.0);
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal) * 2.0);
        let p = linf.prox(gamma, &z).unwrap();
        let q = project_l1_ball(z.as_slice(), gamma * 0.7);
        let mut exact = true;
        for i in 0..n {
            let dev = (p[i] + q[i] - z[i]).abs();
            exact &= dev == 0.0;
            if z[i] != 0.0 {
                moreau_worst_ulps = moreau_worst_ulps.max(dev / (f64::EPSILON * z[i].abs()));
            }
        }
        bitwise += usize::from(exact);
    }
    // the five tabulated examples against grid minimization
    let v = |s: &[f64]| DVector::from_column_slice(s);
    let mut examples = 0;
    let l1 = Regularizer::l1(2, 1.0).unwrap().prox(1.0, &v(&[3.0, -0.5])).unwrap();
    let g = grid_argmin_2d(-5.0, 5.0, 1000, |x, y| 0.5 * ((x - 3.0).powi(2) + (y + 0.5).powi(2)) + x.abs() + y.abs());
    examples += usize::from(l1 == v(&[2.0, 0.0]) && (g.0 - 2.0).abs() < 1e-2 && g.1.abs() < 1e-2);
    examples += usize::from(kinds.iter().all(|r| r.prox(0.4, &DVector::zeros(n)).unwrap() == DVector::zeros(n)));
    let li = Regularizer::linf(2, 1.0).unwrap().prox(1.0, &v(&[2.0, 1.0])).unwrap();
    let g = grid_argmin_2d(-1.0, 3.0, 800, |x, y| 0.5 * ((x - 2.0).powi(2) + (y - 1.0).powi(2)) + x.abs().max(y.abs()));
    examples += usize::from(li == v(&[1.0, 1.0]) && (g.0 - 1.0).abs() < 1e-2 && (g.1 - 1.0).abs() < 1e-2);
    let tv = Regularizer::tv1d(2, 1.0).unwrap().prox(0.5, &v(&[0.0, 2.0])).unwrap();
    let g = grid_argmin_2d(-1.0, 3.0, 800, |x, y| 0.5 * (x * x + (y - 2.0).powi(2)) + 0.5 * (y - x).abs());
    examples += usize::from((&tv - v(&[0.5, 1.5])).amax() < 1e-14 && (g.0 - 0.5).abs() < 1e-2 && (g.1 - 1.5).abs() < 1e-2);
    let nu = Regularizer::nuclear(2, 2, 1.0).unwrap().prox(1.0, &v(&[3.0, 0.0, 0.0, 0.5])).unwrap();
    let g = grid_argmin_2d(-1.0, 4.0, 1000, |x, y| 0.5 * ((x - 3.0).powi(2) + (y - 0.5).powi(2)) + x.abs() + y.abs());
    examples += usize::from((&nu - v(&[2.0, 0.0, 0.0, 0.0])).amax() < 1e-12 && (g.0 - 2.0).abs() < 1e-2 && g.1.abs() < 1e-2);
    let pass = worst <= 1e-8 && moreau_worst_ulps <= 2.0 && examples == 5;
    verdict(
        8,
        "prox correctness suite",
        pass,
        &format!(
            "5 × 200 inclusion residuals, worst {worst:.1e} (≤ 1e-8); ℓ∞ Moreau: {bitwise}/200 bit-exact, worst deviation {moreau_worst_ulps:.2} ε|z| (one rounding); grid examples {examples}/5"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_convergence_region() {
    let a = 5f64.sqrt() - 2.0;
    let (_, m0) = unconditional_margin(a, a, 1.0, 1.0);
    let edge = check_unconditional(a, a, 1.0, 1.0, 0.0);
    let (_, m1) = unconditional_margin(a - 1e-3, a - 1e-3, 1.0, 1.0);
    let inside = check_unconditional(a - 1e-3, a - 1e-3, 1.0, 1.0, 0.0);
    let grid = rates::unit_grid(200);
    let count = |g: f64| rates::region_map(g, 0.0, &grid).iter().filter(|c| c.feasible).count();
    let (c1, c2) = (count(1.0), count(1.25));
    let pass = m0.abs() <= 4.0 * f64::EPSILON && !edge && m1 > 0.0 && inside && c2 < c1;
    verdict(
        9,
        "convergence-region consistency",
        pass,
        &format!(
            "margin at √5−2: {m0:.1e} (admitted: {edge}); at √5−2−1e-3: {m1:.3e} (admitted: {inside}); feasible cells on 200²: {c1} at γ = β, {c2} at γ = 1.25β"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_10_invariant_suites() {
    let mut failures = Vec::new();
    // Fejér monotonicity of FB on every preset
    for name in PRESET_NAMES {
        let errs = report(experiment(name), "fb").trace.errors().unwrap();
        let bad = errs.windows(2).filter(|w| w[1] > w[0] * (1.0 + 1e-12) + 1e-15).count();
        if bad > 0 {
            failures.push(format!("{name}: {bad} Fejér violations"));
        }
    }
    // restricted matrices, sharpness and quadratic growth at each reference solution
    let mut growth = Vec::new();
    for name in PRESET_NAMES {
        let inst = gen_instance(&preset(name).unwrap()).unwrap();
        let p = &inst.problem;
        let r = reference_solution(p, 1e-14).unwrap();
        let m = rates::build_restricted(p, &r.x, &r.signature, p.beta()).unwrap();
        let v = m.invariant_violations(1e-6).unwrap();
        if !v.is_empty() {
            failures.push(format!("{name}: {v:?}"));
        }
        let b = p.reg.tangent_basis(&r.signature).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let h = b.project(&DVector::from_fn(p.dim(), |_, _| rng.sample::<f64, _>(StandardNormal)));
        let x2 = p.reg.project_manifold(&r.signature, &(&r.x + h * (1e-6 * r.x.norm()))).unwrap();
        let sig2 = p.reg.signature(&x2, SIGNATURE_TOL).unwrap();
        let b2 = p.reg.tangent_basis(&sig2).unwrap();
        let min_cos = principal_cosines(&b.basis, &b2.basis).first().copied().unwrap_or(1.0);
        if sig2 != r.signature || min_cos < 1.0 - 1e-4 {
            failures.push(format!("{name}: tangent space not locally constant (cos {min_cos})"));
        }
        let c = quadratic_growth_check(p, &r.x, 1000, 1e-3, 10).unwrap();
        growth.push(format!("{name} {c:.2e}"));
        if !(c > 0.0) {
            failures.push(format!("{name}: quadratic growth constant {c}"));
        }
    }
    // linearized-slope law on seeded systems with a real, simple dominant root
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut checked, mut worst_slope) = (0, 0.0f64);
    while checked < 20 {
        let m = random_system(&mut rng, 5, checked % 2 == 0);
        let a = rng.random_range(0.0..0.3);
        let etas = rates::eta_spectrum(&m).unwrap();
        let mut mods: Vec<f64> = etas
            .iter()
            .flat_map(|&e| {
                let (s1, s2) = rates::sigma_roots(e, a, a);
                [s1.norm(), s2.norm()]
            })
            .collect();
        mods.sort_by(|x, y| y.total_cmp(x));
        let (rho, s) = rates::spectral_radius(&etas, a, a);
        if s.im != 0.0 || mods[1] > 0.95 * mods[0] || !(0.5..1.0).contains(&rho) {
            continue;
        }
        let d0 = DVector::from_fn(10, |_, _| rng.sample::<f64, _>(StandardNormal));
        let tr = rates::linearized_trace(&rates::explicit_m(&m, a, a), &d0, 500);
        let fit = observed_rate(&tr, 250, 0.0).unwrap();
        worst_slope = worst_slope.max((fit.slope - rho.ln()).abs());
        checked += 1;
    }
    if worst_slope > 1e-3 {
        failures.push(format!("linearized slope off by {worst_slope:.2e}"));
    }
    let pass = failures.is_empty();
    verdict(
        10,
        "invariant suites",
        pass,
        &format!(
            "Fejér, W/U PSD, sharpness on 5 presets; slope law on 20 systems (worst {worst_slope:.1e} ≤ 1e-3); quadratic growth c: {}{}",
            growth.join(", "),
            if pass { String::new() } else { format!("; failures: {failures:?}") }
        ),
    );
    assert!(pass);
}
