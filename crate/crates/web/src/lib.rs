//! wasm-bindgen exports for the static demo page in `www/`.

use fbkit::rates::{self, RestrictedMatrices};
use fbkit::solver::Branch;
use nalgebra::{DMatrix, DVector};
use wasm_bindgen::prelude::*;

/// `ρ(M)` with `b = a` on `points` evenly spaced values of `a ∈ [0, 1]`.
#[wasm_bindgen]
pub fn rate_curve(eta_bar: f64, points: usize) -> Vec<f64> {
    rates::rate_curve(eta_bar.clamp(0.0, 1.0), &rates::unit_grid(points))
        .into_iter()
        .map(|(_, rho)| rho)
        .collect()
}

/// `[ρ, oscillation period (NaN if none), a_opt, ρ_opt, converges]` at `(a, b)`.
#[wasm_bindgen]
pub fn scalar_rates(eta_bar: f64, a: f64, b: f64) -> Vec<f64> {
    let eta = eta_bar.clamp(0.0, 1.0);
    let (rho, sigma) = rates::spectral_radius(&[eta], a, b);
    let (a_opt, rho_opt) = rates::optimal_inertia(eta, (a != b).then_some(b));
    vec![
        rho,
        rates::oscillation_period(sigma).unwrap_or(f64::NAN),
        a_opt,
        rho_opt,
        f64::from(u8::from(rates::convergence_condition(eta, a, b))),
    ]
}

/// Row-major `points × points` codes over `(a, b) ∈ [0, 1]²`: 0 infeasible,
/// 1 feasible on the first branch, 2 feasible on the second.
#[wasm_bindgen]
pub fn region_map(gamma_over_beta: f64, tau: f64, points: usize) -> Vec<u8> {
    rates::region_map(gamma_over_beta, tau, &rates::unit_grid(points))
        .iter()
        .map(|c| match (c.feasible, c.branch) {
            (false, _) => 0,
            (true, Branch::First) => 1,
            (true, Branch::Second) => 2,
        })
        .collect()
}

/// `‖d_k‖` of the linearized iteration on a diagonal system with restricted
/// spectrum `etas` (each in `[−1, 1]`), started from the all-ones vector.
#[wasm_bindgen]
pub fn linearized_trace(etas: &[f64], a: f64, b: f64, steps: usize) -> Result<Vec<f64>, JsError> {
    diagonal_trace(etas, a, b, steps).map_err(|e| JsError::new(&e))
}

/// Native entry point behind [`linearized_trace`].
pub fn diagonal_trace(etas: &[f64], a: f64, b: f64, steps: usize) -> Result<Vec<f64>, String> {
    if etas.is_empty() {
        return Err("need at least one eigenvalue".into());
    }
    let d = etas.len();
    let h = DMatrix::from_diagonal(&DVector::from_iterator(d, etas.iter().map(|e| 1.0 - e.clamp(-1.0, 1.0))));
    let alpha = h.diagonal().min().max(f64::MIN_POSITIVE);
    let m = RestrictedMatrices::from_parts(h, DMatrix::zeros(d, d), 1.0, alpha, 1.0).map_err(|e| e.to_string())?;
    let d0 = DVector::from_element(2 * d, 1.0);
    Ok(rates::linearized_trace(&rates::explicit_m(&m, a, b), &d0, steps))
}
