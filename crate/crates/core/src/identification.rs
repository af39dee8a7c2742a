//! Finite activity identification: detection on traces, the non-degeneracy and
//! restricted-injectivity checks at a solution, and a-priori iteration bounds.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::sym_eigenvalues;
use crate::regularizers::{ManifoldSignature, TangentBasis};
use crate::solver::{Problem, Trace};

/// First `K` such that every recorded signature from `K` on equals `sig_ref`.
/// `None` when the last record differs (or the trace is empty).
pub fn detect_identification(trace: &Trace, sig_ref: &ManifoldSignature) -> Option<usize> {
    detect_in(trace.records.iter().map(|r| &r.signature), sig_ref)
        .map(|i| trace.records[i].k)
}

/// Index form of [`detect_identification`] over any signature sequence.
pub fn detect_in<'a>(
    sigs: impl DoubleEndedIterator<Item = &'a ManifoldSignature> + ExactSizeIterator,
    sig_ref: &ManifoldSignature,
) -> Option<usize> {
    let n = sigs.len();
    let tail = sigs.rev().take_while(|s| *s == sig_ref).count();
    (tail > 0).then(|| n - tail)
}

/// Restricted-injectivity modulus `α = λ_min(Bᵀ LᵀL B)`; (RI) holds iff `α > 0`.
/// An empty tangent space gives `+∞` (the condition is void).
pub fn check_ri(problem: &Problem, basis: &TangentBasis) -> Result<f64> {
    if basis.dim() == 0 {
        return Ok(f64::INFINITY);
    }
    let h = problem.smooth.restricted_hessian(&basis.basis)?;
    let ev = sym_eigenvalues(&h)?;
    ev.first()
        .copied()
        .map(|a| a.max(0.0))
        .ok_or_else(|| Error::Numeric("empty spectrum".into()))
}

/// Non-degeneracy margin `dist(−∇F(x), rbd ∂R(x))`; positive iff (ND) holds.
pub fn check_nd(problem: &Problem, x: &DVector<f64>, sig: &ManifoldSignature) -> Result<f64> {
    let g = problem.grad(x)?;
    problem.reg.nd_margin(x, sig, &g)
}

/// `‖x₀ − x⋆‖² / (ε² dist²)`.
pub fn identification_bound_general(dist0: f64, eps_lo: f64, nd_dist: f64) -> Result<f64> {
    if !(nd_dist > 0.0) {
        return Err(Error::UndefinedBound(format!("non-degeneracy margin {nd_dist} is not positive")));
    }
    if !(eps_lo > 0.0) || !(dist0 >= 0.0) {
        return Err(Error::InvalidInput(format!("need dist0 ≥ 0 and eps > 0, got {dist0}, {eps_lo}")));
    }
    Ok(dist0 * dist0 / (eps_lo * eps_lo * nd_dist * nd_dist))
}

/// `‖x₀ − x⋆‖² / (ε² Σ mᵢ²)` over the inactive blocks' margins.
pub fn identification_bound_separable(dist0: f64, eps_lo: f64, block_margins: &[f64]) -> Result<f64> {
    if block_margins.is_empty() {
        return Err(Error::UndefinedBound("no inactive blocks".into()));
    }
    if let Some(m) = block_margins.iter().find(|m| !(**m > 0.0)) {
        return Err(Error::UndefinedBound(format!("block margin {m} is not positive")));
    }
    if !(eps_lo > 0.0) || !(dist0 >= 0.0) {
        return Err(Error::InvalidInput(format!("need dist0 ≥ 0 and eps > 0, got {dist0}, {eps_lo}")));
    }
    let s: f64 = block_margins.iter().map(|m| m * m).sum();
    Ok(dist0 * dist0 / (eps_lo * eps_lo * s))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentificationReport {
    pub k_observed: Option<usize>,
    pub sig_ref: ManifoldSignature,
    pub nd_margin: f64,
    pub ri_alpha: f64,
    pub k_bound_general: Option<f64>,
    pub k_bound_separable: Option<f64>,
    /// The general bound also assumes `∂R(x_k) ⊂ rbd ∂R(x⋆)` along the run, which is
    /// not checked.
    pub general_hypothesis_verified: bool,
}

/// Collects detection, (ND), (RI) and both bounds for a run started at `x0`.
/// `eps_lo` is the step-size lower bound (the constant step for fixed-step runs).
pub fn report(
    problem: &Problem,
    trace: &Trace,
    x0: &DVector<f64>,
    x_star: &DVector<f64>,
    sig_star: &ManifoldSignature,
    eps_lo: f64,
) -> Result<IdentificationReport> {
    let basis = problem.reg.tangent_basis(sig_star)?;
    let nd = check_nd(problem, x_star, sig_star)?;
    let alpha = check_ri(problem, &basis)?;
    let dist0 = (x0 - x_star).norm();
    let g = problem.grad(x_star)?;
    let separable = problem
        .reg
        .block_margins(sig_star, &g)
        .and_then(|m| identification_bound_separable(dist0, eps_lo, &m).ok());
    Ok(IdentificationReport {
        k_observed: detect_identification(trace, sig_star),
        sig_ref: sig_star.clone(),
        nd_margin: nd,
        ri_alpha: alpha,
        k_bound_general: identification_bound_general(dist0, eps_lo, nd).ok(),
        k_bound_separable: separable,
        general_hypothesis_verified: false,
    })
}
