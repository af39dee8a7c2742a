//! Local linear rates after identification.
//!
//! On a tangent basis `B` of `T_{x⋆}`:
//!
//! ```text
//! H = γ Bᵀ∇²F B,  G = Id − H,  U = γ Bᵀ∇²_M Φ B − H,  W = (Id + U)⁻¹
//! ```
//!
//! Each eigenvalue `η` of `WG` gives two eigenvalues of the iteration matrix `M`,
//! the roots of `σ² − ((a−b) + (1+b)η)σ + (a−b) + bη = 0`.

use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{general_eigenvalues, sym_eigen};
use crate::operators::symmetrize;
use crate::regularizers::ManifoldSignature;
use crate::solver::{unconditional_margin, Branch, Problem};

/// Restricted linearization on a `d`-dimensional tangent basis.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictedMatrices {
    pub h: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl RestrictedMatrices {
    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    /// Assembles `G` and `W` from `H` and `U`.
    pub fn from_parts(h: DMatrix<f64>, u: DMatrix<f64>, gamma: f64, alpha: f64, beta: f64) -> Result<Self> {
        let d = h.nrows();
        if h.shape() != (d, d) || u.shape() != (d, d) {
            return Err(Error::InvalidInput("H and U must be square of the same size".into()));
        }
        let g = DMatrix::identity(d, d) - &h;
        let (ev, q) = sym_eigen(&(DMatrix::identity(d, d) + &u))?;
        if ev.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::Numeric(format!("Id + U is not positive definite (λ_min = {})", ev.min())));
        }
        let mut w = &q * DMatrix::from_diagonal(&ev.map(|e| 1.0 / e)) * q.transpose();
        symmetrize(&mut w);
        Ok(RestrictedMatrices { h, g, u, w, gamma, alpha, beta })
    }

    /// `W^{1/2}`.
    pub fn w_sqrt(&self) -> Result<DMatrix<f64>> {
        let (ev, q) = sym_eigen(&self.w)?;
        Ok(&q * DMatrix::from_diagonal(&ev.map(|e| e.max(0.0).sqrt())) * q.transpose())
    }

    /// Violations of the structural invariants (symmetry, `H` spectrum in
    /// `]γα, γ/β]`, `U ⪰ 0`, `W` spectrum in `]0, 1]`), each with `slack`.
    pub fn invariant_violations(&self, slack: f64) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for (name, m) in [("H", &self.h), ("U", &self.u), ("W", &self.w)] {
            let asym = (m - m.transpose()).amax();
            if asym > slack {
                out.push(format!("{name} asymmetric by {asym:e}"));
            }
        }
        if self.dim() == 0 {
            return Ok(out);
        }
        let (eh, _) = sym_eigen(&self.h)?;
        let (lo, hi) = (self.gamma * self.alpha, self.gamma / self.beta);
        if eh.min() < lo - slack || eh.max() > hi + slack {
            out.push(format!("H spectrum [{}, {}] outside ]{lo}, {hi}]", eh.min(), eh.max()));
        }
        let (eu, _) = sym_eigen(&self.u)?;
        if eu.min() < -slack {
            out.push(format!("U has eigenvalue {}", eu.min()));
        }
        let (ew, _) = sym_eigen(&self.w)?;
        if ew.min() <= 0.0 || ew.max() > 1.0 + slack {
            out.push(format!("W spectrum [{}, {}] outside ]0, 1]", ew.min(), ew.max()));
        }
        Ok(out)
    }
}

/// Builds `H, G, U, W` at `x⋆` for step `γ`.
///
/// On linear manifolds `U = γ Bᵀ∇²_M R B` (zero for polyhedral `R`). On the
/// fixed-rank manifold the Riemannian Hessian of `F` differs from its Euclidean
/// compression by a curvature term, so `U` is assembled from the full
/// `∇²_M Φ = ∇²_M F + ∇²_M R`.
pub fn build_restricted(
    problem: &Problem,
    x_star: &DVector<f64>,
    sig: &ManifoldSignature,
    gamma: f64,
) -> Result<RestrictedMatrices> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidInput(format!("gamma must be positive, got {gamma}")));
    }
    let reg = &problem.reg;
    let basis = reg.tangent_basis(sig)?;
    let b = &basis.basis;
    let d = basis.dim();
    let hess_f = problem.smooth.restricted_hessian(b)?;
    let alpha = if d == 0 { 0.0 } else { sym_eigen(&hess_f)?.0.min() };
    let h = &hess_f * gamma;
    let mut u = DMatrix::zeros(d, d);
    if !reg.is_polyhedral() {
        let grad = |y: &DVector<f64>| problem.grad(y);
        for j in 0..d {
            let col = b.column(j).into_owned();
            let mut hc = reg.riemannian_hessian_apply(x_star, sig, &col)?;
            if !reg.has_linear_manifold() {
                hc += reg.riemannian_hessian_of_smooth(x_star, sig, &grad, &col)?;
            }
            u.set_column(j, &(b.tr_mul(&hc) * gamma));
        }
        if !reg.has_linear_manifold() {
            u -= &h;
        }
        symmetrize(&mut u);
    }
    RestrictedMatrices::from_parts(h, u, gamma, alpha.max(0.0), problem.beta())
}

/// Eigenvalues of `W^{1/2} G W^{1/2}` (the spectrum of `WG`), ascending.
pub fn eta_spectrum(m: &RestrictedMatrices) -> Result<Vec<f64>> {
    let ws = m.w_sqrt()?;
    let mut s = &ws * &m.g * &ws;
    symmetrize(&mut s);
    Ok(sym_eigen(&s)?.0.iter().copied().collect())
}

/// Roots of `σ² − ((a−b) + (1+b)η)σ + (a−b) + bη`, larger modulus first.
pub fn sigma_roots(eta: f64, a: f64, b: f64) -> (Complex<f64>, Complex<f64>) {
    let p = (a - b) + (1.0 + b) * eta;
    let q = (a - b) + b * eta;
    let disc = p * p - 4.0 * q;
    if disc >= 0.0 {
        // cancellation-free pair
        let big = 0.5 * (p + p.signum() * disc.sqrt());
        let small = if big != 0.0 { q / big } else { 0.0 };
        let (r1, r2) = if big.abs() >= small.abs() { (big, small) } else { (small, big) };
        (Complex::new(r1, 0.0), Complex::new(r2, 0.0))
    } else {
        let im = 0.5 * (-disc).sqrt();
        (Complex::new(0.5 * p, im), Complex::new(0.5 * p, -im))
    }
}

/// `ρ(M)` over the whole spectrum and a root attaining it (non-negative imaginary part).
pub fn spectral_radius(etas: &[f64], a: f64, b: f64) -> (f64, Complex<f64>) {
    let mut best = (0.0, Complex::new(0.0, 0.0));
    for &eta in etas {
        let (r, _) = sigma_roots(eta, a, b);
        if r.norm() > best.0 {
            best = (r.norm(), Complex::new(r.re, r.im.abs()));
        }
    }
    best
}

/// The block matrix `[[(a−b)W + (1+b)WG, −(a−b)W − bWG], [Id, 0]]`.
pub fn explicit_m(m: &RestrictedMatrices, a: f64, b: f64) -> DMatrix<f64> {
    let d = m.dim();
    let wg = &m.w * &m.g;
    let mut out = DMatrix::zeros(2 * d, 2 * d);
    out.view_mut((0, 0), (d, d)).copy_from(&(&m.w * (a - b) + &wg * (1.0 + b)));
    out.view_mut((0, d), (d, d)).copy_from(&(-(&m.w * (a - b)) - &wg * b));
    out.view_mut((d, 0), (d, d)).fill_with_identity();
    out
}

/// Eigenvalues of [`explicit_m`] by a general eigensolver.
pub fn explicit_m_eigenvalues(m: &RestrictedMatrices, a: f64, b: f64) -> Result<Vec<Complex<f64>>> {
    general_eigenvalues(&explicit_m(m, a, b))
}

/// `(2(b − a) − 1)/(1 + 2b) < η_min`, equivalent to `ρ(M) < 1`.
pub fn convergence_condition(eta_min: f64, a: f64, b: f64) -> bool {
    (2.0 * (b - a) - 1.0) / (1.0 + 2.0 * b) < eta_min
}

/// `π/θ` with `θ = |arg σ|`, when `σ` is not real.
pub fn oscillation_period(sigma: Complex<f64>) -> Option<f64> {
    (sigma.im != 0.0).then(|| PI / sigma.im.atan2(sigma.re).abs())
}

/// Optimal inertia and the resulting rate `1 − √(1 − η̄)`.
///
/// With `b = None` the `b = a` branch `a = (1 − √(1 − η̄))²/η̄`, otherwise
/// `a = (1 − √(1 − η̄))² + b(1 − η̄)`.
pub fn optimal_inertia(eta_bar: f64, b: Option<f64>) -> (f64, f64) {
    let s = (1.0 - eta_bar).max(0.0).sqrt();
    let rho = 1.0 - s;
    let a = match b {
        // η̄/(1 + s)² is the same value without the 0/0 at η̄ = 0
        None => eta_bar / ((1.0 + s) * (1.0 + s)),
        Some(b) => rho * rho + b * (1.0 - eta_bar),
    };
    (a, rho)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BestRates {
    /// `1 − √(αβ)`, attained at `γ = β`.
    pub rho_star_gamma_beta: f64,
    /// `(1 − √(αβ))/(1 + √(αβ))`.
    pub rho_underline: f64,
    /// `4β/(1 + √(αβ))²`.
    pub gamma_underline: f64,
    /// `ρ̲²`, used with `b = 0`.
    pub a_underline: f64,
    /// `(1 − αβ)/(1 + αβ)`.
    pub rho_fb_opt: f64,
    /// `2β/(1 + αβ)`.
    pub gamma_fb_opt: f64,
}

pub fn best_rates(alpha: f64, beta: f64) -> Result<BestRates> {
    let k = alpha * beta;
    if !(k > 0.0 && k <= 1.0) {
        return Err(Error::InvalidInput(format!("need 0 < αβ ≤ 1, got {k}")));
    }
    let r = k.sqrt();
    let rho_underline = (1.0 - r) / (1.0 + r);
    Ok(BestRates {
        rho_star_gamma_beta: 1.0 - r,
        rho_underline,
        gamma_underline: 4.0 * beta / ((1.0 + r) * (1.0 + r)),
        a_underline: rho_underline * rho_underline,
        rho_fb_opt: (1.0 - k) / (1.0 + k),
        gamma_fb_opt: 2.0 * beta / (1.0 + k),
    })
}

/// `ρ(M)` with `b = a` for each `a` of the grid, for a spectrum whose top is `η̄ ≥ 0`.
pub fn rate_curve(eta_bar: f64, a_grid: &[f64]) -> Vec<(f64, f64)> {
    a_grid.iter().map(|&a| (a, sigma_roots(eta_bar, a, a).0.norm())).collect()
}

/// `n` evenly spaced points of `[0, 1]`.
pub fn unit_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegionCell {
    pub a: f64,
    pub b: f64,
    pub branch: Branch,
    pub feasible: bool,
}

/// Branch and feasibility of the global convergence condition on the lattice
/// `grid × grid`, row-major in `a`.
pub fn region_map(gamma_over_beta: f64, tau: f64, grid: &[f64]) -> Vec<RegionCell> {
    let cell = |a: f64, b: f64| {
        let (branch, margin) = unconditional_margin(a, b, gamma_over_beta, 1.0);
        let feasible = crate::solver::check_unconditional(a, b, gamma_over_beta, 1.0, tau);
        debug_assert!(!feasible || margin > tau);
        RegionCell { a, b, branch, feasible }
    };
    let row = |a: f64| grid.iter().map(|&b| cell(a, b)).collect::<Vec<_>>();
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        grid.par_iter().flat_map_iter(|&a| row(a)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        grid.iter().flat_map(|&a| row(a)).collect()
    }
}

fn serialize_complex<S: Serializer>(c: &Complex<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    [c.re, c.im].serialize(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Analyzed,
    /// `b ≠ a` with a non-polyhedral regularizer: the root map is not established,
    /// `ρ` comes from the eigenvalues of `M` directly.
    #[serde(rename = "outside analyzed regime")]
    OutsideAnalyzedRegime,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub etas: Vec<f64>,
    pub eta_min: f64,
    pub eta_max: f64,
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
    #[serde(serialize_with = "serialize_complex")]
    pub sigma_max: Complex<f64>,
    pub rho: f64,
    pub converges: bool,
    pub oscillation_period: Option<f64>,
    pub a_opt: f64,
    pub rho_opt: f64,
    pub regime: Regime,
}

/// Full report for limiting parameters `(a, b)`.
pub fn rate_report(m: &RestrictedMatrices, a: f64, b: f64, polyhedral: bool) -> Result<RateReport> {
    let etas = eta_spectrum(m)?;
    let eta_min = etas.first().copied().unwrap_or(0.0);
    let eta_max = etas.last().copied().unwrap_or(0.0);
    let regime = if a != b && !polyhedral { Regime::OutsideAnalyzedRegime } else { Regime::Analyzed };
    let (rho, sigma_max) = match regime {
        Regime::Analyzed => spectral_radius(&etas, a, b),
        Regime::OutsideAnalyzedRegime => explicit_m_eigenvalues(m, a, b)?
            .into_iter()
            .map(|z| (z.norm(), Complex::new(z.re, z.im.abs())))
            .fold((0.0, Complex::new(0.0, 0.0)), |acc, v| if v.0 > acc.0 { v } else { acc }),
    };
    let (a_opt, rho_opt) = optimal_inertia(eta_max, (a != b).then_some(b));
    Ok(RateReport {
        eta_min,
        eta_max,
        a,
        b,
        gamma: m.gamma,
        sigma_max,
        rho,
        converges: convergence_condition(eta_min, a, b),
        oscillation_period: oscillation_period(sigma_max),
        a_opt,
        rho_opt,
        regime,
        etas,
    })
}

/// Iterates `d_{k+1} = M d_k` and returns `‖d_k‖` (top half) for `k = 0..=steps`.
pub fn linearized_trace(m: &DMatrix<f64>, d0: &DVector<f64>, steps: usize) -> Vec<f64> {
    let d = m.nrows() / 2;
    let mut x = d0.clone();
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x.rows(0, d).norm());
    for _ in 0..steps {
        x = m * x;
        out.push(x.rows(0, d).norm());
    }
    out
}
