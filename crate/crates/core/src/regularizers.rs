//! Partly smooth regularizers: proximity operators, active-manifold signatures,
//! tangent spaces, Riemannian derivatives and non-degeneracy margins.
//!
//! Vectors of the nuclear norm are `rows × cols` matrices stored column-major.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{orthonormal_complement, sorted_svd};

/// Default relative threshold below which entries, jumps or singular values count as zero.
pub const SIGNATURE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegularizerKind {
    L1,
    /// Group ℓ1,2 norm over a partition of the coordinates.
    L12 { blocks: Vec<Vec<usize>> },
    Linf,
    /// Anisotropic 1-D total variation `‖Dx‖₁` with forward differences `(Dx)ᵢ = xᵢ₊₁ − xᵢ`.
    Tv1d,
    Nuclear { rows: usize, cols: usize },
}

/// `λ·‖·‖` for one of the supported norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regularizer {
    kind: RegularizerKind,
    weight: f64,
    dim: usize,
}

/// Discrete descriptor of the active manifold at a point.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
pub enum ManifoldSignature {
    Support(Vec<usize>),
    BlockSupport(Vec<usize>),
    /// `I(x)` and the full-length sign vector `s` (zero off `I`).
    MaxSet { indices: Vec<usize>, signs: Vec<i8> },
    /// Indices `i` with `xᵢ₊₁ ≠ xᵢ`.
    JumpSet(Vec<usize>),
    Rank {
        rank: usize,
        left: DMatrix<f64>,
        right: DMatrix<f64>,
    },
}

impl PartialEq for ManifoldSignature {
    fn eq(&self, other: &Self) -> bool {
        use ManifoldSignature::*;
        match (self, other) {
            (Support(a), Support(b)) | (BlockSupport(a), BlockSupport(b)) | (JumpSet(a), JumpSet(b)) => {
                a == b
            }
            (
                MaxSet { indices: ia, signs: sa },
                MaxSet { indices: ib, signs: sb },
            ) => ia == ib && sa == sb,
            // the fixed-rank manifold is determined by the rank; frames rotate along it
            (Rank { rank: a, .. }, Rank { rank: b, .. }) => a == b,
            _ => false,
        }
    }
}

impl ManifoldSignature {
    /// Short human-readable description, e.g. `support:8` or `rank:2`.
    pub fn describe(&self) -> String {
        self.to_string()
    }

    /// 64-bit digest of the manifold identity (what `==` compares).
    pub fn digest(&self) -> u64 {
        let mut h = DefaultHasher::new();
        match self {
            ManifoldSignature::Support(s) => (0u8, s).hash(&mut h),
            ManifoldSignature::BlockSupport(s) => (1u8, s).hash(&mut h),
            ManifoldSignature::MaxSet { indices, signs } => (2u8, indices, signs).hash(&mut h),
            ManifoldSignature::JumpSet(s) => (3u8, s).hash(&mut h),
            ManifoldSignature::Rank { rank, .. } => (4u8, rank).hash(&mut h),
        }
        h.finish()
    }
}

impl fmt::Display for ManifoldSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ManifoldSignature::Support(s) => write!(f, "support:{}", s.len()),
            ManifoldSignature::BlockSupport(s) => write!(f, "blocks:{}", s.len()),
            ManifoldSignature::MaxSet { indices, .. } => write!(f, "maxset:{}", indices.len()),
            ManifoldSignature::JumpSet(s) => write!(f, "jumps:{}", s.len()),
            ManifoldSignature::Rank { rank, .. } => write!(f, "rank:{rank}"),
        }
    }
}

/// Column-orthonormal basis of the model tangent space `T_x`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentBasis {
    pub basis: DMatrix<f64>,
}

impl TangentBasis {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Orthogonal projection `B Bᵀ h`.
    pub fn project(&self, h: &DVector<f64>) -> DVector<f64> {
        &self.basis * self.basis.tr_mul(h)
    }
}

impl Regularizer {
    pub fn new(kind: RegularizerKind, dim: usize, weight: f64) -> Result<Self> {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::InvalidInput(format!("weight must be positive, got {weight}")));
        }
        match &kind {
            RegularizerKind::L12 { blocks } => {
                let mut seen = vec![false; dim];
                for &i in blocks.iter().flatten() {
                    if i >= dim || std::mem::replace(&mut seen[i], true) {
                        return Err(Error::InvalidInput(format!(
                            "blocks must partition 0..{dim}: index {i} out of range or repeated"
                        )));
                    }
                }
                if seen.iter().any(|s| !s) || blocks.iter().any(|b| b.is_empty()) {
                    return Err(Error::InvalidInput("blocks must cover every index".into()));
                }
            }
            RegularizerKind::Nuclear { rows, cols } => check_len(rows * cols, dim)?,
            _ => {}
        }
        Ok(Regularizer { kind, weight, dim })
    }

    pub fn l1(dim: usize, weight: f64) -> Result<Self> {
        Self::new(RegularizerKind::L1, dim, weight)
    }

    pub fn l12(blocks: Vec<Vec<usize>>, weight: f64) -> Result<Self> {
        let dim = blocks.iter().map(Vec::len).sum();
        Self::new(RegularizerKind::L12 { blocks }, dim, weight)
    }

    /// Partition of `0..dim` into consecutive blocks of `size` (the last may be shorter).
    pub fn l12_uniform(dim: usize, size: usize, weight: f64) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidInput("block size must be positive".into()));
        }
        let blocks = (0..dim)
            .step_by(size)
            .map(|s| (s..(s + size).min(dim)).collect())
            .collect();
        Self::l12(blocks, weight)
    }

    pub fn linf(dim: usize, weight: f64) -> Result<Self> {
        Self::new(RegularizerKind::Linf, dim, weight)
    }

    pub fn tv1d(dim: usize, weight: f64) -> Result<Self> {
        Self::new(RegularizerKind::Tv1d, dim, weight)
    }

    pub fn nuclear(rows: usize, cols: usize, weight: f64) -> Result<Self> {
        Self::new(RegularizerKind::Nuclear { rows, cols }, rows * cols, weight)
    }

    pub fn kind(&self) -> &RegularizerKind {
        &self.kind
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Copy with a different weight.
    pub fn with_weight(&self, weight: f64) -> Result<Self> {
        Self::new(self.kind.clone(), self.dim, weight)
    }

    /// ℓ1, ℓ∞ and TV are polyhedral; their Riemannian Hessians vanish.
    pub fn is_polyhedral(&self) -> bool {
        matches!(
            self.kind,
            RegularizerKind::L1 | RegularizerKind::Linf | RegularizerKind::Tv1d
        )
    }

    /// Whether the active manifold is a linear subspace (all kinds but the nuclear norm).
    pub fn has_linear_manifold(&self) -> bool {
        !matches!(self.kind, RegularizerKind::Nuclear { .. })
    }

    fn matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match self.kind {
            RegularizerKind::Nuclear { rows, cols } => DMatrix::from_column_slice(rows, cols, x.as_slice()),
            _ => unreachable!("matrix view requested for a vector regularizer"),
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<f64> {
        check_len(self.dim, x.len())?;
        let norm = match &self.kind {
            RegularizerKind::L1 => x.lp_norm(1),
            RegularizerKind::L12 { blocks } => blocks.iter().map(|b| block_norm(x, b)).sum(),
            RegularizerKind::Linf => x.amax(),
            RegularizerKind::Tv1d => x.as_slice().windows(2).map(|w| (w[1] - w[0]).abs()).sum(),
            RegularizerKind::Nuclear { .. } => sorted_svd(&self.matrix(x))?.1.sum(),
        };
        Ok(self.weight * norm)
    }

    /// `prox_{γR}(z) = argminₓ ½‖x − z‖² + γR(x)`.
    pub fn prox(&self, gamma: f64, z: &DVector<f64>) -> Result<DVector<f64>> {
        if !(gamma > 0.0) {
            return Err(Error::InvalidInput(format!("step must be positive, got {gamma}")));
        }
        check_len(self.dim, z.len())?;
        let t = gamma * self.weight;
        Ok(match &self.kind {
            RegularizerKind::L1 => z.map(|v| soft_threshold(v, t)),
            RegularizerKind::L12 { blocks } => {
                let mut out = z.clone();
                for b in blocks {
                    let nb = block_norm(z, b);
                    let scale = if nb > t { 1.0 - t / nb } else { 0.0 };
                    for &i in b {
                        out[i] *= scale;
                    }
                }
                out
            }
            RegularizerKind::Linf => {
                // Moreau: z − P_{tB₁}(z), written so the clipped entries tie exactly
                match l1_ball_threshold(z.as_slice(), t) {
                    None => z.clone(),
                    Some(theta) => z.map(|v| v.signum() * v.abs().min(theta)),
                }
            }
            RegularizerKind::Tv1d => DVector::from_vec(tv1d_prox(z.as_slice(), t)),
            RegularizerKind::Nuclear { .. } => {
                let (u, s, v) = sorted_svd(&self.matrix(z))?;
                let shrunk = s.map(|si| (si - t).max(0.0));
                let x = &u * DMatrix::from_diagonal(&shrunk) * v.transpose();
                DVector::from_column_slice(x.as_slice())
            }
        })
    }

    /// Active-manifold signature of `x`; magnitudes `≤ tol·scale(x)` count as zero.
    pub fn signature(&self, x: &DVector<f64>, tol: f64) -> Result<ManifoldSignature> {
        check_len(self.dim, x.len())?;
        if !(tol >= 0.0) {
            return Err(Error::InvalidInput(format!("tol must be non-negative, got {tol}")));
        }
        let scale = x.amax();
        let cut = tol * scale;
        Ok(match &self.kind {
            RegularizerKind::L1 => ManifoldSignature::Support(
                (0..x.len()).filter(|&i| x[i].abs() > cut).collect(),
            ),
            RegularizerKind::L12 { blocks } => ManifoldSignature::BlockSupport(
                (0..blocks.len())
                    .filter(|&j| block_norm(x, &blocks[j]) > cut)
                    .collect(),
            ),
            RegularizerKind::Linf => {
                if scale == 0.0 {
                    return Err(Error::DegenerateSignature("max-set of the zero vector".into()));
                }
                let indices: Vec<usize> = (0..x.len())
                    .filter(|&i| x[i].abs() >= scale - cut)
                    .collect();
                let mut signs = vec![0i8; x.len()];
                for &i in &indices {
                    signs[i] = if x[i] > 0.0 { 1 } else { -1 };
                }
                ManifoldSignature::MaxSet { indices, signs }
            }
            RegularizerKind::Tv1d => ManifoldSignature::JumpSet(
                (0..x.len().saturating_sub(1))
                    .filter(|&i| (x[i + 1] - x[i]).abs() > cut)
                    .collect(),
            ),
            RegularizerKind::Nuclear { .. } => {
                let (u, s, v) = sorted_svd(&self.matrix(x))?;
                let cut = tol * s.get(0).copied().unwrap_or(0.0);
                let rank = s.iter().filter(|&&si| si > cut && si > 0.0).count();
                let (left, right) = oriented_frames(&u, &v, rank);
                ManifoldSignature::Rank { rank, left, right }
            }
        })
    }

    fn mismatch(&self, sig: &ManifoldSignature) -> Error {
        Error::InvalidInput(format!(
            "signature {sig} does not belong to regularizer {:?}",
            self.kind
        ))
    }

    /// Orthonormal basis of `T_x` for the manifold named by `sig`.
    pub fn tangent_basis(&self, sig: &ManifoldSignature) -> Result<TangentBasis> {
        let n = self.dim;
        let unit = |i: usize| DVector::from_fn(n, |r, _| if r == i { 1.0 } else { 0.0 });
        let cols: Vec<DVector<f64>> = match (&self.kind, sig) {
            (RegularizerKind::L1, ManifoldSignature::Support(s)) => {
                check_indices(s, n)?;
                s.iter().map(|&i| unit(i)).collect()
            }
            (RegularizerKind::L12 { blocks }, ManifoldSignature::BlockSupport(s)) => {
                check_indices(s, blocks.len())?;
                let mut idx: Vec<usize> = s.iter().flat_map(|&j| blocks[j].iter().copied()).collect();
                idx.sort_unstable();
                idx.into_iter().map(unit).collect()
            }
            (RegularizerKind::Linf, ManifoldSignature::MaxSet { indices, signs }) => {
                check_indices(indices, n)?;
                check_len(n, signs.len())?;
                if indices.is_empty() {
                    return Err(Error::DegenerateSignature("empty max-set".into()));
                }
                // {u : u_I ∈ R·s_I}: one shared direction on I, free coordinates off I
                let k = (indices.len() as f64).sqrt();
                let mut cols = vec![DVector::from_fn(n, |r, _| f64::from(signs[r]) / k)];
                cols.extend((0..n).filter(|i| signs[*i] == 0).map(unit));
                cols
            }
            (RegularizerKind::Tv1d, ManifoldSignature::JumpSet(jumps)) => {
                check_indices(jumps, n.saturating_sub(1))?;
                plateaus(jumps, n)
                    .into_iter()
                    .map(|(lo, hi)| {
                        let w = 1.0 / ((hi - lo) as f64).sqrt();
                        DVector::from_fn(n, |r, _| if (lo..hi).contains(&r) { w } else { 0.0 })
                    })
                    .collect()
            }
            (RegularizerKind::Nuclear { rows, cols }, ManifoldSignature::Rank { rank, left, right }) => {
                check_frames(*rows, *cols, *rank, left, right)?;
                return Ok(TangentBasis {
                    basis: nuclear_tangent_basis(left, right),
                });
            }
            _ => return Err(self.mismatch(sig)),
        };
        Ok(TangentBasis {
            basis: if cols.is_empty() {
                DMatrix::zeros(n, 0)
            } else {
                DMatrix::from_columns(&cols)
            },
        })
    }

    /// `P_{T_x}` applied to `h`, without assembling a basis where avoidable.
    pub fn project_tangent(&self, sig: &ManifoldSignature, h: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.dim, h.len())?;
        match sig {
            ManifoldSignature::Rank { left, right, .. } => {
                let hm = self.matrix(h);
                let p = nuclear_tangent_project(left, right, &hm);
                Ok(DVector::from_column_slice(p.as_slice()))
            }
            _ => Ok(self.tangent_basis(sig)?.project(h)),
        }
    }

    /// `∇_M R(x) = P_{T_x}(∂R(x))`, scaled by the weight.
    pub fn riemannian_gradient(&self, x: &DVector<f64>, sig: &ManifoldSignature) -> Result<DVector<f64>> {
        check_len(self.dim, x.len())?;
        let lam = self.weight;
        let n = self.dim;
        match (&self.kind, sig) {
            (RegularizerKind::L1, ManifoldSignature::Support(s)) => {
                check_indices(s, n)?;
                let mut g = DVector::zeros(n);
                for &i in s {
                    g[i] = lam * x[i].signum();
                }
                Ok(g)
            }
            (RegularizerKind::L12 { blocks }, ManifoldSignature::BlockSupport(s)) => {
                check_indices(s, blocks.len())?;
                let mut g = DVector::zeros(n);
                for &j in s {
                    let nb = block_norm(x, &blocks[j]);
                    if nb == 0.0 {
                        return Err(Error::DegenerateSignature(format!("block {j} is zero")));
                    }
                    for &i in &blocks[j] {
                        g[i] = lam * x[i] / nb;
                    }
                }
                Ok(g)
            }
            (RegularizerKind::Linf, ManifoldSignature::MaxSet { indices, signs }) => {
                if indices.is_empty() {
                    return Err(Error::DegenerateSignature("empty max-set".into()));
                }
                let k = indices.len() as f64;
                Ok(DVector::from_fn(n, |i, _| lam * f64::from(signs[i]) / k))
            }
            (RegularizerKind::Tv1d, ManifoldSignature::JumpSet(jumps)) => {
                check_indices(jumps, n.saturating_sub(1))?;
                // λ Dᵀ sign(Dx) restricted to the jump set; the rest lies in T⊥
                let mut v = DVector::zeros(n);
                for &i in jumps {
                    let s = (x[i + 1] - x[i]).signum();
                    v[i] -= lam * s;
                    v[i + 1] += lam * s;
                }
                self.project_tangent(sig, &v)
            }
            (RegularizerKind::Nuclear { .. }, ManifoldSignature::Rank { rank, .. }) => {
                let (u, _, v) = sorted_svd(&self.matrix(x))?;
                let (u, v) = oriented_frames(&u, &v, *rank);
                let g = (u * v.transpose()) * lam;
                Ok(DVector::from_column_slice(g.as_slice()))
            }
            _ => Err(self.mismatch(sig)),
        }
    }

    /// Riemannian Hessian of `R` on its active manifold, applied to `P_{T_x} h`.
    ///
    /// Zero for polyhedral kinds; the closed form `δ_x ∘ Q_{x⊥}` for ℓ1,2; for the
    /// nuclear norm, the covariant derivative of `x' ↦ λU'V'ᵀ` along the projection
    /// curve `P_M(x + th)`, by Richardson-extrapolated central differences.
    pub fn riemannian_hessian_apply(
        &self,
        x: &DVector<f64>,
        sig: &ManifoldSignature,
        h: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        check_len(self.dim, x.len())?;
        let h = self.project_tangent(sig, h)?;
        match (&self.kind, sig) {
            (RegularizerKind::L1, ManifoldSignature::Support(_))
            | (RegularizerKind::Linf, ManifoldSignature::MaxSet { .. })
            | (RegularizerKind::Tv1d, ManifoldSignature::JumpSet(_)) => Ok(DVector::zeros(self.dim)),
            (RegularizerKind::L12 { blocks }, ManifoldSignature::BlockSupport(s)) => {
                let mut out = DVector::zeros(self.dim);
                for &j in s {
                    let b = &blocks[j];
                    let nb2: f64 = b.iter().map(|&i| x[i] * x[i]).sum();
                    if nb2 == 0.0 {
                        return Err(Error::DegenerateSignature(format!("block {j} is zero")));
                    }
                    let nb = nb2.sqrt();
                    let inner: f64 = b.iter().map(|&i| x[i] * h[i]).sum();
                    for &i in b {
                        out[i] = self.weight * (h[i] - inner / nb2 * x[i]) / nb;
                    }
                }
                Ok(out)
            }
            (RegularizerKind::Nuclear { .. }, ManifoldSignature::Rank { rank, .. }) => {
                let lam = self.weight;
                let r = *rank;
                let field = |m: &DMatrix<f64>| -> Result<DMatrix<f64>> {
                    let (u, _, v) = sorted_svd(m)?;
                    let (u, v) = oriented_frames(&u, &v, r);
                    Ok(u * v.transpose() * lam)
                };
                self.nuclear_covariant_derivative(x, r, &field, &h)
            }
            _ => Err(self.mismatch(sig)),
        }
    }

    /// Riemannian Hessian on the active manifold of a smooth function with Euclidean
    /// gradient `grad`, applied to `P_{T_x} h`.
    ///
    /// On linear manifolds this is `P_T ∇²G P_T h` (evaluated by a central difference,
    /// exact for quadratics); on the fixed-rank manifold it also carries the
    /// Weingarten term of the normal component of `∇G`.
    pub fn riemannian_hessian_of_smooth(
        &self,
        x: &DVector<f64>,
        sig: &ManifoldSignature,
        grad: &dyn Fn(&DVector<f64>) -> Result<DVector<f64>>,
        h: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        check_len(self.dim, x.len())?;
        let h = self.project_tangent(sig, h)?;
        match sig {
            ManifoldSignature::Rank { rank, .. } => {
                let r = *rank;
                let (rows, cols) = self.matrix(x).shape();
                let field = |m: &DMatrix<f64>| -> Result<DMatrix<f64>> {
                    let (u, _, v) = sorted_svd(m)?;
                    let (u, v) = oriented_frames(&u, &v, r);
                    let g = grad(&DVector::from_column_slice(m.as_slice()))?;
                    let gm = DMatrix::from_column_slice(rows, cols, g.as_slice());
                    Ok(nuclear_tangent_project(&u, &v, &gm))
                };
                self.nuclear_covariant_derivative(x, r, &field, &h)
            }
            _ => {
                let t = 1.0;
                let d = grad(&(x + &h * t))? - grad(&(x - &h * t))?;
                self.project_tangent(sig, &(d / (2.0 * t)))
            }
        }
    }

    /// `P_{T_x} d/dt field(P_M(x + t h))|₀` on the fixed-rank manifold.
    fn nuclear_covariant_derivative(
        &self,
        x: &DVector<f64>,
        rank: usize,
        field: &dyn Fn(&DMatrix<f64>) -> Result<DMatrix<f64>>,
        h: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let hn = h.norm();
        if hn == 0.0 || rank == 0 {
            return Ok(DVector::zeros(self.dim));
        }
        let xm = self.matrix(x);
        let (u, s, v) = sorted_svd(&xm)?;
        let (u, v) = oriented_frames(&u, &v, rank);
        let base = &u * DMatrix::from_diagonal(&s.rows(0, rank).into_owned()) * v.transpose();
        let hm = self.matrix(h);
        // the reach of the fixed-rank manifold is the smallest kept singular value
        let step = 1e-3 * s[rank - 1].max(f64::MIN_POSITIVE) / hn;
        let diff = |t: f64| -> Result<DMatrix<f64>> {
            let plus = field(&truncate_rank(&(&base + &hm * t), rank)?)?;
            let minus = field(&truncate_rank(&(&base - &hm * t), rank)?)?;
            Ok((plus - minus) / (2.0 * t))
        };
        let coarse = diff(step)?;
        let fine = diff(0.5 * step)?;
        let d = (fine * 4.0 - coarse) / 3.0;
        let p = nuclear_tangent_project(&u, &v, &d);
        Ok(DVector::from_column_slice(p.as_slice()))
    }

    /// Projection onto the active manifold named by `sig` (identity on its tangent
    /// space for linear manifolds, rank truncation for the nuclear norm).
    pub fn project_manifold(&self, sig: &ManifoldSignature, z: &DVector<f64>) -> Result<DVector<f64>> {
        match sig {
            ManifoldSignature::Rank { rank, .. } => {
                let m = truncate_rank(&self.matrix(z), *rank)?;
                Ok(DVector::from_column_slice(m.as_slice()))
            }
            _ => self.project_tangent(sig, z),
        }
    }

    /// Distance of `−g` to the relative boundary of `∂R(x)`; positive iff `−g ∈ ri ∂R(x)`.
    pub fn nd_margin(&self, x: &DVector<f64>, sig: &ManifoldSignature, g: &DVector<f64>) -> Result<f64> {
        check_len(self.dim, x.len())?;
        check_len(self.dim, g.len())?;
        let lam = self.weight;
        let n = self.dim;
        match (&self.kind, sig) {
            (RegularizerKind::L1, ManifoldSignature::Support(s)) => {
                check_indices(s, n)?;
                let worst = (0..n)
                    .filter(|i| s.binary_search(i).is_err())
                    .map(|i| g[i].abs())
                    .fold(0.0, f64::max);
                Ok(lam - worst)
            }
            (RegularizerKind::L12 { blocks }, ManifoldSignature::BlockSupport(s)) => {
                check_indices(s, blocks.len())?;
                let worst = (0..blocks.len())
                    .filter(|j| s.binary_search(j).is_err())
                    .map(|j| block_norm(g, &blocks[j]))
                    .fold(0.0, f64::max);
                Ok(lam - worst)
            }
            (RegularizerKind::Linf, ManifoldSignature::MaxSet { indices, signs }) => {
                check_indices(indices, n)?;
                if indices.is_empty() {
                    return Err(Error::DegenerateSignature("empty max-set".into()));
                }
                // −g/λ = Σ_I cᵢ sᵢ eᵢ with Σ cᵢ = 1 must hold (affine hull); distance to the
                // facet cᵢ = 0 of the scaled simplex is λ cᵢ √(k/(k−1)).
                let k = indices.len();
                let coeffs: Vec<f64> = indices.iter().map(|&i| -f64::from(signs[i]) * g[i] / lam).collect();
                let off = (0..n).filter(|&i| signs[i] == 0).map(|i| g[i].abs()).fold(0.0, f64::max);
                let affine_gap = off.max(lam * (coeffs.iter().sum::<f64>() - 1.0).abs());
                if affine_gap > 1e-6 * lam.max(g.amax()) {
                    return Ok(-affine_gap);
                }
                if k == 1 {
                    return Ok(f64::INFINITY);
                }
                let cmin = coeffs.iter().copied().fold(f64::INFINITY, f64::min);
                Ok(lam * cmin * (k as f64 / (k as f64 - 1.0)).sqrt())
            }
            (RegularizerKind::Tv1d, ManifoldSignature::JumpSet(jumps)) => {
                check_indices(jumps, n.saturating_sub(1))?;
                // dual variable λz of −g = λDᵀz is the running sum of g
                let mut run = 0.0;
                let mut worst = 0.0f64;
                for i in 0..n.saturating_sub(1) {
                    run += g[i];
                    if jumps.binary_search(&i).is_err() {
                        worst = worst.max(run.abs());
                    }
                }
                Ok(lam - worst)
            }
            (RegularizerKind::Nuclear { .. }, ManifoldSignature::Rank { left, right, .. }) => {
                let gm = -self.matrix(g);
                let normal = &gm - nuclear_tangent_project(left, right, &gm);
                let top = sorted_svd(&normal)?.1.get(0).copied().unwrap_or(0.0);
                Ok(lam - top)
            }
            _ => Err(self.mismatch(sig)),
        }
    }

    /// Per-inactive-group margins `λ − |gᵢ|` (ℓ1) or `λ − ‖g_b‖` (ℓ1,2).
    /// `None` for non-separable kinds.
    pub fn block_margins(&self, sig: &ManifoldSignature, g: &DVector<f64>) -> Option<Vec<f64>> {
        let lam = self.weight;
        match (&self.kind, sig) {
            (RegularizerKind::L1, ManifoldSignature::Support(s)) => Some(
                (0..self.dim)
                    .filter(|i| s.binary_search(i).is_err())
                    .map(|i| lam - g[i].abs())
                    .collect(),
            ),
            (RegularizerKind::L12 { blocks }, ManifoldSignature::BlockSupport(s)) => Some(
                (0..blocks.len())
                    .filter(|j| s.binary_search(j).is_err())
                    .map(|j| lam - block_norm(g, &blocks[j]))
                    .collect(),
            ),
            _ => None,
        }
    }

    /// Distance from `v` to `∂R(x)`, the structure of `x` read at relative tolerance `tol`.
    ///
    /// For TV the subdifferential is described through the dual variable; the value
    /// returned is the Euclidean norm of the constraint violations, zero exactly on
    /// `∂R(x)`.
    pub fn subdiff_distance(&self, x: &DVector<f64>, v: &DVector<f64>, tol: f64) -> Result<f64> {
        check_len(self.dim, v.len())?;
        let lam = self.weight;
        let n = self.dim;
        let sig = if matches!(self.kind, RegularizerKind::Linf) && x.amax() == 0.0 {
            None
        } else {
            Some(self.signature(x, tol)?)
        };
        Ok(match (&self.kind, sig) {
            (RegularizerKind::L1, Some(ManifoldSignature::Support(s))) => (0..n)
                .map(|i| {
                    if s.binary_search(&i).is_ok() {
                        (v[i] - lam * x[i].signum()).powi(2)
                    } else {
                        (v[i].abs() - lam).max(0.0).powi(2)
                    }
                })
                .sum::<f64>()
                .sqrt(),
            (RegularizerKind::L12 { blocks }, Some(ManifoldSignature::BlockSupport(s))) => blocks
                .iter()
                .enumerate()
                .map(|(j, b)| {
                    if s.binary_search(&j).is_ok() {
                        let nb = block_norm(x, b);
                        b.iter().map(|&i| (v[i] - lam * x[i] / nb).powi(2)).sum::<f64>()
                    } else {
                        (block_norm(v, b) - lam).max(0.0).powi(2)
                    }
                })
                .sum::<f64>()
                .sqrt(),
            (RegularizerKind::Linf, None) => {
                let p = project_l1_ball(v.as_slice(), lam);
                (v - DVector::from_vec(p)).norm()
            }
            (RegularizerKind::Linf, Some(ManifoldSignature::MaxSet { indices, signs })) => {
                let off: f64 = (0..n).filter(|&i| signs[i] == 0).map(|i| v[i] * v[i]).sum();
                let w: Vec<f64> = indices.iter().map(|&i| f64::from(signs[i]) * v[i]).collect();
                let p = project_simplex(&w, lam);
                let on: f64 = w.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum();
                (off + on).sqrt()
            }
            (RegularizerKind::Tv1d, Some(ManifoldSignature::JumpSet(jumps))) => {
                let mut run = 0.0;
                let mut acc = 0.0;
                for i in 0..n.saturating_sub(1) {
                    run += v[i];
                    let z = -run;
                    acc += if jumps.binary_search(&i).is_ok() {
                        (z - lam * (x[i + 1] - x[i]).signum()).powi(2)
                    } else {
                        (z.abs() - lam).max(0.0).powi(2)
                    };
                }
                acc += v.sum().powi(2);
                acc.sqrt()
            }
            (RegularizerKind::Nuclear { .. }, Some(ManifoldSignature::Rank { left, right, .. })) => {
                let vm = self.matrix(v);
                let tangent = nuclear_tangent_project(&left, &right, &vm);
                let normal = &vm - &tangent;
                let along = (tangent - &left * right.transpose() * lam).norm_squared();
                let across: f64 = sorted_svd(&normal)?
                    .1
                    .iter()
                    .map(|s| (s - lam).max(0.0).powi(2))
                    .sum();
                (along + across).sqrt()
            }
            _ => unreachable!("signature always matches its own regularizer"),
        })
    }
}

fn block_norm(x: &DVector<f64>, block: &[usize]) -> f64 {
    block.iter().map(|&i| x[i] * x[i]).sum::<f64>().sqrt()
}

fn check_indices(idx: &[usize], bound: usize) -> Result<()> {
    if idx.windows(2).any(|w| w[0] >= w[1]) || idx.last().is_some_and(|&i| i >= bound) {
        return Err(Error::InvalidInput(format!(
            "index set must be sorted, duplicate-free and below {bound}"
        )));
    }
    Ok(())
}

fn check_frames(rows: usize, cols: usize, rank: usize, u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<()> {
    if u.shape() != (rows, rank) || v.shape() != (cols, rank) {
        return Err(Error::InvalidInput(format!(
            "rank-{rank} frames must be {rows}×{rank} and {cols}×{rank}"
        )));
    }
    Ok(())
}

/// `[lo, hi)` ranges of constant value delimited by the jump set.
fn plateaus(jumps: &[usize], n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(jumps.len() + 1);
    let mut lo = 0;
    for &j in jumps {
        out.push((lo, j + 1));
        lo = j + 1;
    }
    if n > 0 {
        out.push((lo, n));
    }
    out
}

pub(crate) fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Threshold θ with `P_{rB₁}(z)ᵢ = sign(zᵢ)(|zᵢ| − θ)₊`; `None` when `r = 0`,
/// `Some(0)` when `z` is already inside the ball.
fn l1_ball_threshold(z: &[f64], radius: f64) -> Option<f64> {
    if radius <= 0.0 {
        return None;
    }
    let total: f64 = z.iter().map(|v| v.abs()).sum();
    if total <= radius {
        return Some(0.0);
    }
    let mut mags: Vec<f64> = z.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &m) in mags.iter().enumerate() {
        cumsum += m;
        let t = (cumsum - radius) / (j as f64 + 1.0);
        if m > t {
            theta = t;
        } else {
            break;
        }
    }
    Some(theta)
}

/// Euclidean projection onto the ℓ1 ball of the given radius (sort-and-threshold).
pub fn project_l1_ball(z: &[f64], radius: f64) -> Vec<f64> {
    match l1_ball_threshold(z, radius) {
        None => vec![0.0; z.len()],
        Some(theta) => z.iter().map(|&v| v.signum() * (v.abs() - theta).max(0.0)).collect(),
    }
}

/// Projection onto `{c ≥ 0, Σc = total}`.
fn project_simplex(w: &[f64], total: f64) -> Vec<f64> {
    let mut u = w.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &m) in u.iter().enumerate() {
        cumsum += m;
        let t = (cumsum - total) / (j as f64 + 1.0);
        if m > t {
            theta = t;
        }
    }
    w.iter().map(|v| (v - theta).max(0.0)).collect()
}

/// Exact prox of `μ Σ|xᵢ₊₁ − xᵢ|` by the direct (taut-string equivalent) method.
/// Each output plateau is written from a single value, so plateaus are exactly flat.
pub fn tv1d_prox(input: &[f64], mu: f64) -> Vec<f64> {
    let width = input.len();
    if width == 0 || mu <= 0.0 {
        return input.to_vec();
    }
    let mut output = vec![0.0; width];
    let (mut k, mut k0, mut kplus, mut kminus) = (0usize, 0usize, 0usize, 0usize);
    let mut umin = mu;
    let mut umax = -mu;
    let mut vmin = input[0] - mu;
    let mut vmax = input[0] + mu;
    let twomu = 2.0 * mu;
    loop {
        while k == width - 1 {
            if umin < 0.0 {
                while k0 <= kminus {
                    output[k0] = vmin;
                    k0 += 1;
                }
                k = k0;
                kminus = k0;
                vmin = input[k0];
                umin = mu;
                umax = vmin + umin - vmax;
            } else if umax > 0.0 {
                while k0 <= kplus {
                    output[k0] = vmax;
                    k0 += 1;
                }
                k = k0;
                kplus = k0;
                vmax = input[k0];
                umax = -mu;
                umin = vmax + umax - vmin;
            } else {
                vmin += umin / (k - k0 + 1) as f64;
                while k0 <= k {
                    output[k0] = vmin;
                    k0 += 1;
                }
                return output;
            }
        }
        umin += input[k + 1] - vmin;
        if umin < -mu {
            while k0 <= kminus {
                output[k0] = vmin;
                k0 += 1;
            }
            k = k0;
            kminus = k0;
            kplus = k0;
            vmin = input[k0];
            vmax = vmin + twomu;
            umin = mu;
            umax = -mu;
            continue;
        }
        umax += input[k + 1] - vmax;
        if umax > mu {
            while k0 <= kplus {
                output[k0] = vmax;
                k0 += 1;
            }
            k = k0;
            kminus = k0;
            kplus = k0;
            vmax = input[k0];
            vmin = vmax - twomu;
            umin = mu;
            umax = -mu;
        } else {
            k += 1;
            if umin >= mu {
                kminus = k;
                vmin += (umin - mu) / (kminus - k0 + 1) as f64;
                umin = mu;
            }
            if umax <= -mu {
                kplus = k;
                vmax += (umax + mu) / (kplus - k0 + 1) as f64;
                umax = -mu;
            }
        }
    }
}

/// First `rank` singular pairs, each left vector flipped so its largest-magnitude
/// entry is positive (the right vector follows).
fn oriented_frames(u: &DMatrix<f64>, v: &DMatrix<f64>, rank: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut left = u.columns(0, rank).into_owned();
    let mut right = v.columns(0, rank).into_owned();
    for j in 0..rank {
        let col = left.column(j);
        let pivot = col.iamax();
        if col[pivot] < 0.0 {
            left.column_mut(j).neg_mut();
            right.column_mut(j).neg_mut();
        }
    }
    (left, right)
}

fn truncate_rank(m: &DMatrix<f64>, rank: usize) -> Result<DMatrix<f64>> {
    let (u, s, v) = sorted_svd(m)?;
    let r = rank.min(s.len());
    Ok(u.columns(0, r) * DMatrix::from_diagonal(&s.rows(0, r).into_owned()) * v.columns(0, r).transpose())
}

/// `UUᵀH + HVVᵀ − UUᵀHVVᵀ`.
fn nuclear_tangent_project(u: &DMatrix<f64>, v: &DMatrix<f64>, h: &DMatrix<f64>) -> DMatrix<f64> {
    let uuh = u * u.tr_mul(h);
    let hvv = h * v * v.transpose();
    let uuhvv = &uuh * v * v.transpose();
    uuh + hvv - uuhvv
}

/// Basis `{uᵢvⱼᵀ} ∪ {u⊥ᵢvⱼᵀ} ∪ {uᵢv⊥ⱼᵀ}` of `{UAᵀ + BVᵀ}`, vectorized column-major.
fn nuclear_tangent_basis(u: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let (n1, r) = u.shape();
    let n2 = v.nrows();
    let up = orthonormal_complement(u);
    let vp = orthonormal_complement(v);
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity((n1 + n2 - r) * r);
    let mut push = |a: nalgebra::DVectorView<f64>, b: nalgebra::DVectorView<f64>| {
        let m = a * b.transpose();
        cols.push(DVector::from_column_slice(m.as_slice()));
    };
    for i in 0..r {
        for j in 0..r {
            push(u.column(i), v.column(j));
        }
    }
    for i in 0..up.ncols() {
        for j in 0..r {
            push(up.column(i), v.column(j));
        }
    }
    for i in 0..r {
        for j in 0..vp.ncols() {
            push(u.column(i), vp.column(j));
        }
    }
    if cols.is_empty() {
        DMatrix::zeros(n1 * n2, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}
