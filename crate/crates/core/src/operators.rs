//! The smooth data-fidelity term `F(x) = ½‖y − Lx‖²` and the linear operators it is built on.

use std::io::Read;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_len, Error, Result};

/// Default relative tolerance of the power iteration behind [`estimate_beta`].
pub const BETA_TOL: f64 = 1e-9;
/// Default iteration cap of the power iteration behind [`estimate_beta`].
pub const BETA_MAX_ITER: usize = 10_000;

const POWER_SEED: u64 = 0x5eed_0f_be7a;

/// A linear map `L : Rⁿ → Rᵐ`.
#[derive(Debug, Clone, PartialEq)]
pub enum LinearOp {
    Dense(DMatrix<f64>),
    Identity(usize),
    /// Periodic convolution on `Rⁿ`; the adjoint is the matching correlation.
    CircularConv { kernel: Vec<f64>, n: usize },
}

impl LinearOp {
    /// Circular convolution by `kernel`, padded with zeros to length `n`.
    pub fn circular_conv(kernel: Vec<f64>, n: usize) -> Result<Self> {
        if kernel.is_empty() || kernel.len() > n {
            return Err(Error::InvalidInput(format!(
                "kernel length {} must be in 1..={n}",
                kernel.len()
            )));
        }
        Ok(LinearOp::CircularConv { kernel, n })
    }

    /// Row-major, header-free CSV matrix.
    pub fn dense_from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let row = record
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| Error::InvalidInput(format!("bad matrix entry {s:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if let Some(first) = rows.first() {
                check_len(first.len(), row.len())?;
            }
            rows.push(row);
        }
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::InvalidInput("empty matrix file".into()));
        }
        let (m, n) = (rows.len(), rows[0].len());
        Ok(LinearOp::Dense(DMatrix::from_row_iterator(
            m,
            n,
            rows.into_iter().flatten(),
        )))
    }

    /// Flat CSV kernel (any mix of commas and newlines).
    pub fn kernel_from_csv<R: Read>(reader: R, n: usize) -> Result<Self> {
        Self::circular_conv(read_vector_csv(reader)?.as_slice().to_vec(), n)
    }

    pub fn rows(&self) -> usize {
        match self {
            LinearOp::Dense(a) => a.nrows(),
            LinearOp::Identity(n) => *n,
            LinearOp::CircularConv { n, .. } => *n,
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            LinearOp::Dense(a) => a.ncols(),
            LinearOp::Identity(n) => *n,
            LinearOp::CircularConv { n, .. } => *n,
        }
    }

    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.cols(), x.len())?;
        Ok(match self {
            LinearOp::Dense(a) => a * x,
            LinearOp::Identity(_) => x.clone(),
            LinearOp::CircularConv { kernel, n } => DVector::from_fn(*n, |i, _| {
                kernel
                    .iter()
                    .enumerate()
                    .map(|(j, k)| k * x[(i + n - j) % n])
                    .sum()
            }),
        })
    }

    pub fn adjoint(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.rows(), y.len())?;
        Ok(match self {
            LinearOp::Dense(a) => a.tr_mul(y),
            LinearOp::Identity(_) => y.clone(),
            LinearOp::CircularConv { kernel, n } => DVector::from_fn(*n, |i, _| {
                kernel
                    .iter()
                    .enumerate()
                    .map(|(j, k)| k * y[(i + j) % n])
                    .sum()
            }),
        })
    }

    /// `L` applied to every column of `b`.
    pub fn apply_columns(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_len(self.cols(), b.nrows())?;
        if let LinearOp::Dense(a) = self {
            return Ok(a * b);
        }
        let mut out = DMatrix::zeros(self.rows(), b.ncols());
        for (j, col) in b.column_iter().enumerate() {
            out.set_column(j, &self.apply(&col.into_owned())?);
        }
        Ok(out)
    }
}

/// Reads a flat CSV vector: every field of every record, in order.
pub fn read_vector_csv<R: Read>(reader: R) -> Result<DVector<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for record in rdr.records() {
        for field in record?.iter().filter(|s| !s.is_empty()) {
            out.push(
                field
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidInput(format!("bad vector entry {field:?}: {e}")))?,
            );
        }
    }
    Ok(DVector::from_vec(out))
}

/// Least-squares term `F(x) = ½‖y − Lx‖²` with its cached co-coercivity modulus `β = 1/‖LᵀL‖`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    op: LinearOp,
    data: DVector<f64>,
    beta: f64,
}

impl LeastSquares {
    /// Builds the term and estimates `β` with the default power-iteration settings.
    pub fn new(op: LinearOp, data: DVector<f64>) -> Result<Self> {
        check_len(op.rows(), data.len())?;
        let beta = estimate_beta(&op, BETA_TOL, BETA_MAX_ITER)?;
        Ok(LeastSquares { op, data, beta })
    }

    pub fn with_beta(op: LinearOp, data: DVector<f64>, beta: f64) -> Result<Self> {
        check_len(op.rows(), data.len())?;
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidInput(format!("beta must be positive, got {beta}")));
        }
        Ok(LeastSquares { op, data, beta })
    }

    pub fn op(&self) -> &LinearOp {
        &self.op
    }

    pub fn data(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn dim(&self) -> usize {
        self.op.cols()
    }

    pub fn value(&self, x: &DVector<f64>) -> Result<f64> {
        let r = self.op.apply(x)? - &self.data;
        Ok(0.5 * r.norm_squared())
    }

    /// `∇F(x) = Lᵀ(Lx − y)`.
    pub fn grad(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let r = self.op.apply(x)? - &self.data;
        self.op.adjoint(&r)
    }

    /// `∇²F h = LᵀL h`; the Hessian of a quadratic is constant.
    pub fn hessian_apply(&self, h: &DVector<f64>) -> Result<DVector<f64>> {
        let lh = self.op.apply(h)?;
        self.op.adjoint(&lh)
    }

    /// `Bᵀ(LᵀL)B` for a basis matrix `B` with `n` rows.
    pub fn restricted_hessian(&self, basis: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let lb = self.op.apply_columns(basis)?;
        let mut h = lb.tr_mul(&lb);
        symmetrize(&mut h);
        Ok(h)
    }
}

/// Power iteration on `LᵀL`. The returned `β` is `1/(‖LᵀL‖(1 + tol))`, so it never
/// exceeds the true modulus by more than the residual slack.
pub fn estimate_beta(op: &LinearOp, tol: f64, max_iter: usize) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tol must be positive, got {tol}")));
    }
    let n = op.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
    let mut v = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    v /= v.norm();
    let mut theta = 0.0;
    for _ in 0..max_iter {
        let av = op.adjoint(&op.apply(&v)?)?;
        theta = v.dot(&av);
        if theta <= 0.0 {
            return Err(Error::InvalidInput("operator is zero on the start vector".into()));
        }
        // residual ≤ tol·θ pins an eigenvalue within tol·θ of θ
        let residual = (&av - &v * theta).norm();
        if residual <= tol * theta {
            return Ok(1.0 / (theta * (1.0 + tol)));
        }
        v = av;
        v /= v.norm();
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        estimate: theta,
    })
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}
