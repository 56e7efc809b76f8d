//! Tensors in canonical polyadic (CP) format on uniform grids.
//!
//! A [`CpTensor`] stores `r` terms `c_i f_i^(1) ⊗ … ⊗ f_i^(d)`. Every stored
//! factor column has unit Euclidean norm and the magnitude of each term lives
//! in its weight `c_i`. The rank-0 tensor is the canonical zero.
//!
//! All inner products are the plain Euclidean inner product of grid values.
//! Nothing in this module ever materializes a tensor except
//! [`CpTensor::to_dense`], which is capped and meant for small instances and
//! test oracles.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest number of entries [`CpTensor::to_dense`] will materialize.
pub const DEFAULT_DENSE_CAP: usize = 10_000_000;

/// Below this ratio of `‖a‖²` to the sum of absolute term products the
/// Gram-based norm is replaced by the orthogonalization sweep.
const NORM_CANCELLATION_SWITCH: f64 = 1e-6;

/// Columns whose norm is within this distance of one are stored untouched.
const UNIT_NORM_SLACK: f64 = 1e-12;

/// Per-dimension point counts of a tensor-product grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Grid {
    dims: Vec<usize>,
}

impl Grid {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::arg("grid must have at least one dimension"));
        }
        if let Some(pos) = dims.iter().position(|&n| n == 0) {
            return Err(Error::arg(format!("dimension {pos} has zero points")));
        }
        Ok(Grid { dims })
    }

    /// Grid with `d` dimensions of `n` points each.
    pub fn uniform(d: usize, n: usize) -> Result<Self> {
        Grid::new(vec![n; d])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Tensor order `d`.
    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self, mode: usize) -> usize {
        self.dims[mode]
    }

    /// Number of grid points, `Π N_i`.
    pub fn num_points(&self) -> u128 {
        self.dims.iter().map(|&n| n as u128).product()
    }

    /// The grid with dimension `mode` removed.
    pub fn without(&self, mode: usize) -> Result<Grid> {
        if mode >= self.order() {
            return Err(Error::dim(format!(
                "mode {mode} out of range for order {}",
                self.order()
            )));
        }
        let mut dims = self.dims.clone();
        dims.remove(mode);
        Grid::new(dims)
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode < self.order() {
            Ok(())
        } else {
            Err(Error::dim(format!(
                "mode {mode} out of range for order {}",
                self.order()
            )))
        }
    }
}

/// Dot product with a fixed left-to-right summation order, so that
/// `ordered_dot(a, b) == ordered_dot(b, a)` holds bit for bit.
pub(crate) fn ordered_dot<'a>(
    a: impl IntoIterator<Item = &'a f64>,
    b: impl IntoIterator<Item = &'a f64>,
) -> f64 {
    a.into_iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit_vector(n: usize) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    e[0] = 1.0;
    e
}

/// Scales `v` to unit norm and returns the removed magnitude. A zero vector is
/// replaced by the first canonical basis vector and reports magnitude zero.
fn normalize_in_place(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        for (i, x) in v.iter_mut().enumerate() {
            *x = if i == 0 { 1.0 } else { 0.0 };
        }
        0.0
    } else if (norm - 1.0).abs() > UNIT_NORM_SLACK {
        for x in v.iter_mut() {
            *x /= norm;
        }
        norm
    } else {
        1.0
    }
}

fn check_finite<'a>(values: impl IntoIterator<Item = &'a f64>, what: &str) -> Result<()> {
    if values.into_iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Weighted sum of rank-1 terms over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CpTensor {
    grid: Grid,
    weights: Vec<f64>,
    factors: Vec<DMatrix<f64>>,
}

impl CpTensor {
    /// The rank-0 tensor.
    pub fn zeros(grid: Grid) -> Self {
        let factors = grid.dims().iter().map(|&n| DMatrix::zeros(n, 0)).collect();
        CpTensor {
            grid,
            weights: Vec::new(),
            factors,
        }
    }

    /// Builds a CP tensor from weights and one `N_j × r` factor matrix per
    /// dimension. Columns are rescaled to unit norm with the scale folded into
    /// the weights; a zero column zeroes its term.
    pub fn new(grid: Grid, mut weights: Vec<f64>, mut factors: Vec<DMatrix<f64>>) -> Result<Self> {
        let r = weights.len();
        if factors.len() != grid.order() {
            return Err(Error::dim(format!(
                "expected {} factor matrices, got {}",
                grid.order(),
                factors.len()
            )));
        }
        check_finite(&weights, "weights")?;
        for (k, f) in factors.iter().enumerate() {
            if f.nrows() != grid.len(k) || f.ncols() != r {
                return Err(Error::dim(format!(
                    "factor {k} is {}x{}, expected {}x{r}",
                    f.nrows(),
                    f.ncols(),
                    grid.len(k)
                )));
            }
            check_finite(f.iter(), &format!("factor {k}"))?;
        }
        for f in factors.iter_mut() {
            let n = f.nrows();
            let data = f.as_mut_slice();
            for (i, w) in weights.iter_mut().enumerate() {
                *w *= normalize_in_place(&mut data[i * n..(i + 1) * n]);
            }
        }
        Ok(CpTensor {
            grid,
            weights,
            factors,
        })
    }

    /// Stacks pure terms into one CP tensor.
    pub fn from_terms(grid: Grid, terms: &[PureTensor]) -> Result<Self> {
        let weights = terms.iter().map(|t| t.weight).collect();
        let mut factors = Vec::with_capacity(grid.order());
        for k in 0..grid.order() {
            let mut f = DMatrix::zeros(grid.len(k), terms.len());
            for (i, t) in terms.iter().enumerate() {
                if t.grid != grid {
                    return Err(Error::dim("term grid differs from target grid"));
                }
                f.set_column(i, &t.modes[k]);
            }
            factors.push(f);
        }
        CpTensor::new(grid, weights, factors)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn order(&self) -> usize {
        self.grid.order()
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    pub fn factor(&self, mode: usize) -> &DMatrix<f64> {
        &self.factors[mode]
    }

    /// The `i`-th term as a pure tensor.
    pub fn term(&self, i: usize) -> PureTensor {
        PureTensor {
            grid: self.grid.clone(),
            weight: self.weights[i],
            modes: self.factors.iter().map(|f| f.column(i).into_owned()).collect(),
        }
    }

    pub fn scaled(&self, alpha: f64) -> CpTensor {
        let mut out = self.clone();
        for w in out.weights.iter_mut() {
            *w *= alpha;
        }
        out
    }

    /// Euclidean inner product, computed from per-mode fiber dot products
    /// without materializing either tensor.
    ///
    /// The individual term products are summed in sorted order, which makes the
    /// result exactly symmetric in its arguments.
    pub fn inner(&self, other: &CpTensor) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::dim("inner product of tensors on different grids"));
        }
        let mut terms = Vec::with_capacity(self.rank() * other.rank());
        for (i, &ci) in self.weights.iter().enumerate() {
            for (j, &dj) in other.weights.iter().enumerate() {
                let mut p = ci * dj;
                for (fa, fb) in self.factors.iter().zip(&other.factors) {
                    p *= ordered_dot(fa.column(i).iter(), fb.column(j).iter());
                }
                terms.push(p);
            }
        }
        terms.sort_by(f64::total_cmp);
        Ok(terms.iter().sum())
    }

    /// Euclidean norm. Uses the per-mode Gram matrices, switching to
    /// [`CpTensor::norm_stable`] when the terms cancel so much that the Gram
    /// formula would lose most of its digits.
    pub fn norm(&self) -> f64 {
        let (sq, magnitude) = self.gram_norm_sq();
        if sq >= NORM_CANCELLATION_SWITCH * magnitude {
            sq.sqrt()
        } else {
            self.norm_stable()
        }
    }

    /// `(Σ_ij c_i c_j Π_k G_k[i,j], Σ_ij |c_i c_j Π_k G_k[i,j]|)`.
    pub(crate) fn gram_norm_sq(&self) -> (f64, f64) {
        let r = self.rank();
        if r == 0 {
            return (0.0, 0.0);
        }
        let grams = crate::linalg::mode_grams(self);
        let h = crate::linalg::hadamard_except(&grams, r, usize::MAX);
        let c = DVector::from_column_slice(&self.weights);
        let sq = (&h * &c).dot(&c);
        let abs_c = c.abs();
        let magnitude = (h.abs() * &abs_c).dot(&abs_c);
        (sq.max(0.0), magnitude)
    }

    /// Norm computed by orthogonalizing the factors one dimension at a time.
    ///
    /// Unlike [`CpTensor::norm`], the rounding error is relative to the norm of
    /// the terms rather than to its square, so this resolves tensors whose
    /// terms cancel almost completely (e.g. `F - T` for a near-exact `T`).
    /// Cost is `O(Σ_k N_k r^3)`.
    pub fn norm_stable(&self) -> f64 {
        let r = self.rank();
        if r == 0 {
            return 0.0;
        }
        let f0 = &self.factors[0];
        let mut core = DMatrix::from_fn(f0.nrows(), r, |x, t| self.weights[t] * f0[(x, t)]);
        for f in &self.factors[1..] {
            let triangular = core.qr().r();
            let s = triangular.nrows();
            let n = f.nrows();
            core = DMatrix::from_fn(s * n, r, |row, t| triangular[(row / n, t)] * f[(row % n, t)]);
        }
        core.column_sum().norm()
    }

    /// `alpha * self + y`.
    pub fn axpy(&self, alpha: f64, y: &CpTensor) -> Result<CpTensor> {
        axpy(alpha, self, y)
    }

    /// Contracts dimension `mode` against `u`, producing an order `d - 1`
    /// tensor whose `i`-th weight is `c_i ⟨f_i^(mode), u⟩`.
    pub fn contract_mode(&self, mode: usize, u: &DVector<f64>) -> Result<CpTensor> {
        self.grid.check_mode(mode)?;
        if self.order() < 2 {
            return Err(Error::dim("cannot contract an order-1 tensor"));
        }
        if u.len() != self.grid.len(mode) {
            return Err(Error::dim(format!(
                "contraction vector has length {}, mode {mode} has {} points",
                u.len(),
                self.grid.len(mode)
            )));
        }
        let f = &self.factors[mode];
        let weights = self
            .weights
            .iter()
            .enumerate()
            .map(|(i, &c)| c * ordered_dot(f.column(i).iter(), u.iter()))
            .collect();
        let mut factors = self.factors.clone();
        factors.remove(mode);
        Ok(CpTensor {
            grid: self.grid.without(mode)?,
            weights,
            factors,
        })
    }

    /// Materializes the tensor, refusing grids larger than
    /// [`DEFAULT_DENSE_CAP`] points.
    pub fn to_dense(&self) -> Result<DenseTensor> {
        self.to_dense_capped(DEFAULT_DENSE_CAP)
    }

    pub fn to_dense_capped(&self, cap: usize) -> Result<DenseTensor> {
        let total = self.grid.num_points();
        if total > cap as u128 {
            return Err(Error::TooLarge {
                requested: total,
                cap,
            });
        }
        let mut values = vec![0.0; total as usize];
        let mut buf = Vec::with_capacity(total as usize);
        let mut next = Vec::with_capacity(total as usize);
        for (i, &c) in self.weights.iter().enumerate() {
            buf.clear();
            buf.push(c);
            for f in &self.factors {
                next.clear();
                for &b in &buf {
                    next.extend(f.column(i).iter().map(|&x| b * x));
                }
                std::mem::swap(&mut buf, &mut next);
            }
            for (v, b) in values.iter_mut().zip(&buf) {
                *v += b;
            }
        }
        Ok(DenseTensor {
            grid: self.grid.clone(),
            values,
        })
    }
}

/// `alpha * x + y` by term concatenation; the rank is `r_x + r_y`.
pub fn axpy(alpha: f64, x: &CpTensor, y: &CpTensor) -> Result<CpTensor> {
    if x.grid != y.grid {
        return Err(Error::dim("axpy of tensors on different grids"));
    }
    let weights = x
        .weights
        .iter()
        .map(|w| alpha * w)
        .chain(y.weights.iter().copied())
        .collect();
    let factors = x
        .factors
        .iter()
        .zip(&y.factors)
        .map(|(fx, fy)| {
            let mut f = DMatrix::zeros(fx.nrows(), fx.ncols() + fy.ncols());
            f.columns_mut(0, fx.ncols()).copy_from(fx);
            f.columns_mut(fx.ncols(), fy.ncols()).copy_from(fy);
            f
        })
        .collect();
    Ok(CpTensor {
        grid: x.grid.clone(),
        weights,
        factors,
    })
}

pub fn inner(a: &CpTensor, b: &CpTensor) -> Result<f64> {
    a.inner(b)
}

pub fn norm(a: &CpTensor) -> f64 {
    a.norm()
}

pub fn contract_mode(a: &CpTensor, mode: usize, u: &DVector<f64>) -> Result<CpTensor> {
    a.contract_mode(mode, u)
}

/// A single rank-1 term `weight · u^(1) ⊗ … ⊗ u^(d)` with unit-norm modes.
#[derive(Debug, Clone, PartialEq)]
pub struct PureTensor {
    grid: Grid,
    weight: f64,
    modes: Vec<DVector<f64>>,
}

impl PureTensor {
    /// Normalizes the supplied modes, moving their magnitudes into the weight.
    pub fn new(grid: Grid, weight: f64, mut modes: Vec<DVector<f64>>) -> Result<Self> {
        if modes.len() != grid.order() {
            return Err(Error::dim(format!(
                "expected {} modes, got {}",
                grid.order(),
                modes.len()
            )));
        }
        check_finite([&weight], "weight")?;
        let mut weight = weight;
        for (k, m) in modes.iter_mut().enumerate() {
            if m.len() != grid.len(k) {
                return Err(Error::dim(format!(
                    "mode {k} has length {}, expected {}",
                    m.len(),
                    grid.len(k)
                )));
            }
            check_finite(m.iter(), &format!("mode {k}"))?;
            weight *= normalize_in_place(m.as_mut_slice());
        }
        Ok(PureTensor {
            grid,
            weight,
            modes,
        })
    }

    /// The zero term: weight 0 and canonical unit modes.
    pub fn zero(grid: Grid) -> Self {
        let modes = grid.dims().iter().map(|&n| unit_vector(n)).collect();
        PureTensor {
            grid,
            weight: 0.0,
            modes,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn modes(&self) -> &[DVector<f64>] {
        &self.modes
    }

    pub fn mode(&self, k: usize) -> &DVector<f64> {
        &self.modes[k]
    }

    /// `|weight|`, since the modes have unit norm.
    pub fn norm(&self) -> f64 {
        self.weight.abs()
    }

    pub fn with_weight(&self, weight: f64) -> PureTensor {
        PureTensor {
            weight,
            ..self.clone()
        }
    }

    /// `⟨s, t⟩ = w_s w_t Π_k ⟨u_k, v_k⟩`.
    pub fn inner(&self, other: &PureTensor) -> f64 {
        self.modes
            .iter()
            .zip(&other.modes)
            .fold(self.weight * other.weight, |acc, (a, b)| {
                acc * ordered_dot(a.iter(), b.iter())
            })
    }

    pub fn to_cp(&self) -> CpTensor {
        CpTensor {
            grid: self.grid.clone(),
            weights: vec![self.weight],
            factors: self
                .modes
                .iter()
                .map(|m| DMatrix::from_column_slice(m.len(), 1, m.as_slice()))
                .collect(),
        }
    }
}

/// Fully materialized tensor, stored row-major (last index fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    grid: Grid,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        let total = grid.num_points();
        if total > DEFAULT_DENSE_CAP as u128 {
            return Err(Error::TooLarge {
                requested: total,
                cap: DEFAULT_DENSE_CAP,
            });
        }
        if values.len() as u128 != total {
            return Err(Error::dim(format!(
                "{} values for a grid of {total} points",
                values.len()
            )));
        }
        check_finite(&values, "dense values")?;
        Ok(DenseTensor { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn strides(&self) -> Vec<usize> {
        let d = self.grid.order();
        let mut strides = vec![1; d];
        for k in (0..d.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * self.grid.len(k + 1);
        }
        strides
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        let offset: usize = index.iter().zip(self.strides()).map(|(i, s)| i * s).sum();
        self.values[offset]
    }

    pub fn dot(&self, other: &DenseTensor) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::dim("dot of dense tensors on different grids"));
        }
        Ok(ordered_dot(&self.values, &other.values))
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// The `mode` unfolding: rows indexed by `x_mode`, columns by the
    /// remaining indices in row-major order.
    pub fn unfolding(&self, mode: usize) -> Result<DMatrix<f64>> {
        self.grid.check_mode(mode)?;
        let n = self.grid.len(mode);
        let stride = self.strides()[mode];
        let cols = self.values.len() / n;
        let mut m = DMatrix::zeros(n, cols);
        for (linear, &v) in self.values.iter().enumerate() {
            let x = (linear / stride) % n;
            let col = (linear / (stride * n)) * stride + linear % stride;
            m[(x, col)] = v;
        }
        Ok(m)
    }

    pub fn contract_mode(&self, mode: usize, u: &DVector<f64>) -> Result<DenseTensor> {
        let m = self.unfolding(mode)?;
        if u.len() != m.nrows() {
            return Err(Error::dim("contraction vector length mismatch"));
        }
        let v = m.transpose() * u;
        Ok(DenseTensor {
            grid: self.grid.without(mode)?,
            values: v.as_slice().to_vec(),
        })
    }

    pub fn sub(&self, other: &DenseTensor) -> Result<DenseTensor> {
        if self.grid != other.grid {
            return Err(Error::dim("difference of dense tensors on different grids"));
        }
        Ok(DenseTensor {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        })
    }
}
