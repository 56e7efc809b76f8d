//! Fixed-point rank-1 solvers used as baselines: alternating least squares
//! (ALS) and alternating SVD over pairs of dimensions (ASVD).
//!
//! Both work directly on a CP-format target. The contraction of the target
//! against the current modes of all other dimensions only needs the dot
//! products `⟨f_t^(k), u^(k)⟩`, which are cached per dimension and refreshed
//! after every block update.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::svd_desc;
use crate::tensor::{CpTensor, PureTensor};

/// Stopping rule and initialization of the fixed-point solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointConfig {
    /// Threshold on the distance between successive iterates, relative to the
    /// norm of the target.
    pub tol: f64,
    pub max_iters: usize,
    /// ALS only: damp each block update and re-fit the term coefficient after
    /// every sweep.
    pub relaxed: bool,
    /// Weight of the new direction in a relaxed block update, in `(0, 1]`.
    pub relaxation: f64,
    pub rng_seed: u64,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        FixedPointConfig {
            tol: 1e-4,
            max_iters: 100,
            relaxed: false,
            relaxation: 0.5,
            rng_seed: 0,
        }
    }
}

impl FixedPointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::arg("fixed-point tolerance must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::arg("max_iters must be at least 1"));
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return Err(Error::arg("relaxation must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Result of a fixed-point rank-1 solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub term: PureTensor,
    /// Full sweeps performed.
    pub iterations: usize,
    pub converged: bool,
    /// Last relative successive-iterate distance η.
    pub final_eta: f64,
    /// `‖f - t‖` after initialization and after every block update.
    pub residual_history: Vec<f64>,
}

struct RankOne<'a> {
    f: &'a CpTensor,
    fnorm: f64,
    weight: f64,
    modes: Vec<DVector<f64>>,
    /// `dots[k][t] = ⟨f_t^(k), modes[k]⟩`
    dots: Vec<DVector<f64>>,
    rng: ChaCha8Rng,
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    loop {
        let v: DVector<f64> = DVector::from_fn(n, |_, _| -> f64 { StandardNormal.sample(rng) });
        let norm = v.norm();
        if norm > 0.0 {
            return v / norm;
        }
    }
}

impl<'a> RankOne<'a> {
    fn new(f: &'a CpTensor, modes: Vec<DVector<f64>>, rng: ChaCha8Rng) -> Self {
        let dots = f
            .factors()
            .iter()
            .zip(&modes)
            .map(|(fk, u)| fk.tr_mul(u))
            .collect();
        let mut state = RankOne {
            f,
            fnorm: f.gram_norm_sq().0.sqrt(),
            weight: 0.0,
            modes,
            dots,
            rng,
        };
        state.weight = state.fit();
        state
    }

    fn set_mode(&mut self, k: usize, u: DVector<f64>) {
        self.dots[k] = self.f.factor(k).tr_mul(&u);
        self.modes[k] = u;
    }

    fn reinit_mode(&mut self, k: usize) {
        let u = random_unit(&mut self.rng, self.f.grid().len(k));
        self.set_mode(k, u);
    }

    /// `c_t Π_{k ∉ skip} dots[k][t]` for every term `t`.
    fn partial_weights(&self, skip: &[usize]) -> DVector<f64> {
        let mut w = DVector::from_column_slice(self.f.weights());
        for (k, dk) in self.dots.iter().enumerate() {
            if !skip.contains(&k) {
                w.component_mul_assign(dk);
            }
        }
        w
    }

    /// `⟨f, t̂⟩` for the unit-norm current term.
    fn fit(&self) -> f64 {
        self.partial_weights(&[]).sum()
    }

    fn residual(&self) -> f64 {
        let r2 = self.fnorm * self.fnorm - 2.0 * self.weight * self.fit() + self.weight * self.weight;
        r2.max(0.0).sqrt()
    }

    fn snapshot(&self) -> (f64, Vec<DVector<f64>>) {
        (self.weight, self.modes.clone())
    }

    /// `‖w_a ⊗a - w_b ⊗b‖ / ‖f‖`, evaluated without cancellation:
    /// `(w_a - w_b)² + 2 w_a w_b (1 - Π⟨a_k, b_k⟩)` with `1 - ⟨a_k, b_k⟩ = ‖a_k - b_k‖²/2`.
    fn eta(&self, prev: &(f64, Vec<DVector<f64>>)) -> f64 {
        let (wp, ref mp) = *prev;
        let mut one_minus = 0.0;
        for (a, b) in self.modes.iter().zip(mp) {
            let delta = (a - b).norm_squared() * 0.5;
            one_minus = one_minus + delta - one_minus * delta;
        }
        let dw = self.weight - wp;
        let sq = dw * dw + 2.0 * self.weight * wp * one_minus;
        let eta = sq.max(0.0).sqrt();
        if self.fnorm > 0.0 {
            eta / self.fnorm
        } else {
            eta
        }
    }

    fn outcome(self, iterations: usize, converged: bool, final_eta: f64, history: Vec<f64>) -> Result<SolveOutcome> {
        let term = PureTensor::new(self.f.grid().clone(), self.weight, self.modes)?;
        Ok(SolveOutcome {
            term,
            iterations,
            converged,
            final_eta,
            residual_history: history,
        })
    }
}

fn check_target(f: &CpTensor, cfg: &FixedPointConfig) -> Result<()> {
    cfg.validate()?;
    if f.order() < 2 {
        return Err(Error::arg("rank-1 solvers need a tensor of order at least 2"));
    }
    Ok(())
}

fn zero_outcome(f: &CpTensor) -> SolveOutcome {
    SolveOutcome {
        term: PureTensor::zero(f.grid().clone()),
        iterations: 0,
        converged: true,
        final_eta: 0.0,
        residual_history: vec![0.0],
    }
}

fn random_modes(f: &CpTensor, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    f.grid().dims().iter().map(|&n| random_unit(rng, n)).collect()
}

/// Contraction of `f` against `modes` in every dimension except `mode`.
pub fn contract_all_but(f: &CpTensor, modes: &[DVector<f64>], mode: usize) -> Result<DVector<f64>> {
    check_modes(f, modes)?;
    let state = RankOne::new(f, modes.to_vec(), ChaCha8Rng::seed_from_u64(0));
    Ok(f.factor(mode) * state.partial_weights(&[mode]))
}

/// The `N_i × N_j` matrix obtained by contracting `f` against `modes` in every
/// dimension except `i` and `j` (the ASVD pair update target).
pub fn pair_matrix(f: &CpTensor, modes: &[DVector<f64>], i: usize, j: usize) -> Result<DMatrix<f64>> {
    check_modes(f, modes)?;
    if i == j || i >= f.order() || j >= f.order() {
        return Err(Error::arg(format!("invalid dimension pair ({i}, {j})")));
    }
    let state = RankOne::new(f, modes.to_vec(), ChaCha8Rng::seed_from_u64(0));
    Ok(pair_matrix_from(&state, i, j))
}

fn pair_matrix_from(state: &RankOne<'_>, i: usize, j: usize) -> DMatrix<f64> {
    let w = state.partial_weights(&[i, j]);
    let fi = state.f.factor(i);
    let scaled = DMatrix::from_fn(fi.nrows(), fi.ncols(), |x, t| fi[(x, t)] * w[t]);
    scaled * state.f.factor(j).transpose()
}

const POWER_MAX_STEPS: usize = 60;

/// Leading singular triplet of `u`, by power iteration on `uᵀu` from `start`
/// when it can be certified, otherwise by a full SVD.
///
/// With Rayleigh quotient `λ ≤ λ_1` and `λ_2 ≤ ‖u‖_F² - λ_1`, the gap
/// `λ_1 - λ_2` is at least `2λ - ‖u‖_F²`; once that is positive the angle to
/// the leading right singular vector is bounded by the eigen-residual over
/// the gap.
fn leading_triplet(u: &DMatrix<f64>, start: &DVector<f64>) -> (f64, DVector<f64>, DVector<f64>) {
    let fro2 = u.norm_squared();
    let mut x = start.clone();
    if fro2 > 0.0 {
        for _ in 0..POWER_MAX_STEPS {
            let ux = u * &x;
            let lambda = ux.norm_squared();
            let g = u.tr_mul(&ux);
            let gap = 2.0 * lambda - fro2;
            if gap > 0.0 && (&g - &x * lambda).norm() <= 1e-10 * gap {
                let sigma = lambda.sqrt();
                return (sigma, ux / sigma, x);
            }
            let gn = g.norm();
            if gn == 0.0 {
                break;
            }
            x = g / gn;
        }
    }
    let (s, left, right) = svd_desc(u);
    (s[0], left.column(0).into_owned(), right.column(0).into_owned())
}

fn check_modes(f: &CpTensor, modes: &[DVector<f64>]) -> Result<()> {
    if modes.len() != f.order() || modes.iter().zip(f.grid().dims()).any(|(u, &n)| u.len() != n) {
        return Err(Error::dim("mode vectors do not match the tensor grid"));
    }
    Ok(())
}

fn normalized(modes: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    modes
        .iter()
        .map(|u| {
            let n = u.norm();
            if n > 0.0 && n.is_finite() {
                Ok(u / n)
            } else {
                Err(Error::arg("initial modes must be finite and nonzero"))
            }
        })
        .collect()
}

/// Rank-1 approximation of `f` by alternating least squares from a random
/// start.
pub fn als_rank1(f: &CpTensor, cfg: &FixedPointConfig) -> Result<SolveOutcome> {
    check_target(f, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let modes = random_modes(f, &mut rng);
    als_from(f, cfg, modes, rng)
}

/// [`als_rank1`] from user-supplied initial modes.
pub fn als_rank1_from(f: &CpTensor, cfg: &FixedPointConfig, init: &[DVector<f64>]) -> Result<SolveOutcome> {
    check_target(f, cfg)?;
    check_modes(f, init)?;
    als_from(f, cfg, normalized(init)?, ChaCha8Rng::seed_from_u64(cfg.rng_seed))
}

fn als_from(f: &CpTensor, cfg: &FixedPointConfig, modes: Vec<DVector<f64>>, rng: ChaCha8Rng) -> Result<SolveOutcome> {
    if f.rank() == 0 {
        return Ok(zero_outcome(f));
    }
    let d = f.order();
    let mut state = RankOne::new(f, modes, rng);
    let floor = f64::EPSILON * state.fnorm;
    let mut history = vec![state.residual()];
    let mut eta = f64::INFINITY;

    for sweep in 1..=cfg.max_iters {
        let prev = state.snapshot();
        for i in 0..d {
            let v = f.factor(i) * state.partial_weights(&[i]);
            let vnorm = v.norm();
            if vnorm <= floor {
                state.reinit_mode(i);
                state.weight = state.fit();
            } else if cfg.relaxed {
                let new = v / vnorm;
                let old = &state.modes[i];
                let sign = if new.dot(old) < 0.0 { -1.0 } else { 1.0 };
                let blended = &new * cfg.relaxation + old * (sign * (1.0 - cfg.relaxation));
                let bnorm = blended.norm();
                let u = if bnorm > 0.0 { blended / bnorm } else { new };
                state.set_mode(i, u);
            } else {
                state.set_mode(i, v / vnorm);
                state.weight = vnorm;
            }
            history.push(state.residual());
        }
        if cfg.relaxed {
            state.weight = state.fit();
        }
        eta = state.eta(&prev);
        if eta < cfg.tol {
            return state.outcome(sweep, true, eta, history);
        }
    }
    state.outcome(cfg.max_iters, false, eta, history)
}

/// Rank-1 approximation of `f` by alternating SVDs over all pairs of
/// dimensions, visited in lexicographic order.
pub fn asvd_rank1(f: &CpTensor, cfg: &FixedPointConfig) -> Result<SolveOutcome> {
    check_target(f, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let modes = random_modes(f, &mut rng);
    asvd_from(f, cfg, modes, rng)
}

/// [`asvd_rank1`] from user-supplied initial modes.
pub fn asvd_rank1_from(f: &CpTensor, cfg: &FixedPointConfig, init: &[DVector<f64>]) -> Result<SolveOutcome> {
    check_target(f, cfg)?;
    check_modes(f, init)?;
    asvd_from(f, cfg, normalized(init)?, ChaCha8Rng::seed_from_u64(cfg.rng_seed))
}

fn asvd_from(f: &CpTensor, cfg: &FixedPointConfig, modes: Vec<DVector<f64>>, rng: ChaCha8Rng) -> Result<SolveOutcome> {
    if f.rank() == 0 {
        return Ok(zero_outcome(f));
    }
    let d = f.order();
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| (i + 1..d).map(move |j| (i, j))).collect();
    let mut state = RankOne::new(f, modes, rng);
    let floor = f64::EPSILON * state.fnorm;
    let mut history = vec![state.residual()];
    let mut eta = f64::INFINITY;

    for sweep in 1..=cfg.max_iters {
        let prev = state.snapshot();
        for &(i, j) in &pairs {
            let u = pair_matrix_from(&state, i, j);
            let (sigma, left, right) = leading_triplet(&u, &state.modes[j]);
            if sigma <= floor {
                state.reinit_mode(i);
                state.reinit_mode(j);
                state.weight = state.fit();
            } else {
                state.set_mode(i, left);
                state.set_mode(j, right);
                state.weight = sigma;
            }
            history.push(state.residual());
        }
        eta = state.eta(&prev);
        if eta < cfg.tol {
            return state.outcome(sweep, true, eta, history);
        }
    }
    state.outcome(cfg.max_iters, false, eta, history)
}
