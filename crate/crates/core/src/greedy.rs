//! Greedy CP approximation: one rank-1 (or rank-k) update per iteration,
//! followed by least-squares re-fitting of every accumulated coefficient.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::baselines::{als_rank1, asvd_rank1, FixedPointConfig};
use crate::cptt::{cptt_rank1, cptt_rankk, max_rank_k, CpttDiagnostics, RankKDiagnostics};
use crate::error::{Error, Result};
use crate::linalg::sym_eigen_desc;
use crate::tensor::{axpy, ordered_dot, CpTensor, PureTensor};

/// Below this squared relative residual the Gram-based residual formula
/// loses too many digits and the residual is re-evaluated explicitly.
const STABLE_RESIDUAL_SWITCH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Als,
    Asvd,
    Cptt,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Als, Method::Asvd, Method::Cptt];

    pub fn name(self) -> &'static str {
        match self {
            Method::Als => "ALS",
            Method::Asvd => "ASVD",
            Method::Cptt => "CPTT",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "als" => Ok(Method::Als),
            "asvd" => Ok(Method::Asvd),
            "cptt" | "cp-tt" => Ok(Method::Cptt),
            other => Err(Error::arg(format!("unknown method '{other}' (expected als, asvd or cptt)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreedyConfig {
    pub method: Method,
    /// Maximum number of pure terms in the approximation.
    pub target_rank: usize,
    /// Stop once the relative residual is at or below this value (0 disables).
    pub rel_tol: f64,
    /// Terms added per CP-TT iteration.
    pub rank_k_update: usize,
    /// Inner solver settings for ALS and ASVD. The seed is combined with the
    /// iteration number so every iteration starts from a fresh random guess.
    pub solver: FixedPointConfig,
    /// Relative eigenvalue clip for the coefficient system.
    pub regularization: f64,
}

impl GreedyConfig {
    pub fn new(method: Method, target_rank: usize) -> Self {
        GreedyConfig {
            method,
            target_rank,
            rel_tol: 0.0,
            rank_k_update: 1,
            solver: FixedPointConfig::default(),
            regularization: 1e-12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_rank == 0 {
            return Err(Error::arg("target rank must be at least 1"));
        }
        if self.rel_tol.is_nan() || self.rel_tol < 0.0 {
            return Err(Error::arg("rel_tol must be non-negative"));
        }
        if self.rank_k_update == 0 {
            return Err(Error::arg("rank-k update needs k >= 1"));
        }
        if self.rank_k_update > 1 && self.method != Method::Cptt {
            return Err(Error::arg(format!(
                "rank-k updates are only available for CPTT, not {}",
                self.method
            )));
        }
        if !(self.regularization >= 0.0 && self.regularization < 1.0) {
            return Err(Error::arg("regularization must lie in [0, 1)"));
        }
        self.solver.validate()
    }
}

/// Inner-solver record of one greedy iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum StepDiagnostics {
    FixedPoint {
        iterations: usize,
        converged: bool,
        final_eta: f64,
    },
    Cptt(CpttDiagnostics),
    CpttRankK(RankKDiagnostics),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyStep {
    /// 1-based iteration number.
    pub iteration: usize,
    /// Terms produced by the solver in this iteration, as returned by it.
    pub added: Vec<PureTensor>,
    /// Optimized coefficients of all unit-norm terms accumulated so far.
    pub coefficients: Vec<f64>,
    /// Number of terms after this iteration.
    pub rank: usize,
    pub rel_residual: f64,
    pub converged: bool,
    /// CP-TT dimension order (empty for the baselines).
    pub order: Vec<usize>,
    pub diagnostics: StepDiagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyTrace {
    pub method: Method,
    pub target_norm: f64,
    pub steps: Vec<GreedyStep>,
    /// Set when the loop stopped before reaching the target rank for a reason
    /// other than the tolerance.
    pub note: Option<String>,
}

impl GreedyTrace {
    pub const CSV_HEADER: &'static str = "iter,method,rank,rel_residual,converged,order";

    pub fn rel_residuals(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.rel_residual).collect()
    }

    pub fn final_rel_residual(&self) -> f64 {
        self.steps.last().map_or(1.0, |s| s.rel_residual)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for s in &self.steps {
            let order: Vec<String> = s.order.iter().map(|k| k.to_string()).collect();
            writeln!(
                out,
                "{},{},{},{:e},{},{}",
                s.iteration,
                self.method,
                s.rank,
                s.rel_residual,
                s.converged,
                order.join("-")
            )?;
        }
        Ok(())
    }
}

/// Least-squares coefficients `c` minimizing `‖f - Σ c_l t_l‖`, where `t_l`
/// are the given terms including their weights.
///
/// The normal equations are solved on unit-norm terms by eigendecomposition;
/// eigenvalues below `regularization · λ_max` are dropped, which yields the
/// minimum-norm solution when terms are (nearly) linearly dependent.
pub fn optimize_coefficients(terms: &[PureTensor], f: &CpTensor, regularization: f64) -> Result<Vec<f64>> {
    if terms.is_empty() {
        return Err(Error::arg("no terms to fit"));
    }
    if terms.iter().any(|t| t.grid() != f.grid()) {
        return Err(Error::dim("term grid differs from target grid"));
    }
    let modes: Vec<&[DVector<f64>]> = terms.iter().map(|t| t.modes()).collect();
    let unit = solve_unit(&modes, f, regularization);
    Ok(unit
        .iter()
        .zip(terms)
        .map(|(c, t)| if t.weight() == 0.0 { 0.0 } else { c / t.weight() })
        .collect())
}

/// Gram matrix and right-hand side of the coefficient system for unit terms.
fn normal_equations(modes: &[&[DVector<f64>]], f: &CpTensor) -> (DMatrix<f64>, DVector<f64>) {
    let n = modes.len();
    let mut a = DMatrix::zeros(n, n);
    for l in 0..n {
        for j in 0..=l {
            let v = modes[l]
                .iter()
                .zip(modes[j])
                .fold(1.0, |acc, (x, y)| acc * ordered_dot(x.iter(), y.iter()));
            a[(l, j)] = v;
            a[(j, l)] = v;
        }
    }
    let mut b = DVector::zeros(n);
    for (l, m) in modes.iter().enumerate() {
        let mut w = DVector::from_column_slice(f.weights());
        for (fk, u) in f.factors().iter().zip(m.iter()) {
            w.component_mul_assign(&fk.tr_mul(u));
        }
        b[l] = w.sum();
    }
    (a, b)
}

fn solve_unit(modes: &[&[DVector<f64>]], f: &CpTensor, regularization: f64) -> DVector<f64> {
    let (a, b) = normal_equations(modes, f);
    let (lambda, q) = sym_eigen_desc(a);
    let lmax = lambda.first().copied().unwrap_or(0.0);
    let mut c = DVector::zeros(b.len());
    if lmax <= 0.0 {
        return c;
    }
    for (i, &l) in lambda.iter().enumerate() {
        if l <= regularization * lmax {
            break;
        }
        let qi = q.column(i);
        c.axpy(qi.dot(&b) / l, &qi, 1.0);
    }
    c
}

fn seed_for(base: u64, iteration: usize) -> u64 {
    base ^ (iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Greedy approximation of `f` with the configured solver.
///
/// Returns the approximation `Σ c_l t_l` with the final optimized coefficients
/// and the per-iteration trace.
pub fn greedy_decompose(f: &CpTensor, cfg: &GreedyConfig) -> Result<(CpTensor, GreedyTrace)> {
    cfg.validate()?;
    if f.order() < 2 {
        return Err(Error::arg("greedy approximation needs a tensor of order at least 2"));
    }
    if f.rank() == 0 {
        return Err(Error::arg("target tensor has rank 0"));
    }
    let fnorm = f.norm();
    let mut trace = GreedyTrace {
        method: cfg.method,
        target_norm: fnorm,
        steps: Vec::new(),
        note: None,
    };
    if fnorm == 0.0 {
        trace.note = Some("target tensor is zero".into());
        return Ok((CpTensor::zeros(f.grid().clone()), trace));
    }

    let mut units: Vec<Vec<DVector<f64>>> = Vec::new();
    let mut approx = CpTensor::zeros(f.grid().clone());
    let mut residual = f.clone();
    let mut iteration = 0;

    while units.len() < cfg.target_rank {
        iteration += 1;
        let remaining = cfg.target_rank - units.len();
        let (added, converged, order, diagnostics) = solve_step(&residual, cfg, iteration, remaining)?;

        let floor = 1e-15 * fnorm;
        if added.iter().all(|t| t.norm() <= floor) {
            trace.note = Some(format!("iteration {iteration} produced a numerically zero term"));
            break;
        }
        for t in added.iter().filter(|t| t.norm() > floor) {
            units.push(t.modes().to_vec());
        }

        let modes: Vec<&[DVector<f64>]> = units.iter().map(|m| m.as_slice()).collect();
        let coeffs = solve_unit(&modes, f, cfg.regularization);
        approx = assemble(f, &units, &coeffs)?;
        residual = axpy(-1.0, &approx, f)?;
        let rel = relative_residual(f, fnorm, &modes, &coeffs, &residual);

        trace.steps.push(GreedyStep {
            iteration,
            added,
            coefficients: coeffs.iter().copied().collect(),
            rank: units.len(),
            rel_residual: rel,
            converged,
            order,
            diagnostics,
        });
        if cfg.rel_tol > 0.0 && rel <= cfg.rel_tol {
            break;
        }
    }
    Ok((approx, trace))
}

type StepOutput = (Vec<PureTensor>, bool, Vec<usize>, StepDiagnostics);

fn solve_step(residual: &CpTensor, cfg: &GreedyConfig, iteration: usize, remaining: usize) -> Result<StepOutput> {
    let solver = FixedPointConfig {
        rng_seed: seed_for(cfg.solver.rng_seed, iteration),
        ..cfg.solver
    };
    match cfg.method {
        Method::Als | Method::Asvd => {
            let out = if cfg.method == Method::Als {
                als_rank1(residual, &solver)?
            } else {
                asvd_rank1(residual, &solver)?
            };
            let diag = StepDiagnostics::FixedPoint {
                iterations: out.iterations,
                converged: out.converged,
                final_eta: out.final_eta,
            };
            Ok((vec![out.term], out.converged, Vec::new(), diag))
        }
        Method::Cptt => {
            let k = cfg.rank_k_update.min(remaining).min(max_rank_k(residual));
            if k <= 1 {
                let (t, diag) = cptt_rank1(residual)?;
                let order = diag.order.clone();
                Ok((vec![t], true, order, StepDiagnostics::Cptt(diag)))
            } else {
                let (terms, diag) = cptt_rankk(residual, k)?;
                let order = diag.branches.first().map(|b| b.order.clone()).unwrap_or_default();
                Ok((terms, true, order, StepDiagnostics::CpttRankK(diag)))
            }
        }
    }
}

fn assemble(f: &CpTensor, units: &[Vec<DVector<f64>>], coeffs: &DVector<f64>) -> Result<CpTensor> {
    let factors = (0..f.order())
        .map(|k| DMatrix::from_columns(&units.iter().map(|m| m[k].clone()).collect::<Vec<_>>()))
        .collect();
    CpTensor::new(f.grid().clone(), coeffs.iter().copied().collect(), factors)
}

/// `‖f - Σ c_l t_l‖ / ‖f‖`: from the normal equations while that is accurate,
/// otherwise from the explicit CP residual.
fn relative_residual(
    f: &CpTensor,
    fnorm: f64,
    modes: &[&[DVector<f64>]],
    coeffs: &DVector<f64>,
    residual: &CpTensor,
) -> f64 {
    let (a, b) = normal_equations(modes, f);
    let rel2 = (fnorm * fnorm - 2.0 * coeffs.dot(&b) + (&a * coeffs).dot(coeffs)) / (fnorm * fnorm);
    if rel2 >= STABLE_RESIDUAL_SWITCH {
        rel2.sqrt()
    } else {
        residual.norm_stable() / fnorm
    }
}
