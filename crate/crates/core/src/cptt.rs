//! The CP-TT rank-1 (and rank-k) update.
//!
//! Starting from `F^(0) = F`, every step computes the leading singular value
//! of each remaining unfolding, picks the dimension with the largest one,
//! and contracts `F` against that dimension's leading left singular vector.
//! Once two dimensions remain, the leading singular triplet of the resulting
//! matrix closes the term. The variable order is therefore decided by the
//! data, not fixed in advance.
//!
//! Intermediate tensors stay in CP form: a contraction only rescales the
//! weights, so the rank never grows and the Gram matrices of the untouched
//! dimensions are reused from step to step.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{hadamard_leave_one_out, mode_grams, svd_desc};
use crate::pod::{pod_from_hadamard, pod_from_hadamard_cached, unfolding_pod_with, FiberPod, PodPath, PodResult};
use crate::tensor::{CpTensor, PureTensor, DEFAULT_DENSE_CAP};

/// Per-step record of one CP-TT rank-1 update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CpttDiagnostics {
    /// Dimensions in the order they were fixed (0-based, original indices).
    pub order: Vec<usize>,
    /// Leading singular value selected at each step; the last entry is the
    /// final 2-D singular value, which is the weight of the term.
    pub top_sigmas: Vec<f64>,
    /// `‖G^(n)‖` for each step, from the discarded singular values.
    pub residual_g_norms: Vec<f64>,
    /// `Σ_n ‖G^(n)‖²`, which equals `‖F - t‖²`.
    pub predicted_residual_sq: f64,
}

/// Rank-1 CP-TT term of `f`.
pub fn cptt_rank1(f: &CpTensor) -> Result<(PureTensor, CpttDiagnostics)> {
    cptt_rank1_with(f, PodPath::Auto)
}

/// [`cptt_rank1`] with the unfolding POD route forced.
pub fn cptt_rank1_with(f: &CpTensor, path: PodPath) -> Result<(PureTensor, CpttDiagnostics)> {
    let d = f.order();
    if d < 2 {
        return Err(Error::arg("CP-TT needs a tensor of order at least 2"));
    }
    if f.rank() == 0 {
        return Ok((PureTensor::zero(f.grid().clone()), CpttDiagnostics::default()));
    }

    let mut current = f.clone();
    let mut remaining: Vec<usize> = (0..d).collect();
    let mut grams = mode_grams(&current);
    let mut fibers: Vec<Option<FiberPod>> = vec![None; d];
    let mut modes: Vec<Option<DVector<f64>>> = vec![None; d];
    let mut diag = CpttDiagnostics::default();

    while remaining.len() > 2 {
        let loo = hadamard_leave_one_out(&grams, current.rank());
        let mut best: Option<PodResult> = None;
        for (pos, h) in loo.iter().enumerate() {
            let pod = pod_from_hadamard_cached(&current, h, pos, 1, path, &mut fibers[pos]);
            // strict comparison: ties keep the lowest dimension
            if best
                .as_ref()
                .is_none_or(|b| pod.singular_values[0] > b.singular_values[0])
            {
                best = Some(pod);
            }
        }
        let pod = best.expect("at least three dimensions remain");
        let pos = pod.mode;
        let u = pod.left_modes.column(0).into_owned();
        diag.order.push(remaining[pos]);
        diag.top_sigmas.push(pod.singular_values[0]);
        diag.residual_g_norms.push(pod.tail_energy.sqrt());

        current = current.contract_mode(pos, &u)?;
        grams.remove(pos);
        fibers.remove(pos);
        modes[remaining.remove(pos)] = Some(u);
    }

    let closure = closure_2d(&current, path)?;
    let (a, b) = (remaining[0], remaining[1]);
    diag.order.extend([a, b]);
    diag.top_sigmas.push(closure.sigma);
    diag.residual_g_norms.push(closure.tail_energy.sqrt());
    diag.predicted_residual_sq = diag.residual_g_norms.iter().map(|g| g * g).sum();
    modes[a] = Some(closure.left);
    modes[b] = Some(closure.right);

    let modes = modes.into_iter().map(|m| m.expect("every dimension fixed")).collect();
    let term = PureTensor::new(f.grid().clone(), closure.sigma, modes)?;
    Ok((term, diag))
}

struct Closure {
    sigma: f64,
    left: DVector<f64>,
    right: DVector<f64>,
    tail_energy: f64,
}

/// Leading singular triplet of an order-2 CP tensor.
fn closure_2d(m: &CpTensor, path: PodPath) -> Result<Closure> {
    let (fa, fb) = (m.factor(0), m.factor(1));
    if (fa.nrows() as u128) * (fb.nrows() as u128) <= DEFAULT_DENSE_CAP as u128 {
        let scaled = DMatrix::from_fn(fa.nrows(), m.rank(), |x, t| fa[(x, t)] * m.weights()[t]);
        let dense = scaled * fb.transpose();
        let (sigma, left, right) = svd_desc(&dense);
        return Ok(Closure {
            sigma: sigma[0],
            left: left.column(0).into_owned(),
            right: right.column(0).into_owned(),
            tail_energy: sigma[1..].iter().map(|s| s * s).sum(),
        });
    }
    // too large to materialize: POD of the rows, then contract for the columns
    let pod = unfolding_pod_with(m, 0, 1, path)?;
    let left = pod.left_modes.column(0).into_owned();
    let v = m.contract_mode(0, &left)?;
    let mut right = v.factor(0) * DVector::from_column_slice(v.weights());
    let sigma = right.norm();
    if sigma > 0.0 {
        right /= sigma;
    }
    Ok(Closure {
        sigma,
        left,
        right,
        tail_energy: pod.tail_energy,
    })
}

/// Record of a rank-k CP-TT update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankKDiagnostics {
    /// Dimension split first, by the largest `Σ_{j≤k} σ_j²`.
    pub split_mode: usize,
    /// The `k` leading singular values of the split unfolding.
    pub split_sigmas: Vec<f64>,
    /// One rank-1 record per branch, with dimension indices of the full tensor.
    pub branches: Vec<CpttDiagnostics>,
}

/// Largest `k` accepted by [`cptt_rankk`] for `f`.
pub fn max_rank_k(f: &CpTensor) -> usize {
    f.grid()
        .dims()
        .iter()
        .map(|&n| n.min(f.rank()))
        .min()
        .unwrap_or(0)
}

/// `k` CP-TT terms whose factors along the split dimension are orthonormal,
/// so `‖Σ t_j‖² = Σ ‖t_j‖²`.
pub fn cptt_rankk(f: &CpTensor, k: usize) -> Result<(Vec<PureTensor>, RankKDiagnostics)> {
    let d = f.order();
    if d < 2 {
        return Err(Error::arg("CP-TT needs a tensor of order at least 2"));
    }
    let kmax = max_rank_k(f);
    if k == 0 || k > kmax {
        return Err(Error::arg(format!("rank-k update with k = {k} outside 1..={kmax}")));
    }

    let grams = mode_grams(f);
    let loo = hadamard_leave_one_out(&grams, f.rank());
    let mut best: Option<(f64, PodResult)> = None;
    for (mode, h) in loo.iter().enumerate() {
        let pod = pod_from_hadamard(f, h, mode, k, PodPath::Auto);
        let score: f64 = pod.singular_values.iter().map(|s| s * s).sum();
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, pod));
        }
    }
    let (_, split) = best.expect("order at least 2");
    let split_mode = split.mode;

    let branches: Vec<Result<(PureTensor, CpttDiagnostics)>> = (0..k)
        .into_par_iter()
        .map(|j| {
            let u = split.left_modes.column(j).into_owned();
            let branch = f.contract_mode(split_mode, &u)?;
            let (weight, mut rest, mut diag) = if branch.order() >= 2 {
                let (t, diag) = cptt_rank1(&branch)?;
                (t.weight(), t.modes().to_vec(), diag)
            } else {
                let v = branch.factor(0) * DVector::from_column_slice(branch.weights());
                (1.0, vec![v], CpttDiagnostics::default())
            };
            for idx in diag.order.iter_mut() {
                if *idx >= split_mode {
                    *idx += 1;
                }
            }
            diag.order.insert(0, split_mode);
            rest.insert(split_mode, u);
            let term = PureTensor::new(f.grid().clone(), weight, rest)?;
            Ok((term, diag))
        })
        .collect();

    let mut terms = Vec::with_capacity(k);
    let mut diags = Vec::with_capacity(k);
    for b in branches {
        let (t, diag) = b?;
        terms.push(t);
        diags.push(diag);
    }
    Ok((
        terms,
        RankKDiagnostics {
            split_mode,
            split_sigmas: split.singular_values,
            branches: diags,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::{random_cp, random_rank_one};
    use crate::tensor::{axpy, DenseTensor, Grid};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn residual_norm(f: &CpTensor, t: &PureTensor) -> f64 {
        axpy(-1.0, &t.to_cp(), f).unwrap().norm_stable()
    }

    /// `u` inserted as a new dimension at `pos` of `rest` (dense outer product).
    fn insert_mode(rest: &DenseTensor, pos: usize, u: &DVector<f64>) -> DenseTensor {
        let mut dims = rest.grid().dims().to_vec();
        dims.insert(pos, u.len());
        let inner: usize = dims[pos + 1..].iter().product();
        let outer: usize = dims[..pos].iter().product();
        let mut values = Vec::with_capacity(rest.values().len() * u.len());
        for o in 0..outer {
            for x in 0..u.len() {
                for i in 0..inner {
                    values.push(u[x] * rest.values()[o * inner + i]);
                }
            }
        }
        DenseTensor::new(Grid::new(dims).unwrap(), values).unwrap()
    }

    #[test]
    fn recovers_rank_one_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in 2..6 {
            let f = random_rank_one(&mut rng, &vec![6; d]);
            let (t, diag) = cptt_rank1(&f).unwrap();
            assert!(residual_norm(&f, &t) <= 1e-12 * f.norm());
            assert!(diag.predicted_residual_sq <= 1e-20 * f.norm().powi(2));
            assert!(t.weight() > 0.0);
        }
    }

    #[test]
    fn zero_rank_gives_zero_term() {
        let f = CpTensor::zeros(Grid::uniform(3, 4).unwrap());
        let (t, diag) = cptt_rank1(&f).unwrap();
        assert_eq!(t.weight(), 0.0);
        assert!(diag.order.is_empty());
    }

    #[test]
    fn matrix_case_is_eckart_young() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let f = random_cp(&mut rng, &[9, 11], 6);
        let (t, _) = cptt_rank1(&f).unwrap();
        let sv = f.to_dense().unwrap().unfolding(0).unwrap().singular_values();
        let mut sv: Vec<f64> = sv.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        let tail: f64 = sv[1..].iter().map(|s| s * s).sum();
        let res = residual_norm(&f, &t).powi(2);
        assert!((res - tail).abs() <= 1e-10 * f.norm().powi(2));
    }

    #[test]
    fn step_identities_against_dense_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let f = random_cp(&mut rng, &[5, 5, 5, 5], 3);
        let (t, diag) = cptt_rank1(&f).unwrap();
        let fnorm = f.norm();

        let res2 = residual_norm(&f, &t).powi(2);
        assert!((res2 - diag.predicted_residual_sq).abs() <= 1e-8 * res2);

        let mut current = f.to_dense().unwrap();
        let mut remaining: Vec<usize> = (0..4).collect();
        for step in 0..2 {
            let dim = diag.order[step];
            let pos = remaining.iter().position(|&x| x == dim).unwrap();
            let u = t.mode(dim);
            let next = current.contract_mode(pos, u).unwrap();
            let g = current.sub(&insert_mode(&next, pos, u)).unwrap();
            let g_on_u = g.contract_mode(pos, u).unwrap();
            assert!(g_on_u.norm() <= 1e-10 * fnorm);
            assert!((g.norm() - diag.residual_g_norms[step]).abs() <= 1e-8 * fnorm);
            current = next;
            remaining.remove(pos);
        }
    }

    #[test]
    fn both_pod_routes_give_same_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let f = random_cp(&mut rng, &[4, 7, 5, 6], 5);
        let (a, da) = cptt_rank1_with(&f, PodPath::Direct).unwrap();
        let (b, db) = cptt_rank1_with(&f, PodPath::Fiber).unwrap();
        assert_eq!(da.order, db.order);
        assert!((a.weight() - b.weight()).abs() <= 1e-10 * f.norm());
        for k in 0..4 {
            assert!((a.mode(k).dot(b.mode(k)).abs() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn rankk_with_k_one_matches_rank1() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let f = random_cp(&mut rng, &[5, 6, 4], 4);
        let (t, d1) = cptt_rank1(&f).unwrap();
        let (ts, dk) = cptt_rankk(&f, 1).unwrap();
        assert_eq!(ts.len(), 1);
        assert_eq!(dk.branches[0].order, d1.order);
        assert!((ts[0].weight() - t.weight()).abs() <= 1e-12 * f.norm());
        assert!((ts[0].inner(&t) - t.weight().powi(2)).abs() <= 1e-10 * f.norm().powi(2));
    }

    #[test]
    fn rankk_terms_are_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let f = random_cp(&mut rng, &[6, 6, 6], 4);
        let (ts, diag) = cptt_rankk(&f, 2).unwrap();
        let sum = CpTensor::from_terms(f.grid().clone(), &ts).unwrap();
        let lhs = sum.norm().powi(2);
        let rhs: f64 = ts.iter().map(|t| t.norm().powi(2)).sum();
        assert!((lhs - rhs).abs() <= 1e-10 * rhs);
        let m = diag.split_mode;
        assert!(ts[0].mode(m).dot(ts[1].mode(m)).abs() < 1e-12);

        // residual through the CP route matches the dense oracle
        let cp_res = axpy(-1.0, &sum, &f).unwrap().norm_stable();
        let dense = f.to_dense().unwrap().sub(&sum.to_dense().unwrap()).unwrap().norm();
        assert!((cp_res - dense).abs() <= 1e-10 * f.norm());
    }

    #[test]
    fn rankk_on_matrices_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let f = random_cp(&mut rng, &[7, 5], 3);
        assert!(cptt_rankk(&f, 0).is_err());
        assert!(cptt_rankk(&f, 4).is_err());
        let (ts, _) = cptt_rankk(&f, 3).unwrap();
        let sum = CpTensor::from_terms(f.grid().clone(), &ts).unwrap();
        // k = rank on a matrix reproduces it
        assert!(axpy(-1.0, &sum, &f).unwrap().norm_stable() <= 1e-10 * f.norm());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn scaling_preserves_order(seed in 0u64..10_000, alpha in 0.01f64..100.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let f = random_cp(&mut rng, &[4, 5, 3, 4], 3);
                let (t, d) = cptt_rank1(&f).unwrap();
                let (ts, ds) = cptt_rank1(&f.scaled(alpha)).unwrap();
                prop_assert_eq!(&d.order, &ds.order);
                prop_assert!((ts.weight() - alpha * t.weight()).abs() <= 1e-10 * alpha * f.norm());
                for (a, b) in d.top_sigmas.iter().zip(&ds.top_sigmas) {
                    prop_assert!((alpha * a - b).abs() <= 1e-10 * alpha * f.norm());
                }
            }

            #[test]
            fn residual_identity_and_contraction(seed in 0u64..10_000, r in 1usize..5) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let f = random_cp(&mut rng, &[4, 3, 5, 3], r);
                let (t, d) = cptt_rank1(&f).unwrap();
                let res = residual_norm(&f, &t);
                let fnorm = f.norm();
                prop_assert!(res <= fnorm * (1.0 + 1e-12));
                prop_assert!((res * res - d.predicted_residual_sq).abs() <= 1e-8 * fnorm * fnorm);
                let mut sorted = d.order.clone();
                sorted.sort();
                prop_assert_eq!(sorted, vec![0, 1, 2, 3]);
            }
        }
    }
}
