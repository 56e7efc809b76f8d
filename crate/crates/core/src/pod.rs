//! Leading singular values and left singular vectors of a CP tensor's
//! unfoldings, computed without forming the unfolding.
//!
//! The unfolding `M_i` groups dimension `i` against all the others. Its left
//! singular vectors are the eigenvectors of the correlation kernel
//!
//! ```text
//! κ(x, x') = Σ_{p,q} c_p c_q f_p(x) f_q(x') Π_{k≠i} ⟨f_p^(k), f_q^(k)⟩
//! ```
//!
//! which only needs the per-mode Gram matrices of the factors. Two routes are
//! available:
//!
//! * **direct**: assemble the `N_i × N_i` kernel and diagonalize it;
//! * **fiber**: orthogonalize the fibers `f_p^(i) = Σ_m a_pm z_m`, assemble the
//!   `s × s` core `A = aᵀ W a` with `W = diag(c) H diag(c)`, diagonalize
//!   `A = V S Vᵀ` and map back, `u = Z V`, `σ = sqrt(S)`.
//!
//! [`PodPath::Auto`] takes the direct route when `N_i ≤ r` and the fiber route
//! otherwise, which is the cheaper of the two.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{complete_orthonormal, hadamard_except, mode_grams, sign_fix, svd_desc, sym_eigen_desc, symmetrize};
use crate::tensor::CpTensor;

/// Relative singular-value cutoff used when orthogonalizing a fiber family.
pub const FIBER_TRUNCATION: f64 = 1e-14;

/// Which construction [`unfolding_pod_with`] should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PodPath {
    /// Direct when `N_mode ≤ r`, fiber otherwise.
    #[default]
    Auto,
    /// Eigen-decompose the `N_mode × N_mode` correlation kernel.
    Direct,
    /// Fiber orthogonalization followed by an `s × s` eigenproblem.
    Fiber,
}

impl PodPath {
    fn resolve(self, n_mode: usize, rank: usize) -> PodPath {
        match self {
            PodPath::Auto if n_mode <= rank => PodPath::Direct,
            PodPath::Auto => PodPath::Fiber,
            p => p,
        }
    }
}

/// Leading left singular triplets of one unfolding.
#[derive(Debug, Clone, PartialEq)]
pub struct PodResult {
    pub mode: usize,
    /// Non-increasing, non-negative.
    pub singular_values: Vec<f64>,
    /// `N_mode × k`, orthonormal columns.
    pub left_modes: DMatrix<f64>,
    /// Sum of the squared singular values that were *not* returned.
    pub tail_energy: f64,
    /// The route that was actually taken.
    pub path: PodPath,
}

impl PodResult {
    pub fn k(&self) -> usize {
        self.singular_values.len()
    }

    fn empty(mode: usize, n: usize, path: PodPath) -> Self {
        PodResult {
            mode,
            singular_values: Vec::new(),
            left_modes: DMatrix::zeros(n, 0),
            tail_energy: 0.0,
            path,
        }
    }
}

/// Thin orthogonal factorization of a family of fibers (the columns of a
/// factor matrix): `fiber_p = Σ_m coeffs[p, m] basis[:, m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiberPod {
    /// `N × s`, orthonormal columns.
    pub basis: DMatrix<f64>,
    /// `r × s`.
    pub coeffs: DMatrix<f64>,
}

impl FiberPod {
    /// Numerical rank `s` of the fiber family.
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }
}

pub fn fiber_pod(factor: &DMatrix<f64>) -> Result<FiberPod> {
    if !factor.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("fiber matrix".into()));
    }
    let (n, r) = factor.shape();
    let (sigma, left, right) = svd_desc(factor);
    let cutoff = sigma.first().copied().unwrap_or(0.0) * FIBER_TRUNCATION;
    let s = sigma.iter().take_while(|&&x| x > cutoff && x > 0.0).count();
    let basis = left.columns(0, s).into_owned();
    let mut coeffs = DMatrix::zeros(r, s);
    for m in 0..s {
        coeffs.set_column(m, &(right.column(m) * sigma[m]));
    }
    debug_assert_eq!(basis.nrows(), n);
    Ok(FiberPod { basis, coeffs })
}

/// `A = aᵀ W a` with `W_pq = c_p c_q Π_k G^(k)_pq` over the supplied Grams of
/// the non-unfolded dimensions. Symmetric positive semidefinite up to rounding.
pub fn assemble_gram_core(
    fp: &FiberPod,
    weights: &[f64],
    other_grams: &[DMatrix<f64>],
) -> Result<DMatrix<f64>> {
    let r = weights.len();
    if fp.coeffs.nrows() != r {
        return Err(Error::dim(format!(
            "fiber coefficients have {} rows for {r} weights",
            fp.coeffs.nrows()
        )));
    }
    if let Some(g) = other_grams.iter().find(|g| g.shape() != (r, r)) {
        return Err(Error::dim(format!(
            "Gram matrix is {}x{}, expected {r}x{r}",
            g.nrows(),
            g.ncols()
        )));
    }
    let h = hadamard_except(other_grams, r, usize::MAX);
    Ok(core_from_hadamard(fp, weights, &h))
}

fn weighted(h: &DMatrix<f64>, weights: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(h.nrows(), h.ncols(), |p, q| weights[p] * weights[q] * h[(p, q)])
}

fn core_from_hadamard(fp: &FiberPod, weights: &[f64], h: &DMatrix<f64>) -> DMatrix<f64> {
    let w = weighted(h, weights);
    let mut a = fp.coeffs.tr_mul(&(w * &fp.coeffs));
    symmetrize(&mut a);
    a
}

/// The `k` leading left singular triplets of the `mode` unfolding of `a`,
/// choosing the route automatically.
pub fn unfolding_pod(a: &CpTensor, mode: usize, k: usize) -> Result<PodResult> {
    unfolding_pod_with(a, mode, k, PodPath::Auto)
}

pub fn unfolding_pod_with(a: &CpTensor, mode: usize, k: usize, path: PodPath) -> Result<PodResult> {
    if mode >= a.order() {
        return Err(Error::dim(format!("mode {mode} out of range for order {}", a.order())));
    }
    let n = a.grid().len(mode);
    let r = a.rank();
    if r == 0 {
        return Ok(PodResult::empty(mode, n, path.resolve(n, r)));
    }
    if k == 0 || k > n.min(r) {
        return Err(Error::arg(format!(
            "k = {k} outside 1..={} for mode {mode}",
            n.min(r)
        )));
    }
    let grams = mode_grams(a);
    let h = hadamard_except(&grams, r, mode);
    Ok(pod_from_hadamard(a, &h, mode, k, path))
}

/// Every singular triplet of the `mode` unfolding (`min(N_mode, r)` of them).
pub fn unfolding_spectrum(a: &CpTensor, mode: usize) -> Result<PodResult> {
    if mode >= a.order() {
        return Err(Error::dim(format!("mode {mode} out of range for order {}", a.order())));
    }
    let k = a.grid().len(mode).min(a.rank()).max(1);
    unfolding_pod(a, mode, k)
}

/// Core routine: `h` is the Hadamard product of the Grams of every dimension
/// except `mode`. Callers guarantee `r ≥ 1` and `1 ≤ k ≤ min(N, r)`.
pub(crate) fn pod_from_hadamard(
    a: &CpTensor,
    h: &DMatrix<f64>,
    mode: usize,
    k: usize,
    path: PodPath,
) -> PodResult {
    pod_from_hadamard_cached(a, h, mode, k, path, &mut None)
}

/// [`pod_from_hadamard`] reusing (or filling) a fiber POD of the factor of
/// `mode`, which does not change when other dimensions are contracted.
pub(crate) fn pod_from_hadamard_cached(
    a: &CpTensor,
    h: &DMatrix<f64>,
    mode: usize,
    k: usize,
    path: PodPath,
    fiber: &mut Option<FiberPod>,
) -> PodResult {
    let f = a.factor(mode);
    let n = f.nrows();
    let path = path.resolve(n, a.rank());
    let (eigenvalues, modes) = match path {
        PodPath::Direct => {
            let w = weighted(h, a.weights());
            let kernel = f * w * f.transpose();
            sym_eigen_desc((&kernel + kernel.transpose()) * 0.5)
        }
        _ => {
            let fp = fiber.get_or_insert_with(|| fiber_pod(f).expect("factors are finite"));
            let core = core_from_hadamard(fp, a.weights(), h);
            let (values, vectors) = sym_eigen_desc(core);
            (values, &fp.basis * vectors)
        }
    };
    let clamped: Vec<f64> = eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let available = clamped.len().min(k);
    let mut singular_values: Vec<f64> = clamped[..available].iter().map(|l| l.sqrt()).collect();
    singular_values.resize(k, 0.0);
    let tail_energy = clamped.iter().skip(k).sum();

    let mut left = modes.columns(0, available).into_owned();
    for mut col in left.column_iter_mut() {
        sign_fix(col.as_mut_slice());
    }
    if available < k {
        left = complete_orthonormal(&left, k);
    }
    PodResult {
        mode,
        singular_values,
        left_modes: left,
        tail_energy,
        path,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::{random_cp, random_rank_one};
    use crate::tensor::Grid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn orthonormality_defect(m: &DMatrix<f64>) -> f64 {
        (m.tr_mul(m) - DMatrix::identity(m.ncols(), m.ncols())).abs().max()
    }

    #[test]
    fn fiber_pod_of_orthonormal_fibers() {
        let q = DMatrix::from_fn(6, 3, |i, j| if i == 2 * j { 1.0 } else { 0.0 });
        let fp = fiber_pod(&q).unwrap();
        assert_eq!(fp.rank(), 3);
        for m in 0..3 {
            let col = fp.basis.column(m);
            let hit = (0..3).find(|&j| (col.dot(&q.column(j)).abs() - 1.0).abs() < 1e-14);
            assert!(hit.is_some());
        }
        let c = fp.coeffs.abs();
        assert!((c.tr_mul(&c) - DMatrix::identity(3, 3)).norm() < 1e-14);
    }

    #[test]
    fn duplicate_fibers_have_rank_one() {
        let col: Vec<f64> = (0..5).map(|i| (i as f64).cos()).collect();
        let m = DMatrix::from_fn(5, 2, |i, _| col[i]);
        assert_eq!(fiber_pod(&m).unwrap().rank(), 1);
        assert_eq!(fiber_pod(&DMatrix::zeros(4, 3)).unwrap().rank(), 0);
    }

    #[test]
    fn fiber_pod_reconstructs_random_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = random_cp(&mut rng, &[8, 2], 5);
        let m = t.factor(0);
        let fp = fiber_pod(m).unwrap();
        assert!(orthonormality_defect(&fp.basis) < 1e-12);
        let rec = &fp.basis * fp.coeffs.transpose();
        assert!((rec - m).abs().max() < 1e-12);
        // the fiber singular values are the column norms of the coefficients
        let oracle = m.clone().singular_values();
        let mut oracle: Vec<f64> = oracle.iter().copied().collect();
        oracle.sort_by(|a, b| b.total_cmp(a));
        for (j, s) in oracle.iter().enumerate() {
            assert!((fp.coeffs.column(j).norm() - s).abs() < 1e-12);
        }
    }

    #[test]
    fn gram_core_of_single_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_cp(&mut rng, &[4, 5, 6], 1);
        let fp = fiber_pod(t.factor(0)).unwrap();
        let grams = mode_grams(&t);
        let a = assemble_gram_core(&fp, t.weights(), &grams[1..]).unwrap();
        assert_eq!(a.shape(), (1, 1));
        assert!((a[(0, 0)] - t.weights()[0].powi(2)).abs() < 1e-12);
    }

    #[test]
    fn gram_core_diagonal_for_orthogonal_terms() {
        let grid = Grid::new(vec![7, 4, 4]).unwrap();
        let e = |n: usize, r: usize| DMatrix::from_fn(n, r, |i, j| if i == j { 1.0 } else { 0.0 });
        let t = CpTensor::new(grid, vec![3.0, -1.0, 0.5], vec![e(7, 3), e(4, 3), e(4, 3)]).unwrap();
        let fp = fiber_pod(t.factor(0)).unwrap();
        let grams = mode_grams(&t);
        let a = assemble_gram_core(&fp, t.weights(), &grams[1..]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(a[(i, j)].abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn gram_core_rejects_bad_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_cp(&mut rng, &[4, 5, 6], 2);
        let fp = fiber_pod(t.factor(0)).unwrap();
        assert!(assemble_gram_core(&fp, &[1.0], &[]).is_err());
        assert!(assemble_gram_core(&fp, t.weights(), &[DMatrix::zeros(3, 3)]).is_err());
    }

    #[test]
    fn rank_one_unfolding() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random_rank_one(&mut rng, &[5, 6, 7]);
        for mode in 0..3 {
            let pod = unfolding_pod(&t, mode, 1).unwrap();
            assert!((pod.singular_values[0] - t.weights()[0].abs()).abs() < 1e-12);
            let u = pod.left_modes.column(0);
            assert!((u.dot(&t.factor(mode).column(0)).abs() - 1.0).abs() < 1e-12);
            assert!(pod.tail_energy.abs() < 1e-12);
        }
    }

    #[test]
    fn k_out_of_range_and_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = random_cp(&mut rng, &[3, 6], 4);
        assert!(unfolding_pod(&t, 0, 0).is_err());
        assert!(unfolding_pod(&t, 0, 4).is_err());
        assert!(unfolding_pod(&t, 2, 1).is_err());
        let z = CpTensor::zeros(t.grid().clone());
        let pod = unfolding_pod(&z, 0, 1).unwrap();
        assert_eq!(pod.k(), 0);
    }

    #[test]
    fn matrix_singular_values_match_dense_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = random_cp(&mut rng, &[9, 7], 5);
        let dense = t.to_dense().unwrap().unfolding(0).unwrap();
        let mut oracle: Vec<f64> = dense.singular_values().iter().copied().collect();
        oracle.sort_by(|a, b| b.total_cmp(a));
        for path in [PodPath::Direct, PodPath::Fiber] {
            let pod = unfolding_pod_with(&t, 0, 5, path).unwrap();
            for (s, o) in pod.singular_values.iter().zip(&oracle) {
                assert!((s - o).abs() <= 1e-10 * oracle[0], "{path:?}: {s} vs {o}");
            }
        }
    }

    #[test]
    fn both_paths_agree_on_order_four() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = random_cp(&mut rng, &[6, 7, 8, 9], 5);
        for mode in 0..4 {
            let d = unfolding_pod_with(&t, mode, 5, PodPath::Direct).unwrap();
            let f = unfolding_pod_with(&t, mode, 5, PodPath::Fiber).unwrap();
            assert_eq!(d.path, PodPath::Direct);
            assert_eq!(f.path, PodPath::Fiber);
            let s1 = d.singular_values[0];
            for j in 0..5 {
                assert!((d.singular_values[j] - f.singular_values[j]).abs() <= 1e-10 * s1);
                let overlap = d.left_modes.column(j).dot(&f.left_modes.column(j));
                assert!((overlap - 1.0).abs() < 1e-8, "mode {mode} col {j}: {overlap}");
            }
        }
    }

    #[test]
    fn auto_path_follows_cost_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = random_cp(&mut rng, &[3, 10], 4);
        assert_eq!(unfolding_pod(&t, 0, 1).unwrap().path, PodPath::Direct);
        assert_eq!(unfolding_pod(&t, 1, 1).unwrap().path, PodPath::Fiber);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn energy_identity(seed in 0u64..10_000, r in 1usize..6, mode in 0usize..3) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let t = random_cp(&mut rng, &[4, 6, 5], r);
                let pod = unfolding_spectrum(&t, mode).unwrap();
                let energy: f64 = pod.singular_values.iter().map(|s| s * s).sum::<f64>() + pod.tail_energy;
                let norm2 = t.norm().powi(2);
                prop_assert!((energy - norm2).abs() <= 1e-8 * norm2);
                prop_assert!(pod.singular_values[0] <= t.norm() * (1.0 + 1e-12));
                prop_assert!(pod.singular_values.windows(2).all(|w| w[0] >= w[1]));
                prop_assert!(orthonormality_defect(&pod.left_modes) < 1e-10);
            }

            #[test]
            fn spectrum_ignores_term_order(seed in 0u64..10_000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let t = random_cp(&mut rng, &[5, 4, 3], 4);
                let perm = [2usize, 0, 3, 1];
                let factors = t.factors().iter()
                    .map(|f| DMatrix::from_fn(f.nrows(), 4, |i, j| f[(i, perm[j])]))
                    .collect();
                let weights = perm.iter().map(|&j| t.weights()[j]).collect();
                let p = CpTensor::new(t.grid().clone(), weights, factors).unwrap();
                // and with the other two dimensions swapped
                let swapped = CpTensor::new(
                    crate::tensor::Grid::new(vec![5, 3, 4]).unwrap(),
                    t.weights().to_vec(),
                    vec![t.factor(0).clone(), t.factor(2).clone(), t.factor(1).clone()],
                ).unwrap();
                let a = unfolding_spectrum(&t, 0).unwrap();
                for other in [&p, &swapped] {
                    let b = unfolding_spectrum(other, 0).unwrap();
                    for (x, y) in a.singular_values.iter().zip(&b.singular_values) {
                        prop_assert!((x - y).abs() <= 1e-10 * a.singular_values[0]);
                    }
                }
            }
        }
    }
}
