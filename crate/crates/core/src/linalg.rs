//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

use crate::tensor::CpTensor;

/// Flips `v` so that its largest-magnitude entry is positive (first such entry
/// on ties). Returns whether a flip happened.
pub(crate) fn sign_fix(v: &mut [f64]) -> bool {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
        true
    } else {
        false
    }
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues in non-increasing
/// order and eigenvector columns sign-fixed.
pub(crate) fn sym_eigen_desc(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let eig = m.symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (j, &i) in idx.iter().enumerate() {
        let mut col = eig.eigenvectors.column(i).into_owned();
        sign_fix(col.as_mut_slice());
        vectors.set_column(j, &col);
    }
    (values, vectors)
}

/// Thin SVD with singular values in non-increasing order. Left vectors are
/// sign-fixed and the matching right vectors flipped with them.
///
/// One-sided Jacobi on the (QR-reduced) matrix: small singular values keep
/// full relative accuracy and rank-deficient inputs are handled exactly,
/// which the bidiagonal SVD of nalgebra 0.35 does not guarantee when vectors
/// are requested.
pub(crate) fn svd_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    if k == 0 {
        return (Vec::new(), DMatrix::zeros(rows, 0), DMatrix::zeros(cols, 0));
    }
    if rows < cols {
        let (sigma, right, left) = svd_desc(&m.transpose());
        return finish(sigma, left, right);
    }
    let (q, r) = if rows > cols {
        let qr = m.clone().qr();
        (Some(qr.q()), qr.r())
    } else {
        (None, m.clone())
    };
    let (sigma, u_r, v) = one_sided_jacobi(r);
    let left = match q {
        Some(q) => q * u_r,
        None => u_r,
    };
    finish(sigma, left, v)
}

/// Sorts the triplets, completes the left basis where `σ = 0`, fixes signs.
fn finish(sigma: Vec<f64>, left: DMatrix<f64>, right: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    let k = sigma.len();
    let mut idx: Vec<usize> = (0..k).collect();
    idx.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
    let nonzero = idx.iter().take_while(|&&i| sigma[i] > 0.0).count();
    let kept: Vec<DVector<f64>> = idx[..nonzero].iter().map(|&i| left.column(i).into_owned()).collect();
    let basis = if nonzero == k {
        DMatrix::from_columns(&kept)
    } else {
        complete_orthonormal(&DMatrix::from_columns_or_empty(left.nrows(), &kept), k)
    };
    let mut l = DMatrix::zeros(left.nrows(), k);
    let mut r = DMatrix::zeros(right.nrows(), k);
    let mut values = Vec::with_capacity(k);
    for (j, &i) in idx.iter().enumerate() {
        let mut a = basis.column(j).into_owned();
        let mut b = right.column(i).into_owned();
        if sign_fix(a.as_mut_slice()) {
            b.neg_mut();
        }
        l.set_column(j, &a);
        r.set_column(j, &b);
        values.push(sigma[i]);
    }
    (values, l, r)
}

trait FromColumnsOrEmpty {
    fn from_columns_or_empty(rows: usize, cols: &[DVector<f64>]) -> DMatrix<f64>;
}

impl FromColumnsOrEmpty for DMatrix<f64> {
    fn from_columns_or_empty(rows: usize, cols: &[DVector<f64>]) -> DMatrix<f64> {
        if cols.is_empty() {
            DMatrix::zeros(rows, 0)
        } else {
            DMatrix::from_columns(cols)
        }
    }
}

const JACOBI_MAX_SWEEPS: usize = 80;

/// Hestenes one-sided Jacobi for a matrix with at least as many rows as
/// columns. Returns unordered `σ`, left vectors (zero where `σ = 0`) and
/// right vectors.
fn one_sided_jacobi(mut w: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (m, n) = w.shape();
    let mut v = DMatrix::<f64>::identity(n, n);
    let tol = f64::EPSILON * (m as f64).sqrt();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (w.column(p), w.column(q));
                    (cp.norm_squared(), cq.norm_squared(), cp.dot(&cq))
                };
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta.abs() > 1e150 {
                    0.5 / zeta
                } else {
                    zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(w.as_mut_slice(), m, p, q, c, s);
                rotate(v.as_mut_slice(), n, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sigma = Vec::with_capacity(n);
    for j in 0..n {
        let nj = w.column(j).norm();
        if nj > 0.0 {
            w.column_mut(j).scale_mut(1.0 / nj);
        }
        sigma.push(nj);
    }
    (sigma, w, v)
}

/// Column-major plane rotation of columns `p < q`.
fn rotate(data: &mut [f64], rows: usize, p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = data.split_at_mut(q * rows);
    let cp = &mut head[p * rows..(p + 1) * rows];
    let cq = &mut tail[..rows];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Per-mode Gram matrices `F_kᵀ F_k` of the factor columns.
pub(crate) fn mode_grams(t: &CpTensor) -> Vec<DMatrix<f64>> {
    t.factors().iter().map(gram).collect()
}

pub(crate) fn gram(f: &DMatrix<f64>) -> DMatrix<f64> {
    let mut g = f.tr_mul(f);
    symmetrize(&mut g);
    g
}

/// Replaces `m` by `(m + mᵀ)/2` in place.
pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in j + 1..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Elementwise product of all Grams except the one at `skip`.
pub(crate) fn hadamard_except(grams: &[DMatrix<f64>], r: usize, skip: usize) -> DMatrix<f64> {
    let mut h = DMatrix::from_element(r, r, 1.0);
    for (k, g) in grams.iter().enumerate() {
        if k != skip {
            h.component_mul_assign(g);
        }
    }
    h
}

/// For every `i`, the elementwise product of all Grams except the `i`-th,
/// using prefix and suffix products.
pub(crate) fn hadamard_leave_one_out(grams: &[DMatrix<f64>], r: usize) -> Vec<DMatrix<f64>> {
    let d = grams.len();
    let mut out = Vec::with_capacity(d);
    let mut acc = DMatrix::from_element(r, r, 1.0);
    for g in grams {
        out.push(acc.clone());
        acc.component_mul_assign(g);
    }
    let mut suffix = DMatrix::from_element(r, r, 1.0);
    for k in (0..d).rev() {
        out[k].component_mul_assign(&suffix);
        if k > 0 {
            suffix.component_mul_assign(&grams[k]);
        }
    }
    out
}

/// Extends the orthonormal columns of `basis` to `k` orthonormal columns by
/// Gram-Schmidt against canonical basis vectors.
pub(crate) fn complete_orthonormal(basis: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let n = basis.nrows();
    let mut cols: Vec<DVector<f64>> = basis.column_iter().map(|c| c.into_owned()).collect();
    let mut e = 0;
    while cols.len() < k && e < n {
        let mut v = DVector::zeros(n);
        v[e] = 1.0;
        e += 1;
        for _ in 0..2 {
            for c in &cols {
                let p = c.dot(&v);
                v.axpy(-p, c, 1.0);
            }
        }
        let nv = v.norm();
        if nv > 1e-8 {
            v /= nv;
            sign_fix(v.as_mut_slice());
            cols.push(v);
        }
    }
    DMatrix::from_columns(&cols)
}
