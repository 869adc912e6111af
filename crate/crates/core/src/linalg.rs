//! Dense symmetric/triangular kernels used by the weighted least-squares
//! solver and the path decimation loop.
//!
//! Everything works on the leading `k x k` corner of a row-major buffer so
//! the decimation loop can shrink the active system in place. The factor
//! convention is upper-triangular: `G = R^T R`.

use ndarray::{linalg::general_mat_mul, s, Array2, ArrayView2};

/// Multiplies `X X^T` into the upper triangle of a fresh `n x n` matrix,
/// where `x` is `n x m`. The strict lower triangle is left as zeros.
pub(crate) fn gram_upper(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut g = Array2::<f64>::zeros((n, n));
    const PANEL: usize = 256;
    let mut jb = 0;
    while jb < n {
        let je = (jb + PANEL).min(n);
        let rows = x.slice(s![jb..je, ..]);
        let rest = x.slice(s![jb.., ..]);
        let mut out = g.slice_mut(s![jb..je, jb..]);
        general_mat_mul(1.0, &rows, &rest.t(), 0.0, &mut out);
        jb = je;
    }
    // Zero the strict lower part of each panel row block.
    for i in 0..n {
        for j in 0..i {
            g[[i, j]] = 0.0;
        }
    }
    g
}

/// In-place upper Cholesky of the leading `k x k` corner: on success the
/// upper triangle holds `R` with `G = R^T R`. Entries below the diagonal are
/// not referenced. Returns the failing pivot index if the matrix is not
/// positive definite.
pub(crate) fn cholesky_upper_in_place(g: &mut Array2<f64>, k: usize) -> Result<(), usize> {
    let stride = g.ncols();
    const BS: usize = 96;
    const PANEL: usize = 256;
    let mut cb = 0;
    while cb < k {
        let ce = (cb + BS).min(k);
        // Factor the block column in bordered form: each pivot row is scaled
        // across the full remaining width, then swept from the rows below it
        // inside the block.
        {
            let buf = g.as_slice_mut().expect("contiguous row-major buffer");
            for j in cb..ce {
                let row_j = j * stride;
                let d = buf[row_j + j];
                if !(d > 0.0) || !d.is_finite() {
                    return Err(j);
                }
                let d = d.sqrt();
                buf[row_j + j] = d;
                let inv = 1.0 / d;
                for v in &mut buf[row_j + j + 1..row_j + k] {
                    *v *= inv;
                }
                for i in j + 1..ce {
                    let c = buf[row_j + i];
                    if c != 0.0 {
                        let (top, bottom) = buf.split_at_mut(i * stride);
                        let src = &top[row_j + i..row_j + k];
                        let dst = &mut bottom[i..k];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d -= c * *s;
                        }
                    }
                }
            }
        }
        // Trailing update G[ce.., ce..] -= R[cb..ce, ce..]^T R[cb..ce, ce..]
        // as gemm panels over block rows of the trailing triangle.
        let mut jb = ce;
        while jb < k {
            let je = (jb + PANEL).min(k);
            let (xpanel, mut cblock) =
                g.multi_slice_mut((s![cb..ce, jb..k], s![jb..je, jb..k]));
            let x = xpanel.view();
            let a = x.slice(s![.., ..je - jb]);
            general_mat_mul(-1.0, &a.t(), &x, 1.0, &mut cblock);
            jb = je;
        }
        cb = ce;
    }
    Ok(())
}

/// Adds `ridge` to the first `k` diagonal entries.
pub(crate) fn add_ridge(g: &mut Array2<f64>, k: usize, ridge: f64) {
    for i in 0..k {
        g[[i, i]] += ridge;
    }
}

/// Solves `R^T z = b` (forward substitution) on the leading `k x k` corner.
pub(crate) fn solve_transposed_upper(r: &Array2<f64>, k: usize, b: &[f64], z: &mut Vec<f64>) {
    let stride = r.ncols();
    let buf = r.as_slice().expect("contiguous row-major buffer");
    z.clear();
    z.extend_from_slice(&b[..k]);
    for j in 0..k {
        let row = j * stride;
        let zj = z[j] / buf[row + j];
        z[j] = zj;
        if zj != 0.0 {
            let src = &buf[row + j + 1..row + k];
            for (w, s) in z[j + 1..k].iter_mut().zip(src) {
                *w -= zj * *s;
            }
        }
    }
}

/// Solves `R g = z` (back substitution) on the leading `k x k` corner.
pub(crate) fn solve_upper(r: &Array2<f64>, k: usize, z: &[f64], g: &mut Vec<f64>) {
    let stride = r.ncols();
    let buf = r.as_slice().expect("contiguous row-major buffer");
    g.clear();
    g.extend_from_slice(&z[..k]);
    for i in (0..k).rev() {
        let row = i * stride;
        let acc = dot(&buf[row + i + 1..row + k], &g[i + 1..k]);
        g[i] = (g[i] - acc) / buf[row + i];
    }
}

/// Deletes column `p` from the upper factor living in the leading `k x k`
/// corner and re-triangularizes with Givens rotations, leaving a valid
/// `(k-1) x (k-1)` factor of the Gram matrix with variable `p` removed.
pub(crate) fn delete_column(r: &mut Array2<f64>, k: usize, p: usize) {
    let stride = r.ncols();
    let buf = r.as_slice_mut().expect("contiguous row-major buffer");
    // Shift entries right of the deleted column one slot left in each row.
    // Rows past p also slide their diagonal-onward segment.
    for i in 0..k {
        let row = i * stride;
        let first = i.max(p + 1);
        if first < k {
            buf.copy_within(row + first..row + k, row + first - 1);
        }
    }
    // Rows p+1.. now carry one subdiagonal entry each; rotate it away.
    for i in p..k.saturating_sub(1) {
        let (top, bottom) = buf.split_at_mut((i + 1) * stride);
        let a_row = &mut top[i * stride..i * stride + k - 1];
        let b_row = &mut bottom[..k - 1];
        let a = a_row[i];
        let b = b_row[i];
        if b == 0.0 {
            continue;
        }
        let h = a.hypot(b);
        let (c, s) = (a / h, b / h);
        a_row[i] = h;
        b_row[i] = 0.0;
        for (x, y) in a_row[i + 1..].iter_mut().zip(b_row[i + 1..].iter_mut()) {
            let (xv, yv) = (*x, *y);
            *x = c * xv + s * yv;
            *y = c * yv - s * xv;
        }
    }
}

/// Four-lane unrolled dot product with a fixed summation order.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in 4 * chunks..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Jacobi eigendecomposition of a small symmetric matrix. Returns
/// eigenvalues and the orthogonal matrix of column eigenvectors.
pub(crate) fn jacobi_eigen(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(n);
    for _sweep in 0..64 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + frobenius(&m)) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[[k, p]], m[[k, q]]);
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[[p, k]], m[[q, k]]);
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eig = (0..n).map(|i| m[[i, i]]).collect();
    (eig, v)
}

fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Minimum-norm solution of the symmetric positive semi-definite system
/// `G x = b` via eigen-truncation at `tol` relative to the largest
/// eigenvalue. Intended for small systems only.
pub(crate) fn pinv_solve_sym(g: &Array2<f64>, b: &[f64], tol: f64) -> Vec<f64> {
    let (eig, vecs) = jacobi_eigen(g);
    let n = g.nrows();
    let emax = eig.iter().cloned().fold(0.0f64, f64::max);
    let cutoff = tol * emax;
    let mut x = vec![0.0; n];
    for (idx, &lambda) in eig.iter().enumerate() {
        if lambda > cutoff {
            let mut proj = 0.0;
            for i in 0..n {
                proj += vecs[[i, idx]] * b[i];
            }
            let scale = proj / lambda;
            for i in 0..n {
                x[i] += scale * vecs[[i, idx]];
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::{rngs::StdRng, Rng, SeedableRng};

    fn random_spd(n: usize, rng: &mut StdRng) -> Array2<f64> {
        let x = Array2::from_shape_fn((n, n + 3), |_| rng.gen_range(-1.0..1.0));
        let mut g = x.dot(&x.t());
        for i in 0..n {
            g[[i, i]] += 0.5;
        }
        g
    }

    fn full_from_upper(r: &Array2<f64>, k: usize) -> Array2<f64> {
        let mut out = Array2::zeros((k, k));
        for i in 0..k {
            for j in i..k {
                out[[i, j]] = r[[i, j]];
            }
        }
        out
    }

    #[test]
    fn gram_upper_matches_direct_product() {
        let mut rng = StdRng::seed_from_u64(1);
        let x = Array2::from_shape_fn((7, 5), |_| rng.gen_range(-1.0..1.0));
        let g = gram_upper(x.view());
        let full = x.dot(&x.t());
        for i in 0..7 {
            for j in i..7 {
                assert_relative_eq!(g[[i, j]], full[[i, j]], max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn cholesky_factor_reproduces_matrix() {
        let mut rng = StdRng::seed_from_u64(2);
        for n in [1usize, 3, 17, 130, 250] {
            let g = random_spd(n, &mut rng);
            let mut r = g.clone();
            cholesky_upper_in_place(&mut r, n).unwrap();
            let ru = full_from_upper(&r, n);
            let back = ru.t().dot(&ru);
            for i in 0..n {
                for j in i..n {
                    assert_relative_eq!(back[[i, j]], g[[i, j]], max_relative = 1e-8, epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut g = array![[1.0, 2.0], [2.0, 1.0]];
        assert_eq!(cholesky_upper_in_place(&mut g, 2), Err(1));
    }

    #[test]
    fn triangular_solves_invert_the_factor() {
        let mut rng = StdRng::seed_from_u64(3);
        let n = 40;
        let g = random_spd(n, &mut rng);
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut r = g.clone();
        cholesky_upper_in_place(&mut r, n).unwrap();
        let mut z = Vec::new();
        let mut x = Vec::new();
        solve_transposed_upper(&r, n, &b, &mut z);
        solve_upper(&r, n, &z, &mut x);
        // G x should equal b.
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += g[[i, j]] * x[j];
            }
            assert_relative_eq!(acc, b[i], max_relative = 1e-8, epsilon = 1e-10);
        }
    }

    #[test]
    fn delete_column_matches_fresh_factorization() {
        let mut rng = StdRng::seed_from_u64(4);
        let n = 23;
        let g = random_spd(n, &mut rng);
        for p in [0usize, 7, 22] {
            let mut r = g.clone();
            cholesky_upper_in_place(&mut r, n).unwrap();
            delete_column(&mut r, n, p);

            let keep: Vec<usize> = (0..n).filter(|&i| i != p).collect();
            let mut gsub = Array2::zeros((n - 1, n - 1));
            for (a, &i) in keep.iter().enumerate() {
                for (b, &j) in keep.iter().enumerate() {
                    gsub[[a, b]] = g[[i, j]];
                }
            }
            let mut rf = gsub.clone();
            cholesky_upper_in_place(&mut rf, n - 1).unwrap();
            for i in 0..n - 1 {
                for j in i..n - 1 {
                    // Signs of factor rows are fixed positive on the diagonal.
                    assert_relative_eq!(r[[i, j]].abs(), rf[[i, j]].abs(), max_relative = 1e-7, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn jacobi_recovers_known_spectrum() {
        let a = array![[2.0, 1.0, 0.0], [1.0, 2.0, 1.0], [0.0, 1.0, 2.0]];
        let (mut eig, _) = jacobi_eigen(&a);
        eig.sort_by(f64::total_cmp);
        let expected = [2.0 - 2.0f64.sqrt(), 2.0, 2.0 + 2.0f64.sqrt()];
        for (got, want) in eig.iter().zip(expected) {
            assert_relative_eq!(*got, want, max_relative = 1e-10);
        }
    }

    #[test]
    fn pinv_gives_minimum_norm_on_singular_system() {
        // G = v v^T with v = [1, 1]; b = v. Solutions x with v^T x = 1;
        // minimum norm is [0.5, 0.5].
        let g = array![[1.0, 1.0], [1.0, 1.0]];
        let x = pinv_solve_sym(&g, &[1.0, 1.0], 1e-10);
        assert_relative_eq!(x[0], 0.5, max_relative = 1e-10);
        assert_relative_eq!(x[1], 0.5, max_relative = 1e-10);
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..37).map(|i| (i as f64).sin()).collect();
        let b: Vec<f64> = (0..37).map(|i| (i as f64).cos()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert_relative_eq!(dot(&a, &b), naive, max_relative = 1e-13);
    }
}
