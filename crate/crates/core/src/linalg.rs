//! Small dense-matrix kernels used across the crate: Cholesky, Householder QR,
//! a one-sided Jacobi SVD, and least-squares helpers built on it.
//!
//! Everything here targets the desk-scale systems this crate works with
//! (hundreds of rows at most). The Jacobi SVD is chosen over a Gram-matrix
//! eigendecomposition because it resolves near-zero singular values with high
//! relative accuracy, which the rank tests depend on.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Largest absolute entry, 0.0 for an empty matrix.
pub fn max_abs(a: &ArrayView2<'_, f64>) -> f64 {
    a.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()))
}

/// Returns the worst symmetry violation as (row, col, delta), if any exceeds `tol`.
pub fn symmetry_violation(a: &ArrayView2<'_, f64>, tol: f64) -> Option<(usize, usize, f64)> {
    let n = a.nrows();
    let mut worst: Option<(usize, usize, f64)> = None;
    for i in 0..n {
        for j in (i + 1)..n {
            let delta = (a[[i, j]] - a[[j, i]]).abs();
            if delta > tol && worst.map_or(true, |(_, _, w)| delta > w) {
                worst = Some((i, j, delta));
            }
        }
    }
    worst
}

/// Lower-triangular Cholesky factor L with L L^T = a.
///
/// `pivot_tol` is the absolute floor a diagonal pivot must clear; at or below
/// it the matrix is reported as not positive definite with the failing index.
pub fn cholesky_lower(a: &ArrayView2<'_, f64>, pivot_tol: f64) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::dim(format!(
            "cholesky needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    let sym_tol = 1e-9 * max_abs(a).max(1.0);
    if let Some((row, col, delta)) = symmetry_violation(a, sym_tol) {
        return Err(Error::Asymmetric { row, col, delta });
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if diag <= pivot_tol {
            return Err(Error::NotPositiveDefinite {
                index: j,
                pivot: diag,
            });
        }
        let root = diag.sqrt();
        l[[j, j]] = root;
        for i in (j + 1)..n {
            let mut acc = a[[i, j]];
            for k in 0..j {
                acc -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = acc / root;
        }
    }
    Ok(l)
}

/// Thin Householder QR of an m x n matrix with m >= n: returns (Q, R) with
/// Q m x n orthonormal columns and R n x n upper triangular.
pub fn qr_thin(a: &ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    let (m, n) = (a.nrows(), a.ncols());
    if m < n {
        return Err(Error::dim(format!(
            "qr_thin needs rows >= cols, got {m}x{n}"
        )));
    }
    let mut r = a.to_owned();
    // Householder vectors, stored column by column.
    let mut vs: Vec<Array1<f64>> = Vec::with_capacity(n);
    for k in 0..n {
        let mut v = Array1::<f64>::zeros(m);
        let mut norm2 = 0.0;
        for i in k..m {
            v[i] = r[[i, k]];
            norm2 += v[i] * v[i];
        }
        let norm = norm2.sqrt();
        if norm > 0.0 {
            let alpha = if v[k] >= 0.0 { -norm } else { norm };
            v[k] -= alpha;
            let vnorm2: f64 = v.iter().map(|x| x * x).sum();
            if vnorm2 > 0.0 {
                for j in k..n {
                    let mut dot = 0.0;
                    for i in k..m {
                        dot += v[i] * r[[i, j]];
                    }
                    let scale = 2.0 * dot / vnorm2;
                    for i in k..m {
                        r[[i, j]] -= scale * v[i];
                    }
                }
            }
        }
        vs.push(v);
    }
    // Accumulate Q by applying the reflectors to the first n identity columns.
    let mut q = Array2::<f64>::zeros((m, n));
    for j in 0..n {
        q[[j, j]] = 1.0;
    }
    for k in (0..n).rev() {
        let v = &vs[k];
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in 0..n {
            let mut dot = 0.0;
            for i in k..m {
                dot += v[i] * q[[i, j]];
            }
            let scale = 2.0 * dot / vnorm2;
            for i in k..m {
                q[[i, j]] -= scale * v[i];
            }
        }
    }
    let mut r_out = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            r_out[[i, j]] = r[[i, j]];
        }
    }
    Ok((q, r_out))
}

/// Haar-style random orthogonal n x n matrix: QR of a standard Gaussian draw
/// with the factor signs fixed so the result is deterministic per RNG stream.
pub fn random_orthogonal<R: Rng>(n: usize, rng: &mut R) -> Array2<f64> {
    let mut g = Array2::<f64>::zeros((n, n));
    for v in g.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    let (mut q, r) = qr_thin(&g.view()).expect("square input");
    for j in 0..n {
        if r[[j, j]] < 0.0 {
            for i in 0..n {
                q[[i, j]] = -q[[i, j]];
            }
        }
    }
    q
}

/// Full SVD a = U diag(sigma) V^T with sigma sorted descending.
///
/// U is m x k and V is n x k with k = min(m, n); columns of U whose singular
/// value underflows are left as zeros and must not be used by callers.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Array2<f64>,
    pub sigma: Vec<f64>,
    pub v: Array2<f64>,
}

pub fn svd(a: &ArrayView2<'_, f64>) -> Svd {
    let (m, n) = (a.nrows(), a.ncols());
    if m >= n {
        svd_tall(a)
    } else {
        let t = svd_tall(&a.t());
        Svd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        }
    }
}

/// One-sided Jacobi on a tall (m >= n) matrix: rotates column pairs until all
/// are mutually orthogonal, then reads singular values off as column norms.
fn svd_tall(a: &ArrayView2<'_, f64>) -> Svd {
    let (m, n) = (a.nrows(), a.ncols());
    let mut w = a.to_owned();
    let mut v = Array2::<f64>::eye(n);
    let conv = 1e-15;
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for i in 0..m {
                    app += w[[i, p]] * w[[i, p]];
                    aqq += w[[i, q]] * w[[i, q]];
                    apq += w[[i, p]] * w[[i, q]];
                }
                if apq.abs() <= conv * (app * aqq).sqrt() || app == 0.0 || aqq == 0.0 {
                    continue;
                }
                rotated = true;
                let theta = 0.5 * (2.0 * apq).atan2(app - aqq);
                let (s, c) = theta.sin_cos();
                for i in 0..m {
                    let wp = w[[i, p]];
                    let wq = w[[i, q]];
                    w[[i, p]] = c * wp + s * wq;
                    w[[i, q]] = -s * wp + c * wq;
                }
                for i in 0..n {
                    let vp = v[[i, p]];
                    let vq = v[[i, q]];
                    v[[i, p]] = c * vp + s * vq;
                    v[[i, q]] = -s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n)
        .map(|j| w.column(j).iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).expect("finite norms"));
    let mut u = Array2::<f64>::zeros((m, n));
    let mut vv = Array2::<f64>::zeros((n, n));
    let mut sigma = vec![0.0; n];
    for (dst, &src) in order.iter().enumerate() {
        sigma[dst] = norms[src];
        if norms[src] > 0.0 {
            for i in 0..m {
                u[[i, dst]] = w[[i, src]] / norms[src];
            }
        }
        for i in 0..n {
            vv[[i, dst]] = v[[i, src]];
        }
    }
    Svd {
        u,
        sigma,
        v: vv,
    }
}

/// Singular values in descending order.
pub fn singular_values(a: &ArrayView2<'_, f64>) -> Vec<f64> {
    svd(a).sigma
}

/// Numerical rank: count of singular values above `rel_tol` times the largest.
pub fn rank(a: &ArrayView2<'_, f64>, rel_tol: f64) -> usize {
    let sigma = singular_values(a);
    let top = sigma.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return 0;
    }
    sigma.iter().filter(|&&s| s > rel_tol * top).count()
}

/// Minimum-norm least-squares solution of a x = b together with its rank
/// decision and the achieved residual norm.
#[derive(Debug, Clone)]
pub struct Lstsq {
    pub solution: Array1<f64>,
    pub residual: f64,
    pub rank: usize,
    pub sigma: Vec<f64>,
}

pub fn lstsq(a: &ArrayView2<'_, f64>, b: &Array1<f64>, rel_tol: f64) -> Result<Lstsq> {
    if a.nrows() != b.len() {
        return Err(Error::dim(format!(
            "lstsq shape mismatch: matrix {}x{} vs rhs {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let dec = svd(a);
    let top = dec.sigma.first().copied().unwrap_or(0.0);
    let thr = rel_tol * top;
    let mut x = Array1::<f64>::zeros(a.ncols());
    let mut rank = 0;
    for (k, &s) in dec.sigma.iter().enumerate() {
        if top == 0.0 || s <= thr {
            continue;
        }
        rank += 1;
        let coef = dec.u.column(k).dot(b) / s;
        for i in 0..a.ncols() {
            x[i] += coef * dec.v[[i, k]];
        }
    }
    let residual = (a.dot(&x) - b).iter().map(|r| r * r).sum::<f64>().sqrt();
    Ok(Lstsq {
        solution: x,
        residual,
        rank,
        sigma: dec.sigma,
    })
}

/// Solves a X = B column by column reusing one decomposition of `a`.
pub fn lstsq_multi(a: &ArrayView2<'_, f64>, b: &ArrayView2<'_, f64>, rel_tol: f64) -> Result<(Array2<f64>, f64, usize)> {
    if a.nrows() != b.nrows() {
        return Err(Error::dim(format!(
            "lstsq_multi shape mismatch: matrix {}x{} vs rhs {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let dec = svd(a);
    let top = dec.sigma.first().copied().unwrap_or(0.0);
    let thr = rel_tol * top;
    let mut rank = 0;
    for &s in &dec.sigma {
        if top > 0.0 && s > thr {
            rank += 1;
        }
    }
    let mut x = Array2::<f64>::zeros((a.ncols(), b.ncols()));
    for j in 0..b.ncols() {
        let col = b.column(j).to_owned();
        for (k, &s) in dec.sigma.iter().enumerate() {
            if top == 0.0 || s <= thr {
                continue;
            }
            let coef = dec.u.column(k).dot(&col) / s;
            for i in 0..a.ncols() {
                x[[i, j]] += coef * dec.v[[i, k]];
            }
        }
    }
    let resid = {
        let r = a.dot(&x) - b;
        max_abs(&r.view())
    };
    Ok((x, resid, rank))
}

/// Orthonormal basis of the null space of `a` (columns), per the same
/// singular-value threshold used by `rank`.
pub fn null_space(a: &ArrayView2<'_, f64>, rel_tol: f64) -> Array2<f64> {
    let dec = svd(a);
    let top = dec.sigma.first().copied().unwrap_or(0.0);
    let thr = rel_tol * top;
    let n = a.ncols();
    let keep: Vec<usize> = (0..dec.sigma.len())
        .filter(|&k| top == 0.0 || dec.sigma[k] <= thr)
        .collect();
    // Columns of V beyond min(m, n) never appear in the decomposition, yet
    // they belong to the null space when the matrix is wide.
    let extra = n.saturating_sub(dec.sigma.len());
    let mut out = Array2::<f64>::zeros((n, keep.len() + extra));
    for (dst, &k) in keep.iter().enumerate() {
        for i in 0..n {
            out[[i, dst]] = dec.v[[i, k]];
        }
    }
    if extra > 0 {
        // Complete the basis by projecting identity columns against V.
        let mut found = 0;
        let mut basis: Vec<Array1<f64>> = (0..dec.sigma.len())
            .map(|k| dec.v.column(k).to_owned())
            .collect();
        for j in 0..n {
            if found == extra {
                break;
            }
            let mut cand = Array1::<f64>::zeros(n);
            cand[j] = 1.0;
            for b in &basis {
                let dot = b.dot(&cand);
                cand = cand - b.mapv(|x| x * dot);
            }
            let norm = cand.dot(&cand).sqrt();
            if norm > 1e-8 {
                cand.mapv_inplace(|x| x / norm);
                for i in 0..n {
                    out[[i, keep.len() + found]] = cand[i];
                }
                basis.push(cand);
                found += 1;
            }
        }
        debug_assert_eq!(found, extra, "null-space completion fell short");
    }
    out
}

/// Mean absolute deviation ratio: mean(|estimate - truth|) / mean(|truth|).
pub fn mean_abs_ratio(estimate: &ArrayView2<'_, f64>, truth: &ArrayView2<'_, f64>) -> Result<f64> {
    if estimate.dim() != truth.dim() {
        return Err(Error::dim(format!(
            "relative error shapes differ: {:?} vs {:?}",
            estimate.dim(),
            truth.dim()
        )));
    }
    let n = truth.len() as f64;
    let denom = truth.iter().map(|v| v.abs()).sum::<f64>() / n;
    if denom <= f64::EPSILON {
        return Err(Error::ZeroMeanTruth);
    }
    let num = estimate
        .iter()
        .zip(truth.iter())
        .map(|(e, t)| (e - t).abs())
        .sum::<f64>()
        / n;
    Ok(num / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Axis};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn seeded_matrix(m: usize, n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut a = Array2::<f64>::zeros((m, n));
        for v in a.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        a
    }

    #[test]
    fn cholesky_matches_worked_example() {
        let a = array![[4.0, 2.0], [2.0, 2.0]];
        let l = cholesky_lower(&a.view(), 1e-12).unwrap();
        assert_abs_diff_eq!(l[[0, 0]], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l[[0, 1]], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l[[1, 0]], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l[[1, 1]], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn cholesky_reconstructs_seeded_gram() {
        let a = seeded_matrix(6, 6, 7);
        let gram = a.dot(&a.t()) + Array2::<f64>::eye(6) * 0.5;
        let l = cholesky_lower(&gram.view(), 1e-12).unwrap();
        let back = l.dot(&l.t());
        let err = max_abs(&(&back - &gram).view());
        assert!(err < 1e-10, "reconstruction error {err}");
    }

    #[test]
    fn cholesky_rejects_asymmetry_and_indefiniteness() {
        let asym = array![[1.0, 0.5], [0.1, 1.0]];
        assert!(matches!(
            cholesky_lower(&asym.view(), 1e-12),
            Err(Error::Asymmetric { .. })
        ));
        let indef = array![[1.0, 2.0], [2.0, 1.0]];
        match cholesky_lower(&indef.view(), 1e-12) {
            Err(Error::NotPositiveDefinite { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected pivot failure, got {other:?}"),
        }
    }

    #[test]
    fn qr_factors_are_orthonormal_and_reconstruct() {
        for seed in 0..5u64 {
            let a = seeded_matrix(7, 4, seed);
            let (q, r) = qr_thin(&a.view()).unwrap();
            let qtq = q.t().dot(&q);
            let eye = Array2::<f64>::eye(4);
            assert!(max_abs(&(&qtq - &eye).view()) < 1e-12);
            assert!(max_abs(&(&q.dot(&r) - &a).view()) < 1e-12);
        }
    }

    #[test]
    fn random_orthogonal_is_orthogonal_and_seed_sensitive() {
        let mut r1 = ChaCha20Rng::seed_from_u64(11);
        let mut r2 = ChaCha20Rng::seed_from_u64(12);
        let p1 = random_orthogonal(5, &mut r1);
        let p2 = random_orthogonal(5, &mut r2);
        let eye = Array2::<f64>::eye(5);
        assert!(max_abs(&(&p1.dot(&p1.t()) - &eye).view()) < 1e-12);
        assert!(max_abs(&(&p1 - &p2).view()) > 1e-6);
    }

    #[test]
    fn svd_reconstructs_and_orders_values() {
        for &(m, n) in &[(5usize, 3usize), (3, 5), (4, 4)] {
            let a = seeded_matrix(m, n, 40 + (m * 10 + n) as u64);
            let dec = svd(&a.view());
            let k = m.min(n);
            let mut back = Array2::<f64>::zeros((m, n));
            for idx in 0..k {
                let s = dec.sigma[idx];
                for i in 0..m {
                    for j in 0..n {
                        back[[i, j]] += s * dec.u[[i, idx]] * dec.v[[j, idx]];
                    }
                }
            }
            assert!(max_abs(&(&back - &a).view()) < 1e-10, "{m}x{n}");
            for w in dec.sigma.windows(2) {
                assert!(w[0] >= w[1]);
            }
        }
    }

    #[test]
    fn rank_detects_duplicated_rows_cleanly() {
        let mut a = seeded_matrix(5, 4, 3);
        let dup = a.row(0).to_owned();
        a.row_mut(3).assign(&dup);
        assert_eq!(rank(&a.view(), 1e-8), 3 + 1); // four distinct rows, one repeat
        let full = seeded_matrix(5, 4, 4);
        assert_eq!(rank(&full.view(), 1e-8), 4);
    }

    #[test]
    fn lstsq_solves_exact_and_min_norm_cases() {
        let a = seeded_matrix(6, 3, 9);
        let x_true = array![1.5, -2.0, 0.25];
        let b = a.dot(&x_true);
        let sol = lstsq(&a.view(), &b, 1e-8).unwrap();
        assert!(max_abs(&(&sol.solution - &x_true).view().insert_axis(Axis(1))) < 1e-10);
        assert!(sol.residual < 1e-10);
        assert_eq!(sol.rank, 3);

        // Underdetermined: solution must be orthogonal to the null space.
        let wide = seeded_matrix(2, 4, 10);
        let b2 = array![1.0, -1.0];
        let sol2 = lstsq(&wide.view(), &b2, 1e-8).unwrap();
        assert!(sol2.residual < 1e-10);
        let ns = null_space(&wide.view(), 1e-8);
        assert_eq!(ns.ncols(), 2);
        for j in 0..ns.ncols() {
            let dot = ns.column(j).dot(&sol2.solution);
            assert!(dot.abs() < 1e-10, "min-norm solution leaks into null space");
            let img = wide.dot(&ns.column(j).to_owned());
            assert!(img.iter().all(|v| v.abs() < 1e-10));
        }
    }

    #[test]
    fn mean_abs_ratio_matches_hand_value_and_rejects_zero_truth() {
        let est = array![[1.0, 1.0], [1.0, 1.0]];
        let truth = array![[2.0, 2.0], [2.0, 2.0]];
        assert_abs_diff_eq!(
            mean_abs_ratio(&est.view(), &truth.view()).unwrap(),
            0.5,
            epsilon = 1e-15
        );
        let zeros = Array2::<f64>::zeros((2, 2));
        assert!(matches!(
            mean_abs_ratio(&est.view(), &zeros.view()),
            Err(Error::ZeroMeanTruth)
        ));
    }
}
