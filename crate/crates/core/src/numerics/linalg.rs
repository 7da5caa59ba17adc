//! Symmetric-matrix linear algebra: symmetrization, a cyclic Jacobi
//! eigensolver, and magnitude-sorted top-k truncation.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Eigendecomposition of a symmetric matrix.
///
/// Columns of `q` are orthonormal eigenvectors; `lambda` is sorted by
/// descending magnitude, exact-magnitude ties positive-first, then by
/// ascending original index.
/// Each column's sign is fixed so its largest-magnitude entry is positive.
#[derive(Debug, Clone)]
pub struct EighResult {
    pub q: Tensor,
    pub lambda: Vec<f64>,
}

impl EighResult {
    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    /// Reconstructs q . diag(lambda) . q^T.
    pub fn reconstruct(&self) -> Result<Tensor> {
        let n = self.dim();
        let mut out = Tensor::zeros(&[n, n]);
        for c in 0..n {
            let lam = self.lambda[c];
            for i in 0..n {
                let qi = self.q.get2(i, c);
                for j in 0..n {
                    let v = out.get2(i, j) + lam * qi * self.q.get2(j, c);
                    out.set2(i, j, v);
                }
            }
        }
        Ok(out)
    }
}

/// Returns (m + m^T)/2; the quadratic form is unchanged.
pub fn symmetrize(m: &Tensor) -> Result<Tensor> {
    if m.rank() != 2 || m.rows() != m.cols() {
        return Err(Error::Shape(format!(
            "symmetrize: expected a square matrix, got {:?}",
            m.shape()
        )));
    }
    let n = m.rows();
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            out.set2(i, j, (m.get2(i, j) + m.get2(j, i)) / 2.0);
        }
    }
    Ok(out)
}

/// Frobenius norm: sqrt of the sum of squared entries.
pub fn frobenius(m: &Tensor) -> f64 {
    m.data().iter().map(|v| v * v).sum::<f64>().sqrt()
}

const MAX_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-12;

/// Default relative off-diagonal tolerance for [`eigh`].
pub const EIGH_TOL: f64 = 1e-12;

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations
/// (row-sweep order), iterated until the largest off-diagonal magnitude is
/// at most `tol` times the Frobenius norm of the input.
pub fn eigh(s: &Tensor, tol: f64) -> Result<EighResult> {
    if s.rank() != 2 || s.rows() != s.cols() {
        return Err(Error::Shape(format!(
            "eigh: expected a square matrix, got {:?}",
            s.shape()
        )));
    }
    if tol <= 0.0 {
        return Err(Error::Domain(format!("eigh: tol must be positive, got {tol}")));
    }
    let n = s.rows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (s.get2(i, j) - s.get2(j, i)).abs() > SYMMETRY_TOL {
                return Err(Error::Domain(format!(
                    "eigh: input is not symmetric at ({i},{j}): {} vs {}",
                    s.get2(i, j),
                    s.get2(j, i)
                )));
            }
        }
    }

    let mut a = s.clone();
    let mut q = Tensor::identity(n);
    let thresh = tol * frobenius(s);

    let max_off = |a: &Tensor| -> f64 {
        let mut m = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                m = m.max(a.get2(i, j).abs());
            }
        }
        m
    };

    let mut converged = max_off(&a) <= thresh;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        for p in 0..n {
            for r in (p + 1)..n {
                let apr = a.get2(p, r);
                if apr == 0.0 {
                    continue;
                }
                let app = a.get2(p, p);
                let arr = a.get2(r, r);
                let theta = (arr - app) / (2.0 * apr);
                // Smaller-angle root of t^2 + 2 t theta - 1 = 0.
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * c;

                // Rotate rows/columns p and r of a.
                for k in 0..n {
                    let akp = a.get2(k, p);
                    let akr = a.get2(k, r);
                    a.set2(k, p, c * akp - sn * akr);
                    a.set2(k, r, sn * akp + c * akr);
                }
                for k in 0..n {
                    let apk = a.get2(p, k);
                    let ark = a.get2(r, k);
                    a.set2(p, k, c * apk - sn * ark);
                    a.set2(r, k, sn * apk + c * ark);
                }
                // Accumulate eigenvectors.
                for k in 0..n {
                    let qkp = q.get2(k, p);
                    let qkr = q.get2(k, r);
                    q.set2(k, p, c * qkp - sn * qkr);
                    q.set2(k, r, sn * qkp + c * qkr);
                }
            }
        }
        converged = max_off(&a) <= thresh;
    }
    if !converged {
        return Err(Error::Convergence(format!(
            "off-diagonal {} above threshold {} after {MAX_SWEEPS} sweeps",
            max_off(&a),
            thresh
        )));
    }

    let diag: Vec<f64> = (0..n).map(|i| a.get2(i, i)).collect();
    // Magnitude-descending order; exact magnitude ties put the positive
    // eigenvalue first, then fall back to ascending original index.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        diag[j]
            .abs()
            .partial_cmp(&diag[i].abs())
            .unwrap()
            .then(diag[j].partial_cmp(&diag[i]).unwrap())
            .then(i.cmp(&j))
    });

    let mut q_sorted = Tensor::zeros(&[n, n]);
    let mut lambda = Vec::with_capacity(n);
    for (c, &src) in order.iter().enumerate() {
        lambda.push(diag[src]);
        // Sign convention: largest-magnitude entry of each column positive.
        let mut best = 0;
        for i in 1..n {
            if q.get2(i, src).abs() > q.get2(best, src).abs() {
                best = i;
            }
        }
        let sign = if q.get2(best, src) < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            q_sorted.set2(i, c, sign * q.get2(i, src));
        }
    }
    Ok(EighResult { q: q_sorted, lambda })
}

/// Keeps the first k magnitude-sorted eigenpairs: the Frobenius-optimal
/// rank-k approximation of the decomposed matrix.
pub fn topk_truncate(e: &EighResult, k: usize) -> Result<(Tensor, Vec<f64>)> {
    let n = e.dim();
    if k < 1 || k > n {
        return Err(Error::Domain(format!(
            "topk_truncate: k={k} out of range 1..={n}"
        )));
    }
    let mut qk = Tensor::zeros(&[n, k]);
    for i in 0..n {
        for j in 0..k {
            qk.set2(i, j, e.q.get2(i, j));
        }
    }
    Ok((qk, e.lambda[..k].to_vec()))
}
