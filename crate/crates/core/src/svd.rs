//! One-sided Jacobi (Hestenes) singular value decomposition.
//!
//! Plane rotations are applied to pairs of columns until every pair is
//! numerically orthogonal; the column norms are then the singular values.
//! Accurate for the small dense matrices used here, and simple enough to
//! audit.

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

pub const MAX_SWEEPS: usize = 60;

#[derive(Debug, Clone)]
pub struct Svd {
    /// `m x r` left singular vectors as columns, `r = min(m, n)`.
    pub u: Matrix,
    /// Descending, non-negative.
    pub sigma: Vec<f64>,
    /// `n x r` right singular vectors as columns.
    pub v: Matrix,
}

impl Svd {
    pub fn left_vector(&self, i: usize) -> Vec<f64> {
        (0..self.u.rows()).map(|r| self.u[(r, i)]).collect()
    }

    pub fn right_vector(&self, i: usize) -> Vec<f64> {
        (0..self.v.rows()).map(|r| self.v[(r, i)]).collect()
    }

    /// `Σ σᵢ uᵢ vᵢᵀ` over all triples.
    pub fn reconstruct(&self) -> Matrix {
        let (m, n) = (self.u.rows(), self.v.rows());
        Matrix::from_fn(m, n, |i, j| {
            self.sigma
                .iter()
                .enumerate()
                .map(|(k, s)| s * self.u[(i, k)] * self.v[(j, k)])
                .sum()
        })
    }
}

pub fn svd(a: &Matrix) -> Result<Svd> {
    if a.rows() >= a.cols() {
        tall_svd(a)
    } else {
        let t = tall_svd(&a.transpose())?;
        Ok(Svd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        })
    }
}

/// SVD of an `m x n` matrix with `m >= n`.
fn tall_svd(a: &Matrix) -> Result<Svd> {
    let (m, n) = a.shape();
    // Columns stored contiguously so rotations touch two slices.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a[(i, j)]).collect()).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    // Columns this small relative to the whole matrix are rounding noise.
    let negligible = 1e-30 * a.frobenius_norm_sq();
    let tol = f64::EPSILON * m as f64;
    let mut converged = false;
    let mut worst = 0.0;
    for _ in 0..MAX_SWEEPS {
        worst = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || alpha <= negligible || beta <= negligible {
                    continue;
                }
                let off = gamma.abs() / (alpha * beta).sqrt();
                worst = worst.max(off);
                if off <= tol {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut vcols, p, q, c, s);
            }
        }
        if worst <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SvdNoConvergence {
            sweeps: MAX_SWEEPS,
            residual: worst,
        });
    }

    let mut order: Vec<(usize, f64)> = cols
        .iter()
        .enumerate()
        .map(|(j, c)| (j, dot(c, c).sqrt()))
        .collect();
    order.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));

    let mut u = Matrix::zeros(m, n);
    let mut v = Matrix::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    for (k, &(j, s)) in order.iter().enumerate() {
        sigma.push(s);
        if s > 0.0 {
            for i in 0..m {
                u[(i, k)] = cols[j][i] / s;
            }
        }
        for i in 0..n {
            v[(i, k)] = vcols[j][i];
        }
    }
    Ok(Svd { u, sigma, v })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(a: &Matrix) -> Svd {
        let s = svd(a).unwrap();
        let err = s.reconstruct().sub(a).unwrap().frobenius_norm();
        assert!(err <= 1e-12 * a.frobenius_norm().max(1e-300), "reconstruction {err}");
        assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
        assert!(s.sigma.iter().all(|&x| x >= 0.0));
        s
    }

    #[test]
    fn diagonal_matrix() {
        let a = Matrix::new(3, 3, vec![1.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 2.0]).unwrap();
        let s = check(&a);
        assert_eq!(s.sigma, vec![3.0, 2.0, 1.0]);
        assert_eq!(s.left_vector(0), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn wide_and_tall() {
        let a = Matrix::from_fn(3, 5, |i, j| ((i * 5 + j) as f64 * 0.37).sin());
        let s = check(&a);
        assert_eq!(s.u.shape(), (3, 3));
        assert_eq!(s.v.shape(), (5, 3));
        check(&a.transpose());
    }

    #[test]
    fn rank_one() {
        let u = [1.0, -2.0, 0.5, 3.0];
        let v = [0.3, 0.1, -0.7, 2.0];
        let a = Matrix::from_fn(4, 4, |i, j| u[i] * v[j]);
        let s = check(&a);
        let nu = dot(&u, &u).sqrt() * dot(&v, &v).sqrt();
        assert!((s.sigma[0] - nu).abs() < 1e-12 * nu);
        assert!(s.sigma[1..].iter().all(|&x| x < 1e-12));
    }

    #[test]
    fn singular_values_match_eigenvalues_of_gram() {
        // For a symmetric positive definite matrix, singular values equal eigenvalues.
        let a = Matrix::new(2, 2, vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        let s = check(&a);
        assert!((s.sigma[0] - 3.0).abs() < 1e-14);
        assert!((s.sigma[1] - 1.0).abs() < 1e-14);
    }
}
