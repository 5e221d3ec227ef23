//! Exact Hessian structure of the whitened loss.
//!
//! For `L = ½‖B W_k C − A‖²` with `B = W_L···W_{k+1}` and `C = W_{k-1}···W_1`,
//! the second derivative in `W_k[a, b]` is `(BᵀB)_{aa} (CCᵀ)_{bb}`. Only the
//! squared column norms of `B` and squared row norms of `C` are needed, so the
//! diagonal costs one chain of products and never forms a Kronecker product.
//!
//! Parameters are flattened layer by layer starting from `W_1`, each layer in
//! row-major order. The full two-layer Hessian uses the same order.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{ProblemInstance, Weights};

/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-4;

/// Largest width for which the full Hessian is materialized.
pub const MAX_FULL_HESSIAN_DIM: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct HessianDiagonal {
    /// 1-based layer index.
    pub layer: usize,
    pub step: Option<u64>,
    pub rows: usize,
    pub cols: usize,
    /// `|H|` for each weight of the layer, row-major.
    pub values: Vec<f64>,
}

impl HessianDiagonal {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Diagonal of the loss Hessian restricted to layer `k` (1-based).
///
/// Independent of the target, hence of the data once it is whitened.
pub fn hessian_diag_layer(w: &Weights, k: usize) -> Result<HessianDiagonal> {
    w.check_layer(k)?;
    let suffixes = w.suffix_products();
    let left = suffixes[k - 1].col_norms_sq();
    let right = if k == 1 {
        vec![1.0; w.input_dim()]
    } else {
        let mut c = w.layers[0].clone();
        for layer in &w.layers[1..k - 1] {
            c = layer.matmul(&c)?;
        }
        c.row_norms_sq()
    };
    let mut values = Vec::with_capacity(left.len() * right.len());
    for &l in &left {
        values.extend(right.iter().map(|&r| (l * r).abs()));
    }
    Ok(HessianDiagonal {
        layer: k,
        step: None,
        rows: left.len(),
        cols: right.len(),
        values,
    })
}

/// Diagonals of every layer.
pub fn hessian_diagonals(w: &Weights) -> Result<Vec<HessianDiagonal>> {
    (1..=w.depth()).map(|k| hessian_diag_layer(w, k)).collect()
}

/// Blocks of the two-layer Hessian with parameters ordered `[vec(W₁); W₂]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianBlocks {
    /// `(W₂ᵀW₂) ⊗ I_d`, `d² x d²`.
    pub h11: Matrix,
    /// `W₁W₁ᵀ`, `d x d`.
    pub h22: Matrix,
    /// `W₂ᵀ ⊗ W₁ᵀ + I_d ⊗ (W₂W₁ − A)ᵀ`, `d² x d`: rows index `W₁`, columns `W₂`.
    pub h21: Matrix,
}

impl HessianBlocks {
    /// The full symmetric `(d² + d)`-square Hessian.
    pub fn assemble(&self) -> Matrix {
        let n1 = self.h11.rows();
        let n2 = self.h22.rows();
        let n = n1 + n2;
        let mut h = Matrix::zeros(n, n);
        for i in 0..n1 {
            for j in 0..n1 {
                h[(i, j)] = self.h11[(i, j)];
            }
            for j in 0..n2 {
                h[(i, n1 + j)] = self.h21[(i, j)];
                h[(n1 + j, i)] = self.h21[(i, j)];
            }
        }
        for i in 0..n2 {
            for j in 0..n2 {
                h[(n1 + i, n1 + j)] = self.h22[(i, j)];
            }
        }
        h
    }
}

/// Closed-form Hessian of a `d -> d_h -> 1` network.
pub fn hessian_full_two_layer(w: &Weights, p: &ProblemInstance) -> Result<HessianBlocks> {
    if w.depth() != 2 || w.output_dim() != 1 {
        return Err(Error::WrongArchitecture(
            "a two-layer network with scalar output".into(),
        ));
    }
    let (w1, w2) = (&w.layers[0], &w.layers[1]);
    let d = w1.cols();
    if d.max(w1.rows()) > MAX_FULL_HESSIAN_DIM {
        return Err(Error::InvalidConfig(format!(
            "full Hessian is limited to widths <= {MAX_FULL_HESSIAN_DIM}, got {d}"
        )));
    }
    let e = w.residual(&p.a)?;
    let h11 = w2.transposed_matmul(w2)?.kron(&Matrix::identity(d));
    let h22 = w1.matmul_transposed(w1)?;
    let h21 = w2
        .transpose()
        .kron(&w1.transpose())
        .add(&Matrix::identity(w1.rows()).kron(&e.transpose()))?;
    Ok(HessianBlocks { h11, h22, h21 })
}

/// Position of `W_layer[row, col]` (1-based layer) in the flattened parameters.
pub fn flat_index(w: &Weights, layer: usize, row: usize, col: usize) -> Result<usize> {
    w.check_layer(layer)?;
    let m = &w.layers[layer - 1];
    if row >= m.rows() || col >= m.cols() {
        return Err(Error::Precondition(format!(
            "entry ({row}, {col}) outside a {}x{} layer",
            m.rows(),
            m.cols()
        )));
    }
    let offset: usize = w.layers[..layer - 1].iter().map(|m| m.as_slice().len()).sum();
    Ok(offset + row * m.cols() + col)
}

pub fn parameter_count(w: &Weights) -> usize {
    w.layers.iter().map(|m| m.as_slice().len()).sum()
}

fn perturb(w: &mut Weights, idx: usize, delta: f64) {
    let mut rest = idx;
    for m in &mut w.layers {
        let n = m.as_slice().len();
        if rest < n {
            m.as_mut_slice()[rest] += delta;
            return;
        }
        rest -= n;
    }
    panic!("parameter index {idx} out of range");
}

/// Central second differences
/// `(f(+h,+h) − f(+h,−h) − f(−h,+h) + f(−h,−h)) / 4h²` for each requested
/// pair of flattened parameter indices.
pub fn hessian_fd_oracle<F>(loss: F, w: &Weights, pairs: &[(usize, usize)], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&Weights) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::Precondition(format!("step must be positive, got {h}")));
    }
    let n = parameter_count(w);
    let mut probe = w.clone();
    let mut out = Vec::with_capacity(pairs.len());
    for &(i, j) in pairs {
        if i >= n || j >= n {
            return Err(Error::Precondition(format!(
                "pair ({i}, {j}) outside {n} parameters"
            )));
        }
        let mut eval = |si: f64, sj: f64| -> Result<f64> {
            perturb(&mut probe, i, si * h);
            perturb(&mut probe, j, sj * h);
            let v = loss(&probe);
            probe.clone_from(w);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFinite(format!("loss at pair ({i}, {j})")))
            }
        };
        let pp = eval(1.0, 1.0)?;
        let pm = eval(1.0, -1.0)?;
        let mp = eval(-1.0, 1.0)?;
        let mm = eval(-1.0, -1.0)?;
        out.push((pp - pm - mp + mm) / (4.0 * h * h));
    }
    Ok(out)
}

/// Finite-difference estimate of the diagonal of layer `k`.
pub fn fd_diag_layer<F>(loss: F, w: &Weights, k: usize, h: f64) -> Result<Vec<f64>>
where
    F: Fn(&Weights) -> f64,
{
    w.check_layer(k)?;
    let m = &w.layers[k - 1];
    let start = flat_index(w, k, 0, 0)?;
    let pairs: Vec<_> = (start..start + m.as_slice().len()).map(|i| (i, i)).collect();
    hessian_fd_oracle(loss, w, &pairs, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_problem, init_weights, loss_bar, NetworkConfig, DEFAULT_A_BAND};

    fn scalar(x: f64, y: f64) -> Weights {
        Weights::new(vec![
            Matrix::new(1, 1, vec![x]).unwrap(),
            Matrix::new(1, 1, vec![y]).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn fd_on_simple_functions() {
        let w = scalar(0.7, -1.3);
        let half_sq = |w: &Weights| 0.5 * w.layers[0][(0, 0)].powi(2);
        let v = hessian_fd_oracle(half_sq, &w, &[(0, 0)], 1e-4).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-8);
        let xy = |w: &Weights| w.layers[0][(0, 0)] * w.layers[1][(0, 0)];
        let v = hessian_fd_oracle(xy, &w, &[(0, 1), (1, 0)], 1e-4).unwrap();
        assert!(v.iter().all(|x| (x - 1.0).abs() < 1e-8));
    }

    #[test]
    fn fd_rejects_bad_input() {
        let w = scalar(0.0, 0.0);
        let f = |w: &Weights| w.layers[0][(0, 0)];
        assert!(hessian_fd_oracle(f, &w, &[(0, 0)], 0.0).is_err());
        assert!(hessian_fd_oracle(f, &w, &[(0, 5)], 1e-3).is_err());
        let blowup = |w: &Weights| 1.0 / w.layers[0][(0, 0)].abs().min(0.0);
        assert!(matches!(
            hessian_fd_oracle(blowup, &w, &[(0, 0)], 1e-3),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn two_layer_diagonal_closed_forms() {
        let w = init_weights(&NetworkConfig::two_layer(5, 0.3), 4).unwrap();
        let h1 = hessian_diag_layer(&w, 1).unwrap();
        let h2 = hessian_diag_layer(&w, 2).unwrap();
        let w2 = w.layers[1].as_slice();
        for a in 0..5 {
            for b in 0..5 {
                assert_eq!(h1.at(a, b), w2[a] * w2[a]);
            }
        }
        let rows = w.layers[0].row_norms_sq();
        for b in 0..5 {
            assert!((h2.at(0, b) - rows[b]).abs() <= 1e-15 * rows[b]);
        }
        assert!(hessian_diag_layer(&w, 3).is_err());
    }

    #[test]
    fn zero_weights_leave_only_cross_block() {
        let p = generate_problem(3, DEFAULT_A_BAND, 0.0, 5).unwrap();
        let w = init_weights(&NetworkConfig::two_layer(3, f64::INFINITY), 0).unwrap();
        let blocks = hessian_full_two_layer(&w, &p).unwrap();
        assert_eq!(blocks.h11.max_abs(), 0.0);
        assert_eq!(blocks.h22.max_abs(), 0.0);
        let expected = Matrix::identity(3).kron(&p.a.scale(-1.0).transpose());
        assert_eq!(blocks.h21, expected);
    }

    #[test]
    fn exact_fit_cross_block() {
        let a = Matrix::row_vector(&[1.0, 2.0, 0.5]).unwrap();
        let p = ProblemInstance::from_target(a.clone()).unwrap();
        let mut w1 = Matrix::zeros(3, 3);
        for j in 0..3 {
            w1[(1, j)] = a[(0, j)] / 2.0;
        }
        let w = Weights::new(vec![w1.clone(), Matrix::row_vector(&[0.0, 2.0, 0.0]).unwrap()])
            .unwrap();
        let blocks = hessian_full_two_layer(&w, &p).unwrap();
        let expected = w.layers[1].transpose().kron(&w1.transpose());
        assert!(blocks.h21.sub(&expected).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn full_hessian_architecture_checks() {
        let p = generate_problem(3, DEFAULT_A_BAND, 0.0, 5).unwrap();
        let deep = init_weights(&NetworkConfig::deep(3, 3, 1.0), 0).unwrap();
        assert!(matches!(
            hessian_full_two_layer(&deep, &p),
            Err(Error::WrongArchitecture(_))
        ));
        let p = generate_problem(33, DEFAULT_A_BAND, 0.0, 5).unwrap();
        let wide = init_weights(&NetworkConfig::two_layer(33, 1.0), 0).unwrap();
        assert!(hessian_full_two_layer(&wide, &p).is_err());
    }

    #[test]
    fn full_diagonal_matches_layer_diagonals() {
        let p = generate_problem(4, DEFAULT_A_BAND, 0.0, 5).unwrap();
        let w = init_weights(&NetworkConfig::two_layer(4, 0.25), 9).unwrap();
        let h = hessian_full_two_layer(&w, &p).unwrap().assemble();
        assert!(h.asymmetry() <= 1e-12);
        let diag: Vec<f64> = hessian_diagonals(&w)
            .unwrap()
            .into_iter()
            .flat_map(|d| d.values)
            .collect();
        for (i, v) in diag.iter().enumerate() {
            assert!((h[(i, i)] - v).abs() <= 1e-15 * v.max(1.0));
        }
    }

    #[test]
    fn small_fd_agreement() {
        let p = generate_problem(3, DEFAULT_A_BAND, 0.0, 1).unwrap();
        let w = init_weights(&NetworkConfig::two_layer(3, 0.2), 2).unwrap();
        let h = hessian_full_two_layer(&w, &p).unwrap().assemble();
        let n = h.rows();
        let pairs: Vec<_> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
        let fd = hessian_fd_oracle(|w| loss_bar(w, &p).unwrap(), &w, &pairs, 1e-3).unwrap();
        for (&(i, j), v) in pairs.iter().zip(&fd) {
            assert!((h[(i, j)] - v).abs() < 1e-8, "({i},{j}) {} vs {v}", h[(i, j)]);
        }
    }

    #[test]
    fn flat_index_layout() {
        let w = init_weights(&NetworkConfig::two_layer(3, 1.0), 0).unwrap();
        assert_eq!(flat_index(&w, 1, 0, 0).unwrap(), 0);
        assert_eq!(flat_index(&w, 1, 2, 1).unwrap(), 7);
        assert_eq!(flat_index(&w, 2, 0, 2).unwrap(), 11);
        assert!(flat_index(&w, 2, 1, 0).is_err());
        assert_eq!(parameter_count(&w), 12);
    }
}
