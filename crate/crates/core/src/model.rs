//! Whitened-data deep linear networks.
//!
//! With whitened inputs the square loss only depends on the end-to-end
//! product `P = W_{L}···W_1` through `½‖P − A‖²_F`, where `A = Y Xᵀ/m`. The
//! whole simulator works with `(A, Λ = I)` and never touches raw samples
//! except in [`whitened_data`], which exists to check that equivalence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::matrix::Matrix;

/// Default band for the entries of the target row `A`.
pub const DEFAULT_A_BAND: (f64, f64) = (0.5, 1.5);

/// Layer layout of a linear network. `dims[0]` is the input dimension and
/// `dims[depth]` the output dimension; layer `i` (1-based) maps
/// `dims[i-1] -> dims[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub depth: usize,
    pub dims: Vec<usize>,
    /// Initialization exponent: the output layer starts at scale `d^-alpha`
    /// and every other layer at `d^-2alpha`. `f64::INFINITY` gives zero
    /// weights.
    pub alpha: f64,
    pub theory_mode: bool,
}

impl NetworkConfig {
    /// `d -> d -> 1`, the setting every theory result is stated for.
    pub fn two_layer(d: usize, alpha: f64) -> Self {
        Self::deep(d, 2, alpha)
    }

    /// `depth` layers with every hidden width equal to `d` and a scalar output.
    pub fn deep(d: usize, depth: usize, alpha: f64) -> Self {
        let mut dims = vec![d; depth];
        dims.push(1);
        Self {
            depth,
            dims,
            alpha,
            theory_mode: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::InvalidConfig(format!(
                "depth must be at least 2, got {}",
                self.depth
            )));
        }
        if self.dims.len() != self.depth + 1 {
            return Err(Error::InvalidConfig(format!(
                "expected {} dims for depth {}, got {}",
                self.depth + 1,
                self.depth,
                self.dims.len()
            )));
        }
        if self.dims.contains(&0) {
            return Err(Error::InvalidConfig("dims must be positive".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        self.dims[self.depth]
    }
}

/// Target, noise level and regularization of one training problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    /// `d_y x d_x` target, strictly positive entries.
    pub a: Matrix,
    pub sigma: f64,
    pub l2_coeff: f64,
    pub a_band: (f64, f64),
    pub seed_data: u64,
    pub seed_noise: u64,
    /// Use the symmetric part of the covariance noise instead of iid entries.
    pub symmetrize_noise: bool,
}

impl ProblemInstance {
    pub fn d(&self) -> usize {
        self.a.cols()
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_l2(mut self, l2_coeff: f64) -> Self {
        self.l2_coeff = l2_coeff;
        self
    }

    /// A problem with an explicit target row, mostly for hand-built cases.
    pub fn from_target(a: Matrix) -> Result<Self> {
        if a.as_slice().iter().any(|&x| x <= 0.0) {
            return Err(Error::InvalidConfig(
                "target entries must be strictly positive".into(),
            ));
        }
        let lo = a.as_slice().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = a.as_slice().iter().cloned().fold(0.0, f64::max);
        Ok(Self {
            a,
            sigma: 0.0,
            l2_coeff: 0.0,
            a_band: (lo, hi),
            seed_data: 0,
            seed_noise: 0,
            symmetrize_noise: false,
        })
    }
}

/// Draws a `1 x d` target with iid entries uniform in `a_band`.
pub fn generate_problem(
    d: usize,
    a_band: (f64, f64),
    sigma: f64,
    seed: u64,
) -> Result<ProblemInstance> {
    let (lo, hi) = a_band;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::InvalidBand { lo, hi });
    }
    if d == 0 {
        return Err(Error::InvalidConfig("d must be at least 1".into()));
    }
    if !(sigma >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "sigma must be non-negative, got {sigma}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries: Vec<f64> = (0..d)
        .map(|_| if lo == hi { lo } else { rng.random_range(lo..=hi) })
        .collect();
    Ok(ProblemInstance {
        a: Matrix::new(1, d, entries)?,
        sigma,
        l2_coeff: 0.0,
        a_band,
        seed_data: seed,
        seed_noise: seed.wrapping_add(0x9e37_79b9_7f4a_7c15),
        symmetrize_noise: false,
    })
}

/// Layer matrices `W_1 … W_L`, `layers[0]` being the input layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub layers: Vec<Matrix>,
}

/// One matrix per layer, shaped like the corresponding weight.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<Matrix>,
}

impl Weights {
    pub fn new(layers: Vec<Matrix>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::InvalidConfig("need at least two layers".into()));
        }
        for pair in layers.windows(2) {
            if pair[1].cols() != pair[0].rows() {
                return Err(shape_err(
                    (pair[1].rows(), pair[0].rows()),
                    pair[1].shape(),
                ));
            }
        }
        Ok(Self { layers })
    }

    pub fn zeros(cfg: &NetworkConfig) -> Self {
        let layers = (1..=cfg.depth)
            .map(|i| Matrix::zeros(cfg.dims[i], cfg.dims[i - 1]))
            .collect();
        Self { layers }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Layer `k`, 1-based.
    pub fn layer(&self, k: usize) -> Result<&Matrix> {
        self.check_layer(k)?;
        Ok(&self.layers[k - 1])
    }

    pub fn check_layer(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.depth() {
            return Err(Error::LayerOutOfRange {
                index: k,
                depth: self.depth(),
            });
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.depth() - 1].rows()
    }

    /// End-to-end product `W_L ··· W_1`.
    pub fn product(&self) -> Matrix {
        let top = self.depth() - 1;
        let mut acc = self.layers[top].clone();
        for layer in self.layers[..top].iter().rev() {
            acc = acc.matmul(layer).expect("shapes checked on construction");
        }
        acc
    }

    /// `E = W_L ··· W_1 − A`.
    pub fn residual(&self, a: &Matrix) -> Result<Matrix> {
        let p = self.product();
        p.sub(a)
    }

    pub fn total_norm_sq(&self) -> f64 {
        self.layers.iter().map(Matrix::frobenius_norm_sq).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Matrix::is_finite)
    }

    /// `B_k = W_L ··· W_{k+1}` for `k = 1..=L` (identity for the top layer),
    /// returned 0-based: `out[k-1] = B_k`.
    pub(crate) fn suffix_products(&self) -> Vec<Matrix> {
        let depth = self.depth();
        let mut out = vec![Matrix::identity(self.output_dim()); depth];
        for k in (1..depth).rev() {
            out[k - 1] = out[k]
                .matmul(&self.layers[k])
                .expect("shapes checked on construction");
        }
        out
    }

    fn check_problem(&self, p: &ProblemInstance) -> Result<()> {
        let expected = (self.output_dim(), self.input_dim());
        if p.a.shape() != expected {
            return Err(shape_err(expected, p.a.shape()));
        }
        Ok(())
    }
}

impl GradientSet {
    pub fn zeros_like(w: &Weights) -> Self {
        Self {
            layers: w
                .layers
                .iter()
                .map(|m| Matrix::zeros(m.rows(), m.cols()))
                .collect(),
        }
    }

    pub fn check_matches(&self, w: &Weights) -> Result<()> {
        if self.layers.len() != w.layers.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} layers", w.layers.len()),
                got: format!("{} layers", self.layers.len()),
            });
        }
        for (g, m) in self.layers.iter().zip(&w.layers) {
            m.check_same_shape(g)?;
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|m| m.as_slice().iter().all(|&x| x == 0.0))
    }
}

/// Gaussian initialization: output-layer entries `N(0, d^{-2α})`, all other
/// entries `N(0, d^{-4α})`, where `d` is the input dimension.
pub fn init_weights(cfg: &NetworkConfig, seed: u64) -> Result<Weights> {
    cfg.validate()?;
    let d = cfg.input_dim() as f64;
    let out_std = d.powf(-cfg.alpha);
    let hidden_std = d.powf(-2.0 * cfg.alpha);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(cfg.depth);
    for i in 1..=cfg.depth {
        let std = if i == cfg.depth { out_std } else { hidden_std };
        let m = Matrix::from_fn(cfg.dims[i], cfg.dims[i - 1], |_, _| {
            let z: f64 = rng.sample(StandardNormal);
            std * z
        });
        layers.push(m);
    }
    Weights::new(layers)
}

/// `½‖W_L···W_1 − A‖²_F`, plus `½λ Σ‖W_i‖²_F` when weight decay is set.
pub fn loss_bar(w: &Weights, p: &ProblemInstance) -> Result<f64> {
    w.check_problem(p)?;
    let e = w.residual(&p.a)?;
    let mut loss = 0.5 * e.frobenius_norm_sq();
    if p.l2_coeff > 0.0 {
        loss += 0.5 * p.l2_coeff * w.total_norm_sq();
    }
    Ok(loss)
}

/// Tolerance on `XXᵀ/m − I` accepted by [`loss_full`] in strict mode.
pub const WHITENING_TOL: f64 = 1e-8;

/// Sample-level square loss `(1/2m)‖W_L···W_1 X − Y‖²_F`.
pub fn loss_full(w: &Weights, x: &Matrix, y: &Matrix, strict: bool) -> Result<f64> {
    let m = x.cols();
    if x.rows() != w.input_dim() {
        return Err(shape_err((w.input_dim(), m), x.shape()));
    }
    if y.shape() != (w.output_dim(), m) {
        return Err(shape_err((w.output_dim(), m), y.shape()));
    }
    if strict {
        let cov = x.matmul_transposed(x)?.scale(1.0 / m as f64);
        let deviation = cov.sub(&Matrix::identity(x.rows()))?.max_abs();
        if deviation > WHITENING_TOL {
            return Err(Error::NotWhitened { deviation });
        }
    }
    let fitted = w.product().matmul(x)?;
    Ok(fitted.sub(y)?.frobenius_norm_sq() / (2.0 * m as f64))
}

/// Explicit samples `(X, Y)` with `XXᵀ/m = I` and `YXᵀ/m = A`.
///
/// `X = √m · Q` where the rows of `Q` are orthonormal; `Y` adds a component
/// orthogonal to the row space of `X`, which shifts the loss by a constant.
pub fn whitened_data(p: &ProblemInstance, m: usize, seed: u64) -> Result<(Matrix, Matrix)> {
    let d = p.d();
    if m < d {
        return Err(Error::InvalidConfig(format!(
            "need at least d = {d} samples, got {m}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    let q = orthonormal_rows(d, m, &mut normal)?;
    let x = q.scale((m as f64).sqrt());

    let dy = p.a.rows();
    let raw = Matrix::from_fn(dy, m, |_, _| normal());
    // Project out the row space of Q: Z = R − (R Qᵀ) Q.
    let coeffs = raw.matmul_transposed(&q)?;
    let z = raw.sub(&coeffs.matmul(&q)?)?;
    let y = p.a.matmul(&x)?.add(&z)?;
    Ok((x, y))
}

fn orthonormal_rows(rows: usize, cols: usize, normal: &mut impl FnMut() -> f64) -> Result<Matrix> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rows);
    while basis.len() < rows {
        let mut v: Vec<f64> = (0..cols).map(|_| normal()).collect();
        // Two passes of Gram-Schmidt keep the rows orthogonal to rounding.
        for _ in 0..2 {
            for b in &basis {
                let c = crate::matrix::dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let norm = crate::matrix::dot(&v, &v).sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    Matrix::new(rows, cols, basis.concat())
}

/// `∇_{W_k} L = B_kᵀ E C_kᵀ` (+ `λ W_k`), with `B_k = W_L···W_{k+1}` and
/// `C_k = W_{k-1}···W_1`. `k` is 1-based.
pub fn gradient(w: &Weights, p: &ProblemInstance, k: usize) -> Result<Matrix> {
    w.check_layer(k)?;
    let grads = gradients(w, p)?;
    Ok(grads.layers.into_iter().nth(k - 1).expect("layer checked"))
}

/// Exact full-batch gradient of every layer.
pub fn gradients(w: &Weights, p: &ProblemInstance) -> Result<GradientSet> {
    w.check_problem(p)?;
    let e = w.residual(&p.a)?;
    let mut g = gradients_for_residual(w, &e)?;
    add_weight_decay(&mut g, w, p.l2_coeff)?;
    Ok(g)
}

/// Layer gradients `B_kᵀ R C_kᵀ` for an arbitrary `d_y x d_x` residual `R`.
///
/// `R C_kᵀ` is built as a chain of row-times-matrix products so that nothing
/// here costs more than `O(depth · d_y · d²)`.
pub(crate) fn gradients_for_residual(w: &Weights, residual: &Matrix) -> Result<GradientSet> {
    let suffixes = w.suffix_products();
    let mut left = residual.clone(); // R C_kᵀ, starting at k = 1
    let mut layers = Vec::with_capacity(w.depth());
    for k in 1..=w.depth() {
        let b = &suffixes[k - 1];
        layers.push(b.transposed_matmul(&left)?);
        if k < w.depth() {
            left = left.matmul_transposed(&w.layers[k - 1])?;
        }
    }
    Ok(GradientSet { layers })
}

fn add_weight_decay(g: &mut GradientSet, w: &Weights, l2: f64) -> Result<()> {
    if l2 > 0.0 {
        for (gk, wk) in g.layers.iter_mut().zip(&w.layers) {
            gk.axpy(l2, wk)?;
        }
    }
    Ok(())
}

/// Minibatch gradient under the large-batch noise model: the batch sees
/// `Ã = A + N_A` and `Λ̃ = I + N_Λ` with iid `N(0, σ²)` entries, and each layer
/// receives `B_kᵀ (P Λ̃ − Ã) C_kᵀ`.
///
/// With `σ = 0` no randomness is drawn and the result is exactly
/// [`gradients`].
pub fn batch_gradient<R: Rng + ?Sized>(
    w: &Weights,
    p: &ProblemInstance,
    rng: &mut R,
) -> Result<GradientSet> {
    if p.sigma == 0.0 {
        return gradients(w, p);
    }
    w.check_problem(p)?;
    let d = w.input_dim();
    let sigma = p.sigma;
    let a_tilde = Matrix::from_fn(1, d, |_, j| p.a[(0, j)] + sigma * rng.sample::<f64, _>(StandardNormal));
    let mut noise = Matrix::from_fn(d, d, |_, _| sigma * rng.sample::<f64, _>(StandardNormal));
    if p.symmetrize_noise {
        noise = noise.add(&noise.transpose())?.scale(0.5);
    }
    let lambda_tilde = Matrix::identity(d).add(&noise)?;
    let e_tilde = w.product().matmul(&lambda_tilde)?.sub(&a_tilde)?;
    let mut g = gradients_for_residual(w, &e_tilde)?;
    add_weight_decay(&mut g, w, p.l2_coeff)?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_layer(w2: &[f64], w1: Matrix) -> Weights {
        Weights::new(vec![w1, Matrix::row_vector(w2).unwrap()]).unwrap()
    }

    #[test]
    fn degenerate_band_gives_constant_target() {
        let p = generate_problem(1, (1.0, 1.0), 0.0, 123).unwrap();
        assert_eq!(p.a.as_slice(), &[1.0]);
    }

    #[test]
    fn problem_generation_is_deterministic() {
        let a = generate_problem(4, (0.5, 1.5), 0.0, 7).unwrap();
        let b = generate_problem(4, (0.5, 1.5), 0.0, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.a.as_slice().iter().all(|&x| (0.5..=1.5).contains(&x)));
    }

    #[test]
    fn rejects_invalid_bands() {
        assert!(matches!(
            generate_problem(3, (0.0, 1.0), 0.0, 1),
            Err(Error::InvalidBand { .. })
        ));
        assert!(matches!(
            generate_problem(3, (2.0, 1.0), 0.0, 1),
            Err(Error::InvalidBand { .. })
        ));
        assert!(generate_problem(3, (-1.0, 1.0), 0.0, 1).is_err());
    }

    #[test]
    fn target_norm_respects_band() {
        let p = generate_problem(256, (0.5, 1.5), 0.0, 99).unwrap();
        let norm = p.a.frobenius_norm();
        assert!((8.0..=24.0).contains(&norm), "norm {norm}");
    }

    #[test]
    fn infinite_alpha_initializes_at_zero() {
        let cfg = NetworkConfig::two_layer(5, f64::INFINITY);
        let w = init_weights(&cfg, 3).unwrap();
        assert!(w.layers.iter().all(|m| m.max_abs() == 0.0));
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let cfg = NetworkConfig::deep(6, 3, 1.0);
        let a = init_weights(&cfg, 11).unwrap();
        let b = init_weights(&cfg, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.layers[0].shape(), (6, 6));
        assert_eq!(a.layers[1].shape(), (6, 6));
        assert_eq!(a.layers[2].shape(), (1, 6));
        assert_ne!(a, init_weights(&cfg, 12).unwrap());
    }

    #[test]
    fn config_validation() {
        let mut cfg = NetworkConfig::two_layer(4, 1.0);
        assert!(cfg.validate().is_ok());
        cfg.alpha = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = NetworkConfig::two_layer(4, 1.0);
        cfg.dims.pop();
        assert!(cfg.validate().is_err());
        let cfg = NetworkConfig::deep(4, 1, 1.0);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn loss_hand_values() {
        let p = ProblemInstance::from_target(Matrix::row_vector(&[2.0, 3.0]).unwrap()).unwrap();
        let w = two_layer(&[1.0, 1.0], Matrix::identity(2));
        assert_eq!(loss_bar(&w, &p).unwrap(), 2.5);

        let zero = two_layer(&[0.0, 0.0], Matrix::zeros(2, 2));
        assert_eq!(loss_bar(&zero, &p).unwrap(), 0.5 * 13.0);

        let exact = two_layer(&[1.0, 0.0], Matrix::new(2, 2, vec![2.0, 3.0, 7.0, 7.0]).unwrap());
        assert_eq!(loss_bar(&exact, &p).unwrap(), 0.0);
        for k in 1..=2 {
            assert!(gradient(&exact, &p, k).unwrap().max_abs() == 0.0);
        }
    }

    #[test]
    fn weight_decay_terms() {
        let p = ProblemInstance::from_target(Matrix::row_vector(&[2.0, 3.0]).unwrap())
            .unwrap()
            .with_l2(0.5);
        let w = two_layer(&[1.0, 1.0], Matrix::identity(2));
        // 2.5 + ½·0.5·(2 + 2)
        assert!((loss_bar(&w, &p).unwrap() - 3.5).abs() < 1e-15);
        let g2 = gradient(&w, &p, 2).unwrap();
        // E W1ᵀ = [-1, -2], plus 0.5·[1, 1]
        assert_eq!(g2.as_slice(), &[-0.5, -1.5]);
    }

    #[test]
    fn layer_index_is_checked() {
        let p = generate_problem(3, DEFAULT_A_BAND, 0.0, 1).unwrap();
        let w = init_weights(&NetworkConfig::two_layer(3, 1.0), 1).unwrap();
        assert!(matches!(
            gradient(&w, &p, 0),
            Err(Error::LayerOutOfRange { .. })
        ));
        assert!(gradient(&w, &p, 3).is_err());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let p = generate_problem(4, DEFAULT_A_BAND, 0.0, 1).unwrap();
        let w = init_weights(&NetworkConfig::two_layer(3, 1.0), 1).unwrap();
        assert!(matches!(loss_bar(&w, &p), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn scalar_loss_full_by_hand() {
        // m = 1, d = 1: X = [1], Y = [3], W2 W1 = 2·0.5 = 1 → ½ (1 − 3)² = 2
        let w = two_layer(&[2.0], Matrix::new(1, 1, vec![0.5]).unwrap());
        let x = Matrix::new(1, 1, vec![1.0]).unwrap();
        let y = Matrix::new(1, 1, vec![3.0]).unwrap();
        assert_eq!(loss_full(&w, &x, &y, true).unwrap(), 2.0);
    }

    #[test]
    fn whitened_data_properties() {
        let p = generate_problem(5, DEFAULT_A_BAND, 0.0, 2).unwrap();
        let (x, y) = whitened_data(&p, 12, 9).unwrap();
        let m = 12.0;
        let cov = x.matmul_transposed(&x).unwrap().scale(1.0 / m);
        assert!(cov.sub(&Matrix::identity(5)).unwrap().max_abs() < 1e-12);
        let a_hat = y.matmul_transposed(&x).unwrap().scale(1.0 / m);
        assert!(a_hat.sub(&p.a).unwrap().max_abs() < 1e-12);

        // exact fit attains the minimum of loss_full
        let w = two_layer(&[1.0, 0.0, 0.0, 0.0, 0.0], {
            let mut w1 = Matrix::zeros(5, 5);
            for j in 0..5 {
                w1[(0, j)] = p.a[(0, j)];
            }
            w1
        });
        let at_min = loss_full(&w, &x, &y, true).unwrap();
        let off = two_layer(&[1.1, 0.0, 0.0, 0.0, 0.0], w.layers[0].clone());
        assert!(loss_full(&off, &x, &y, true).unwrap() > at_min);
    }

    #[test]
    fn non_whitened_input_rejected_in_strict_mode() {
        let w = init_weights(&NetworkConfig::two_layer(2, 1.0), 1).unwrap();
        let x = Matrix::new(2, 2, vec![2.0, 0.0, 0.0, 1.0]).unwrap();
        let y = Matrix::zeros(1, 2);
        assert!(matches!(
            loss_full(&w, &x, &y, true),
            Err(Error::NotWhitened { .. })
        ));
        assert!(loss_full(&w, &x, &y, false).is_ok());
    }

    #[test]
    fn noiseless_batch_gradient_is_exact() {
        let p = generate_problem(6, DEFAULT_A_BAND, 0.0, 3).unwrap();
        let w = init_weights(&NetworkConfig::two_layer(6, 0.5), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let before = rng.clone();
        let g = batch_gradient(&w, &p, &mut rng).unwrap();
        assert_eq!(g, gradients(&w, &p).unwrap());
        assert_eq!(rng, before, "no randomness may be consumed at sigma = 0");
    }

    #[test]
    fn two_layer_gradient_formulas() {
        let p = generate_problem(4, DEFAULT_A_BAND, 0.0, 8).unwrap();
        let w = init_weights(&NetworkConfig::two_layer(4, 0.3), 2).unwrap();
        let e = w.residual(&p.a).unwrap();
        let g1 = w.layers[1].transposed_matmul(&e).unwrap();
        let g2 = e.matmul_transposed(&w.layers[0]).unwrap();
        let g = gradients(&w, &p).unwrap();
        assert!(g.layers[0].sub(&g1).unwrap().max_abs() < 1e-15);
        assert!(g.layers[1].sub(&g2).unwrap().max_abs() < 1e-15);
    }
}
