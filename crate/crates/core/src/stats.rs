//! Statistics over Hessian diagonals, gradients and weight spectra.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::model::Weights;
use crate::svd::svd;

/// Entries with `|uᵢvⱼ|` below this are skipped by [`rank1_fit`].
pub const RANK1_FLOOR: f64 = 1e-300;

pub const DEFAULT_ENERGY_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Subsample {
    pub count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RmedOptions {
    /// `ε_s`: adds `ε_s · max` to the denominator.
    pub stabilizer_factor: f64,
    /// Use the k-th largest entry instead of the maximum.
    pub top_k: usize,
    pub subsample: Option<Subsample>,
}

impl Default for RmedOptions {
    fn default() -> Self {
        Self {
            stabilizer_factor: 0.0,
            top_k: 1,
            subsample: None,
        }
    }
}

impl RmedOptions {
    pub fn stabilized(stabilizer_factor: f64) -> Self {
        Self {
            stabilizer_factor,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.stabilizer_factor >= 0.0 && self.stabilizer_factor.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "stabilizer_factor must be a finite non-negative number, got {}",
                self.stabilizer_factor
            )));
        }
        if self.top_k == 0 {
            return Err(Error::InvalidConfig("top_k must be at least 1".into()));
        }
        if let Some(s) = self.subsample {
            if s.count == 0 {
                return Err(Error::InvalidConfig("subsample count must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Median with the even-length convention of averaging the two middle values.
/// Returns `NaN` for an empty slice.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Ratio of the k-th largest to the median absolute entry.
pub fn r_med(diag: &[f64], opts: &RmedOptions) -> Result<f64> {
    opts.validate()?;
    if diag.is_empty() {
        return Err(Error::Degenerate("r_med of an empty vector".into()));
    }
    let mut abs: Vec<f64> = match opts.subsample {
        Some(s) if s.count < diag.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
            let mut picked = index::sample(&mut rng, diag.len(), s.count).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| diag[i].abs()).collect()
        }
        _ => diag.iter().map(|x| x.abs()).collect(),
    };
    if abs.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("r_med input".into()));
    }
    if opts.top_k > abs.len() {
        return Err(Error::InvalidConfig(format!(
            "top_k = {} exceeds the {} available entries",
            opts.top_k,
            abs.len()
        )));
    }
    // Selection instead of a full sort: Hessian diagonals reach d² entries.
    let n = abs.len();
    let max = abs.iter().fold(0.0f64, |m, &x| m.max(x));
    let kth = *abs.select_nth_unstable_by(n - opts.top_k, f64::total_cmp).1;
    let (lower, mid, _) = abs.select_nth_unstable_by(n / 2, f64::total_cmp);
    let med = if n % 2 == 1 {
        *mid
    } else {
        0.5 * (*mid + lower.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x)))
    };
    stabilized_ratio(kth, med, max, opts)
}

fn stabilized_ratio(kth: f64, med: f64, max: f64, opts: &RmedOptions) -> Result<f64> {
    let denom = med + opts.stabilizer_factor * max;
    if denom <= 0.0 {
        return Err(Error::Degenerate(
            "median of the diagonal is zero and no stabilizer is set".into(),
        ));
    }
    Ok(kth / denom)
}

/// `sorted` is ascending; every value stands for `multiplicity` copies.
fn ratio_from_sorted(sorted: &[f64], multiplicity: usize, opts: &RmedOptions) -> Result<f64> {
    let n = sorted.len();
    let total = n * multiplicity;
    if opts.top_k > total {
        return Err(Error::InvalidConfig(format!(
            "top_k = {} exceeds the {total} available entries",
            opts.top_k
        )));
    }
    let max = sorted[n - 1];
    let kth = sorted[n - opts.top_k.div_ceil(multiplicity)];
    // Repeating each value the same number of times leaves the median unchanged.
    let med = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    stabilized_ratio(kth, med, max, opts)
}

fn two_layer_parts(w: &Weights) -> Result<(&Matrix, &Matrix)> {
    if w.depth() != 2 || w.output_dim() != 1 {
        return Err(Error::WrongArchitecture(format!(
            "expected a two-layer network with scalar output, got depth {} and output dim {}",
            w.depth(),
            w.output_dim()
        )));
    }
    Ok((&w.layers[0], &w.layers[1]))
}

/// Two-layer `R_med` from the weights alone: layer 1 uses `w₂ᵢ²`, layer 2 the
/// squared row norms of `W₁`. Equals [`r_med`] on the exact Hessian diagonal.
pub fn r_med_closed_form(w: &Weights) -> Result<(f64, f64)> {
    r_med_closed_form_with(w, &RmedOptions::default())
}

/// As [`r_med_closed_form`] with a stabilizer and top-k. Subsampling is not
/// supported here since it is defined on the expanded diagonal.
pub fn r_med_closed_form_with(w: &Weights, opts: &RmedOptions) -> Result<(f64, f64)> {
    opts.validate()?;
    if opts.subsample.is_some() {
        return Err(Error::InvalidConfig(
            "the closed-form route does not subsample".into(),
        ));
    }
    let (w1, w2) = two_layer_parts(w)?;
    let mut l1: Vec<f64> = w2.as_slice().iter().map(|x| x * x).collect();
    let mut l2 = w1.row_norms_sq();
    l1.sort_by(f64::total_cmp);
    l2.sort_by(f64::total_cmp);
    Ok((
        ratio_from_sorted(&l1, w1.cols(), opts)?,
        ratio_from_sorted(&l2, 1, opts)?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RDiag {
    /// `None` marks rows with a zero diagonal entry; they are left out of the mean.
    pub rows: Vec<Option<f64>>,
    pub mean: f64,
    pub excluded: usize,
}

/// Row-wise off-diagonal mass relative to the diagonal entry.
pub fn r_diag(h: &Matrix) -> Result<RDiag> {
    if h.rows() != h.cols() {
        return Err(Error::ShapeMismatch {
            expected: "square matrix".into(),
            got: format!("{}x{}", h.rows(), h.cols()),
        });
    }
    let rows: Vec<Option<f64>> = (0..h.rows())
        .map(|i| {
            let diag = h[(i, i)].abs();
            if diag == 0.0 {
                return None;
            }
            let off: f64 = h
                .row(i)
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, x)| x * x)
                .sum();
            Some(off.sqrt() / diag)
        })
        .collect();
    let kept: Vec<f64> = rows.iter().flatten().copied().collect();
    if kept.is_empty() {
        return Err(Error::Degenerate("every diagonal entry is zero".into()));
    }
    let mean = kept.iter().sum::<f64>() / kept.len() as f64;
    Ok(RDiag {
        excluded: rows.len() - kept.len(),
        rows,
        mean,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentProfile {
    /// Coordinates sorted by ascending `|H_ii|`.
    pub order: Vec<usize>,
    pub h: Vec<f64>,
    pub g: Vec<f64>,
    pub g_adapt: Vec<f64>,
    pub rho_g: f64,
    pub rho_adapt: f64,
    pub cv_g: f64,
    pub cv_adapt: f64,
}

/// Sorts coordinates by `|H_ii|` and measures how well gradient magnitudes
/// follow that ordering.
pub fn alignment_profile(diag: &[f64], g: &[f64], g_adapt: &[f64]) -> Result<AlignmentProfile> {
    if diag.len() != g.len() || diag.len() != g_adapt.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} entries in each vector", diag.len()),
            got: format!("{} and {}", g.len(), g_adapt.len()),
        });
    }
    if diag.is_empty() {
        return Err(Error::Degenerate("empty alignment input".into()));
    }
    let h_abs: Vec<f64> = diag.iter().map(|x| x.abs()).collect();
    let g_abs: Vec<f64> = g.iter().map(|x| x.abs()).collect();
    let a_abs: Vec<f64> = g_adapt.iter().map(|x| x.abs()).collect();
    let mut order: Vec<usize> = (0..diag.len()).collect();
    order.sort_by(|&i, &j| h_abs[i].total_cmp(&h_abs[j]).then(i.cmp(&j)));
    let pick = |v: &[f64]| order.iter().map(|&i| v[i]).collect::<Vec<_>>();
    Ok(AlignmentProfile {
        rho_g: spearman(&h_abs, &g_abs),
        rho_adapt: spearman(&h_abs, &a_abs),
        cv_g: coefficient_of_variation(&g_abs),
        cv_adapt: coefficient_of_variation(&a_abs),
        h: pick(&h_abs),
        g: pick(&g_abs),
        g_adapt: pick(&a_abs),
        order,
    })
}

/// Ranks starting at 1, ties share their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation; 0 when either input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&average_ranks(x), &average_ranks(y))
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Population standard deviation over the mean; 0 for an all-zero input.
pub fn coefficient_of_variation(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    var.sqrt() / mean.abs()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumDiag {
    pub singular_values: Vec<f64>,
    /// Smallest count of leading triples holding the threshold share of energy.
    pub k: usize,
    pub u_tilde: Vec<f64>,
    pub v_tilde: Vec<f64>,
    pub r_u: f64,
    pub r_v: f64,
    pub stable_rank: f64,
}

pub fn svd_diagnostics(w: &Matrix, energy_threshold: f64) -> Result<SpectrumDiag> {
    if !(energy_threshold > 0.0 && energy_threshold <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "energy threshold must lie in (0, 1], got {energy_threshold}"
        )));
    }
    if w.max_abs() == 0.0 {
        return Err(Error::Degenerate("spectrum of a zero matrix".into()));
    }
    let s = svd(w)?;
    let energy: Vec<f64> = s.sigma.iter().map(|x| x * x).collect();
    let total: f64 = energy.iter().sum();
    let mut k = energy.len();
    let mut acc = 0.0;
    for (i, e) in energy.iter().enumerate() {
        acc += e;
        if acc >= energy_threshold * total {
            k = i + 1;
            break;
        }
    }
    let weighted = |m: &Matrix| -> Vec<f64> {
        (0..m.rows())
            .map(|r| (0..k).map(|i| energy[i] * m[(r, i)] * m[(r, i)]).sum())
            .collect()
    };
    let u_tilde = weighted(&s.u);
    let v_tilde = weighted(&s.v);
    Ok(SpectrumDiag {
        r_u: max_over_median(&u_tilde),
        r_v: max_over_median(&v_tilde),
        stable_rank: total / energy[0],
        singular_values: s.sigma,
        k,
        u_tilde,
        v_tilde,
    })
}

/// `max / median`, infinite when the median vanishes.
fn max_over_median(values: &[f64]) -> f64 {
    let max = values.iter().fold(0.0f64, |m, &x| m.max(x));
    let med = median(values);
    if med == 0.0 {
        f64::INFINITY
    } else {
        max / med
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rank1Fit {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub c: f64,
    pub delta1: f64,
    pub delta2: f64,
    /// Entries skipped in `delta1` / `delta2` because the denominator vanished.
    pub excluded1: usize,
    pub excluded2: usize,
}

/// Fits `W₁ ≈ u vᵀ`, `W₂ ≈ c uᵀ` and reports the worst relative residuals.
pub fn rank1_fit(w1: &Matrix, w2: &Matrix) -> Result<Rank1Fit> {
    if w2.rows() != 1 || w2.cols() != w1.rows() {
        return Err(Error::ShapeMismatch {
            expected: format!("W2 of shape 1x{}", w1.rows()),
            got: format!("{}x{}", w2.rows(), w2.cols()),
        });
    }
    let s = svd(w1)?;
    if s.sigma[0] == 0.0 {
        return Err(Error::Degenerate("W1 has no nonzero singular value".into()));
    }
    let mut u = s.left_vector(0);
    if dot(w2.row(0), &u) < 0.0 {
        u.iter_mut().for_each(|x| *x = -*x);
    }
    let c = dot(w2.row(0), &u);
    let v: Vec<f64> = (0..w1.cols())
        .map(|j| (0..w1.rows()).map(|i| w1[(i, j)] * u[i]).sum())
        .collect();

    let (mut delta1, mut excluded1) = (0.0f64, 0);
    for (i, ui) in u.iter().enumerate() {
        for (j, vj) in v.iter().enumerate() {
            let denom = (ui * vj).abs();
            if denom < RANK1_FLOOR {
                excluded1 += 1;
                continue;
            }
            delta1 = delta1.max((w1[(i, j)] - ui * vj).abs() / denom);
        }
    }
    let (mut delta2, mut excluded2) = (0.0f64, 0);
    for (i, ui) in u.iter().enumerate() {
        let denom = (c * ui).abs();
        if denom < RANK1_FLOOR {
            excluded2 += 1;
            continue;
        }
        delta2 = delta2.max((w2[(0, i)] - c * ui).abs() / denom);
    }
    Ok(Rank1Fit {
        u,
        v,
        c,
        delta1,
        delta2,
        excluded1,
        excluded2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hessian::hessian_diag_layer;
    use crate::model::{init_weights, NetworkConfig};
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn median_conventions() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn r_med_examples() {
        let o = RmedOptions::default();
        assert_eq!(r_med(&[2.5; 7], &o).unwrap(), 1.0);
        assert!(close(r_med(&[1.0, 2.0, 3.0, 4.0, 5.0], &o).unwrap(), 5.0 / 3.0, 1e-15));
        let stab = RmedOptions::stabilized(0.001);
        assert!(close(r_med(&[0.0, 0.0, 0.0, 1.0], &stab).unwrap(), 1000.0, 1e-12));
        assert!(matches!(
            r_med(&[0.0, 0.0, 0.0, 1.0], &o),
            Err(Error::Degenerate(_))
        ));
        assert!(r_med(&[], &o).is_err());
    }

    #[test]
    fn r_med_uses_absolute_values_and_top_k() {
        let o = RmedOptions {
            top_k: 2,
            ..RmedOptions::default()
        };
        assert!(close(r_med(&[-1.0, 2.0, -3.0, 4.0, -5.0], &o).unwrap(), 4.0 / 3.0, 1e-15));
        let too_big = RmedOptions {
            top_k: 9,
            ..RmedOptions::default()
        };
        assert!(r_med(&[1.0, 2.0], &too_big).is_err());
    }

    #[test]
    fn subsampling_is_seeded() {
        let diag: Vec<f64> = (1..=500).map(|i| i as f64).collect();
        let o = RmedOptions {
            subsample: Some(Subsample { count: 50, seed: 3 }),
            ..RmedOptions::default()
        };
        let a = r_med(&diag, &o).unwrap();
        assert_eq!(a, r_med(&diag, &o).unwrap());
        assert_ne!(a, r_med(&diag, &RmedOptions::default()).unwrap());
    }

    #[test]
    fn closed_form_examples() {
        let w1 = Matrix::identity(3);
        let w2 = Matrix::new(1, 3, vec![1.0, -1.0, 1.0]).unwrap();
        let w = Weights::new(vec![w1.clone(), w2]).unwrap();
        assert_eq!(r_med_closed_form(&w).unwrap(), (1.0, 1.0));
        let w = Weights::new(vec![w1, Matrix::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap()]).unwrap();
        assert!(close(r_med_closed_form(&w).unwrap().0, 2.25, 1e-15));
    }

    #[test]
    fn closed_form_matches_hessian_route() {
        for (seed, opts) in [
            (1, RmedOptions::default()),
            (2, RmedOptions::stabilized(0.001)),
            (
                3,
                RmedOptions {
                    top_k: 10,
                    ..RmedOptions::default()
                },
            ),
            (
                4,
                RmedOptions {
                    top_k: 12,
                    stabilizer_factor: 0.01,
                    subsample: None,
                },
            ),
        ] {
            let w = init_weights(&NetworkConfig::two_layer(16, 1.0), seed).unwrap();
            let (c1, c2) = r_med_closed_form_with(&w, &opts).unwrap();
            let h1 = r_med(&hessian_diag_layer(&w, 1).unwrap().values, &opts).unwrap();
            let h2 = r_med(&hessian_diag_layer(&w, 2).unwrap().values, &opts).unwrap();
            assert!(close(c1, h1, 1e-12), "{c1} vs {h1}");
            assert!(close(c2, h2, 1e-12), "{c2} vs {h2}");
        }
    }

    #[test]
    fn closed_form_rejects_deep_nets() {
        let w = init_weights(&NetworkConfig::deep(3, 3, 1.0), 0).unwrap();
        assert!(matches!(r_med_closed_form(&w), Err(Error::WrongArchitecture(_))));
    }

    #[test]
    fn r_diag_examples() {
        let d = Matrix::new(2, 2, vec![3.0, 0.0, 0.0, -2.0]).unwrap();
        let r = r_diag(&d).unwrap();
        assert_eq!(r.rows, vec![Some(0.0), Some(0.0)]);
        assert_eq!(r.mean, 0.0);

        let h = Matrix::new(2, 2, vec![2.0, 1.0, 1.0, 4.0]).unwrap();
        let r = r_diag(&h).unwrap();
        assert_eq!(r.rows, vec![Some(0.5), Some(0.25)]);
        assert_eq!(r.mean, 0.375);

        let z = Matrix::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!(matches!(r_diag(&z), Err(Error::Degenerate(_))));
        let partial = Matrix::new(2, 2, vec![1.0, 1.0, 1.0, 0.0]).unwrap();
        let r = r_diag(&partial).unwrap();
        assert_eq!(r.excluded, 1);
        assert_eq!(r.rows[1], None);
    }

    #[test]
    fn alignment_examples() {
        let diag = [0.3, 0.1, 0.7, 0.5];
        let p = alignment_profile(&diag, &diag, &[2.0; 4]).unwrap();
        assert_eq!(p.rho_g, 1.0);
        assert_eq!(p.cv_adapt, 0.0);
        assert_eq!(p.order, vec![1, 0, 3, 2]);
        assert_eq!(p.h, vec![0.1, 0.3, 0.5, 0.7]);
        assert!(alignment_profile(&diag, &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
    }

    #[test]
    fn spectrum_of_diagonal_matrix() {
        let w = Matrix::new(3, 3, vec![3.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let s = svd_diagnostics(&w, 0.9).unwrap();
        assert_eq!(s.singular_values, vec![3.0, 2.0, 1.0]);
        assert_eq!(s.k, 2);
        assert_eq!(s.u_tilde, vec![9.0, 4.0, 0.0]);
        assert_eq!(s.r_u, 2.25);
        assert!(close(s.stable_rank, 14.0 / 9.0, 1e-15));
    }

    #[test]
    fn spectrum_of_rank_one_and_orthogonal() {
        let w = Matrix::from_fn(4, 4, |_, j| [1.0, -2.0, 0.5, 3.0][j]);
        let s = svd_diagnostics(&w, 0.9).unwrap();
        assert_eq!(s.k, 1);
        assert!(close(s.r_u, 1.0, 1e-12));
        assert!(close(s.stable_rank, 1.0, 1e-12));

        let (c, sn) = (0.6, 0.8);
        let q = Matrix::new(2, 2, vec![c, -sn, sn, c]).unwrap();
        let s = svd_diagnostics(&q, 1.0).unwrap();
        assert!(close(s.stable_rank, 2.0, 1e-12));
        assert!(close(s.r_u, 1.0, 1e-12));
        assert!(svd_diagnostics(&Matrix::zeros(2, 2), 0.9).is_err());
        assert!(svd_diagnostics(&q, 0.0).is_err());
    }

    #[test]
    fn rank1_exact_and_perturbed() {
        let u0 = [0.5, -1.0, 2.0, 0.7];
        let v0 = [1.0, 0.3, -0.4, 0.9];
        let w1 = Matrix::from_fn(4, 4, |i, j| u0[i] * v0[j]);
        let w2 = Matrix::new(1, 4, u0.iter().map(|x| 1.5 * x).collect()).unwrap();
        let fit = rank1_fit(&w1, &w2).unwrap();
        assert!(fit.delta1 < 1e-12 && fit.delta2 < 1e-12, "{fit:?}");
        assert!(close(dot(&fit.u, &fit.u), 1.0, 1e-12));
        assert!(fit.c > 0.0);

        let bump = |x: f64, k: usize| x * (1.0 + 1e-3 * if k % 2 == 0 { 1.0 } else { -1.0 });
        let p1 = Matrix::from_fn(4, 4, |i, j| bump(w1[(i, j)], i * 4 + j + i));
        let p2 = Matrix::from_fn(1, 4, |_, j| bump(w2[(0, j)], j));
        let fit = rank1_fit(&p1, &p2).unwrap();
        assert!(fit.delta1 > 0.0 && fit.delta1 < 1e-2, "{}", fit.delta1);
        assert!(fit.delta2 > 0.0 && fit.delta2 < 1e-2, "{}", fit.delta2);
    }

    #[test]
    fn rank1_counts_excluded_entries() {
        let w1 = Matrix::from_fn(2, 2, |i, j| if j == 0 { [1.0, 2.0][i] } else { 0.0 });
        let w2 = Matrix::new(1, 2, vec![1.0, 2.0]).unwrap();
        let fit = rank1_fit(&w1, &w2).unwrap();
        assert_eq!(fit.excluded1, 2);
        assert!(rank1_fit(&Matrix::zeros(2, 2), &w2).is_err());
    }

    proptest! {
        #[test]
        fn r_med_at_least_one(v in prop::collection::vec(0.01f64..100.0, 1..40)) {
            prop_assert!(r_med(&v, &RmedOptions::default()).unwrap() >= 1.0);
        }

        #[test]
        fn r_med_scale_invariant(
            v in prop::collection::vec(0.01f64..100.0, 1..40),
            c in prop_oneof![-1e3f64..-1e-3, 1e-3f64..1e3],
        ) {
            let o = RmedOptions::default();
            let scaled: Vec<f64> = v.iter().map(|x| c * x).collect();
            let a = r_med(&v, &o).unwrap();
            let b = r_med(&scaled, &o).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a);
        }

        #[test]
        fn r_med_permutation_invariant(v in prop::collection::vec(0.01f64..100.0, 1..40)) {
            let o = RmedOptions::default();
            let mut rev = v.clone();
            rev.reverse();
            prop_assert_eq!(r_med(&v, &o).unwrap(), r_med(&rev, &o).unwrap());
        }

        #[test]
        fn spectrum_permutation_invariant(seed in 0u64..500, shift in 1usize..5) {
            let w = init_weights(&NetworkConfig::two_layer(5, 0.5), seed).unwrap().layers[0].clone();
            let perm = Matrix::from_fn(5, 5, |i, j| w[((i + shift) % 5, (j + 2 * shift) % 5)]);
            let a = svd_diagnostics(&w, 0.9).unwrap();
            let b = svd_diagnostics(&perm, 0.9).unwrap();
            prop_assert!((a.r_u - b.r_u).abs() <= 1e-9 * a.r_u);
            prop_assert!((a.r_v - b.r_v).abs() <= 1e-9 * a.r_v);
        }

        #[test]
        fn svd_reconstructs(seed in 0u64..500) {
            let w = init_weights(&NetworkConfig::two_layer(6, 0.5), seed).unwrap().layers[0].clone();
            let s = svd(&w).unwrap();
            let err = s.reconstruct().sub(&w).unwrap().frobenius_norm();
            prop_assert!(err <= 1e-8 * w.frobenius_norm());
        }
    }
}
