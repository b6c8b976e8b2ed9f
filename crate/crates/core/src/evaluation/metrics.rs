//! Distribution distances between feature sets and the alignment score.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Result};

/// `n` feature rows of equal dimension.
fn check_rows(rows: &[Vec<f64>], what: &str) -> Result<usize> {
    if rows.len() < 2 {
        return Err(invalid!("{} needs at least 2 feature rows, got {}", what, rows.len()));
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(invalid!("{} feature rows must share a non-zero dimension", what));
    }
    Ok(d)
}

/// Sample mean and covariance with `1/(n-1)` normalization.
pub fn mean_and_covariance(rows: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = check_rows(rows, "covariance")?;
    let n = rows.len() as f64;
    let mut mu = DVector::zeros(d);
    for r in rows {
        for (m, v) in mu.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        for i in 0..d {
            let di = r[i] - mu[i];
            for j in 0..=i {
                cov[(i, j)] += di * (r[j] - mu[j]);
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            let v = cov[(i, j)] / (n - 1.0);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok((mu, cov))
}

/// Square root of a symmetric positive semi-definite matrix; negative
/// eigenvalues are clamped to 0.
pub fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| libm::sqrt(l.max(0.0)));
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Frechet distance between two Gaussians,
/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))`, with the trace of
/// the cross term computed as `sum sqrt(eig(S_a^(1/2) S_b S_a^(1/2)))`.
pub fn fid_from_stats(mu_a: &DVector<f64>, cov_a: &DMatrix<f64>, mu_b: &DVector<f64>, cov_b: &DMatrix<f64>) -> Result<f64> {
    let d = mu_a.len();
    if mu_b.len() != d || cov_a.shape() != (d, d) || cov_b.shape() != (d, d) {
        return Err(invalid!("statistics dimensions disagree"));
    }
    let diff = mu_a - mu_b;
    let sa = sqrt_psd(cov_a);
    let inner = &sa * cov_b * &sa;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|l| libm::sqrt(l.max(0.0))).sum();
    let value = diff.dot(&diff) + cov_a.trace() + cov_b.trace() - 2.0 * cross;
    Ok(value.max(0.0))
}

pub fn fid(features_a: &[Vec<f64>], features_b: &[Vec<f64>]) -> Result<f64> {
    let da = check_rows(features_a, "fid")?;
    let db = check_rows(features_b, "fid")?;
    if da != db {
        return Err(invalid!("fid feature dimensions differ: {} vs {}", da, db));
    }
    let (ma, ca) = mean_and_covariance(features_a)?;
    let (mb, cb) = mean_and_covariance(features_b)?;
    fid_from_stats(&ma, &ca, &mb, &cb)
}

/// `(x . y / d + 1)^3`.
pub fn poly_kernel(x: &[f64], y: &[f64]) -> f64 {
    let d = x.len() as f64;
    let s = crate::kernels::dot(x, y) / d + 1.0;
    s * s * s
}

/// Unbiased squared MMD with the cubic polynomial kernel; within-set sums
/// exclude the diagonal.
pub fn kid(features_a: &[Vec<f64>], features_b: &[Vec<f64>]) -> Result<f64> {
    let da = check_rows(features_a, "kid")?;
    let db = check_rows(features_b, "kid")?;
    if da != db {
        return Err(invalid!("kid feature dimensions differ: {} vs {}", da, db));
    }
    let within = |rows: &[Vec<f64>]| {
        let n = rows.len();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += poly_kernel(&rows[i], &rows[j]);
                }
            }
        }
        s / (n * (n - 1)) as f64
    };
    let mut cross = 0.0;
    for x in features_a {
        for y in features_b {
            cross += poly_kernel(x, y);
        }
    }
    cross /= (features_a.len() * features_b.len()) as f64;
    Ok(within(features_a) + within(features_b) - 2.0 * cross)
}

/// `100 * max(0, cos(a, b))`; zero vectors score 0.
pub fn clamped_cosine_score(a: &[f64], b: &[f64]) -> f64 {
    let na = libm::sqrt(crate::kernels::dot(a, a));
    let nb = libm::sqrt(crate::kernels::dot(b, b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (100.0 * crate::kernels::dot(a, b) / (na * nb)).clamp(0.0, 100.0)
}

/// Mean clamped cosine score over paired embeddings.
pub fn clip_score_from_embeddings(images: &[Vec<f64>], texts: &[Vec<f64>]) -> Result<f64> {
    if images.len() != texts.len() {
        return Err(invalid!("{} image embeddings but {} text embeddings", images.len(), texts.len()));
    }
    if images.is_empty() {
        return Err(invalid!("clip score needs at least one pair"));
    }
    Ok(images.iter().zip(texts).map(|(a, b)| clamped_cosine_score(a, b)).sum::<f64>() / images.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use alloc::vec;
    use proptest::prelude::*;

    fn gaussian_rows(seed: u64, n: usize, d: usize, shift: f64) -> Vec<Vec<f64>> {
        let mut r = rng::seeded(seed);
        (0..n).map(|_| (0..d).map(|_| rng::normal(&mut r) + shift).collect()).collect()
    }

    #[test]
    fn identical_sets_have_zero_fid() {
        let a = gaussian_rows(1, 40, 6, 0.0);
        assert!(fid(&a, &a).unwrap().abs() < 1e-8);
    }

    #[test]
    fn shifted_unit_gaussians_in_one_dimension() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let v = fid_from_stats(&DVector::from_element(1, 0.0), &one, &DVector::from_element(1, 1.0), &one).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn fid_is_symmetric() {
        let a = gaussian_rows(2, 30, 4, 0.0);
        let b = gaussian_rows(3, 25, 4, 0.5);
        let (x, y) = (fid(&a, &b).unwrap(), fid(&b, &a).unwrap());
        assert!((x - y).abs() < 1e-9 * x.max(1.0));
    }

    #[test]
    fn too_few_rows() {
        let a = gaussian_rows(2, 1, 4, 0.0);
        let b = gaussian_rows(3, 5, 4, 0.0);
        assert!(fid(&a, &b).is_err());
        assert!(kid(&b, &a).is_err());
        assert!(fid(&b, &gaussian_rows(3, 5, 3, 0.0)).is_err());
    }

    #[test]
    fn kid_kernel_and_degenerate_case() {
        assert_eq!(poly_kernel(&[1.0; 7], &[1.0; 7]), 8.0);
        let zeros = vec![vec![0.0; 5]; 4];
        assert_eq!(kid(&zeros, &zeros).unwrap(), 0.0);
    }

    #[test]
    fn clip_examples() {
        assert!((clamped_cosine_score(&[1.0, 2.0], &[1.0, 2.0]) - 100.0).abs() < 1e-12);
        assert_eq!(clamped_cosine_score(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
        assert_eq!(clamped_cosine_score(&[1.0, 2.0], &[-1.0, -2.0]), 0.0);
        assert!(clip_score_from_embeddings(&[vec![1.0]], &[]).is_err());
    }

    proptest! {
        #[test]
        fn fid_non_negative_and_symmetric(seed in 0u64..1000, shift in -2.0f64..2.0) {
            let a = gaussian_rows(seed, 12, 3, 0.0);
            let b = gaussian_rows(seed + 7, 9, 3, shift);
            let x = fid(&a, &b).unwrap();
            let y = fid(&b, &a).unwrap();
            prop_assert!(x >= 0.0);
            prop_assert!((x - y).abs() <= 1e-8 * x.max(1.0));
        }

        #[test]
        fn kid_is_symmetric(seed in 0u64..1000) {
            let a = gaussian_rows(seed, 6, 3, 0.0);
            let b = gaussian_rows(seed + 1, 8, 3, 0.3);
            prop_assert!((kid(&a, &b).unwrap() - kid(&b, &a).unwrap()).abs() < 1e-10);
        }

        #[test]
        fn clip_is_scale_invariant(a in proptest::collection::vec(-5.0f64..5.0, 4), b in proptest::collection::vec(-5.0f64..5.0, 4), k in 0.01f64..100.0) {
            let s = clamped_cosine_score(&a, &b);
            let ka: Vec<f64> = a.iter().map(|v| v * k).collect();
            let kb: Vec<f64> = b.iter().map(|v| v * k).collect();
            prop_assert!((s - clamped_cosine_score(&ka, &kb)).abs() < 1e-9);
            prop_assert!((0.0..=100.0).contains(&s));
        }
    }
}
