//! Frechet distance between Gaussian fits of feature corpora, and mean
//! pairwise motion diversity.

use nalgebra::DMatrix;

use super::FeatureVector;
use crate::error::{Error, Result};

const COV_REG: f64 = 1e-6;

fn check_corpus(vs: &[FeatureVector], side: &str) -> Result<usize> {
    if vs.len() < 2 {
        return Err(Error::DegenerateCorpus(format!(
            "{side} corpus has {} sample(s), need >= 2",
            vs.len()
        )));
    }
    let width = vs[0].values.len();
    let kind = vs[0].kind;
    for v in vs {
        if v.values.len() != width || v.kind != kind {
            return Err(Error::ShapeMismatch {
                context: format!("{side} corpus features"),
                expected: format!("{kind:?} width {width}"),
                got: format!("{:?} width {}", v.kind, v.values.len()),
            });
        }
    }
    Ok(width)
}

fn moments(vs: &[FeatureVector], width: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = vs.len();
    let mut mu = DMatrix::zeros(width, 1);
    for v in vs {
        for (i, &x) in v.values.iter().enumerate() {
            mu[(i, 0)] += x;
        }
    }
    mu /= n as f64;
    let mut cov = DMatrix::zeros(width, width);
    for v in vs {
        let d = DMatrix::from_iterator(width, 1, v.values.iter().cloned()) - &mu;
        cov += &d * d.transpose();
    }
    cov /= (n - 1) as f64;
    for i in 0..width {
        cov[(i, i)] += COV_REG;
    }
    (mu, cov)
}

/// Symmetric PSD square root via eigendecomposition, clipping negative
/// eigenvalues at zero.
fn sqrtm_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let q = eig.eigenvectors;
    let mut d = DMatrix::zeros(m.nrows(), m.nrows());
    for i in 0..m.nrows() {
        d[(i, i)] = eig.eigenvalues[i].max(0.0).sqrt();
    }
    &q * d * q.transpose()
}

/// Frechet distance between the Gaussian moment fits of two corpora:
/// `||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2))`, with the product
/// square root evaluated as `sqrt(S1)^T S2 sqrt(S1)` for symmetry.
pub fn fid(reference: &[FeatureVector], generated: &[FeatureVector]) -> Result<f64> {
    let w1 = check_corpus(reference, "reference")?;
    let w2 = check_corpus(generated, "generated")?;
    if w1 != w2 || reference[0].kind != generated[0].kind {
        return Err(Error::ShapeMismatch {
            context: "fid corpora".into(),
            expected: format!("{:?} width {w1}", reference[0].kind),
            got: format!("{:?} width {w2}", generated[0].kind),
        });
    }
    let (mu1, s1) = moments(reference, w1);
    let (mu2, s2) = moments(generated, w1);
    let dmu = &mu1 - &mu2;
    let s1_half = sqrtm_psd(&s1);
    let inner = &s1_half * &s2 * &s1_half;
    let eig = nalgebra::SymmetricEigen::new((&inner + inner.transpose()) * 0.5);
    let tr_sqrt: f64 = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).sum();
    let val = dmu.norm_squared() + s1.trace() + s2.trace() - 2.0 * tr_sqrt;
    Ok(val.max(0.0))
}

/// Mean pairwise Euclidean distance over all unordered pairs.
pub fn motion_diversity(generated: &[FeatureVector]) -> Result<f64> {
    let width = check_corpus(generated, "generated")?;
    let n = generated.len();
    let mut acc = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let mut d2 = 0.0;
            for k in 0..width {
                let d = generated[i].values[k] - generated[j].values[k];
                d2 += d * d;
            }
            acc += d2.sqrt();
        }
    }
    Ok(acc / (n * (n - 1) / 2) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::FeatureKind;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fv(values: Vec<f64>) -> FeatureVector {
        FeatureVector { kind: FeatureKind::Kinetic, values }
    }

    fn gaussian_corpus(rng: &mut ChaCha8Rng, n: usize, mean: f64) -> Vec<FeatureVector> {
        (0..n)
            .map(|_| {
                let u1: f64 = rng.random_range(f64::EPSILON..1.0);
                let u2: f64 = rng.random_range(0.0..1.0);
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                fv(vec![mean + z])
            })
            .collect()
    }

    #[test]
    fn fid_self_distance_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<FeatureVector> = (0..50)
            .map(|_| fv((0..8).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let d = fid(&xs, &xs).unwrap();
        assert!(d < 1e-6, "self fid {d}");
    }

    #[test]
    fn fid_gaussian_shift_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = gaussian_corpus(&mut rng, 10_000, 0.0);
        let b = gaussian_corpus(&mut rng, 10_000, 1.0);
        let d = fid(&a, &b).unwrap();
        assert!((d - 1.0).abs() < 0.1, "fid {d}");
    }

    #[test]
    fn fid_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<FeatureVector> = (0..40)
            .map(|_| fv((0..5).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let b: Vec<FeatureVector> = (0..40)
            .map(|_| fv((0..5).map(|_| rng.random_range(0.0..2.0)).collect()))
            .collect();
        let d1 = fid(&a, &b).unwrap();
        let d2 = fid(&b, &a).unwrap();
        assert!((d1 - d2).abs() < 1e-9, "{d1} vs {d2}");
        assert!(d1 >= 0.0);
    }

    #[test]
    fn fid_rejects_tiny_corpora() {
        let a = vec![fv(vec![1.0])];
        assert!(matches!(fid(&a, &a), Err(Error::DegenerateCorpus(_))));
    }

    #[test]
    fn diversity_analytic_and_oracle() {
        assert_eq!(motion_diversity(&[fv(vec![1.0, 0.0]), fv(vec![1.0, 0.0])]).unwrap(), 0.0);
        let d = motion_diversity(&[fv(vec![0.0, 0.0]), fv(vec![2.0, 0.0])]).unwrap();
        assert_eq!(d, 2.0);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs: Vec<FeatureVector> = (0..50)
            .map(|_| fv((0..6).map(|_| rng.random_range(-3.0..3.0)).collect()))
            .collect();
        let got = motion_diversity(&xs).unwrap();
        // Independent re-accumulation in a different order.
        let mut acc = 0.0;
        let mut pairs = 0usize;
        for j in 0..xs.len() {
            for i in 0..j {
                acc += xs[i]
                    .values
                    .iter()
                    .zip(&xs[j].values)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                pairs += 1;
            }
        }
        assert!((got - acc / pairs as f64).abs() < 1e-9);
    }

    #[test]
    fn diversity_scales_linearly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<FeatureVector> = (0..20)
            .map(|_| fv((0..4).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let scaled: Vec<FeatureVector> = xs
            .iter()
            .map(|v| fv(v.values.iter().map(|x| x * 3.0).collect()))
            .collect();
        let d1 = motion_diversity(&xs).unwrap();
        let d2 = motion_diversity(&scaled).unwrap();
        assert!((d2 - 3.0 * d1).abs() < 1e-9);
    }
}
