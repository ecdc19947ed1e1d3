//! Fréchet distance between Gaussian fits of feature embeddings.
//!
//! `d² = ‖μ_A - μ_B‖² + Tr(Σ_A + Σ_B - 2 (Σ_A Σ_B)^{1/2})`, the usual FID
//! formula. Covariance math runs in f64 regardless of the feature scalar
//! type; covariances are regularized with `+εI` before the matrix square
//! root.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Covariance regularizer.
const COV_EPS: f64 = 1e-6;
/// Largest tolerated imaginary residue of the square root, expressed through
/// the negative eigenvalues of the symmetrized product.
const IMAG_TOL: f64 = 1e-3;

/// N×dim feature matrix with its extractor provenance.
#[derive(Debug, Clone)]
pub struct FeatureEmbedding<F: Scalar> {
    pub extractor_id: String,
    pub features: Array2<F>,
}

impl<F: Scalar> FeatureEmbedding<F> {
    pub fn new(extractor_id: impl Into<String>, features: Array2<F>) -> Result<Self> {
        for &v in features.iter() {
            if !v.is_finite() {
                return Err(Error::Numeric("feature embedding contains non-finite rows".into()));
            }
        }
        Ok(Self { extractor_id: extractor_id.into(), features })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    fn mean_f64(&self) -> Vec<f64> {
        let n = self.len() as f64;
        (0..self.dim())
            .map(|j| self.features.column(j).iter().map(|v| v.as_f64()).sum::<f64>() / n)
            .collect()
    }

    /// Unbiased covariance in f64 with `+εI` regularization.
    fn covariance_f64(&self, mean: &[f64]) -> Array2<f64> {
        let n = self.len();
        let d = self.dim();
        let mut cov = Array2::<f64>::zeros((d, d));
        for row in self.features.rows() {
            let centered: Vec<f64> = row
                .iter()
                .enumerate()
                .map(|(j, v)| v.as_f64() - mean[j])
                .collect();
            for i in 0..d {
                for j in i..d {
                    cov[[i, j]] += centered[i] * centered[j];
                }
            }
        }
        let denom = (n - 1) as f64;
        for i in 0..d {
            for j in i..d {
                cov[[i, j]] /= denom;
                cov[[j, i]] = cov[[i, j]];
            }
            cov[[i, i]] += COV_EPS;
        }
        cov
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Returns eigenvalues and the orthogonal matrix of column eigenvectors.
/// Deterministic and accurate to near machine precision for the small
/// matrices used here (feature dims ≤ a few hundred).
pub(crate) fn eigh(a: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension("eigh requires a square matrix".into()));
    }
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(n);
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + frobenius(&m)) {
            let eigvals = (0..n).map(|i| m[[i, i]]).collect();
            return Ok((eigvals, v));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    Err(Error::Numeric("Jacobi eigendecomposition did not converge".into()))
}

fn frobenius(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Symmetric PSD square root via eigendecomposition.
fn sqrtm_psd(a: &Array2<f64>) -> Result<Array2<f64>> {
    let (vals, vecs) = eigh(a)?;
    let n = vals.len();
    let mut out = Array2::<f64>::zeros((n, n));
    for k in 0..n {
        let s = vals[k].max(0.0).sqrt();
        for i in 0..n {
            for j in 0..n {
                out[[i, j]] += s * vecs[[i, k]] * vecs[[j, k]];
            }
        }
    }
    Ok(out)
}

/// Squared Fréchet distance between the Gaussian fits of two embeddings.
pub fn frechet_distance<F: Scalar>(
    a: &FeatureEmbedding<F>,
    b: &FeatureEmbedding<F>,
) -> Result<F> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!(
            "feature dims differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Empty("frechet_distance needs at least 2 samples per set".into()));
    }
    let mu_a = a.mean_f64();
    let mu_b = b.mean_f64();
    let cov_a = a.covariance_f64(&mu_a);
    let cov_b = b.covariance_f64(&mu_b);

    let mean_sq: f64 = mu_a
        .iter()
        .zip(mu_b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();

    // Tr((Σa Σb)^{1/2}) computed through the symmetric form
    // (Σa^{1/2} Σb Σa^{1/2})^{1/2}, which shares its spectrum.
    let sqrt_a = sqrtm_psd(&cov_a)?;
    let mut inner = sqrt_a.dot(&cov_b).dot(&sqrt_a);
    // Symmetrize rounding noise before the eigensolve.
    for i in 0..inner.nrows() {
        for j in (i + 1)..inner.ncols() {
            let avg = 0.5 * (inner[[i, j]] + inner[[j, i]]);
            inner[[i, j]] = avg;
            inner[[j, i]] = avg;
        }
    }
    let (vals, _) = eigh(&inner)?;
    let mut tr_sqrt = 0.0;
    for &l in &vals {
        if l < 0.0 {
            // A negative eigenvalue would put an imaginary component of
            // magnitude sqrt(-l) into the square root; tolerate only rounding
            // noise.
            if (-l).sqrt() >= IMAG_TOL {
                return Err(Error::Numeric(format!(
                    "matrix square root has imaginary residue sqrt({:.3e})",
                    -l
                )));
            }
        } else {
            tr_sqrt += l.sqrt();
        }
    }

    let tr_a: f64 = (0..cov_a.nrows()).map(|i| cov_a[[i, i]]).sum();
    let tr_b: f64 = (0..cov_b.nrows()).map(|i| cov_b[[i, i]]).sum();
    let mut d = mean_sq + tr_a + tr_b - 2.0 * tr_sqrt;
    if d < 0.0 {
        if d < -IMAG_TOL {
            return Err(Error::Numeric(format!("Fréchet distance {d:.3e} below regularization slack")));
        }
        d = 0.0;
    }
    Ok(F::of_f64(d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn embedding(features: Array2<f64>) -> FeatureEmbedding<f64> {
        FeatureEmbedding::new("test", features).unwrap()
    }

    fn random_embedding(n: usize, d: usize, shift: f64, seed: u64) -> FeatureEmbedding<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        embedding(Array2::from_shape_simple_fn((n, d), || shift + rng.gen::<f64>()))
    }

    #[test]
    fn identical_sets_give_near_zero() {
        let a = random_embedding(20, 8, 0.0, 1);
        let d: f64 = frechet_distance(&a, &a).unwrap();
        assert!(d.abs() <= 1e-4, "d(A,A) = {d}");
    }

    #[test]
    fn scalar_case_hand_computed() {
        // dim 1: A = {0,0}, B = {1,1}: means differ by 1, variances ~0.
        let a = embedding(array![[0.0], [0.0]]);
        let b = embedding(array![[1.0], [1.0]]);
        let d: f64 = frechet_distance(&a, &b).unwrap();
        assert!((d - 1.0).abs() < 1e-4, "scalar Fréchet {d}");
    }

    #[test]
    fn diagonal_covariances_match_closed_form() {
        // Build sets with exactly known diagonal sample covariance:
        // four points at ±s along each axis give variance 2s²/3 (ddof 1).
        let a = embedding(array![[1.0, 0.0], [-1.0, 0.0], [0.0, 2.0], [0.0, -2.0]]);
        let b = embedding(array![[3.0, 0.0], [-3.0, 0.0], [0.0, 1.0], [0.0, -1.0]]);
        let d: f64 = frechet_distance(&a, &b).unwrap();

        // Closed form for commuting (diagonal) covariances:
        // sum_i (sqrt(va_i) - sqrt(vb_i))^2, with the same +eps regularizer.
        let va = [2.0 / 3.0 + 1e-6, 8.0 / 3.0 + 1e-6];
        let vb = [6.0 + 1e-6, 2.0 / 3.0 + 1e-6];
        let expect: f64 = va
            .iter()
            .zip(vb.iter())
            .map(|(x, y): (&f64, &f64)| (x.sqrt() - y.sqrt()).powi(2))
            .sum();
        assert!((d - expect).abs() < 1e-6, "{d} vs {expect}");
    }

    #[test]
    fn dim_mismatch_rejected() {
        let a = random_embedding(5, 2, 0.0, 2);
        let b = random_embedding(5, 3, 0.0, 3);
        assert!(matches!(frechet_distance(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn symmetric_and_nonnegative() {
        let a = random_embedding(30, 6, 0.0, 4);
        let b = random_embedding(25, 6, 0.7, 5);
        let ab: f64 = frechet_distance(&a, &b).unwrap();
        let ba: f64 = frechet_distance(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-9, "asymmetry {}", (ab - ba).abs());
        assert!(ab >= 0.0);
    }

    #[test]
    fn unsquared_distance_satisfies_triangle_inequality() {
        // The embedding-space Fréchet (Wasserstein-2) distance is the square
        // root of what this function returns.
        for seed in 0..5u64 {
            let a = random_embedding(20, 4, 0.0, 10 + seed);
            let b = random_embedding(22, 4, 0.5, 20 + seed);
            let c = random_embedding(24, 4, 1.1, 30 + seed);
            let dab = frechet_distance::<f64>(&a, &b).unwrap().sqrt();
            let dac = frechet_distance::<f64>(&a, &c).unwrap().sqrt();
            let dcb = frechet_distance::<f64>(&c, &b).unwrap().sqrt();
            assert!(dab <= dac + dcb + 1e-3, "{dab} > {dac} + {dcb}");
        }
    }

    #[test]
    fn eigh_recovers_known_spectrum() {
        let m = array![[2.0, 1.0], [1.0, 2.0]];
        let (mut vals, vecs) = eigh(&m).unwrap();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((vals[0] - 1.0).abs() < 1e-12);
        assert!((vals[1] - 3.0).abs() < 1e-12);
        // Orthogonality.
        let vtv = vecs.t().dot(&vecs);
        assert!((vtv[[0, 0]] - 1.0).abs() < 1e-12);
        assert!(vtv[[0, 1]].abs() < 1e-12);
    }
}
