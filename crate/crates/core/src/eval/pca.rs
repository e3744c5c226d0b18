//! Principal component analysis of attention matrices: flatten each sample,
//! center, and read principal axes off the singular value decomposition.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::EvalError;

/// Components with a singular value below this fraction of the largest are
/// treated as numerical noise and dropped.
const COMPONENT_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaResult {
    /// Principal axes, one flattened matrix per component, unit norm with a
    /// positive-first-significant-entry sign convention.
    pub components: Vec<Vec<f64>>,
    /// Fraction of total variance per component: non-increasing, in [0, 1],
    /// summing to at most 1.
    pub explained_variance_ratio: Vec<f64>,
    /// Mean of the flattened samples.
    pub mean: Vec<f64>,
}

/// PCA over a set of equally-shaped attention matrices.
pub fn pca_attention(samples: &[DMatrix<f64>]) -> Result<PcaResult, EvalError> {
    if samples.len() < 2 {
        return Err(EvalError::TooFewSamples {
            need: 2,
            got: samples.len(),
        });
    }
    let d = samples[0].nrows() * samples[0].ncols();
    let s = samples.len();
    for m in samples {
        if m.nrows() * m.ncols() != d {
            return Err(EvalError::Shape(
                "all attention matrices must share a shape".to_string(),
            ));
        }
    }

    let mut mean = vec![0.0; d];
    for m in samples {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                mean[i * m.ncols() + j] += m[(i, j)] / s as f64;
            }
        }
    }
    // Row-major flattening of each centered sample.
    let mut x = DMatrix::zeros(s, d);
    for (r, m) in samples.iter().enumerate() {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let k = i * m.ncols() + j;
                x[(r, k)] = m[(i, j)] - mean[k];
            }
        }
    }

    let svd = x.svd(false, true);
    let v_t = svd.v_t.expect("SVD with V^T requested");
    let sigma = &svd.singular_values;
    let total: f64 = sigma.iter().map(|v| v * v).sum();
    let sigma_max = sigma.iter().fold(0.0f64, |a, &b| a.max(b));

    let mut components = Vec::new();
    let mut ratios = Vec::new();
    if total > 0.0 && sigma_max > 0.0 {
        let mut order: Vec<usize> = (0..sigma.len()).collect();
        order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
        for &k in &order {
            if sigma[k] <= COMPONENT_CUTOFF * sigma_max {
                continue;
            }
            let mut comp: Vec<f64> = (0..d).map(|c| v_t[(k, c)]).collect();
            if let Some(first) = comp.iter().find(|v| v.abs() > 1e-10) {
                if *first < 0.0 {
                    comp.iter_mut().for_each(|v| *v = -*v);
                }
            }
            components.push(comp);
            ratios.push(sigma[k] * sigma[k] / total);
        }
    }

    Ok(PcaResult {
        components,
        explained_variance_ratio: ratios,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, f)
    }

    #[test]
    fn identical_samples_have_no_components() {
        let m = mat(3, 3, |i, j| (i * 3 + j) as f64);
        let result = pca_attention(&[m.clone(), m.clone(), m]).unwrap();
        assert!(result.components.is_empty());
        assert!(result.explained_variance_ratio.is_empty());
    }

    #[test]
    fn rank_one_variation_concentrates_variance() {
        // Samples a + t*b for varying t: all variance lies on one axis.
        let a = mat(3, 3, |i, j| (i + j) as f64 * 0.1);
        let b = mat(3, 3, |i, j| ((i * 3 + j) as f64 * 0.7).sin());
        let samples: Vec<DMatrix<f64>> =
            (0..10).map(|t| &a + &b * (t as f64 * 0.3 - 1.0)).collect();
        let result = pca_attention(&samples).unwrap();
        assert!(result.explained_variance_ratio[0] >= 0.999);
    }

    #[test]
    fn ratios_non_increasing_and_sum_at_most_one() {
        let samples: Vec<DMatrix<f64>> = (0..8)
            .map(|t| mat(4, 4, |i, j| ((i * 4 + j + t) as f64 * 0.37).sin()))
            .collect();
        let result = pca_attention(&samples).unwrap();
        let r = &result.explained_variance_ratio;
        for w in r.windows(2) {
            assert!(w[0] >= w[1] - 1e-12);
        }
        let sum: f64 = r.iter().sum();
        assert!(sum <= 1.0 + 1e-9);
        for &v in r {
            assert!((0.0..=1.0 + 1e-12).contains(&v));
        }
    }

    #[test]
    fn full_reconstruction_recovers_centered_data() {
        let samples: Vec<DMatrix<f64>> = (0..6)
            .map(|t| mat(3, 3, |i, j| ((i * 3 + j) as f64 + t as f64 * 1.7).cos()))
            .collect();
        let result = pca_attention(&samples).unwrap();
        // Project each centered sample onto all components and rebuild.
        for m in &samples {
            let flat: Vec<f64> = (0..3)
                .flat_map(|i| (0..3).map(move |j| (i, j)))
                .map(|(i, j)| m[(i, j)])
                .collect();
            let centered: Vec<f64> = flat
                .iter()
                .zip(&result.mean)
                .map(|(v, mu)| v - mu)
                .collect();
            let mut rebuilt = vec![0.0; centered.len()];
            for comp in &result.components {
                let coeff: f64 = centered.iter().zip(comp).map(|(x, c)| x * c).sum();
                for (r, c) in rebuilt.iter_mut().zip(comp) {
                    *r += coeff * c;
                }
            }
            for (a, b) in centered.iter().zip(&rebuilt) {
                assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn fewer_than_two_samples_rejected() {
        let m = mat(2, 2, |_, _| 1.0);
        assert!(matches!(
            pca_attention(&[m]),
            Err(EvalError::TooFewSamples { .. })
        ));
    }
}
