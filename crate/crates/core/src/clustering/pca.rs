use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Fitted principal-component basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionModel<T> {
    pub kind: String,
    pub mean: Vec<T>,
    /// One unit-length loading vector per kept component.
    pub components: Vec<Vec<T>>,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

impl<T: Scalar> ReductionModel<T> {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn transform(&self, x: &FeatureMatrix<T>) -> Result<FeatureMatrix<T>> {
        if x.n_features() != self.mean.len() {
            return Err(Error::invalid(format!(
                "model expects {} features, got {}",
                self.mean.len(),
                x.n_features()
            )));
        }
        let mut out = Vec::with_capacity(x.n_rows() * self.n_components());
        for row in x.rows() {
            for comp in &self.components {
                out.push(
                    row.iter()
                        .zip(&self.mean)
                        .zip(comp)
                        .map(|((&v, &m), &c)| (v - m) * c)
                        .sum(),
                );
            }
        }
        FeatureMatrix::from_flat(x.crown_ids().to_vec(), out, self.n_components(), x.source().clone())
    }

    pub fn inverse_transform(&self, z: &FeatureMatrix<T>) -> Result<FeatureMatrix<T>> {
        if z.n_features() != self.n_components() {
            return Err(Error::invalid("component count mismatch"));
        }
        let mut out = Vec::with_capacity(z.n_rows() * self.mean.len());
        for row in z.rows() {
            for (f, &m) in self.mean.iter().enumerate() {
                out.push(m + row.iter().zip(&self.components).map(|(&s, c)| s * c[f]).sum());
            }
        }
        FeatureMatrix::from_flat(z.crown_ids().to_vec(), out, self.mean.len(), z.source().clone())
    }
}

/// Eigenpairs of the sample covariance, largest first. Uses the n × n Gram
/// matrix when there are fewer samples than features.
fn covariance_eigen(centered: &DMatrix<f64>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (n, d) = centered.shape();
    let denom = (n - 1) as f64;
    let (values, vectors) = if d <= n {
        let cov = centered.transpose() * centered / denom;
        let eig = SymmetricEigen::new(cov);
        let vecs: Vec<Vec<f64>> = (0..d).map(|j| eig.eigenvectors.column(j).iter().copied().collect()).collect();
        (eig.eigenvalues.iter().copied().collect::<Vec<_>>(), vecs)
    } else {
        let gram = centered * centered.transpose() / denom;
        let eig = SymmetricEigen::new(gram);
        let mut vecs = Vec::with_capacity(n);
        for j in 0..n {
            let v = centered.transpose() * eig.eigenvectors.column(j);
            let norm = v.norm();
            vecs.push(if norm > 0.0 {
                v.iter().map(|x| x / norm).collect()
            } else {
                vec![0.0; d]
            });
        }
        (eig.eigenvalues.iter().copied().collect(), vecs)
    };
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    (
        order.iter().map(|&i| values[i].max(0.0)).collect(),
        order.iter().map(|&i| vectors[i].clone()).collect(),
    )
}

/// Center, eigendecompose the covariance (divisor n − 1) and keep the fewest
/// components whose cumulative explained variance reaches `variance_target`.
/// Each component's largest-magnitude loading is made positive.
pub fn pca_fit_transform<T: Scalar>(
    features: &FeatureMatrix<T>,
    variance_target: f64,
) -> Result<(ReductionModel<T>, FeatureMatrix<T>)> {
    let (n, d) = (features.n_rows(), features.n_features());
    if n < 2 {
        return Err(Error::invalid("PCA needs at least two rows"));
    }
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(Error::invalid(format!(
            "variance_target must lie in (0, 1], got {variance_target}"
        )));
    }
    let x = DMatrix::from_row_iterator(n, d, features.data().iter().map(|v| v.to_f64_lossy()));
    let mean: Vec<f64> = (0..d).map(|j| x.column(j).mean()).collect();
    let mut centered = x;
    for j in 0..d {
        centered.column_mut(j).add_scalar_mut(-mean[j]);
    }
    let total: f64 = centered.iter().map(|v| v * v).sum::<f64>() / (n - 1) as f64;
    let scale: f64 = 1.0 + mean.iter().map(|m| m * m).sum::<f64>();
    if !(total > 1e-24 * scale) {
        return Err(Error::DegenerateFeatures("zero variance in every feature".into()));
    }
    let (values, vectors) = covariance_eigen(&centered);
    let ratio: Vec<f64> = values.iter().map(|v| v / total).collect();
    let mut keep = 0;
    let mut cum = 0.0;
    for r in &ratio {
        keep += 1;
        cum += r;
        if cum >= variance_target - 1e-12 {
            break;
        }
    }
    let components: Vec<Vec<T>> = vectors[..keep]
        .iter()
        .map(|v| {
            let mut big = 0;
            for (i, x) in v.iter().enumerate() {
                if x.abs() > v[big].abs() {
                    big = i;
                }
            }
            let sign = if v[big] < 0.0 { -1.0 } else { 1.0 };
            v.iter().map(|&x| T::from_f64_lossy(sign * x)).collect()
        })
        .collect();
    let model = ReductionModel {
        kind: "pca".into(),
        mean: mean.into_iter().map(T::from_f64_lossy).collect(),
        components,
        explained_variance: values[..keep].to_vec(),
        explained_variance_ratio: ratio[..keep].to_vec(),
    };
    let reduced = model.transform(features)?;
    Ok((model, reduced))
}
