//! PCA layer fitted on dense-layer activations.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::eigen::symmetric_eigen;
use crate::error::{Error, Result};

/// Unbiased covariance of the rows of `observations` (`R x D`, one sample
/// per row) together with the per-dimension mean.
pub fn covariance(observations: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let (samples, dim) = observations.dim();
    if samples < 2 {
        return Err(Error::InsufficientSamples(samples));
    }
    let mean = observations.mean_axis(Axis(0)).expect("samples > 0");
    let centered = &observations - &mean.view().insert_axis(Axis(0));
    let denom = (samples - 1) as f64;
    let mut cov = Array2::zeros((dim, dim));
    for i in 0..dim {
        let ci = centered.column(i);
        for j in i..dim {
            let v = ci.dot(&centered.column(j)) / denom;
            cov[[i, j]] = v;
            cov[[j, i]] = v;
        }
    }
    Ok((cov, mean))
}

/// Top-`count` eigenpairs of a symmetric matrix, descending.
pub fn sym_eig(matrix: ArrayView2<'_, f64>, count: usize) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = matrix.nrows();
    if count == 0 || count > n {
        return Err(Error::Validation(format!(
            "component count must satisfy 1 <= B <= {n}, got {count}"
        )));
    }
    let eig = symmetric_eigen(matrix)?;
    Ok((
        eig.values.slice(s![..count]).to_owned(),
        eig.vectors.slice(s![.., ..count]).to_owned(),
    ))
}

/// `p = V^T (q - u)` with `V` holding the leading `B` eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjector {
    mean: Array1<f64>,
    vectors: Array2<f64>,
    values: Array1<f64>,
}

impl PcaProjector {
    /// Assembles a projector from stored parts. `orthonormal_tol` bounds
    /// `max |V^T V - I|`; loaders use a looser bound than fits because the
    /// interchange format stores 32-bit floats.
    pub fn from_parts(
        mean: Array1<f64>,
        vectors: Array2<f64>,
        values: Array1<f64>,
        orthonormal_tol: f64,
    ) -> Result<Self> {
        let (dim, count) = vectors.dim();
        if mean.len() != dim {
            return Err(Error::shape("PCA mean", dim, mean.len()));
        }
        if values.len() != count {
            return Err(Error::shape("PCA eigenvalues", count, values.len()));
        }
        if count == 0 || count > dim {
            return Err(Error::Validation(format!(
                "PCA needs 1 <= B <= D_l, got B = {count}, D_l = {dim}"
            )));
        }
        for k in 1..count {
            if values[k] > values[k - 1] {
                return Err(Error::Integrity(format!(
                    "eigenvalues not descending at index {k}"
                )));
            }
        }
        let dev = orthonormality_error(vectors.view());
        if !(dev <= orthonormal_tol) {
            return Err(Error::Integrity(format!(
                "eigenvectors not orthonormal: max |V^T V - I| = {dev:e}"
            )));
        }
        Ok(Self { mean, vectors, values })
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    /// `V`, `D_l x B`.
    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn eigenvalues(&self) -> &Array1<f64> {
        &self.values
    }

    /// `B`
    pub fn components(&self) -> usize {
        self.vectors.ncols()
    }

    /// `D_l`
    pub fn input_dim(&self) -> usize {
        self.vectors.nrows()
    }
}

pub fn orthonormality_error(vectors: ArrayView2<'_, f64>) -> f64 {
    let gram = vectors.t().dot(&vectors);
    let n = gram.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[[i, j]] - target).abs());
        }
    }
    worst
}

/// Fits a `components`-dimensional projector to the rows of `observations`.
pub fn fit(observations: ArrayView2<'_, f64>, components: usize) -> Result<PcaProjector> {
    let dim = observations.ncols();
    if components == 0 || components > dim {
        return Err(Error::Validation(format!(
            "PCA needs 1 <= B <= D_l, got B = {components}, D_l = {dim}"
        )));
    }
    let (cov, mean) = covariance(observations)?;
    let (values, vectors) = sym_eig(cov.view(), components)?;
    Ok(PcaProjector { mean, vectors, values })
}

pub fn project(proj: &PcaProjector, q: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if q.len() != proj.input_dim() {
        return Err(Error::shape("PCA input", proj.input_dim(), q.len()));
    }
    let centered = &q - &proj.mean;
    Ok(proj.vectors.t().dot(&centered))
}

/// Normalized eigenvalues `100 * lambda_b / sum(lambda)`, in percent.
pub fn contribution_ratios(proj: &PcaProjector) -> Result<Array1<f64>> {
    let total: f64 = proj.values.sum();
    if total == 0.0 || proj.values.iter().all(|v| *v == 0.0) {
        return Err(Error::DegenerateSpectrum);
    }
    Ok(proj.values.mapv(|v| 100.0 * v / total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn two_points() -> Array2<f64> {
        array![[0.0, 0.0], [2.0, 2.0]]
    }

    #[test]
    fn covariance_two_points() {
        let (cov, mean) = covariance(two_points().view()).unwrap();
        assert_eq!(mean, array![1.0, 1.0]);
        assert_eq!(cov, array![[2.0, 2.0], [2.0, 2.0]]);
    }

    #[test]
    fn covariance_of_constant_rows_is_zero() {
        let obs = Array2::from_shape_fn((5, 3), |(_, j)| j as f64 + 0.5);
        let (cov, _) = covariance(obs.view()).unwrap();
        assert!(cov.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn covariance_needs_two_samples() {
        assert!(matches!(
            covariance(array![[1.0, 2.0]].view()),
            Err(Error::InsufficientSamples(1))
        ));
    }

    #[test]
    fn sym_eig_truncates() {
        let (vals, vecs) = sym_eig(array![[2.0, 2.0], [2.0, 2.0]].view(), 1).unwrap();
        assert_eq!(vals.len(), 1);
        assert_abs_diff_eq!(vals[0], 4.0, epsilon = 1e-14);
        let h = 0.5f64.sqrt();
        assert_abs_diff_eq!(vecs[[0, 0]], h, epsilon = 1e-14);
        assert_abs_diff_eq!(vecs[[1, 0]], h, epsilon = 1e-14);
    }

    #[test]
    fn fit_two_points_and_project() {
        let proj = fit(two_points().view(), 1).unwrap();
        assert_eq!(proj.mean(), &array![1.0, 1.0]);
        assert_abs_diff_eq!(proj.eigenvalues()[0], 4.0, epsilon = 1e-14);
        let h = 0.5f64.sqrt();
        assert_abs_diff_eq!(proj.vectors()[[0, 0]], h, epsilon = 1e-14);
        assert_abs_diff_eq!(proj.vectors()[[1, 0]], h, epsilon = 1e-14);

        let p = project(&proj, array![2.0, 2.0].view()).unwrap();
        assert_abs_diff_eq!(p[0], 2f64.sqrt(), epsilon = 1e-14);
        let origin = project(&proj, array![1.0, 1.0].view()).unwrap();
        assert_eq!(origin[0], 0.0);
    }

    #[test]
    fn fit_constant_data() {
        let obs = Array2::from_elem((4, 3), 2.5);
        let proj = fit(obs.view(), 2).unwrap();
        assert!(proj.eigenvalues().iter().all(|v| *v == 0.0));
        let p = project(&proj, array![2.5, 2.5, 2.5].view()).unwrap();
        assert!(p.iter().all(|v| *v == 0.0));
        assert!(matches!(contribution_ratios(&proj), Err(Error::DegenerateSpectrum)));
    }

    #[test]
    fn fit_rejects_too_many_components() {
        assert!(matches!(fit(two_points().view(), 3), Err(Error::Validation(_))));
    }

    #[test]
    fn identity_projector() {
        let proj =
            PcaProjector::from_parts(Array1::zeros(3), Array2::eye(3), array![3.0, 2.0, 1.0], 1e-12)
                .unwrap();
        let q = array![0.3, -1.0, 7.0];
        assert_eq!(project(&proj, q.view()).unwrap(), q);
        assert!(project(&proj, array![1.0].view()).is_err());
    }

    #[test]
    fn from_parts_rejects_bad_basis() {
        let v = array![[1.0, 1.0], [0.0, 1.0]];
        assert!(matches!(
            PcaProjector::from_parts(Array1::zeros(2), v, array![2.0, 1.0], 1e-6),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn ratios() {
        let mk = |vals: Array1<f64>| {
            let b = vals.len();
            let mut v = Array2::zeros((3, b));
            for k in 0..b {
                v[[k, k]] = 1.0;
            }
            PcaProjector::from_parts(Array1::zeros(3), v, vals, 1e-12).unwrap()
        };
        assert_eq!(contribution_ratios(&mk(array![3.0, 1.0, 0.0])).unwrap(), array![75.0, 25.0, 0.0]);
        assert_eq!(contribution_ratios(&mk(array![5.0])).unwrap(), array![100.0]);
        assert!(contribution_ratios(&mk(array![0.0, 0.0])).is_err());
    }
}
