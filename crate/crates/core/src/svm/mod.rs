//! Binary SVM on PCA features: decision function, kernel gradients and the
//! support-vector effect function.

mod smo;

pub use smo::{train_smo, SmoConfig, SmoOutcome};

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn rbf(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::Validation(format!("RBF gamma must be > 0, got {gamma}")));
        }
        Ok(Kernel::Rbf { gamma })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Kernel::Linear => "linear",
            Kernel::Rbf { .. } => "rbf",
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match self {
            Kernel::Linear => None,
            Kernel::Rbf { gamma } => Some(*gamma),
        }
    }

    /// `K(p_i, p)`.
    pub fn eval(&self, sv: ArrayView1<'_, f64>, p: ArrayView1<'_, f64>) -> Result<f64> {
        check_len(sv, p)?;
        Ok(match self {
            Kernel::Linear => sv.dot(&p),
            Kernel::Rbf { gamma } => (-gamma * squared_distance(sv, p)).exp(),
        })
    }

    /// `dK(p_i, p)/dp` as a row of length `B`.
    pub fn grad(&self, sv: ArrayView1<'_, f64>, p: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        check_len(sv, p)?;
        Ok(match self {
            Kernel::Linear => sv.to_owned(),
            Kernel::Rbf { gamma } => {
                let diff = &sv - &p;
                let scale = 2.0 * gamma * (-gamma * diff.dot(&diff)).exp();
                diff * scale
            }
        })
    }
}

fn check_len(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape("kernel argument", a.len(), b.len()));
    }
    Ok(())
}

fn squared_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `a(p) = sum_i alpha_i c_i K(p_i, p) + g`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    support_vectors: Array2<f64>,
    duals: Array1<f64>,
    labels: Array1<f64>,
    bias: f64,
    kernel: Kernel,
}

impl SvmModel {
    /// `support_vectors` is `I x B`, one support vector per row.
    pub fn new(
        support_vectors: Array2<f64>,
        duals: Array1<f64>,
        labels: Array1<f64>,
        bias: f64,
        kernel: Kernel,
    ) -> Result<Self> {
        let count = support_vectors.nrows();
        if count == 0 || support_vectors.ncols() == 0 {
            return Err(Error::Validation("SVM needs at least one support vector".into()));
        }
        if duals.len() != count {
            return Err(Error::shape("SVM duals", count, duals.len()));
        }
        if labels.len() != count {
            return Err(Error::shape("SVM labels", count, labels.len()));
        }
        if let Some(i) = duals.iter().position(|a| !(*a >= 0.0)) {
            return Err(Error::Validation(format!("dual {i} is negative: {}", duals[i])));
        }
        if let Some(i) = labels.iter().position(|c| *c != 1.0 && *c != -1.0) {
            return Err(Error::Validation(format!("label {i} is {}, expected -1 or +1", labels[i])));
        }
        if !bias.is_finite() {
            return Err(Error::Validation("SVM bias is not finite".into()));
        }
        if let Kernel::Rbf { gamma } = kernel {
            Kernel::rbf(gamma)?;
        }
        Ok(Self {
            support_vectors,
            duals,
            labels,
            bias,
            kernel,
        })
    }

    pub fn support_vectors(&self) -> &Array2<f64> {
        &self.support_vectors
    }

    pub fn duals(&self) -> &Array1<f64> {
        &self.duals
    }

    pub fn labels(&self) -> &Array1<f64> {
        &self.labels
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    /// `I`
    pub fn len(&self) -> usize {
        self.duals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.duals.is_empty()
    }

    /// `B`
    pub fn dim(&self) -> usize {
        self.support_vectors.ncols()
    }

    /// `alpha_i * c_i` for each support vector.
    pub fn coefficients(&self) -> impl Iterator<Item = f64> + '_ {
        self.duals.iter().zip(self.labels.iter()).map(|(a, c)| a * c)
    }

    /// `w = sum_i alpha_i c_i p_i`, the primal weights of a linear model.
    pub fn primal_weights(&self) -> Array1<f64> {
        let mut w = Array1::zeros(self.dim());
        for (coef, sv) in self.coefficients().zip(self.support_vectors.rows()) {
            w.scaled_add(coef, &sv);
        }
        w
    }

    fn check_input(&self, p: ArrayView1<'_, f64>) -> Result<()> {
        if p.len() != self.dim() {
            return Err(Error::shape("SVM input", self.dim(), p.len()));
        }
        Ok(())
    }
}

pub fn kernel_eval(model: &SvmModel, sv: ArrayView1<'_, f64>, p: ArrayView1<'_, f64>) -> Result<f64> {
    model.kernel.eval(sv, p)
}

pub fn kernel_grad(
    model: &SvmModel,
    sv: ArrayView1<'_, f64>,
    p: ArrayView1<'_, f64>,
) -> Result<Array1<f64>> {
    model.kernel.grad(sv, p)
}

pub fn decision(model: &SvmModel, p: ArrayView1<'_, f64>) -> Result<f64> {
    model.check_input(p)?;
    let mut acc = 0.0;
    for (coef, sv) in model.coefficients().zip(model.support_vectors.rows()) {
        acc += coef * model.kernel.eval(sv, p)?;
    }
    Ok(acc + model.bias)
}

/// Predicted class: `+1` for `a(p) > 0`, `-1` otherwise.
pub fn predict_class(model: &SvmModel, p: ArrayView1<'_, f64>) -> Result<f64> {
    Ok(if decision(model, p)? > 0.0 { 1.0 } else { -1.0 })
}

/// `da(p)/dp = sum_i alpha_i c_i dK(p_i, p)/dp`.
pub fn decision_grad(model: &SvmModel, p: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    model.check_input(p)?;
    if model.kernel == Kernel::Linear {
        return Ok(model.primal_weights());
    }
    let mut grad = Array1::zeros(model.dim());
    for (coef, sv) in model.coefficients().zip(model.support_vectors.rows()) {
        grad.scaled_add(coef, &model.kernel.grad(sv, p)?);
    }
    Ok(grad)
}

/// Magnitude of an RBF support vector's kernel gradient as a function of its
/// distance `d` to the input: `2 gamma exp(-gamma d^2) d`.
pub fn effect(kernel: Kernel, distance: f64) -> Result<f64> {
    let gamma = match kernel {
        Kernel::Rbf { gamma } => gamma,
        Kernel::Linear => return Err(Error::UnsupportedKernel),
    };
    if !(distance >= 0.0) {
        return Err(Error::Validation(format!("distance must be >= 0, got {distance}")));
    }
    Ok(2.0 * gamma * (-gamma * distance * distance).exp() * distance)
}

/// Distance maximizing [`effect`]: `1 / sqrt(2 gamma)`.
pub fn effect_argmax(gamma: f64) -> f64 {
    1.0 / (2.0 * gamma).sqrt()
}

/// Maximum of [`effect`]: `sqrt(2 gamma) exp(-1/2)`.
pub fn effect_max(gamma: f64) -> f64 {
    (2.0 * gamma).sqrt() * (-0.5f64).exp()
}
