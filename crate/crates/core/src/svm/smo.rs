//! Sequential minimal optimization for the C-SVC dual.
//!
//! Minimizes `f(alpha) = 1/2 alpha^T Q alpha - e^T alpha` subject to
//! `0 <= alpha <= C` and `y^T alpha = 0`, with `Q_ij = y_i y_j K(x_i, x_j)`.
//! Each step picks the maximal violating pair and solves the two-variable
//! subproblem analytically.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::{Kernel, SvmModel};
use crate::error::{Error, Result};

/// Curvature floor for non-positive-definite pairs.
const TAU: f64 = 1e-12;
/// Duals at or below this are dropped from the model.
const SUPPORT_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoConfig {
    pub cost: f64,
    /// Stop once the maximal KKT violation `m(alpha) - M(alpha)` drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SmoConfig {
    fn default() -> Self {
        Self {
            cost: 1.0,
            tolerance: 1e-6,
            max_iterations: 100_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SmoOutcome {
    pub model: SvmModel,
    /// Full dual vector over the training samples.
    pub alphas: Array1<f64>,
    pub iterations: usize,
    /// Dual objective `e^T alpha - 1/2 alpha^T Q alpha` after every iteration,
    /// starting with the value at `alpha = 0`.
    pub dual_objective: Vec<f64>,
}

fn dual_objective(alphas: &Array1<f64>, grad: &Array1<f64>) -> f64 {
    // with G = Q a - e: a^T Q a = a^T (G + e)
    alphas
        .iter()
        .zip(grad.iter())
        .map(|(a, g)| 0.5 * a * (1.0 - g))
        .sum()
}

/// Trains a binary SVM on the rows of `samples` with labels in `{-1, +1}`.
pub fn train_smo(
    samples: ArrayView2<'_, f64>,
    labels: ArrayView1<'_, f64>,
    kernel: Kernel,
    config: SmoConfig,
) -> Result<SmoOutcome> {
    let n = samples.nrows();
    if labels.len() != n {
        return Err(Error::shape("SMO labels", n, labels.len()));
    }
    if n < 2 {
        return Err(Error::InsufficientSamples(n));
    }
    if let Some(i) = labels.iter().position(|y| *y != 1.0 && *y != -1.0) {
        return Err(Error::Validation(format!("label {i} is {}, expected -1 or +1", labels[i])));
    }
    if !labels.iter().any(|y| *y > 0.0) || !labels.iter().any(|y| *y < 0.0) {
        return Err(Error::DegenerateLabels);
    }
    if !(config.cost > 0.0) {
        return Err(Error::Validation(format!("cost must be > 0, got {}", config.cost)));
    }
    let c = config.cost;
    let y = labels.to_owned();

    let mut q = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let v = y[i] * y[j] * kernel.eval(samples.row(i), samples.row(j))?;
            q[[i, j]] = v;
            q[[j, i]] = v;
        }
    }

    let mut alpha = Array1::<f64>::zeros(n);
    let mut grad = Array1::<f64>::from_elem(n, -1.0);
    let mut history = vec![0.0];
    let mut iterations = 0;

    loop {
        // maximal violating pair
        let mut gmax = f64::NEG_INFINITY;
        let mut gmin = f64::INFINITY;
        let mut pick_i = None;
        let mut pick_j = None;
        for t in 0..n {
            let v = -y[t] * grad[t];
            let up = (y[t] > 0.0 && alpha[t] < c) || (y[t] < 0.0 && alpha[t] > 0.0);
            let low = (y[t] > 0.0 && alpha[t] > 0.0) || (y[t] < 0.0 && alpha[t] < c);
            if up && v > gmax {
                gmax = v;
                pick_i = Some(t);
            }
            if low && v < gmin {
                gmin = v;
                pick_j = Some(t);
            }
        }
        let (i, j) = match (pick_i, pick_j) {
            (Some(i), Some(j)) if gmax - gmin >= config.tolerance => (i, j),
            _ => break,
        };
        if iterations >= config.max_iterations {
            return Err(Error::Convergence {
                solver: "SMO",
                iterations,
            });
        }

        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (q[[i, i]] + q[[j, j]] + 2.0 * q[[i, j]]).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (q[[i, i]] + q[[j, j]] - 2.0 * q[[i, j]]).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let di = alpha[i] - old_i;
        let dj = alpha[j] - old_j;
        for t in 0..n {
            grad[t] += q[[t, i]] * di + q[[t, j]] * dj;
        }
        iterations += 1;
        history.push(dual_objective(&alpha, &grad));
    }

    // bias from free support vectors, falling back to the feasible midpoint
    let mut upper = f64::INFINITY;
    let mut lower = f64::NEG_INFINITY;
    let mut free_sum = 0.0;
    let mut free = 0usize;
    for t in 0..n {
        let yg = y[t] * grad[t];
        let at_upper = alpha[t] >= c;
        let at_lower = alpha[t] <= 0.0;
        if at_upper {
            if y[t] < 0.0 {
                upper = upper.min(yg);
            } else {
                lower = lower.max(yg);
            }
        } else if at_lower {
            if y[t] > 0.0 {
                upper = upper.min(yg);
            } else {
                lower = lower.max(yg);
            }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    let rho = if free > 0 {
        free_sum / free as f64
    } else {
        0.5 * (upper + lower)
    };

    let support: Vec<usize> = (0..n).filter(|&t| alpha[t] > SUPPORT_THRESHOLD).collect();
    let dim = samples.ncols();
    let mut svs = Array2::zeros((support.len(), dim));
    for (row, &t) in support.iter().enumerate() {
        svs.row_mut(row).assign(&samples.row(t));
    }
    let duals = Array1::from_iter(support.iter().map(|&t| alpha[t]));
    let sv_labels = Array1::from_iter(support.iter().map(|&t| y[t]));
    let model = SvmModel::new(svs, duals, sv_labels, -rho, kernel)?;
    Ok(SmoOutcome {
        model,
        alphas: alpha,
        iterations,
        dual_objective: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svm::{decision, decision_grad, predict_class};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn kkt_ok(out: &SmoOutcome, labels: ArrayView1<'_, f64>, cost: f64) {
        assert!(out.alphas.iter().all(|a| *a >= 0.0 && *a <= cost));
        let balance: f64 = out.alphas.iter().zip(labels.iter()).map(|(a, y)| a * y).sum();
        assert!(balance.abs() < 1e-8, "sum alpha y = {balance}");
        for w in out.dual_objective.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "dual objective decreased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn two_point_max_margin() {
        let x = array![[1.0, 0.0], [-1.0, 0.0]];
        let y = array![1.0, -1.0];
        let out = train_smo(x.view(), y.view(), Kernel::Linear, SmoConfig::default()).unwrap();
        kkt_ok(&out, y.view(), 1.0);
        let w = decision_grad(&out.model, array![0.0, 0.0].view()).unwrap();
        assert_abs_diff_eq!(w[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(w[1], 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(out.model.bias(), 0.0, epsilon = 1e-6);
        for (row, label) in x.rows().into_iter().zip(y.iter()) {
            assert_eq!(predict_class(&out.model, row).unwrap(), *label);
        }
    }

    #[test]
    fn separable_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 20;
        let mut x = Array2::zeros((2 * n, 2));
        let mut y = Array1::zeros(2 * n);
        for i in 0..2 * n {
            let sign = if i < n { 1.0 } else { -1.0 };
            let e0: f64 = StandardNormal.sample(&mut rng);
            let e1: f64 = StandardNormal.sample(&mut rng);
            // centres 4 sigma apart, noise clipped to keep them separable
            x[[i, 0]] = sign * 2.0 + e0.clamp(-1.9, 1.9);
            x[[i, 1]] = e1;
            y[i] = sign;
        }
        let out = train_smo(x.view(), y.view(), Kernel::Linear, SmoConfig::default()).unwrap();
        kkt_ok(&out, y.view(), 1.0);
        for (row, label) in x.rows().into_iter().zip(y.iter()) {
            assert_eq!(predict_class(&out.model, row).unwrap(), *label);
        }
    }

    #[test]
    fn xor_with_rbf() {
        let x = array![[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]];
        let y = array![1.0, 1.0, -1.0, -1.0];
        let cfg = SmoConfig {
            cost: 10.0,
            ..SmoConfig::default()
        };
        let out = train_smo(x.view(), y.view(), Kernel::rbf(1.0).unwrap(), cfg).unwrap();
        kkt_ok(&out, y.view(), 10.0);
        for (row, label) in x.rows().into_iter().zip(y.iter()) {
            let a = decision(&out.model, row).unwrap();
            assert_eq!(a.signum(), *label);
        }
    }

    #[test]
    fn rejects_bad_labels() {
        let x = array![[0.0], [1.0]];
        assert!(matches!(
            train_smo(x.view(), array![1.0, 1.0].view(), Kernel::Linear, SmoConfig::default()),
            Err(Error::DegenerateLabels)
        ));
        assert!(train_smo(x.view(), array![1.0, 0.0].view(), Kernel::Linear, SmoConfig::default()).is_err());
        assert!(train_smo(x.view(), array![1.0].view(), Kernel::Linear, SmoConfig::default()).is_err());
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let x = array![[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]];
        let y = array![1.0, 1.0, -1.0, -1.0];
        let cfg = SmoConfig {
            cost: 10.0,
            tolerance: 1e-6,
            max_iterations: 1,
        };
        assert!(matches!(
            train_smo(x.view(), y.view(), Kernel::rbf(1.0).unwrap(), cfg),
            Err(Error::Convergence { .. })
        ));
    }
}
