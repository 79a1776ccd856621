//! Central finite-difference Jacobians, used to check the closed forms.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::types::JacobianMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdConfig {
    pub step: f64,
    pub tolerance: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-5,
        }
    }
}

impl FdConfig {
    pub fn new(step: f64, tolerance: f64) -> Result<Self> {
        if !(step > 0.0) || !(tolerance > 0.0) {
            return Err(Error::Validation(format!(
                "finite-difference step and tolerance must be > 0, got h = {step}, tol = {tolerance}"
            )));
        }
        Ok(Self { step, tolerance })
    }
}

/// `J[h, z] = (f(x0 + h e_z)[h] - f(x0 - h e_z)[h]) / 2h`.
pub fn fd_jacobian<F>(mut func: F, x0: ArrayView1<'_, f64>, cfg: &FdConfig) -> Result<JacobianMatrix>
where
    F: FnMut(ArrayView1<'_, f64>) -> Result<Array1<f64>>,
{
    let h = cfg.step;
    let mut columns: Vec<Array1<f64>> = Vec::with_capacity(x0.len());
    let mut probe = x0.to_owned();
    for z in 0..x0.len() {
        let orig = probe[z];
        probe[z] = orig + h;
        let plus = func(probe.view())?;
        probe[z] = orig - h;
        let minus = func(probe.view())?;
        probe[z] = orig;
        if plus.len() != minus.len() {
            return Err(Error::shape("finite-difference output", plus.len(), minus.len()));
        }
        let col = (&plus - &minus) / (2.0 * h);
        if let Some(out) = col.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { output: out, input: z });
        }
        columns.push(col);
    }
    let rows = columns.first().map_or(0, |c| c.len());
    let mut values = Array2::zeros((rows, x0.len()));
    for (z, col) in columns.iter().enumerate() {
        if col.len() != rows {
            return Err(Error::shape("finite-difference output", rows, col.len()));
        }
        values.column_mut(z).assign(col);
    }
    Ok(JacobianMatrix::new(values, "f", "x"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub max_rel_err: f64,
    pub worst_index: (usize, usize),
    pub pass: bool,
}

/// Largest `|c - f| / max(1e-12, |c|, |f|)` over all entries.
pub fn compare(closed: &JacobianMatrix, fd: &JacobianMatrix, tolerance: f64) -> Result<Comparison> {
    if closed.values.dim() != fd.values.dim() {
        return Err(Error::shape(
            "Jacobian comparison",
            format!("{:?}", closed.values.dim()),
            format!("{:?}", fd.values.dim()),
        ));
    }
    let mut worst = 0.0f64;
    let mut worst_index = (0, 0);
    for ((idx, c), f) in closed.values.indexed_iter().zip(fd.values.iter()) {
        let err = (c - f).abs() / 1e-12f64.max(c.abs()).max(f.abs());
        if err > worst || err.is_nan() {
            worst = err;
            worst_index = idx;
            if err.is_nan() {
                break;
            }
        }
    }
    Ok(Comparison {
        max_rel_err: worst,
        worst_index,
        pass: worst <= tolerance,
    })
}
