//! Closed-form Jacobians of the dense head, the PCA layer and the SVM layer,
//! and their chain products down to each feature map `x^t`.
//!
//! Products are accumulated left to right, starting from the narrow end
//! (`V^T` with `B` rows, the SVM gradient row, or `I_C`), so intermediates
//! never exceed that row count. The prefix shared by all feature maps is
//! built once; only the final `diag(f'(delta_1)) W_1^t` factor differs per map.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::forward::forward_head;
use crate::pca::{project, PcaProjector};
use crate::svm::{decision, decision_grad, SvmModel};
use crate::types::{concat_features, Activation, DenseHead, FeatureStack, ForwardTrace};

/// `df(delta)/d delta` as a diagonal matrix.
pub fn activation_jacobian(activation: Activation, delta: ArrayView1<'_, f64>) -> Array2<f64> {
    Array2::from_diag(&delta.mapv(|z| activation.derivative(z)))
}

/// `dq_l / dq_{l-1} = diag(f'(delta_l)) W_l` for `l >= 2`.
pub fn dense_jacobian(head: &DenseHead, trace: &ForwardTrace, l: usize) -> Result<Array2<f64>> {
    if l < 2 {
        return Err(Error::Index {
            what: "dense Jacobian layer",
            index: l,
            valid: format!("2..={}", head.depth()),
        });
    }
    let delta = trace.pre_activation(l)?;
    let layer = head.layer(l)?;
    Ok(scale_rows(&layer.weight, &delta.mapv(|z| head.activation().derivative(z))))
}

/// Column block of `W_1` aligned with `x^t` (1-based `t`).
fn weight_block(head: &DenseHead, map_len: usize, t: usize) -> Result<ndarray::ArrayView2<'_, f64>> {
    let input = head.input_dim();
    if map_len == 0 || input % map_len != 0 {
        return Err(Error::shape("flatten block", format!("divisor of {input}"), map_len));
    }
    let maps = input / map_len;
    if t == 0 || t > maps {
        return Err(Error::Index {
            what: "feature map",
            index: t,
            valid: format!("1..={maps}"),
        });
    }
    let w1 = &head.layers()[0].weight;
    Ok(w1.slice(s![.., (t - 1) * map_len..t * map_len]))
}

/// `dq_1 / dx^t = diag(f'(delta_1)) W_1^t`, where each map has `map_len = M*N` entries.
pub fn flatten_jacobian(
    head: &DenseHead,
    trace: &ForwardTrace,
    map_len: usize,
    t: usize,
) -> Result<Array2<f64>> {
    let delta = trace.pre_activation(1)?;
    let block = weight_block(head, map_len, t)?;
    Ok(scale_rows(&block.to_owned(), &delta.mapv(|z| head.activation().derivative(z))))
}

/// `dp/dq_l = V^T`.
pub fn pca_jacobian(proj: &PcaProjector) -> Array2<f64> {
    proj.vectors().t().to_owned()
}

fn scale_rows(m: &Array2<f64>, d: &Array1<f64>) -> Array2<f64> {
    m * &d.view().insert_axis(Axis(1))
}

fn scale_cols(m: &Array2<f64>, d: &Array1<f64>) -> Array2<f64> {
    m * &d.view().insert_axis(Axis(0))
}

/// Multiplies `left` by `diag(f'(delta_j)) W_j` for `j = from, from-1, ..., 2`.
fn through_dense(head: &DenseHead, trace: &ForwardTrace, mut left: Array2<f64>, from: usize) -> Result<Array2<f64>> {
    let act = head.activation();
    for j in (2..=from).rev() {
        let d = trace.pre_activation(j)?.mapv(|z| act.derivative(z));
        left = scale_cols(&left, &d).dot(&head.layer(j)?.weight);
    }
    Ok(left)
}

/// Splits `left * diag(f'(delta_1)) W_1` into its per-map column blocks.
fn through_flatten(
    head: &DenseHead,
    trace: &ForwardTrace,
    left: Array2<f64>,
    stack: &FeatureStack,
) -> Result<Vec<Array2<f64>>> {
    let d1 = trace.pre_activation(1)?.mapv(|z| head.activation().derivative(z));
    let scaled = scale_cols(&left, &d1);
    (1..=stack.count())
        .map(|t| weight_block(head, stack.map_len(), t).map(|w| scaled.dot(&w)))
        .collect()
}

fn check_stack(head: &DenseHead, stack: &FeatureStack) -> Result<Array1<f64>> {
    let x = concat_features(stack);
    if x.len() != head.input_dim() {
        return Err(Error::shape(
            "feature stack vs head input D_0 = M*N*T",
            head.input_dim(),
            x.len(),
        ));
    }
    Ok(x)
}

fn check_pca_layer(head: &DenseHead, proj: &PcaProjector, l: usize) -> Result<()> {
    if l == 0 || l >= head.depth() {
        return Err(Error::LayerPosition {
            layer: l,
            depth: head.depth(),
        });
    }
    if proj.input_dim() != head.dim(l) {
        return Err(Error::shape("PCA input vs D_l", head.dim(l), proj.input_dim()));
    }
    Ok(())
}

/// Forward state at the PCA layer.
#[derive(Debug, Clone)]
pub struct PcaState {
    pub trace: ForwardTrace,
    /// `p = V^T (q_l - u)`
    pub features: Array1<f64>,
}

pub fn pca_state(head: &DenseHead, proj: &PcaProjector, stack: &FeatureStack, l: usize) -> Result<PcaState> {
    check_pca_layer(head, proj, l)?;
    let x = check_stack(head, stack)?;
    let trace = forward_head(head, x.view(), l)?;
    let features = project(proj, trace.activation(l)?.view())?;
    Ok(PcaState { trace, features })
}

fn chain_pca_from(head: &DenseHead, proj: &PcaProjector, stack: &FeatureStack, l: usize, trace: &ForwardTrace) -> Result<Vec<Array2<f64>>> {
    let prefix = through_dense(head, trace, pca_jacobian(proj), l)?;
    through_flatten(head, trace, prefix, stack)
}

/// `dp/dx^t` for every map, each `B x (M*N)`. Requires `1 <= l < L`.
pub fn chain_pca(head: &DenseHead, proj: &PcaProjector, stack: &FeatureStack, l: usize) -> Result<Vec<Array2<f64>>> {
    let state = pca_state(head, proj, stack, l)?;
    chain_pca_from(head, proj, stack, l, &state.trace)
}

fn check_svm(proj: &PcaProjector, model: &SvmModel) -> Result<()> {
    if model.dim() != proj.components() {
        return Err(Error::shape("SVM input vs PCA components B", proj.components(), model.dim()));
    }
    Ok(())
}

/// `da(p)/dx^t` for every map, each of length `M*N`: the SVM gradient row
/// times the corresponding [`chain_pca`] block.
pub fn chain_svm(
    head: &DenseHead,
    proj: &PcaProjector,
    model: &SvmModel,
    stack: &FeatureStack,
    l: usize,
) -> Result<Vec<Array1<f64>>> {
    check_svm(proj, model)?;
    let state = pca_state(head, proj, stack, l)?;
    let grad = decision_grad(model, state.features.view())?;
    let blocks = chain_pca_from(head, proj, stack, l, &state.trace)?;
    Ok(blocks.iter().map(|b| grad.dot(b)).collect())
}

/// `dy/dx^t` through the full head, each `C x (M*N)`.
pub fn chain_class(head: &DenseHead, stack: &FeatureStack) -> Result<Vec<Array2<f64>>> {
    let x = check_stack(head, stack)?;
    let trace = forward_head(head, x.view(), head.depth())?;
    let prefix = through_dense(head, &trace, Array2::eye(head.classes()), head.depth())?;
    through_flatten(head, &trace, prefix, stack)
}

/// Per-map Jacobians consumed by the CAM builders. Sections are optional so
/// that a bundle without PCA/SVM still yields conventional Grad-CAM.
#[derive(Debug, Clone, Default)]
pub struct JacobianBundle {
    /// `dp/dx^t`, `T` matrices of `B x (M*N)`.
    pub per_map_pca: Option<Vec<Array2<f64>>>,
    /// `da(p)/dx^t`, `T` rows of length `M*N`.
    pub per_map_svm: Option<Vec<Array1<f64>>>,
    /// `dy/dx^t`, `T` matrices of `C x (M*N)`.
    pub per_map_class: Option<Vec<Array2<f64>>>,
    pub pca_features: Option<Array1<f64>>,
    pub decision_value: Option<f64>,
}

/// Computes every Jacobian the available models allow.
pub fn compute_bundle(
    head: &DenseHead,
    pca: Option<(&PcaProjector, usize)>,
    model: Option<&SvmModel>,
    stack: &FeatureStack,
    with_class: bool,
) -> Result<JacobianBundle> {
    let mut bundle = JacobianBundle::default();
    if let Some((proj, l)) = pca {
        let state = pca_state(head, proj, stack, l)?;
        let blocks = chain_pca_from(head, proj, stack, l, &state.trace)?;
        if let Some(model) = model {
            check_svm(proj, model)?;
            let grad = decision_grad(model, state.features.view())?;
            bundle.per_map_svm = Some(blocks.iter().map(|b| grad.dot(b)).collect());
            bundle.decision_value = Some(decision(model, state.features.view())?);
        }
        bundle.per_map_pca = Some(blocks);
        bundle.pca_features = Some(state.features);
    } else if model.is_some() {
        return Err(Error::Validation("an SVM layer requires a PCA layer".into()));
    }
    if with_class {
        bundle.per_map_class = Some(chain_class(head, stack)?);
    }
    Ok(bundle)
}
