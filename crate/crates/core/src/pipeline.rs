//! Fitting PCA and SVM layers onto a bundle's head.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::forward::forward_head;
use crate::io::{Bundle, LabeledSamples, PcaLayer, SvmLayer};
use crate::pca::{self, contribution_ratios, PcaProjector};
use crate::svm::{predict_class, train_smo, Kernel, SmoConfig, SvmModel};
use crate::types::DenseHead;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub layer: usize,
    pub components: usize,
    pub kernel: Kernel,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Percent of the retained variance carried by each component.
    pub contribution_ratios: Array1<f64>,
    pub train_accuracy: f64,
    pub holdout_accuracy: Option<f64>,
    pub iterations: usize,
    pub support_vectors: usize,
}

/// `q_l` for every row of `samples`, one row per sample.
pub fn layer_activations(head: &DenseHead, samples: ArrayView2<'_, f64>, l: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((samples.nrows(), head.dim(l)));
    for (row, mut dst) in samples.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        let trace = forward_head(head, row, l)?;
        dst.assign(trace.activation(l)?);
    }
    Ok(out)
}

/// PCA features `p` for every row of `samples`.
pub fn pca_features(head: &DenseHead, pca: &PcaLayer, samples: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let q = layer_activations(head, samples, pca.layer)?;
    let centered = &q - &pca.projector.mean().view().insert_axis(Axis(0));
    Ok(centered.dot(pca.projector.vectors()))
}

pub fn accuracy(head: &DenseHead, pca: &PcaLayer, model: &SvmModel, data: &LabeledSamples) -> Result<f64> {
    let p = pca_features(head, pca, data.features.view())?;
    let mut correct = 0usize;
    for (row, &y) in p.axis_iter(Axis(0)).zip(data.labels.iter()) {
        if predict_class(model, row)? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.labels.len().max(1) as f64)
}

/// Fits PCA on `q_l` of the training set, then an SVM on the projected
/// features, and stores both in `bundle`.
pub fn fit_bundle(bundle: &mut Bundle, cfg: &FitConfig) -> Result<FitReport> {
    let head = &bundle.head;
    if cfg.layer == 0 || cfg.layer >= head.depth() {
        return Err(Error::LayerPosition {
            layer: cfg.layer,
            depth: head.depth(),
        });
    }
    let training = bundle
        .training
        .as_ref()
        .ok_or_else(|| Error::Validation("fitting requires a training section in the bundle".into()))?;
    let q = layer_activations(head, training.features.view(), cfg.layer)?;
    let projector: PcaProjector = pca::fit(q.view(), cfg.components)?;
    let ratios = contribution_ratios(&projector)?;
    let layer = PcaLayer {
        layer: cfg.layer,
        projector,
    };
    let p = pca_features(head, &layer, training.features.view())?;
    let smo = SmoConfig {
        cost: cfg.cost,
        ..SmoConfig::default()
    };
    let outcome = train_smo(p.view(), training.labels.view(), cfg.kernel, smo)?;
    let train_accuracy = accuracy(head, &layer, &outcome.model, training)?;
    let holdout_accuracy = bundle
        .holdout
        .as_ref()
        .map(|h| accuracy(head, &layer, &outcome.model, h))
        .transpose()?;
    let report = FitReport {
        contribution_ratios: ratios,
        train_accuracy,
        holdout_accuracy,
        iterations: outcome.iterations,
        support_vectors: outcome.model.len(),
    };
    bundle.pca = Some(layer);
    bundle.svm = Some(SvmLayer {
        model: outcome.model,
        cost: Some(cfg.cost),
    });
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pca::project;
    use crate::synth::{demo_bundle, BlobConfig};
    use crate::types::Activation;

    #[test]
    fn batch_features_match_single_projection() {
        let mut b = demo_bundle(3, &BlobConfig::default(), Activation::Relu).unwrap();
        let cfg = FitConfig {
            layer: 1,
            components: 3,
            kernel: Kernel::Linear,
            cost: 1.0,
        };
        fit_bundle(&mut b, &cfg).unwrap();
        let pca = b.pca.as_ref().unwrap();
        let x = b.holdout.as_ref().unwrap().features.slice(ndarray::s![..3, ..]).to_owned();
        let batch = pca_features(&b.head, pca, x.view()).unwrap();
        for (i, row) in x.axis_iter(Axis(0)).enumerate() {
            let q = forward_head(&b.head, row, 1).unwrap();
            let p = project(&pca.projector, q.activation(1).unwrap().view()).unwrap();
            for (a, c) in batch.row(i).iter().zip(p.iter()) {
                assert!((a - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_must_precede_output() {
        let mut b = demo_bundle(3, &BlobConfig::default(), Activation::Relu).unwrap();
        let cfg = FitConfig {
            layer: 3,
            components: 3,
            kernel: Kernel::Linear,
            cost: 1.0,
        };
        assert!(matches!(fit_bundle(&mut b, &cfg), Err(Error::LayerPosition { .. })));
    }

    #[test]
    fn blobs_are_learnable() {
        let mut b = demo_bundle(11, &BlobConfig::default(), Activation::Relu).unwrap();
        let cfg = FitConfig {
            layer: 2,
            components: 3,
            kernel: Kernel::rbf(1.0).unwrap(),
            cost: 1.0,
        };
        let r = fit_bundle(&mut b, &cfg).unwrap();
        assert!(r.holdout_accuracy.unwrap() >= 0.95, "{r:?}");
        assert!((r.contribution_ratios.sum() - 100.0).abs() < 1e-9);
    }
}
