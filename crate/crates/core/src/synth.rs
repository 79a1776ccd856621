//! Seeded synthetic heads, feature stacks and labelled datasets.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::io::{Bundle, LabeledSamples};
use crate::types::{Activation, DenseHead, DenseLayer, FeatureStack};

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || scale * normal(rng))
}

/// A head with layer widths `dims = [D_0, ..., D_L]`. Weights are
/// `N(0, (1.5 / sqrt(fan_in))^2)`, biases `N(0, 0.1^2)`.
pub fn random_head<R: Rng>(rng: &mut R, dims: &[usize], activation: Activation) -> Result<DenseHead> {
    let layers = dims
        .windows(2)
        .map(|w| {
            let weight = gaussian_matrix(rng, w[1], w[0], 1.5 / (w[0] as f64).sqrt());
            let bias = Array1::from_shape_simple_fn(w[1], || 0.1 * normal(rng));
            DenseLayer::new(weight, bias)
        })
        .collect::<Result<Vec<_>>>()?;
    DenseHead::new(layers, activation)
}

/// `count` maps of `rows x cols` with entries uniform in `[0, 1)`.
pub fn random_stack<R: Rng>(rng: &mut R, rows: usize, cols: usize, count: usize) -> FeatureStack {
    let maps = (0..count)
        .map(|_| Array2::from_shape_simple_fn((rows, cols), || rng.random::<f64>()))
        .collect();
    FeatureStack::new(maps).expect("maps share a shape")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobConfig {
    pub rows: usize,
    pub cols: usize,
    pub maps: usize,
    pub train: usize,
    pub test: usize,
    pub noise: f64,
}

impl Default for BlobConfig {
    fn default() -> Self {
        Self {
            rows: 4,
            cols: 4,
            maps: 2,
            train: 200,
            test: 100,
            noise: 0.15,
        }
    }
}

/// One feature stack of the two-class blob problem. Class `+1` lights up a
/// bump in the upper-left of map 1, class `-1` a bump in the lower-right of
/// the last map; every pixel carries Gaussian noise.
pub fn blob_sample<R: Rng>(rng: &mut R, cfg: &BlobConfig, label: f64) -> FeatureStack {
    let (m, n) = (cfg.rows, cfg.cols);
    let (target, cr, cc) = if label > 0.0 {
        (0, 0.25 * (m - 1) as f64, 0.25 * (n - 1) as f64)
    } else {
        (cfg.maps - 1, 0.75 * (m - 1) as f64, 0.75 * (n - 1) as f64)
    };
    let width = 0.25 * m.max(n) as f64;
    let maps = (0..cfg.maps)
        .map(|t| {
            Array2::from_shape_fn((m, n), |(i, j)| {
                let bump = if t == target {
                    let d2 = (i as f64 - cr).powi(2) + (j as f64 - cc).powi(2);
                    (-d2 / (2.0 * width * width)).exp()
                } else {
                    0.0
                };
                0.2 + bump + cfg.noise * normal(rng)
            })
        })
        .collect();
    FeatureStack::new(maps).expect("maps share a shape")
}

/// Balanced, alternating-label samples as rows of concatenated features.
pub fn blob_samples<R: Rng>(rng: &mut R, cfg: &BlobConfig, count: usize) -> LabeledSamples {
    let d0 = cfg.rows * cfg.cols * cfg.maps;
    let mut features = Array2::zeros((count, d0));
    let labels = Array1::from_shape_fn(count, |i| if i % 2 == 0 { 1.0 } else { -1.0 });
    for (mut row, &y) in features.axis_iter_mut(Axis(0)).zip(labels.iter()) {
        let stack = blob_sample(rng, cfg, y);
        row.assign(&crate::types::concat_features(&stack));
    }
    LabeledSamples { features, labels }
}

/// A self-contained demo bundle: a random head `D_0 -> 16 -> 8 -> 2` over
/// the blob problem, with training and holdout sets and the first holdout
/// sample as the explained input.
pub fn demo_bundle(seed: u64, cfg: &BlobConfig, activation: Activation) -> Result<Bundle> {
    let mut rng = seeded_rng(seed);
    let d0 = cfg.rows * cfg.cols * cfg.maps;
    let head = random_head(&mut rng, &[d0, 16, 8, 2], activation)?;
    let training = blob_samples(&mut rng, cfg, cfg.train);
    let holdout = blob_samples(&mut rng, cfg, cfg.test);
    let first = holdout.features.row(0).to_vec();
    let features = FeatureStack::from_vector(&first, cfg.rows, cfg.cols, cfg.maps)?;
    Ok(Bundle {
        features,
        head,
        head_origin: Some("random".into()),
        training: Some(training),
        holdout: Some(holdout),
        pca: None,
        svm: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_reproducible() {
        let a = demo_bundle(7, &BlobConfig::default(), Activation::Relu).unwrap();
        let b = demo_bundle(7, &BlobConfig::default(), Activation::Relu).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, demo_bundle(8, &BlobConfig::default(), Activation::Relu).unwrap());
    }

    #[test]
    fn demo_shapes() {
        let b = demo_bundle(1, &BlobConfig::default(), Activation::Relu).unwrap();
        assert_eq!(b.head.dims(), vec![32, 16, 8, 2]);
        let train = b.training.unwrap();
        assert_eq!(train.features.dim(), (200, 32));
        assert_eq!(train.labels.iter().filter(|y| **y > 0.0).count(), 100);
        assert_eq!(b.holdout.unwrap().features.nrows(), 100);
    }
}
