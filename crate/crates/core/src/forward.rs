//! Dense-head forward pass.

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};
use crate::types::{DenseHead, ForwardTrace};

/// Logistic function `(1 + exp(-z))^-1`, evaluated without overflow.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Runs layers `1..=depth` of the head on `x`, recording `delta_j` and `q_j`.
pub fn forward_head(head: &DenseHead, x: ArrayView1<'_, f64>, depth: usize) -> Result<ForwardTrace> {
    if x.len() != head.input_dim() {
        return Err(Error::shape("forward input", head.input_dim(), x.len()));
    }
    if depth == 0 || depth > head.depth() {
        return Err(Error::Index {
            what: "forward depth",
            index: depth,
            valid: format!("1..={}", head.depth()),
        });
    }
    let f = head.activation();
    let mut pre = Vec::with_capacity(depth);
    let mut post: Vec<Array1<f64>> = Vec::with_capacity(depth);
    for layer in &head.layers()[..depth] {
        let input = post.last().map(|q| q.view()).unwrap_or(x);
        let delta = layer.weight.dot(&input) + &layer.bias;
        let q = delta.mapv(|z| f.apply(z));
        pre.push(delta);
        post.push(q);
    }
    Ok(ForwardTrace { pre, post })
}

/// Full-depth forward pass returning `y`.
pub fn predict(head: &DenseHead, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    forward_head(head, x, head.depth()).map(|t| t.output().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Activation, DenseLayer};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((1.0 - sigmoid(40.0)) < 1e-15);
        assert_abs_diff_eq!(sigmoid(3f64.ln()), 0.75, epsilon = 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        for z in [-30.0, -2.5, -0.1, 0.3, 7.0] {
            assert_abs_diff_eq!(sigmoid(-z), 1.0 - sigmoid(z), epsilon = 1e-15);
            assert!(sigmoid(z + 1e-3) > sigmoid(z));
        }
    }

    #[test]
    fn identity_relu_layer() {
        let layer = DenseLayer::new(Array2::eye(2), Array1::zeros(2)).unwrap();
        let head = DenseHead::new(vec![layer], Activation::Relu).unwrap();
        let trace = forward_head(&head, array![1.0, -1.0].view(), 1).unwrap();
        assert_eq!(trace.pre_activation(1).unwrap(), &array![1.0, -1.0]);
        assert_eq!(trace.activation(1).unwrap(), &array![1.0, 0.0]);
    }

    #[test]
    fn zero_sigmoid_layer_gives_half() {
        let layer = DenseLayer::new(Array2::zeros((3, 2)), Array1::zeros(3)).unwrap();
        let head = DenseHead::new(vec![layer], Activation::Sigmoid).unwrap();
        let trace = forward_head(&head, array![4.0, -9.0].view(), 1).unwrap();
        assert_eq!(trace.output(), &array![0.5, 0.5, 0.5]);
    }

    #[test]
    fn rejects_bad_input() {
        let layer = DenseLayer::new(Array2::zeros((3, 2)), Array1::zeros(3)).unwrap();
        let head = DenseHead::new(vec![layer], Activation::Sigmoid).unwrap();
        assert!(matches!(
            forward_head(&head, array![1.0].view(), 1),
            Err(Error::Shape { .. })
        ));
        assert!(forward_head(&head, array![1.0, 2.0].view(), 2).is_err());
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dims = [5usize, 4, 3, 2];
        for act in [Activation::Sigmoid, Activation::Relu] {
            let layers: Vec<DenseLayer> = dims
                .windows(2)
                .map(|w| {
                    let weight = Array2::from_shape_fn((w[1], w[0]), |_| rng.random_range(-1.0..1.0));
                    let bias = Array1::from_shape_fn(w[1], |_| rng.random_range(-0.5..0.5));
                    DenseLayer::new(weight, bias).unwrap()
                })
                .collect();
            let head = DenseHead::new(layers.clone(), act).unwrap();
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();

            let mut cur = x.clone();
            for layer in &layers {
                let mut next = vec![0.0; layer.output_dim()];
                for (i, out) in next.iter_mut().enumerate() {
                    let mut acc = layer.bias[i];
                    for (j, v) in cur.iter().enumerate() {
                        acc += layer.weight[[i, j]] * v;
                    }
                    *out = match act {
                        Activation::Sigmoid => 1.0 / (1.0 + (-acc).exp()),
                        Activation::Relu => acc.max(0.0),
                    };
                }
                cur = next;
            }

            let trace = forward_head(&head, Array1::from_vec(x.clone()).view(), 3).unwrap();
            for (a, b) in trace.output().iter().zip(&cur) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-14);
            }
            for l in 1..=3 {
                let d = trace.pre_activation(l).unwrap();
                let q = trace.activation(l).unwrap();
                assert_eq!(&d.mapv(|z| act.apply(z)), q);
            }
            let again = forward_head(&head, Array1::from_vec(x).view(), 3).unwrap();
            assert_eq!(trace, again);
        }
    }
}
