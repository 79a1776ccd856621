//! Shared tensor and parameter types.
//!
//! Storage is 0-based and row-major. Documentation uses 1-based layer
//! indices (`l = 1..=L`) because that is how the dense head is usually
//! described; every accessor that takes a layer index takes it 1-based.

use std::fmt;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flattens an `M x N` map into a length `M*N` vector in row-major order:
/// `f[1,1], f[1,2], ..., f[M,N]`.
pub fn flatten_map(map: ArrayView2<'_, f64>) -> Array1<f64> {
    map.iter().copied().collect()
}

/// Inverse of [`flatten_map`].
pub fn unflatten(vec: &[f64], rows: usize, cols: usize) -> Result<Array2<f64>> {
    if vec.len() != rows * cols {
        return Err(Error::shape(
            "unflatten",
            format!("{} values for {rows}x{cols}", rows * cols),
            vec.len(),
        ));
    }
    Ok(Array2::from_shape_vec((rows, cols), vec.to_vec()).expect("length checked"))
}

/// The `T` feature maps of the last convolutional layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    maps: Vec<Array2<f64>>,
    rows: usize,
    cols: usize,
}

impl FeatureStack {
    pub fn new(maps: Vec<Array2<f64>>) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::Validation("feature stack needs at least one map".into()))?;
        let (rows, cols) = first.dim();
        if rows == 0 || cols == 0 {
            return Err(Error::Validation(format!(
                "feature maps must be non-empty, got {rows}x{cols}"
            )));
        }
        for (t, map) in maps.iter().enumerate() {
            if map.dim() != (rows, cols) {
                return Err(Error::shape(
                    "feature map",
                    format!("{rows}x{cols}"),
                    format!("{}x{} for map {}", map.nrows(), map.ncols(), t + 1),
                ));
            }
        }
        Ok(Self { maps, rows, cols })
    }

    /// Rebuilds a stack from a concatenated feature vector `x`.
    pub fn from_vector(x: &[f64], rows: usize, cols: usize, count: usize) -> Result<Self> {
        let per_map = rows * cols;
        if x.len() != per_map * count || count == 0 {
            return Err(Error::shape(
                "feature vector",
                format!("{} = {rows}*{cols}*{count}", per_map * count),
                x.len(),
            ));
        }
        let maps = x
            .chunks(per_map)
            .map(|chunk| unflatten(chunk, rows, cols))
            .collect::<Result<Vec<_>>>()?;
        Self::new(maps)
    }

    pub fn maps(&self) -> &[Array2<f64>] {
        &self.maps
    }

    /// `M`
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// `N`
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// `T`
    pub fn count(&self) -> usize {
        self.maps.len()
    }

    /// `M * N`
    pub fn map_len(&self) -> usize {
        self.rows * self.cols
    }

    /// Scales every map by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            maps: self.maps.iter().map(|m| m * factor).collect(),
            rows: self.rows,
            cols: self.cols,
        }
    }
}

/// Concatenates the flattened maps into the CNN feature vector `x` of length `M*N*T`.
pub fn concat_features(stack: &FeatureStack) -> Array1<f64> {
    let mut out = Vec::with_capacity(stack.map_len() * stack.count());
    for map in stack.maps() {
        out.extend(map.iter().copied());
    }
    Array1::from_vec(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Relu,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => crate::forward::sigmoid(z),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative evaluated at the pre-activation `z`. The Relu derivative is
    /// 0 at `z = 0`.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                let f = crate::forward::sigmoid(z);
                (1.0 - f) * f
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sigmoid" => Ok(Activation::Sigmoid),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Validation(format!("unknown activation {other:?}"))),
        }
    }
}

/// One affine layer `W q + beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(Error::shape(
                "dense bias",
                weight.nrows(),
                bias.len(),
            ));
        }
        Ok(Self { weight, bias })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// The fully connected layers after the flatten layer, sharing one activation.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseHead {
    layers: Vec<DenseLayer>,
    activation: Activation,
}

impl DenseHead {
    pub fn new(layers: Vec<DenseLayer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Validation("dense head needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[1].input_dim() != pair[0].output_dim() {
                return Err(Error::shape(
                    "dense layer chain",
                    format!("layer {} input dim {}", i + 2, pair[0].output_dim()),
                    pair[1].input_dim(),
                ));
            }
        }
        Ok(Self { layers, activation })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Layer `l`, 1-based.
    pub fn layer(&self, l: usize) -> Result<&DenseLayer> {
        if l == 0 || l > self.layers.len() {
            return Err(Error::Index {
                what: "dense layer",
                index: l,
                valid: format!("1..={}", self.layers.len()),
            });
        }
        Ok(&self.layers[l - 1])
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// `L`
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// `D_0`
    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    /// `D_l` for `l` in `0..=L`.
    pub fn dim(&self, l: usize) -> usize {
        if l == 0 {
            self.input_dim()
        } else {
            self.layers[l - 1].output_dim()
        }
    }

    /// `C = D_L`
    pub fn classes(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn dims(&self) -> Vec<usize> {
        (0..=self.depth()).map(|l| self.dim(l)).collect()
    }
}

/// Pre-activations `delta_l` and activations `q_l` for layers `1..=depth`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub(crate) pre: Vec<Array1<f64>>,
    pub(crate) post: Vec<Array1<f64>>,
}

impl ForwardTrace {
    pub fn depth(&self) -> usize {
        self.pre.len()
    }

    fn check(&self, l: usize) -> Result<usize> {
        if l == 0 || l > self.pre.len() {
            return Err(Error::TraceDepth {
                requested: l,
                recorded: self.pre.len(),
            });
        }
        Ok(l - 1)
    }

    /// `delta_l`, 1-based.
    pub fn pre_activation(&self, l: usize) -> Result<&Array1<f64>> {
        self.check(l).map(|i| &self.pre[i])
    }

    /// `q_l`, 1-based.
    pub fn activation(&self, l: usize) -> Result<&Array1<f64>> {
        self.check(l).map(|i| &self.post[i])
    }

    /// Output of the deepest recorded layer.
    pub fn output(&self) -> &Array1<f64> {
        &self.post[self.post.len() - 1]
    }

    /// Smallest `|delta|` across the first `depth` layers.
    pub fn min_abs_pre_activation(&self, depth: usize) -> f64 {
        self.pre
            .iter()
            .take(depth)
            .flat_map(|d| d.iter())
            .fold(f64::INFINITY, |acc, v| acc.min(v.abs()))
    }
}

/// A Jacobian laid out so that entry `(h, z)` is `d out_h / d in_z`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianMatrix {
    pub values: Array2<f64>,
    pub row_space: String,
    pub col_space: String,
}

impl JacobianMatrix {
    pub fn new(values: Array2<f64>, row_space: impl Into<String>, col_space: impl Into<String>) -> Self {
        Self {
            values,
            row_space: row_space.into(),
            col_space: col_space.into(),
        }
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    /// Concatenates per-map blocks left to right into one Jacobian over `x`.
    pub fn hstack(blocks: &[Array2<f64>], row_space: &str) -> Result<Self> {
        let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
        let values = ndarray::concatenate(Axis(1), &views)
            .map_err(|e| Error::Validation(format!("cannot stack Jacobian blocks: {e}")))?;
        Ok(Self::new(values, row_space, "x"))
    }
}
