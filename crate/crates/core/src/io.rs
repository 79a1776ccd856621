//! On-disk bundle format and heatmap export.
//!
//! A bundle is a directory holding `manifest.json` plus one raw blob per
//! tensor. Blobs are little-endian IEEE-754 `f32`, row-major, with no
//! header; each blob's byte length must equal `4 * product(shape)`.
//! Scalars (`gamma`, `cost`, SVM bias) live in the manifest as JSON numbers
//! and round-trip exactly.

use std::fs;
use std::io::Write;
use std::path::{Component, Path, PathBuf};

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::cam::CamMap;
use crate::error::{Error, Result};
use crate::pca::PcaProjector;
use crate::svm::{Kernel, SvmModel};
use crate::types::{Activation, DenseHead, DenseLayer, FeatureStack};

pub const FORMAT_VERSION: &str = "1";
pub const MANIFEST_FILE: &str = "manifest.json";
/// Bound on `max |V^T V - I|` for eigenvectors read back from `f32` blobs.
pub const LOADED_ORTHONORMAL_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobRef {
    pub file: String,
    pub shape: Vec<usize>,
}

impl BlobRef {
    fn elements(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shapes {
    pub m: usize,
    pub n: usize,
    pub t: usize,
    /// `D_0, D_1, ..., D_L`
    pub dims: Vec<usize>,
    /// `L`
    pub layers: usize,
    /// `B`, present when a PCA section exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRef {
    pub weight: BlobRef,
    pub bias: BlobRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplesRef {
    pub features: BlobRef,
    pub labels: BlobRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaRef {
    /// Dense layer `l` (1-based) the projector was fitted on.
    pub layer: usize,
    pub mean: BlobRef,
    pub eigenvectors: BlobRef,
    pub eigenvalues: BlobRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmRef {
    pub kernel: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
    pub bias: f64,
    pub support_vectors: BlobRef,
    pub duals: BlobRef,
    pub labels: BlobRef,
}

/// The `manifest.json` schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub version: String,
    pub endianness: String,
    pub shapes: Shapes,
    pub activation: Activation,
    /// `"random"` or `"checkpoint"` when written by an exporter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_origin: Option<String>,
    /// `T x M x N`
    pub features: BlobRef,
    pub head: Vec<LayerRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<SamplesRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout: Option<SamplesRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pca: Option<PcaRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svm: Option<SvmRef>,
}

/// Feature vectors (one row per sample, length `D_0`) with `-1/+1` labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSamples {
    pub features: Array2<f64>,
    pub labels: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaLayer {
    pub layer: usize,
    pub projector: PcaProjector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmLayer {
    pub model: SvmModel,
    pub cost: Option<f64>,
}

/// Everything a bundle directory can hold.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub features: FeatureStack,
    pub head: DenseHead,
    pub head_origin: Option<String>,
    pub training: Option<LabeledSamples>,
    pub holdout: Option<LabeledSamples>,
    pub pca: Option<PcaLayer>,
    pub svm: Option<SvmLayer>,
}

fn check_relative(file: &str) -> Result<()> {
    let p = Path::new(file);
    if file.is_empty() || p.components().any(|c| !matches!(c, Component::Normal(_))) {
        return Err(Error::Validation(format!(
            "blob path {file:?} must be a plain relative path inside the bundle"
        )));
    }
    Ok(())
}

fn read_blob(dir: &Path, blob: &BlobRef, field: &str) -> Result<Vec<f64>> {
    check_relative(&blob.file)?;
    let path = dir.join(&blob.file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let expected = 4 * blob.elements();
    if bytes.len() != expected {
        return Err(Error::io(
            &path,
            std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                format!(
                    "blob {} for {field} holds {} bytes, shape {:?} needs {expected}",
                    blob.file,
                    bytes.len(),
                    blob.shape
                ),
            ),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn write_blob(dir: &Path, file: &str, shape: Vec<usize>, values: impl Iterator<Item = f64>) -> Result<BlobRef> {
    let path = dir.join(file);
    let mut bytes = Vec::with_capacity(4 * shape.iter().product::<usize>());
    for v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(BlobRef {
        file: file.to_string(),
        shape,
    })
}

fn expect_shape(blob: &BlobRef, want: &[usize], field: &str) -> Result<()> {
    if blob.shape != want {
        return Err(Error::Validation(format!(
            "{field}: shape {:?} does not match declared {:?}",
            blob.shape, want
        )));
    }
    Ok(())
}

fn matrix(dir: &Path, blob: &BlobRef, field: &str) -> Result<Array2<f64>> {
    if blob.shape.len() != 2 {
        return Err(Error::Validation(format!("{field}: expected a 2-D shape, got {:?}", blob.shape)));
    }
    let data = read_blob(dir, blob, field)?;
    Ok(Array2::from_shape_vec((blob.shape[0], blob.shape[1]), data).expect("length checked"))
}

fn vector(dir: &Path, blob: &BlobRef, field: &str) -> Result<Array1<f64>> {
    if blob.shape.len() != 1 {
        return Err(Error::Validation(format!("{field}: expected a 1-D shape, got {:?}", blob.shape)));
    }
    Ok(Array1::from_vec(read_blob(dir, blob, field)?))
}

pub fn read_manifest(dir: &Path) -> Result<BundleManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: BundleManifest =
        serde_json::from_str(&text).map_err(|source| Error::Manifest { path, source })?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::UnknownVersion(manifest.version));
    }
    if manifest.endianness != "little" {
        return Err(Error::Validation(format!(
            "endianness must be \"little\", got {:?}",
            manifest.endianness
        )));
    }
    Ok(manifest)
}

fn load_samples(dir: &Path, s: &SamplesRef, d0: usize, name: &str) -> Result<LabeledSamples> {
    let features = matrix(dir, &s.features, &format!("{name}.features"))?;
    if features.ncols() != d0 {
        return Err(Error::Validation(format!(
            "{name}.features: {} columns, expected D_0 = {d0}",
            features.ncols()
        )));
    }
    let labels = vector(dir, &s.labels, &format!("{name}.labels"))?;
    if labels.len() != features.nrows() {
        return Err(Error::Validation(format!(
            "{name}.labels: {} labels for {} samples",
            labels.len(),
            features.nrows()
        )));
    }
    Ok(LabeledSamples { features, labels })
}

/// Reads and validates a bundle directory.
pub fn load_bundle(dir: &Path) -> Result<Bundle> {
    let mf = read_manifest(dir)?;
    let sh = &mf.shapes;
    if sh.m == 0 || sh.n == 0 || sh.t == 0 {
        return Err(Error::Validation(format!("shapes: M, N, T must be >= 1, got {}, {}, {}", sh.m, sh.n, sh.t)));
    }
    if sh.dims.len() != sh.layers + 1 || sh.layers == 0 {
        return Err(Error::Validation(format!(
            "shapes.dims: expected L + 1 = {} entries, got {}",
            sh.layers + 1,
            sh.dims.len()
        )));
    }
    if sh.dims[0] != sh.m * sh.n * sh.t {
        return Err(Error::Validation(format!(
            "shapes.dims[0]: D_0 = {} but M*N*T = {}",
            sh.dims[0],
            sh.m * sh.n * sh.t
        )));
    }
    if mf.head.len() != sh.layers {
        return Err(Error::Validation(format!(
            "head: {} layers listed, shapes.layers = {}",
            mf.head.len(),
            sh.layers
        )));
    }

    expect_shape(&mf.features, &[sh.t, sh.m, sh.n], "features")?;
    let raw = read_blob(dir, &mf.features, "features")?;
    let cube = Array3::from_shape_vec((sh.t, sh.m, sh.n), raw).expect("length checked");
    let features = FeatureStack::new(cube.axis_iter(Axis(0)).map(|m| m.to_owned()).collect())?;

    let mut layers = Vec::with_capacity(sh.layers);
    for (i, lr) in mf.head.iter().enumerate() {
        let field = format!("head[{i}]");
        expect_shape(&lr.weight, &[sh.dims[i + 1], sh.dims[i]], &format!("{field}.weight"))?;
        expect_shape(&lr.bias, &[sh.dims[i + 1]], &format!("{field}.bias"))?;
        layers.push(DenseLayer::new(
            matrix(dir, &lr.weight, &format!("{field}.weight"))?,
            vector(dir, &lr.bias, &format!("{field}.bias"))?,
        )?);
    }
    let head = DenseHead::new(layers, mf.activation)?;

    let training = mf
        .training
        .as_ref()
        .map(|s| load_samples(dir, s, sh.dims[0], "training"))
        .transpose()?;
    let holdout = mf
        .holdout
        .as_ref()
        .map(|s| load_samples(dir, s, sh.dims[0], "holdout"))
        .transpose()?;

    let pca = match &mf.pca {
        None => None,
        Some(p) => {
            if p.layer == 0 || p.layer > sh.layers {
                return Err(Error::Validation(format!("pca.layer {} outside 1..={}", p.layer, sh.layers)));
            }
            let dl = sh.dims[p.layer];
            let b = sh.components.ok_or_else(|| {
                Error::Validation("shapes.components is required with a pca section".into())
            })?;
            expect_shape(&p.mean, &[dl], "pca.mean")?;
            expect_shape(&p.eigenvectors, &[dl, b], "pca.eigenvectors")?;
            expect_shape(&p.eigenvalues, &[b], "pca.eigenvalues")?;
            let projector = PcaProjector::from_parts(
                vector(dir, &p.mean, "pca.mean")?,
                matrix(dir, &p.eigenvectors, "pca.eigenvectors")?,
                vector(dir, &p.eigenvalues, "pca.eigenvalues")?,
                LOADED_ORTHONORMAL_TOL,
            )?;
            Some(PcaLayer { layer: p.layer, projector })
        }
    };

    let svm = match &mf.svm {
        None => None,
        Some(s) => {
            let b = pca
                .as_ref()
                .map(|p| p.projector.components())
                .ok_or_else(|| Error::Validation("svm section requires a pca section".into()))?;
            let kernel = match s.kernel.as_str() {
                "linear" => Kernel::Linear,
                "rbf" => Kernel::rbf(
                    s.gamma
                        .ok_or_else(|| Error::Validation("svm.gamma is required for the rbf kernel".into()))?,
                )?,
                other => return Err(Error::Validation(format!("svm.kernel: unknown kernel {other:?}"))),
            };
            let count = s.duals.shape.first().copied().unwrap_or(0);
            expect_shape(&s.support_vectors, &[count, b], "svm.support_vectors")?;
            expect_shape(&s.duals, &[count], "svm.duals")?;
            expect_shape(&s.labels, &[count], "svm.labels")?;
            let model = SvmModel::new(
                matrix(dir, &s.support_vectors, "svm.support_vectors")?,
                vector(dir, &s.duals, "svm.duals")?,
                vector(dir, &s.labels, "svm.labels")?,
                s.bias,
                kernel,
            )?;
            Some(SvmLayer { model, cost: s.cost })
        }
    };

    Ok(Bundle {
        features,
        head,
        head_origin: mf.head_origin,
        training,
        holdout,
        pca,
        svm,
    })
}

fn write_matrix_blob(dir: &Path, file: &str, m: ArrayView2<'_, f64>) -> Result<BlobRef> {
    write_blob(dir, file, vec![m.nrows(), m.ncols()], m.iter().copied())
}

fn write_vector_blob(dir: &Path, file: &str, v: &Array1<f64>) -> Result<BlobRef> {
    write_blob(dir, file, vec![v.len()], v.iter().copied())
}

fn write_samples(dir: &Path, prefix: &str, s: &LabeledSamples) -> Result<SamplesRef> {
    Ok(SamplesRef {
        features: write_matrix_blob(dir, &format!("{prefix}_x.f32"), s.features.view())?,
        labels: write_vector_blob(dir, &format!("{prefix}_y.f32"), &s.labels)?,
    })
}

/// Writes `bundle` into `dir`. An existing bundle there is replaced only
/// when `force` is set.
pub fn save_bundle(bundle: &Bundle, dir: &Path, force: bool) -> Result<()> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() && !force {
        return Err(Error::RefuseOverwrite(dir.to_path_buf()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let fs_ = &bundle.features;
    let features = write_blob(
        dir,
        "features.f32",
        vec![fs_.count(), fs_.rows(), fs_.cols()],
        fs_.maps().iter().flat_map(|m| m.iter().copied()),
    )?;
    let head = bundle
        .head
        .layers()
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            Ok(LayerRef {
                weight: write_matrix_blob(dir, &format!("head_w{}.f32", i + 1), layer.weight.view())?,
                bias: write_vector_blob(dir, &format!("head_b{}.f32", i + 1), &layer.bias)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let training = bundle.training.as_ref().map(|s| write_samples(dir, "train", s)).transpose()?;
    let holdout = bundle.holdout.as_ref().map(|s| write_samples(dir, "holdout", s)).transpose()?;
    let pca = bundle
        .pca
        .as_ref()
        .map(|p| {
            Ok::<_, Error>(PcaRef {
                layer: p.layer,
                mean: write_vector_blob(dir, "pca_mean.f32", p.projector.mean())?,
                eigenvectors: write_matrix_blob(dir, "pca_vectors.f32", p.projector.vectors().view())?,
                eigenvalues: write_vector_blob(dir, "pca_values.f32", p.projector.eigenvalues())?,
            })
        })
        .transpose()?;
    let svm = bundle
        .svm
        .as_ref()
        .map(|s| {
            let m = &s.model;
            Ok::<_, Error>(SvmRef {
                kernel: m.kernel().name().to_string(),
                gamma: m.kernel().gamma(),
                cost: s.cost,
                bias: m.bias(),
                support_vectors: write_matrix_blob(dir, "svm_vectors.f32", m.support_vectors().view())?,
                duals: write_vector_blob(dir, "svm_duals.f32", m.duals())?,
                labels: write_vector_blob(dir, "svm_labels.f32", m.labels())?,
            })
        })
        .transpose()?;

    let manifest = BundleManifest {
        version: FORMAT_VERSION.to_string(),
        endianness: "little".to_string(),
        shapes: Shapes {
            m: fs_.rows(),
            n: fs_.cols(),
            t: fs_.count(),
            dims: bundle.head.dims(),
            layers: bundle.head.depth(),
            components: bundle.pca.as_ref().map(|p| p.projector.components()),
        },
        activation: bundle.head.activation(),
        head_origin: bundle.head_origin.clone(),
        features,
        head,
        training,
        holdout,
        pca,
        svm,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, text + "\n").map_err(|e| Error::io(&manifest_path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapFormat {
    Csv,
    Pgm,
}

impl HeatmapFormat {
    pub fn extension(self) -> &'static str {
        match self {
            HeatmapFormat::Csv => "csv",
            HeatmapFormat::Pgm => "pgm",
        }
    }
}

/// `round(255 * clip(v, 0, nu) / nu)` with halves rounded up; `nu <= 0` maps to 0.
pub fn quantize(value: f64, color_max: f64) -> u8 {
    if !(color_max > 0.0) {
        return 0;
    }
    let scaled = 255.0 * value.clamp(0.0, color_max) / color_max;
    (scaled + 0.5).floor().min(255.0) as u8
}

/// Binary PGM (`P5`) bytes for `values` scaled against `color_max`.
pub fn pgm_bytes(values: ArrayView2<'_, f64>, color_max: f64) -> Vec<u8> {
    let (rows, cols) = values.dim();
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| quantize(*v, color_max)));
    out
}

/// One line per row, comma-separated, shortest round-trip decimal form.
pub fn csv_string(values: ArrayView2<'_, f64>) -> String {
    let mut s = String::new();
    for row in values.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

pub fn parse_csv(text: &str) -> Result<Array2<f64>> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let row = line
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Validation(format!("csv line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(Error::Validation(format!("csv line {}: {} fields, expected {c}", i + 1, row.len())))
            }
            _ => {}
        }
        data.extend(row);
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols.unwrap_or(0)), data)
        .map_err(|e| Error::Validation(format!("csv: {e}")))
}

pub fn write_matrix_csv(values: ArrayView2<'_, f64>, path: &Path) -> Result<()> {
    fs::write(path, csv_string(values)).map_err(|e| Error::io(path, e))
}

pub fn export_heatmap(cam: &CamMap, path: &Path, format: HeatmapFormat) -> Result<()> {
    match format {
        HeatmapFormat::Csv => write_matrix_csv(cam.values.view(), path),
        HeatmapFormat::Pgm => {
            let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
            file.write_all(&pgm_bytes(cam.values.view(), cam.color_max))
                .map_err(|e| Error::io(path, e))
        }
    }
}

/// Path of `name.ext` inside `dir`.
pub fn heatmap_path(dir: &Path, name: &str, format: HeatmapFormat) -> PathBuf {
    dir.join(format!("{name}.{}", format.extension()))
}
