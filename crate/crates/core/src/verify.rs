//! Randomized closed-form vs finite-difference checks of every Jacobian
//! chain, plus the effect-function properties.

use std::fmt;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::forward::forward_head;
use crate::jacobian::{chain_class, chain_pca, chain_svm};
use crate::oracle::{compare, fd_jacobian, Comparison, FdConfig};
use crate::pca::{self, project, PcaProjector};
use crate::pipeline::layer_activations;
use crate::svm::{decision, effect, effect_argmax, effect_max, Kernel, SvmModel};
use crate::synth::{random_head, random_stack, seeded_rng};
use crate::types::{concat_features, Activation, DenseHead, FeatureStack, JacobianMatrix};

/// Relu configurations with any `|delta|` below this are redrawn.
pub const KINK_GUARD: f64 = 1e-4;
/// Fits whose smallest retained eigenvalue is below this fraction of the
/// largest are redrawn: such components carry no variance and their
/// Jacobian rows are identically zero.
pub const RANK_FLOOR: f64 = 1e-8;
pub const EFFECT_GAMMAS: [f64; 3] = [0.25, 1.0, 4.0];
pub const GRID_POINTS: usize = 1_000_000;
const GRID_END: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyConfig {
    pub seed: u64,
    pub per_cell: usize,
    pub fd: FdConfig,
    /// Perturbs `W_1[0, 0]` by this amount in the closed-form path only.
    pub corrupt_weight: Option<f64>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            per_cell: 50,
            fd: FdConfig::default(),
            corrupt_weight: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ChainPath {
    Pca,
    Svm,
    Class,
}

impl fmt::Display for ChainPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            ChainPath::Pca => "dp/dx",
            ChainPath::Svm => "da/dx",
            ChainPath::Class => "dy/dx",
        })
    }
}

/// One random configuration of head, PCA layer, SVM and input.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub head: DenseHead,
    pub layer: usize,
    pub projector: PcaProjector,
    pub model: SvmModel,
    pub stack: FeatureStack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub activation: Activation,
    pub kernel: &'static str,
    pub path: ChainPath,
    pub case: usize,
    pub dims: Vec<usize>,
    pub map_len: usize,
    pub comparison: Comparison,
    /// Closed-form and finite-difference values at the worst entry.
    pub worst_values: (f64, f64),
    /// Largest closed-form magnitude in the whole Jacobian.
    pub scale: f64,
}

impl CaseResult {
    /// `(row, map t, position in map)` of the worst entry, `t` 1-based.
    pub fn worst_location(&self) -> (usize, usize, usize) {
        let (row, col) = self.comparison.worst_index;
        (row, col / self.map_len + 1, col % self.map_len)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyCheck {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub config: VerifyConfig,
    pub cases: Vec<CaseResult>,
    pub properties: Vec<PropertyCheck>,
}

fn draw_kernel(rng: &mut ChaCha8Rng, rbf: bool) -> Kernel {
    if rbf {
        // log-uniform on [0.25, 4]
        Kernel::Rbf {
            gamma: 0.25 * 16f64.powf(rng.random::<f64>()),
        }
    } else {
        Kernel::Linear
    }
}

fn gaussian_vector(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Array1<f64> {
    Array1::from_shape_simple_fn(len, || {
        let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
        scale * z
    })
}

/// Draws a scenario with `D_l <= 10`, `T <= 3`, `B <= 4`, `I <= 5`.
pub fn random_scenario(rng: &mut ChaCha8Rng, activation: Activation, rbf: bool) -> Result<Scenario> {
    loop {
        let (m, n, t) = (rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=3));
        let depth = rng.random_range(2..=3);
        let mut dims = vec![m * n * t];
        dims.extend((0..depth).map(|_| rng.random_range(2..=10)));
        let layer = rng.random_range(1..depth);
        let components = rng.random_range(1..=dims[layer].min(4));
        let head = random_head(rng, &dims, activation)?;
        let stack = random_stack(rng, m, n, t);

        let x = concat_features(&stack);
        let trace = forward_head(&head, x.view(), depth)?;
        if activation == Activation::Relu && trace.min_abs_pre_activation(depth) < KINK_GUARD {
            continue;
        }

        let samples = 2 * dims[layer] + 4;
        let mut xs = Array2::zeros((samples, dims[0]));
        for mut row in xs.rows_mut() {
            row.assign(&concat_features(&random_stack(rng, m, n, t)));
        }
        let q = layer_activations(&head, xs.view(), layer)?;
        let projector = match pca::fit(q.view(), components) {
            Ok(p) => p,
            Err(_) => continue,
        };
        let lambda = projector.eigenvalues();
        if lambda[components - 1] <= RANK_FLOOR * lambda[0] {
            continue;
        }
        let p = project(&projector, trace.activation(layer)?.view())?;

        let kernel = draw_kernel(rng, rbf);
        let spread = kernel.gamma().map_or(1.0, |g| 1.0 / (2.0 * g).sqrt());
        let count = rng.random_range(1..=5);
        let mut svs = Array2::zeros((count, components));
        for mut row in svs.rows_mut() {
            row.assign(&(&p + &gaussian_vector(rng, components, spread)));
        }
        let duals = Array1::from_shape_simple_fn(count, || rng.random_range(0.1..1.0));
        let labels = Array1::from_shape_simple_fn(count, || if rng.random::<bool>() { 1.0 } else { -1.0 });
        let bias = gaussian_vector(rng, 1, 0.5)[0];
        let model = SvmModel::new(svs, duals, labels, bias, kernel)?;
        return Ok(Scenario {
            head,
            layer,
            projector,
            model,
            stack,
        });
    }
}

fn corrupted(head: &DenseHead, delta: f64) -> Result<DenseHead> {
    let mut layers = head.layers().to_vec();
    layers[0].weight[[0, 0]] += delta;
    DenseHead::new(layers, head.activation())
}

fn fd_path(s: &Scenario, path: ChainPath, fd: &FdConfig) -> Result<JacobianMatrix> {
    let x0 = concat_features(&s.stack);
    let depth = s.head.depth();
    fd_jacobian(
        |x| {
            let trace = forward_head(&s.head, x, depth)?;
            match path {
                ChainPath::Class => Ok(trace.output().clone()),
                ChainPath::Pca | ChainPath::Svm => {
                    let p = project(&s.projector, trace.activation(s.layer)?.view())?;
                    if path == ChainPath::Pca {
                        Ok(p)
                    } else {
                        Ok(Array1::from_elem(1, decision(&s.model, p.view())?))
                    }
                }
            }
        },
        x0.view(),
        fd,
    )
}

fn closed_path(s: &Scenario, head: &DenseHead, path: ChainPath) -> Result<JacobianMatrix> {
    let blocks: Vec<Array2<f64>> = match path {
        ChainPath::Pca => chain_pca(head, &s.projector, &s.stack, s.layer)?,
        ChainPath::Svm => chain_svm(head, &s.projector, &s.model, &s.stack, s.layer)?
            .into_iter()
            .map(|r| r.insert_axis(ndarray::Axis(0)))
            .collect(),
        ChainPath::Class => chain_class(head, &s.stack)?,
    };
    JacobianMatrix::hstack(&blocks, &path.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioCheck {
    pub comparison: Comparison,
    pub worst_values: (f64, f64),
    pub scale: f64,
}

pub fn check_scenario(s: &Scenario, path: ChainPath, cfg: &VerifyConfig) -> Result<ScenarioCheck> {
    let head = match cfg.corrupt_weight {
        Some(delta) => corrupted(&s.head, delta)?,
        None => s.head.clone(),
    };
    let closed = closed_path(s, &head, path)?;
    let fd = fd_path(s, path, &cfg.fd)?;
    let comparison = compare(&closed, &fd, cfg.fd.tolerance)?;
    let idx = comparison.worst_index;
    Ok(ScenarioCheck {
        comparison,
        worst_values: (closed.values[idx], fd.values[idx]),
        scale: closed.values.iter().fold(0.0, |m: f64, v| m.max(v.abs())),
    })
}

pub fn effect_limit_checks() -> Result<Vec<PropertyCheck>> {
    EFFECT_GAMMAS
        .iter()
        .map(|&gamma| {
            let k = Kernel::rbf(gamma)?;
            let near = effect(k, 1e-8)?;
            let far = effect(k, 1e3)?;
            Ok(PropertyCheck {
                name: format!("E limits, gamma = {gamma}"),
                pass: near < 1e-7 * 2.0 * gamma && far < 1e-12,
                detail: format!("E(1e-8) = {near:.3e} (< {:.1e}), E(1e3) = {far:.3e} (< 1e-12)", 2e-7 * gamma),
            })
        })
        .collect()
}

pub fn effect_peak_checks() -> Result<Vec<PropertyCheck>> {
    let step = GRID_END / (GRID_POINTS - 1) as f64;
    EFFECT_GAMMAS
        .iter()
        .map(|&gamma| {
            let k = Kernel::rbf(gamma)?;
            let values = (0..GRID_POINTS)
                .map(|i| effect(k, i as f64 * step))
                .collect::<Result<Vec<_>>>()?;
            let (best, &max) = values
                .iter()
                .enumerate()
                .fold((0, &f64::NEG_INFINITY), |acc, (i, v)| if *v > *acc.1 { (i, v) } else { acc });
            let d_star = effect_argmax(gamma);
            let loc_err = (best as f64 * step - d_star).abs();
            let val_err = (max - effect_max(gamma)).abs();
            let rising = (0..GRID_POINTS - 1)
                .filter(|&i| ((i + 1) as f64 * step) < d_star)
                .all(|i| values[i + 1] > values[i]);
            let falling = (0..GRID_POINTS - 1)
                .filter(|&i| (i as f64 * step) > d_star)
                .all(|i| values[i + 1] < values[i]);
            Ok(PropertyCheck {
                name: format!("E maximizer, gamma = {gamma}"),
                pass: loc_err <= step && val_err < 1e-6 && rising && falling,
                detail: format!(
                    "argmax off by {loc_err:.2e} (step {step:.2e}), max off by {val_err:.2e}, rising flank {}, falling flank {}",
                    if rising { "ok" } else { "BROKEN" },
                    if falling { "ok" } else { "BROKEN" }
                ),
            })
        })
        .collect()
}

/// Runs every cell and property check. Deterministic for a fixed config.
pub fn run(cfg: &VerifyConfig) -> Result<VerifyReport> {
    let mut cases = Vec::new();
    let cells = [
        (Activation::Sigmoid, false),
        (Activation::Sigmoid, true),
        (Activation::Relu, false),
        (Activation::Relu, true),
    ];
    for (ci, &(activation, rbf)) in cells.iter().enumerate() {
        let mut rng = seeded_rng(cfg.seed.wrapping_mul(31).wrapping_add(ci as u64));
        for case in 0..cfg.per_cell {
            let s = random_scenario(&mut rng, activation, rbf)?;
            let mut paths = vec![ChainPath::Pca, ChainPath::Svm];
            if !rbf {
                paths.push(ChainPath::Class);
            }
            for path in paths {
                let check = check_scenario(&s, path, cfg)?;
                cases.push(CaseResult {
                    activation,
                    kernel: s.model.kernel().name(),
                    path,
                    case,
                    dims: s.head.dims(),
                    map_len: s.stack.map_len(),
                    comparison: check.comparison,
                    worst_values: check.worst_values,
                    scale: check.scale,
                });
            }
        }
    }
    let mut properties = effect_limit_checks()?;
    properties.extend(effect_peak_checks()?);
    Ok(VerifyReport {
        config: *cfg,
        cases,
        properties,
    })
}

impl VerifyReport {
    pub fn failures(&self) -> impl Iterator<Item = &CaseResult> {
        self.cases.iter().filter(|c| !c.comparison.pass)
    }

    pub fn passed(&self) -> bool {
        self.failures().next().is_none() && self.properties.iter().all(|p| p.pass)
    }

    /// `(activation, kernel, path, cases, worst error, all pass)` per group.
    pub fn summary(&self) -> Vec<(Activation, &'static str, ChainPath, usize, f64, bool)> {
        let mut rows: Vec<(Activation, &'static str, ChainPath, usize, f64, bool)> = Vec::new();
        for c in &self.cases {
            let key = (c.activation, c.kernel, c.path);
            match rows.iter_mut().find(|r| (r.0, r.1, r.2) == key) {
                Some(r) => {
                    r.3 += 1;
                    r.4 = r.4.max(c.comparison.max_rel_err);
                    r.5 &= c.comparison.pass;
                }
                None => rows.push((c.activation, c.kernel, c.path, 1, c.comparison.max_rel_err, c.comparison.pass)),
            }
        }
        rows
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "closed-form vs central differences (h = {:e}, tol = {:e}, seed = {})",
            self.config.fd.step, self.config.fd.tolerance, self.config.seed
        )?;
        for (act, kernel, path, n, worst, pass) in self.summary() {
            writeln!(
                f,
                "  {:<4} {act:<7} {kernel:<6} {path}  {n:>3} cases  max rel err {worst:.3e}",
                if pass { "PASS" } else { "FAIL" },
            )?;
        }
        for c in self.failures() {
            let (row, t, pos) = c.worst_location();
            writeln!(
                f,
                "  failed: {} {} {} case {} dims {:?}: rel err {:.3e} at row {row}, map {t}, entry {pos} \
                 (closed {:.6e}, fd {:.6e}, largest entry {:.3e})",
                c.activation, c.kernel, c.path, c.case, c.dims, c.comparison.max_rel_err, c.worst_values.0, c.worst_values.1, c.scale
            )?;
        }
        writeln!(f, "effect function")?;
        for p in &self.properties {
            writeln!(f, "  {:<4} {}: {}", if p.pass { "PASS" } else { "FAIL" }, p.name, p.detail)?;
        }
        write!(f, "{}", if self.passed() { "all checks passed" } else { "verification FAILED" })
    }
}
