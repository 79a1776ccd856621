//! Command-line entry points.
//!
//! Exit codes: `0` success, `2` usage error, `3` invalid input or I/O
//! failure, `4` verification failure, `5` numeric or fitting failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::cam::{conventional_grad_cam, pca_grad_cam, svm_grad_cam, upsample, CamMap, Upsample};
use crate::error::{Error, Result};
use crate::io::{export_heatmap, heatmap_path, load_bundle, save_bundle, HeatmapFormat};
use crate::jacobian::compute_bundle;
use crate::oracle::FdConfig;
use crate::pipeline::{fit_bundle, FitConfig};
use crate::svm::Kernel;
use crate::synth::{demo_bundle, BlobConfig};
use crate::types::Activation;
use crate::verify::{self, VerifyConfig};

pub const EXIT_INVALID: u8 = 3;
pub const EXIT_VERIFY: u8 = 4;
pub const EXIT_NUMERIC: u8 = 5;

#[derive(Debug, Parser)]
#[command(name = "pcasvm-cam", version, about = "Closed-form Grad-CAM, PCA-Grad-CAM and SVM-Grad-CAM")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the PCA and SVM layers on the bundle's training set.
    Fit(FitArgs),
    /// Write heatmaps for the bundle's explained input.
    Cam(CamArgs),
    /// Check every closed-form Jacobian against finite differences.
    Verify(VerifyArgs),
    /// Write a synthetic two-class bundle.
    Demo(DemoArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Linear,
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ActivationArg {
    Sigmoid,
    Relu,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Write the fitted bundle here instead of updating `--bundle` in place.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub pca_layer: usize,
    #[arg(long, default_value_t = 3)]
    pub components: usize,
    #[arg(long, value_enum, default_value_t = KernelArg::Rbf)]
    pub kernel: KernelArg,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub cost: f64,
    /// Replace existing PCA/SVM sections or an existing output bundle.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct CamArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write conventional Grad-CAM for every class.
    #[arg(long)]
    pub class_cam: bool,
    /// Bilinearly upsample the PGM renderings to ROWSxCOLS; CSV stays native.
    #[arg(long, value_parser = parse_size)]
    pub render_size: Option<(usize, usize)>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    /// Random configurations per activation/kernel cell.
    #[arg(long, default_value_t = 50)]
    pub cases: usize,
    #[arg(long, hide = true)]
    pub corrupt_weight: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ActivationArg::Relu)]
    pub activation: ActivationArg,
    #[arg(long)]
    pub force: bool,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (r, c) = s.split_once('x').ok_or_else(|| format!("expected ROWSxCOLS, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(r)?, parse(c)?))
}

fn kernel_of(kind: KernelArg, gamma: f64) -> Result<Kernel> {
    match kind {
        KernelArg::Linear => Ok(Kernel::Linear),
        KernelArg::Rbf => Kernel::rbf(gamma),
    }
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let mut bundle = load_bundle(&args.bundle)?;
    let target = args.out.as_deref().unwrap_or(&args.bundle);
    let in_place = args.out.is_none();
    if in_place && !args.force && (bundle.pca.is_some() || bundle.svm.is_some()) {
        return Err(Error::RefuseOverwrite(args.bundle.clone()));
    }
    if args.components == 0 {
        return Err(Error::Validation("--components must be >= 1".into()));
    }
    let cfg = FitConfig {
        layer: args.pca_layer,
        components: args.components,
        kernel: kernel_of(args.kernel, args.gamma)?,
        cost: args.cost,
    };
    let report = fit_bundle(&mut bundle, &cfg)?;

    println!("PCA on dense layer {} ({} components)", cfg.layer, cfg.components);
    for (b, r) in report.contribution_ratios.iter().enumerate() {
        println!("  component {}: {r:.2}%", b + 1);
    }
    println!(
        "SVM ({}): {} support vectors after {} SMO iterations",
        cfg.kernel.name(),
        report.support_vectors,
        report.iterations
    );
    println!("training accuracy {:.4}", report.train_accuracy);
    if let Some(acc) = report.holdout_accuracy {
        println!("holdout accuracy {acc:.4}");
    }
    save_bundle(&bundle, target, in_place || args.force)?;
    println!("wrote {}", target.display());
    Ok(())
}

fn write_map(dir: &Path, name: &str, cam: &CamMap, render: Option<(usize, usize)>) -> Result<Vec<PathBuf>> {
    let csv = heatmap_path(dir, name, HeatmapFormat::Csv);
    export_heatmap(cam, &csv, HeatmapFormat::Csv)?;
    let pgm = heatmap_path(dir, name, HeatmapFormat::Pgm);
    match render {
        Some((rows, cols)) => {
            let big = CamMap {
                values: upsample(&cam.values, rows, cols, Upsample::Bilinear)?,
                ..cam.clone()
            };
            export_heatmap(&big, &pgm, HeatmapFormat::Pgm)?;
        }
        None => export_heatmap(cam, &pgm, HeatmapFormat::Pgm)?,
    }
    Ok(vec![csv, pgm])
}

/// Writes every available heatmap and returns the paths written.
pub fn cmd_cam(args: &CamArgs) -> Result<Vec<PathBuf>> {
    let bundle = load_bundle(&args.bundle)?;
    let stack = &bundle.features;
    let pca = bundle.pca.as_ref().map(|p| (&p.projector, p.layer));
    let model = match (&bundle.pca, &bundle.svm) {
        (Some(_), Some(s)) => Some(&s.model),
        _ => None,
    };
    if pca.is_none() {
        eprintln!("warning: bundle has no PCA section; PCA-Grad-CAM and SVM-Grad-CAM are unavailable");
    } else if model.is_none() {
        eprintln!("warning: bundle has no SVM section; SVM-Grad-CAM skipped");
    }
    let jac = compute_bundle(&bundle.head, pca, model, stack, args.class_cam)?;

    let mut maps: Vec<(String, CamMap)> = Vec::new();
    if let Some((proj, _)) = pca {
        for b in 1..=proj.components() {
            let (plus, minus) = pca_grad_cam(&jac, stack, b)?;
            maps.push((format!("pca_b{b}_plus"), plus));
            maps.push((format!("pca_b{b}_minus"), minus));
        }
    }
    if model.is_some() {
        maps.push(("svm".into(), svm_grad_cam(&jac, stack)?));
    }
    if args.class_cam {
        for c in 1..=bundle.head.classes() {
            maps.push((format!("class_c{c}"), conventional_grad_cam(&jac, stack, c)?));
        }
    }
    if maps.is_empty() {
        eprintln!("warning: nothing to write; pass --class-cam or fit PCA/SVM first");
        return Ok(Vec::new());
    }

    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    if !args.force {
        for (name, _) in &maps {
            for fmt in [HeatmapFormat::Csv, HeatmapFormat::Pgm] {
                let p = heatmap_path(&args.out, name, fmt);
                if p.exists() {
                    return Err(Error::RefuseOverwrite(p));
                }
            }
        }
    }
    if let (Some(p), Some(a)) = (&jac.pca_features, jac.decision_value) {
        println!("p = {p}, a(p) = {a:.6}");
    }
    let mut written = Vec::new();
    for (name, cam) in &maps {
        written.extend(write_map(&args.out, name, cam, args.render_size)?);
    }
    println!("wrote {} heatmaps to {}", maps.len(), args.out.display());
    Ok(written)
}

/// Runs the oracle and effect-function checks; `Ok(false)` when any fails.
pub fn cmd_verify(args: &VerifyArgs) -> Result<bool> {
    let cfg = VerifyConfig {
        seed: args.seed,
        per_cell: args.cases,
        fd: FdConfig::new(FdConfig::default().step, args.tol)?,
        corrupt_weight: args.corrupt_weight,
    };
    let report = verify::run(&cfg)?;
    println!("{report}");
    Ok(report.passed())
}

pub fn cmd_demo(args: &DemoArgs) -> Result<()> {
    let activation = match args.activation {
        ActivationArg::Sigmoid => Activation::Sigmoid,
        ActivationArg::Relu => Activation::Relu,
    };
    let bundle = demo_bundle(args.seed, &BlobConfig::default(), activation)?;
    save_bundle(&bundle, &args.out, args.force)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn exit_for(err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(if err.is_validation() { EXIT_INVALID } else { EXIT_NUMERIC })
}

pub fn run(cli: Cli) -> ExitCode {
    let outcome = match &cli.command {
        Command::Fit(a) => cmd_fit(a).map(|_| true),
        Command::Cam(a) => cmd_cam(a).map(|_| true),
        Command::Verify(a) => cmd_verify(a),
        Command::Demo(a) => cmd_demo(a).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_VERIFY),
        Err(e) => exit_for(&e),
    }
}
