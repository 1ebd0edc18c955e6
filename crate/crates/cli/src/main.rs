//! Command-line frontend: synthetic scenes, segmentation dumps,
//! classification runs, repeated-trial evaluation and map rendering.
//!
//! All randomness flows from the explicit `--seed` flags; identical
//! invocations produce byte-identical outputs. On error the partial output
//! files of the failed command are removed and the exit code is nonzero.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mfgl::data_io::{
    generate_synthetic_scene, load_cube, load_ground_truth, read_pgm, render_label_map, save_cube,
    save_ground_truth, write_pgm, ClassPalette,
};
use mfgl::evaluation::{run_trials, sample_training_labels, Method};
use mfgl::pipelines::{run_mgl, run_pmgl, segment_only, PipelineConfig};
use mfgl::Result;

#[derive(Parser)]
#[command(
    name = "mfgl",
    about = "Superpixel multi-feature graph classification",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic blocked scene (cube, ground truth, palette).
    Synth(SynthArgs),
    /// Segment a cube and write the superpixel ids as a PGM.
    Segment(SegmentArgs),
    /// Classify a cube from sampled training labels and write the maps.
    Classify(ClassifyArgs),
    /// Repeated randomized trials; writes a CSV and JSON report.
    Eval(EvalArgs),
    /// Render a prediction PGM to a color PPM via a palette.
    Render(RenderArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    width: usize,
    #[arg(long)]
    height: usize,
    #[arg(long)]
    bands: usize,
    #[arg(long)]
    classes: usize,
    /// Gaussian noise sigma added to each sample.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Pipeline configuration JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override: number of superpixels.
    #[arg(long)]
    superpixels: Option<usize>,
    /// Override: SLIC compactness.
    #[arg(long)]
    compactness: Option<f64>,
    /// Override: edges per node.
    #[arg(long)]
    k: Option<usize>,
    /// Override: spatial-mean smoothing scalar.
    #[arg(long)]
    h: Option<f64>,
    /// Override: PCA explained-variance target.
    #[arg(long)]
    variance_target: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut config = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.superpixels {
            config.superpixel_count = v;
        }
        if let Some(v) = self.compactness {
            config.compactness = v;
        }
        if let Some(v) = self.k {
            config.k = v;
        }
        if let Some(v) = self.h {
            config.h = v;
        }
        if let Some(v) = self.variance_target {
            config.variance_target = v;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct SegmentArgs {
    /// Cube header JSON.
    #[arg(long)]
    cube: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Output PGM of superpixel ids.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    cube: PathBuf,
    /// Ground-truth PGM used to sample the training labels.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    labels_per_class: usize,
    /// mgl or pmgl.
    #[arg(long)]
    method: String,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rendered classification map (PPM).
    #[arg(long)]
    out_map: PathBuf,
    /// Raw per-pixel predicted classes (PGM).
    #[arg(long)]
    out_pred: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    cube: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    method: String,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    per_class: usize,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report CSV path; a JSON report is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Parallel trials.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct RenderArgs {
    /// Prediction (or ground truth) PGM.
    #[arg(long)]
    pred: PathBuf,
    /// Palette JSON; a generated palette is used when omitted.
    #[arg(long)]
    palette: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Tracks files written by a command so they can be removed on failure.
struct OutputGuard {
    written: Vec<PathBuf>,
    armed: bool,
}

impl OutputGuard {
    fn new() -> Self {
        OutputGuard {
            written: Vec::new(),
            armed: true,
        }
    }

    fn track(&mut self, path: &Path) {
        self.written.push(path.to_path_buf());
    }

    fn disarm(&mut self) {
        self.armed = false;
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if self.armed {
            for path in &self.written {
                let _ = std::fs::remove_file(path);
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut guard = OutputGuard::new();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args, &mut guard),
        Command::Segment(args) => cmd_segment(args, &mut guard),
        Command::Classify(args) => cmd_classify(args, &mut guard),
        Command::Eval(args) => cmd_eval(args, &mut guard),
        Command::Render(args) => cmd_render(args, &mut guard),
    };
    match result {
        Ok(()) => {
            guard.disarm();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_synth(args: SynthArgs, guard: &mut OutputGuard) -> Result<()> {
    std::fs::create_dir_all(&args.out).map_err(|e| mfgl::Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    let (cube, gt) = generate_synthetic_scene(
        args.width,
        args.height,
        args.bands,
        args.classes,
        args.noise,
        args.seed,
    )?;
    let header = args.out.join("cube.json");
    guard.track(&header);
    guard.track(&args.out.join("cube.raw"));
    save_cube(&cube, &header)?;
    let gt_path = args.out.join("gt.pgm");
    guard.track(&gt_path);
    save_ground_truth(&gt, &gt_path)?;
    let palette_path = args.out.join("palette.json");
    guard.track(&palette_path);
    ClassPalette::generate(gt.num_classes).save(&palette_path)?;
    println!(
        "wrote {}x{}x{} cube with {} classes to {}",
        args.width,
        args.height,
        args.bands,
        args.classes,
        args.out.display()
    );
    Ok(())
}

fn cmd_segment(args: SegmentArgs, guard: &mut OutputGuard) -> Result<()> {
    let config = args.config.resolve()?;
    let cube = load_cube(&args.cube)?;
    let seg = segment_only(&cube, &config)?;
    if seg.num_superpixels > 65536 {
        return Err(mfgl::Error::InvalidArgument(format!(
            "{} superpixels exceed the PGM id range",
            seg.num_superpixels
        )));
    }
    guard.track(&args.out);
    let maxval = (seg.num_superpixels as u32 - 1).max(1);
    write_pgm(&args.out, seg.width, seg.height, maxval, &seg.assignment)?;
    println!(
        "{} superpixels -> {}",
        seg.num_superpixels,
        args.out.display()
    );
    Ok(())
}

fn cmd_classify(args: ClassifyArgs, guard: &mut OutputGuard) -> Result<()> {
    let method: Method = args.method.parse()?;
    let config = args.config.resolve()?;
    let cube = load_cube(&args.cube)?;
    let gt = load_ground_truth(&args.gt)?;
    if gt.width != cube.width || gt.height != cube.height {
        return Err(mfgl::Error::Dimension(format!(
            "ground truth {}x{} does not match cube {}x{}",
            gt.width, gt.height, cube.width, cube.height
        )));
    }
    let train = sample_training_labels(&gt, args.labels_per_class, args.seed)?;
    let (map, diag) = match method {
        Method::Mgl => run_mgl(&cube, &train, gt.num_classes, &config)?,
        Method::Pmgl => run_pmgl(&cube, &train, gt.num_classes, &config)?,
    };

    guard.track(&args.out_pred);
    write_pgm(
        &args.out_pred,
        gt.width,
        gt.height,
        gt.num_classes as u32,
        &map,
    )?;
    guard.track(&args.out_map);
    let palette = ClassPalette::generate(gt.num_classes);
    render_label_map(&map, gt.width, gt.height, &palette, &args.out_map)?;

    println!(
        "classified with {} superpixels, {} reduced bands",
        diag.num_superpixels, diag.reduced_bands
    );
    if let Some(c) = &diag.feature_weights {
        println!(
            "learned view weights: [{}]",
            c.iter()
                .map(|v| format!("{v:.4}"))
                .collect::<Vec<_>>()
                .join(", ")
        );
    }
    for (stage, ms) in &diag.stage_timings_ms {
        println!("  {stage}: {ms:.1} ms");
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs, guard: &mut OutputGuard) -> Result<()> {
    let method: Method = args.method.parse()?;
    let config = args.config.resolve()?;
    let cube = load_cube(&args.cube)?;
    let gt = load_ground_truth(&args.gt)?;
    let report = run_trials(
        &cube,
        &gt,
        method,
        &config,
        args.per_class,
        args.trials,
        args.seed,
        args.jobs,
    )?;
    guard.track(&args.out);
    report.save_csv(&args.out)?;
    let json_path = args.out.with_extension("json");
    guard.track(&json_path);
    report.save_json(&json_path)?;
    println!(
        "{:?} over {} trials: OA {:.4} +/- {:.4}, AA {:.4} +/- {:.4}, kappa {:.4} +/- {:.4}",
        report.method,
        report.num_trials,
        report.mean_oa,
        report.std_oa,
        report.mean_aa,
        report.std_aa,
        report.mean_kappa,
        report.std_kappa
    );
    Ok(())
}

fn cmd_render(args: RenderArgs, guard: &mut OutputGuard) -> Result<()> {
    let (width, height, _maxval, values) = read_pgm(&args.pred)?;
    let palette = match &args.palette {
        Some(path) => ClassPalette::load(path)?,
        None => {
            let max = values.iter().copied().max().unwrap_or(1).max(1);
            ClassPalette::generate(max as usize)
        }
    };
    guard.track(&args.out);
    render_label_map(&values, width, height, &palette, &args.out)?;
    Ok(())
}
