//! Command-line driver: synthetic dataset generation, training, rendering,
//! evaluation, the six-row architecture ablation, and sensor fitting.
//!
//! Every command is deterministic given its seed and writes files only; exit
//! codes are 0 (success), 2 (config error), 3 (data error), 4 (numerical
//! failure).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hyperfield::checkpoint::{load_checkpoint, CheckpointMeta};
use hyperfield::config::{echo_config, read_json_config, FieldSpec, TrainConfig};
use hyperfield::dataio::{
    load_dataset, load_poses, read_cube, read_response, read_rgb_image, write_cube,
    write_response, write_rgb_image, Dataset,
};
use hyperfield::error::{AppError, Result};
use hyperfield::synth::{
    generate_synthetic_dataset, ring_cameras, three_sphere_scene, wavelength_axis, SyntheticScene,
};
use hyperfield::trainer::{
    evaluate_frames, quadrant_report, render_full_image, run_training, split_dataset,
    training_channels, EvalSummary, StepLog,
};
use hyperfield_core::autodiff::AdamState;
use hyperfield_core::field::{build_field, ABLATION_ROWS, CHANNEL_TOL_NM};
use hyperfield_core::sampling::{compute_scene_box, CameraFrame, SceneBox};
use hyperfield_core::spectral::{fit_linear_map, pseudo_rgb_fixed, simulate_sensor, superres_split};

#[derive(Parser)]
#[command(
    name = "hyperfield",
    about = "Wavelength-conditioned radiance fields over hyperspectral cubes",
    version
)]
struct Cli {
    /// Cap on worker threads. The engine is single-threaded, so any cap of
    /// at least 1 is honored as-is.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic hyperspectral dataset (HSC1 cubes + poses).
    Synth(SynthArgs),
    /// Train a field on a dataset directory.
    Train(TrainArgs),
    /// Render a trained field from a dataset camera.
    Render(RenderArgs),
    /// Score a trained field against its dataset.
    Eval(EvalArgs),
    /// Train and score all six architecture rows.
    Ablate(AblateArgs),
    /// Fit or apply an RGB sensor response.
    Sensor(SensorArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Scene JSON; the built-in three-sphere scene when omitted.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    frames: usize,
    #[arg(long, default_value_t = 48)]
    width: usize,
    #[arg(long, default_value_t = 48)]
    height: usize,
    /// Number of wavelength channels.
    #[arg(long, default_value_t = 16)]
    channels: usize,
    /// First channel wavelength in nanometres.
    #[arg(long, default_value_t = 450.0)]
    lo_nm: f64,
    /// Last channel wavelength in nanometres.
    #[arg(long, default_value_t = 650.0)]
    hi_nm: f64,
    /// Radius of the camera ring.
    #[arg(long, default_value_t = 2.4)]
    ring_radius: f64,
    /// Camera height above the scene center.
    #[arg(long, default_value_t = 0.5)]
    elevation: f64,
    #[arg(long, default_value_t = 45.0)]
    fov_deg: f64,
    /// Ray-march steps for the analytic reference renderer.
    #[arg(long, default_value_t = 512)]
    march_steps: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (poses.json + frames/).
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the checkpoint, loss CSV, and echoed configs.
    #[arg(long)]
    out: PathBuf,
    /// Field architecture JSON; defaults when omitted.
    #[arg(long)]
    field: Option<PathBuf>,
    /// Training hyperparameter JSON; defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Resume from this checkpoint (architecture and hyperparameters come
    /// from the checkpoint; only --steps may override).
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Override total training steps.
    #[arg(long)]
    steps: Option<u64>,
    /// Override the RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override rays per step.
    #[arg(long)]
    rays: Option<usize>,
    /// Train on this many evenly spaced wavelengths, holding out the rest.
    #[arg(long)]
    keep_wavelengths: Option<usize>,
    /// Frustum depth range for deriving the scene box when the dataset has
    /// no scene.json.
    #[arg(long, num_args = 2, value_names = ["NEAR", "FAR"])]
    depth_range: Option<Vec<f64>>,
    /// Print a progress line every this many steps.
    #[arg(long, default_value_t = 100)]
    log_every: u64,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory providing the camera poses.
    #[arg(long)]
    data: PathBuf,
    /// Frame index whose camera to render from.
    #[arg(long, default_value_t = 0)]
    frame: usize,
    /// Comma-separated wavelengths in nm, or "all" for the trained axis.
    #[arg(long, default_value = "all")]
    wavelengths: String,
    /// Output HSC1 cube path.
    #[arg(long)]
    out: PathBuf,
    /// Also write a pseudo-RGB preview (622/555/503 nm bands) here.
    #[arg(long)]
    rgb: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Which frames to score: train, eval, or all.
    #[arg(long, default_value = "eval")]
    split: String,
    /// Cap frames scored per split (0 = no cap).
    #[arg(long, default_value_t = 0)]
    max_frames: usize,
    /// Output directory for metrics CSVs.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output directory; each row trains in its own subdirectory and can
    /// resume from a partial run.
    #[arg(long)]
    out: PathBuf,
    /// Base field architecture JSON (variants are overridden per row).
    #[arg(long)]
    field: Option<PathBuf>,
    /// Training hyperparameter JSON shared by all rows.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, num_args = 2, value_names = ["NEAR", "FAR"])]
    depth_range: Option<Vec<f64>>,
    #[arg(long, default_value_t = 100)]
    log_every: u64,
}

#[derive(Args)]
struct SensorArgs {
    #[command(subcommand)]
    command: SensorCommand,
}

#[derive(Subcommand)]
enum SensorCommand {
    /// Fit a per-wavelength RGB response from a cube and its RGB rendition.
    Fit {
        #[arg(long)]
        cube: PathBuf,
        /// PPM image of the same scene as seen by the target sensor.
        #[arg(long)]
        rgb: PathBuf,
        /// Output response CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a response CSV to a cube, producing an RGB raster.
    Simulate {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        response: PathBuf,
        /// Output PPM path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Render(args) => cmd_render(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Sensor(args) => cmd_sensor(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let scene = match &args.scene {
        None => three_sphere_scene(),
        Some(path) => load_scene(path)?,
    };
    if args.channels < 2 {
        return Err(AppError::config("a cube needs at least 2 channels"));
    }
    if !(args.lo_nm > 0.0 && args.lo_nm < args.hi_nm) {
        return Err(AppError::config(format!(
            "wavelength range must satisfy 0 < lo < hi, got [{}, {}]",
            args.lo_nm, args.hi_nm
        )));
    }
    let wavelengths = wavelength_axis(args.channels, args.lo_nm, args.hi_nm);
    let cameras = ring_cameras(
        args.frames,
        args.ring_radius,
        args.elevation,
        args.width,
        args.height,
        args.fov_deg,
    );
    generate_synthetic_dataset(&scene, &cameras, &wavelengths, args.march_steps, &args.out)?;
    println!(
        "wrote {} frames of {}x{}x{} to {}",
        args.frames,
        args.width,
        args.height,
        args.channels,
        args.out.display()
    );
    Ok(())
}

fn load_scene(path: &Path) -> Result<SyntheticScene> {
    let text = fs::read_to_string(path)
        .map_err(|e| AppError::data(format!("cannot read {}: {e}", path.display())))?;
    let scene: SyntheticScene = serde_json::from_str(&text)
        .map_err(|e| AppError::config(format!("malformed scene JSON: {e}")))?;
    scene.validate()?;
    Ok(scene)
}

/// Scene bounds for a dataset: the generator's scene.json when present,
/// otherwise the intersection of the camera frustums over `depth_range`.
fn dataset_scene_box(
    data: &Path,
    depth_range: Option<&[f64]>,
    cameras: &[CameraFrame],
) -> Result<SceneBox> {
    let scene_path = data.join("scene.json");
    if scene_path.exists() {
        return Ok(load_scene(&scene_path)?.bounds());
    }
    let range = match depth_range {
        Some(r) => [r[0], r[1]],
        None => [0.5, 8.0],
    };
    Ok(compute_scene_box(cameras, range)?)
}

fn print_step(log: &StepLog, total: u64, every: u64) {
    let done = log.step + 1;
    if done % every == 0 || done == total {
        println!(
            "step {done}/{total}  lr {:.3e}  recon {:.6}  interlevel {:.6}  total {:.6}  ({:.2} s/step)",
            log.lr, log.recon, log.interlevel, log.total, log.seconds
        );
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let dataset = load_dataset(&args.data)?;
    let n_channels = dataset.wavelengths.len();

    let (mut field, mut adam, cfg, spec, start_step) = match &args.resume {
        Some(path) => {
            let (field, meta, adam) = load_checkpoint(path)?;
            let adam = adam.ok_or_else(|| {
                AppError::data(format!(
                    "{} has no optimizer state and cannot resume training",
                    path.display()
                ))
            })?;
            let mut cfg = meta.train.clone();
            if let Some(s) = args.steps {
                cfg.total_steps = s;
            }
            (field, adam, cfg, meta.field, meta.step)
        }
        None => {
            let mut cfg: TrainConfig = read_json_config(args.config.as_deref())?;
            if let Some(s) = args.steps {
                cfg.total_steps = s;
            }
            if let Some(s) = args.seed {
                cfg.seed = s;
            }
            if let Some(r) = args.rays {
                cfg.rays_per_step = r;
            }
            if let Some(k) = args.keep_wavelengths {
                cfg.keep_wavelengths = Some(k);
            }
            cfg.validate()?;
            let spec: FieldSpec = read_json_config(args.field.as_deref())?;
            let channels = training_channels(n_channels, cfg.keep_wavelengths)?;
            let lambdas: Vec<f64> = channels.iter().map(|&c| dataset.wavelengths[c]).collect();
            let cameras: Vec<CameraFrame> =
                dataset.frames.iter().map(|f| f.camera.clone()).collect();
            let scene = dataset_scene_box(&args.data, args.depth_range.as_deref(), &cameras)?;
            let core_cfg = spec.to_core(lambdas, scene)?;
            let field = build_field(&core_cfg, cfg.seed)?;
            let adam = AdamState::new(&field.params, cfg.base_lr);
            (field, adam, cfg, spec, 0)
        }
    };

    echo_config(&cfg, &args.out, "train.json")?;
    echo_config(&spec, &args.out, "field.json")?;
    if start_step >= cfg.total_steps {
        println!("checkpoint already at step {start_step}; nothing to train");
        return Ok(());
    }
    println!(
        "training {} -> {} (steps {start_step}..{}, {} parameters)",
        args.data.display(),
        args.out.display(),
        cfg.total_steps,
        field.params.total_scalars()
    );
    let total = cfg.total_steps;
    let every = args.log_every.max(1);
    run_training(
        &mut field,
        &mut adam,
        &dataset,
        &cfg,
        &args.out,
        start_step,
        |log| print_step(log, total, every),
    )?;
    println!(
        "done; checkpoint at {}",
        args.out.join("checkpoint.hfck").display()
    );
    Ok(())
}

fn parse_wavelengths(arg: &str, axis: &[f64]) -> Result<Vec<f64>> {
    if arg == "all" {
        return Ok(axis.to_vec());
    }
    let mut out = Vec::new();
    for tok in arg.split(',') {
        let tok = tok.trim();
        if tok.is_empty() {
            continue;
        }
        let v: f64 = tok
            .parse()
            .map_err(|_| AppError::config(format!("bad wavelength {tok:?}")))?;
        if !(v.is_finite() && v > 0.0) {
            return Err(AppError::config(format!(
                "wavelengths must be positive and finite, got {v}"
            )));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(AppError::config("no wavelengths requested"));
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out.dedup();
    Ok(out)
}

fn cmd_render(args: RenderArgs) -> Result<()> {
    let (field, meta, _) = load_checkpoint(&args.checkpoint)?;
    let cameras = load_poses(&args.data.join("poses.json"))?;
    let camera = cameras.get(args.frame).ok_or_else(|| {
        AppError::config(format!(
            "frame {} out of range; the pose file has {} frames",
            args.frame,
            cameras.len()
        ))
    })?;
    let lambdas = parse_wavelengths(&args.wavelengths, &field.config.channel_wavelengths)?;
    let rc = meta.train.render_config();
    let cube = render_full_image(&field, camera, &lambdas, &rc)?;
    write_cube(&cube, &args.out)?;
    println!(
        "rendered {}x{}x{} cube to {}",
        cube.width(),
        cube.height(),
        cube.n_channels(),
        args.out.display()
    );
    if let Some(rgb_path) = &args.rgb {
        let rgb = pseudo_rgb_fixed(&cube)?;
        write_rgb_image(&rgb, cube.width(), cube.height(), rgb_path)?;
        println!("wrote pseudo-RGB preview to {}", rgb_path.display());
    }
    Ok(())
}

/// Check the checkpoint was trained against this dataset's wavelength axis.
fn check_dataset_matches(meta: &CheckpointMeta, dataset: &Dataset) -> Result<Vec<usize>> {
    let channels = training_channels(dataset.wavelengths.len(), meta.train.keep_wavelengths)?;
    if channels.len() != meta.wavelengths.len()
        || channels
            .iter()
            .zip(&meta.wavelengths)
            .any(|(&c, &w)| (dataset.wavelengths[c] - w).abs() > CHANNEL_TOL_NM)
    {
        return Err(AppError::data(
            "checkpoint wavelengths do not match this dataset's axis",
        ));
    }
    Ok(channels)
}

fn cap_frames(frames: &[usize], max: usize) -> Vec<usize> {
    if max == 0 || frames.len() <= max {
        frames.to_vec()
    } else {
        frames[..max].to_vec()
    }
}

fn write_metrics_csv(summary: &EvalSummary, path: &Path) -> Result<()> {
    use std::io::Write as _;
    let mut f = fs::File::create(path)?;
    writeln!(f, "wavelength_nm,psnr_db,ssim")?;
    let n_frames = summary.frames.len() as f64;
    let n_channels = summary.frames[0].metrics.channels.len();
    for c in 0..n_channels {
        let wl = summary.frames[0].metrics.channels[c].wavelength_nm;
        let psnr: f64 = summary
            .frames
            .iter()
            .map(|e| e.metrics.channels[c].psnr_db)
            .sum::<f64>()
            / n_frames;
        let ssim: f64 = summary
            .frames
            .iter()
            .map(|e| e.metrics.channels[c].ssim)
            .sum::<f64>()
            / n_frames;
        writeln!(f, "{wl},{psnr},{ssim}")?;
    }
    writeln!(f, "mean,{},{}", summary.mean_psnr_db, summary.mean_ssim)?;
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (field, meta, _) = load_checkpoint(&args.checkpoint)?;
    let dataset = load_dataset(&args.data)?;
    let channels = check_dataset_matches(&meta, &dataset)?;
    let (train_frames, eval_frames) =
        split_dataset(dataset.frames.len(), meta.train.train_fraction)?;
    let rc = meta.train.render_config();
    fs::create_dir_all(&args.out)?;

    let groups: Vec<(&str, Vec<usize>)> = match args.split.as_str() {
        "train" => vec![("train", cap_frames(&train_frames, args.max_frames))],
        "eval" => vec![("eval", cap_frames(&eval_frames, args.max_frames))],
        "all" => vec![
            ("train", cap_frames(&train_frames, args.max_frames)),
            ("eval", cap_frames(&eval_frames, args.max_frames)),
        ],
        other => {
            return Err(AppError::config(format!(
                "--split must be train, eval, or all, got {other:?}"
            )))
        }
    };
    for (name, frames) in &groups {
        let summary = evaluate_frames(&field, &dataset, frames, &channels, &rc)?;
        let path = args.out.join(format!("metrics_{name}.csv"));
        write_metrics_csv(&summary, &path)?;
        println!(
            "{name}: {} frames, mean PSNR {:.2} dB, mean SSIM {:.4} -> {}",
            frames.len(),
            summary.mean_psnr_db,
            summary.mean_ssim,
            path.display()
        );
    }

    // Four-quadrant generalization report when wavelengths were withheld.
    if let Some(keep) = meta.train.keep_wavelengths {
        let split = superres_split(dataset.wavelengths.len(), keep)?;
        let train_cap = cap_frames(&train_frames, args.max_frames.max(3).min(3));
        let eval_cap = cap_frames(&eval_frames, args.max_frames);
        let report = quadrant_report(
            &field,
            &dataset,
            &train_cap,
            &eval_cap,
            &split.train,
            &split.held_out,
            &rc,
        )?;
        use std::io::Write as _;
        let path = args.out.join("quadrants.csv");
        let mut f = fs::File::create(&path)?;
        writeln!(f, "cell,psnr_db,ssim")?;
        let mut row = |name: &str, cell: Option<&hyperfield::trainer::QuadrantCell>| match cell {
            Some(c) => writeln!(f, "{name},{},{}", c.psnr_db, c.ssim),
            None => writeln!(f, "{name},,"),
        };
        row("train_frames_seen_wavelengths", Some(&report.train_frames_seen))?;
        row("train_frames_held_wavelengths", report.train_frames_held.as_ref())?;
        row("eval_frames_seen_wavelengths", report.eval_frames_seen.as_ref())?;
        row("eval_frames_held_wavelengths", report.eval_frames_held.as_ref())?;
        match &report.refusal {
            Some(msg) => println!("held-out wavelengths refused: {msg}"),
            None => println!("quadrant report -> {}", path.display()),
        }
    }
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let dataset = load_dataset(&args.data)?;
    let mut cfg: TrainConfig = read_json_config(args.config.as_deref())?;
    if let Some(s) = args.steps {
        cfg.total_steps = s;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let base_spec: FieldSpec = read_json_config(args.field.as_deref())?;
    let channels = training_channels(dataset.wavelengths.len(), cfg.keep_wavelengths)?;
    let lambdas: Vec<f64> = channels.iter().map(|&c| dataset.wavelengths[c]).collect();
    let cameras: Vec<CameraFrame> = dataset.frames.iter().map(|f| f.camera.clone()).collect();
    let scene = dataset_scene_box(&args.data, args.depth_range.as_deref(), &cameras)?;
    let (_, eval_frames) = split_dataset(dataset.frames.len(), cfg.train_fraction)?;
    fs::create_dir_all(&args.out)?;

    let every = args.log_every.max(1);
    let mut rows = Vec::new();
    for (i, (name, rad, den, prop)) in ABLATION_ROWS.iter().enumerate() {
        let row_dir = args.out.join(name);
        let mut row_cfg = cfg.clone();
        // Each row runs under its own seed so rows are independent draws.
        row_cfg.seed = cfg.seed.wrapping_add(i as u64);
        let mut spec = base_spec.clone();
        spec.radiance = rad.as_str().into();
        spec.density = den.as_str().into();
        spec.proposal = prop.as_str().into();

        let ck_path = row_dir.join("checkpoint.hfck");
        let (mut field, mut adam, start) = if ck_path.exists() {
            let (field, meta, adam) = load_checkpoint(&ck_path)?;
            let adam = adam.ok_or_else(|| {
                AppError::data(format!("{} has no optimizer state", ck_path.display()))
            })?;
            (field, adam, meta.step)
        } else {
            let core_cfg = spec.to_core(lambdas.clone(), scene)?;
            let field = build_field(&core_cfg, row_cfg.seed)?;
            let adam = AdamState::new(&field.params, row_cfg.base_lr);
            (field, adam, 0)
        };

        if start < row_cfg.total_steps {
            println!("[{name}] training steps {start}..{}", row_cfg.total_steps);
            echo_config(&row_cfg, &row_dir, "train.json")?;
            echo_config(&spec, &row_dir, "field.json")?;
            let total = row_cfg.total_steps;
            run_training(
                &mut field,
                &mut adam,
                &dataset,
                &row_cfg,
                &row_dir,
                start,
                |log| print_step(log, total, every),
            )?;
        } else {
            println!("[{name}] already trained to step {start}");
        }

        let summary =
            evaluate_frames(&field, &dataset, &eval_frames, &channels, &row_cfg.render_config())?;
        println!(
            "[{name}] eval PSNR {:.2} dB, SSIM {:.4}",
            summary.mean_psnr_db, summary.mean_ssim
        );
        rows.push((*name, *rad, *den, *prop, summary));
    }

    use std::io::Write as _;
    let table_path = args.out.join("ablation.csv");
    let mut f = fs::File::create(&table_path)?;
    writeln!(f, "row,radiance,density,proposal,psnr_db,ssim")?;
    for (name, rad, den, prop, summary) in &rows {
        writeln!(
            f,
            "{name},{},{},{},{},{}",
            rad.as_str(),
            den.as_str(),
            prop.as_str(),
            summary.mean_psnr_db,
            summary.mean_ssim
        )?;
    }
    println!("ablation table -> {}", table_path.display());
    Ok(())
}

fn cmd_sensor(args: SensorArgs) -> Result<()> {
    match args.command {
        SensorCommand::Fit { cube, rgb, out } => {
            let hs = read_cube(&cube)?;
            let (rgb_data, w, h) = read_rgb_image(&rgb)?;
            if (w, h) != (hs.width(), hs.height()) {
                return Err(AppError::data(format!(
                    "cube is {}x{} but RGB image is {w}x{h}",
                    hs.width(),
                    hs.height()
                )));
            }
            let response = fit_linear_map(hs.data(), &rgb_data, hs.n_channels())?;
            write_response(hs.wavelengths(), &response, &out)?;
            println!(
                "fit a {}-channel response from {} pixels -> {}",
                hs.n_channels(),
                w * h,
                out.display()
            );
        }
        SensorCommand::Simulate {
            cube,
            response,
            out,
        } => {
            let hs = read_cube(&cube)?;
            let (wavelengths, resp) = read_response(&response)?;
            if wavelengths.len() != hs.n_channels()
                || wavelengths
                    .iter()
                    .zip(hs.wavelengths())
                    .any(|(&a, &b)| (a - b).abs() > CHANNEL_TOL_NM)
            {
                return Err(AppError::data(
                    "response wavelengths do not match the cube's axis",
                ));
            }
            let rgb = simulate_sensor(&hs, &resp)?;
            write_rgb_image(&rgb, hs.width(), hs.height(), &out)?;
            println!(
                "simulated sensor for {}x{} cube -> {}",
                hs.width(),
                hs.height(),
                out.display()
            );
        }
    }
    Ok(())
}
