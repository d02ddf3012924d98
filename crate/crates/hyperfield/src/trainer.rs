//! Training loop and evaluation drivers.
//!
//! Every stochastic choice in a step — wavelength subset, active image cache,
//! pixel batch, sampling jitter — draws from a stream derived statelessly
//! from `(seed, step, purpose)`, so a run resumed from a checkpoint replays
//! the exact trajectory of an uninterrupted one.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use hyperfield_core::autodiff::{adam_step, lr_schedule, AdamState, Tape, Tensor};
use hyperfield_core::cube::HyperCube;
use hyperfield_core::field::{DensityVariant, Field, RadianceVariant, CHANNEL_TOL_NM};
use hyperfield_core::metrics::{spectrum_metrics, SpectrumMetrics};
use hyperfield_core::render::{forward_train, render_rays, RenderConfig, SampleRngs};
use hyperfield_core::rng::{stream, Purpose, Rng};
use hyperfield_core::sampling::{ray_box_clip, CameraFrame, RayBatch, SceneBox};
use hyperfield_core::spectral::superres_split;
use hyperfield_core::rng::RngCore as _;

use crate::checkpoint::save_checkpoint;
use crate::config::TrainConfig;
use crate::dataio::Dataset;
use crate::error::{AppError, Result};

/// Header of the per-step loss log.
pub const LOSS_CSV_HEADER: &str = "step,lr,recon,interlevel,total,seconds";

/// Per-step training record, one CSV row.
#[derive(Debug, Clone, Copy)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub recon: f64,
    pub interlevel: f64,
    pub total: f64,
    pub seconds: f64,
}

impl StepLog {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.lr, self.recon, self.interlevel, self.total, self.seconds
        )
    }
}

/// Deterministic train/eval split over `n` frames.
///
/// Eval frames are spread evenly across the capture order (index
/// `floor((i + 0.5) · n / n_eval)`), so a camera ring contributes held-out
/// views from all around the scene rather than one arc.
pub fn split_dataset(n: usize, train_fraction: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n == 0 {
        return Err(AppError::data("dataset has no frames"));
    }
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(AppError::config(format!(
            "train_fraction must lie in (0, 1], got {train_fraction}"
        )));
    }
    let n_train = ((n as f64) * train_fraction).floor() as usize;
    if n_train == 0 {
        return Err(AppError::config(format!(
            "train_fraction {train_fraction} leaves no training frames out of {n}"
        )));
    }
    let n_eval = n - n_train;
    let mut is_eval = vec![false; n];
    for i in 0..n_eval {
        let idx = (((i as f64) + 0.5) * (n as f64) / (n_eval as f64)) as usize;
        is_eval[idx.min(n - 1)] = true;
    }
    let train: Vec<usize> = (0..n).filter(|&i| !is_eval[i]).collect();
    let eval: Vec<usize> = (0..n).filter(|&i| is_eval[i]).collect();
    Ok((train, eval))
}

/// Dataset channel indices the field trains on: all of them, or the evenly
/// spaced kept subset when spectral super-resolution is requested.
pub fn training_channels(n_channels: usize, keep: Option<usize>) -> Result<Vec<usize>> {
    match keep {
        None => Ok((0..n_channels).collect()),
        Some(k) => Ok(superres_split(n_channels, k)?.train),
    }
}

/// Draw `k` distinct entries of `pool` (partial Fisher–Yates), returned in
/// ascending order.
fn choose_sorted(pool: &[usize], k: usize, rng: &mut Rng) -> Vec<usize> {
    let mut idx = pool.to_vec();
    let n = idx.len();
    for i in 0..k.min(n) {
        let j = i + rng.gen_range(0..n - i);
        idx.swap(i, j);
    }
    idx.truncate(k.min(n));
    idx.sort_unstable();
    idx
}

/// The wavelength channels used at `step`: all of `pool`, or a fresh random
/// subset of size `k` drawn from the step's `Lambda` stream.
pub fn sample_wavelengths(pool: &[usize], k: Option<usize>, seed: u64, step: u64) -> Vec<usize> {
    let k = k.unwrap_or(pool.len()).min(pool.len());
    if k == pool.len() {
        return pool.to_vec();
    }
    let mut rng = stream(seed, step, Purpose::Lambda);
    choose_sorted(pool, k, &mut rng)
}

/// The frames rays may be drawn from at `step`. The cache holds the whole
/// training split when `cache_images` is unset, and otherwise a random
/// subset refreshed every `cache_refresh_steps` steps.
pub fn active_cache(
    train_frames: &[usize],
    cache_images: Option<usize>,
    cache_refresh_steps: u64,
    seed: u64,
    step: u64,
) -> Vec<usize> {
    let k = cache_images.unwrap_or(train_frames.len()).min(train_frames.len());
    if k == train_frames.len() {
        return train_frames.to_vec();
    }
    let refresh_index = step / cache_refresh_steps.max(1);
    let mut rng = stream(seed, refresh_index, Purpose::Cache);
    choose_sorted(train_frames, k, &mut rng)
}

/// Draw exactly `rays_per_step` rays that hit the scene box, with their
/// spectra at the chosen channels as a `(rays·λ, 1)` target column
/// (wavelength fastest, matching the compositing layout).
///
/// Pixels whose rays miss the box are redrawn; a scene box the cameras
/// barely see is reported rather than spun on forever.
pub fn sample_batch(
    dataset: &Dataset,
    cache: &[usize],
    lambda_idx: &[usize],
    rays_per_step: usize,
    scene: &SceneBox,
    seed: u64,
    step: u64,
) -> Result<(RayBatch, Tensor)> {
    if cache.is_empty() {
        return Err(AppError::config("the active image cache is empty"));
    }
    let mut rng = stream(seed, step, Purpose::RayPixels);
    let mut batch = RayBatch::default();
    let mut targets = Vec::with_capacity(rays_per_step * lambda_idx.len());
    let cap = rays_per_step.saturating_mul(256).max(4096);
    let mut attempts = 0usize;
    while batch.len() < rays_per_step {
        attempts += 1;
        if attempts > cap {
            return Err(AppError::data(format!(
                "collected only {} of {} rays after {} draws; \
                 the cameras barely see the scene box",
                batch.len(),
                rays_per_step,
                cap
            )));
        }
        let f = cache[rng.gen_range(0..cache.len())];
        let frame = &dataset.frames[f];
        let u = rng.gen_range(0..frame.camera.width);
        let v = rng.gen_range(0..frame.camera.height);
        let origin = frame.camera.position();
        let dir = frame.camera.pixel_direction(u as f64, v as f64);
        let Some((near, far)) = ray_box_clip(origin, dir, scene) else {
            continue;
        };
        if far <= near {
            continue;
        }
        batch.origins.push(origin);
        batch.directions.push(dir);
        batch.pixels.push((u as u32, v as u32));
        batch.near.push(near);
        batch.far.push(far);
        for &c in lambda_idx {
            targets.push(frame.cube.at(u, v, c));
        }
    }
    let targets = Tensor::matrix(batch.len() * lambda_idx.len(), 1, targets)?;
    Ok((batch, targets))
}

/// The field's wavelength axis must be exactly the training channels of the
/// dataset; anything else silently trains against the wrong spectra.
fn check_axis(field: &Field, dataset: &Dataset, channels: &[usize]) -> Result<()> {
    let axis = &field.config.channel_wavelengths;
    if axis.len() != channels.len() {
        return Err(AppError::config(format!(
            "field has {} wavelength channels, training uses {}",
            axis.len(),
            channels.len()
        )));
    }
    for (i, &c) in channels.iter().enumerate() {
        let want = dataset.wavelengths[c];
        if (axis[i] - want).abs() > CHANNEL_TOL_NM {
            return Err(AppError::config(format!(
                "field channel {i} is {} nm, dataset channel {c} is {want} nm",
                axis[i]
            )));
        }
    }
    Ok(())
}

/// One optimization step: sample wavelengths, cache, and rays; run the
/// jittered forward pass; backpropagate; apply Adam under the decayed
/// learning rate.
pub fn train_step(
    field: &mut Field,
    adam: &mut AdamState,
    dataset: &Dataset,
    train_frames: &[usize],
    channels: &[usize],
    cfg: &TrainConfig,
    step: u64,
) -> Result<StepLog> {
    let start = Instant::now();
    let lambda_idx = sample_wavelengths(channels, cfg.wavelengths_per_step, cfg.seed, step);
    let lambdas: Vec<f64> = lambda_idx.iter().map(|&c| dataset.wavelengths[c]).collect();
    let cache = active_cache(
        train_frames,
        cfg.cache_images,
        cfg.cache_refresh_steps,
        cfg.seed,
        step,
    );
    let scene = SceneBox::new(field.config.scene_min, field.config.scene_max)?;
    let (rays, targets) = sample_batch(
        dataset,
        &cache,
        &lambda_idx,
        cfg.rays_per_step,
        &scene,
        cfg.seed,
        step,
    )?;
    let rc = cfg.render_config();

    let mut tape = Tape::new();
    let binding = field.bind(&mut tape);
    let mut rngs = SampleRngs::for_step(cfg.seed, step);
    let fwd = forward_train(
        field,
        &mut tape,
        &binding,
        &rays,
        &targets,
        &lambdas,
        &rc,
        cfg.recon_weight,
        cfg.interlevel_weight,
        true,
        &mut rngs,
    )?;
    let total = tape.value(fwd.loss).data()[0];
    if !total.is_finite() {
        return Err(AppError::numerical(format!(
            "step {step}: loss is not finite (reconstruction {}, interlevel {})",
            fwd.recon_value, fwd.interlevel_value
        )));
    }
    let mut grads = tape.backward(fwd.loss)?;
    let grad_vec: Vec<Option<Tensor>> =
        binding.leaves().iter().map(|&id| grads.take(id)).collect();
    let lr = lr_schedule(step, cfg.base_lr, cfg.final_lr, cfg.decay_steps);
    adam_step(&mut field.params, &grad_vec, adam, lr)?;
    if !field.params.all_finite() {
        return Err(AppError::numerical(format!(
            "step {step}: parameters became non-finite after the update"
        )));
    }
    Ok(StepLog {
        step,
        lr,
        recon: fwd.recon_value,
        interlevel: fwd.interlevel_value,
        total,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Train from `start_step` to `cfg.total_steps`, appending one CSV row per
/// step to `out_dir/loss.csv` and overwriting `out_dir/checkpoint.hfck`
/// every `checkpoint_every` steps (and at the end).
pub fn run_training(
    field: &mut Field,
    adam: &mut AdamState,
    dataset: &Dataset,
    cfg: &TrainConfig,
    out_dir: &Path,
    start_step: u64,
    mut on_step: impl FnMut(&StepLog),
) -> Result<()> {
    cfg.validate()?;
    let channels = training_channels(dataset.wavelengths.len(), cfg.keep_wavelengths)?;
    check_axis(field, dataset, &channels)?;
    let (train_frames, _) = split_dataset(dataset.frames.len(), cfg.train_fraction)?;
    fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join("loss.csv");
    let mut csv = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&csv_path)?;
    if csv.metadata()?.len() == 0 {
        writeln!(csv, "{LOSS_CSV_HEADER}")?;
    }
    let ck_path = out_dir.join("checkpoint.hfck");
    for step in start_step..cfg.total_steps {
        let log = train_step(field, adam, dataset, &train_frames, &channels, cfg, step)?;
        writeln!(csv, "{}", log.csv_line())?;
        let done = step + 1;
        if done % cfg.checkpoint_every == 0 || done == cfg.total_steps {
            save_checkpoint(&ck_path, field, cfg, done, Some(adam))?;
        }
        on_step(&log);
    }
    Ok(())
}

/// Render a full frame at the given wavelengths. Rays that miss the scene
/// box keep the background intensity.
pub fn render_full_image(
    field: &Field,
    camera: &CameraFrame,
    lambdas: &[f64],
    rc: &RenderConfig,
) -> Result<HyperCube> {
    let (w, h, l) = (camera.width, camera.height, lambdas.len());
    let scene = SceneBox::new(field.config.scene_min, field.config.scene_max)?;
    let origin = camera.position();
    let mut data = vec![rc.background; w * h * l];
    let mut batch = RayBatch::default();
    for v in 0..h {
        for u in 0..w {
            let dir = camera.pixel_direction(u as f64, v as f64);
            if let Some((near, far)) = ray_box_clip(origin, dir, &scene) {
                if far > near {
                    batch.origins.push(origin);
                    batch.directions.push(dir);
                    batch.pixels.push((u as u32, v as u32));
                    batch.near.push(near);
                    batch.far.push(far);
                }
            }
        }
    }
    if !batch.is_empty() {
        let rendered = render_rays(field, &batch, lambdas, rc)?;
        for (i, &(u, v)) in batch.pixels.iter().enumerate() {
            let base = ((v as usize) * w + u as usize) * l;
            data[base..base + l].copy_from_slice(&rendered.pixels[i * l..(i + 1) * l]);
        }
    }
    Ok(HyperCube::new(w, h, lambdas.to_vec(), data)?)
}

/// Copy a strictly ascending subset of channels into a new cube.
pub fn select_channels(cube: &HyperCube, idx: &[usize]) -> Result<HyperCube> {
    if idx.is_empty() {
        return Err(AppError::config("no channels selected"));
    }
    for w in idx.windows(2) {
        if w[1] <= w[0] {
            return Err(AppError::config(
                "channel indices must be strictly ascending",
            ));
        }
    }
    if *idx.last().unwrap() >= cube.n_channels() {
        return Err(AppError::config(format!(
            "channel {} out of range for a {}-channel cube",
            idx.last().unwrap(),
            cube.n_channels()
        )));
    }
    let lambdas: Vec<f64> = idx.iter().map(|&c| cube.wavelengths()[c]).collect();
    let mut data = Vec::with_capacity(cube.width() * cube.height() * idx.len());
    for y in 0..cube.height() {
        for x in 0..cube.width() {
            let s = cube.spectrum(x, y);
            for &c in idx {
                data.push(s[c]);
            }
        }
    }
    Ok(HyperCube::new(cube.width(), cube.height(), lambdas, data)?)
}

/// Per-frame evaluation scores.
#[derive(Debug, Clone)]
pub struct FrameEval {
    pub frame: usize,
    pub metrics: SpectrumMetrics,
}

/// Evaluation over a set of frames, with per-frame detail and the means.
#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub frames: Vec<FrameEval>,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
}

/// Render each frame at the chosen dataset channels and score it against
/// the captured cube.
pub fn evaluate_frames(
    field: &Field,
    dataset: &Dataset,
    frames: &[usize],
    channel_idx: &[usize],
    rc: &RenderConfig,
) -> Result<EvalSummary> {
    if frames.is_empty() {
        return Err(AppError::config("no frames to evaluate"));
    }
    let lambdas: Vec<f64> = channel_idx
        .iter()
        .map(|&c| dataset.wavelengths[c])
        .collect();
    let mut evals = Vec::with_capacity(frames.len());
    for &f in frames {
        let frame = dataset
            .frames
            .get(f)
            .ok_or_else(|| AppError::config(format!("frame {f} out of range")))?;
        let pred = render_full_image(field, &frame.camera, &lambdas, rc)?;
        let target = select_channels(&frame.cube, channel_idx)?;
        let metrics = spectrum_metrics(&pred, &target)?;
        evals.push(FrameEval { frame: f, metrics });
    }
    let n = evals.len() as f64;
    let mean_psnr_db = evals.iter().map(|e| e.metrics.mean_psnr_db).sum::<f64>() / n;
    let mean_ssim = evals.iter().map(|e| e.metrics.mean_ssim).sum::<f64>() / n;
    Ok(EvalSummary {
        frames: evals,
        mean_psnr_db,
        mean_ssim,
    })
}

/// Whether the field can render wavelengths off its trained channel grid.
pub fn interpolates_wavelengths(field: &Field) -> bool {
    field.config.radiance_variant != RadianceVariant::C1
        && field.config.density_variant != DensityVariant::Sigma1
}

/// Mean scores for one (frame set, channel set) pairing.
#[derive(Debug, Clone, Copy)]
pub struct QuadrantCell {
    pub psnr_db: f64,
    pub ssim: f64,
}

/// The four-way generalization table: {training, held-out} frames crossed
/// with {seen, held-out} wavelengths. Held-wavelength cells are `None` when
/// the architecture only selects discrete channels, with `refusal` saying
/// why.
#[derive(Debug, Clone)]
pub struct QuadrantReport {
    pub train_frames_seen: QuadrantCell,
    pub train_frames_held: Option<QuadrantCell>,
    pub eval_frames_seen: Option<QuadrantCell>,
    pub eval_frames_held: Option<QuadrantCell>,
    pub refusal: Option<String>,
}

pub fn quadrant_report(
    field: &Field,
    dataset: &Dataset,
    train_frames: &[usize],
    eval_frames: &[usize],
    seen_channels: &[usize],
    held_channels: &[usize],
    rc: &RenderConfig,
) -> Result<QuadrantReport> {
    let cell = |frames: &[usize], channels: &[usize]| -> Result<QuadrantCell> {
        let s = evaluate_frames(field, dataset, frames, channels, rc)?;
        Ok(QuadrantCell {
            psnr_db: s.mean_psnr_db,
            ssim: s.mean_ssim,
        })
    };
    let on_axis = |c: usize| {
        let lambda = dataset.wavelengths[c];
        field
            .config
            .channel_wavelengths
            .iter()
            .any(|&a| (a - lambda).abs() <= CHANNEL_TOL_NM)
    };
    let held_renderable = !held_channels.is_empty()
        && (interpolates_wavelengths(field) || held_channels.iter().all(|&c| on_axis(c)));
    let refusal = if held_channels.is_empty() || held_renderable {
        None
    } else {
        Some(format!(
            "variants ({}, {}) select discrete channels and cannot render unseen wavelengths",
            field.config.radiance_variant.as_str(),
            field.config.density_variant.as_str()
        ))
    };
    Ok(QuadrantReport {
        train_frames_seen: cell(train_frames, seen_channels)?,
        train_frames_held: if held_renderable {
            Some(cell(train_frames, held_channels)?)
        } else {
            None
        },
        eval_frames_seen: if eval_frames.is_empty() {
            None
        } else {
            Some(cell(eval_frames, seen_channels)?)
        },
        eval_frames_held: if held_renderable && !eval_frames.is_empty() {
            Some(cell(eval_frames, held_channels)?)
        } else {
            None
        },
        refusal,
    })
}
