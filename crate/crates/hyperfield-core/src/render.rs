//! The forward pass: two proposal stages drive inverse-transform resampling,
//! the fine field renders the surviving samples, and the training variant
//! attaches the reconstruction and interlevel losses.

use alloc::vec::Vec;

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::compositing::{
    composite_on_tape, interlevel_on_tape, overlap_spans, recon_on_tape, weights_on_tape,
};
use crate::error::{CoreError, Result};
use crate::field::{Field, ProposalVariant, TapeBinding};
use crate::rng::{stream, Purpose, Rng};
use crate::sampling::{pdf_resample, stratified_samples, RayBatch, SampleSet};

/// Sample budget and compositing constants of the render pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderConfig {
    pub samples_stage0: usize,
    pub samples_stage1: usize,
    pub samples_fine: usize,
    /// Constant background intensity composited behind every wavelength.
    pub background: f64,
    /// Upper bound on decoder rows (`rays·samples·λ`) per evaluation tape.
    pub chunk_rows: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            samples_stage0: 96,
            samples_stage1: 48,
            samples_fine: 32,
            background: 1.0,
            chunk_rows: 16384,
        }
    }
}

/// Per-step RNG streams for sample jitter, keyed by (seed, step).
pub struct SampleRngs {
    pub stratified: Rng,
    pub resample0: Rng,
    pub resample1: Rng,
}

impl SampleRngs {
    pub fn for_step(seed: u64, step: u64) -> Self {
        SampleRngs {
            stratified: stream(seed, step, Purpose::Stratified),
            resample0: stream(seed, step, Purpose::Resample0),
            resample1: stream(seed, step, Purpose::Resample1),
        }
    }
}

/// Nodes and logged values produced by [`forward_train`].
pub struct ForwardPass {
    /// Scalar training loss (weighted reconstruction + interlevel terms).
    pub loss: NodeId,
    /// `(rays·λ, 1)` rendered pixels.
    pub pixel: NodeId,
    pub recon_value: f64,
    pub interlevel_value: f64,
}

/// Deterministic render of already-clipped rays at the given wavelengths.
#[derive(Debug, Clone)]
pub struct RenderedRays {
    /// `(rays, λ)` row-major pixel intensities.
    pub pixels: Vec<f64>,
    /// `(rays, λ)` row-major accumulated weights.
    pub accumulation: Vec<f64>,
    /// `(rays, λ)` row-major expected termination distance along the ray.
    pub depth: Vec<f64>,
}

struct Stage {
    /// Proposal weights on the tape: `(rays, s)` for `P0`, `(rays·λ, s)`
    /// for `Plambda`.
    weights: NodeId,
    sets: Vec<SampleSet>,
    per_lambda: bool,
}

fn stage_points(rays: &RayBatch, sets: &[SampleSet]) -> Vec<[f64; 3]> {
    let mut points = Vec::with_capacity(sets.iter().map(|s| s.len()).sum());
    for (r, set) in sets.iter().enumerate() {
        let o = rays.origins[r];
        let d = rays.directions[r];
        for &t in &set.points {
            points.push([o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]]);
        }
    }
    points
}

/// Flatten per-ray deltas into a `(rays·copies, s)` tensor, each ray's row
/// repeated `copies` times consecutively.
fn delta_tensor(sets: &[SampleSet], s: usize, copies: usize) -> Result<Tensor> {
    let rays = sets.len();
    let mut data = alloc::vec![0.0; rays * copies * s];
    for (r, set) in sets.iter().enumerate() {
        for c in 0..copies {
            data[(r * copies + c) * s..(r * copies + c + 1) * s].copy_from_slice(&set.deltas);
        }
    }
    Tensor::matrix(rays * copies, s, data)
}

/// Evaluate one proposal stage and resample the next sample sets from its
/// weight histograms.
#[allow(clippy::too_many_arguments)]
fn proposal_stage(
    field: &Field,
    tape: &mut Tape,
    b: &TapeBinding,
    rays: &RayBatch,
    sets: &[SampleSet],
    stage: usize,
    lambdas: &[f64],
    next_count: usize,
    jitter: bool,
    rng: &mut Rng,
) -> Result<(Stage, Vec<SampleSet>)> {
    let r = rays.len();
    let s = sets[0].len();
    let l = lambdas.len();
    let per_lambda = field.config.proposal_variant == ProposalVariant::PLambda;
    let points = stage_points(rays, sets);
    let sigma = field.proposal_on_tape(tape, b, stage, &points, s, Some(lambdas))?;
    let copies = if per_lambda { l } else { 1 };
    let deltas = delta_tensor(sets, s, copies)?;
    let weights = weights_on_tape(tape, sigma, &deltas)?;

    // Resampling histograms are plain values: for `Plambda` each ray's
    // histogram is the mean of its per-λ proposal weights.
    let wv = tape.value(weights).data().to_vec();
    let mut next = Vec::with_capacity(r);
    let mut hist = alloc::vec![0.0; s];
    for ray in 0..r {
        if per_lambda {
            hist.fill(0.0);
            for li in 0..l {
                let row = &wv[(ray * l + li) * s..(ray * l + li + 1) * s];
                for (h, &w) in hist.iter_mut().zip(row) {
                    *h += w / l as f64;
                }
            }
        } else {
            hist.copy_from_slice(&wv[ray * s..(ray + 1) * s]);
        }
        let (set, _fallback) = pdf_resample(&sets[ray].edges, &hist, next_count, jitter, rng)?;
        next.push(set);
    }
    Ok((
        Stage {
            weights,
            sets: sets.to_vec(),
            per_lambda,
        },
        next,
    ))
}

/// Attach one stage's interlevel loss against detached fine weights.
fn stage_interlevel(
    tape: &mut Tape,
    stage: &Stage,
    fine_sets: &[SampleSet],
    fine_weights: &Tensor,
    lambdas: usize,
) -> Result<NodeId> {
    let rays = stage.sets.len();
    let fine_bins = fine_sets[0].len();
    let mut spans = Vec::with_capacity(rays * lambdas * fine_bins);
    for ray in 0..rays {
        let ray_spans = overlap_spans(&fine_sets[ray].edges, &stage.sets[ray].edges)?;
        for _ in 0..lambdas {
            spans.extend_from_slice(&ray_spans);
        }
    }
    let prop = if stage.per_lambda {
        stage.weights
    } else {
        tape.repeat_rows(stage.weights, lambdas)
    };
    interlevel_on_tape(tape, prop, fine_weights, spans)
}

struct FineRender {
    pixel: NodeId,
    accumulation: NodeId,
    weights: NodeId,
    stages: [Stage; 2],
    fine_sets: Vec<SampleSet>,
}

/// Run proposals, resampling, the fine field, and compositing on one tape.
#[allow(clippy::too_many_arguments)]
fn forward_common(
    field: &Field,
    tape: &mut Tape,
    b: &TapeBinding,
    rays: &RayBatch,
    lambdas: &[f64],
    cfg: &RenderConfig,
    jitter: bool,
    rngs: &mut SampleRngs,
) -> Result<FineRender> {
    if rays.is_empty() {
        return Err(CoreError::InvalidArgument("forward pass needs rays".into()));
    }
    if cfg.samples_stage0 == 0 || cfg.samples_stage1 == 0 || cfg.samples_fine == 0 {
        return Err(CoreError::InvalidArgument(
            "sample counts must be positive".into(),
        ));
    }
    let r = rays.len();
    let l = lambdas.len();
    let mut sets0 = Vec::with_capacity(r);
    for ray in 0..r {
        if !(rays.near[ray] < rays.far[ray]) {
            return Err(CoreError::InvalidArgument(alloc::format!(
                "ray {ray} has empty interval [{}, {}]; clip rays against the scene box first",
                rays.near[ray],
                rays.far[ray]
            )));
        }
        sets0.push(stratified_samples(
            rays.near[ray],
            rays.far[ray],
            cfg.samples_stage0,
            jitter,
            &mut rngs.stratified,
        )?);
    }

    let (stage0, sets1) = proposal_stage(
        field,
        tape,
        b,
        rays,
        &sets0,
        0,
        lambdas,
        cfg.samples_stage1,
        jitter,
        &mut rngs.resample0,
    )?;
    let (stage1, fine_sets) = proposal_stage(
        field,
        tape,
        b,
        rays,
        &sets1,
        1,
        lambdas,
        cfg.samples_fine,
        jitter,
        &mut rngs.resample1,
    )?;

    let fine_points = stage_points(rays, &fine_sets);
    let batch = field.fine_on_tape(tape, b, &fine_points, &rays.directions, cfg.samples_fine, lambdas)?;
    let fine_deltas = delta_tensor(&fine_sets, cfg.samples_fine, l)?;
    let nodes = composite_on_tape(tape, batch.sigma, batch.color, &fine_deltas, cfg.background)?;
    Ok(FineRender {
        pixel: nodes.pixel,
        accumulation: nodes.accumulation,
        weights: nodes.weights,
        stages: [stage0, stage1],
        fine_sets,
    })
}

/// Training forward pass over one ray batch.
///
/// `targets` is `(rays·λ, 1)` with λ varying fastest. The returned loss is
/// `recon_weight · MSE + interlevel_weight · (stage₀ + stage₁)` with fine
/// weights detached in the interlevel terms.
#[allow(clippy::too_many_arguments)]
pub fn forward_train(
    field: &Field,
    tape: &mut Tape,
    b: &TapeBinding,
    rays: &RayBatch,
    targets: &Tensor,
    lambdas: &[f64],
    cfg: &RenderConfig,
    recon_weight: f64,
    interlevel_weight: f64,
    jitter: bool,
    rngs: &mut SampleRngs,
) -> Result<ForwardPass> {
    let l = lambdas.len();
    if targets.rows() != rays.len() * l || targets.cols() != 1 {
        return Err(CoreError::ShapeMismatch {
            op: "forward_train",
            lhs: alloc::vec![rays.len() * l, 1],
            rhs: targets.shape().to_vec(),
        });
    }
    let render = forward_common(field, tape, b, rays, lambdas, cfg, jitter, rngs)?;
    let recon = recon_on_tape(tape, render.pixel, targets)?;

    // Detach fine weights: the interlevel terms shape the proposals only.
    let fine_w = tape.value(render.weights).clone();
    let il0 = stage_interlevel(tape, &render.stages[0], &render.fine_sets, &fine_w, l)?;
    let il1 = stage_interlevel(tape, &render.stages[1], &render.fine_sets, &fine_w, l)?;
    let il = tape.add(il0, il1)?;

    let recon_term = tape.mul_scalar(recon, recon_weight);
    let il_term = tape.mul_scalar(il, interlevel_weight);
    let loss = tape.add(recon_term, il_term)?;
    Ok(ForwardPass {
        loss,
        pixel: render.pixel,
        recon_value: tape.value(recon).data()[0],
        interlevel_value: tape.value(il).data()[0],
    })
}

/// Deterministic (unjittered) render of clipped rays, chunked to bound tape
/// size. Returns per-(ray, λ) pixels, accumulations, and depths.
pub fn render_rays(
    field: &Field,
    rays: &RayBatch,
    lambdas: &[f64],
    cfg: &RenderConfig,
) -> Result<RenderedRays> {
    let r = rays.len();
    let l = lambdas.len();
    if l == 0 {
        return Err(CoreError::MissingWavelength);
    }
    let rows_per_ray = cfg.samples_fine * l;
    let chunk = (cfg.chunk_rows / rows_per_ray).max(1);
    let mut out = RenderedRays {
        pixels: alloc::vec![0.0; r * l],
        accumulation: alloc::vec![0.0; r * l],
        depth: alloc::vec![0.0; r * l],
    };
    let mut rngs = SampleRngs::for_step(0, 0);
    let mut start = 0usize;
    while start < r {
        let end = (start + chunk).min(r);
        let part = RayBatch {
            origins: rays.origins[start..end].to_vec(),
            directions: rays.directions[start..end].to_vec(),
            pixels: rays.pixels[start..end].to_vec(),
            near: rays.near[start..end].to_vec(),
            far: rays.far[start..end].to_vec(),
        };
        let mut tape = Tape::new();
        let b = field.bind(&mut tape);
        let render = forward_common(field, &mut tape, &b, &part, lambdas, cfg, false, &mut rngs)?;
        let pixels = tape.value(render.pixel).data();
        let acc = tape.value(render.accumulation).data();
        let weights = tape.value(render.weights).data();
        let s = cfg.samples_fine;
        for ray in 0..part.len() {
            for li in 0..l {
                let row = ray * l + li;
                out.pixels[(start + ray) * l + li] = pixels[row];
                out.accumulation[(start + ray) * l + li] = acc[row];
                let mut depth = 0.0;
                for (si, &t) in render.fine_sets[ray].points.iter().enumerate() {
                    depth += weights[row * s + si] * t;
                }
                out.depth[(start + ray) * l + li] = depth;
            }
        }
        start = end;
    }
    Ok(out)
}
