//! Classical volume rendering per wavelength, plus the reconstruction and
//! interlevel (proposal-bounding) losses.
//!
//! Two entry points exist for compositing: [`composite`] is a plain-`f64`
//! routine over one ray's `(samples, wavelengths)` arrays, used by evaluation
//! and as a reference; [`composite_on_tape`] emits the same computation as
//! tape ops over a `(rows, samples)` batch, one row per (ray, λ) pair, for
//! training.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::error::{CoreError, Result};
use crate::math;

/// Interlevel denominator guard.
pub const INTERLEVEL_EPS: f64 = 1e-7;

/// One ray's composited result across wavelengths.
///
/// `weights` is `(samples, wavelengths)` row-major; the other fields hold one
/// entry per wavelength. `depth` is the weight-expected termination distance
/// measured from the start of the sampled interval.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub pixel_spectrum: Vec<f64>,
    pub weights: Vec<f64>,
    pub accumulation: Vec<f64>,
    pub depth: Vec<f64>,
}

/// Composite one ray: `(samples, wavelengths)` densities and radiances,
/// per-sample widths, and a per-wavelength background.
///
/// `αᵢ = 1 − exp(−σᵢδᵢ)`, `Tᵢ = Π_{j<i}(1 − αⱼ)`, `wᵢ = Tᵢαᵢ`, and
/// `pixel = Σᵢ wᵢcᵢ + (1 − Σᵢ wᵢ)·background`.
pub fn composite(
    densities: &[f64],
    radiances: &[f64],
    deltas: &[f64],
    background: &[f64],
) -> Result<RenderOutput> {
    let s = deltas.len();
    let l = background.len();
    if s == 0 || l == 0 {
        return Err(CoreError::InvalidArgument(
            "composite: need at least one sample and one wavelength".into(),
        ));
    }
    if densities.len() != s * l || radiances.len() != s * l {
        return Err(CoreError::ShapeMismatch {
            op: "composite",
            lhs: alloc::vec![s, l],
            rhs: alloc::vec![densities.len() / s.max(1), radiances.len() / s.max(1)],
        });
    }
    if let Some(&d) = deltas.iter().find(|&&d| !(d > 0.0)) {
        return Err(CoreError::InvalidArgument(format!(
            "composite: deltas must be positive, got {d}"
        )));
    }
    if let Some(&sg) = densities.iter().find(|&&sg| sg < 0.0 || !sg.is_finite()) {
        return Err(CoreError::InvalidArgument(format!(
            "composite: densities must be finite and >= 0, got {sg}"
        )));
    }

    // Midpoint distance of each sample bin, measured from the interval start.
    let mut midpoints = alloc::vec![0.0; s];
    let mut run = 0.0;
    for (i, &d) in deltas.iter().enumerate() {
        midpoints[i] = run + 0.5 * d;
        run += d;
    }

    let mut out = RenderOutput {
        pixel_spectrum: alloc::vec![0.0; l],
        weights: alloc::vec![0.0; s * l],
        accumulation: alloc::vec![0.0; l],
        depth: alloc::vec![0.0; l],
    };
    for li in 0..l {
        let mut excl = 0.0; // Σ_{j<i} σⱼδⱼ, so Tᵢ = exp(−excl).
        let mut acc = 0.0;
        let mut pixel = 0.0;
        let mut depth = 0.0;
        for i in 0..s {
            let sd = densities[i * l + li] * deltas[i];
            let alpha = 1.0 - math::exp(-sd);
            let w = math::exp(-excl) * alpha;
            out.weights[i * l + li] = w;
            acc += w;
            pixel += w * radiances[i * l + li];
            depth += w * midpoints[i];
            excl += sd;
        }
        out.pixel_spectrum[li] = pixel + (1.0 - acc) * background[li];
        out.accumulation[li] = acc;
        out.depth[li] = depth;
    }
    Ok(out)
}

/// Mean squared error between predicted and target spectra.
pub fn recon_loss(predicted: &[f64], target: &[f64]) -> Result<f64> {
    if predicted.len() != target.len() || predicted.is_empty() {
        return Err(CoreError::ShapeMismatch {
            op: "recon_loss",
            lhs: alloc::vec![predicted.len()],
            rhs: alloc::vec![target.len()],
        });
    }
    let mut sum = 0.0;
    for (p, t) in predicted.iter().zip(target) {
        let d = p - t;
        sum += d * d;
    }
    Ok(sum / predicted.len() as f64)
}

fn check_histogram(edges: &[f64], weights: &[f64], what: &str) -> Result<()> {
    if edges.len() != weights.len() + 1 || weights.is_empty() {
        return Err(CoreError::InvalidArgument(format!(
            "interlevel_loss: {what} histogram has {} edges for {} weights",
            edges.len(),
            weights.len()
        )));
    }
    if edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(CoreError::InvalidArgument(format!(
            "interlevel_loss: {what} edges must strictly increase"
        )));
    }
    Ok(())
}

/// For each fine bin, the contiguous range `(start, end)` of proposal bins it
/// overlaps with positive measure. Bins that merely touch at a boundary do
/// not overlap.
///
/// The fine histogram must lie inside the proposal interval.
pub fn overlap_spans(fine_edges: &[f64], prop_edges: &[f64]) -> Result<Vec<(u32, u32)>> {
    let span = prop_edges[prop_edges.len() - 1] - prop_edges[0];
    let tol = 1e-9 * span.max(1.0);
    if fine_edges[0] < prop_edges[0] - tol
        || fine_edges[fine_edges.len() - 1] > prop_edges[prop_edges.len() - 1] + tol
    {
        return Err(CoreError::InvalidArgument(format!(
            "interlevel_loss: fine interval [{}, {}] not contained in proposal interval [{}, {}]",
            fine_edges[0],
            fine_edges[fine_edges.len() - 1],
            prop_edges[0],
            prop_edges[prop_edges.len() - 1]
        )));
    }
    let p = prop_edges.len() - 1;
    let mut spans = Vec::with_capacity(fine_edges.len() - 1);
    let mut start = 0usize;
    for f in fine_edges.windows(2) {
        let (flo, fhi) = (f[0], f[1]);
        // First proposal bin whose right edge lies strictly past the fine
        // bin's left edge; both arrays are sorted, so the scan only advances.
        while start < p && prop_edges[start + 1] <= flo {
            start += 1;
        }
        let mut end = start;
        while end < p && prop_edges[end] < fhi {
            end += 1;
        }
        spans.push((start as u32, end as u32));
    }
    Ok(spans)
}

/// Proposal-bounding loss for a single (ray, wavelength) histogram pair.
///
/// `Σᵢ max(0, w_fine,i − bound(i))² / (bound(i) + 1e-7)` where `bound(i)`
/// sums the proposal weights of bins overlapping fine bin `i`. Fine weights
/// are plain constants here; the differentiable path is
/// [`interlevel_on_tape`], which routes gradients to the proposal only.
pub fn interlevel_loss(
    fine_edges: &[f64],
    fine_weights: &[f64],
    prop_edges: &[f64],
    prop_weights: &[f64],
) -> Result<f64> {
    check_histogram(fine_edges, fine_weights, "fine")?;
    check_histogram(prop_edges, prop_weights, "proposal")?;
    let spans = overlap_spans(fine_edges, prop_edges)?;
    let mut loss = 0.0;
    for (i, &(s, e)) in spans.iter().enumerate() {
        let bound: f64 = prop_weights[s as usize..e as usize].iter().sum();
        let short = fine_weights[i] - bound;
        if short > 0.0 {
            loss += short * short / (bound + INTERLEVEL_EPS);
        }
    }
    Ok(loss)
}

/// Per-λ interlevel losses of each wavelength's fine histogram against one
/// shared proposal histogram, plus their mean.
///
/// `fine_weights_per_lambda` is `(wavelengths, fine_bins)` row-major.
pub fn wavelength_penalty_check(
    fine_edges: &[f64],
    fine_weights_per_lambda: &[f64],
    prop_edges: &[f64],
    prop_weights: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let f = fine_edges.len() - 1;
    if f == 0 || fine_weights_per_lambda.is_empty() || fine_weights_per_lambda.len() % f != 0 {
        return Err(CoreError::InvalidArgument(format!(
            "wavelength_penalty_check: {} fine weights for {} bins",
            fine_weights_per_lambda.len(),
            f
        )));
    }
    let l = fine_weights_per_lambda.len() / f;
    let mut per_lambda = Vec::with_capacity(l);
    for li in 0..l {
        per_lambda.push(interlevel_loss(
            fine_edges,
            &fine_weights_per_lambda[li * f..(li + 1) * f],
            prop_edges,
            prop_weights,
        )?);
    }
    let total = per_lambda.iter().sum::<f64>() / l as f64;
    Ok((per_lambda, total))
}

/// Tape nodes produced by [`composite_on_tape`].
#[derive(Debug, Clone, Copy)]
pub struct CompositeNodes {
    /// `(rows, samples)` compositing weights.
    pub weights: NodeId,
    /// `(rows, 1)` per-row weight sums.
    pub accumulation: NodeId,
    /// `(rows, 1)` background-composited pixel values.
    pub pixel: NodeId,
}

/// Compositing weights `w = T·α` from densities on the tape.
///
/// `sigma` is `(rows, samples)`; `deltas` must match its shape.
pub fn weights_on_tape(tape: &mut Tape, sigma: NodeId, deltas: &Tensor) -> Result<NodeId> {
    let d = tape.constant(deltas.clone());
    let sdelta = tape.mul(sigma, d)?;
    let neg_sd = tape.neg(sdelta);
    let decay = tape.exp(neg_sd);
    let neg_decay = tape.neg(decay);
    let alpha = tape.add_scalar(neg_decay, 1.0);
    let excl = tape.cumsum_excl_last(sdelta);
    let neg_excl = tape.neg(excl);
    let trans = tape.exp(neg_excl);
    tape.mul(trans, alpha)
}

/// Differentiable batch compositing: one row per (ray, λ), columns are
/// samples along the ray. Background is the per-dataset constant.
pub fn composite_on_tape(
    tape: &mut Tape,
    sigma: NodeId,
    color: NodeId,
    deltas: &Tensor,
    background: f64,
) -> Result<CompositeNodes> {
    let weights = weights_on_tape(tape, sigma, deltas)?;
    let accumulation = tape.sum_last(weights);
    let wc = tape.mul(weights, color)?;
    let fg = tape.sum_last(wc);
    // (1 − acc)·bg  =  bg − bg·acc
    let neg_bg_acc = tape.mul_scalar(accumulation, -background);
    let bg_term = tape.add_scalar(neg_bg_acc, background);
    let pixel = tape.add(fg, bg_term)?;
    Ok(CompositeNodes {
        weights,
        accumulation,
        pixel,
    })
}

/// Mean squared error between a predicted column and constant targets.
pub fn recon_on_tape(tape: &mut Tape, predicted: NodeId, target: &Tensor) -> Result<NodeId> {
    let t = tape.constant(target.clone());
    let diff = tape.sub(predicted, t)?;
    let sq = tape.mul(diff, diff)?;
    Ok(tape.mean_all(sq))
}

/// Differentiable interlevel loss over a batch of histogram rows.
///
/// `prop_weights` is `(rows, prop_bins)` on the tape; `fine_weights`
/// (`(rows, fine_bins)`) enters as a constant, so only the proposal receives
/// gradient. `spans` gives, per row-major fine bin, the overlapping proposal
/// bin range (from [`overlap_spans`], replicated across rows). Returns the
/// mean over rows of per-row bin sums.
pub fn interlevel_on_tape(
    tape: &mut Tape,
    prop_weights: NodeId,
    fine_weights: &Tensor,
    spans: Vec<(u32, u32)>,
) -> Result<NodeId> {
    let fine_cols = fine_weights.cols();
    let bound = tape.overlap_bound(prop_weights, spans, fine_cols)?;
    let fine = tape.constant(fine_weights.clone());
    let diff = tape.sub(fine, bound)?;
    let short = tape.relu(diff);
    let sq = tape.mul(short, short)?;
    let denom = tape.add_scalar(bound, INTERLEVEL_EPS);
    let per_bin = tape.div(sq, denom)?;
    let row_sums = tape.sum_last(per_bin);
    Ok(tape.mean_all(row_sums))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use alloc::vec;
    use rand::Rng as _;

    /// Reference compositing via explicit cumulative products.
    fn brute_force(
        densities: &[f64],
        radiances: &[f64],
        deltas: &[f64],
        background: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let s = deltas.len();
        let l = background.len();
        let mut pixels = vec![0.0; l];
        let mut weights = vec![0.0; s * l];
        for li in 0..l {
            let mut trans = 1.0;
            let mut acc = 0.0;
            for i in 0..s {
                let alpha = 1.0 - math::exp(-densities[i * l + li] * deltas[i]);
                let w = trans * alpha;
                weights[i * l + li] = w;
                pixels[li] += w * radiances[i * l + li];
                acc += w;
                trans *= 1.0 - alpha;
            }
            pixels[li] += (1.0 - acc) * background[li];
        }
        (pixels, weights)
    }

    fn random_case(rng: &mut crate::rng::Rng, s: usize, l: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let densities = (0..s * l).map(|_| rng.gen_range(0.0..3.0)).collect();
        let radiances = (0..s * l).map(|_| rng.gen_range(0.0..1.0)).collect();
        let deltas = (0..s).map(|_| rng.gen_range(0.01..0.5)).collect();
        (densities, radiances, deltas)
    }

    #[test]
    fn empty_space_renders_background() {
        let out = composite(&[0.0; 8], &[0.3; 8], &[0.5; 4], &[1.0, 0.25]).unwrap();
        assert_eq!(out.pixel_spectrum, vec![1.0, 0.25]);
        assert_eq!(out.accumulation, vec![0.0, 0.0]);
        assert!(out.weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn opaque_front_sample_wins() {
        let densities = vec![1e300, 0.7, 2.0, 0.1];
        let radiances = vec![0.9, 0.1, 0.2, 0.3];
        let out = composite(&densities, &radiances, &[0.25; 4], &[0.0]).unwrap();
        assert_eq!(out.weights[0], 1.0);
        assert_eq!(out.pixel_spectrum, vec![0.9]);
        assert_eq!(out.accumulation, vec![1.0]);
    }

    #[test]
    fn matches_brute_force_reference() {
        let mut rng = stream(10, 0, Purpose::Misc);
        for _ in 0..300 {
            let (densities, radiances, deltas) = random_case(&mut rng, 8, 4);
            let bg = [0.0, 1.0, 0.5, 0.25];
            let out = composite(&densities, &radiances, &deltas, &bg).unwrap();
            let (pixels, weights) = brute_force(&densities, &radiances, &deltas, &bg);
            for (a, b) in out.pixel_spectrum.iter().zip(&pixels) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in out.weights.iter().zip(&weights) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weights_form_sub_probability() {
        let mut rng = stream(11, 0, Purpose::Misc);
        for _ in 0..200 {
            let (densities, radiances, deltas) = random_case(&mut rng, 12, 3);
            let out = composite(&densities, &radiances, &deltas, &[0.0; 3]).unwrap();
            for &w in &out.weights {
                assert!((0.0..=1.0).contains(&w));
            }
            for &a in &out.accumulation {
                assert!(a <= 1.0 + 1e-6);
            }
        }
    }

    #[test]
    fn delta_density_rescaling_is_exact() {
        let mut rng = stream(12, 0, Purpose::Misc);
        let (densities, radiances, deltas) = random_case(&mut rng, 8, 2);
        let out_a = composite(&densities, &radiances, &deltas, &[1.0; 2]).unwrap();
        // σ → σ/3, δ → 3δ leaves every σδ product bitwise intact only up to
        // rounding; the render must agree to 1e-12.
        let scaled_d: Vec<f64> = densities.iter().map(|&x| x / 3.0).collect();
        let scaled_w: Vec<f64> = deltas.iter().map(|&x| x * 3.0).collect();
        let out_b = composite(&scaled_d, &radiances, &scaled_w, &[1.0; 2]).unwrap();
        for (a, b) in out_a.pixel_spectrum.iter().zip(&out_b.pixel_spectrum) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn lambda_invariant_inputs_give_identical_spectra() {
        let mut rng = stream(13, 0, Purpose::Misc);
        let s = 6;
        let l = 5;
        let sig_row: Vec<f64> = (0..s).map(|_| rng.gen_range(0.0..2.0)).collect();
        let col_row: Vec<f64> = (0..s).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut densities = vec![0.0; s * l];
        let mut radiances = vec![0.0; s * l];
        for i in 0..s {
            for li in 0..l {
                densities[i * l + li] = sig_row[i];
                radiances[i * l + li] = col_row[i];
            }
        }
        let out = composite(&densities, &radiances, &[0.2; 6], &[1.0; 5]).unwrap();
        for li in 1..l {
            assert_eq!(out.pixel_spectrum[li], out.pixel_spectrum[0]);
        }
    }

    #[test]
    fn rejects_negative_density_and_delta() {
        assert!(composite(&[-0.1, 0.0], &[0.0, 0.0], &[0.5, 0.5], &[0.0]).is_err());
        assert!(composite(&[0.1, 0.0], &[0.0, 0.0], &[0.5, 0.0], &[0.0]).is_err());
    }

    #[test]
    fn depth_is_weighted_midpoint_distance() {
        // One fully opaque far bin: depth = midpoint of bin 1 from the start.
        let out = composite(&[0.0, 1e300], &[1.0, 1.0], &[0.4, 0.2], &[0.0]).unwrap();
        assert!((out.depth[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn recon_loss_examples() {
        let a = [0.2, 0.4, 0.6];
        assert_eq!(recon_loss(&a, &a).unwrap(), 0.0);
        let b = [0.3, 0.5, 0.7];
        assert!((recon_loss(&a, &b).unwrap() - 0.01).abs() < 1e-15);
        let mut rng = stream(14, 0, Purpose::Misc);
        let x: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut reference = 0.0;
        for i in 0..64 {
            reference += (x[i] - y[i]) * (x[i] - y[i]);
        }
        reference /= 64.0;
        assert!((recon_loss(&x, &y).unwrap() - reference).abs() < 1e-12);
    }

    #[test]
    fn overlap_spans_two_pointer() {
        // Proposal bins: [0,1), [1,2), [2,4). Fine bins: [0.5,1.5), [1.5,2),
        // [2,3.5). Touching at 2 does not count as overlap.
        let spans = overlap_spans(&[0.5, 1.5, 2.0, 3.5], &[0.0, 1.0, 2.0, 4.0]).unwrap();
        assert_eq!(spans, vec![(0, 2), (1, 2), (2, 3)]);
    }

    #[test]
    fn interlevel_zero_when_bound_holds() {
        let edges = [0.0, 1.0, 2.0, 3.0];
        let fine = [0.2, 0.3, 0.1];
        let prop = [0.25, 0.3, 0.15];
        assert_eq!(interlevel_loss(&edges, &fine, &edges, &prop).unwrap(), 0.0);
        // Equality also satisfies the bound.
        assert_eq!(interlevel_loss(&edges, &fine, &edges, &fine).unwrap(), 0.0);
    }

    #[test]
    fn interlevel_hand_computed_case() {
        // One fine bin of weight 0.5 inside a proposal bin of weight 0.2.
        let loss =
            interlevel_loss(&[0.25, 0.75], &[0.5], &[0.0, 1.0], &[0.2]).unwrap();
        let expect = 0.3 * 0.3 / (0.2 + 1e-7);
        assert!((loss - expect).abs() < 1e-9, "{loss} vs {expect}");
    }

    #[test]
    fn interlevel_rejects_mismatched_intervals() {
        // Fine histogram extends past the proposal interval.
        let err = interlevel_loss(&[0.0, 2.0], &[0.5], &[0.0, 1.0], &[0.9]).unwrap_err();
        assert!(matches!(err, CoreError::InvalidArgument(_)));
    }

    #[test]
    fn interlevel_touching_bins_do_not_contribute() {
        // Fine bin [0.5, 1.0] touches proposal bin [0, 0.5] only at 0.5, so
        // the bound is the second proposal weight alone.
        let loss =
            interlevel_loss(&[0.5, 1.0], &[0.4], &[0.0, 0.5, 1.0], &[1.0, 0.1]).unwrap();
        let expect = 0.3 * 0.3 / (0.1 + 1e-7);
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn wavelength_penalty_matches_per_lambda_loop() {
        let fine_edges = [0.0, 0.5, 1.0];
        let prop_edges = [0.0, 1.0];
        let prop = [0.3];
        // λ₁ bounded (0.1 + 0.1 per bin vs bound 0.3), λ₂ not.
        let fine = [0.1, 0.1, 0.5, 0.2];
        let (per_lambda, total) =
            wavelength_penalty_check(&fine_edges, &fine, &prop_edges, &prop).unwrap();
        assert_eq!(per_lambda.len(), 2);
        assert_eq!(per_lambda[0], 0.0);
        assert!(per_lambda[1] > 0.0);
        let l0 = interlevel_loss(&fine_edges, &fine[..2], &prop_edges, &prop).unwrap();
        let l1 = interlevel_loss(&fine_edges, &fine[2..], &prop_edges, &prop).unwrap();
        assert!((per_lambda[0] - l0).abs() < 1e-15);
        assert!((per_lambda[1] - l1).abs() < 1e-15);
        assert!((total - 0.5 * (l0 + l1)).abs() < 1e-15);
    }

    #[test]
    fn tape_composite_matches_plain() {
        let mut rng = stream(15, 0, Purpose::Misc);
        let (s, l) = (8, 4);
        let (densities, radiances, deltas) = random_case(&mut rng, s, l);
        let bg = 0.75;
        let plain = composite(&densities, &radiances, &deltas, &[bg; 4]).unwrap();

        // Tape layout: one row per λ, columns are samples.
        let mut sig_rows = vec![0.0; l * s];
        let mut col_rows = vec![0.0; l * s];
        let mut del_rows = vec![0.0; l * s];
        for i in 0..s {
            for li in 0..l {
                sig_rows[li * s + i] = densities[i * l + li];
                col_rows[li * s + i] = radiances[i * l + li];
                del_rows[li * s + i] = deltas[i];
            }
        }
        let mut tape = Tape::new();
        let sig = tape.leaf(Tensor::matrix(l, s, sig_rows).unwrap().trainable());
        let col = tape.constant(Tensor::matrix(l, s, col_rows).unwrap());
        let nodes = composite_on_tape(
            &mut tape,
            sig,
            col,
            &Tensor::matrix(l, s, del_rows).unwrap(),
            bg,
        )
        .unwrap();
        let pixel = tape.value(nodes.pixel).data();
        let acc = tape.value(nodes.accumulation).data();
        let w = tape.value(nodes.weights).data();
        for li in 0..l {
            assert!((pixel[li] - plain.pixel_spectrum[li]).abs() < 1e-12);
            assert!((acc[li] - plain.accumulation[li]).abs() < 1e-12);
            for i in 0..s {
                assert!((w[li * s + i] - plain.weights[i * l + li]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tape_interlevel_matches_plain_mean() {
        let mut rng = stream(16, 0, Purpose::Misc);
        let fine_edges = [0.0, 0.3, 0.7, 1.0];
        let prop_edges = [0.0, 0.25, 0.5, 0.75, 1.0];
        let rows = 5;
        let fine: Vec<f64> = (0..rows * 3).map(|_| rng.gen_range(0.0..0.5)).collect();
        let prop: Vec<f64> = (0..rows * 4).map(|_| rng.gen_range(0.0..0.4)).collect();

        let mut reference = 0.0;
        for r in 0..rows {
            reference += interlevel_loss(
                &fine_edges,
                &fine[r * 3..(r + 1) * 3],
                &prop_edges,
                &prop[r * 4..(r + 1) * 4],
            )
            .unwrap();
        }
        reference /= rows as f64;

        let row_spans = overlap_spans(&fine_edges, &prop_edges).unwrap();
        let mut spans = Vec::new();
        for _ in 0..rows {
            spans.extend_from_slice(&row_spans);
        }
        let mut tape = Tape::new();
        let prop_node = tape.leaf(Tensor::matrix(rows, 4, prop.clone()).unwrap().trainable());
        let loss = interlevel_on_tape(
            &mut tape,
            prop_node,
            &Tensor::matrix(rows, 3, fine).unwrap(),
            spans,
        )
        .unwrap();
        let got = tape.value(loss).data()[0];
        assert!((got - reference).abs() < 1e-12, "{got} vs {reference}");

        // Gradient reaches the proposal weights (the only trainable leaf).
        let grads = tape.backward(loss).unwrap();
        let g = grads.get(prop_node).expect("proposal gradient");
        assert!(g.data().iter().any(|&x| x != 0.0));
    }

    #[test]
    fn tape_composite_gradients_match_finite_differences() {
        let mut rng = stream(17, 0, Purpose::Misc);
        let (s, l) = (5, 2);
        let rows = l;
        let sig: Vec<f64> = (0..rows * s).map(|_| rng.gen_range(0.1..2.0)).collect();
        let col: Vec<f64> = (0..rows * s).map(|_| rng.gen_range(0.1..0.9)).collect();
        let deltas = Tensor::matrix(rows, s, vec![0.2; rows * s]).unwrap();
        let target = Tensor::matrix(rows, 1, vec![0.4, 0.6]).unwrap();

        let eval = |sv: &[f64], cv: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let sn = tape.leaf(Tensor::matrix(rows, s, sv.to_vec()).unwrap().trainable());
            let cn = tape.leaf(Tensor::matrix(rows, s, cv.to_vec()).unwrap().trainable());
            let nodes = composite_on_tape(&mut tape, sn, cn, &deltas, 1.0).unwrap();
            let loss = recon_on_tape(&mut tape, nodes.pixel, &target).unwrap();
            tape.value(loss).data()[0]
        };

        let mut tape = Tape::new();
        let sn = tape.leaf(Tensor::matrix(rows, s, sig.clone()).unwrap().trainable());
        let cn = tape.leaf(Tensor::matrix(rows, s, col.clone()).unwrap().trainable());
        let nodes = composite_on_tape(&mut tape, sn, cn, &deltas, 1.0).unwrap();
        let loss = recon_on_tape(&mut tape, nodes.pixel, &target).unwrap();
        let grads = tape.backward(loss).unwrap();
        let gs = grads.get(sn).unwrap().data().to_vec();
        let gc = grads.get(cn).unwrap().data().to_vec();

        let h = 1e-6;
        for i in 0..rows * s {
            let mut up = sig.clone();
            up[i] += h;
            let mut dn = sig.clone();
            dn[i] -= h;
            let fd = (eval(&up, &col) - eval(&dn, &col)) / (2.0 * h);
            assert!(
                (gs[i] - fd).abs() < 1e-4 * fd.abs().max(1.0),
                "sigma grad {i}: {} vs {fd}",
                gs[i]
            );
            let mut up = col.clone();
            up[i] += h;
            let mut dn = col.clone();
            dn[i] -= h;
            let fd = (eval(&sig, &up) - eval(&sig, &dn)) / (2.0 * h);
            assert!(
                (gc[i] - fd).abs() < 1e-4 * fd.abs().max(1.0),
                "color grad {i}: {} vs {fd}",
                gc[i]
            );
        }
    }
}
