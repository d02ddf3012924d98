//! Spectral calibration tools: pseudo-RGB extraction, fitting a camera's
//! per-channel spectral response from an aligned image pair, simulating that
//! sensor, and the evenly spaced wavelength split used to probe spectral
//! interpolation.

use alloc::vec::Vec;

use crate::cube::HyperCube;
use crate::error::{CoreError, Result};

/// Default pseudo-RGB band centers in nanometres.
pub const PSEUDO_R_NM: f64 = 622.0;
pub const PSEUDO_G_NM: f64 = 555.0;
pub const PSEUDO_B_NM: f64 = 503.0;

/// Ridge added to the Gram diagonal when fitting a response.
pub const RIDGE_MU: f64 = 1e-8;

/// A camera's spectral response: one weight per cube channel for each of the
/// three output primaries, jointly a 3×N linear map from spectra to RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralResponse {
    pub r_bar: Vec<f64>,
    pub g_bar: Vec<f64>,
    pub b_bar: Vec<f64>,
}

impl SpectralResponse {
    pub fn n_channels(&self) -> usize {
        self.r_bar.len()
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.r_bar.len() != n || self.g_bar.len() != n || self.b_bar.len() != n {
            return Err(CoreError::InvalidArgument(alloc::format!(
                "response has {}/{}/{} weights, cube has {n} channels",
                self.r_bar.len(),
                self.g_bar.len(),
                self.b_bar.len()
            )));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.r_bar) || !finite(&self.g_bar) || !finite(&self.b_bar) {
            return Err(CoreError::InvalidArgument(
                "response weights must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// Extract an H·W·3 pseudo-RGB image by copying, for each band, the channel
/// whose center wavelength is nearest. Band centers must lie inside the
/// cube's wavelength range.
pub fn pseudo_rgb(cube: &HyperCube, r_nm: f64, g_nm: f64, b_nm: f64) -> Result<Vec<f64>> {
    let wl = cube.wavelengths();
    let (lo, hi) = (wl[0], wl[wl.len() - 1]);
    for band in [r_nm, g_nm, b_nm] {
        if !(band >= lo && band <= hi) {
            return Err(CoreError::InvalidArgument(alloc::format!(
                "band {band} nm outside cube range [{lo}, {hi}] nm"
            )));
        }
    }
    let channels = [
        cube.nearest_channel(r_nm),
        cube.nearest_channel(g_nm),
        cube.nearest_channel(b_nm),
    ];
    let pixels = cube.width() * cube.height();
    let mut out = Vec::with_capacity(pixels * 3);
    for p in 0..pixels {
        let spectrum = &cube.data()[p * cube.n_channels()..(p + 1) * cube.n_channels()];
        for &c in &channels {
            out.push(spectrum[c]);
        }
    }
    Ok(out)
}

/// [`pseudo_rgb`] at the default band centers.
pub fn pseudo_rgb_fixed(cube: &HyperCube) -> Result<Vec<f64>> {
    pseudo_rgb(cube, PSEUDO_R_NM, PSEUDO_G_NM, PSEUDO_B_NM)
}

/// Solve the symmetric positive-definite system `G·X = B` in place by
/// Cholesky factorization; `g` is n×n, `b` is n×m, both row-major. On return
/// `b` holds X.
fn cholesky_solve(g: &mut [f64], b: &mut [f64], n: usize, m: usize) -> Result<()> {
    // Factor G = L·Lᵀ, storing L in the lower triangle.
    for i in 0..n {
        for j in 0..=i {
            let mut s = g[i * n + j];
            for k in 0..j {
                s -= g[i * n + k] * g[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(CoreError::NonFinite(
                        "response fit produced a non-positive-definite Gram matrix".into(),
                    ));
                }
                g[i * n + i] = crate::math::sqrt(s);
            } else {
                g[i * n + j] = s / g[j * n + j];
            }
        }
    }
    // Forward substitution L·Y = B, then backward Lᵀ·X = Y.
    for col in 0..m {
        for i in 0..n {
            let mut s = b[i * m + col];
            for k in 0..i {
                s -= g[i * n + k] * b[k * m + col];
            }
            b[i * m + col] = s / g[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i * m + col];
            for k in i + 1..n {
                s -= g[k * n + i] * b[k * m + col];
            }
            b[i * m + col] = s / g[i * n + i];
        }
    }
    Ok(())
}

/// Least-squares fit of a 3×N response from `n` paired samples with ridge
/// `mu` on the Gram diagonal. `hs` is n×N row-major spectra, `rgb` n×3.
pub fn fit_linear_map_with_ridge(
    hs: &[f64],
    rgb: &[f64],
    n_channels: usize,
    mu: f64,
) -> Result<SpectralResponse> {
    if n_channels == 0 || hs.is_empty() {
        return Err(CoreError::InvalidArgument(
            "response fit needs at least one sample".into(),
        ));
    }
    if hs.len() % n_channels != 0 {
        return Err(CoreError::InvalidArgument(
            "spectral sample buffer is not a multiple of the channel count".into(),
        ));
    }
    let n = hs.len() / n_channels;
    if rgb.len() != n * 3 {
        return Err(CoreError::InvalidArgument(alloc::format!(
            "{n} spectra paired with {} rgb values (expected {})",
            rgb.len(),
            n * 3
        )));
    }
    if !(mu >= 0.0) {
        return Err(CoreError::InvalidArgument("ridge must be ≥ 0".into()));
    }

    // Normal equations: (XᵀX + μI)·Aᵀ = XᵀY.
    let nc = n_channels;
    let mut gram = alloc::vec![0.0; nc * nc];
    let mut rhs = alloc::vec![0.0; nc * 3];
    for s in 0..n {
        let x = &hs[s * nc..(s + 1) * nc];
        let y = &rgb[s * 3..(s + 1) * 3];
        for i in 0..nc {
            for j in 0..=i {
                gram[i * nc + j] += x[i] * x[j];
            }
            for k in 0..3 {
                rhs[i * 3 + k] += x[i] * y[k];
            }
        }
    }
    for i in 0..nc {
        for j in i + 1..nc {
            gram[i * nc + j] = gram[j * nc + i];
        }
        gram[i * nc + i] += mu;
    }
    cholesky_solve(&mut gram, &mut rhs, nc, 3)?;
    Ok(SpectralResponse {
        r_bar: (0..nc).map(|i| rhs[i * 3]).collect(),
        g_bar: (0..nc).map(|i| rhs[i * 3 + 1]).collect(),
        b_bar: (0..nc).map(|i| rhs[i * 3 + 2]).collect(),
    })
}

/// [`fit_linear_map_with_ridge`] at the default ridge [`RIDGE_MU`].
pub fn fit_linear_map(hs: &[f64], rgb: &[f64], n_channels: usize) -> Result<SpectralResponse> {
    fit_linear_map_with_ridge(hs, rgb, n_channels, RIDGE_MU)
}

/// Apply a spectral response to every pixel: H·W·3 image of `response ·
/// spectrum`, clamped to [0, 1].
pub fn simulate_sensor(cube: &HyperCube, response: &SpectralResponse) -> Result<Vec<f64>> {
    let n = cube.n_channels();
    response.validate(n)?;
    let pixels = cube.width() * cube.height();
    let mut out = Vec::with_capacity(pixels * 3);
    for p in 0..pixels {
        let spectrum = &cube.data()[p * n..(p + 1) * n];
        for bar in [&response.r_bar, &response.g_bar, &response.b_bar] {
            let v: f64 = bar.iter().zip(spectrum).map(|(&w, &s)| w * s).sum();
            out.push(v.clamp(0.0, 1.0));
        }
    }
    Ok(out)
}

/// Deterministic evenly spaced wavelength split: keep `keep` channel indices
/// at `round(i·N/keep)`, hold out the complement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperresSplit {
    pub train: Vec<usize>,
    pub held_out: Vec<usize>,
}

impl SuperresSplit {
    pub fn train_wavelengths(&self, all: &[f64]) -> Vec<f64> {
        self.train.iter().map(|&i| all[i]).collect()
    }

    pub fn held_out_wavelengths(&self, all: &[f64]) -> Vec<f64> {
        self.held_out.iter().map(|&i| all[i]).collect()
    }
}

pub fn superres_split(n_channels: usize, keep: usize) -> Result<SuperresSplit> {
    if keep == 0 || keep > n_channels {
        return Err(CoreError::InvalidArgument(alloc::format!(
            "cannot keep {keep} of {n_channels} wavelengths"
        )));
    }
    // round(i·N/keep) in integer arithmetic (half rounds up).
    let train: Vec<usize> = (0..keep)
        .map(|i| (2 * i * n_channels + keep) / (2 * keep))
        .collect();
    let mut held_out = Vec::with_capacity(n_channels - keep);
    let mut next = 0;
    for i in 0..n_channels {
        if next < train.len() && train[next] == i {
            next += 1;
        } else {
            held_out.push(i);
        }
    }
    Ok(SuperresSplit { train, held_out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use alloc::vec;
    use rand::Rng as _;

    fn random_cube(w: usize, h: usize, wavelengths: Vec<f64>, seed: u64) -> HyperCube {
        let mut rng = stream(seed, 0, Purpose::Misc);
        let n = w * h * wavelengths.len();
        HyperCube::new(w, h, wavelengths, (0..n).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    #[test]
    fn pseudo_rgb_copies_exact_channels_when_present() {
        let wl = vec![503.0, 555.0, 600.0, 622.0];
        let cube = random_cube(5, 4, wl, 1);
        let rgb = pseudo_rgb_fixed(&cube).unwrap();
        for y in 0..4 {
            for x in 0..5 {
                let base = (y * 5 + x) * 3;
                assert_eq!(rgb[base], cube.at(x, y, 3)); // 622
                assert_eq!(rgb[base + 1], cube.at(x, y, 1)); // 555
                assert_eq!(rgb[base + 2], cube.at(x, y, 0)); // 503
            }
        }
    }

    #[test]
    fn bands_collapsing_to_one_channel_give_identical_planes() {
        let cube = random_cube(3, 3, vec![500.0, 700.0], 2);
        let rgb = pseudo_rgb(&cube, 560.0, 555.0, 550.0).unwrap();
        for p in 0..9 {
            assert_eq!(rgb[p * 3], rgb[p * 3 + 1]);
            assert_eq!(rgb[p * 3], rgb[p * 3 + 2]);
            assert_eq!(rgb[p * 3], cube.data()[p * 2]);
        }
    }

    #[test]
    fn nearest_channel_matches_linear_scan() {
        let wl: Vec<f64> = (0..17).map(|i| 420.0 + 13.7 * i as f64).collect();
        let cube = random_cube(2, 2, wl.clone(), 3);
        let mut rng = stream(4, 0, Purpose::Misc);
        for _ in 0..200 {
            let target = 420.0 + rng.gen::<f64>() * (wl[16] - 420.0);
            let mut best = 0;
            for (i, &w) in wl.iter().enumerate() {
                if (w - target).abs() < (wl[best] - target).abs() {
                    best = i;
                }
            }
            assert_eq!(cube.nearest_channel(target), best, "λ = {target}");
        }
    }

    #[test]
    fn pseudo_rgb_requires_band_coverage() {
        let cube = random_cube(2, 2, vec![500.0, 600.0], 5);
        assert!(pseudo_rgb(&cube, 622.0, 555.0, 503.0).is_err());
        assert!(pseudo_rgb(&cube, 600.0, 555.0, 500.0).is_ok());
        assert!(pseudo_rgb(&cube, 600.0, 555.0, 499.9).is_err());
    }

    fn random_response(n: usize, seed: u64) -> SpectralResponse {
        let mut rng = stream(seed, 0, Purpose::Misc);
        let mut gen = |_: usize| (0..n).map(|_| rng.gen::<f64>() * 0.2).collect::<Vec<f64>>();
        SpectralResponse {
            r_bar: gen(0),
            g_bar: gen(1),
            b_bar: gen(2),
        }
    }

    fn apply_response(resp: &SpectralResponse, x: &[f64]) -> [f64; 3] {
        let dot = |a: &[f64]| a.iter().zip(x).map(|(&w, &v)| w * v).sum();
        [dot(&resp.r_bar), dot(&resp.g_bar), dot(&resp.b_bar)]
    }

    #[test]
    fn fit_recovers_a_constructed_response() {
        let n_channels = 8;
        let truth = random_response(n_channels, 6);
        let mut rng = stream(7, 0, Purpose::Misc);
        let n = 32;
        let mut hs = Vec::new();
        let mut rgb = Vec::new();
        for _ in 0..n {
            let x: Vec<f64> = (0..n_channels).map(|_| rng.gen::<f64>()).collect();
            rgb.extend_from_slice(&apply_response(&truth, &x));
            hs.extend(x);
        }
        let fit = fit_linear_map(&hs, &rgb, n_channels).unwrap();
        for (got, want) in [
            (&fit.r_bar, &truth.r_bar),
            (&fit.g_bar, &truth.g_bar),
            (&fit.b_bar, &truth.b_bar),
        ] {
            for i in 0..n_channels {
                let rel = (got[i] - want[i]).abs() / want[i].abs().max(1e-3);
                assert!(rel < 1e-6, "weight {i}: {} vs {}", got[i], want[i]);
            }
        }
    }

    #[test]
    fn one_hot_spectra_read_off_the_response_directly() {
        let n_channels = 5;
        let mut rng = stream(8, 0, Purpose::Misc);
        let mut hs = vec![0.0; n_channels * n_channels];
        let mut rgb = Vec::new();
        for i in 0..n_channels {
            hs[i * n_channels + i] = 1.0;
            for _ in 0..3 {
                rgb.push(rng.gen::<f64>());
            }
        }
        let fit = fit_linear_map(&hs, &rgb, n_channels).unwrap();
        for i in 0..n_channels {
            assert!((fit.r_bar[i] - rgb[i * 3]).abs() < 1e-6);
            assert!((fit.g_bar[i] - rgb[i * 3 + 1]).abs() < 1e-6);
            assert!((fit.b_bar[i] - rgb[i * 3 + 2]).abs() < 1e-6);
        }
    }

    #[test]
    fn duplicating_samples_leaves_the_fit_unchanged() {
        let n_channels = 6;
        let mut rng = stream(9, 0, Purpose::Misc);
        let n = 20;
        let hs: Vec<f64> = (0..n * n_channels).map(|_| rng.gen::<f64>()).collect();
        let rgb: Vec<f64> = (0..n * 3).map(|_| rng.gen::<f64>()).collect();
        let once = fit_linear_map(&hs, &rgb, n_channels).unwrap();
        let mut hs2 = hs.clone();
        hs2.extend_from_slice(&hs);
        let mut rgb2 = rgb.clone();
        rgb2.extend_from_slice(&rgb);
        let twice = fit_linear_map(&hs2, &rgb2, n_channels).unwrap();
        for i in 0..n_channels {
            assert!((once.r_bar[i] - twice.r_bar[i]).abs() < 1e-6);
            assert!((once.g_bar[i] - twice.g_bar[i]).abs() < 1e-6);
            assert!((once.b_bar[i] - twice.b_bar[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn fit_rejects_empty_and_mismatched_inputs() {
        assert!(fit_linear_map(&[], &[], 4).is_err());
        assert!(fit_linear_map(&[1.0; 8], &[1.0; 5], 4).is_err());
        assert!(fit_linear_map(&[1.0; 7], &[1.0; 6], 4).is_err());
    }

    #[test]
    fn ridge_residual_is_nonincreasing_as_mu_shrinks() {
        let n_channels = 6;
        let mut rng = stream(10, 0, Purpose::Misc);
        let n = 24;
        let hs: Vec<f64> = (0..n * n_channels).map(|_| rng.gen::<f64>()).collect();
        let rgb: Vec<f64> = (0..n * 3).map(|_| rng.gen::<f64>()).collect();
        let residual = |resp: &SpectralResponse| -> f64 {
            let mut total = 0.0;
            for s in 0..n {
                let sim = apply_response(resp, &hs[s * n_channels..(s + 1) * n_channels]);
                for k in 0..3 {
                    total += (rgb[s * 3 + k] - sim[k]) * (rgb[s * 3 + k] - sim[k]);
                }
            }
            total
        };
        let mut last = f64::INFINITY;
        for mu in [1e-1, 1e-3, 1e-5, 1e-8] {
            let r = residual(&fit_linear_map_with_ridge(&hs, &rgb, n_channels, mu).unwrap());
            assert!(r <= last + 1e-12, "residual rose from {last} to {r} at μ={mu}");
            last = r;
        }
    }

    #[test]
    fn selector_response_reproduces_pseudo_rgb() {
        let wl = vec![503.0, 555.0, 622.0];
        let cube = random_cube(4, 3, wl, 11);
        let mut selector = SpectralResponse {
            r_bar: vec![0.0; 3],
            g_bar: vec![0.0; 3],
            b_bar: vec![0.0; 3],
        };
        selector.r_bar[2] = 1.0;
        selector.g_bar[1] = 1.0;
        selector.b_bar[0] = 1.0;
        let sim = simulate_sensor(&cube, &selector).unwrap();
        let rgb = pseudo_rgb_fixed(&cube).unwrap();
        assert_eq!(sim, rgb);
    }

    #[test]
    fn zero_response_gives_black_and_output_is_clamped() {
        let cube = random_cube(3, 3, vec![500.0, 550.0], 12);
        let zero = SpectralResponse {
            r_bar: vec![0.0; 2],
            g_bar: vec![0.0; 2],
            b_bar: vec![0.0; 2],
        };
        assert!(simulate_sensor(&cube, &zero).unwrap().iter().all(|&v| v == 0.0));
        let hot = SpectralResponse {
            r_bar: vec![50.0; 2],
            g_bar: vec![-50.0; 2],
            b_bar: vec![0.5; 2],
        };
        let sim = simulate_sensor(&cube, &hot).unwrap();
        assert!(sim.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let short = SpectralResponse {
            r_bar: vec![0.0; 3],
            g_bar: vec![0.0; 3],
            b_bar: vec![0.0; 3],
        };
        assert!(simulate_sensor(&cube, &short).is_err());
    }

    #[test]
    fn fit_then_simulate_closes_the_loop_on_noiseless_data() {
        // Build a cube, produce its RGB through a hidden response, fit from
        // the pixel pairs, and simulate: the reconstruction should match the
        // target image to numerical precision.
        let wl: Vec<f64> = (0..10).map(|i| 450.0 + 20.0 * i as f64).collect();
        let cube = random_cube(8, 6, wl, 13);
        let truth = random_response(10, 14);
        let target = simulate_sensor(&cube, &truth).unwrap();
        let fit = fit_linear_map(cube.data(), &target, 10).unwrap();
        let sim = simulate_sensor(&cube, &fit).unwrap();
        let worst = sim
            .iter()
            .zip(&target)
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(worst < 1e-5, "worst pixel error {worst}");
    }

    #[test]
    fn simulation_is_linear_in_the_response_inside_the_clamp() {
        let cube = random_cube(4, 4, vec![500.0, 550.0, 600.0], 15);
        let r1 = random_response(3, 16);
        let r2 = random_response(3, 17);
        let combo = SpectralResponse {
            r_bar: r1.r_bar.iter().zip(&r2.r_bar).map(|(&a, &b)| 0.3 * a + 0.5 * b).collect(),
            g_bar: r1.g_bar.iter().zip(&r2.g_bar).map(|(&a, &b)| 0.3 * a + 0.5 * b).collect(),
            b_bar: r1.b_bar.iter().zip(&r2.b_bar).map(|(&a, &b)| 0.3 * a + 0.5 * b).collect(),
        };
        let s1 = simulate_sensor(&cube, &r1).unwrap();
        let s2 = simulate_sensor(&cube, &r2).unwrap();
        let sc = simulate_sensor(&cube, &combo).unwrap();
        for i in 0..sc.len() {
            assert!((sc[i] - (0.3 * s1[i] + 0.5 * s2[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn split_keeps_everything_when_keep_equals_n() {
        let split = superres_split(7, 7).unwrap();
        assert_eq!(split.train, vec![0, 1, 2, 3, 4, 5, 6]);
        assert!(split.held_out.is_empty());
    }

    #[test]
    fn split_of_128_into_64_takes_every_second_channel() {
        let split = superres_split(128, 64).unwrap();
        assert_eq!(split.train.len(), 64);
        assert!(split.train.iter().enumerate().all(|(i, &c)| c == 2 * i));
        assert!(split.held_out.iter().enumerate().all(|(i, &c)| c == 2 * i + 1));
    }

    #[test]
    fn split_partitions_the_channels() {
        for (n, keep) in [(128, 16), (11, 4), (9, 9), (5, 1), (100, 33)] {
            let split = superres_split(n, keep).unwrap();
            assert_eq!(split.train.len(), keep);
            let mut all: Vec<usize> = split.train.iter().chain(&split.held_out).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>(), "n={n} keep={keep}");
            assert!(split.train.windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn split_validates_keep() {
        assert!(superres_split(8, 0).is_err());
        assert!(superres_split(8, 9).is_err());
        let split = superres_split(8, 4).unwrap();
        let wl: Vec<f64> = (0..8).map(|i| 400.0 + 10.0 * i as f64).collect();
        assert_eq!(split.train_wavelengths(&wl), vec![400.0, 420.0, 440.0, 460.0]);
        assert_eq!(split.held_out_wavelengths(&wl).len(), 4);
    }
}
