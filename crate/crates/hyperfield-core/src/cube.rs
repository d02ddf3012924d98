//! Hyperspectral image cubes: a dense H×W raster with one intensity per
//! wavelength channel, stored row-major with the channel axis fastest.

use alloc::vec::Vec;

use crate::error::{CoreError, Result};

/// A hyperspectral cube. `data[(y·W + x)·N + c]` is the intensity of pixel
/// `(x, y)` in channel `c`; `wavelengths` holds the N channel centers in
/// nanometres, strictly ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperCube {
    width: usize,
    height: usize,
    wavelengths: Vec<f64>,
    data: Vec<f64>,
}

impl HyperCube {
    pub fn new(
        width: usize,
        height: usize,
        wavelengths: Vec<f64>,
        data: Vec<f64>,
    ) -> Result<Self> {
        if width == 0 || height == 0 || wavelengths.is_empty() {
            return Err(CoreError::InvalidArgument(
                "cube dimensions must be positive".into(),
            ));
        }
        if !wavelengths.windows(2).all(|p| p[0] < p[1]) || wavelengths[0] <= 0.0 {
            return Err(CoreError::InvalidArgument(
                "wavelengths must be positive and strictly ascending".into(),
            ));
        }
        let expect = width * height * wavelengths.len();
        if data.len() != expect {
            return Err(CoreError::InvalidArgument(alloc::format!(
                "cube data holds {} values, dimensions require {expect}",
                data.len()
            )));
        }
        Ok(HyperCube {
            width,
            height,
            wavelengths,
            data,
        })
    }

    /// Cube of the given dimensions with every intensity set to `value`.
    pub fn filled(width: usize, height: usize, wavelengths: Vec<f64>, value: f64) -> Result<Self> {
        let n = width * height * wavelengths.len();
        HyperCube::new(width, height, wavelengths, alloc::vec![value; n])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_channels(&self) -> usize {
        self.wavelengths.len()
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn at(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.wavelengths.len() + c]
    }

    pub fn at_mut(&mut self, x: usize, y: usize, c: usize) -> &mut f64 {
        &mut self.data[(y * self.width + x) * self.wavelengths.len() + c]
    }

    /// The full spectrum of one pixel as a contiguous slice of length N.
    pub fn spectrum(&self, x: usize, y: usize) -> &[f64] {
        let n = self.wavelengths.len();
        let base = (y * self.width + x) * n;
        &self.data[base..base + n]
    }

    pub fn spectrum_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let n = self.wavelengths.len();
        let base = (y * self.width + x) * n;
        &mut self.data[base..base + n]
    }

    /// Copy channel `c` out as an H·W row-major image plane.
    pub fn channel_plane(&self, c: usize) -> Result<Vec<f64>> {
        let n = self.wavelengths.len();
        if c >= n {
            return Err(CoreError::InvalidArgument(alloc::format!(
                "channel {c} out of range (cube has {n})"
            )));
        }
        Ok(self.data.iter().skip(c).step_by(n).copied().collect())
    }

    /// Index of the channel whose center is closest to `lambda_nm`; ties go
    /// to the lower index.
    pub fn nearest_channel(&self, lambda_nm: f64) -> usize {
        let mut best = 0;
        let mut dist = f64::INFINITY;
        for (i, &w) in self.wavelengths.iter().enumerate() {
            let d = (w - lambda_nm).abs();
            if d < dist {
                dist = d;
                best = i;
            }
        }
        best
    }

    /// Require another cube to share this one's raster and wavelength axes.
    pub fn check_compatible(&self, other: &HyperCube) -> Result<()> {
        if self.width != other.width
            || self.height != other.height
            || self.wavelengths != other.wavelengths
        {
            return Err(CoreError::InvalidArgument(
                "cubes differ in raster size or wavelength axis".into(),
            ));
        }
        Ok(())
    }
}

/// Overwrite every channel of masked pixels with `fill_value`. The mask is
/// H·W row-major with `true` marking background.
pub fn fill_background(cube: &mut HyperCube, mask: &[bool], fill_value: f64) -> Result<()> {
    if mask.len() != cube.width * cube.height {
        return Err(CoreError::InvalidArgument(alloc::format!(
            "mask holds {} pixels, cube has {}",
            mask.len(),
            cube.width * cube.height
        )));
    }
    let n = cube.wavelengths.len();
    for (p, &bg) in mask.iter().enumerate() {
        if bg {
            cube.data[p * n..(p + 1) * n].fill(fill_value);
        }
    }
    Ok(())
}

/// Channel with the greatest intensity variance over foreground pixels
/// (`mask` true = background, as in [`fill_background`]); ties break to the
/// lowest index.
pub fn select_grayscale_channel(cube: &HyperCube, mask: &[bool]) -> Result<usize> {
    if mask.len() != cube.width * cube.height {
        return Err(CoreError::InvalidArgument(
            "mask size does not match cube raster".into(),
        ));
    }
    let fg = mask.iter().filter(|&&bg| !bg).count();
    if fg < 2 {
        return Err(CoreError::InvalidArgument(alloc::format!(
            "variance needs at least 2 foreground pixels, mask leaves {fg}"
        )));
    }
    let n = cube.n_channels();
    let mut best = 0usize;
    let mut best_var = f64::NEG_INFINITY;
    for c in 0..n {
        let mut mean = 0.0;
        for (p, &bg) in mask.iter().enumerate() {
            if !bg {
                mean += cube.data[p * n + c];
            }
        }
        mean /= fg as f64;
        let mut var = 0.0;
        for (p, &bg) in mask.iter().enumerate() {
            if !bg {
                let d = cube.data[p * n + c] - mean;
                var += d * d;
            }
        }
        var /= fg as f64;
        if var > best_var {
            best_var = var;
            best = c;
        }
    }
    Ok(best)
}
