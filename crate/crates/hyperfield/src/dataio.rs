//! File formats and dataset loading: HSC1 hyperspectral cubes, pose JSON,
//! single-channel PGM masks, PPM color rasters, and spectral-response CSV.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use hyperfield_core::cube::HyperCube;
use hyperfield_core::sampling::CameraFrame;
use hyperfield_core::spectral::SpectralResponse;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

const HSC1_MAGIC: &[u8; 4] = b"HSC1";

/// Write a cube as HSC1: magic, little-endian u32 height/width/channels,
/// the channel wavelengths as f32, then all intensities as f32 in
/// (row, column, channel) order. Intensities are clamped to [0, 1].
pub fn write_cube(cube: &HyperCube, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 4 * (cube.n_channels() + cube.data().len()));
    buf.extend_from_slice(HSC1_MAGIC);
    buf.extend_from_slice(&(cube.height() as u32).to_le_bytes());
    buf.extend_from_slice(&(cube.width() as u32).to_le_bytes());
    buf.extend_from_slice(&(cube.n_channels() as u32).to_le_bytes());
    for &wl in cube.wavelengths() {
        buf.extend_from_slice(&(wl as f32).to_le_bytes());
    }
    for &v in cube.data() {
        if !v.is_finite() {
            return Err(AppError::numerical(format!(
                "cube contains non-finite intensity {v}"
            )));
        }
        buf.extend_from_slice(&(v.clamp(0.0, 1.0) as f32).to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

fn take_u32(bytes: &[u8], off: &mut usize, what: &str) -> Result<u32> {
    let end = *off + 4;
    if end > bytes.len() {
        return Err(AppError::data(format!("truncated HSC1 file: missing {what}")));
    }
    let v = u32::from_le_bytes(bytes[*off..end].try_into().unwrap());
    *off = end;
    Ok(v)
}

fn take_f32(bytes: &[u8], off: &mut usize, what: &str) -> Result<f32> {
    let end = *off + 4;
    if end > bytes.len() {
        return Err(AppError::data(format!("truncated HSC1 file: missing {what}")));
    }
    let v = f32::from_le_bytes(bytes[*off..end].try_into().unwrap());
    *off = end;
    Ok(v)
}

/// Read an HSC1 cube; intensities are clamped to [0, 1] on load.
pub fn read_cube(path: &Path) -> Result<HyperCube> {
    let bytes = fs::read(path)
        .map_err(|e| AppError::data(format!("cannot read {}: {e}", path.display())))?;
    if bytes.len() < 4 || &bytes[..4] != HSC1_MAGIC {
        return Err(AppError::data(format!(
            "{} is not an HSC1 cube (bad magic)",
            path.display()
        )));
    }
    let mut off = 4;
    let h = take_u32(&bytes, &mut off, "height")? as usize;
    let w = take_u32(&bytes, &mut off, "width")? as usize;
    let n = take_u32(&bytes, &mut off, "channel count")? as usize;
    let mut wavelengths = Vec::with_capacity(n);
    for i in 0..n {
        let wl = take_f32(&bytes, &mut off, "wavelength table")? as f64;
        if !wl.is_finite() {
            return Err(AppError::data(format!("wavelength {i} is not finite")));
        }
        wavelengths.push(wl);
    }
    if !wavelengths.windows(2).all(|p| p[0] < p[1]) {
        return Err(AppError::data(
            "HSC1 wavelengths are not strictly ascending",
        ));
    }
    let count = h
        .checked_mul(w)
        .and_then(|p| p.checked_mul(n))
        .ok_or_else(|| AppError::data("HSC1 dimensions overflow"))?;
    if bytes.len() != off + 4 * count {
        return Err(AppError::data(format!(
            "truncated HSC1 file: {} bytes for {} declared intensities",
            bytes.len() - off,
            count
        )));
    }
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        let v = take_f32(&bytes, &mut off, "intensity payload")? as f64;
        if !v.is_finite() {
            return Err(AppError::data("HSC1 payload contains non-finite values"));
        }
        data.push(v.clamp(0.0, 1.0));
    }
    HyperCube::new(w, h, wavelengths, data).map_err(AppError::from)
}

/// One camera in a pose file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseFrame {
    pub file_path: String,
    /// 4×4 row-major camera-to-world transform.
    pub transform_matrix: [[f64; 4]; 4],
}

/// Pose file: shared pinhole intrinsics plus one transform per frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseFile {
    pub fl_x: f64,
    pub fl_y: f64,
    pub cx: f64,
    pub cy: f64,
    pub w: u32,
    pub h: u32,
    pub frames: Vec<PoseFrame>,
}

/// Save cameras sharing one set of intrinsics.
pub fn save_poses(cameras: &[CameraFrame], path: &Path) -> Result<()> {
    let first = cameras
        .first()
        .ok_or_else(|| AppError::data("pose file needs at least one camera"))?;
    for c in cameras {
        if c.fx != first.fx
            || c.fy != first.fy
            || c.cx != first.cx
            || c.cy != first.cy
            || c.width != first.width
            || c.height != first.height
        {
            return Err(AppError::data(
                "pose file requires shared intrinsics across frames",
            ));
        }
    }
    let file = PoseFile {
        fl_x: first.fx,
        fl_y: first.fy,
        cx: first.cx,
        cy: first.cy,
        w: first.width as u32,
        h: first.height as u32,
        frames: cameras
            .iter()
            .map(|c| PoseFrame {
                file_path: c.image_path.clone(),
                transform_matrix: c.camera_to_world,
            })
            .collect(),
    };
    fs::write(path, serde_json::to_string_pretty(&file).unwrap())?;
    Ok(())
}

/// Load a pose file into validated camera frames.
pub fn load_poses(path: &Path) -> Result<Vec<CameraFrame>> {
    let text = fs::read_to_string(path)
        .map_err(|e| AppError::data(format!("cannot read {}: {e}", path.display())))?;
    let file: PoseFile = serde_json::from_str(&text)
        .map_err(|e| AppError::data(format!("malformed pose JSON: {e}")))?;
    let mut cameras = Vec::with_capacity(file.frames.len());
    for frame in file.frames {
        let cam = CameraFrame {
            fx: file.fl_x,
            fy: file.fl_y,
            cx: file.cx,
            cy: file.cy,
            width: file.w as usize,
            height: file.h as usize,
            camera_to_world: frame.transform_matrix,
            image_path: frame.file_path,
        };
        cam.validate()
            .map_err(|e| AppError::data(format!("pose for {}: {e}", cam.image_path)))?;
        cameras.push(cam);
    }
    Ok(cameras)
}

/// Write a background mask as binary PGM (P5, maxval 255); background pixels
/// (`true`) are stored white.
pub fn write_mask(mask: &[bool], width: usize, height: usize, path: &Path) -> Result<()> {
    if mask.len() != width * height {
        return Err(AppError::data(format!(
            "mask holds {} pixels for a {width}×{height} raster",
            mask.len()
        )));
    }
    let mut out = Vec::with_capacity(20 + mask.len());
    out.extend_from_slice(format!("P5\n{width} {height}\n255\n").as_bytes());
    out.extend(mask.iter().map(|&bg| if bg { 255u8 } else { 0 }));
    fs::write(path, out)?;
    Ok(())
}

/// Parse a binary netpbm header (`P5`/`P6`), returning width, height, and
/// the payload offset. Comment lines are not supported.
fn parse_netpbm_header(
    bytes: &[u8],
    magic: &[u8],
    what: &str,
    path: &Path,
) -> Result<(usize, usize, usize)> {
    let header_err = || AppError::data(format!("{} is not a {what}", path.display()));
    if !bytes.starts_with(magic) {
        return Err(header_err());
    }
    // Header: three whitespace-separated fields after the magic, then one
    // whitespace byte before the payload.
    let mut fields = Vec::new();
    let mut off = magic.len();
    while fields.len() < 3 {
        while off < bytes.len() && bytes[off].is_ascii_whitespace() {
            off += 1;
        }
        let start = off;
        while off < bytes.len() && !bytes[off].is_ascii_whitespace() {
            off += 1;
        }
        if start == off {
            return Err(header_err());
        }
        let text = std::str::from_utf8(&bytes[start..off]).map_err(|_| header_err())?;
        fields.push(text.parse::<usize>().map_err(|_| header_err())?);
    }
    off += 1; // single whitespace after maxval
    if fields[2] != 255 {
        return Err(header_err());
    }
    Ok((fields[0], fields[1], off))
}

/// Read a binary PGM mask; any nonzero sample is background.
pub fn read_mask(path: &Path) -> Result<(Vec<bool>, usize, usize)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| AppError::data(format!("cannot read {}: {e}", path.display())))?;
    let (width, height, off) = parse_netpbm_header(&bytes, b"P5", "binary PGM mask", path)?;
    if off + width * height != bytes.len() {
        return Err(AppError::data(format!(
            "{} is not a binary PGM mask",
            path.display()
        )));
    }
    let mask = bytes[off..].iter().map(|&b| b != 0).collect();
    Ok((mask, width, height))
}

/// Background mask by thresholding one channel: pixels whose intensity in
/// `channel` is at least `threshold` are background when `bright_background`
/// and foreground otherwise.
pub fn threshold_mask(
    cube: &HyperCube,
    channel: usize,
    threshold: f64,
    bright_background: bool,
) -> Result<Vec<bool>> {
    let plane = cube.channel_plane(channel)?;
    Ok(plane
        .iter()
        .map(|&v| (v >= threshold) == bright_background)
        .collect())
}

/// Write an H·W·3 image in [0, 1] as binary PPM (P6, maxval 255).
pub fn write_rgb_image(rgb: &[f64], width: usize, height: usize, path: &Path) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(AppError::data(format!(
            "rgb buffer holds {} values for a {width}×{height} raster",
            rgb.len()
        )));
    }
    let mut out = Vec::with_capacity(20 + rgb.len());
    out.extend_from_slice(format!("P6\n{width} {height}\n255\n").as_bytes());
    out.extend(
        rgb.iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::write(path, out)?;
    Ok(())
}

/// Read a binary PPM (P6, maxval 255) back into H·W·3 values in [0, 1].
pub fn read_rgb_image(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| AppError::data(format!("cannot read {}: {e}", path.display())))?;
    let (width, height, off) = parse_netpbm_header(&bytes, b"P6", "binary PPM image", path)?;
    if off + width * height * 3 != bytes.len() {
        return Err(AppError::data(format!(
            "{} is not a binary PPM image",
            path.display()
        )));
    }
    let rgb = bytes[off..].iter().map(|&b| b as f64 / 255.0).collect();
    Ok((rgb, width, height))
}

/// Write a spectral response as CSV with header `wavelength_nm,r,g,b`.
pub fn write_response(
    wavelengths: &[f64],
    response: &SpectralResponse,
    path: &Path,
) -> Result<()> {
    if wavelengths.len() != response.n_channels() {
        return Err(AppError::data(format!(
            "{} wavelengths for a {}-channel response",
            wavelengths.len(),
            response.n_channels()
        )));
    }
    let mut f = fs::File::create(path)?;
    writeln!(f, "wavelength_nm,r,g,b")?;
    for i in 0..wavelengths.len() {
        writeln!(
            f,
            "{},{},{},{}",
            wavelengths[i], response.r_bar[i], response.g_bar[i], response.b_bar[i]
        )?;
    }
    Ok(())
}

/// Read a spectral response CSV written by [`write_response`].
pub fn read_response(path: &Path) -> Result<(Vec<f64>, SpectralResponse)> {
    let text = fs::read_to_string(path)
        .map_err(|e| AppError::data(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("wavelength_nm,r,g,b") => {}
        _ => {
            return Err(AppError::data(format!(
                "{} is missing the response CSV header",
                path.display()
            )))
        }
    }
    let mut wavelengths = Vec::new();
    let mut response = SpectralResponse {
        r_bar: Vec::new(),
        g_bar: Vec::new(),
        b_bar: Vec::new(),
    };
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(AppError::data(format!("response CSV row {i} malformed")));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| AppError::data(format!("response CSV row {i}: bad number {s:?}")))
        };
        wavelengths.push(parse(fields[0])?);
        response.r_bar.push(parse(fields[1])?);
        response.g_bar.push(parse(fields[2])?);
        response.b_bar.push(parse(fields[3])?);
    }
    if wavelengths.is_empty() {
        return Err(AppError::data("response CSV has no rows"));
    }
    Ok((wavelengths, response))
}

/// One dataset frame: a posed camera and its hyperspectral image.
#[derive(Debug, Clone)]
pub struct Frame {
    pub camera: CameraFrame,
    pub cube: HyperCube,
}

/// A loaded dataset with a shared wavelength axis.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub frames: Vec<Frame>,
    pub wavelengths: Vec<f64>,
}

/// Load a dataset directory: `poses.json` plus the HSC1 cube each frame's
/// `file_path` points at (relative to the directory).
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let cameras = load_poses(&dir.join("poses.json"))?;
    if cameras.is_empty() {
        return Err(AppError::data("dataset has no frames"));
    }
    let mut frames = Vec::with_capacity(cameras.len());
    let mut wavelengths: Option<Vec<f64>> = None;
    for camera in cameras {
        let cube = read_cube(&dir.join(&camera.image_path))?;
        if cube.width() != camera.width || cube.height() != camera.height {
            return Err(AppError::data(format!(
                "{}: cube is {}×{} but the camera expects {}×{}",
                camera.image_path,
                cube.width(),
                cube.height(),
                camera.width,
                camera.height
            )));
        }
        match &wavelengths {
            None => wavelengths = Some(cube.wavelengths().to_vec()),
            Some(wl) => {
                if wl != cube.wavelengths() {
                    return Err(AppError::data(format!(
                        "{}: wavelength axis differs from the first frame",
                        camera.image_path
                    )));
                }
            }
        }
        frames.push(Frame { camera, cube });
    }
    Ok(Dataset {
        frames,
        wavelengths: wavelengths.unwrap(),
    })
}

/// Directory path for a dataset's frame files.
pub fn frames_dir(dir: &Path) -> PathBuf {
    dir.join("frames")
}
