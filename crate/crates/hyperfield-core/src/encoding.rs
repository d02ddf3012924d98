//! Input encodings: sinusoidal (wavelength, direction) and trainable
//! multiresolution grids (position, and position+wavelength for the 4-D
//! variants).
//!
//! Grids are dense — every level stores a full table of vertices, so there are
//! no hash collisions. Tables live in a [`crate::autodiff::ParamSet`] as one
//! `(total_vertices, features)` tensor per grid; this module computes corner
//! indices and interpolation weights and emits `grid_gather` ops.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{NodeId, Tape};
use crate::error::{CoreError, Result};
use crate::math;

/// Sinusoidal encoding of a scalar over a fixed domain.
///
/// The input is mapped to `x̃ = (x - min)/(max - min)` (clamped to `[0, 1]`)
/// and expanded to `[sin(2^k·π·x̃), cos(2^k·π·x̃)]` for `k = 0..n_terms-1`,
/// so the output has `2·n_terms` entries, each in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinusoidalEncoding {
    pub n_terms: usize,
    pub min: f64,
    pub max: f64,
}

impl SinusoidalEncoding {
    pub fn new(n_terms: usize, min: f64, max: f64) -> Result<Self> {
        if n_terms == 0 {
            return Err(CoreError::InvalidArgument(
                "sinusoidal encoding needs at least one term".into(),
            ));
        }
        if !(min < max) {
            return Err(CoreError::InvalidArgument(format!(
                "degenerate sinusoidal domain [{min}, {max}]"
            )));
        }
        Ok(SinusoidalEncoding { n_terms, min, max })
    }

    /// Output width per encoded scalar.
    pub fn output_dim(&self) -> usize {
        2 * self.n_terms
    }

    /// Encode one scalar into `out` (which must have `2·n_terms` slots).
    pub fn encode_into(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.output_dim());
        let xt = ((x - self.min) / (self.max - self.min)).clamp(0.0, 1.0);
        let mut freq = core::f64::consts::PI;
        for k in 0..self.n_terms {
            out[2 * k] = math::sin(freq * xt);
            out[2 * k + 1] = math::cos(freq * xt);
            freq *= 2.0;
        }
    }

    pub fn encode(&self, x: f64) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.output_dim()];
        self.encode_into(x, &mut out);
        out
    }

    /// Encode a batch of scalars into a `(len, 2·n_terms)` row-major buffer.
    pub fn encode_batch(&self, xs: &[f64]) -> Vec<f64> {
        let d = self.output_dim();
        let mut out = alloc::vec![0.0; xs.len() * d];
        for (i, &x) in xs.iter().enumerate() {
            self.encode_into(x, &mut out[i * d..(i + 1) * d]);
        }
        out
    }

    /// Encode each component of a vector and concatenate
    /// (`dim·2·n_terms` outputs, component-major).
    pub fn encode_components(&self, v: &[f64], out: &mut [f64]) {
        let d = self.output_dim();
        debug_assert_eq!(out.len(), v.len() * d);
        for (i, &x) in v.iter().enumerate() {
            self.encode_into(x, &mut out[i * d..(i + 1) * d]);
        }
    }
}

/// Hyperparameters of one multiresolution grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub levels: usize,
    pub base_resolution: usize,
    pub growth_factor: f64,
    pub features_per_level: usize,
}

impl GridConfig {
    /// Cells per axis at `level`: `round(base · growth^level)`.
    pub fn resolution(&self, level: usize) -> usize {
        math::round(self.base_resolution as f64 * math::powi(self.growth_factor, level as i32))
            as usize
    }
}

/// Geometry defaults: six levels from 16 to 122 cells per axis.
pub const GEO_GRID: GridConfig = GridConfig {
    levels: 6,
    base_resolution: 16,
    growth_factor: 1.5,
    features_per_level: 2,
};

/// 4-D (position + wavelength) defaults: four levels from 4 to 32 cells —
/// quadrilinear tables grow with the fourth power of resolution, so these
/// stay much coarser than the 3-D geometry grid.
pub const GEO4_GRID: GridConfig = GridConfig {
    levels: 4,
    base_resolution: 4,
    growth_factor: 2.0,
    features_per_level: 2,
};

/// Proposal-stage defaults: four levels from 8 to 64 cells per axis.
pub const PROP_GRID: GridConfig = GridConfig {
    levels: 4,
    base_resolution: 8,
    growth_factor: 2.0,
    features_per_level: 2,
};

#[derive(Debug, Clone, Copy)]
struct Level {
    resolution: usize,
    vertex_offset: usize,
}

/// A dense multiresolution feature grid over the unit box.
///
/// Spatial coordinates are normalized by the stored axis-aligned bounds; for
/// 4-D grids the fourth axis is a wavelength normalized by `lambda_domain`.
/// The trainable table is a single `(total_vertices, features_per_level)`
/// tensor; levels occupy disjoint vertex ranges.
#[derive(Debug, Clone)]
pub struct GridEncoding {
    pub config: GridConfig,
    pub input_dim: usize,
    levels: Vec<Level>,
    total_vertices: usize,
    pub aabb_min: [f64; 3],
    pub aabb_max: [f64; 3],
    pub lambda_domain: (f64, f64),
}

impl GridEncoding {
    /// Build grid metadata for 3-D (position) or 4-D (position + λ) input.
    pub fn new(
        config: GridConfig,
        input_dim: usize,
        aabb_min: [f64; 3],
        aabb_max: [f64; 3],
        lambda_domain: (f64, f64),
    ) -> Result<Self> {
        if input_dim != 3 && input_dim != 4 {
            return Err(CoreError::InvalidArgument(format!(
                "grid input_dim must be 3 or 4, got {input_dim}"
            )));
        }
        if config.levels == 0 || config.features_per_level == 0 || config.base_resolution == 0 {
            return Err(CoreError::InvalidArgument(
                "grid config fields must be positive".into(),
            ));
        }
        for a in 0..3 {
            if !(aabb_min[a] < aabb_max[a]) {
                return Err(CoreError::InvalidArgument(format!(
                    "grid bounds degenerate on axis {a}: [{}, {}]",
                    aabb_min[a], aabb_max[a]
                )));
            }
        }
        if input_dim == 4 && !(lambda_domain.0 < lambda_domain.1) {
            return Err(CoreError::InvalidArgument(format!(
                "degenerate wavelength domain [{}, {}]",
                lambda_domain.0, lambda_domain.1
            )));
        }
        let mut levels = Vec::with_capacity(config.levels);
        let mut offset = 0usize;
        for l in 0..config.levels {
            let resolution = config.resolution(l);
            levels.push(Level {
                resolution,
                vertex_offset: offset,
            });
            let verts_per_axis = resolution + 1;
            let mut verts = 1usize;
            for _ in 0..input_dim {
                verts *= verts_per_axis;
            }
            offset += verts;
        }
        Ok(GridEncoding {
            config,
            input_dim,
            levels,
            total_vertices: offset,
            aabb_min,
            aabb_max,
            lambda_domain,
        })
    }

    pub fn total_vertices(&self) -> usize {
        self.total_vertices
    }

    /// Encoded feature width: `levels · features_per_level`.
    pub fn output_dim(&self) -> usize {
        self.config.levels * self.config.features_per_level
    }

    /// Shape of the trainable table tensor.
    pub fn table_shape(&self) -> (usize, usize) {
        (self.total_vertices, self.config.features_per_level)
    }

    pub fn corners(&self) -> usize {
        1 << self.input_dim
    }

    /// Normalize a point to the unit box (clamped).
    fn normalize(&self, p: &[f64], out: &mut [f64]) {
        for a in 0..3 {
            out[a] = ((p[a] - self.aabb_min[a]) / (self.aabb_max[a] - self.aabb_min[a]))
                .clamp(0.0, 1.0);
        }
        if self.input_dim == 4 {
            out[3] = ((p[3] - self.lambda_domain.0) / (self.lambda_domain.1 - self.lambda_domain.0))
                .clamp(0.0, 1.0);
        }
    }

    /// Corner indices and multilinear weights for a batch of points at one
    /// level. `points` is row-major `(rows, input_dim)`.
    pub fn lookup_level(&self, level: usize, points: &[f64]) -> (Vec<u32>, Vec<f64>) {
        let d = self.input_dim;
        let rows = points.len() / d;
        let corners = self.corners();
        let lv = self.levels[level];
        let res = lv.resolution;
        let verts_per_axis = res + 1;

        // Row-major vertex layout: axis 0 is the fastest-varying stride.
        let mut strides = [0usize; 4];
        let mut s = 1usize;
        for stride in strides.iter_mut().take(d) {
            *stride = s;
            s *= verts_per_axis;
        }

        let mut idx = alloc::vec![0u32; rows * corners];
        let mut wts = alloc::vec![0.0f64; rows * corners];
        let mut norm = [0.0f64; 4];
        for r in 0..rows {
            self.normalize(&points[r * d..r * d + d], &mut norm);
            let mut cell = [0usize; 4];
            let mut frac = [0.0f64; 4];
            for a in 0..d {
                let u = norm[a] * res as f64;
                let c = (math::floor(u) as usize).min(res - 1);
                cell[a] = c;
                frac[a] = u - c as f64;
            }
            for corner in 0..corners {
                let mut flat = lv.vertex_offset;
                let mut w = 1.0;
                for a in 0..d {
                    let bit = (corner >> a) & 1;
                    flat += (cell[a] + bit) * strides[a];
                    w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                }
                idx[r * corners + corner] = flat as u32;
                wts[r * corners + corner] = w;
            }
        }
        (idx, wts)
    }

    /// Record the full multi-level encoding of a point batch on the tape.
    ///
    /// `table` must be the grid's `(total_vertices, features)` tensor node.
    /// Returns a `(rows, levels·features)` node, differentiable w.r.t. the
    /// table.
    pub fn encode_on_tape(&self, tape: &mut Tape, table: NodeId, points: &[f64]) -> Result<NodeId> {
        if points.len() % self.input_dim != 0 {
            return Err(CoreError::InvalidArgument(format!(
                "point buffer length {} is not a multiple of input_dim {}",
                points.len(),
                self.input_dim
            )));
        }
        let tshape = tape.value(table).shape().to_vec();
        if tshape != [self.total_vertices, self.config.features_per_level] {
            return Err(CoreError::ShapeMismatch {
                op: "grid_encode",
                lhs: tshape,
                rhs: alloc::vec![self.total_vertices, self.config.features_per_level],
            });
        }
        let corners = self.corners();
        let mut acc: Option<NodeId> = None;
        for level in 0..self.config.levels {
            let (idx, wts) = self.lookup_level(level, points);
            let gathered = tape.grid_gather(table, idx, wts, corners)?;
            acc = Some(match acc {
                None => gathered,
                Some(prev) => tape.concat(prev, gathered)?,
            });
        }
        Ok(acc.expect("at least one level"))
    }
}
