//! The spectral radiance and density field family: continuous latent-decoder
//! variants (`C`, `sigma`), discrete per-channel variants (`C1`, `sigma1`),
//! wavelength-as-input variants (`C2`, `sigma2`), the scalar density
//! `sigma0`, and the proposal networks `P0`/`Plambda`.
//!
//! A [`Field`] owns a flat [`ParamSet`]; every evaluation binds the parameters
//! onto a fresh [`Tape`] and emits the variant's graph, so the same builders
//! serve training (gradients) and rendering (values only).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::autodiff::{NodeId, ParamSet, Tape, Tensor};
use crate::encoding::{GridConfig, GridEncoding, SinusoidalEncoding, GEO4_GRID, GEO_GRID, PROP_GRID};
use crate::error::{CoreError, Result};
use crate::rng::{stream, Purpose};
use crate::sampling::SceneBox;

pub const DEFAULT_LATENT_DIM: usize = 15;
pub const DEFAULT_LAMBDA_TERMS: usize = 8;
pub const DEFAULT_DECODER_HIDDEN: usize = 64;
pub const DEFAULT_DECODER_LAYERS: usize = 3;
/// Proposal latent width and hidden width of the `Plambda` decoder.
pub const PROP_LATENT_DIM: usize = 7;
/// Sinusoidal terms for the proposal decoder's wavelength input.
pub const PROP_LAMBDA_TERMS: usize = 2;
/// Exact-match tolerance for discrete channel selection, in nanometres.
pub const CHANNEL_TOL_NM: f64 = 1e-6;

const TRUNK_WIDTH: usize = 64;
const PROP_HIDDEN: usize = 16;
const DIR_TERMS: usize = 4;
const GRID_INIT_SCALE: f64 = 1e-4;

/// How radiance depends on wavelength.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RadianceVariant {
    /// Latent vector decoded per queried wavelength (continuous in λ).
    C,
    /// One output channel per cube wavelength; exact selection only.
    C1,
    /// Wavelength joins the position as a fourth grid coordinate.
    C2,
}

/// How density depends on wavelength.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityVariant {
    /// Latent vector decoded per queried wavelength.
    Sigma,
    /// Single scalar density, identical for every wavelength.
    Sigma0,
    /// One density channel per cube wavelength; exact selection only.
    Sigma1,
    /// Wavelength joins the position as a fourth grid coordinate.
    Sigma2,
}

/// Whether the proposal stages see the wavelength.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalVariant {
    /// Wavelength-independent proposal density.
    P0,
    /// Proposal latent decoded against an encoded wavelength.
    PLambda,
}

impl RadianceVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            RadianceVariant::C => "C",
            RadianceVariant::C1 => "C1",
            RadianceVariant::C2 => "C2",
        }
    }
}

impl DensityVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            DensityVariant::Sigma => "sigma",
            DensityVariant::Sigma0 => "sigma0",
            DensityVariant::Sigma1 => "sigma1",
            DensityVariant::Sigma2 => "sigma2",
        }
    }
}

impl ProposalVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            ProposalVariant::P0 => "P0",
            ProposalVariant::PLambda => "Plambda",
        }
    }
}

impl core::str::FromStr for RadianceVariant {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "C" | "c" => Ok(RadianceVariant::C),
            "C1" | "c1" => Ok(RadianceVariant::C1),
            "C2" | "c2" => Ok(RadianceVariant::C2),
            other => Err(CoreError::InvalidArgument(format!(
                "unknown radiance variant '{other}' (expected C, C1, or C2)"
            ))),
        }
    }
}

impl core::str::FromStr for DensityVariant {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigma" => Ok(DensityVariant::Sigma),
            "sigma0" => Ok(DensityVariant::Sigma0),
            "sigma1" => Ok(DensityVariant::Sigma1),
            "sigma2" => Ok(DensityVariant::Sigma2),
            other => Err(CoreError::InvalidArgument(format!(
                "unknown density variant '{other}' (expected sigma, sigma0, sigma1, or sigma2)"
            ))),
        }
    }
}

impl core::str::FromStr for ProposalVariant {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "P0" | "p0" => Ok(ProposalVariant::P0),
            "Plambda" | "plambda" | "PLambda" => Ok(ProposalVariant::PLambda),
            other => Err(CoreError::InvalidArgument(format!(
                "unknown proposal variant '{other}' (expected P0 or Plambda)"
            ))),
        }
    }
}

/// The six ablation rows, coarsest to richest, with their display names.
pub const ABLATION_ROWS: [(&str, RadianceVariant, DensityVariant, ProposalVariant); 6] = [
    ("C1_sigma0_P0", RadianceVariant::C1, DensityVariant::Sigma0, ProposalVariant::P0),
    ("C1_sigma1_P0", RadianceVariant::C1, DensityVariant::Sigma1, ProposalVariant::P0),
    ("C_sigma0_P0", RadianceVariant::C, DensityVariant::Sigma0, ProposalVariant::P0),
    ("C_sigma_P0", RadianceVariant::C, DensityVariant::Sigma, ProposalVariant::P0),
    ("C2_sigma2_P0", RadianceVariant::C2, DensityVariant::Sigma2, ProposalVariant::P0),
    ("C_sigma_Plambda", RadianceVariant::C, DensityVariant::Sigma, ProposalVariant::PLambda),
];

/// Complete description of a field: variants, decoder sizes, the cube's
/// wavelength grid, and the scene bounds the grids normalize against.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldConfig {
    pub radiance_variant: RadianceVariant,
    pub density_variant: DensityVariant,
    pub proposal_variant: ProposalVariant,
    /// Ascending wavelength grid of the cube, in nanometres.
    pub channel_wavelengths: Vec<f64>,
    pub latent_dim: usize,
    pub lambda_terms: usize,
    pub decoder_hidden: usize,
    pub decoder_layers: usize,
    /// Θ_σ is the identical vector to Θ_C (requires radiance variant `C`
    /// when the density variant is `sigma`).
    pub shared_latent: bool,
    pub scene_min: [f64; 3],
    pub scene_max: [f64; 3],
    pub geo_grid: GridConfig,
    pub geo4_grid: GridConfig,
    pub prop_grid: GridConfig,
}

impl FieldConfig {
    /// Default-sized config for the given variants, wavelengths, and bounds.
    pub fn new(
        radiance_variant: RadianceVariant,
        density_variant: DensityVariant,
        proposal_variant: ProposalVariant,
        channel_wavelengths: Vec<f64>,
        scene: SceneBox,
    ) -> Self {
        FieldConfig {
            radiance_variant,
            density_variant,
            proposal_variant,
            channel_wavelengths,
            latent_dim: DEFAULT_LATENT_DIM,
            lambda_terms: DEFAULT_LAMBDA_TERMS,
            decoder_hidden: DEFAULT_DECODER_HIDDEN,
            decoder_layers: DEFAULT_DECODER_LAYERS,
            shared_latent: true,
            scene_min: scene.min,
            scene_max: scene.max,
            geo_grid: GEO_GRID,
            geo4_grid: GEO4_GRID,
            prop_grid: PROP_GRID,
        }
    }

    pub fn n_channels(&self) -> usize {
        self.channel_wavelengths.len()
    }

    /// First and last wavelength of the cube grid.
    pub fn lambda_range(&self) -> (f64, f64) {
        (
            self.channel_wavelengths[0],
            self.channel_wavelengths[self.channel_wavelengths.len() - 1],
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.channel_wavelengths.len() < 2 {
            return Err(CoreError::InvalidArgument(format!(
                "field needs at least 2 wavelength channels, got {}",
                self.channel_wavelengths.len()
            )));
        }
        if self
            .channel_wavelengths
            .windows(2)
            .any(|w| !(w[1] > w[0]))
            || self.channel_wavelengths.iter().any(|&w| !(w > 0.0))
        {
            return Err(CoreError::InvalidArgument(
                "channel wavelengths must be positive and strictly ascending".into(),
            ));
        }
        if self.latent_dim == 0
            || self.lambda_terms == 0
            || self.decoder_hidden == 0
            || self.decoder_layers < 2
        {
            return Err(CoreError::InvalidArgument(
                "latent_dim, lambda_terms, decoder_hidden must be >= 1 and decoder_layers >= 2"
                    .into(),
            ));
        }
        for a in 0..3 {
            if !(self.scene_min[a] < self.scene_max[a]) {
                return Err(CoreError::EmptySceneBox);
            }
        }
        if self.shared_latent
            && self.density_variant == DensityVariant::Sigma
            && self.radiance_variant != RadianceVariant::C
        {
            return Err(CoreError::InvalidArgument(format!(
                "shared latent density requires the continuous radiance variant C, got {}",
                self.radiance_variant.as_str()
            )));
        }
        Ok(())
    }

    fn needs_grid3(&self) -> bool {
        matches!(self.radiance_variant, RadianceVariant::C | RadianceVariant::C1)
            || matches!(
                self.density_variant,
                DensityVariant::Sigma0 | DensityVariant::Sigma1
            )
            || (self.density_variant == DensityVariant::Sigma && !self.shared_latent)
    }

    fn needs_grid4(&self) -> bool {
        self.radiance_variant == RadianceVariant::C2
            || self.density_variant == DensityVariant::Sigma2
    }
}

/// Parameter names bound to their leaf nodes on one tape, in [`ParamSet`]
/// order so gradients can be zipped back against the parameters.
pub struct TapeBinding {
    ids: BTreeMap<String, NodeId>,
    ordered: Vec<NodeId>,
}

impl TapeBinding {
    fn id(&self, name: &str) -> NodeId {
        *self.ids.get(name).expect("parameter block bound on tape")
    }

    /// Leaf nodes in parameter order.
    pub fn leaves(&self) -> &[NodeId] {
        &self.ordered
    }
}

/// Density and radiance nodes in compositing layout `(rays·wavelengths,
/// samples)`, one row per (ray, λ) pair with λ varying fastest.
#[derive(Debug, Clone, Copy)]
pub struct FineBatch {
    pub sigma: NodeId,
    pub color: NodeId,
}

/// A spectral field plus its two proposal stages.
#[derive(Debug, Clone)]
pub struct Field {
    pub config: FieldConfig,
    pub params: ParamSet,
    grid3: Option<GridEncoding>,
    grid4: Option<GridEncoding>,
    prop_grid: GridEncoding,
    enc_dir: SinusoidalEncoding,
    enc_lambda: SinusoidalEncoding,
    enc_lambda_prop: SinusoidalEncoding,
}

fn xavier(params: &mut ParamSet, rng: &mut crate::rng::Rng, name: &str, fan_in: usize, fan_out: usize) -> Result<()> {
    let bound = crate::math::sqrt(6.0 / (fan_in + fan_out) as f64);
    let data: Vec<f64> = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    params.push(name, Tensor::matrix(fan_in, fan_out, data)?)?;
    Ok(())
}

fn linear_block(
    params: &mut ParamSet,
    rng: &mut crate::rng::Rng,
    prefix: &str,
    w: &str,
    b: &str,
    fan_in: usize,
    fan_out: usize,
) -> Result<()> {
    xavier(params, rng, &format!("{prefix}{w}"), fan_in, fan_out)?;
    params.push(
        &format!("{prefix}{b}"),
        Tensor::matrix(1, fan_out, alloc::vec![0.0; fan_out])?,
    )?;
    Ok(())
}

fn grid_block(
    params: &mut ParamSet,
    rng: &mut crate::rng::Rng,
    name: &str,
    grid: &GridEncoding,
) -> Result<()> {
    let (rows, feats) = grid.table_shape();
    let data: Vec<f64> = (0..rows * feats)
        .map(|_| rng.gen_range(-GRID_INIT_SCALE..GRID_INIT_SCALE))
        .collect();
    params.push(name, Tensor::matrix(rows, feats, data)?)?;
    Ok(())
}

/// Build a field with deterministic, seed-keyed initialization.
pub fn build_field(config: &FieldConfig, rng_seed: u64) -> Result<Field> {
    config.validate()?;
    let scene = SceneBox::new(config.scene_min, config.scene_max)?;
    let (lo, hi) = config.lambda_range();

    let grid3 = if config.needs_grid3() {
        Some(GridEncoding::new(
            config.geo_grid,
            3,
            scene.min,
            scene.max,
            (0.0, 1.0),
        )?)
    } else {
        None
    };
    let grid4 = if config.needs_grid4() {
        Some(GridEncoding::new(
            config.geo4_grid,
            4,
            scene.min,
            scene.max,
            (lo, hi),
        )?)
    } else {
        None
    };
    let prop_grid = GridEncoding::new(config.prop_grid, 3, scene.min, scene.max, (0.0, 1.0))?;
    let enc_dir = SinusoidalEncoding::new(DIR_TERMS, -1.0, 1.0)?;
    let enc_lambda = SinusoidalEncoding::new(config.lambda_terms, lo, hi)?;
    let enc_lambda_prop = SinusoidalEncoding::new(PROP_LAMBDA_TERMS, lo, hi)?;

    let mut rng = stream(rng_seed, 0, Purpose::Init);
    let mut params = ParamSet::new();
    let n = config.n_channels();
    let latent = config.latent_dim;
    let dir_dim = 3 * enc_dir.output_dim();

    if let Some(g3) = &grid3 {
        grid_block(&mut params, &mut rng, "geo3.grid", g3)?;
        linear_block(&mut params, &mut rng, "geo3.", "w0", "b0", g3.output_dim(), TRUNK_WIDTH)?;
        linear_block(&mut params, &mut rng, "geo3.", "w1", "b1", TRUNK_WIDTH, TRUNK_WIDTH)?;
        if matches!(config.radiance_variant, RadianceVariant::C | RadianceVariant::C1) {
            linear_block(&mut params, &mut rng, "geo3.", "feat_w", "feat_b", TRUNK_WIDTH, latent)?;
        }
        if config.density_variant == DensityVariant::Sigma0 {
            linear_block(&mut params, &mut rng, "geo3.", "scalar_w", "scalar_b", TRUNK_WIDTH, 1)?;
        }
        if config.density_variant == DensityVariant::Sigma1 {
            linear_block(&mut params, &mut rng, "geo3.", "channels_w", "channels_b", TRUNK_WIDTH, n)?;
        }
        if config.density_variant == DensityVariant::Sigma && !config.shared_latent {
            linear_block(&mut params, &mut rng, "geo3.", "latent_w", "latent_b", TRUNK_WIDTH, latent)?;
        }
    }
    if let Some(g4) = &grid4 {
        grid_block(&mut params, &mut rng, "geo4.grid", g4)?;
        linear_block(&mut params, &mut rng, "geo4.", "w0", "b0", g4.output_dim(), TRUNK_WIDTH)?;
        linear_block(&mut params, &mut rng, "geo4.", "w1", "b1", TRUNK_WIDTH, TRUNK_WIDTH)?;
        if config.radiance_variant == RadianceVariant::C2 {
            linear_block(&mut params, &mut rng, "geo4.", "feat_w", "feat_b", TRUNK_WIDTH, latent)?;
        }
        if config.density_variant == DensityVariant::Sigma2 {
            linear_block(&mut params, &mut rng, "geo4.", "scalar_w", "scalar_b", TRUNK_WIDTH, 1)?;
        }
    }
    // Radiance branch: geometry feature + encoded direction → trunk → head.
    linear_block(&mut params, &mut rng, "rad.", "w0", "b0", latent + dir_dim, TRUNK_WIDTH)?;
    match config.radiance_variant {
        RadianceVariant::C => {
            linear_block(&mut params, &mut rng, "rad.", "latent_w", "latent_b", TRUNK_WIDTH, latent)?
        }
        RadianceVariant::C1 => {
            linear_block(&mut params, &mut rng, "rad.", "channels_w", "channels_b", TRUNK_WIDTH, n)?
        }
        RadianceVariant::C2 => {
            linear_block(&mut params, &mut rng, "rad.", "scalar_w", "scalar_b", TRUNK_WIDTH, 1)?
        }
    }
    // Wavelength decoders.
    let dec_in = 2 * config.lambda_terms + latent;
    if config.radiance_variant == RadianceVariant::C {
        decoder_blocks(&mut params, &mut rng, "dec_c.", dec_in, config)?;
    }
    if config.density_variant == DensityVariant::Sigma {
        decoder_blocks(&mut params, &mut rng, "dec_s.", dec_in, config)?;
    }
    // Two proposal stages.
    for stage in 0..2 {
        let prefix = format!("prop{stage}.");
        grid_block(&mut params, &mut rng, &format!("{prefix}grid"), &prop_grid)?;
        linear_block(&mut params, &mut rng, &prefix, "w0", "b0", prop_grid.output_dim(), PROP_HIDDEN)?;
        match config.proposal_variant {
            ProposalVariant::P0 => {
                linear_block(&mut params, &mut rng, &prefix, "w1", "b1", PROP_HIDDEN, 1)?;
            }
            ProposalVariant::PLambda => {
                linear_block(&mut params, &mut rng, &prefix, "w1", "b1", PROP_HIDDEN, PROP_LATENT_DIM)?;
                let dec_in = PROP_LATENT_DIM + 2 * PROP_LAMBDA_TERMS;
                linear_block(&mut params, &mut rng, &prefix, "dec_w0", "dec_b0", dec_in, PROP_LATENT_DIM)?;
                linear_block(&mut params, &mut rng, &prefix, "dec_w1", "dec_b1", PROP_LATENT_DIM, 1)?;
            }
        }
    }

    Ok(Field {
        config: config.clone(),
        params,
        grid3,
        grid4,
        prop_grid,
        enc_dir,
        enc_lambda,
        enc_lambda_prop,
    })
}

fn decoder_blocks(
    params: &mut ParamSet,
    rng: &mut crate::rng::Rng,
    prefix: &str,
    input_dim: usize,
    config: &FieldConfig,
) -> Result<()> {
    let mut fan_in = input_dim;
    for layer in 0..config.decoder_layers {
        let fan_out = if layer + 1 == config.decoder_layers {
            1
        } else {
            config.decoder_hidden
        };
        linear_block(
            params,
            rng,
            prefix,
            &format!("w{layer}"),
            &format!("b{layer}"),
            fan_in,
            fan_out,
        )?;
        fan_in = fan_out;
    }
    Ok(())
}

impl Field {
    /// Push every parameter block onto the tape as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> TapeBinding {
        let mut ids = BTreeMap::new();
        let mut ordered = Vec::with_capacity(self.params.len());
        for (name, tensor) in self.params.iter() {
            let id = tape.leaf(tensor.clone().trainable());
            ids.insert(String::from(name), id);
            ordered.push(id);
        }
        TapeBinding { ids, ordered }
    }

    fn channel_index(&self, lambda_nm: f64) -> Result<usize> {
        self.config
            .channel_wavelengths
            .iter()
            .position(|&w| crate::math::abs(w - lambda_nm) <= CHANNEL_TOL_NM)
            .ok_or(CoreError::NoChannelMatch { lambda_nm })
    }

    fn linear(&self, tape: &mut Tape, b: &TapeBinding, x: NodeId, w: &str, bias: &str) -> Result<NodeId> {
        let xw = tape.matmul(x, b.id(w))?;
        tape.add_row(xw, b.id(bias))
    }

    /// Geometry trunk over the 3-D grid: `(rows, 3)` world points →
    /// `(rows, 64)` features.
    fn trunk3(&self, tape: &mut Tape, b: &TapeBinding, points: &[f64]) -> Result<NodeId> {
        let grid = self.grid3.as_ref().expect("3-D grid present");
        let enc = grid.encode_on_tape(tape, b.id("geo3.grid"), points)?;
        let h0 = self.linear(tape, b, enc, "geo3.w0", "geo3.b0")?;
        let h0 = tape.relu(h0);
        let h1 = self.linear(tape, b, h0, "geo3.w1", "geo3.b1")?;
        Ok(tape.relu(h1))
    }

    /// Geometry trunk over the 4-D grid: `(rows, 4)` (x, y, z, λ) points.
    fn trunk4(&self, tape: &mut Tape, b: &TapeBinding, points: &[f64]) -> Result<NodeId> {
        let grid = self.grid4.as_ref().expect("4-D grid present");
        let enc = grid.encode_on_tape(tape, b.id("geo4.grid"), points)?;
        let h0 = self.linear(tape, b, enc, "geo4.w0", "geo4.b0")?;
        let h0 = tape.relu(h0);
        let h1 = self.linear(tape, b, h0, "geo4.w1", "geo4.b1")?;
        Ok(tape.relu(h1))
    }

    /// Reorder `(rays·samples·λ, 1)` or `(rays·samples, λ)` rows into the
    /// compositing layout `(rays·λ, samples)`.
    fn to_composite_layout(
        &self,
        tape: &mut Tape,
        node: NodeId,
        rays: usize,
        samples: usize,
        lambdas: usize,
    ) -> Result<NodeId> {
        let cube = tape.reshape(node, alloc::vec![rays, samples, lambdas])?;
        let swapped = tape.permute3(cube, [0, 2, 1])?;
        tape.reshape(swapped, alloc::vec![rays * lambdas, samples])
    }

    fn dir_encoding(&self, dirs: &[[f64; 3]]) -> Result<Tensor> {
        let d = self.enc_dir.output_dim();
        let mut data = alloc::vec![0.0; dirs.len() * 3 * d];
        for (i, dir) in dirs.iter().enumerate() {
            let norm = crate::math::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
            if crate::math::abs(norm - 1.0) > 1e-6 {
                return Err(CoreError::InvalidArgument(format!(
                    "direction {i} is not unit-norm (|d| = {norm})"
                )));
            }
            self.enc_dir
                .encode_components(dir, &mut data[i * 3 * d..(i + 1) * 3 * d]);
        }
        Tensor::matrix(dirs.len(), 3 * d, data)
    }

    fn lambda_encoding(&self, enc: &SinusoidalEncoding, lambdas: &[f64]) -> Result<Tensor> {
        let data = enc.encode_batch(lambdas);
        Tensor::matrix(lambdas.len(), enc.output_dim(), data)
    }

    /// Run a wavelength decoder over `(rows·λ, 2·terms + latent)` input.
    fn decoder(
        &self,
        tape: &mut Tape,
        b: &TapeBinding,
        prefix: &str,
        input: NodeId,
    ) -> Result<NodeId> {
        let mut h = input;
        for layer in 0..self.config.decoder_layers {
            h = self.linear(
                tape,
                b,
                h,
                &format!("{prefix}w{layer}"),
                &format!("{prefix}b{layer}"),
            )?;
            if layer + 1 < self.config.decoder_layers {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Pair per-sample latents `(rows, latent)` with per-λ encodings
    /// `(λ, enc)` into decoder input rows `(rows·λ, enc + latent)`,
    /// λ varying fastest.
    fn pair_latent_lambda(
        &self,
        tape: &mut Tape,
        latent: NodeId,
        lambda_enc: &Tensor,
    ) -> Result<NodeId> {
        let rows = tape.value(latent).rows();
        let l = lambda_enc.rows();
        let rep = tape.repeat_rows(latent, l);
        let enc_node = tape.constant(lambda_enc.clone());
        let tiled = tape.tile_rows(enc_node, rows);
        tape.concat(tiled, rep)
    }

    /// Emit the fine field's graph for a training batch.
    ///
    /// `points` holds `rays·samples` world positions, sample index varying
    /// fastest; `dirs` holds one unit direction per ray. Returns density and
    /// radiance in compositing layout `(rays·λ, samples)`.
    pub fn fine_on_tape(
        &self,
        tape: &mut Tape,
        b: &TapeBinding,
        points: &[[f64; 3]],
        dirs: &[[f64; 3]],
        samples_per_ray: usize,
        lambdas: &[f64],
    ) -> Result<FineBatch> {
        let (color, sigma) = self.graph(tape, b, points, Some(dirs), samples_per_ray, lambdas, true, true)?;
        Ok(FineBatch {
            sigma: sigma.expect("density requested"),
            color: color.expect("radiance requested"),
        })
    }

    /// Shared graph builder; `want_color`/`want_sigma` select the heads.
    #[allow(clippy::too_many_arguments)]
    fn graph(
        &self,
        tape: &mut Tape,
        b: &TapeBinding,
        points: &[[f64; 3]],
        dirs: Option<&[[f64; 3]]>,
        samples_per_ray: usize,
        lambdas: &[f64],
        want_color: bool,
        want_sigma: bool,
    ) -> Result<(Option<NodeId>, Option<NodeId>)> {
        let total = points.len();
        if samples_per_ray == 0 || total == 0 || total % samples_per_ray != 0 {
            return Err(CoreError::InvalidArgument(format!(
                "{total} points do not divide into rays of {samples_per_ray} samples"
            )));
        }
        if lambdas.is_empty() {
            return Err(CoreError::MissingWavelength);
        }
        let rays = total / samples_per_ray;
        let s = samples_per_ray;
        let l = lambdas.len();
        let cfg = &self.config;

        // Discrete variants select channels; fail before any graph work.
        let channel_idx: Option<Vec<usize>> = if cfg.radiance_variant == RadianceVariant::C1
            || cfg.density_variant == DensityVariant::Sigma1
        {
            Some(
                lambdas
                    .iter()
                    .map(|&w| self.channel_index(w))
                    .collect::<Result<Vec<usize>>>()?,
            )
        } else {
            None
        };

        let flat3: Vec<f64> = points.iter().flat_map(|p| p.iter().copied()).collect();
        let need_dirs = want_color
            || (want_sigma && cfg.density_variant == DensityVariant::Sigma && cfg.shared_latent);
        let dir_enc = if need_dirs {
            let dirs = dirs.ok_or_else(|| {
                CoreError::InvalidArgument(
                    "this configuration's output depends on view direction; directions required"
                        .into(),
                )
            })?;
            if dirs.len() != rays {
                return Err(CoreError::InvalidArgument(format!(
                    "{} directions for {rays} rays",
                    dirs.len()
                )));
            }
            Some(self.dir_encoding(dirs)?)
        } else {
            None
        };

        // Lazily built shared pieces.
        let mut trunk3_node: Option<NodeId> = None;
        let mut trunk4_node: Option<NodeId> = None;
        let mut theta_c: Option<NodeId> = None;

        let mut get_trunk3 = |tape: &mut Tape, this: &Self| -> Result<NodeId> {
            if let Some(id) = trunk3_node {
                return Ok(id);
            }
            let id = this.trunk3(tape, b, &flat3)?;
            trunk3_node = Some(id);
            Ok(id)
        };

        // 4-D coordinates are only assembled when a 4-D variant is active.
        let coords4 = |lambdas: &[f64]| -> Vec<f64> {
            let mut out = alloc::vec![0.0; total * l * 4];
            for (i, p) in points.iter().enumerate() {
                for (j, &w) in lambdas.iter().enumerate() {
                    let row = (i * l + j) * 4;
                    out[row] = p[0];
                    out[row + 1] = p[1];
                    out[row + 2] = p[2];
                    out[row + 3] = w;
                }
            }
            out
        };
        let mut get_trunk4 = |tape: &mut Tape, this: &Self| -> Result<NodeId> {
            if let Some(id) = trunk4_node {
                return Ok(id);
            }
            let id = this.trunk4(tape, b, &coords4(lambdas))?;
            trunk4_node = Some(id);
            Ok(id)
        };

        // Radiance head (also produces Θ_C for the shared-latent density).
        let build_color = want_color
            || (want_sigma
                && cfg.density_variant == DensityVariant::Sigma
                && cfg.shared_latent);
        let mut color = None;
        if build_color {
            match cfg.radiance_variant {
                RadianceVariant::C | RadianceVariant::C1 => {
                    let t3 = get_trunk3(tape, self)?;
                    let feat = self.linear(tape, b, t3, "geo3.feat_w", "geo3.feat_b")?;
                    let enc = dir_enc.as_ref().expect("directions prepared");
                    let enc_node = tape.constant(enc.clone());
                    let dir_rows = tape.repeat_rows(enc_node, s);
                    let rad_in = tape.concat(feat, dir_rows)?;
                    let h = self.linear(tape, b, rad_in, "rad.w0", "rad.b0")?;
                    let h = tape.relu(h);
                    if cfg.radiance_variant == RadianceVariant::C {
                        let latent = self.linear(tape, b, h, "rad.latent_w", "rad.latent_b")?;
                        theta_c = Some(latent);
                        if want_color {
                            let lenc = self.lambda_encoding(&self.enc_lambda, lambdas)?;
                            let dec_in = self.pair_latent_lambda(tape, latent, &lenc)?;
                            let raw = self.decoder(tape, b, "dec_c.", dec_in)?;
                            let act = tape.sigmoid(raw);
                            color = Some(self.to_composite_layout(tape, act, rays, s, l)?);
                        }
                    } else {
                        let heads = self.linear(tape, b, h, "rad.channels_w", "rad.channels_b")?;
                        let idx = channel_idx.as_ref().expect("channel indices resolved");
                        let picked = tape.select_cols(heads, idx)?;
                        let act = tape.sigmoid(picked);
                        color = Some(self.to_composite_layout(tape, act, rays, s, l)?);
                    }
                }
                RadianceVariant::C2 => {
                    let t4 = get_trunk4(tape, self)?;
                    let feat = self.linear(tape, b, t4, "geo4.feat_w", "geo4.feat_b")?;
                    let enc = dir_enc.as_ref().expect("directions prepared");
                    let enc_node = tape.constant(enc.clone());
                    let dir_rows = tape.repeat_rows(enc_node, s * l);
                    let rad_in = tape.concat(feat, dir_rows)?;
                    let h = self.linear(tape, b, rad_in, "rad.w0", "rad.b0")?;
                    let h = tape.relu(h);
                    let raw = self.linear(tape, b, h, "rad.scalar_w", "rad.scalar_b")?;
                    let act = tape.sigmoid(raw);
                    color = Some(self.to_composite_layout(tape, act, rays, s, l)?);
                }
            }
        }

        let mut sigma = None;
        if want_sigma {
            sigma = Some(match cfg.density_variant {
                DensityVariant::Sigma0 => {
                    let t3 = get_trunk3(tape, self)?;
                    let raw = self.linear(tape, b, t3, "geo3.scalar_w", "geo3.scalar_b")?;
                    let act = tape.softplus_shifted(raw);
                    let per_ray = tape.reshape(act, alloc::vec![rays, s])?;
                    tape.repeat_rows(per_ray, l)
                }
                DensityVariant::Sigma1 => {
                    let t3 = get_trunk3(tape, self)?;
                    let heads = self.linear(tape, b, t3, "geo3.channels_w", "geo3.channels_b")?;
                    let idx = channel_idx.as_ref().expect("channel indices resolved");
                    let picked = tape.select_cols(heads, idx)?;
                    let act = tape.softplus_shifted(picked);
                    self.to_composite_layout(tape, act, rays, s, l)?
                }
                DensityVariant::Sigma2 => {
                    let t4 = get_trunk4(tape, self)?;
                    let raw = self.linear(tape, b, t4, "geo4.scalar_w", "geo4.scalar_b")?;
                    let act = tape.softplus_shifted(raw);
                    self.to_composite_layout(tape, act, rays, s, l)?
                }
                DensityVariant::Sigma => {
                    let theta_sigma = if cfg.shared_latent {
                        theta_c.expect("shared latent produced by radiance branch")
                    } else {
                        let t3 = get_trunk3(tape, self)?;
                        self.linear(tape, b, t3, "geo3.latent_w", "geo3.latent_b")?
                    };
                    let lenc = self.lambda_encoding(&self.enc_lambda, lambdas)?;
                    let dec_in = self.pair_latent_lambda(tape, theta_sigma, &lenc)?;
                    let raw = self.decoder(tape, b, "dec_s.", dec_in)?;
                    let act = tape.softplus_shifted(raw);
                    self.to_composite_layout(tape, act, rays, s, l)?
                }
            });
        }
        Ok((if want_color { color } else { None }, sigma))
    }

    /// Emit one proposal stage's density graph.
    ///
    /// `P0` ignores wavelengths and returns `(rays, samples)`; `Plambda`
    /// requires them and returns the compositing layout `(rays·λ, samples)`.
    pub fn proposal_on_tape(
        &self,
        tape: &mut Tape,
        b: &TapeBinding,
        stage: usize,
        points: &[[f64; 3]],
        samples_per_ray: usize,
        lambdas: Option<&[f64]>,
    ) -> Result<NodeId> {
        if stage > 1 {
            return Err(CoreError::InvalidArgument(format!(
                "proposal stage must be 0 or 1, got {stage}"
            )));
        }
        let total = points.len();
        if samples_per_ray == 0 || total == 0 || total % samples_per_ray != 0 {
            return Err(CoreError::InvalidArgument(format!(
                "{total} points do not divide into rays of {samples_per_ray} samples"
            )));
        }
        let rays = total / samples_per_ray;
        let prefix = format!("prop{stage}.");
        let flat3: Vec<f64> = points.iter().flat_map(|p| p.iter().copied()).collect();
        let enc = self
            .prop_grid
            .encode_on_tape(tape, b.id(&format!("{prefix}grid")), &flat3)?;
        let h = self.linear(tape, b, enc, &format!("{prefix}w0"), &format!("{prefix}b0"))?;
        let h = tape.relu(h);
        match self.config.proposal_variant {
            ProposalVariant::P0 => {
                let raw = self.linear(tape, b, h, &format!("{prefix}w1"), &format!("{prefix}b1"))?;
                let act = tape.softplus_shifted(raw);
                tape.reshape(act, alloc::vec![rays, samples_per_ray])
            }
            ProposalVariant::PLambda => {
                let lambdas = lambdas.ok_or(CoreError::MissingWavelength)?;
                if lambdas.is_empty() {
                    return Err(CoreError::MissingWavelength);
                }
                let latent =
                    self.linear(tape, b, h, &format!("{prefix}w1"), &format!("{prefix}b1"))?;
                let lenc = self.lambda_encoding(&self.enc_lambda_prop, lambdas)?;
                let l = lambdas.len();
                let rep = tape.repeat_rows(latent, l);
                let enc_node = tape.constant(lenc);
                let tiled = tape.tile_rows(enc_node, total);
                let dec_in = tape.concat(rep, tiled)?;
                let h0 = self.linear(
                    tape,
                    b,
                    dec_in,
                    &format!("{prefix}dec_w0"),
                    &format!("{prefix}dec_b0"),
                )?;
                let h0 = tape.relu(h0);
                let raw = self.linear(
                    tape,
                    b,
                    h0,
                    &format!("{prefix}dec_w1"),
                    &format!("{prefix}dec_b1"),
                )?;
                let act = tape.softplus_shifted(raw);
                self.to_composite_layout(tape, act, rays, samples_per_ray, l)
            }
        }
    }

    /// Radiance `c^λ` at positions with view directions: `(n, λ)` row-major.
    pub fn eval_radiance(
        &self,
        points: &[[f64; 3]],
        dirs: &[[f64; 3]],
        lambdas: &[f64],
    ) -> Result<Vec<f64>> {
        if points.len() != dirs.len() {
            return Err(CoreError::InvalidArgument(format!(
                "{} positions vs {} directions",
                points.len(),
                dirs.len()
            )));
        }
        let mut tape = Tape::new();
        let b = self.bind(&mut tape);
        let (color, _) = self.graph(&mut tape, &b, points, Some(dirs), 1, lambdas, true, false)?;
        Ok(tape.value(color.expect("radiance requested")).data().to_vec())
    }

    /// Density `σ^λ` at positions: `(n, λ)` row-major. Directions are
    /// required only when the shared-latent decoder density is active.
    pub fn eval_density(
        &self,
        points: &[[f64; 3]],
        lambdas: &[f64],
        dirs: Option<&[[f64; 3]]>,
    ) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape);
        let (_, sigma) = self.graph(&mut tape, &b, points, dirs, 1, lambdas, false, true)?;
        Ok(tape.value(sigma.expect("density requested")).data().to_vec())
    }

    /// Proposal density at positions (length-`n` vector). `Plambda`
    /// requires a wavelength; `P0` ignores it.
    pub fn eval_proposal(
        &self,
        stage: usize,
        points: &[[f64; 3]],
        lambda: Option<f64>,
    ) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape);
        let lambdas = lambda.map(|w| alloc::vec![w]);
        let node = self.proposal_on_tape(
            &mut tape,
            &b,
            stage,
            points,
            1,
            lambdas.as_deref(),
        )?;
        Ok(tape.value(node).data().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compositing;
    use alloc::vec;

    fn test_box() -> SceneBox {
        SceneBox::new([-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]).unwrap()
    }

    fn wavelengths(n: usize) -> Vec<f64> {
        (0..n).map(|i| 400.0 + 4.0 * i as f64).collect()
    }

    /// Small grids keep unit-test fields cheap to build and evaluate.
    fn small_config(
        radiance: RadianceVariant,
        density: DensityVariant,
        proposal: ProposalVariant,
    ) -> FieldConfig {
        let mut cfg = FieldConfig::new(radiance, density, proposal, wavelengths(8), test_box());
        cfg.geo_grid = GridConfig {
            levels: 2,
            base_resolution: 4,
            growth_factor: 2.0,
            features_per_level: 2,
        };
        cfg.geo4_grid = GridConfig {
            levels: 2,
            base_resolution: 2,
            growth_factor: 2.0,
            features_per_level: 2,
        };
        cfg.prop_grid = GridConfig {
            levels: 2,
            base_resolution: 4,
            growth_factor: 2.0,
            features_per_level: 2,
        };
        cfg
    }

    fn unit(v: [f64; 3]) -> [f64; 3] {
        let n = crate::math::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        [v[0] / n, v[1] / n, v[2] / n]
    }

    #[test]
    fn same_seed_reproduces_parameters_bitwise() {
        let cfg = small_config(RadianceVariant::C, DensityVariant::Sigma, ProposalVariant::P0);
        let a = build_field(&cfg, 7).unwrap();
        let b = build_field(&cfg, 7).unwrap();
        let c = build_field(&cfg, 8).unwrap();
        assert_eq!(a.params.len(), b.params.len());
        let mut any_diff = false;
        for i in 0..a.params.len() {
            assert_eq!(a.params.name(i), b.params.name(i));
            assert_eq!(a.params.tensor(i).data(), b.params.tensor(i).data());
            if a.params.tensor(i).data() != c.params.tensor(i).data() {
                any_diff = true;
            }
        }
        assert!(any_diff, "different seeds must differ somewhere");
    }

    #[test]
    fn density_decoder_parameter_count_matches_reference_mlp() {
        // 3 weight layers, 64 hidden, input 2·8 + 15, output 1.
        let cfg = FieldConfig::new(
            RadianceVariant::C,
            DensityVariant::Sigma,
            ProposalVariant::P0,
            wavelengths(8),
            test_box(),
        );
        assert_eq!(cfg.decoder_layers, 3);
        let field = build_field(&cfg, 0).unwrap();
        let count: usize = field
            .params
            .iter()
            .filter(|(name, _)| name.starts_with("dec_s."))
            .map(|(_, t)| t.numel())
            .sum();
        let input = 2 * 8 + 15;
        assert_eq!(count, input * 64 + 64 + 64 * 64 + 64 + 64 + 1);
        assert_eq!(count, 6273);
    }

    #[test]
    fn zeroed_decoder_radiance_is_sigmoid_of_bias() {
        let cfg = small_config(RadianceVariant::C, DensityVariant::Sigma, ProposalVariant::P0);
        let mut field = build_field(&cfg, 3).unwrap();
        let last = cfg.decoder_layers - 1;
        for layer in 0..cfg.decoder_layers {
            let w = field.params.get_mut(&format!("dec_c.w{layer}")).unwrap();
            w.data_mut().fill(0.0);
        }
        let b_last = field.params.get_mut(&format!("dec_c.b{last}")).unwrap();
        b_last.data_mut().fill(0.8);
        let lambdas = [401.0, 413.7, 428.0];
        let out = field
            .eval_radiance(
                &[[0.2, -0.3, 0.5], [0.9, 0.9, 0.9]],
                &[unit([1.0, 2.0, -1.0]), unit([0.0, 0.0, 1.0])],
                &lambdas,
            )
            .unwrap();
        let expect = crate::math::sigmoid(0.8);
        for &v in &out {
            assert!((v - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn zeroed_decoder_density_is_softplus_of_bias() {
        let cfg = small_config(RadianceVariant::C, DensityVariant::Sigma, ProposalVariant::P0);
        let mut field = build_field(&cfg, 3).unwrap();
        let last = cfg.decoder_layers - 1;
        for layer in 0..cfg.decoder_layers {
            let w = field.params.get_mut(&format!("dec_s.w{layer}")).unwrap();
            w.data_mut().fill(0.0);
        }
        field
            .params
            .get_mut(&format!("dec_s.b{last}"))
            .unwrap()
            .data_mut()
            .fill(-0.4);
        let out = field
            .eval_density(
                &[[0.0, 0.0, 0.0], [0.5, -0.5, 0.1]],
                &[405.0, 430.0],
                Some(&[unit([1.0, 0.0, 0.2]), unit([-1.0, 1.0, 0.0])]),
            )
            .unwrap();
        let expect = crate::math::softplus_shifted(-0.4);
        for &v in &out {
            assert!((v - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn c1_selects_channels_exactly_and_refuses_interpolation() {
        let cfg = small_config(RadianceVariant::C1, DensityVariant::Sigma0, ProposalVariant::P0);
        let field = build_field(&cfg, 11).unwrap();
        let xs = [[0.3, 0.1, -0.2]];
        let ds = [unit([0.2, -1.0, 0.4])];
        let all: Vec<f64> = field
            .eval_radiance(&xs, &ds, &cfg.channel_wavelengths)
            .unwrap();
        for (i, &w) in cfg.channel_wavelengths.iter().enumerate() {
            let one = field.eval_radiance(&xs, &ds, &[w]).unwrap();
            assert_eq!(one[0], all[i], "channel {i} selection must be exact");
        }
        let err = field
            .eval_radiance(&xs, &ds, &[cfg.channel_wavelengths[2] + 0.5])
            .unwrap_err();
        match err {
            CoreError::NoChannelMatch { lambda_nm } => {
                assert!((lambda_nm - (cfg.channel_wavelengths[2] + 0.5)).abs() < 1e-12)
            }
            other => panic!("expected NoChannelMatch, got {other:?}"),
        }
        let msg = format!("{err}", err = CoreError::NoChannelMatch { lambda_nm: 450.0 });
        assert!(msg.contains("cannot interpolate"), "{msg}");
    }

    #[test]
    fn batched_lambda_query_equals_lambda_loop() {
        let cfg = small_config(RadianceVariant::C, DensityVariant::Sigma, ProposalVariant::P0);
        let field = build_field(&cfg, 5).unwrap();
        let xs = [[0.1, 0.2, 0.3], [-0.4, 0.0, 0.8]];
        let ds = [unit([1.0, 1.0, 1.0]), unit([0.0, -1.0, 0.5])];
        let lambdas: Vec<f64> = (0..16).map(|i| 400.0 + i as f64 * 28.0 / 15.0).collect();
        let batched = field.eval_radiance(&xs, &ds, &lambdas).unwrap();
        for (j, &w) in lambdas.iter().enumerate() {
            let single = field.eval_radiance(&xs, &ds, &[w]).unwrap();
            for (i, &v) in single.iter().enumerate() {
                assert_eq!(v, batched[i * lambdas.len() + j]);
            }
        }
    }

    #[test]
    fn sigma0_is_wavelength_invariant() {
        let cfg = small_config(RadianceVariant::C1, DensityVariant::Sigma0, ProposalVariant::P0);
        let field = build_field(&cfg, 2).unwrap();
        let xs = [[0.0, 0.5, -0.5], [0.7, 0.7, 0.7], [-0.9, 0.2, 0.0]];
        let lambdas = [400.0, 412.0, 424.0, 428.0];
        let out = field.eval_density(&xs, &lambdas, None).unwrap();
        for row in 0..xs.len() {
            for j in 1..lambdas.len() {
                assert_eq!(out[row * lambdas.len() + j], out[row * lambdas.len()]);
            }
        }
    }

    #[test]
    fn shared_latent_density_requires_directions() {
        let cfg = small_config(RadianceVariant::C, DensityVariant::Sigma, ProposalVariant::P0);
        let field = build_field(&cfg, 2).unwrap();
        let err = field
            .eval_density(&[[0.0, 0.0, 0.0]], &[410.0], None)
            .unwrap_err();
        assert!(matches!(err, CoreError::InvalidArgument(_)));
        assert!(field
            .eval_density(&[[0.0, 0.0, 0.0]], &[410.0], Some(&[unit([1.0, 0.0, 0.0])]))
            .is_ok());
    }

    #[test]
    fn radiance_is_continuous_in_lambda() {
        let cfg = small_config(RadianceVariant::C, DensityVariant::Sigma, ProposalVariant::P0);
        let field = build_field(&cfg, 9).unwrap();
        let xs = [[0.25, -0.25, 0.1]];
        let ds = [unit([0.3, 0.3, -1.0])];
        let max_adjacent = |count: usize| -> f64 {
            let lambdas: Vec<f64> = (0..count)
                .map(|i| 400.0 + 28.0 * i as f64 / (count - 1) as f64)
                .collect();
            let vals = field.eval_radiance(&xs, &ds, &lambdas).unwrap();
            vals.windows(2)
                .map(|w| (w[1] - w[0]).abs())
                .fold(0.0, f64::max)
        };
        let coarse = max_adjacent(1024);
        let fine = max_adjacent(2048);
        assert!(fine < 0.75 * coarse + 1e-12, "coarse {coarse}, fine {fine}");
    }

    #[test]
    fn p0_proposal_ignores_wavelength() {
        let cfg = small_config(RadianceVariant::C, DensityVariant::Sigma, ProposalVariant::P0);
        let field = build_field(&cfg, 4).unwrap();
        let xs = [[0.1, 0.1, 0.1], [-0.6, 0.3, 0.9]];
        let a = field.eval_proposal(0, &xs, Some(450.0)).unwrap();
        let b = field.eval_proposal(0, &xs, Some(900.0)).unwrap();
        let c = field.eval_proposal(0, &xs, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        // Stage 1 has independent parameters.
        let d = field.eval_proposal(1, &xs, None).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn plambda_shapes_and_missing_wavelength() {
        let cfg = small_config(RadianceVariant::C, DensityVariant::Sigma, ProposalVariant::PLambda);
        let field = build_field(&cfg, 4).unwrap();
        assert_eq!(field.params.get("prop0.w1").unwrap().shape(), &[16, 7]);
        assert_eq!(field.params.get("prop0.dec_w0").unwrap().shape(), &[11, 7]);
        assert_eq!(field.params.get("prop0.dec_w1").unwrap().shape(), &[7, 1]);
        assert_eq!(field.enc_lambda_prop.output_dim(), 4);
        let err = field.eval_proposal(0, &[[0.0; 3]], None).unwrap_err();
        assert_eq!(err, CoreError::MissingWavelength);
        // Different wavelengths give different proposal densities.
        let a = field.eval_proposal(0, &[[0.2, 0.2, 0.2]], Some(402.0)).unwrap();
        let b = field.eval_proposal(0, &[[0.2, 0.2, 0.2]], Some(427.0)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn activations_keep_outputs_in_range() {
        for (name, rad, den, prop) in ABLATION_ROWS {
            let cfg = small_config(rad, den, prop);
            let field = build_field(&cfg, 13).unwrap();
            let xs = [[0.4, -0.7, 0.2], [0.0, 0.0, 0.0], [2.0, 2.0, 2.0]];
            let ds = [
                unit([1.0, 0.5, 0.0]),
                unit([0.0, 1.0, 0.0]),
                unit([-1.0, -1.0, -1.0]),
            ];
            let lambdas = [400.0, 416.0, 428.0];
            let c = field.eval_radiance(&xs, &ds, &lambdas).unwrap();
            assert!(
                c.iter().all(|&v| (0.0..=1.0).contains(&v)),
                "{name}: radiance out of range"
            );
            let s = field.eval_density(&xs, &lambdas, Some(&ds)).unwrap();
            assert!(s.iter().all(|&v| v >= 0.0), "{name}: negative density");
            let p = field
                .eval_proposal(0, &xs, Some(416.0))
                .unwrap();
            assert!(p.iter().all(|&v| v >= 0.0), "{name}: negative proposal");
        }
    }

    #[test]
    fn incoherent_shared_latent_combination_is_rejected() {
        let cfg = small_config(RadianceVariant::C1, DensityVariant::Sigma, ProposalVariant::P0);
        let err = build_field(&cfg, 0).unwrap_err();
        assert!(matches!(err, CoreError::InvalidArgument(_)));
        // Opting out of sharing makes the combination legal.
        let mut cfg = small_config(RadianceVariant::C1, DensityVariant::Sigma, ProposalVariant::P0);
        cfg.shared_latent = false;
        assert!(build_field(&cfg, 0).is_ok());
    }

    #[test]
    fn all_ablation_rows_are_constructible() {
        for (name, rad, den, prop) in ABLATION_ROWS {
            let cfg = small_config(rad, den, prop);
            build_field(&cfg, 1).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        // RGB-style build: three channels through the discrete heads.
        let mut cfg = small_config(RadianceVariant::C1, DensityVariant::Sigma1, ProposalVariant::P0);
        cfg.channel_wavelengths = vec![622.0, 555.0, 503.0];
        cfg.channel_wavelengths.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let field = build_field(&cfg, 1).unwrap();
        assert_eq!(field.params.get("rad.channels_w").unwrap().shape(), &[64, 3]);
        assert_eq!(field.params.get("geo3.channels_w").unwrap().shape(), &[64, 3]);
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        // Tiny network: render one 4-sample ray at 2 wavelengths, loss =
        // mean pixel, and check every parameter against central differences.
        let mut cfg = small_config(RadianceVariant::C, DensityVariant::Sigma, ProposalVariant::P0);
        cfg.latent_dim = 3;
        cfg.lambda_terms = 2;
        cfg.decoder_hidden = 6;
        cfg.geo_grid = GridConfig {
            levels: 1,
            base_resolution: 2,
            growth_factor: 2.0,
            features_per_level: 1,
        };
        let field = build_field(&cfg, 21).unwrap();

        let points = [
            [0.1, 0.2, 0.3],
            [0.15, 0.25, 0.35],
            [0.2, 0.3, 0.4],
            [0.25, 0.35, 0.45],
        ];
        let dirs = [unit([0.3, 0.3, 0.3])];
        let lambdas = [405.0, 421.0];
        let deltas = Tensor::matrix(2, 4, vec![0.25; 8]).unwrap();

        let eval = |field: &Field| -> f64 {
            let mut tape = Tape::new();
            let b = field.bind(&mut tape);
            let batch = field
                .fine_on_tape(&mut tape, &b, &points, &dirs, 4, &lambdas)
                .unwrap();
            let nodes =
                compositing::composite_on_tape(&mut tape, batch.sigma, batch.color, &deltas, 1.0)
                    .unwrap();
            let loss = tape.mean_all(nodes.pixel);
            tape.value(loss).data()[0]
        };

        let mut tape = Tape::new();
        let b = field.bind(&mut tape);
        let batch = field
            .fine_on_tape(&mut tape, &b, &points, &dirs, 4, &lambdas)
            .unwrap();
        let nodes =
            compositing::composite_on_tape(&mut tape, batch.sigma, batch.color, &deltas, 1.0)
                .unwrap();
        let loss = tape.mean_all(nodes.pixel);
        let grads = tape.backward(loss).unwrap();

        let h = 1e-5;
        let base = eval(&field);
        let mut checked = 0usize;
        let mut skipped = 0usize;
        for i in 0..field.params.len() {
            let leaf = b.leaves()[i];
            let name = String::from(field.params.name(i));
            let analytic: Vec<f64> = match grads.get(leaf) {
                Some(g) => g.data().to_vec(),
                None => vec![0.0; field.params.tensor(i).numel()],
            };
            for j in 0..field.params.tensor(i).numel() {
                let mut up = field.clone();
                up.params.tensor_mut(i).data_mut()[j] += h;
                let mut dn = field.clone();
                dn.params.tensor_mut(i).data_mut()[j] -= h;
                let (fu, fd_) = (eval(&up), eval(&dn));
                // A relu kink inside ±h makes the central difference a biased
                // subgradient estimate; certify smoothness by requiring the
                // two one-sided differences to agree before comparing.
                let fwd = (fu - base) / h;
                let bwd = (base - fd_) / h;
                if (fwd - bwd).abs() > 0.05 * fwd.abs().max(bwd.abs()) + 1e-6 {
                    skipped += 1;
                    continue;
                }
                let fd = (fu - fd_) / (2.0 * h);
                let err = (analytic[j] - fd).abs();
                assert!(
                    err <= 1e-3 * fd.abs().max(1.0),
                    "{name}[{j}]: analytic {} vs fd {fd}",
                    analytic[j]
                );
                checked += 1;
            }
        }
        assert!(checked > 400, "checked only {checked} parameters");
        assert!(
            skipped * 20 < checked,
            "too many kink-straddling coordinates: {skipped} of {}",
            checked + skipped
        );
    }
}
