//! Checkpoints: the full field (architecture, wavelength axis, scene bounds,
//! every parameter bit-exact) plus optimizer state and the step counter, so
//! an interrupted run resumes on the identical trajectory.

use std::fs;
use std::path::Path;

use hyperfield_core::autodiff::AdamState;
use hyperfield_core::field::{build_field, Field, FieldConfig};
use hyperfield_core::sampling::SceneBox;
use serde::{Deserialize, Serialize};

use crate::config::{FieldSpec, GridSpec, TrainConfig};
use crate::error::{AppError, Result};

const MAGIC: &[u8; 4] = b"HFCK";
const VERSION: u32 = 1;

/// JSON header of a checkpoint file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub field: FieldSpec,
    pub wavelengths: Vec<f64>,
    pub scene_min: [f64; 3],
    pub scene_max: [f64; 3],
    pub step: u64,
    pub train: TrainConfig,
}

/// Reconstruct the on-disk architecture description from a built config.
pub fn spec_from_config(cfg: &FieldConfig) -> FieldSpec {
    FieldSpec {
        radiance: cfg.radiance_variant.as_str().into(),
        density: cfg.density_variant.as_str().into(),
        proposal: cfg.proposal_variant.as_str().into(),
        latent_dim: cfg.latent_dim,
        lambda_terms: cfg.lambda_terms,
        decoder_hidden: cfg.decoder_hidden,
        decoder_layers: cfg.decoder_layers,
        shared_latent: cfg.shared_latent,
        geo_grid: Some(GridSpec::from_core(&cfg.geo_grid)),
        geo4_grid: Some(GridSpec::from_core(&cfg.geo4_grid)),
        prop_grid: Some(GridSpec::from_core(&cfg.prop_grid)),
    }
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f64s(buf: &mut Vec<u8>, data: &[f64]) {
    for &v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Save a checkpoint. With `adam` present the file resumes training; without
/// it the file still renders and evaluates.
pub fn save_checkpoint(
    path: &Path,
    field: &Field,
    train: &TrainConfig,
    step: u64,
    adam: Option<&AdamState>,
) -> Result<()> {
    let meta = CheckpointMeta {
        field: spec_from_config(&field.config),
        wavelengths: field.config.channel_wavelengths.clone(),
        scene_min: field.config.scene_min,
        scene_max: field.config.scene_max,
        step,
        train: train.clone(),
    };
    let json = serde_json::to_vec(&meta).unwrap();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    push_u32(&mut buf, VERSION);
    push_u32(&mut buf, json.len() as u32);
    buf.extend_from_slice(&json);

    push_u32(&mut buf, field.params.len() as u32);
    for (name, tensor) in field.params.iter() {
        if tensor.shape().len() != 2 {
            return Err(AppError::data(format!(
                "parameter {name} is not a matrix; cannot serialize"
            )));
        }
        push_u32(&mut buf, name.len() as u32);
        buf.extend_from_slice(name.as_bytes());
        push_u32(&mut buf, tensor.rows() as u32);
        push_u32(&mut buf, tensor.cols() as u32);
        push_f64s(&mut buf, tensor.data());
    }

    match adam {
        None => buf.push(0),
        Some(state) => {
            buf.push(1);
            push_u64(&mut buf, state.step_count);
            push_f64s(
                &mut buf,
                &[
                    state.learning_rate,
                    state.beta1,
                    state.beta2,
                    state.epsilon,
                ],
            );
            for m in &state.first_moment {
                push_f64s(&mut buf, m.data());
            }
            for v in &state.second_moment {
                push_f64s(&mut buf, v.data());
            }
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    off: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.off + n > self.bytes.len() {
            return Err(AppError::data(format!(
                "truncated checkpoint: missing {what}"
            )));
        }
        let s = &self.bytes[self.off..self.off + n];
        self.off += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(8 * n, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Load a checkpoint: rebuild the field architecture, overwrite its
/// parameters bit-exactly, and restore optimizer state when present.
pub fn load_checkpoint(path: &Path) -> Result<(Field, CheckpointMeta, Option<AdamState>)> {
    let bytes = fs::read(path)
        .map_err(|e| AppError::data(format!("cannot read {}: {e}", path.display())))?;
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(AppError::data(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let mut r = Reader {
        bytes: &bytes,
        off: 4,
    };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(AppError::data(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let json_len = r.u32("header length")? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(json_len, "header")?)
        .map_err(|e| AppError::data(format!("malformed checkpoint header: {e}")))?;

    let scene = SceneBox::new(meta.scene_min, meta.scene_max)?;
    let cfg = meta.field.to_core(meta.wavelengths.clone(), scene)?;
    let mut field = build_field(&cfg, meta.train.seed)?;

    let count = r.u32("parameter count")? as usize;
    if count != field.params.len() {
        return Err(AppError::data(format!(
            "checkpoint stores {count} parameters, architecture has {}",
            field.params.len()
        )));
    }
    for i in 0..count {
        let name_len = r.u32("parameter name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "parameter name")?)
            .map_err(|_| AppError::data("parameter name is not UTF-8"))?
            .to_string();
        let rows = r.u32("parameter rows")? as usize;
        let cols = r.u32("parameter cols")? as usize;
        let data = r.f64s(rows * cols, "parameter values")?;
        let expect = field.params.name(i);
        if name != expect {
            return Err(AppError::data(format!(
                "checkpoint parameter {i} is {name}, architecture expects {expect}"
            )));
        }
        let tensor = field.params.tensor_mut(i);
        if tensor.rows() != rows || tensor.cols() != cols {
            return Err(AppError::data(format!(
                "parameter {name} has shape {rows}×{cols} on disk, \
                 {}×{} in the architecture",
                tensor.rows(),
                tensor.cols()
            )));
        }
        tensor.data_mut().copy_from_slice(&data);
    }

    let adam = match r.take(1, "optimizer flag")?[0] {
        0 => None,
        1 => {
            let step_count = r.u64("optimizer step count")?;
            let scalars = r.f64s(4, "optimizer scalars")?;
            let mut state = AdamState::new(&field.params, scalars[0]);
            state.step_count = step_count;
            state.beta1 = scalars[1];
            state.beta2 = scalars[2];
            state.epsilon = scalars[3];
            for m in state.first_moment.iter_mut() {
                let data = r.f64s(m.numel(), "first moments")?;
                m.data_mut().copy_from_slice(&data);
            }
            for v in state.second_moment.iter_mut() {
                let data = r.f64s(v.numel(), "second moments")?;
                v.data_mut().copy_from_slice(&data);
            }
            Some(state)
        }
        other => {
            return Err(AppError::data(format!(
                "checkpoint optimizer flag must be 0 or 1, got {other}"
            )))
        }
    };
    if r.off != bytes.len() {
        return Err(AppError::data(format!(
            "checkpoint has {} trailing bytes",
            bytes.len() - r.off
        )));
    }
    Ok((field, meta, adam))
}

#[cfg(test)]
mod tests {
    use super::*;
    use hyperfield_core::encoding::GridConfig;
    use hyperfield_core::field::{DensityVariant, ProposalVariant, RadianceVariant};
    use hyperfield_core::rng::{stream, Purpose};
    use hyperfield_core::rng::RngCore as _;

    fn small_field(seed: u64) -> (Field, TrainConfig) {
        let scene = SceneBox::new([-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]).unwrap();
        let mut cfg = FieldConfig::new(
            RadianceVariant::C,
            DensityVariant::Sigma0,
            ProposalVariant::P0,
            (0..6).map(|i| 450.0 + 40.0 * i as f64).collect(),
            scene,
        );
        cfg.geo_grid = GridConfig {
            levels: 2,
            base_resolution: 4,
            growth_factor: 2.0,
            features_per_level: 2,
        };
        cfg.prop_grid = cfg.geo_grid;
        cfg.latent_dim = 5;
        cfg.decoder_hidden = 8;
        let mut train = TrainConfig::default();
        train.seed = seed;
        (build_field(&cfg, seed).unwrap(), train)
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.hfck");
        let (mut field, train) = small_field(3);
        // Scribble irrational-ish values over a few parameters so the test
        // isn't fooled by freshly initialized state.
        let mut rng = stream(9, 0, Purpose::Misc);
        for v in field.params.get_mut("dec_c.w0").unwrap().data_mut() {
            *v = rng.gen::<f64>().ln_1p() * 3.7;
        }
        let mut adam = AdamState::new(&field.params, 1e-2);
        adam.step_count = 123;
        for m in adam.first_moment.iter_mut() {
            for v in m.data_mut() {
                *v = rng.gen::<f64>() - 0.5;
            }
        }

        save_checkpoint(&path, &field, &train, 123, Some(&adam)).unwrap();
        let (loaded, meta, adam2) = load_checkpoint(&path).unwrap();
        assert_eq!(meta.step, 123);
        assert_eq!(meta.train, train);
        assert_eq!(meta.wavelengths, field.config.channel_wavelengths);
        for i in 0..field.params.len() {
            assert_eq!(
                field.params.tensor(i).data(),
                loaded.params.tensor(i).data(),
                "parameter {} drifted",
                field.params.name(i)
            );
        }
        let adam2 = adam2.unwrap();
        assert_eq!(adam2.step_count, 123);
        for (a, b) in adam.first_moment.iter().zip(&adam2.first_moment) {
            assert_eq!(a.data(), b.data());
        }
        for (a, b) in adam.second_moment.iter().zip(&adam2.second_moment) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn checkpoint_without_optimizer_loads_for_rendering() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.hfck");
        let (field, train) = small_field(4);
        save_checkpoint(&path, &field, &train, 500, None).unwrap();
        let (_, meta, adam) = load_checkpoint(&path).unwrap();
        assert!(adam.is_none());
        assert_eq!(meta.step, 500);
        assert_eq!(meta.field.density, "sigma0");
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.hfck");
        let (field, train) = small_field(5);
        save_checkpoint(&path, &field, &train, 1, None).unwrap();
        let good = fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[1] = b'X';
        fs::write(&path, &bad).unwrap();
        assert!(load_checkpoint(&path).unwrap_err().to_string().contains("magic"));

        fs::write(&path, &good[..good.len() - 3]).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        assert_eq!(err.exit_code(), 3);

        let mut long = good.clone();
        long.push(0);
        fs::write(&path, &long).unwrap();
        assert!(load_checkpoint(&path)
            .unwrap_err()
            .to_string()
            .contains("trailing"));
    }
}
