//! Single-file checkpoints of the full training state.
//!
//! Tensors: `g_sr.*`, `g_rs.*`, `d_r.*`, `d_s.*` network weights,
//! `opt.<net>.<param>.m1|m2` optimiser moments and `pool.r.<i>` /
//! `pool.s.<i>` buffered fakes. Metadata: the TOML configuration, its hash,
//! the completed step count and each optimiser's update count. The random
//! state needs no storage: it is re-derived from the seed and step.

use std::path::Path;

use tacgap_nn::{Adam, Module, TensorArchive};

use super::{ImagePool, TrainConfig, TrainState};
use crate::error::{Error, Result};
use crate::models::{export_params, import_params, Generator};

pub const FORMAT: &str = "tacgap-checkpoint-1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub state: TrainState,
}

fn nets(state: &TrainState) -> [(&'static str, &dyn Module, &Adam); 4] {
    [
        ("g_sr", &state.g_sr, &state.opt_g_sr),
        ("g_rs", &state.g_rs, &state.opt_g_rs),
        ("d_r", &state.d_r, &state.opt_d_r),
        ("d_s", &state.d_s, &state.opt_d_s),
    ]
}

pub fn to_archive(state: &TrainState, cfg: &TrainConfig) -> TensorArchive {
    let mut a = TensorArchive::new();
    for (name, net, opt) in nets(state) {
        export_params(net, name, &mut a);
        for (k, v) in opt.named_state(&format!("opt.{name}")) {
            a.insert(k, v);
        }
        a.metadata.insert(format!("opt.{name}.steps"), opt.steps.to_string());
    }
    for (tag, pool) in [("r", &state.pool_r), ("s", &state.pool_s)] {
        for (i, img) in pool.images().iter().enumerate() {
            a.insert(format!("pool.{tag}.{i}"), img.clone().into_dyn());
        }
        a.metadata.insert(format!("pool.{tag}.len"), pool.images().len().to_string());
    }
    a.metadata.insert("format".into(), FORMAT.into());
    a.metadata.insert("config".into(), cfg.to_toml());
    a.metadata.insert("config_hash".into(), cfg.hash());
    a.metadata.insert("step".into(), state.step.to_string());
    a
}

pub fn save_checkpoint(state: &TrainState, cfg: &TrainConfig, path: &Path) -> Result<()> {
    Ok(to_archive(state, cfg).save(path)?)
}

fn meta<'a>(a: &'a TensorArchive, key: &str) -> Result<&'a str> {
    a.meta(key).ok_or_else(|| Error::Integrity(format!("checkpoint lacks metadata `{key}`")))
}

fn meta_num<T: std::str::FromStr>(a: &TensorArchive, key: &str) -> Result<T> {
    meta(a, key)?.parse().map_err(|_| Error::Integrity(format!("checkpoint metadata `{key}` is not a number")))
}

fn stored_config(a: &TensorArchive) -> Result<TrainConfig> {
    let format = meta(a, "format")?;
    if format != FORMAT {
        return Err(Error::Integrity(format!("unsupported checkpoint format `{format}`")));
    }
    let cfg = TrainConfig::from_toml(meta(a, "config")?)
        .map_err(|e| Error::Integrity(format!("checkpoint configuration unreadable: {e}")))?;
    let stored = meta(a, "config_hash")?;
    if stored != cfg.hash() {
        return Err(Error::Integrity(format!(
            "config hash mismatch: checkpoint records {stored}, its configuration hashes to {}",
            cfg.hash()
        )));
    }
    Ok(cfg)
}

pub fn from_archive(a: &TensorArchive) -> Result<Checkpoint> {
    let cfg = stored_config(a)?;
    let mut state = TrainState::new(&cfg)?;
    import_params(&mut state.g_sr, "g_sr", a)?;
    import_params(&mut state.g_rs, "g_rs", a)?;
    import_params(&mut state.d_r, "d_r", a)?;
    import_params(&mut state.d_s, "d_s", a)?;
    let lookup = |k: &str| a.tensors.get(k).cloned();
    let restore = |opt: &mut Adam, net: &dyn Module, name: &str| -> Result<()> {
        let steps: u64 = meta_num(a, &format!("opt.{name}.steps"))?;
        opt.restore_state(net, &format!("opt.{name}"), steps, &lookup)
            .map_err(|missing| Error::Integrity(format!("checkpoint lacks optimiser tensor `{missing}`")))
    };
    restore(&mut state.opt_g_sr, &state.g_sr, "g_sr")?;
    restore(&mut state.opt_g_rs, &state.g_rs, "g_rs")?;
    restore(&mut state.opt_d_r, &state.d_r, "d_r")?;
    restore(&mut state.opt_d_s, &state.d_s, "d_s")?;
    for (tag, pool) in [("r", &mut state.pool_r), ("s", &mut state.pool_s)] {
        let len: usize = meta_num(a, &format!("pool.{tag}.len"))?;
        let mut images = Vec::with_capacity(len);
        for i in 0..len {
            let t = a.get(&format!("pool.{tag}.{i}"))?;
            let img = t
                .clone()
                .into_dimensionality::<ndarray::Ix3>()
                .map_err(|_| Error::Integrity(format!("buffered image pool.{tag}.{i} is not 3-dimensional")))?;
            images.push(img);
        }
        *pool = ImagePool::from_images(cfg.pool_size, images);
    }
    state.step = meta_num(a, "step")?;
    for (name, net, _) in nets(&state) {
        if !net.all_finite() {
            return Err(Error::Integrity(format!("checkpoint weights of {name} are not finite")));
        }
    }
    Ok(Checkpoint { config: cfg, state })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    from_archive(&TensorArchive::load(path)?)
}

/// Loads a checkpoint to continue training under `cfg`; refuses when the
/// configuration hash differs.
pub fn resume_checkpoint(path: &Path, cfg: &TrainConfig) -> Result<TrainState> {
    let ck = load_checkpoint(path)?;
    if ck.config.hash() != cfg.hash() {
        return Err(Error::Integrity(format!(
            "config hash mismatch: checkpoint {} was written under {}, current configuration hashes to {}",
            path.display(),
            ck.config.hash(),
            cfg.hash()
        )));
    }
    Ok(ck.state)
}

/// The S→R generator of a checkpoint.
pub fn load_generator(path: &Path) -> Result<Generator> {
    let a = TensorArchive::load(path)?;
    let cfg = stored_config(&a)?;
    let mut g = Generator::new(cfg.generator.clone(), &mut super::stream_rng(cfg.seed, super::INIT_STREAM))?;
    import_params(&mut g, "g_sr", &a)?;
    if !g.all_finite() {
        return Err(Error::Integrity("checkpoint weights of g_sr are not finite".into()));
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::tests_support::{tiny_batch, tiny_config};
    use crate::training::{step_rng, train_step};

    fn trained() -> (TrainConfig, TrainState) {
        let cfg = tiny_config();
        let mut state = TrainState::new(&cfg).unwrap();
        for s in 0..3 {
            train_step(&mut state, &tiny_batch(s), &cfg, 2e-4, &mut step_rng(cfg.seed, s as usize)).unwrap();
        }
        (cfg, state)
    }

    fn tensors(state: &TrainState, cfg: &TrainConfig) -> std::collections::BTreeMap<String, ndarray::ArrayD<f32>> {
        to_archive(state, cfg).tensors
    }

    #[test]
    fn round_trip_is_bitwise() {
        let (cfg, state) = trained();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.safetensors");
        save_checkpoint(&state, &cfg, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.config, cfg);
        assert_eq!(back.state.step, 3);
        assert_eq!(back.state.opt_g_sr, state.opt_g_sr);
        assert_eq!(back.state.pool_r, state.pool_r);
        let (a, b) = (tensors(&state, &cfg), tensors(&back.state, &cfg));
        assert_eq!(a.len(), b.len());
        assert_eq!(a, b);
        let g = load_generator(&path).unwrap();
        assert_eq!(g.named_values(""), state.g_sr.named_values(""));
    }

    #[test]
    fn different_config_is_refused() {
        let (cfg, state) = trained();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.safetensors");
        save_checkpoint(&state, &cfg, &path).unwrap();
        let other = TrainConfig { seed: 99, ..cfg.clone() };
        match resume_checkpoint(&path, &other) {
            Err(Error::Integrity(msg)) => assert!(msg.contains("config hash mismatch")),
            other => panic!("unexpected {other:?}"),
        }
        let cadence_only = TrainConfig { checkpoint_every: 5, ..cfg };
        assert!(resume_checkpoint(&path, &cadence_only).is_ok());
    }

    #[test]
    fn tampered_hash_is_integrity_error() {
        let (cfg, state) = trained();
        let mut a = to_archive(&state, &cfg);
        a.metadata.insert("config_hash".into(), "0".repeat(64));
        assert!(matches!(from_archive(&a), Err(Error::Integrity(_))));
    }

    #[test]
    fn corrupt_file_is_rejected() {
        let (cfg, state) = trained();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.safetensors");
        save_checkpoint(&state, &cfg, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 5] ^= 0xff;
        std::fs::write(&path, bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
