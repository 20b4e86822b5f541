//! Versioned binary checkpoints.
//!
//! Layout: magic, format version, model fingerprint, the full serialized
//! run configuration, loop counters and generator state, then
//! length-prefixed named tensor blocks (network parameters, spectral-norm
//! vectors, optimizer moments) in little-endian `f32`, and a trailing
//! CRC32 over everything before it. A load never returns partial state:
//! the checksum is verified before any parsing.

use super::{AdamState, TrainState};
use crate::autodiff::Tensor;
use crate::config::{ConfigError, RunConfig};
use crate::rng::Rng;
use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 8] = b"AVCCKPT1";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checksum mismatch; checkpoint is corrupt or truncated")]
    Corrupt,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("fingerprint mismatch: file {file:#x}, configuration {config:#x}")]
    Fingerprint { file: u64, config: u64 },
    #[error("embedded configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_named_tensors(buf: &mut Vec<u8>, tensors: &[(String, &Tensor<f32>)]) {
    put_u32(buf, tensors.len() as u32);
    for (name, t) in tensors {
        put_u32(buf, name.len() as u32);
        buf.extend_from_slice(name.as_bytes());
        put_u32(buf, t.rank() as u32);
        for &d in t.shape() {
            put_u32(buf, d as u32);
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn collect<'a, P>(
    params: &'a P,
    walk: impl FnOnce(&'a P, &mut dyn FnMut(String, &'a Tensor<f32>)),
) -> Vec<(String, &'a Tensor<f32>)> {
    let mut out = Vec::new();
    walk(params, &mut |name, t| out.push((name, t)));
    out
}

fn moment_tensors<'a, P>(
    params: &'a P,
    opt: &'a AdamState,
    walk: impl FnOnce(&'a P, &mut dyn FnMut(String, &'a Tensor<f32>)),
) -> Vec<(String, &'a Tensor<f32>)> {
    let names: Vec<String> = collect(params, walk)
        .into_iter()
        .map(|(n, _)| n)
        .collect();
    debug_assert_eq!(names.len(), opt.moments.len());
    let mut out = Vec::with_capacity(names.len() * 2);
    for (name, (m, v)) in names.into_iter().zip(&opt.moments) {
        out.push((format!("{name}.m"), m));
        out.push((format!("{name}.v"), v));
    }
    out
}

/// Serialize the complete training state; a later load resumes the exact
/// step sequence.
pub fn checkpoint_save(state: &TrainState, path: &Path) -> Result<(), CheckpointError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    put_u64(&mut buf, state.cfg.model_fingerprint());
    let cfg_text = state.cfg.serialize();
    put_u32(&mut buf, cfg_text.len() as u32);
    buf.extend_from_slice(cfg_text.as_bytes());
    put_u64(&mut buf, state.epoch);
    put_u64(&mut buf, state.global_step);
    for w in state.rng.state() {
        put_u64(&mut buf, w);
    }

    put_named_tensors(&mut buf, &collect(&state.gen_xy, |p, f| p.for_each(f)));
    put_named_tensors(&mut buf, &collect(&state.gen_yx, |p, f| p.for_each(f)));
    put_named_tensors(&mut buf, &collect(&state.disc_x, |p, f| p.for_each(f)));
    put_named_tensors(&mut buf, &collect(&state.disc_y, |p, f| p.for_each(f)));
    put_named_tensors(&mut buf, &collect(&state.disc_x, |p, f| p.for_each_aux(f)));
    put_named_tensors(&mut buf, &collect(&state.disc_y, |p, f| p.for_each_aux(f)));

    for (params_moments, opt) in [
        (
            moment_tensors(&state.gen_xy, &state.opt_gen_xy, |p, f| p.for_each(f)),
            &state.opt_gen_xy,
        ),
        (
            moment_tensors(&state.gen_yx, &state.opt_gen_yx, |p, f| p.for_each(f)),
            &state.opt_gen_yx,
        ),
        (
            moment_tensors(&state.disc_x, &state.opt_disc_x, |p, f| p.for_each(f)),
            &state.opt_disc_x,
        ),
        (
            moment_tensors(&state.disc_y, &state.opt_disc_y, |p, f| p.for_each(f)),
            &state.opt_disc_y,
        ),
    ] {
        put_u64(&mut buf, opt.t);
        put_named_tensors(&mut buf, &params_moments);
    }

    let crc = crc32fast::hash(&buf);
    put_u32(&mut buf, crc);
    std::fs::write(path, &buf)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.buf.len() {
            return Err(CheckpointError::Malformed("unexpected end of file".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }

    fn named_tensors(&mut self) -> Result<BTreeMap<String, Tensor<f32>>, CheckpointError> {
        let count = self.u32()? as usize;
        let mut out = BTreeMap::new();
        for _ in 0..count {
            let name_len = self.u32()? as usize;
            let name = String::from_utf8(self.take(name_len)?.to_vec())
                .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?;
            let rank = self.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(self.u32()? as usize);
            }
            let numel: usize = shape.iter().product();
            let raw = self.take(numel * 4)?;
            let mut data = Vec::with_capacity(numel);
            for chunk in raw.chunks_exact(4) {
                data.push(f32::from_le_bytes(chunk.try_into().expect("4")));
            }
            let tensor = Tensor::from_vec(&shape, data)
                .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            if out.insert(name.clone(), tensor).is_some() {
                return Err(CheckpointError::Malformed(format!(
                    "duplicate tensor {name:?}"
                )));
            }
        }
        Ok(out)
    }
}

fn fill<P>(
    params: &mut P,
    mut found: BTreeMap<String, Tensor<f32>>,
    walk: impl Fn(&mut P, &mut dyn FnMut(String, &mut Tensor<f32>)),
    section: &str,
) -> Result<(), CheckpointError> {
    let mut error = None;
    walk(params, &mut |name, slot| {
        if error.is_some() {
            return;
        }
        match found.remove(&name) {
            Some(t) if t.shape() == slot.shape() => *slot = t,
            Some(t) => {
                error = Some(format!(
                    "{section}: tensor {name:?} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                ))
            }
            None => error = Some(format!("{section}: missing tensor {name:?}")),
        }
    });
    if let Some(msg) = error {
        return Err(CheckpointError::Malformed(msg));
    }
    if let Some((name, _)) = found.into_iter().next() {
        return Err(CheckpointError::Malformed(format!(
            "{section}: unexpected tensor {name:?}"
        )));
    }
    Ok(())
}

fn fill_moments(
    opt: &mut AdamState,
    names: &[String],
    mut found: BTreeMap<String, Tensor<f32>>,
    section: &str,
) -> Result<(), CheckpointError> {
    for (name, (m, v)) in names.iter().zip(&mut opt.moments) {
        for (suffix, slot) in [(".m", &mut *m), (".v", v)] {
            let key = format!("{name}{suffix}");
            match found.remove(&key) {
                Some(t) if t.shape() == slot.shape() => *slot = t,
                Some(_) => {
                    return Err(CheckpointError::Malformed(format!(
                        "{section}: moment {key:?} has the wrong shape"
                    )))
                }
                None => {
                    return Err(CheckpointError::Malformed(format!(
                        "{section}: missing moment {key:?}"
                    )))
                }
            }
        }
    }
    if let Some((name, _)) = found.into_iter().next() {
        return Err(CheckpointError::Malformed(format!(
            "{section}: unexpected tensor {name:?}"
        )));
    }
    Ok(())
}

/// Restore a training state. The embedded configuration is authoritative;
/// its fingerprint must match the one in the header.
pub fn checkpoint_load(path: &Path) -> Result<TrainState, CheckpointError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < MAGIC.len() + 4 {
        return Err(CheckpointError::Corrupt);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4"));
    if crc32fast::hash(body) != stored {
        return Err(CheckpointError::Corrupt);
    }

    let mut cur = Cursor { buf: body, pos: 0 };
    if cur.take(8)? != MAGIC.as_slice() {
        return Err(CheckpointError::BadMagic);
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let fingerprint = cur.u64()?;
    let cfg_len = cur.u32()? as usize;
    let cfg_text = String::from_utf8(cur.take(cfg_len)?.to_vec())
        .map_err(|_| CheckpointError::Malformed("configuration is not UTF-8".into()))?;
    let cfg = RunConfig::parse(&cfg_text)?;
    if cfg.model_fingerprint() != fingerprint {
        return Err(CheckpointError::Fingerprint {
            file: fingerprint,
            config: cfg.model_fingerprint(),
        });
    }

    let epoch = cur.u64()?;
    let global_step = cur.u64()?;
    let rng_state = [cur.u64()?, cur.u64()?, cur.u64()?, cur.u64()?];

    // Shape donor; every tensor is overwritten below.
    let mut state = TrainState::init(&cfg);
    state.epoch = epoch;
    state.global_step = global_step;
    state.rng = Rng::from_state(rng_state);

    let gen_xy = cur.named_tensors()?;
    let gen_yx = cur.named_tensors()?;
    let disc_x = cur.named_tensors()?;
    let disc_y = cur.named_tensors()?;
    let aux_x = cur.named_tensors()?;
    let aux_y = cur.named_tensors()?;
    fill(&mut state.gen_xy, gen_xy, |p, f| p.for_each_mut(f), "gen_xy")?;
    fill(&mut state.gen_yx, gen_yx, |p, f| p.for_each_mut(f), "gen_yx")?;
    fill(&mut state.disc_x, disc_x, |p, f| p.for_each_mut(f), "disc_x")?;
    fill(&mut state.disc_y, disc_y, |p, f| p.for_each_mut(f), "disc_y")?;
    fill(
        &mut state.disc_x,
        aux_x,
        |p, f| p.for_each_aux_mut(f),
        "disc_x aux",
    )?;
    fill(
        &mut state.disc_y,
        aux_y,
        |p, f| p.for_each_aux_mut(f),
        "disc_y aux",
    )?;

    let mut gen_xy_names = Vec::new();
    state
        .gen_xy
        .for_each(&mut |n, _| gen_xy_names.push(n.clone()));
    let mut gen_yx_names = Vec::new();
    state
        .gen_yx
        .for_each(&mut |n, _| gen_yx_names.push(n.clone()));
    let mut disc_x_names = Vec::new();
    state
        .disc_x
        .for_each(&mut |n, _| disc_x_names.push(n.clone()));
    let mut disc_y_names = Vec::new();
    state
        .disc_y
        .for_each(&mut |n, _| disc_y_names.push(n.clone()));

    for (opt, names, section) in [
        (&mut state.opt_gen_xy, &gen_xy_names, "opt gen_xy"),
        (&mut state.opt_gen_yx, &gen_yx_names, "opt gen_yx"),
        (&mut state.opt_disc_x, &disc_x_names, "opt disc_x"),
        (&mut state.opt_disc_y, &disc_y_names, "opt disc_y"),
    ] {
        opt.t = cur.u64()?;
        let found = cur.named_tensors()?;
        fill_moments(opt, names, found, section)?;
    }

    if cur.pos != body.len() {
        return Err(CheckpointError::Malformed("trailing bytes".into()));
    }
    Ok(state)
}
