//! Binary checkpoint format.
//!
//! Layout (little-endian):
//! `"EFGN"`, `u32` version, `u64` meta length, JSON meta, `u32` entry count,
//! entries of (`u32` name length, name, `u8` dtype, `u8` kind, `u8` rank,
//! `u64` extents, `u64` payload offset), `u64` payload length, payload,
//! `u64` FNV-1a checksum of every preceding byte.

use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::optim::AdamW;
use crate::numcore::{ParamKind, ParamStore, Tensor};
use crate::pipeline::config::TrainConfig;
use crate::pipeline::train::{History, Model, Trainer};
use crate::pruning::PruneMask;

pub const MAGIC: [u8; 4] = *b"EFGN";
pub const VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;
/// Kind tag for tensors that are not parameters (spectral-norm vectors).
const KIND_STATE: u8 = 0xff;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RngState {
    seed: [u8; 32],
    stream: u64,
    /// Decimal string: JSON numbers cannot hold a u128 portably.
    word_pos: String,
}

impl RngState {
    fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    fn restore(&self) -> Result<ChaCha8Rng> {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| Error::Corrupt(format!("rng word position {:?}", self.word_pos)))?);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Meta {
    config: TrainConfig,
    epoch: usize,
    step: u64,
    gen_opt_step: u64,
    disc_opt_step: u64,
    rng: RngState,
    mask: Option<PruneMask>,
    history: History,
}

#[derive(Clone, Debug, PartialEq)]
enum Data {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    name: String,
    kind: u8,
    shape: Vec<usize>,
    data: Data,
}

fn store_entries(out: &mut Vec<Entry>, store: &ParamStore<f32>, gen_opt: &AdamW<f32>) {
    for (id, p) in store.iter() {
        let kind = p.kind.tag();
        let shape = p.tensor.shape().to_vec();
        let mut push = |prefix: &str, data: Vec<f32>| {
            out.push(Entry { name: format!("{prefix}/{}", p.name), kind, shape: shape.clone(), data: Data::F32(data) })
        };
        push("param", p.tensor.data().to_vec());
        if let Some(mask) = &p.mask {
            push("mask", mask.clone());
        }
        push("adam.m", gen_opt.m[id.0].clone());
        push("adam.v", gen_opt.v[id.0].clone());
    }
}

fn trainer_entries(t: &Trainer) -> Vec<Entry> {
    let mut out = Vec::new();
    store_entries(&mut out, &t.model.gen_params, &t.gen_opt);
    store_entries(&mut out, &t.model.disc_params, &t.disc_opt);
    for (i, stage) in t.model.discriminator.stages.iter().enumerate() {
        for (tag, v) in [("u", &stage.spectral.u), ("v", &stage.spectral.v)] {
            out.push(Entry {
                name: format!("spectral/disc.stage{i}.{tag}"),
                kind: KIND_STATE,
                shape: vec![v.len()],
                data: Data::F64(v.clone()),
            });
        }
    }
    out
}

fn checksum(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// Serializes the full training state.
pub fn encode(t: &Trainer) -> Result<Vec<u8>> {
    let meta = Meta {
        config: t.config.clone(),
        epoch: t.epoch,
        step: t.step,
        gen_opt_step: t.gen_opt.step,
        disc_opt_step: t.disc_opt.step,
        rng: RngState::capture(&t.rng),
        mask: t.mask.clone(),
        history: t.history.clone(),
    };
    let meta = serde_json::to_vec(&meta)?;
    let entries = trainer_entries(t);

    let mut payload = Vec::new();
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    buf.extend_from_slice(&meta);
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in &entries {
        buf.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(e.name.as_bytes());
        let dtype = match e.data {
            Data::F32(_) => DTYPE_F32,
            Data::F64(_) => DTYPE_F64,
        };
        buf.extend_from_slice(&[dtype, e.kind, e.shape.len() as u8]);
        for &d in &e.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        buf.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        match &e.data {
            Data::F32(v) => v.iter().for_each(|x| payload.extend_from_slice(&x.to_le_bytes())),
            Data::F64(v) => v.iter().for_each(|x| payload.extend_from_slice(&x.to_le_bytes())),
        }
    }
    buf.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    buf.extend_from_slice(&payload);
    let sum = checksum(&buf);
    buf.extend_from_slice(&sum.to_le_bytes());
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Truncated(format!("{what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?).map_err(|_| Error::Corrupt(format!("{what} does not fit in memory")))
    }
}

fn decode_entries(bytes: &[u8]) -> Result<(Meta, Vec<Entry>)> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::MagicMismatch(magic));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::VersionMismatch { found: version, supported: VERSION });
    }
    if bytes.len() < r.pos + 8 {
        return Err(Error::Truncated("checksum".into()));
    }
    let body = &bytes[..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().expect("8 bytes"));
    r.bytes = body;

    let meta_len = r.len("meta length")?;
    let meta_bytes = r.take(meta_len, "meta")?;
    let count = r.u32("entry count")? as usize;
    let mut headers = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let n = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(n, "name")?).map_err(|_| Error::Corrupt("tensor name is not UTF-8".into()))?.to_string();
        let dtype = r.u8("dtype")?;
        let kind = r.u8("kind")?;
        let rank = r.u8("rank")? as usize;
        let shape = (0..rank).map(|_| r.len("extent")).collect::<Result<Vec<_>>>()?;
        let offset = r.len("offset")?;
        headers.push((name, dtype, kind, shape, offset));
    }
    let payload_len = r.len("payload length")?;
    let payload = r.take(payload_len, "payload")?;
    let computed = checksum(body);
    if computed != stored {
        return Err(Error::Checksum { stored, computed });
    }
    if r.pos != body.len() {
        return Err(Error::Corrupt(format!("{} trailing bytes", body.len() - r.pos)));
    }

    let meta: Meta = serde_json::from_slice(meta_bytes).map_err(|e| Error::Corrupt(format!("meta: {e}")))?;
    let mut entries = Vec::with_capacity(headers.len());
    for (name, dtype, kind, shape, offset) in headers {
        let numel: usize = shape.iter().product();
        let width = match dtype {
            DTYPE_F32 => 4,
            DTYPE_F64 => 8,
            d => return Err(Error::Corrupt(format!("{name}: unknown dtype {d}"))),
        };
        let chunk = offset
            .checked_add(numel * width)
            .and_then(|end| payload.get(offset..end))
            .ok_or_else(|| Error::Corrupt(format!("{name}: payload range out of bounds")))?;
        let data = if dtype == DTYPE_F32 {
            Data::F32(chunk.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
        } else {
            Data::F64(chunk.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
        };
        entries.push(Entry { name, kind, shape, data });
    }
    Ok((meta, entries))
}

fn restore_store(store: &mut ParamStore<f32>, opt: &mut AdamW<f32>, table: &mut std::collections::HashMap<String, Entry>) -> Result<()> {
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let (name, kind, shape) = {
            let p = store.get(id);
            (p.name.clone(), p.kind, p.tensor.shape().to_vec())
        };
        let mut fetch = |prefix: &str, required: bool| -> Result<Option<Vec<f32>>> {
            let key = format!("{prefix}/{name}");
            let Some(e) = table.remove(&key) else {
                return if required { Err(Error::Corrupt(format!("missing tensor {key}"))) } else { Ok(None) };
            };
            if e.shape != shape || ParamKind::from_tag(e.kind) != Some(kind) {
                return Err(Error::Corrupt(format!("{key}: stored {:?} kind {} does not match {:?} {:?}", e.shape, e.kind, shape, kind)));
            }
            match e.data {
                Data::F32(v) => Ok(Some(v)),
                Data::F64(_) => Err(Error::Corrupt(format!("{key}: expected 32-bit data"))),
            }
        };
        let value = fetch("param", true)?.expect("required");
        let mask = fetch("mask", false)?;
        let m = fetch("adam.m", true)?.expect("required");
        let v = fetch("adam.v", true)?.expect("required");
        let p = store.get_mut(id);
        p.tensor = Tensor::new(&shape, value)?;
        p.mask = mask;
        opt.m[id.0] = m;
        opt.v[id.0] = v;
    }
    Ok(())
}

/// Rebuilds a trainer from bytes. Nothing is returned unless every check passes.
pub fn decode(bytes: &[u8]) -> Result<Trainer> {
    let (meta, entries) = decode_entries(bytes)?;
    meta.config.validate()?;
    let mut t = Trainer::new(meta.config)?;
    let mut table: std::collections::HashMap<String, Entry> = entries.into_iter().map(|e| (e.name.clone(), e)).collect();
    let Model { discriminator, gen_params, disc_params, .. } = &mut t.model;
    restore_store(gen_params, &mut t.gen_opt, &mut table)?;
    restore_store(disc_params, &mut t.disc_opt, &mut table)?;
    for (i, stage) in discriminator.stages.iter_mut().enumerate() {
        for (tag, dst) in [("u", &mut stage.spectral.u), ("v", &mut stage.spectral.v)] {
            let key = format!("spectral/disc.stage{i}.{tag}");
            match table.remove(&key) {
                Some(Entry { data: Data::F64(v), .. }) if v.len() == dst.len() => *dst = v,
                _ => return Err(Error::Corrupt(format!("missing or malformed {key}"))),
            }
        }
    }
    if let Some(extra) = table.keys().next() {
        return Err(Error::Corrupt(format!("unexpected tensor {extra}")));
    }
    t.epoch = meta.epoch;
    t.step = meta.step;
    t.gen_opt.step = meta.gen_opt_step;
    t.disc_opt.step = meta.disc_opt_step;
    t.rng = meta.rng.restore()?;
    t.mask = meta.mask;
    t.history = meta.history;
    Ok(t)
}

pub fn save_checkpoint(path: &Path, t: &Trainer) -> Result<()> {
    std::fs::write(path, encode(t)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
    decode(&std::fs::read(path)?)
}
