//! Binary training checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "QAXCKPT\0" | u32 version
//! u64 len | key-value text (arch.*, train.*, epoch)
//! u64 len | history CSV
//! u32 count | count × tensor
//! u64 FNV-1a of every preceding byte
//! ```
//!
//! A tensor is `u32 name_len | name | u8 dtype | u32 rank | rank × u64 dim |
//! payload`. Names are `param/…`, `buffer/…` and `velocity/…`.

use std::path::Path;

use crate::data::AugmentationPolicy;
use crate::error::{Error, Result};
use crate::kv::{self, KeyValues};
use crate::tensor::{numel, DType, Element, Tensor};
use crate::train::{TrainConfig, TrainHistory, Trainer};
use crate::zoo::{build, ArchitectureSpec, Model};

pub const MAGIC: &[u8; 8] = b"QAXCKPT\0";
pub const VERSION: u32 = 1;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor<T: Element>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    out.push(T::DTYPE.tag());
    put_u32(out, t.rank() as u32);
    for &d in t.shape() {
        put_u64(out, d as u64);
    }
    for &v in t.data() {
        v.write_le(out);
    }
}

/// Serializes a trainer to bytes.
pub fn encode<T: Element>(trainer: &Trainer<T>) -> Vec<u8> {
    let store = &trainer.model.store;
    let meta = format!(
        "{}{}{}",
        kv::prefixed(&trainer.model.spec().to_kv(), "arch"),
        kv::prefixed(&trainer.config.to_kv(), "train"),
        kv::render(&[("epoch", trainer.next_epoch.to_string())]),
    );
    let history = trainer.history.to_csv();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u64(&mut out, meta.len() as u64);
    out.extend_from_slice(meta.as_bytes());
    put_u64(&mut out, history.len() as u64);
    out.extend_from_slice(history.as_bytes());
    let count = store.params().len() * 2 + store.buffers().len();
    put_u32(&mut out, count as u32);
    for p in store.params() {
        put_tensor(&mut out, &format!("param/{}", p.name), &p.value);
    }
    for b in store.buffers() {
        put_tensor(&mut out, &format!("buffer/{}", b.name), &b.value);
    }
    for (p, v) in store.params().iter().zip(&trainer.velocity) {
        put_tensor(&mut out, &format!("velocity/{}", p.name), v);
    }
    let sum = fnv1a64(&out);
    put_u64(&mut out, sum);
    out
}

pub fn save<T: Element>(path: &Path, trainer: &Trainer<T>) -> Result<()> {
    let bytes = encode(trainer);
    let tmp = path.with_extension("ckpt.tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Integrity(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Integrity("length overflows usize".into()))
    }

    fn text(&mut self, n: usize, what: &str) -> Result<&'a str> {
        std::str::from_utf8(self.take(n)?).map_err(|_| Error::Integrity(format!("{what} is not UTF-8")))
    }
}

/// A decoded tensor, cast to `T`.
struct Entry<T> {
    name: String,
    value: Tensor<T>,
}

fn read_tensor<T: Element>(r: &mut Reader<'_>) -> Result<Entry<T>> {
    let n = r.u32()? as usize;
    let name = r.text(n, "tensor name")?.to_string();
    let tag = r.u8()?;
    let dtype = DType::from_tag(tag).ok_or_else(|| Error::Integrity(format!("`{name}`: unknown dtype tag {tag}")))?;
    let rank = r.u32()? as usize;
    let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
    let count = numel(&shape);
    let payload = r.take(
        count
            .checked_mul(dtype.size_of())
            .ok_or_else(|| Error::Integrity("payload overflows".into()))?,
    )?;
    let data: Vec<T> = match dtype {
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| T::of(f64::from(f32::read_le(c))))
            .collect(),
        DType::F64 => payload.chunks_exact(8).map(|c| T::of(f64::read_le(c))).collect(),
    };
    Ok(Entry {
        name,
        value: Tensor::new(&shape, data)?,
    })
}

/// Parses checkpoint bytes into a trainer with element type `T`, casting
/// stored tensors when their dtype differs.
pub fn decode<T: Element>(bytes: &[u8], origin: &str) -> Result<Trainer<T>> {
    if bytes.len() < MAGIC.len() + 4 + 8 {
        return Err(Error::Integrity(format!(
            "{origin}: {} bytes is too short for a checkpoint",
            bytes.len()
        )));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::format(origin, "not a checkpoint (bad magic)"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    if fnv1a64(body) != stored {
        return Err(Error::Integrity(format!("{origin}: checksum mismatch")));
    }
    let mut r = Reader { bytes: body, pos: 8 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(origin, format!("unsupported version {version}")));
    }
    let n = r.len()?;
    let meta = KeyValues::parse(r.text(n, "metadata")?, origin)?;
    let n = r.len()?;
    let history = TrainHistory::from_csv(r.text(n, "history")?)?;
    let spec = ArchitectureSpec::from_kv(&meta.section("arch"))?;
    let config = TrainConfig::from_kv(&meta.section("train"))?;
    let epoch: usize = meta
        .get("epoch")?
        .ok_or_else(|| Error::format(origin, "missing `epoch`"))?;
    let mut model: Model<T> = build(&spec, 0)?;
    let count = r.u32()? as usize;
    let mut velocity: Vec<Option<Tensor<T>>> = vec![None; model.store.params().len()];
    let mut seen_params = vec![false; model.store.params().len()];
    let mut seen_buffers = vec![false; model.store.buffers().len()];
    for _ in 0..count {
        let e = read_tensor::<T>(&mut r)?;
        let (section, name) = e
            .name
            .split_once('/')
            .ok_or_else(|| Error::format(origin, format!("tensor `{}` has no section", e.name)))?;
        let mismatch = |want: &[usize]| {
            Error::format(
                origin,
                format!("`{}` has shape {:?}, model expects {want:?}", e.name, e.value.shape()),
            )
        };
        let unknown = || Error::format(origin, format!("`{}` does not belong to the model", e.name));
        match section {
            "param" | "velocity" => {
                let id = model.store.param_by_name(name).ok_or_else(unknown)?;
                let want = model.store.param(id).value.shape().to_vec();
                if e.value.shape() != want.as_slice() {
                    return Err(mismatch(&want));
                }
                if section == "param" {
                    model.store.param_mut(id).value = e.value;
                    seen_params[id.0] = true;
                } else {
                    velocity[id.0] = Some(e.value);
                }
            }
            "buffer" => {
                let i = model
                    .store
                    .buffers()
                    .iter()
                    .position(|b| b.name == name)
                    .ok_or_else(unknown)?;
                let want = model.store.buffers()[i].value.shape().to_vec();
                if e.value.shape() != want.as_slice() {
                    return Err(mismatch(&want));
                }
                model.store.buffers_mut()[i].value = e.value;
                seen_buffers[i] = true;
            }
            other => return Err(Error::format(origin, format!("unknown tensor section `{other}`"))),
        }
    }
    if r.pos != body.len() {
        return Err(Error::format(origin, format!("{} trailing bytes", body.len() - r.pos)));
    }
    if let Some(i) = seen_params.iter().position(|s| !s) {
        return Err(Error::format(
            origin,
            format!("missing parameter `{}`", model.store.params()[i].name),
        ));
    }
    if let Some(i) = seen_buffers.iter().position(|s| !s) {
        return Err(Error::format(
            origin,
            format!("missing buffer `{}`", model.store.buffers()[i].name),
        ));
    }
    let velocity = velocity
        .into_iter()
        .zip(model.store.params())
        .map(|(v, p)| v.unwrap_or_else(|| Tensor::zeros(p.value.shape())))
        .collect();
    let mut trainer = Trainer::new(model, config)?;
    trainer.velocity = velocity;
    trainer.next_epoch = epoch;
    trainer.history = history;
    Ok(trainer)
}

pub fn load<T: Element>(path: &Path) -> Result<Trainer<T>> {
    let bytes = std::fs::read(path)?;
    decode(&bytes, &path.display().to_string())
}

/// Evaluation needs the stored normalization as well as the model.
pub fn load_model<T: Element>(path: &Path) -> Result<(Model<T>, AugmentationPolicy)> {
    let t = load::<T>(path)?;
    Ok((t.model, t.config.augmentation))
}
