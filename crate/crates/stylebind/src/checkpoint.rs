//! SFCK checkpoint files.
//!
//! Layout: magic `SFCK`, `u32` version, `u32` tensor count, then per tensor a
//! `u16` name length, the UTF-8 name, a `u8` rank, `rank` `u64` dimensions
//! and the row-major data as `f32`. Integers and floats are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use stylebind_core::nets::TrainableWeights;
use stylebind_core::params::TensorTable;
use stylebind_core::prompt::Vocabulary;
use stylebind_core::schedule::{make_schedule, DiffusionSchedule};
use stylebind_core::tensor::Tensor;

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"SFCK";
pub const VERSION: u32 = 1;

/// Serializes `(name, tensor)` entries in order.
pub fn encode_tensors<'t>(entries: impl IntoIterator<Item = (&'t str, &'t Tensor)>) -> Result<Vec<u8>> {
    let entries: Vec<_> = entries.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u32::<LittleEndian>(VERSION)?;
    out.write_u32::<LittleEndian>(entries.len() as u32)?;
    for (name, t) in entries {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len()).map_err(|_| CliError::format(0, format!("tensor name `{name}` too long")))?;
        out.write_u16::<LittleEndian>(len)?;
        out.extend_from_slice(bytes);
        out.write_u8(t.rank() as u8)?;
        for &d in t.shape() {
            out.write_u64::<LittleEndian>(d as u64)?;
        }
        for &v in t.data() {
            out.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    Ok(out)
}

struct Reader<'b> {
    buf: &'b [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(CliError::format(self.pos, format!("truncated file while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(self.take(2, what)?.read_u16::<LittleEndian>()?)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(self.take(4, what)?.read_u32::<LittleEndian>()?)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(self.take(8, what)?.read_u64::<LittleEndian>()?)
    }
}

/// Parses a checkpoint into ordered `(name, tensor)` entries.
pub fn decode_tensors(buf: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(CliError::format(0, "bad magic, expected SFCK"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CliError::format(4, format!("unsupported version {version}, expected {VERSION}")));
    }
    let count = r.u32("tensor count")?;
    let mut out = Vec::with_capacity(count as usize);
    for i in 0..count {
        let at = r.pos;
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| CliError::format(at + 2, format!("tensor {i} name is not UTF-8")))?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let at = r.pos;
            let d = r.u64("dimension")?;
            shape.push(usize::try_from(d).map_err(|_| CliError::format(at, "dimension overflows"))?);
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.filter(|n| n.checked_mul(4).is_some()).ok_or_else(|| CliError::format(r.pos, "tensor too large"))?;
        let at = r.pos;
        let raw = r.take(n * 4, &format!("data of `{name}`"))?;
        let data: Vec<f64> = raw.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))).collect();
        let t = Tensor::new(&shape, data).map_err(|e| CliError::format(at, e.to_string()))?;
        out.push((name, t));
    }
    if r.pos != buf.len() {
        return Err(CliError::format(r.pos, "trailing bytes after the last tensor"));
    }
    Ok(out)
}

pub fn write_tensors<'t>(path: &Path, entries: impl IntoIterator<Item = (&'t str, &'t Tensor)>) -> Result<()> {
    let bytes = encode_tensors(entries)?;
    let mut f = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| CliError::io(path, e))?;
    Ok(())
}

pub fn read_tensors(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| CliError::io(path, e))?;
    decode_tensors(&buf).map_err(|e| e.in_file(path))
}

fn vocab_tensor(v: &Vocabulary) -> Tensor {
    let joined = v.words().join("\n");
    let bytes: Vec<f64> = joined.bytes().map(f64::from).collect();
    Tensor::new(&[bytes.len()], bytes).expect("rank-1 shape")
}

/// Full model state in checkpoint order.
pub fn weights_to_table(w: &TrainableWeights) -> TensorTable {
    let mut t = TensorTable::new();
    t.extend_prefixed("theta/", &w.theta);
    t.extend_prefixed("phi/", &w.phi);
    t.extend_prefixed("ae/", &w.frozen_autoencoder);
    let (bs, be) = w.schedule.beta_range();
    t.insert("schedule/steps", Tensor::scalar(w.schedule.steps() as f64));
    t.insert("schedule/betas", Tensor::new(&[2], vec![bs, be]).expect("static shape"));
    t.insert("meta/version", Tensor::scalar(w.version as f64));
    t.insert("meta/vocabulary", vocab_tensor(&Vocabulary::standard()));
    t
}

fn scalar(t: &TensorTable, name: &str) -> Result<f64> {
    let v = t.get(name).map_err(|_| CliError::format(0, format!("checkpoint lacks `{name}`")))?;
    Ok(v.data()[0])
}

/// Inverse of [`weights_to_table`]. The schedule is rebuilt from its step
/// count; betas are stored at single precision, so the standard scaled ramp
/// is recognized and recomputed exactly.
pub fn weights_from_table(t: &TensorTable) -> Result<TrainableWeights> {
    let steps = scalar(t, "schedule/steps")? as usize;
    let betas = t.get("schedule/betas").map_err(|_| CliError::format(0, "checkpoint lacks `schedule/betas`"))?;
    let (bs, be) = (betas.data()[0], betas.data()[1]);
    let standard = DiffusionSchedule::scaled_linear(steps).map_err(CliError::from)?;
    let (ss, se) = standard.beta_range();
    let schedule = if (ss as f32) as f64 == bs && (se as f32) as f64 == be {
        standard
    } else {
        make_schedule(steps, bs, be)?
    };
    let vocab = t.get("meta/vocabulary").map_err(|_| CliError::format(0, "checkpoint lacks `meta/vocabulary`"))?;
    if *vocab != vocab_tensor(&Vocabulary::standard()) {
        return Err(CliError::Config("checkpoint was written with a different vocabulary".into()));
    }
    Ok(TrainableWeights {
        theta: t.strip_prefix("theta/"),
        phi: t.strip_prefix("phi/"),
        frozen_autoencoder: t.strip_prefix("ae/"),
        schedule,
        version: scalar(t, "meta/version")? as u64,
    })
}

pub fn save_weights(path: &Path, w: &TrainableWeights) -> Result<()> {
    let table = weights_to_table(w);
    write_tensors(path, table.iter())
}

pub fn load_weights(path: &Path) -> Result<TrainableWeights> {
    let entries = read_tensors(path)?;
    weights_from_table(&entries.into_iter().collect()).map_err(|e| e.in_file(path))
}

pub fn save_table(path: &Path, t: &TensorTable) -> Result<()> {
    write_tensors(path, t.iter())
}

pub fn load_table(path: &Path) -> Result<TensorTable> {
    Ok(read_tensors(path)?.into_iter().collect())
}

/// Rounds every tensor to `f32` precision, the state a save/load cycle
/// produces.
pub fn quantize_table(t: &TensorTable) -> TensorTable {
    t.iter().map(|(n, x)| (n.to_string(), x.map(|v| f64::from(v as f32)))).collect()
}
