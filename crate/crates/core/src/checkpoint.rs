//! Versioned, checksummed binary snapshot of named tensors plus a
//! `key = value` metadata block.
//!
//! Layout (little-endian): magic `MXTCKPT\0`, u32 version, u8 scalar width,
//! u32 metadata length + UTF-8 text, u32 tensor count, then per tensor
//! u16 name length + name, u8 rank, u64 extents, raw payload; finally the
//! CRC-32 of everything before it.

use std::io::Write;
use std::path::Path;

use mxt_tensor::{Real, Tensor};

use crate::config::{parse_kv, render_kv, KvMap};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MXTCKPT\0";
pub const VERSION: u32 = 1;
const WIDTH: u8 = std::mem::size_of::<Real>() as u8;

#[derive(Clone, Default)]
pub struct Checkpoint {
    pub meta: KvMap,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Tensors whose names start with `prefix`, with the prefix removed.
    pub fn with_prefix(&self, prefix: &str) -> Vec<(String, Tensor)> {
        self.tensors
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(prefix).map(|s| (s.to_string(), t.clone())))
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.push(WIDTH);
        let meta = render_kv(&self.meta);
        buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        buf.extend_from_slice(meta.as_bytes());
        buf.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let nb = name.as_bytes();
            if nb.len() > u16::MAX as usize || t.rank() > u8::MAX as usize {
                return Err(Error::Schema(format!("tensor `{name}` cannot be encoded")));
            }
            buf.extend_from_slice(&(nb.len() as u16).to_le_bytes());
            buf.extend_from_slice(nb);
            buf.push(t.rank() as u8);
            for &d in t.shape() {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Corrupt("missing checkpoint magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        if bytes.len() < 17 {
            return Err(Error::Corrupt("file truncated".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::Corrupt(
                "checksum mismatch (truncated or modified file)".into(),
            ));
        }
        let mut r = Reader { buf: body, pos: 12 };
        let width = r.take(1)?[0];
        if width != WIDTH {
            return Err(Error::Schema(format!(
                "checkpoint stores {width}-byte scalars but this build uses {WIDTH}-byte scalars"
            )));
        }
        let meta_len = r.u32()? as usize;
        let meta_text = std::str::from_utf8(r.take(meta_len)?)
            .map_err(|_| Error::Corrupt("metadata is not UTF-8".into()))?;
        let meta = parse_kv(meta_text)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Corrupt("tensor name is not UTF-8".into()))?;
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize);
            }
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let bytes_needed = numel.and_then(|n| n.checked_mul(WIDTH as usize));
            let payload =
                r.take(bytes_needed.ok_or_else(|| Error::Corrupt(format!("`{name}` too large")))?)?;
            let data = payload
                .chunks_exact(WIDTH as usize)
                .map(|c| Real::from_le_bytes(c.try_into().expect("width bytes")))
                .collect();
            tensors.push((name, Tensor::new(data, &shape)?));
        }
        if r.pos != body.len() {
            return Err(Error::Corrupt(format!(
                "{} trailing bytes",
                body.len() - r.pos
            )));
        }
        Ok(Checkpoint { meta, tensors })
    }

    /// Writes to a sibling temporary file and renames it into place, so an
    /// interrupted save never replaces a good checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| {
            Error::Corrupt(format!("unexpected end of data at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

/// Copies `named` tensors into `target` parameters by name. Every
/// parameter must be present with a matching shape and every named tensor
/// must be consumed.
pub fn assign_params(
    target: Vec<(String, &mut Tensor)>,
    named: Vec<(String, Tensor)>,
    what: &str,
) -> Result<()> {
    let mut pool: std::collections::BTreeMap<String, Tensor> = named.into_iter().collect();
    for (name, slot) in target {
        let t = pool
            .remove(&name)
            .ok_or_else(|| Error::Schema(format!("{what}: missing tensor `{name}`")))?;
        if t.shape() != slot.shape() {
            return Err(Error::Schema(format!(
                "{what}: tensor `{name}` has shape {:?}, expected {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = if slot.requires_grad() {
            t.detach().requires_grad_()
        } else {
            t.detach()
        };
    }
    if let Some(name) = pool.keys().next() {
        return Err(Error::Schema(format!("{what}: unknown tensor `{name}`")));
    }
    Ok(())
}

pub const MODEL_PREFIX: &str = "model.";

/// Snapshot of a model: its config under `model.*` metadata keys and its
/// weights under `model.*` tensor names.
pub fn model_checkpoint(model: &crate::model::MxT) -> Checkpoint {
    use crate::nn::Params;
    let tensors = model
        .named_params()
        .into_iter()
        .map(|(n, t)| (format!("{MODEL_PREFIX}{n}"), t.detach()))
        .collect();
    Checkpoint {
        meta: model.config.to_kv(),
        tensors,
    }
}

/// Resolves the model config stored in `ckpt` against the caller's config.
/// The stored config wins; every overridden key is logged and returned.
pub fn resolve_config(
    ckpt: &Checkpoint,
    requested: Option<&crate::model::ModelConfig>,
) -> Result<(crate::model::ModelConfig, Vec<String>)> {
    let model_keys: KvMap = ckpt
        .meta
        .iter()
        .filter(|(k, _)| k.starts_with(MODEL_PREFIX))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    if model_keys.is_empty() {
        return Err(Error::Schema("checkpoint carries no model config".into()));
    }
    let stored = crate::model::ModelConfig::from_kv(&model_keys)?;
    let mut notices = Vec::new();
    if let Some(req) = requested {
        let req_kv = req.to_kv();
        for (k, v) in stored.to_kv() {
            if req_kv.get(&k) != Some(&v) {
                let msg = format!(
                    "checkpoint config overrides {k}: using {v} (requested {})",
                    req_kv.get(&k).map(String::as_str).unwrap_or("<unset>")
                );
                log::warn!("{msg}");
                notices.push(msg);
            }
        }
    }
    Ok((stored, notices))
}

pub fn load_model(
    ckpt: &Checkpoint,
    requested: Option<&crate::model::ModelConfig>,
) -> Result<(crate::model::MxT, Vec<String>)> {
    use crate::nn::Params;
    let (cfg, notices) = resolve_config(ckpt, requested)?;
    let mut model = crate::model::MxT::new(cfg)?;
    assign_params(
        model.named_params_mut(),
        ckpt.with_prefix(MODEL_PREFIX),
        "model",
    )?;
    Ok((model, notices))
}
