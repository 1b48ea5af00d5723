//! Model checkpoint file.
//!
//! Layout, little-endian:
//!
//! ```text
//! "KBCK" | u32 version = 1
//! u8 variant (0 = PSFNet, 1 = PSFNet-H) | u8 decoder GARBs
//! u32 M | u32 C | u32 K | u32 Z | u32 k0
//! u32 tensor count
//! per tensor: u32 name length | name (UTF-8) | 4 × u32 dims | f32 values
//! ```
//!
//! Tensors are the network parameters in construction order followed by
//! `codebook` with dims `1×1×Z×K`.

use std::path::Path;

use super::{Model, ModelConfig, Variant};
use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::io::{read_file, write_atomic, Reader};
use crate::tensor::{Dims, Tensor4};

const MAGIC: &[u8; 4] = b"KBCK";
const VERSION: u32 = 1;
const CODEBOOK: &str = "codebook";

fn push_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn push_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor4) {
    push_u32(out, name.len());
    out.extend_from_slice(name.as_bytes());
    for d in t.dims().0 {
        push_u32(out, d);
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let cfg = &model.config;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match cfg.variant {
        Variant::PsfNet => 0,
        Variant::PsfNetH => 1,
    });
    out.push(cfg.decoder_garbs as u8);
    for v in [
        cfg.side,
        cfg.channels,
        cfg.codeword_len,
        cfg.codebook_size,
        cfg.reduction,
    ] {
        push_u32(&mut out, v);
    }
    push_u32(&mut out, model.params.len() + 1);
    for (name, t) in model.params.iter() {
        push_tensor(&mut out, name, t);
    }
    push_tensor(&mut out, CODEBOOK, &model.codebook.to_tensor());
    out
}

fn read_tensor(r: &mut Reader) -> Result<(String, Tensor4, u64)> {
    let at = r.offset();
    let len = r.u32("tensor name length")? as usize;
    let name = std::str::from_utf8(r.take(len, "tensor name")?)
        .map_err(|_| Error::format(at + 4, "tensor name is not UTF-8"))?
        .to_string();
    let mut d = [0usize; 4];
    for x in &mut d {
        *x = r.u32("tensor dims")? as usize;
    }
    let dims = Dims(d);
    let count = d.iter().try_fold(1usize, |a, &b| a.checked_mul(b));
    let count = match count {
        Some(c) if c <= r.remaining() / 4 => c,
        _ => {
            return Err(Error::format(
                r.offset(),
                format!("tensor `{name}` dims {dims} exceed the file"),
            ))
        }
    };
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        data.push(r.f32("tensor values")? as f64);
    }
    Ok((name, Tensor4::from_vec(dims, data)?, at))
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let at = r.offset();
    let variant = match r.u8("variant")? {
        0 => Variant::PsfNet,
        1 => Variant::PsfNetH,
        v => return Err(Error::format(at, format!("unknown variant tag {v}"))),
    };
    let decoder_garbs = r.u8("decoder GARB count")? as usize;
    let mut f = [0usize; 5];
    for x in &mut f {
        *x = r.u32("model configuration")? as usize;
    }
    let config = ModelConfig {
        variant,
        side: f[0],
        channels: f[1],
        codeword_len: f[2],
        codebook_size: f[3],
        reduction: f[4],
        decoder_garbs,
    };
    let mut model = Model::build(config, 0).map_err(|e| Error::format(at, format!("invalid configuration: {e}")))?;

    let at = r.offset();
    let count = r.u32("tensor count")? as usize;
    if count != model.params.len() + 1 {
        return Err(Error::format(
            at,
            format!("expected {} tensors, found {count}", model.params.len() + 1),
        ));
    }
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let (name, t, at) = read_tensor(&mut r)?;
        let want = model.params.get(id);
        if name != model.params.name(id) || t.dims() != want.dims() {
            return Err(Error::format(
                at,
                format!(
                    "expected tensor `{}` {}, found `{name}` {}",
                    model.params.name(id),
                    want.dims(),
                    t.dims()
                ),
            ));
        }
        *model.params.get_mut(id) = t;
    }
    let (name, t, at) = read_tensor(&mut r)?;
    let (z, k) = (model.config.codebook_size, model.config.codeword_len);
    if name != CODEBOOK || t.dims() != Dims::new(1, 1, z, k) {
        return Err(Error::format(
            at,
            format!("expected `{CODEBOOK}` 1×1×{z}×{k}, found `{name}` {}", t.dims()),
        ));
    }
    model.codebook = Codebook::new(z, k, t.into_data())?;
    r.finish()?;
    Ok(model)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    write_atomic(path, &to_bytes(model))
}

pub fn load(path: &Path) -> Result<Model> {
    from_bytes(&read_file(path)?)
}

impl Model {
    pub fn save(&self, path: &Path) -> Result<()> {
        save(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        load(path)
    }
}
