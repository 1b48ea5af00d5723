//! The shared knowledge base: Z learnable vectors of length K.
//!
//! Only the index of the nearest codeword of each encoder feature vector
//! crosses the feedback link, as a fixed-width `log2(Z)`-bit field.

use std::path::Path;

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::{read_file, write_atomic, Reader};
use crate::tensor::{Dims, Tape, Tensor4, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    size: usize,
    dim: usize,
    vectors: Vec<f64>,
}

fn check_size(size: usize) -> Result<()> {
    if !size.is_power_of_two() {
        return Err(Error::config(format!("codebook size {size} is not a power of two")));
    }
    Ok(())
}

impl Codebook {
    /// Codebook from `size` row-major vectors of length `dim`.
    pub fn new(size: usize, dim: usize, vectors: Vec<f64>) -> Result<Self> {
        check_size(size)?;
        if dim == 0 {
            return Err(Error::config("codeword length must be at least 1"));
        }
        if vectors.len() != size * dim {
            return Err(Error::shape(
                format!("{size}×{dim} codebook"),
                format!("{} values", vectors.len()),
            ));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                param: "codebook".into(),
            });
        }
        Ok(Codebook { size, dim, vectors })
    }

    /// Entries i.i.d. uniform on the open interval `(0, 1/dim)`.
    pub fn init(size: usize, dim: usize, seed: u64) -> Result<Self> {
        check_size(size)?;
        if dim == 0 {
            return Err(Error::config("codeword length must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / dim as f64;
        let vectors = (0..size * dim)
            .map(|_| {
                let u: f64 = rng.sample(Open01);
                u * scale
            })
            .collect();
        Ok(Codebook { size, dim, vectors })
    }

    /// Z.
    pub fn size(&self) -> usize {
        self.size
    }

    /// K.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Bits per index, `log2(Z)`.
    pub fn bits(&self) -> u32 {
        self.size.trailing_zeros()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub fn vectors_mut(&mut self) -> &mut [f64] {
        &mut self.vectors
    }

    /// The codebook as a `1×1×Z×K` tensor.
    pub fn to_tensor(&self) -> Tensor4 {
        Tensor4::from_vec(Dims::new(1, 1, self.size, self.dim), self.vectors.clone()).expect("Z·K values")
    }

    /// Index of the codeword closest to `z` in squared Euclidean distance;
    /// ties go to the lowest index.
    pub fn nearest(&self, z: &[f64]) -> Result<usize> {
        if z.len() != self.dim {
            return Err(Error::shape(
                format!("vector of length {}", self.dim),
                format!("length {}", z.len()),
            ));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                param: "feature vector".into(),
            });
        }
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, e) in self.vectors.chunks_exact(self.dim).enumerate() {
            let d: f64 = z.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        Ok(best)
    }

    /// Nearest index of each consecutive length-K chunk of `zs`.
    pub fn nearest_all(&self, zs: &[f64]) -> Result<Vec<usize>> {
        if !zs.len().is_multiple_of(self.dim) {
            return Err(Error::shape(
                format!("a multiple of {} values", self.dim),
                format!("{} values", zs.len()),
            ));
        }
        zs.chunks_exact(self.dim).map(|z| self.nearest(z)).collect()
    }

    /// Codewords of `iv`, concatenated in order (C·K values).
    pub fn lookup(&self, iv: &IndexVector) -> Result<Vec<f64>> {
        if iv.codebook_size() != self.size {
            return Err(Error::config(format!(
                "indices address a codebook of {} entries, this one has {}",
                iv.codebook_size(),
                self.size
            )));
        }
        let mut out = Vec::with_capacity(iv.len() * self.dim);
        for &k in iv.indices() {
            out.extend_from_slice(self.row(k as usize));
        }
        Ok(out)
    }

    /// Number of codewords never chosen according to `usage`.
    pub fn dead_count(usage: &[u64]) -> usize {
        usage.iter().filter(|&&c| c == 0).count()
    }
}

pub fn init_codebook(size: usize, dim: usize, seed: u64) -> Result<Codebook> {
    Codebook::init(size, dim, seed)
}

pub fn nearest_index(z: &[f64], cb: &Codebook) -> Result<usize> {
    cb.nearest(z)
}

pub fn lookup(iv: &IndexVector, cb: &Codebook) -> Result<Vec<f64>> {
    cb.lookup(iv)
}

/// C codebook indices, each below Z.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexVector {
    indices: Vec<u32>,
    size: usize,
}

impl IndexVector {
    pub fn new(indices: Vec<u32>, size: usize) -> Result<Self> {
        check_size(size)?;
        if let Some(&bad) = indices.iter().find(|&&k| k as usize >= size) {
            return Err(Error::Range {
                value: u64::from(bad),
                bound: size as u64,
            });
        }
        Ok(IndexVector { indices, size })
    }

    pub fn from_usize(indices: &[usize], size: usize) -> Result<Self> {
        let idx = indices
            .iter()
            .map(|&k| {
                u32::try_from(k).map_err(|_| Error::Range {
                    value: k as u64,
                    bound: size as u64,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(idx, size)
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn codebook_size(&self) -> usize {
        self.size
    }
}

/// Packed feedback payload: C fields of `log2(Z)` bits, MSB first, zero
/// padded to a whole byte.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeedbackBitstream {
    bytes: Vec<u8>,
    count: usize,
    size: usize,
}

pub const BITSTREAM_MAGIC: &[u8; 4] = b"KBFB";
pub const BITSTREAM_VERSION: u32 = 1;

impl FeedbackBitstream {
    /// Wraps a payload, checking its length and padding against `count`
    /// indices into a codebook of `size` entries.
    pub fn from_parts(bytes: Vec<u8>, count: usize, size: usize) -> Result<Self> {
        check_size(size)?;
        let bits = count * size.trailing_zeros() as usize;
        if bytes.len() != bits.div_ceil(8) {
            return Err(Error::format(
                0,
                format!("payload of {} bytes cannot hold {bits} bits", bytes.len()),
            ));
        }
        if !bits.is_multiple_of(8) {
            let pad_mask = 0xffu8 >> (bits % 8);
            if bytes[bytes.len() - 1] & pad_mask != 0 {
                return Err(Error::format(bytes.len() as u64 - 1, "nonzero pad bits"));
            }
        }
        Ok(FeedbackBitstream { bytes, count, size })
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// C.
    pub fn count(&self) -> usize {
        self.count
    }

    /// Z.
    pub fn codebook_size(&self) -> usize {
        self.size
    }

    /// B = C·log2(Z).
    pub fn bit_len(&self) -> usize {
        self.count * self.size.trailing_zeros() as usize
    }

    pub fn to_file_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.bytes.len());
        out.extend_from_slice(BITSTREAM_MAGIC);
        out.extend_from_slice(&BITSTREAM_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.count as u32).to_le_bytes());
        out.extend_from_slice(&(self.size as u32).to_le_bytes());
        out.extend_from_slice(&self.bytes);
        out
    }

    pub fn from_file_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(BITSTREAM_MAGIC)?;
        r.version(BITSTREAM_VERSION)?;
        let count = r.u32("index count")? as usize;
        let size_at = r.offset();
        let size = r.u32("codebook size")? as usize;
        if !size.is_power_of_two() {
            return Err(Error::format(
                size_at,
                format!("codebook size {size} is not a power of two"),
            ));
        }
        let payload = r.take(r.remaining(), "payload")?.to_vec();
        Self::from_parts(payload, count, size).map_err(|e| match e {
            Error::Format { offset, msg } => Error::format(offset + 16, msg),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_file_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_file_bytes(&read_file(path)?)
    }
}

pub fn encode_bits(iv: &IndexVector) -> FeedbackBitstream {
    let q = iv.size.trailing_zeros();
    let bits = iv.len() * q as usize;
    let mut bytes = vec![0u8; bits.div_ceil(8)];
    let mut pos = 0usize;
    for &k in &iv.indices {
        for b in (0..q).rev() {
            if (k >> b) & 1 == 1 {
                bytes[pos / 8] |= 0x80 >> (pos % 8);
            }
            pos += 1;
        }
    }
    FeedbackBitstream {
        bytes,
        count: iv.len(),
        size: iv.size,
    }
}

pub fn decode_bits(bs: &FeedbackBitstream) -> IndexVector {
    let q = bs.size.trailing_zeros();
    let mut pos = 0usize;
    let indices = (0..bs.count)
        .map(|_| {
            let mut k = 0u32;
            for _ in 0..q {
                let bit = (bs.bytes[pos / 8] >> (7 - pos % 8)) & 1;
                k = (k << 1) | u32::from(bit);
                pos += 1;
            }
            k
        })
        .collect();
    IndexVector { indices, size: bs.size }
}

/// Bit budget of one feedback: q bits per index, B bits in total and the
/// compression ratio γ = N/C.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompressionStats {
    pub bits_per_index: u32,
    pub total_bits: usize,
    pub ratio: f64,
}

pub fn compression_stats(elements: usize, count: usize, size: usize) -> Result<CompressionStats> {
    check_size(size)?;
    if count == 0 {
        return Err(Error::config("at least one index is required"));
    }
    let q = size.trailing_zeros();
    Ok(CompressionStats {
        bits_per_index: q,
        total_bits: q as usize * count,
        ratio: elements as f64 / count as f64,
    })
}

/// Codebook-learning plus commitment loss on the tape:
/// `mse(sg[z], e) + β·mse(z, sg[e])`, averaged over every element.
///
/// The first term only produces gradients for whatever `selected` was
/// gathered from, the second only for `z`.
pub fn kb_loss(tape: &mut Tape, z: Var, selected: Var, beta: f64) -> Result<Var> {
    let z_frozen = tape.stop_gradient(z);
    let e_frozen = tape.stop_gradient(selected);
    let learn = tape.mse(z_frozen, selected)?;
    let commit = tape.mse(z, e_frozen)?;
    let commit = tape.scale(commit, beta);
    tape.add(learn, commit)
}

/// Value of [`kb_loss`] for plain slices.
pub fn kb_loss_value(z: &[f64], selected: &[f64], beta: f64) -> Result<f64> {
    if z.len() != selected.len() {
        return Err(Error::shape(
            format!("{} values", z.len()),
            format!("{} values", selected.len()),
        ));
    }
    if z.is_empty() {
        return Ok(0.0);
    }
    let m = z.iter().zip(selected).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / z.len() as f64;
    Ok(m + beta * m)
}

/// Decoder input whose value is `selected` but whose gradient flows to `z`.
pub fn straight_through(tape: &mut Tape, z: Var, selected: Var) -> Result<Var> {
    tape.straight_through(z, selected)
}
