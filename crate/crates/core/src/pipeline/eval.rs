use std::f64::consts::TAU;
use std::fmt::Write as _;

use super::batch_tensor;
use crate::channel::{PhaseDomain, PhaseShiftMatrix};
use crate::codebook::{compression_stats, decode_bits, encode_bits, CompressionStats, FeedbackBitstream, IndexVector};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::tensor::{Dims, Tape, Tensor4};

/// Samples per inference batch during evaluation.
const EVAL_BATCH: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// `Σ‖Θ̂ − Θ‖² / Σ‖Θ‖²` over the dataset.
    pub nmse: f64,
    pub nmse_db: f64,
    /// `‖Θ̂ − Θ‖²` of every sample.
    pub sample_errors: Vec<f64>,
    pub samples: usize,
    pub stats: CompressionStats,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        format!(
            "samples={} nmse={} nmse_db={} bits_per_index={} total_bits={} ratio={}\n",
            self.samples, self.nmse, self.nmse_db, self.stats.bits_per_index, self.stats.total_bits, self.stats.ratio
        )
    }

    /// `sample,squared_error` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample,squared_error\n");
        for (i, e) in self.sample_errors.iter().enumerate() {
            writeln!(out, "{i},{e}").expect("write to String");
        }
        out
    }
}

/// Ratio of summed squared errors to summed reference energy.
pub fn nmse<A: AsRef<[f64]>, B: AsRef<[f64]>>(targets: &[A], recons: &[B]) -> Result<f64> {
    Ok(nmse_parts(targets, recons)?.0)
}

fn nmse_parts<A: AsRef<[f64]>, B: AsRef<[f64]>>(targets: &[A], recons: &[B]) -> Result<(f64, Vec<f64>)> {
    if targets.is_empty() {
        return Err(Error::Domain("NMSE of an empty dataset".into()));
    }
    if targets.len() != recons.len() {
        return Err(Error::shape(format!("{} reconstructions", targets.len()), recons.len()));
    }
    let mut errors = Vec::with_capacity(targets.len());
    let (mut err, mut energy) = (0.0, 0.0);
    for (t, r) in targets.iter().zip(recons) {
        let (t, r) = (t.as_ref(), r.as_ref());
        if t.len() != r.len() {
            return Err(Error::shape(
                format!("{} values", t.len()),
                format!("{} values", r.len()),
            ));
        }
        let e: f64 = t.iter().zip(r).map(|(a, b)| (b - a) * (b - a)).sum();
        energy += t.iter().map(|a| a * a).sum::<f64>();
        err += e;
        errors.push(e);
    }
    if energy == 0.0 {
        return Err(Error::Domain("NMSE against all-zero references".into()));
    }
    Ok((err / energy, errors))
}

/// Quantized reconstructions (unclamped decoder output) of `indices`.
fn reconstruct_batch(model: &Model, data: &Dataset, indices: &[usize]) -> Result<Vec<f64>> {
    let cfg = &model.config;
    let mut tape = Tape::inference();
    let p = tape.params(&model.params);
    let x = tape.input(batch_tensor(data, indices));
    let z = model.encode_on(&mut tape, &p, x)?;
    let rows = model.codebook.nearest_all(tape.value(z).data())?;
    let mut selected = Vec::with_capacity(rows.len() * cfg.codeword_len);
    for r in rows {
        selected.extend_from_slice(model.codebook.row(r));
    }
    let e = tape.input(Tensor4::from_vec(
        Dims::new(indices.len(), cfg.channels, 1, cfg.codeword_len),
        selected,
    )?);
    let y = model.decode_on(&mut tape, &p, e)?;
    Ok(tape.value(y).data().to_vec())
}

/// Full feedback round trip through the codebook, measured on normalized
/// matrices before the export clamp.
pub fn evaluate_nmse(model: &Model, data: &Dataset) -> Result<EvalReport> {
    if data.side != model.config.side {
        return Err(Error::config(format!(
            "dataset has M = {}, model expects {}",
            data.side, model.config.side
        )));
    }
    if data.is_empty() {
        return Err(Error::Domain("evaluation dataset is empty".into()));
    }
    let n_el = model.config.elements();
    let mut recons = Vec::with_capacity(data.len());
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(EVAL_BATCH) {
        let values = reconstruct_batch(model, data, chunk)?;
        recons.extend(values.chunks_exact(n_el).map(<[f64]>::to_vec));
    }
    let targets: Vec<&[f64]> = data.samples.iter().map(PhaseShiftMatrix::values).collect();
    let (nmse, sample_errors) = nmse_parts(&targets, &recons)?;
    Ok(EvalReport {
        nmse,
        nmse_db: 10.0 * nmse.log10(),
        sample_errors,
        samples: data.len(),
        stats: compression_stats(n_el, model.config.channels, model.config.codebook_size)?,
    })
}

/// Quantized reconstruction of one matrix, normalized and unclamped.
pub fn reconstruct(model: &Model, theta: &PhaseShiftMatrix) -> Result<Vec<f64>> {
    let data = Dataset::new(model.config.side, vec![theta.to_normalized()])?;
    reconstruct_batch(model, &data, &[0])
}

/// Encodes `theta` (raw or normalized) into codebook indices packed as bits.
pub fn compress(model: &Model, theta: &PhaseShiftMatrix) -> Result<FeedbackBitstream> {
    let z = model.encode(&theta.to_normalized())?;
    let rows = model.codebook.nearest_all(&z)?;
    Ok(encode_bits(&IndexVector::from_usize(
        &rows,
        model.config.codebook_size,
    )?))
}

/// Rebuilds the raw phase matrix from a bitstream produced for this model.
pub fn decompress(model: &Model, bs: &FeedbackBitstream) -> Result<PhaseShiftMatrix> {
    let cfg = &model.config;
    if bs.count() != cfg.channels || bs.codebook_size() != cfg.codebook_size {
        return Err(Error::format(
            0,
            format!(
                "bitstream carries {} indices into {} codewords, model expects {} into {}",
                bs.count(),
                bs.codebook_size(),
                cfg.channels,
                cfg.codebook_size
            ),
        ));
    }
    let vectors = model.codebook.lookup(&decode_bits(bs))?;
    model.decode(&vectors)?.denormalize()
}

/// Uniform `b`-bit quantization of every phase to the center of its cell
/// in `[0, 2π)`.
pub fn baseline_scalar_quant(theta: &PhaseShiftMatrix, bits: u32) -> Result<PhaseShiftMatrix> {
    if !(1..=52).contains(&bits) {
        return Err(Error::config(format!(
            "scalar quantizer takes 1 to 52 bits, got {bits}"
        )));
    }
    let levels = (1u64 << bits) as f64;
    let cell = TAU / levels;
    let values = theta
        .to_raw()
        .values()
        .iter()
        .map(|&v| {
            let i = (v / cell).floor().clamp(0.0, levels - 1.0);
            (i + 0.5) * cell
        })
        .collect();
    PhaseShiftMatrix::new(theta.side(), values, PhaseDomain::Raw)
}
