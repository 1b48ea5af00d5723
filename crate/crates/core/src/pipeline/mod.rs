//! Training, evaluation, compression and decompression.
//!
//! A training step encodes a batch, replaces every feature vector with its
//! nearest codeword, decodes through the straight-through substitute and
//! minimizes `mse(Θ, Θ̂) + kb_loss` with Adam over the network parameters
//! and the codebook.

mod eval;
mod report;

pub use eval::{baseline_scalar_quant, compress, decompress, evaluate_nmse, nmse, reconstruct, EvalReport};
pub use report::{EpochStats, TrainReport, CSV_HEADER};

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codebook::{kb_loss, kb_loss_value};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::models::{derive_seed, Model, ModelConfig};
use crate::tensor::{Adam, AdamConfig, CosineSchedule, Dims, ParamId, Tape, Tensor4};

/// Seed stream of the per-epoch shuffles.
const SHUFFLE_STREAM: u64 = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: u32,
    pub batch_size: usize,
    pub schedule: CosineSchedule,
    pub adam: AdamConfig,
    /// Weight of the commitment term.
    pub beta: f64,
    pub seed: u64,
    /// Adds the codebook/commitment loss; off reproduces the ablation.
    pub kb_loss: bool,
    /// Routes reconstruction gradients past the codeword selection to the
    /// encoder; off feeds the gathered codewords to the decoder directly.
    pub straight_through: bool,
    pub train_path: Option<PathBuf>,
    pub val_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
}

impl TrainConfig {
    /// Desk-scale defaults: 30 epochs, batch 100, cosine from 0.002 to 0
    /// with a 20-epoch period, β from the variant.
    pub fn new(model: ModelConfig, seed: u64) -> Self {
        let beta = model.variant.default_beta();
        TrainConfig {
            model,
            epochs: 30,
            batch_size: 100,
            schedule: CosineSchedule::new(0.002, 0.0, 20).expect("valid defaults"),
            adam: AdamConfig::default(),
            beta,
            seed,
            kb_loss: true,
            straight_through: true,
            train_path: None,
            val_path: None,
            checkpoint_path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(Error::config(format!(
                "β must be a finite non-negative number, got {}",
                self.beta
            )));
        }
        // Re-run the schedule constructor's checks on the public fields.
        let s = &self.schedule;
        CosineSchedule::new(s.eta_max, s.eta_min, s.t_max)?;
        self.model.validate()
    }
}

/// Reads the configured dataset files, trains, and writes the checkpoint if
/// a path is set.
pub fn train(cfg: &TrainConfig) -> Result<(Model, TrainReport)> {
    let train_path = cfg
        .train_path
        .as_deref()
        .ok_or_else(|| Error::config("no training dataset path"))?;
    let train_set = Dataset::read(train_path)?;
    let val_set = match &cfg.val_path {
        Some(p) => Some(Dataset::read(p)?),
        None => None,
    };
    let (model, mut report) = train_on(cfg, &train_set, val_set.as_ref())?;
    if let Some(path) = &cfg.checkpoint_path {
        model.save(path)?;
        report.checkpoint = Some(path.clone());
    }
    Ok((model, report))
}

fn check_dataset(cfg: &TrainConfig, data: &Dataset, what: &str) -> Result<()> {
    if data.side != cfg.model.side {
        return Err(Error::config(format!(
            "{what} dataset has M = {}, model expects {}",
            data.side, cfg.model.side
        )));
    }
    Ok(())
}

/// Stacks the selected samples into an `n×1×M×M` tensor.
pub(crate) fn batch_tensor(data: &Dataset, indices: &[usize]) -> Tensor4 {
    let m = data.side;
    let mut values = Vec::with_capacity(indices.len() * m * m);
    for &i in indices {
        values.extend_from_slice(data.samples[i].values());
    }
    Tensor4::from_vec(Dims::new(indices.len(), 1, m, m), values).expect("sample sizes are checked")
}

/// Trains a freshly initialized model on in-memory datasets.
pub fn train_on(cfg: &TrainConfig, train_set: &Dataset, val_set: Option<&Dataset>) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    check_dataset(cfg, train_set, "training")?;
    if train_set.is_empty() {
        return Err(Error::config("training dataset is empty"));
    }
    if let Some(v) = val_set {
        check_dataset(cfg, v, "validation")?;
    }

    let mut model = Model::build(cfg.model.clone(), cfg.seed)?;
    let codebook_id = ParamId(model.params.len());
    let slot_lens: Vec<usize> = model
        .params
        .iter()
        .map(|(_, t)| t.len())
        .chain([model.codebook.vectors().len()])
        .collect();
    let mut adam = Adam::new(cfg.adam, slot_lens);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, SHUFFLE_STREAM));
    let (c, k, z) = (cfg.model.channels, cfg.model.codeword_len, cfg.model.codebook_size);

    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.lr(epoch);
        order.shuffle(&mut shuffle_rng);
        let mut usage = vec![0u64; z];
        let mut loss_sum = 0.0;
        let mut cb_grad_max: f64 = 0.0;

        for batch in order.chunks(cfg.batch_size) {
            let n = batch.len();
            let mut tape = Tape::new();
            let p = tape.params(&model.params);
            let table = tape.param(codebook_id, model.codebook.to_tensor());
            let x = tape.input(batch_tensor(train_set, batch));
            let zv = model.encode_on(&mut tape, &p, x)?;
            let rows = model.codebook.nearest_all(tape.value(zv).data())?;
            for &r in &rows {
                usage[r] += 1;
            }
            let sel = tape.gather(table, rows, Dims::new(n, c, 1, k))?;
            let dec_in = if cfg.straight_through {
                tape.straight_through(zv, sel)?
            } else {
                sel
            };
            let y = model.decode_on(&mut tape, &p, dec_in)?;
            let mut loss = tape.mse(y, x)?;
            if cfg.kb_loss {
                let kb = kb_loss(&mut tape, zv, sel, cfg.beta)?;
                loss = tape.add(loss, kb)?;
            }
            let loss_value = tape.value(loss).item().expect("scalar loss");
            if !loss_value.is_finite() {
                return Err(Error::Numeric { param: "loss".into() });
            }
            loss_sum += loss_value * n as f64;

            let grads = tape.backward(loss)?;
            let ids: Vec<ParamId> = model.params.ids().collect();
            for id in ids {
                let g = grads.param(id).map(|g| g.data());
                let name = model.params.name(id).to_string();
                adam.step(id.0, &name, model.params.get_mut(id).data_mut(), g, lr)?;
            }
            let g = grads.param(codebook_id).map(|g| g.data());
            if let Some(g) = g {
                cb_grad_max = g.iter().fold(cb_grad_max, |m, v| m.max(v.abs()));
            }
            adam.step(codebook_id.0, "codebook", model.codebook.vectors_mut(), g, lr)?;
            report.steps += 1;
        }

        let val_nmse = match val_set {
            Some(v) if !v.is_empty() => Some(evaluate_nmse(&model, v)?.nmse),
            _ => None,
        };
        report.epochs.push(EpochStats {
            epoch,
            lr,
            train_loss: loss_sum / train_set.len() as f64,
            val_nmse,
            dead_codewords: usage.iter().filter(|&&u| u == 0).count(),
            codebook_grad_max: cb_grad_max,
        });
    }
    Ok((model, report))
}

/// Results of training with and without the knowledge-base loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Ablation {
    pub with_kb: TrainReport,
    pub without_kb: TrainReport,
    pub with_model: Model,
    pub without_model: Model,
}

/// Two runs from the same seed that differ only in whether the kb term is
/// part of the loss; the codebook is used in the forward pass of both.
pub fn ablate_kb_loss(cfg: &TrainConfig, train_set: &Dataset, val_set: Option<&Dataset>) -> Result<Ablation> {
    let mut with = cfg.clone();
    with.kb_loss = true;
    let mut without = cfg.clone();
    without.kb_loss = false;
    let (with_model, with_kb) = train_on(&with, train_set, val_set)?;
    let (without_model, without_kb) = train_on(&without, train_set, val_set)?;
    Ok(Ablation {
        with_kb,
        without_kb,
        with_model,
        without_model,
    })
}

/// `mse(Θ, Θ̂) + kb_loss(z, e, β)` for plain values.
pub fn total_loss(theta: &[f64], theta_hat: &[f64], z: &[f64], selected: &[f64], beta: f64) -> Result<f64> {
    if theta.len() != theta_hat.len() {
        return Err(Error::shape(
            format!("{} values", theta.len()),
            format!("{} values", theta_hat.len()),
        ));
    }
    let rec = if theta.is_empty() {
        0.0
    } else {
        theta.iter().zip(theta_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / theta.len() as f64
    };
    Ok(rec + kb_loss_value(z, selected, beta)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_phase_dataset, ChannelConfig};

    fn tiny(count: usize, seed: u64) -> Dataset {
        let samples = generate_phase_dataset(&ChannelConfig::new(16, seed), count).unwrap();
        Dataset::new(16, samples).unwrap()
    }

    #[test]
    fn step_counting() {
        let mut cfg = TrainConfig::new(ModelConfig::psfnet(16, 2, 4), 1);
        cfg.epochs = 2;
        cfg.batch_size = 5;
        let (_, report) = train_on(&cfg, &tiny(10, 0), None).unwrap();
        assert_eq!(report.epochs.len(), 2);
        assert_eq!(report.steps, 4);
        cfg.batch_size = 4;
        let (_, report) = train_on(&cfg, &tiny(10, 0), None).unwrap();
        assert_eq!(report.steps, 6);
    }

    #[test]
    fn rejects_bad_configs_before_training() {
        let mut cfg = TrainConfig::new(ModelConfig::psfnet(16, 2, 4), 1);
        cfg.batch_size = 0;
        assert!(matches!(train_on(&cfg, &tiny(4, 0), None), Err(Error::Config(_))));
        let cfg = TrainConfig::new(ModelConfig::psfnet(32, 2, 4), 1);
        assert!(matches!(train_on(&cfg, &tiny(4, 0), None), Err(Error::Config(_))));
    }

    #[test]
    fn total_loss_examples() {
        let t = [0.1, 0.2, 0.3];
        assert_eq!(total_loss(&t, &t, &[1.0, 2.0], &[1.0, 2.0], 0.25).unwrap(), 0.0);
        // z = [1, 0], e = [0, 0]: 0.5 + 0.25·0.5.
        assert_eq!(total_loss(&t, &t, &[1.0, 0.0], &[0.0, 0.0], 0.25).unwrap(), 0.625);
        assert!(total_loss(&t, &t[..2], &[], &[], 0.25).is_err());
    }
}
