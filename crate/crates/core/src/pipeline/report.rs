use std::fmt::Write as _;
use std::path::PathBuf;

/// Header of [`TrainReport::to_csv`]. `val_nmse` is empty when no
/// validation set was given.
pub const CSV_HEADER: &str = "epoch,lr,train_loss,val_nmse,val_nmse_db,dead_codewords,codebook_grad_max";

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: u32,
    pub lr: f64,
    /// Sample-weighted mean of the batch losses.
    pub train_loss: f64,
    pub val_nmse: Option<f64>,
    /// Codewords selected by no training sample during the epoch.
    pub dead_codewords: usize,
    /// Largest absolute codebook gradient seen during the epoch.
    pub codebook_grad_max: f64,
}

impl EpochStats {
    pub fn val_nmse_db(&self) -> Option<f64> {
        self.val_nmse.map(|v| 10.0 * v.log10())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Optimizer steps taken.
    pub steps: usize,
    pub checkpoint: Option<PathBuf>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl TrainReport {
    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }

    /// One `key=value` line per epoch, then a summary line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            write!(
                out,
                "epoch={} lr={} train_loss={} dead_codewords={} codebook_grad_max={}",
                e.epoch, e.lr, e.train_loss, e.dead_codewords, e.codebook_grad_max
            )
            .expect("write to String");
            if let (Some(v), Some(db)) = (e.val_nmse, e.val_nmse_db()) {
                write!(out, " val_nmse={v} val_nmse_db={db}").expect("write to String");
            }
            out.push('\n');
        }
        write!(out, "steps={}", self.steps).expect("write to String");
        if let Some(p) = &self.checkpoint {
            write!(out, " checkpoint={}", p.display()).expect("write to String");
        }
        out.push('\n');
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for e in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                e.epoch,
                e.lr,
                e.train_loss,
                opt(e.val_nmse),
                opt(e.val_nmse_db()),
                e.dead_codewords,
                e.codebook_grad_max
            )
            .expect("write to String");
        }
        out
    }
}
