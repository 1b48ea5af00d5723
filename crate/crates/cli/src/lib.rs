//! `kbae` subcommands: dataset generation, training, evaluation,
//! compress/decompress round trips, complexity reports and heatmaps.
//!
//! [`dispatch`] returns the process exit status: 0 on success, 1 when an
//! operation fails, 2 for usage errors.

pub mod heatmap;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use kbae_core::channel::{generate_phase_dataset, ChannelConfig};
use kbae_core::codebook::FeedbackBitstream;
use kbae_core::io::write_atomic;
use kbae_core::pipeline::{compress, decompress, evaluate_nmse, train_on, TrainConfig};
use kbae_core::tensor::CosineSchedule;
use kbae_core::{Dataset, Model, ModelConfig, Variant};

use heatmap::HeatmapImage;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "kbae", version, about = "Knowledge-base autoencoder RIS phase feedback")]
pub struct Cli {
    /// Flat `key = value` file of default flags; command-line flags win.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate optimal phase matrices from synthetic channels.
    GenData(GenData),
    /// Train a model and write its checkpoint.
    Train(Train),
    /// NMSE of the quantized round trip over a dataset.
    Eval(Eval),
    /// Encode one matrix into a feedback bitstream.
    Compress(Compress),
    /// Reconstruct a phase matrix from a feedback bitstream.
    Decompress(Decompress),
    /// Parameter and FLOP counts next to the published values.
    Report(Report),
    /// Export a phase matrix (or a pair) as a PGM heatmap.
    Viz(Viz),
}

#[derive(Args, Debug)]
pub struct GenData {
    /// Surface side M.
    #[arg(long, default_value_t = 32)]
    pub m: usize,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Paths per link (default: generator default).
    #[arg(long)]
    pub paths: Option<usize>,
    /// Azimuth half-width in degrees (default: generator default).
    #[arg(long)]
    pub azimuth: Option<f64>,
    /// Elevation half-width in degrees (default: generator default).
    #[arg(long)]
    pub elevation: Option<f64>,
    /// Colon-separated weights, e.g. `8:1:1`; writes `<stem>.train`,
    /// `.val` and `.test` files instead of `--out` itself.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Train {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long, default_value = "psfnet")]
    pub variant: String,
    /// Indices per feedback C.
    #[arg(long, default_value_t = 16)]
    pub c: usize,
    /// Codebook size Z.
    #[arg(long, default_value_t = 256)]
    pub z: usize,
    /// Attention reduction factor (PSFNet-H).
    #[arg(long, default_value_t = 2)]
    pub k0: usize,
    /// GARBs in the PSFNet-H decoder (1 or 2).
    #[arg(long, default_value_t = 2)]
    pub decoder_garbs: usize,
    /// Commitment weight (default: 0.25 for PSFNet, 0.5 for PSFNet-H).
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, default_value_t = 30)]
    pub epochs: u32,
    #[arg(long, default_value_t = 100)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.002)]
    pub lr_max: f64,
    #[arg(long, default_value_t = 0.0)]
    pub lr_min: f64,
    #[arg(long, default_value_t = 20)]
    pub t_max: u32,
    /// Drop the codebook/commitment loss.
    #[arg(long)]
    pub no_kb: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the per-epoch table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct Eval {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Also write per-sample squared errors as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct Compress {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset file holding the matrix.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Sample within the dataset.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Decompress {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Bitstream file.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output dataset file with the single reconstructed matrix.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Report {
    #[arg(long, default_value = "psfnet")]
    pub variant: String,
    #[arg(long)]
    pub c: usize,
    #[arg(long, default_value_t = 256)]
    pub z: usize,
    #[arg(long, default_value_t = 32)]
    pub m: usize,
    #[arg(long, default_value_t = 2)]
    pub k0: usize,
}

#[derive(Args, Debug)]
pub struct Viz {
    /// Dataset file.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Second dataset file shown to the right (e.g. a reconstruction).
    #[arg(long)]
    pub pair: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub pair_index: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Published parameter and FLOP counts at M = 32.
pub fn reference_counts(variant: Variant, c: usize) -> Option<(f64, f64)> {
    match (variant, c) {
        (Variant::PsfNet, 64) => Some((173_251.0, 9_703_000.0)),
        (Variant::PsfNet, 32) => Some((43_619.0, 2_593_000.0)),
        (Variant::PsfNet, 16) => Some((11_059.0, 733_184.0)),
        (Variant::PsfNetH, 8) => Some((6_645.0, 983_232.0)),
        (Variant::PsfNetH, 4) => Some((4_915.0, 777_360.0)),
        _ => None,
    }
}

/// Lines of the config file as `--key value` arguments, skipping keys the
/// command line already sets. `true`/`false` toggle bare flags.
fn config_args(path: &Path, cli: &[OsString]) -> anyhow::Result<Vec<OsString>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{}:{}: expected key = value", path.display(), n + 1))?;
        let flag = format!("--{}", key.trim());
        let set = cli.iter().any(|a| {
            let a = a.to_string_lossy();
            a == flag || a.starts_with(&format!("{flag}="))
        });
        if set {
            continue;
        }
        match value.trim() {
            "true" => out.push(flag.into()),
            "false" => {}
            v => {
                out.push(flag.into());
                out.push(v.into());
            }
        }
    }
    Ok(out)
}

/// Value of `--config PATH` or `--config=PATH`.
fn find_config(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

const SUBCOMMANDS: [&str; 7] = ["gen-data", "train", "eval", "compress", "decompress", "report", "viz"];

fn parse(args: Vec<OsString>) -> Result<Cli, Failure> {
    let args = match find_config(&args) {
        Some(path) => {
            let extra = config_args(&path, &args).map_err(Failure::Runtime)?;
            // Insert right after the subcommand so the flags bind to it.
            let at = args
                .iter()
                .position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref()))
                .map(|i| i + 1)
                .unwrap_or(args.len());
            let mut full = args[..at].to_vec();
            full.extend(extra);
            full.extend_from_slice(&args[at..]);
            full
        }
        None => args,
    };
    Cli::try_parse_from(args).map_err(|e| Failure::Usage(e.to_string()))
}

/// Runs one command line; output goes to `out`, diagnostics to `err`.
pub fn dispatch<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let wants_info = args
        .iter()
        .skip(1)
        .any(|a| a == "--help" || a == "-h" || a == "--version" || a == "-V");
    let cli = match parse(args) {
        Ok(cli) => cli,
        Err(Failure::Usage(msg)) => {
            if wants_info {
                let _ = write!(out, "{msg}");
                return EXIT_OK;
            }
            let first = msg.lines().next().unwrap_or("usage error");
            let _ = writeln!(err, "{first}");
            return EXIT_USAGE;
        }
        Err(Failure::Runtime(e)) => {
            let _ = writeln!(err, "error: {e:#}");
            return EXIT_FAILURE;
        }
    };
    match run(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {}", format!("{e:#}").replace('\n', " "));
            EXIT_FAILURE
        }
    }
}

fn variant(name: &str) -> anyhow::Result<Variant> {
    Ok(Variant::parse(name)?)
}

fn read_dataset(path: &Path) -> anyhow::Result<Dataset> {
    Dataset::read(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn sample(data: &Dataset, index: usize, path: &Path) -> anyhow::Result<kbae_core::PhaseShiftMatrix> {
    data.samples
        .get(index)
        .cloned()
        .ok_or_else(|| anyhow!("{} has {} samples, no index {index}", path.display(), data.len()))
}

fn split_path(out: &Path, part: usize, parts: usize) -> PathBuf {
    let name = match (parts, part) {
        (2 | 3, 0) => "train".to_string(),
        (2 | 3, 1) => "val".to_string(),
        (3, 2) => "test".to_string(),
        _ => format!("part{part}"),
    };
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let file = match out.extension() {
        Some(ext) => format!("{stem}.{name}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{name}"),
    };
    out.with_file_name(file)
}

fn run(command: Command, out: &mut dyn Write) -> anyhow::Result<()> {
    match command {
        Command::GenData(a) => {
            let mut ch = ChannelConfig::new(a.m, a.seed);
            if let Some(p) = a.paths {
                ch = ch.with_paths(p);
            }
            if let Some(az) = a.azimuth {
                ch.azimuth = (-az.to_radians(), az.to_radians());
            }
            if let Some(el) = a.elevation {
                ch.elevation = (-el.to_radians(), el.to_radians());
            }
            let data = Dataset::new(a.m, generate_phase_dataset(&ch, a.count)?)?;
            match a.split {
                None => {
                    data.write(&a.out)?;
                    writeln!(
                        out,
                        "wrote {} samples of {}×{} to {}",
                        data.len(),
                        a.m,
                        a.m,
                        a.out.display()
                    )?;
                }
                Some(ratio) => {
                    let weights = ratio
                        .split(':')
                        .map(|w| w.trim().parse::<f64>().map_err(|_| anyhow!("bad split weight `{w}`")))
                        .collect::<anyhow::Result<Vec<_>>>()?;
                    let parts = data.split(&weights)?;
                    for (i, part) in parts.iter().enumerate() {
                        let path = split_path(&a.out, i, parts.len());
                        part.write(&path)?;
                        writeln!(out, "wrote {} samples to {}", part.len(), path.display())?;
                    }
                }
            }
        }
        Command::Train(a) => {
            let train_set = read_dataset(&a.data)?;
            let val_set = a.val.as_deref().map(read_dataset).transpose()?;
            let v = variant(&a.variant)?;
            let mut model = ModelConfig::new(v, train_set.side, a.c, a.z);
            model.reduction = a.k0;
            model.decoder_garbs = a.decoder_garbs;
            let mut cfg = TrainConfig::new(model, a.seed);
            cfg.epochs = a.epochs;
            cfg.batch_size = a.batch;
            cfg.schedule = CosineSchedule::new(a.lr_max, a.lr_min, a.t_max)?;
            cfg.beta = a.beta.unwrap_or(v.default_beta());
            cfg.kb_loss = !a.no_kb;
            let (m, mut report) = train_on(&cfg, &train_set, val_set.as_ref())?;
            m.save(&a.out)?;
            report.checkpoint = Some(a.out.clone());
            if let Some(csv) = &a.csv {
                write_atomic(csv, report.to_csv().as_bytes())?;
            }
            write!(out, "{}", report.to_text())?;
        }
        Command::Eval(a) => {
            let m = Model::load(&a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
            let data = read_dataset(&a.data)?;
            let r = evaluate_nmse(&m, &data)?;
            if let Some(csv) = &a.csv {
                write_atomic(csv, r.to_csv().as_bytes())?;
            }
            write!(out, "{}", r.to_text())?;
        }
        Command::Compress(a) => {
            let m = Model::load(&a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
            let data = read_dataset(&a.input)?;
            let theta = sample(&data, a.index, &a.input)?;
            let bs = compress(&m, &theta)?;
            bs.write(&a.out)?;
            writeln!(
                out,
                "indices={} codebook_size={} payload_bits={} file={}",
                bs.count(),
                bs.codebook_size(),
                bs.bit_len(),
                a.out.display()
            )?;
        }
        Command::Decompress(a) => {
            let m = Model::load(&a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
            let bs = FeedbackBitstream::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
            let theta = decompress(&m, &bs)?;
            let side = theta.side();
            Dataset::new(side, vec![theta.normalize()?])?.write(&a.out)?;
            writeln!(out, "wrote {side}×{side} reconstruction to {}", a.out.display())?;
        }
        Command::Report(a) => report(&a, out)?,
        Command::Viz(a) => {
            let data = read_dataset(&a.input)?;
            let left = sample(&data, a.index, &a.input)?;
            let img = match &a.pair {
                None => HeatmapImage::from_matrix(&left),
                Some(p) => {
                    let other = read_dataset(p)?;
                    HeatmapImage::paired(&left, &sample(&other, a.pair_index, p)?)
                }
            };
            img.write(&a.out)?;
            writeln!(out, "wrote {}×{} image to {}", img.width, img.height, a.out.display())?;
        }
    }
    Ok(())
}

fn report(a: &Report, out: &mut dyn Write) -> anyhow::Result<()> {
    let v = variant(&a.variant)?;
    let placements: &[usize] = match v {
        Variant::PsfNet => &[2],
        Variant::PsfNetH => &[2, 1],
    };
    let reference = reference_counts(v, a.c);
    for &garbs in placements {
        let mut cfg = ModelConfig::new(v, a.m, a.c, a.z);
        cfg.reduction = a.k0;
        cfg.decoder_garbs = garbs;
        let m = Model::build(cfg.clone(), 0)?;
        let stats = kbae_core::codebook::compression_stats(cfg.elements(), cfg.channels, cfg.codebook_size)?;
        write!(
            out,
            "variant={} m={} c={} k={} z={} ratio={} bits={} params={} flops={} codebook_params={}",
            v.name(),
            cfg.side,
            cfg.channels,
            cfg.codeword_len,
            cfg.codebook_size,
            stats.ratio,
            stats.total_bits,
            m.param_count()?,
            m.flops()?,
            m.codebook_param_count()
        )?;
        if v == Variant::PsfNetH {
            write!(out, " decoder_garbs={garbs}")?;
        }
        if let (Some((p, f)), 32) = (reference, a.m) {
            write!(out, " reference_params={p} reference_flops={f}")?;
        }
        writeln!(out)?;
    }
    if reference.is_none() || a.m != 32 {
        writeln!(out, "no published reference for this configuration")?;
    }
    Ok(())
}
