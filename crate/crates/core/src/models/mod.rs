//! PSFNet and PSFNet-H encoder/decoder networks.
//!
//! Both encoders map a 1×M×M normalized phase matrix to C feature maps that
//! flatten to C vectors of length K; both decoders take C codewords, reshape
//! them to C×√K×√K and upsample back to 1×M×M.

pub mod checkpoint;
mod network;

pub use network::{Block, ConvLayer, GarbBlock, NetBuilder, Network, Shape3};

use crate::channel::{PhaseDomain, PhaseShiftMatrix};
use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::tensor::{Dims, ParamSet, Tape, Tensor4, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    PsfNet,
    PsfNetH,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::PsfNet => "psfnet",
            Variant::PsfNetH => "psfnet-h",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "psfnet" => Ok(Variant::PsfNet),
            "psfnet-h" | "psfneth" | "psfnet_h" => Ok(Variant::PsfNetH),
            other => Err(Error::config(format!("unknown variant `{other}`"))),
        }
    }

    /// Default β of the commitment term.
    pub fn default_beta(self) -> f64 {
        match self {
            Variant::PsfNet => 0.25,
            Variant::PsfNetH => 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Input side M.
    pub side: usize,
    /// Encoder output channels C, i.e. indices per feedback.
    pub channels: usize,
    /// Codeword length K.
    pub codeword_len: usize,
    /// Codebook size Z.
    pub codebook_size: usize,
    /// Attention reduction factor k0 (PSFNet-H only).
    pub reduction: usize,
    /// GARBs in the PSFNet-H decoder: 2 as described, 1 drops the second.
    pub decoder_garbs: usize,
}

impl ModelConfig {
    pub fn psfnet(side: usize, channels: usize, codebook_size: usize) -> Self {
        let k = side / 8;
        ModelConfig {
            variant: Variant::PsfNet,
            side,
            channels,
            codeword_len: k * k,
            codebook_size,
            reduction: 2,
            decoder_garbs: 2,
        }
    }

    pub fn psfnet_h(side: usize, channels: usize, codebook_size: usize) -> Self {
        let k = side / 4;
        ModelConfig {
            variant: Variant::PsfNetH,
            side,
            channels,
            codeword_len: k * k,
            codebook_size,
            reduction: 2,
            decoder_garbs: 2,
        }
    }

    pub fn new(variant: Variant, side: usize, channels: usize, codebook_size: usize) -> Self {
        match variant {
            Variant::PsfNet => Self::psfnet(side, channels, codebook_size),
            Variant::PsfNetH => Self::psfnet_h(side, channels, codebook_size),
        }
    }

    /// N = M².
    pub fn elements(&self) -> usize {
        self.side * self.side
    }

    /// Side of each encoder feature map, √K.
    pub fn feature_side(&self) -> usize {
        match self.variant {
            Variant::PsfNet => self.side / 8,
            Variant::PsfNetH => self.side / 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let halvings = match self.variant {
            Variant::PsfNet => 8,
            Variant::PsfNetH => 4,
        };
        if self.side == 0 || !self.side.is_multiple_of(halvings) {
            return Err(Error::config(format!(
                "{} needs M divisible by {halvings}, got {}",
                self.variant.name(),
                self.side
            )));
        }
        let fs = self.feature_side();
        if self.codeword_len != fs * fs {
            return Err(Error::config(format!(
                "K must be {} for {} at M = {}, got {}",
                fs * fs,
                self.variant.name(),
                self.side,
                self.codeword_len
            )));
        }
        if !self.codebook_size.is_power_of_two() {
            return Err(Error::config(format!(
                "codebook size {} is not a power of two",
                self.codebook_size
            )));
        }
        match self.variant {
            Variant::PsfNet => {
                if self.channels < 2 || !self.channels.is_multiple_of(2) {
                    return Err(Error::config(format!(
                        "PSFNet needs an even C ≥ 2, got {}",
                        self.channels
                    )));
                }
            }
            Variant::PsfNetH => {
                let k0 = self.reduction;
                if self.channels == 0 || k0 == 0 || !self.channels.is_multiple_of(k0) || !8usize.is_multiple_of(k0) {
                    return Err(Error::config(format!(
                        "PSFNet-H needs k0 dividing both 8 and C, got k0 = {k0}, C = {}",
                        self.channels
                    )));
                }
                if !(1..=2).contains(&self.decoder_garbs) {
                    return Err(Error::config("PSFNet-H decoder takes 1 or 2 GARBs"));
                }
            }
        }
        Ok(())
    }
}

/// Encoder, decoder, their parameters and the codebook.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: Network,
    pub decoder: Network,
    pub params: ParamSet,
    pub codebook: Codebook,
}

/// splitmix64 finalizer, used to derive independent seeds.
pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// PSFNet layers; parameters are appended to `params`.
pub fn build_psfnet(cfg: &ModelConfig, params: &mut ParamSet, seed: u64) -> Result<(Network, Network)> {
    if cfg.variant != Variant::PsfNet {
        return Err(Error::config("build_psfnet called with a PSFNet-H configuration"));
    }
    cfg.validate()?;
    let (c, half, m, fs) = (cfg.channels, cfg.channels / 2, cfg.side, cfg.feature_side());

    let mut b = NetBuilder::new(params, seed, 1, "enc");
    let encoder = Network {
        input: [1, m, m],
        blocks: vec![
            b.conv(1, half, 4, 2, 1),
            Block::Relu,
            b.conv(half, half, 4, 2, 1),
            Block::Relu,
            b.conv(half, c, 4, 2, 1),
            Block::Relu,
        ],
    };

    let mut b = NetBuilder::new(params, seed, 2, "dec");
    let decoder = Network {
        input: [c, fs, fs],
        blocks: vec![
            Block::Residual(vec![
                b.conv(c, c, 3, 1, 1),
                Block::Relu,
                b.conv(c, c, 3, 1, 1),
                Block::Relu,
            ]),
            b.tconv(c, half, 4, 2, 1),
            Block::Relu,
            b.tconv(half, half, 4, 2, 1),
            Block::Relu,
            b.tconv(half, 1, 4, 2, 1),
        ],
    };
    Ok((encoder, decoder))
}

/// PSFNet-H layers; parameters are appended to `params`.
pub fn build_psfnet_h(cfg: &ModelConfig, params: &mut ParamSet, seed: u64) -> Result<(Network, Network)> {
    if cfg.variant != Variant::PsfNetH {
        return Err(Error::config("build_psfnet_h called with a PSFNet configuration"));
    }
    cfg.validate()?;
    let (c, m, fs, k0) = (cfg.channels, cfg.side, cfg.feature_side(), cfg.reduction);

    let mut b = NetBuilder::new(params, seed, 1, "enc");
    let encoder = Network {
        input: [1, m, m],
        blocks: vec![
            b.conv(1, 8, 4, 2, 1),
            Block::Relu,
            b.garb(8, k0),
            b.conv(8, 8, 4, 2, 1),
            Block::Relu,
            b.garb(8, k0),
            b.conv(8, c, 3, 1, 1),
            Block::Relu,
        ],
    };

    let mut b = NetBuilder::new(params, seed, 2, "dec");
    let mut blocks = vec![b.garb(c, k0), b.tconv(c, 8, 4, 2, 1), Block::Relu];
    if cfg.decoder_garbs == 2 {
        blocks.push(b.garb(8, k0));
    }
    blocks.push(b.tconv(8, 1, 4, 2, 1));
    let decoder = Network {
        input: [c, fs, fs],
        blocks,
    };
    Ok((encoder, decoder))
}

/// Runs one GARB outside of training.
pub fn garb_forward(input: &Tensor4, block: &GarbBlock, params: &ParamSet) -> Result<Tensor4> {
    let mut tape = Tape::inference();
    let p = tape.params(params);
    let x = tape.input(input.clone());
    let y = block.forward(&mut tape, &p, x)?;
    Ok(tape.value(y).clone())
}

impl Model {
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let (encoder, decoder) = match config.variant {
            Variant::PsfNet => build_psfnet(&config, &mut params, seed)?,
            Variant::PsfNetH => build_psfnet_h(&config, &mut params, seed)?,
        };
        let codebook = Codebook::init(config.codebook_size, config.codeword_len, derive_seed(seed, 3))?;
        Ok(Model {
            config,
            encoder,
            decoder,
            params,
            codebook,
        })
    }

    /// Encoder forward pass on a batch `n×1×M×M`, returning `n×C×1×K`
    /// feature vectors.
    pub fn encode_on(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        let feats = self.encoder.forward(tape, p, x)?;
        let n = tape.value(feats).batch();
        tape.reshape(feats, Dims::new(n, self.config.channels, 1, self.config.codeword_len))
    }

    /// Decoder forward pass from `n×C×1×K` vectors to `n×1×M×M`.
    pub fn decode_on(&self, tape: &mut Tape, p: &[Var], vectors: Var) -> Result<Var> {
        let n = tape.value(vectors).batch();
        let fs = self.config.feature_side();
        let x = tape.reshape(vectors, Dims::new(n, self.config.channels, fs, fs))?;
        self.decoder.forward(tape, p, x)
    }

    fn input_tensor(&self, theta: &PhaseShiftMatrix) -> Result<Tensor4> {
        if theta.domain() != PhaseDomain::Normalized {
            return Err(Error::Domain("the encoder takes a normalized phase matrix".into()));
        }
        let m = self.config.side;
        if theta.side() != m {
            return Err(Error::shape(
                format!("{m}×{m} matrix"),
                format!("{0}×{0}", theta.side()),
            ));
        }
        Tensor4::from_vec(Dims::new(1, 1, m, m), theta.values().to_vec())
    }

    /// C feature vectors of length K, concatenated.
    pub fn encode(&self, theta: &PhaseShiftMatrix) -> Result<Vec<f64>> {
        let mut tape = Tape::inference();
        let p = tape.params(&self.params);
        let x = tape.input(self.input_tensor(theta)?);
        let z = self.encode_on(&mut tape, &p, x)?;
        Ok(tape.value(z).data().to_vec())
    }

    /// Decoder output for C·K input values, without clamping.
    pub fn decode_values(&self, vectors: &[f64]) -> Result<Vec<f64>> {
        let (c, k) = (self.config.channels, self.config.codeword_len);
        let v = Tensor4::from_vec(Dims::new(1, c, 1, k), vectors.to_vec())?;
        let mut tape = Tape::inference();
        let p = tape.params(&self.params);
        let x = tape.input(v);
        let y = self.decode_on(&mut tape, &p, x)?;
        Ok(tape.value(y).data().to_vec())
    }

    /// Decoder output as a normalized matrix, clamped into `[0, 1)`.
    pub fn decode(&self, vectors: &[f64]) -> Result<PhaseShiftMatrix> {
        let values = self.decode_values(vectors)?;
        PhaseShiftMatrix::new(self.config.side, clamp_normalized(values), PhaseDomain::Normalized)
    }

    /// Encoder plus decoder parameters (codebook excluded).
    pub fn param_count(&self) -> Result<usize> {
        Ok(self.encoder.param_count()? + self.decoder.param_count()?)
    }

    /// Z·K.
    pub fn codebook_param_count(&self) -> usize {
        self.codebook.size() * self.codebook.dim()
    }

    pub fn flops(&self) -> Result<usize> {
        Ok(self.encoder.flops()? + self.decoder.flops()?)
    }
}

/// Largest value kept by the export clamp, `1 − 2⁻²⁴`.
pub const EXPORT_MAX: f64 = 1.0 - 1.0 / (1u64 << 24) as f64;

/// Clamps decoder output into `[0, 1 − 2⁻²⁴]`; non-finite values map to 0.
pub fn clamp_normalized(mut values: Vec<f64>) -> Vec<f64> {
    for v in &mut values {
        *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, EXPORT_MAX) };
    }
    values
}

pub fn count_params(net: &Network) -> Result<usize> {
    net.param_count()
}

pub fn count_flops(net: &Network) -> Result<usize> {
    net.flops()
}
