use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{conv_out_len, tconv_out_len, Dims, ParamId, ParamSet, Tape, Tensor4, Var};

/// Channel-height-width of a single sample.
pub type Shape3 = [usize; 3];

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub transposed: bool,
}

impl ConvLayer {
    pub fn out_shape(&self, [c, h, w]: Shape3) -> Result<Shape3> {
        if c != self.in_ch {
            return Err(Error::shape(
                format!("{} input channels", self.in_ch),
                format!("{c}×{h}×{w}"),
            ));
        }
        let f = if self.transposed { tconv_out_len } else { conv_out_len };
        Ok([
            self.out_ch,
            f(h, self.kernel, self.stride, self.pad)?,
            f(w, self.kernel, self.stride, self.pad)?,
        ])
    }

    pub fn param_count(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel * self.kernel + self.out_ch
    }

    /// Multiply-accumulates for one sample given the layer's output shape.
    pub fn macs(&self, [oc, oh, ow]: Shape3) -> usize {
        oh * ow * oc * self.in_ch * self.kernel * self.kernel
    }

    fn forward(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        let (w, b) = (p[self.weight.0], p[self.bias.0]);
        if self.transposed {
            tape.tconv2d(x, w, b, self.stride, self.pad)
        } else {
            tape.conv2d(x, w, b, self.stride, self.pad)
        }
    }
}

/// Global attention residual block: `out = sigmoid(excite(relu(squeeze(
/// pool(R))))) ⊙ R + x` with trunk `R = conv3(relu(conv3(x)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct GarbBlock {
    pub channels: usize,
    pub trunk1: ConvLayer,
    pub trunk2: ConvLayer,
    pub squeeze: ConvLayer,
    pub excite: ConvLayer,
}

impl GarbBlock {
    pub fn reduced_channels(&self) -> usize {
        self.squeeze.out_ch
    }

    pub fn layers(&self) -> [&ConvLayer; 4] {
        [&self.trunk1, &self.trunk2, &self.squeeze, &self.excite]
    }

    pub fn forward(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        let r = self.trunk1.forward(tape, p, x)?;
        let r = tape.relu(r);
        let r = self.trunk2.forward(tape, p, r)?;
        let s = tape.global_avg_pool(r);
        let s = self.squeeze.forward(tape, p, s)?;
        let s = tape.relu(s);
        let s = self.excite.forward(tape, p, s)?;
        let s = tape.sigmoid(s);
        let scaled = tape.channel_scale(r, s)?;
        tape.add(scaled, x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Block {
    Conv(ConvLayer),
    Relu,
    Garb(GarbBlock),
    /// `x + body(x)`.
    Residual(Vec<Block>),
}

impl Block {
    fn out_shape(&self, s: Shape3) -> Result<Shape3> {
        match self {
            Block::Conv(c) => c.out_shape(s),
            Block::Relu => Ok(s),
            Block::Garb(g) => {
                if s[0] != g.channels {
                    return Err(Error::shape(
                        format!("{} channels", g.channels),
                        format!("{}×{}×{}", s[0], s[1], s[2]),
                    ));
                }
                Ok(s)
            }
            Block::Residual(body) => {
                let out = body.iter().try_fold(s, |acc, b| b.out_shape(acc))?;
                if out != s {
                    return Err(Error::shape(format!("{:?}", s), format!("{:?}", out)));
                }
                Ok(s)
            }
        }
    }

    fn forward(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        match self {
            Block::Conv(c) => c.forward(tape, p, x),
            Block::Relu => Ok(tape.relu(x)),
            Block::Garb(g) => g.forward(tape, p, x),
            Block::Residual(body) => {
                let mut h = x;
                for b in body {
                    h = b.forward(tape, p, h)?;
                }
                tape.add(h, x)
            }
        }
    }

    fn visit_convs<'a>(&'a self, s: Shape3, f: &mut impl FnMut(&'a ConvLayer, Shape3, Shape3)) -> Result<Shape3> {
        match self {
            Block::Conv(c) => {
                let out = c.out_shape(s)?;
                f(c, s, out);
                Ok(out)
            }
            Block::Relu => Ok(s),
            Block::Garb(g) => {
                let t1 = g.trunk1.out_shape(s)?;
                f(&g.trunk1, s, t1);
                let t2 = g.trunk2.out_shape(t1)?;
                f(&g.trunk2, t1, t2);
                let pooled = [t2[0], 1, 1];
                let sq = g.squeeze.out_shape(pooled)?;
                f(&g.squeeze, pooled, sq);
                let ex = g.excite.out_shape(sq)?;
                f(&g.excite, sq, ex);
                self.out_shape(s)
            }
            Block::Residual(body) => {
                let mut cur = s;
                for b in body {
                    cur = b.visit_convs(cur, f)?;
                }
                self.out_shape(s)
            }
        }
    }
}

/// A feed-forward stack of blocks for one fixed per-sample input shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub blocks: Vec<Block>,
    pub input: Shape3,
}

impl Network {
    /// Input shape followed by the output shape of every non-activation
    /// block.
    pub fn trace(&self) -> Result<Vec<Shape3>> {
        let mut out = vec![self.input];
        let mut cur = self.input;
        for b in &self.blocks {
            cur = b.out_shape(cur)?;
            if !matches!(b, Block::Relu) {
                out.push(cur);
            }
        }
        Ok(out)
    }

    pub fn output(&self) -> Result<Shape3> {
        self.blocks.iter().try_fold(self.input, |s, b| b.out_shape(s))
    }

    pub fn forward(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        let [n, c, h, w] = tape.value(x).dims().0;
        if [c, h, w] != self.input {
            return Err(Error::shape(
                format!("n×{}×{}×{}", self.input[0], self.input[1], self.input[2]),
                Dims::new(n, c, h, w),
            ));
        }
        let mut cur = x;
        for b in &self.blocks {
            cur = b.forward(tape, p, cur)?;
        }
        Ok(cur)
    }

    /// Every convolution with its input and output shape, in execution order.
    pub fn conv_layers(&self) -> Result<Vec<(&ConvLayer, Shape3, Shape3)>> {
        let mut out = Vec::new();
        let mut cur = self.input;
        for b in &self.blocks {
            cur = b.visit_convs(cur, &mut |c, i, o| out.push((c, i, o)))?;
        }
        Ok(out)
    }

    pub fn garb_count(&self) -> usize {
        fn count(b: &Block) -> usize {
            match b {
                Block::Garb(_) => 1,
                Block::Residual(body) => body.iter().map(count).sum(),
                _ => 0,
            }
        }
        self.blocks.iter().map(count).sum()
    }

    /// Weights plus biases of every convolution.
    pub fn param_count(&self) -> Result<usize> {
        Ok(self.conv_layers()?.iter().map(|(c, _, _)| c.param_count()).sum())
    }

    /// Per-sample multiply-accumulates of all convolutions plus one addition
    /// per pooled element.
    pub fn flops(&self) -> Result<usize> {
        let convs: usize = self.conv_layers()?.iter().map(|(c, _, o)| c.macs(*o)).sum();
        let mut pool = 0;
        let mut cur = self.input;
        for b in &self.blocks {
            if let Block::Garb(g) = b {
                pool += g.channels * cur[1] * cur[2];
            }
            cur = b.out_shape(cur)?;
        }
        Ok(convs + pool)
    }
}

/// Allocates convolution parameters with seeded uniform `±1/√fan_in`
/// weights and zero biases.
pub struct NetBuilder<'a> {
    params: &'a mut ParamSet,
    rng: ChaCha8Rng,
    prefix: String,
    counter: usize,
}

impl<'a> NetBuilder<'a> {
    pub fn new(params: &'a mut ParamSet, seed: u64, stream: u64, prefix: &str) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        NetBuilder {
            params,
            rng,
            prefix: prefix.to_string(),
            counter: 0,
        }
    }

    fn layer(
        &mut self,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        transposed: bool,
    ) -> ConvLayer {
        let name = format!("{}.{}", self.prefix, self.counter);
        self.counter += 1;
        let dims = if transposed {
            Dims::new(in_ch, out_ch, kernel, kernel)
        } else {
            Dims::new(out_ch, in_ch, kernel, kernel)
        };
        let bound = 1.0 / ((in_ch * kernel * kernel) as f64).sqrt();
        let data = (0..dims.len()).map(|_| self.rng.random_range(-bound..bound)).collect();
        let weight = self
            .params
            .push(format!("{name}.weight"), Tensor4::from_vec(dims, data).expect("dims"));
        let bias = self
            .params
            .push(format!("{name}.bias"), Tensor4::zeros(Dims::new(1, out_ch, 1, 1)));
        ConvLayer {
            weight,
            bias,
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
            transposed,
        }
    }

    pub fn conv(&mut self, in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize) -> Block {
        Block::Conv(self.layer(in_ch, out_ch, kernel, stride, pad, false))
    }

    pub fn tconv(&mut self, in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize) -> Block {
        Block::Conv(self.layer(in_ch, out_ch, kernel, stride, pad, true))
    }

    pub fn garb(&mut self, channels: usize, reduction: usize) -> Block {
        let reduced = channels / reduction;
        Block::Garb(GarbBlock {
            channels,
            trunk1: self.layer(channels, channels, 3, 1, 1, false),
            trunk2: self.layer(channels, channels, 3, 1, 1, false),
            squeeze: self.layer(channels, reduced, 1, 1, 0, false),
            excite: self.layer(reduced, channels, 1, 1, 0, false),
        })
    }
}
