//! Dense 4-D tensors, the layer kinds used by the feedback networks, a
//! recording tape for reverse-mode gradients, and the optimizer/schedule.

mod kernels;
pub mod optim;
pub mod tape;

use std::fmt;

use crate::error::{Error, Result};
use kernels::ConvGeom;

pub use optim::{adam_step, cosine_lr, Adam, AdamConfig, AdamState, CosineSchedule};
pub use tape::{Gradients, Op, ParamId, ParamSet, Tape, Var};

/// Tensor dimensions in `n, c, h, w` order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims(pub [usize; 4]);

impl Dims {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Dims([n, c, h, w])
    }

    pub fn len(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [n, c, h, w] = self.0;
        write!(f, "{n}×{c}×{h}×{w}")
    }
}

/// Dense row-major `n → c → h → w` array of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    dims: Dims,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(dims: Dims) -> Self {
        Tensor4 {
            dims,
            data: vec![0.0; dims.len()],
        }
    }

    pub fn full(dims: Dims, value: f64) -> Self {
        Tensor4 {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor4 {
            dims: Dims::new(1, 1, 1, 1),
            data: vec![value],
        }
    }

    pub fn from_vec(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::shape(
                format!("{dims} ({} values)", dims.len()),
                format!("{} values", data.len()),
            ));
        }
        Ok(Tensor4 { dims, data })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims.0[0]
    }

    pub fn channels(&self) -> usize {
        self.dims.0[1]
    }

    pub fn height(&self) -> usize {
        self.dims.0[2]
    }

    pub fn width(&self) -> usize {
        self.dims.0[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        let [_, cs, hs, ws] = self.dims.0;
        self.data[((n * cs + c) * hs + h) * ws + w]
    }

    /// Value of a 1-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(mut self, dims: Dims) -> Result<Self> {
        if dims.len() != self.dims.len() {
            return Err(Error::shape(self.dims, dims));
        }
        self.dims = dims;
        Ok(self)
    }

    pub(crate) fn ensure_dims(&self, dims: Dims) -> Result<()> {
        if self.dims != dims {
            return Err(Error::shape(dims, self.dims));
        }
        Ok(())
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor4) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv2d,
    TConv2d,
    Relu,
    Sigmoid,
    GlobalAvgPool,
    ChannelScale,
    ResidualAdd,
    Flatten,
    Reshape,
}

impl LayerKind {
    pub fn has_weights(self) -> bool {
        matches!(self, LayerKind::Conv2d | LayerKind::TConv2d)
    }
}

/// One layer application: kind plus (for convolutions) its kernel and bias.
///
/// Conv kernels are `out × in × kh × kw`. Transposed-conv kernels use the
/// `in × out × kh × kw` layout, which makes `tconv2d(x; W)` the input
/// gradient of `conv2d(·; W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub kind: LayerKind,
    pub weight: Option<Tensor4>,
    pub bias: Option<Vec<f64>>,
    pub stride: usize,
    pub padding: usize,
}

impl LayerParams {
    pub fn conv2d(weight: Tensor4, bias: Vec<f64>, stride: usize, padding: usize) -> Result<Self> {
        Self::with_weights(LayerKind::Conv2d, weight, bias, stride, padding)
    }

    pub fn tconv2d(weight: Tensor4, bias: Vec<f64>, stride: usize, padding: usize) -> Result<Self> {
        Self::with_weights(LayerKind::TConv2d, weight, bias, stride, padding)
    }

    pub fn parameterless(kind: LayerKind) -> Result<Self> {
        if kind.has_weights() {
            return Err(Error::config(format!("{kind:?} requires weights")));
        }
        Ok(LayerParams {
            kind,
            weight: None,
            bias: None,
            stride: 1,
            padding: 0,
        })
    }

    fn with_weights(kind: LayerKind, weight: Tensor4, bias: Vec<f64>, stride: usize, padding: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::config("stride must be at least 1"));
        }
        let out_ch = match kind {
            LayerKind::TConv2d => weight.channels(),
            _ => weight.batch(),
        };
        if bias.len() != out_ch {
            return Err(Error::shape(
                format!("{out_ch} bias values"),
                format!("{} bias values", bias.len()),
            ));
        }
        Ok(LayerParams {
            kind,
            weight: Some(weight),
            bias: Some(bias),
            stride,
            padding,
        })
    }

    fn expect(&self, kind: LayerKind) -> Result<(&Tensor4, &[f64])> {
        if self.kind != kind {
            return Err(Error::config(format!("expected a {kind:?} layer, got {:?}", self.kind)));
        }
        match (&self.weight, &self.bias) {
            (Some(w), Some(b)) => Ok((w, b)),
            _ => Err(Error::config(format!("{kind:?} layer without weights"))),
        }
    }
}

/// Output side length of a convolution, or a configuration error when the
/// window does not tile the padded input exactly.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || padded < kernel || !(padded - kernel).is_multiple_of(stride) {
        return Err(Error::config(format!(
            "convolution of length {input} with kernel {kernel}, stride {stride}, padding {pad} has no integral output size"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Output side length of a transposed convolution.
pub fn tconv_out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let full = stride * input.saturating_sub(1) + kernel;
    if input == 0 || stride == 0 || full <= 2 * pad {
        return Err(Error::config(format!(
            "transposed convolution of length {input} with kernel {kernel}, stride {stride}, padding {pad} has no positive output size"
        )));
    }
    Ok(full - 2 * pad)
}

pub(crate) fn conv_geom(input: Dims, weight: Dims, stride: usize, pad: usize) -> Result<ConvGeom> {
    let [n, c, h, w] = input.0;
    let [oc, ic, kh, kw] = weight.0;
    if c != ic {
        return Err(Error::shape(
            format!("input with {ic} channels for kernel {weight}"),
            input,
        ));
    }
    Ok(ConvGeom {
        batch: n,
        in_ch: c,
        in_h: h,
        in_w: w,
        out_ch: oc,
        out_h: conv_out_len(h, kh, stride, pad)?,
        out_w: conv_out_len(w, kw, stride, pad)?,
        kh,
        kw,
        stride,
        pad,
    })
}

/// Geometry of the forward convolution whose input-gradient is the given
/// transposed convolution: its "input" is the tconv output.
pub(crate) fn tconv_geom(input: Dims, weight: Dims, stride: usize, pad: usize) -> Result<ConvGeom> {
    let [n, c, h, w] = input.0;
    let [ic, oc, kh, kw] = weight.0;
    if c != ic {
        return Err(Error::shape(
            format!("input with {ic} channels for kernel {weight}"),
            input,
        ));
    }
    Ok(ConvGeom {
        batch: n,
        in_ch: oc,
        in_h: tconv_out_len(h, kh, stride, pad)?,
        in_w: tconv_out_len(w, kw, stride, pad)?,
        out_ch: ic,
        out_h: h,
        out_w: w,
        kh,
        kw,
        stride,
        pad,
    })
}

fn broadcast_bias(dims: Dims, bias: &[f64]) -> Tensor4 {
    let [n, c, h, w] = dims.0;
    let plane = h * w;
    let mut data = Vec::with_capacity(dims.len());
    for _ in 0..n {
        for &b in &bias[..c] {
            data.extend(std::iter::repeat_n(b, plane));
        }
    }
    Tensor4 { dims, data }
}

pub(crate) fn conv2d_raw(x: &Tensor4, w: &Tensor4, bias: &[f64], stride: usize, pad: usize) -> Result<Tensor4> {
    let g = conv_geom(x.dims(), w.dims(), stride, pad)?;
    let mut out = broadcast_bias(Dims::new(g.batch, g.out_ch, g.out_h, g.out_w), bias);
    kernels::conv_forward(&g, x.data(), w.data(), &mut out.data);
    Ok(out)
}

pub(crate) fn tconv2d_raw(x: &Tensor4, w: &Tensor4, bias: &[f64], stride: usize, pad: usize) -> Result<Tensor4> {
    let g = tconv_geom(x.dims(), w.dims(), stride, pad)?;
    let mut out = broadcast_bias(Dims::new(g.batch, g.in_ch, g.in_h, g.in_w), bias);
    kernels::conv_backward_input(&g, x.data(), w.data(), &mut out.data);
    Ok(out)
}

/// Cross-correlation with bias.
pub fn conv2d(input: &Tensor4, params: &LayerParams) -> Result<Tensor4> {
    let (w, b) = params.expect(LayerKind::Conv2d)?;
    conv2d_raw(input, w, b, params.stride, params.padding)
}

/// Transposed convolution with bias; output side `stride·(h−1) + k − 2·pad`.
pub fn tconv2d(input: &Tensor4, params: &LayerParams) -> Result<Tensor4> {
    let (w, b) = params.expect(LayerKind::TConv2d)?;
    tconv2d_raw(input, w, b, params.stride, params.padding)
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub(crate) fn global_avg_pool(x: &Tensor4) -> Tensor4 {
    let [n, c, h, w] = x.dims().0;
    let plane = h * w;
    let data = x
        .data()
        .chunks_exact(plane.max(1))
        .take(n * c)
        .map(|p| p.iter().sum::<f64>() / plane as f64)
        .collect();
    Tensor4 {
        dims: Dims::new(n, c, 1, 1),
        data,
    }
}

pub(crate) fn channel_scale(x: &Tensor4, scale: &Tensor4) -> Result<Tensor4> {
    let [n, c, h, w] = x.dims().0;
    scale.ensure_dims(Dims::new(n, c, 1, 1))?;
    let plane = h * w;
    let mut out = x.clone();
    for (p, &s) in out.data.chunks_exact_mut(plane.max(1)).zip(scale.data()) {
        p.iter_mut().for_each(|v| *v *= s);
    }
    Ok(out)
}

pub(crate) fn elementwise_add(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    b.ensure_dims(a.dims())?;
    let mut out = a.clone();
    out.add_assign(b);
    Ok(out)
}

/// Parameterless layers. `aux` is the per-channel scale (n×c×1×1) for
/// channel-scale and the second summand for residual-add.
pub fn unary_layer(input: &Tensor4, kind: LayerKind, aux: Option<&Tensor4>) -> Result<Tensor4> {
    let need_aux = || Error::config(format!("{kind:?} requires an auxiliary tensor"));
    match kind {
        LayerKind::Relu => Ok(map(input, |v| v.max(0.0))),
        LayerKind::Sigmoid => Ok(map(input, sigmoid)),
        LayerKind::GlobalAvgPool => Ok(global_avg_pool(input)),
        LayerKind::ChannelScale => channel_scale(input, aux.ok_or_else(need_aux)?),
        LayerKind::ResidualAdd => elementwise_add(input, aux.ok_or_else(need_aux)?),
        other => Err(Error::config(format!("{other:?} is not a unary layer"))),
    }
}

fn map(x: &Tensor4, f: impl Fn(f64) -> f64) -> Tensor4 {
    Tensor4 {
        dims: x.dims,
        data: x.data.iter().map(|&v| f(v)).collect(),
    }
}

/// Mean of squared differences over every element.
pub fn mse(a: &Tensor4, b: &Tensor4) -> Result<f64> {
    b.ensure_dims(a.dims())?;
    if a.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}
