//! Recording tape for reverse-mode gradients over [`Tensor4`] values.
//!
//! Every layer application pushes one node holding its output and the ids of
//! its operands. [`Tape::backward`] consumes the tape and walks the nodes once,
//! newest first, accumulating cotangents into the operands.

use std::collections::BTreeMap;

use super::kernels;
use super::{
    channel_scale, conv2d_raw, conv_geom, elementwise_add, global_avg_pool, sigmoid, tconv2d_raw, tconv_geom, Dims,
    Tensor4,
};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Named trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor4>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor4) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor4 {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor4 {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor4)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor4::len).sum()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Leaf {
        param: Option<ParamId>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    TConv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    Relu(Var),
    Sigmoid(Var),
    GlobalAvgPool(Var),
    ChannelScale {
        x: Var,
        scale: Var,
    },
    Add(Var, Var),
    Reshape(Var),
    Scale(Var, f64),
    /// Identity forward, no gradient.
    StopGradient(Var),
    /// Forward value of `e`, gradient copied onto `z`.
    StraightThrough {
        z: Var,
        e: Var,
    },
    /// Rows of a `1×1×rows×width` table.
    Gather {
        table: Var,
        rows: Vec<usize>,
    },
    /// Mean squared difference, a scalar.
    Mse(Var, Var),
}

struct Node {
    value: Tensor4,
    op: Op,
    requires_grad: bool,
}

pub struct Tape {
    nodes: Vec<Node>,
    armed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// A tape that records for a later [`Tape::backward`].
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            armed: true,
        }
    }

    /// A forward-only tape; `backward` on it is a state error.
    pub fn inference() -> Self {
        Tape {
            nodes: Vec::new(),
            armed: false,
        }
    }

    pub fn is_armed(&self) -> bool {
        self.armed
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor4 {
        &self.nodes[v.0].value
    }

    pub fn op(&self, v: Var) -> &Op {
        &self.nodes[v.0].op
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor4, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad: requires_grad && self.armed,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: Tensor4) -> Var {
        self.push(value, Op::Leaf { param: None }, false)
    }

    /// Input whose gradient is reported by `backward`.
    pub fn marked_input(&mut self, value: Tensor4) -> Var {
        self.push(value, Op::Leaf { param: None }, true)
    }

    pub fn param(&mut self, id: ParamId, value: Tensor4) -> Var {
        self.push(value, Op::Leaf { param: Some(id) }, true)
    }

    /// Pushes every tensor of `set`; the result is indexed by `ParamId.0`.
    pub fn params(&mut self, set: &ParamSet) -> Vec<Var> {
        set.ids().map(|id| self.param(id, set.get(id).clone())).collect()
    }

    fn bias_slice(&self, b: Var, channels: usize) -> Result<&[f64]> {
        let bias = self.value(b);
        bias.ensure_dims(Dims::new(1, channels, 1, 1))?;
        Ok(bias.data())
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let wv = self.value(w);
        let out = conv2d_raw(self.value(x), wv, self.bias_slice(b, wv.batch())?, stride, pad)?;
        let rg = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(out, Op::Conv2d { x, w, b, stride, pad }, rg))
    }

    pub fn tconv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let wv = self.value(w);
        let out = tconv2d_raw(self.value(x), wv, self.bias_slice(b, wv.channels())?, stride, pad)?;
        let rg = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(out, Op::TConv2d { x, w, b, stride, pad }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = map(self.value(x), |v| v.max(0.0));
        let rg = self.needs(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = map(self.value(x), sigmoid);
        let rg = self.needs(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let out = global_avg_pool(self.value(x));
        let rg = self.needs(x);
        self.push(out, Op::GlobalAvgPool(x), rg)
    }

    pub fn channel_scale(&mut self, x: Var, scale: Var) -> Result<Var> {
        let out = channel_scale(self.value(x), self.value(scale))?;
        let rg = self.needs(x) || self.needs(scale);
        Ok(self.push(out, Op::ChannelScale { x, scale }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = elementwise_add(self.value(a), self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn reshape(&mut self, x: Var, dims: Dims) -> Result<Var> {
        let out = self.value(x).clone().reshape(dims)?;
        let rg = self.needs(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = map(self.value(x), |v| v * factor);
        let rg = self.needs(x);
        self.push(out, Op::Scale(x, factor), rg)
    }

    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let out = self.value(x).clone();
        self.push(out, Op::StopGradient(x), false)
    }

    pub fn straight_through(&mut self, z: Var, e: Var) -> Result<Var> {
        let selected = self.value(e);
        selected.ensure_dims(self.value(z).dims())?;
        let out = selected.clone();
        let rg = self.needs(z);
        Ok(self.push(out, Op::StraightThrough { z, e }, rg))
    }

    /// Selects `rows` of a `1×1×R×W` table into a tensor of shape `dims`
    /// (whose element count must be `rows.len()·W`).
    pub fn gather(&mut self, table: Var, rows: Vec<usize>, dims: Dims) -> Result<Var> {
        let t = self.value(table);
        let [tn, tc, nrows, width] = t.dims().0;
        if tn != 1 || tc != 1 {
            return Err(Error::shape(format!("1×1×{nrows}×{width}"), t.dims()));
        }
        if dims.len() != rows.len() * width {
            return Err(Error::shape(format!("{} rows of width {width}", rows.len()), dims));
        }
        let mut data = Vec::with_capacity(dims.len());
        for &r in &rows {
            if r >= nrows {
                return Err(Error::Range {
                    value: r as u64,
                    bound: nrows as u64,
                });
            }
            data.extend_from_slice(&t.data()[r * width..(r + 1) * width]);
        }
        let out = Tensor4::from_vec(dims, data)?;
        let rg = self.needs(table);
        Ok(self.push(out, Op::Gather { table, rows }, rg))
    }

    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let m = super::mse(self.value(a), self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor4::scalar(m), Op::Mse(a, b), rg))
    }

    /// Consumes the tape and returns cotangents of `loss` for every parameter
    /// and every marked input that it depends on.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if !self.armed {
            return Err(Error::State("backward on a forward-only tape".into()));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::State("loss is not recorded on this tape".into()));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::State(format!(
                "loss must be a scalar, got {}",
                self.nodes[loss.0].value.dims()
            )));
        }

        let mut nodes = self.nodes;
        nodes.truncate(loss.0 + 1);
        let mut grads: Vec<Option<Tensor4>> = vec![None; nodes.len()];
        grads[loss.0] = Some(Tensor4::scalar(1.0));
        let mut leaves = Vec::new();

        while let Some(node) = nodes.pop() {
            let idx = nodes.len();
            if let Op::Leaf { param } = node.op {
                leaves.push((idx, param));
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if !node.requires_grad {
                continue;
            }
            propagate(&nodes, &mut grads, &node, g)?;
        }

        let mut params = BTreeMap::new();
        let mut inputs = BTreeMap::new();
        for (idx, param) in leaves {
            if let Some(g) = grads[idx].take() {
                match param {
                    Some(id) => {
                        params.insert(id, g);
                    }
                    None => {
                        inputs.insert(idx, g);
                    }
                }
            }
        }
        Ok(Gradients { params, inputs })
    }
}

fn map(x: &Tensor4, f: impl Fn(f64) -> f64) -> Tensor4 {
    Tensor4::from_vec(x.dims(), x.data().iter().map(|&v| f(v)).collect()).expect("same length")
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor4>], v: Var, g: Tensor4) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn propagate(nodes: &[Node], grads: &mut [Option<Tensor4>], node: &Node, g: Tensor4) -> Result<()> {
    let val = |v: Var| &nodes[v.0].value;
    let needs = |v: Var| nodes[v.0].requires_grad;
    match node.op {
        Op::Leaf { .. } | Op::StopGradient(_) => {}
        Op::Conv2d { x, w, b, stride, pad } => {
            let geom = conv_geom(val(x).dims(), val(w).dims(), stride, pad)?;
            if needs(x) {
                let mut gx = Tensor4::zeros(val(x).dims());
                kernels::conv_backward_input(&geom, g.data(), val(w).data(), gx.data_mut());
                accumulate(nodes, grads, x, gx);
            }
            if needs(w) {
                let mut gw = Tensor4::zeros(val(w).dims());
                kernels::conv_backward_weight(&geom, g.data(), val(x).data(), gw.data_mut());
                accumulate(nodes, grads, w, gw);
            }
            if needs(b) {
                accumulate(nodes, grads, b, channel_sums(&g));
            }
        }
        Op::TConv2d { x, w, b, stride, pad } => {
            let geom = tconv_geom(val(x).dims(), val(w).dims(), stride, pad)?;
            if needs(x) {
                let mut gx = Tensor4::zeros(val(x).dims());
                kernels::conv_forward(&geom, g.data(), val(w).data(), gx.data_mut());
                accumulate(nodes, grads, x, gx);
            }
            if needs(w) {
                let mut gw = Tensor4::zeros(val(w).dims());
                kernels::conv_backward_weight(&geom, val(x).data(), g.data(), gw.data_mut());
                accumulate(nodes, grads, w, gw);
            }
            if needs(b) {
                accumulate(nodes, grads, b, channel_sums(&g));
            }
        }
        Op::Relu(x) => {
            let mut gx = g;
            for (d, &v) in gx.data_mut().iter_mut().zip(val(x).data()) {
                if v <= 0.0 {
                    *d = 0.0;
                }
            }
            accumulate(nodes, grads, x, gx);
        }
        Op::Sigmoid(x) => {
            let mut gx = g;
            for (d, &y) in gx.data_mut().iter_mut().zip(node.value.data()) {
                *d *= y * (1.0 - y);
            }
            accumulate(nodes, grads, x, gx);
        }
        Op::GlobalAvgPool(x) => {
            let dims = val(x).dims();
            let plane = dims.0[2] * dims.0[3];
            let mut data = Vec::with_capacity(dims.len());
            for &gv in g.data() {
                data.extend(std::iter::repeat_n(gv / plane as f64, plane));
            }
            accumulate(nodes, grads, x, Tensor4::from_vec(dims, data)?);
        }
        Op::ChannelScale { x, scale } => {
            let xv = val(x);
            let plane = (xv.height() * xv.width()).max(1);
            if needs(scale) {
                let gs: Vec<f64> = g
                    .data()
                    .chunks_exact(plane)
                    .zip(xv.data().chunks_exact(plane))
                    .map(|(gp, xp)| gp.iter().zip(xp).map(|(a, b)| a * b).sum())
                    .collect();
                accumulate(nodes, grads, scale, Tensor4::from_vec(val(scale).dims(), gs)?);
            }
            if needs(x) {
                let mut gx = g;
                for (p, &s) in gx.data_mut().chunks_exact_mut(plane).zip(val(scale).data()) {
                    p.iter_mut().for_each(|v| *v *= s);
                }
                accumulate(nodes, grads, x, gx);
            }
        }
        Op::Add(a, b) => {
            if needs(a) && needs(b) {
                accumulate(nodes, grads, a, g.clone());
            } else if needs(a) {
                accumulate(nodes, grads, a, g);
                return Ok(());
            }
            accumulate(nodes, grads, b, g);
        }
        Op::Reshape(x) => {
            let dims = val(x).dims();
            accumulate(nodes, grads, x, g.reshape(dims)?);
        }
        Op::Scale(x, f) => {
            let mut gx = g;
            gx.data_mut().iter_mut().for_each(|v| *v *= f);
            accumulate(nodes, grads, x, gx);
        }
        Op::StraightThrough { z, .. } => accumulate(nodes, grads, z, g),
        Op::Gather { table, ref rows } => {
            let dims = val(table).dims();
            let width = dims.0[3];
            let mut gt = Tensor4::zeros(dims);
            for (r, chunk) in rows.iter().zip(g.data().chunks_exact(width.max(1))) {
                for (acc, v) in gt.data_mut()[r * width..(r + 1) * width].iter_mut().zip(chunk) {
                    *acc += v;
                }
            }
            accumulate(nodes, grads, table, gt);
        }
        Op::Mse(a, b) => {
            let (av, bv) = (val(a), val(b));
            let k = 2.0 * g.data()[0] / av.len().max(1) as f64;
            let diff: Vec<f64> = av.data().iter().zip(bv.data()).map(|(x, y)| k * (x - y)).collect();
            let ga = Tensor4::from_vec(av.dims(), diff)?;
            if needs(b) {
                let gb = Tensor4::from_vec(bv.dims(), ga.data().iter().map(|v| -v).collect())?;
                accumulate(nodes, grads, b, gb);
            }
            accumulate(nodes, grads, a, ga);
        }
    }
    Ok(())
}

fn channel_sums(g: &Tensor4) -> Tensor4 {
    let [n, c, h, w] = g.dims().0;
    let plane = h * w;
    let mut out = vec![0.0; c];
    for b in 0..n {
        for (ch, acc) in out.iter_mut().enumerate() {
            *acc += g.data()[(b * c + ch) * plane..][..plane].iter().sum::<f64>();
        }
    }
    Tensor4::from_vec(Dims::new(1, c, 1, 1), out).expect("c values")
}

/// Result of [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    params: BTreeMap<ParamId, Tensor4>,
    inputs: BTreeMap<usize, Tensor4>,
}

impl Gradients {
    /// Gradient of a parameter, or `None` when the loss does not depend on it.
    pub fn param(&self, id: ParamId) -> Option<&Tensor4> {
        self.params.get(&id)
    }

    /// Gradient of a marked input.
    pub fn input(&self, v: Var) -> Option<&Tensor4> {
        self.inputs.get(&v.0)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor4)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }
}
