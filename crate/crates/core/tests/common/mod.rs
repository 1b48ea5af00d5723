//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::TAU;

use kbae_core::codebook::{kb_loss, Codebook};
use kbae_core::tensor::{conv_out_len, tconv_out_len, Tape, Var};
use kbae_core::{Dims, Tensor4};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, dims: Dims) -> Tensor4 {
    let data = (0..dims.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor4::from_vec(dims, data).unwrap()
}

/// Sliding-window cross-correlation written as plain nested loops.
#[allow(clippy::needless_range_loop)]
pub fn naive_conv(x: &Tensor4, w: &Tensor4, b: &[f64], stride: usize, pad: usize) -> Tensor4 {
    let [n, c, h, wd] = x.dims().0;
    let [oc, _, kh, kw] = w.dims().0;
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Tensor4::zeros(Dims::new(n, oc, oh, ow));
    let mut idx = 0;
    for bn in 0..n {
        for o in 0..oc {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = b[o];
                    for i in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xo * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.at(bn, i, iy as usize, ix as usize) * w.at(o, i, ky, kx);
                            }
                        }
                    }
                    out.data_mut()[idx] = acc;
                    idx += 1;
                }
            }
        }
    }
    out
}

/// Transposed convolution as a scatter: every input pixel adds its
/// kernel-weighted copy at `stride·position − pad`.
pub fn naive_tconv(x: &Tensor4, w: &Tensor4, b: &[f64], stride: usize, pad: usize) -> Tensor4 {
    let [n, c, h, wd] = x.dims().0;
    let [_, oc, kh, kw] = w.dims().0;
    let oh = stride * (h - 1) + kh - 2 * pad;
    let ow = stride * (wd - 1) + kw - 2 * pad;
    let mut out = vec![0.0; n * oc * oh * ow];
    for bn in 0..n {
        for o in 0..oc {
            for y in 0..oh {
                for xo in 0..ow {
                    out[((bn * oc + o) * oh + y) * ow + xo] = b[o];
                }
            }
        }
        for i in 0..c {
            for iy in 0..h {
                for ix in 0..wd {
                    let v = x.at(bn, i, iy, ix);
                    for o in 0..oc {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let y = (iy * stride + ky) as isize - pad as isize;
                                let xo = (ix * stride + kx) as isize - pad as isize;
                                if y < 0 || xo < 0 || y >= oh as isize || xo >= ow as isize {
                                    continue;
                                }
                                out[((bn * oc + o) * oh + y as usize) * ow + xo as usize] += v * w.at(i, o, ky, kx);
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor4::from_vec(Dims::new(n, oc, oh, ow), out).unwrap()
}

/// Scalar loss `mse(out, target)` with a target fixed by `seed`.
pub fn probe_loss(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let target = random_tensor(&mut rng(seed), tape.value(out).dims());
    let t = tape.input(target);
    tape.mse(out, t).unwrap()
}

/// Largest norm-wise relative error `‖g − ĝ‖ / max(‖g‖, ‖ĝ‖)` between
/// backward gradients and central differences (step 1e-6) over every input.
///
/// `build` records the loss on the tape from the input variables.
#[allow(clippy::needless_range_loop)]
pub fn gradient_check(inputs: &[Tensor4], build: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.marked_input(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();

    let eval = |values: &[Tensor4]| {
        let mut tape = Tape::inference();
        let vars: Vec<Var> = values.iter().map(|t| tape.input(t.clone())).collect();
        let l = build(&mut tape, &vars);
        tape.value(l).item().unwrap()
    };

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut values = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads
            .input(*v)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        let mut diff2 = 0.0;
        let (mut a2, mut n2) = (0.0, 0.0);
        for j in 0..inputs[i].len() {
            let orig = values[i].data()[j];
            values[i].data_mut()[j] = orig + h;
            let up = eval(&values);
            values[i].data_mut()[j] = orig - h;
            let down = eval(&values);
            values[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            diff2 += (numeric - analytic[j]).powi(2);
            a2 += analytic[j].powi(2);
            n2 += numeric.powi(2);
        }
        let scale = a2.sqrt().max(n2.sqrt());
        if scale > 0.0 {
            worst = worst.max(diff2.sqrt() / scale);
        }
    }
    worst
}

/// Layer kinds covered by the finite-difference sweep.
pub const GRADIENT_KINDS: [&str; 8] = [
    "conv2d",
    "tconv2d",
    "relu",
    "sigmoid",
    "global-avg-pool",
    "channel-scale",
    "residual-add",
    "garb",
];

/// Worst relative gradient error of `kind` on the random configuration
/// drawn from `seed`.
pub fn layer_gradient_error(kind: &str, seed: u64) -> f64 {
    use kbae_core::models::NetBuilder;
    use kbae_core::tensor::{conv_out_len, tconv_out_len, ParamSet};

    let mut r = rng(seed);
    let n = r.random_range(1..=2);
    let c = r.random_range(1..=3);
    let h = r.random_range(2..=6);
    let w = r.random_range(2..=6);
    let probe = seed ^ 0x5eed;
    let x = random_tensor(&mut r, Dims::new(n, c, h, w));

    match kind {
        "conv2d" | "tconv2d" => {
            let transposed = kind == "tconv2d";
            let (oc, k, s, p) = loop {
                let oc = r.random_range(1..=3);
                let k = r.random_range(1..=3);
                let s = r.random_range(1..=2);
                let p = r.random_range(0..k);
                let ok = if transposed {
                    tconv_out_len(h, k, s, p).is_ok() && tconv_out_len(w, k, s, p).is_ok()
                } else {
                    conv_out_len(h, k, s, p).is_ok() && conv_out_len(w, k, s, p).is_ok()
                };
                if ok {
                    break (oc, k, s, p);
                }
            };
            let wdims = if transposed {
                Dims::new(c, oc, k, k)
            } else {
                Dims::new(oc, c, k, k)
            };
            let weight = random_tensor(&mut r, wdims);
            let bias = random_tensor(&mut r, Dims::new(1, oc, 1, 1));
            gradient_check(&[x, weight, bias], |t, v| {
                let y = if transposed {
                    t.tconv2d(v[0], v[1], v[2], s, p).unwrap()
                } else {
                    t.conv2d(v[0], v[1], v[2], s, p).unwrap()
                };
                probe_loss(t, y, probe)
            })
        }
        "relu" => {
            // Keep every input away from the kink.
            let mut x = x;
            for v in x.data_mut() {
                if v.abs() < 0.05 {
                    *v += 0.1_f64.copysign(*v);
                }
            }
            gradient_check(&[x], |t, v| {
                let y = t.relu(v[0]);
                probe_loss(t, y, probe)
            })
        }
        "sigmoid" => gradient_check(&[x], |t, v| {
            let y = t.sigmoid(v[0]);
            probe_loss(t, y, probe)
        }),
        "global-avg-pool" => gradient_check(&[x], |t, v| {
            let y = t.global_avg_pool(v[0]);
            probe_loss(t, y, probe)
        }),
        "channel-scale" => {
            let s = random_tensor(&mut r, Dims::new(n, c, 1, 1));
            gradient_check(&[x, s], |t, v| {
                let y = t.channel_scale(v[0], v[1]).unwrap();
                probe_loss(t, y, probe)
            })
        }
        "residual-add" => {
            let b = random_tensor(&mut r, x.dims());
            gradient_check(&[x, b], |t, v| {
                let y = t.add(v[0], v[1]).unwrap();
                probe_loss(t, y, probe)
            })
        }
        "garb" => {
            let channels = [2, 4][r.random_range(0..2)];
            let x = random_tensor(&mut r, Dims::new(n, channels, h, w));
            let mut params = ParamSet::new();
            let block = match NetBuilder::new(&mut params, seed, 0, "g").garb(channels, 2) {
                kbae_core::models::Block::Garb(g) => g,
                _ => unreachable!(),
            };
            let mut inputs = vec![x];
            // Random biases too, so the attention path is fully exercised.
            for (_, t) in params.iter() {
                inputs.push(random_tensor(&mut r, t.dims()));
            }
            gradient_check(&inputs, |t, v| {
                let y = block.forward(t, &v[1..], v[0]).unwrap();
                probe_loss(t, y, probe)
            })
        }
        other => panic!("unknown layer kind {other}"),
    }
}

pub struct ConvCase {
    pub x: Tensor4,
    pub w: Tensor4,
    pub b: Vec<f64>,
    pub stride: usize,
    pub pad: usize,
}

/// Random shapes up to 4×4×16×16 with an integral output size.
pub fn random_conv_case(r: &mut ChaCha8Rng, transposed: bool) -> ConvCase {
    loop {
        let (n, c, oc) = (r.random_range(1..=4), r.random_range(1..=4), r.random_range(1..=4));
        let (h, w) = (r.random_range(1..=16), r.random_range(1..=16));
        let k = r.random_range(1..=5);
        let stride = r.random_range(1..=3);
        let pad = r.random_range(0..k);
        let ok = if transposed {
            tconv_out_len(h, k, stride, pad).is_ok() && tconv_out_len(w, k, stride, pad).is_ok()
        } else {
            conv_out_len(h, k, stride, pad).is_ok() && conv_out_len(w, k, stride, pad).is_ok()
        };
        if !ok {
            continue;
        }
        let wdims = if transposed {
            Dims::new(c, oc, k, k)
        } else {
            Dims::new(oc, c, k, k)
        };
        return ConvCase {
            x: random_tensor(r, Dims::new(n, c, h, w)),
            w: random_tensor(r, wdims),
            b: (0..oc).map(|_| r.random_range(-1.0..1.0)).collect(),
            stride,
            pad,
        };
    }
}

pub fn max_diff(a: &Tensor4, b: &Tensor4) -> f64 {
    assert_eq!(a.dims(), b.dims());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Plain scan: first index whose squared distance is strictly smallest.
pub fn linear_scan(z: &[f64], cb: &Codebook) -> usize {
    let mut best = (f64::INFINITY, 0);
    for i in 0..cb.size() {
        let d: f64 = z.iter().zip(cb.row(i)).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Value and gradients of the kb loss for a codebook and feature vectors.
pub fn kb_grads(table: &Tensor4, z: &Tensor4, rows: &[usize], beta: f64) -> (f64, Tensor4, Tensor4) {
    let mut tape = Tape::new();
    let t = tape.marked_input(table.clone());
    let zv = tape.marked_input(z.clone());
    let sel = tape.gather(t, rows.to_vec(), z.dims()).unwrap();
    let l = kb_loss(&mut tape, zv, sel, beta).unwrap();
    let value = tape.value(l).item().unwrap();
    let g = tape.backward(l).unwrap();
    (value, g.input(t).unwrap().clone(), g.input(zv).unwrap().clone())
}

pub fn mse_rows(table: &Tensor4, z: &Tensor4, rows: &[usize]) -> f64 {
    let k = z.width();
    let mut s = 0.0;
    for (j, &r) in rows.iter().enumerate() {
        for d in 0..k {
            let diff = z.data()[j * k + d] - table.data()[r * k + d];
            s += diff * diff;
        }
    }
    s / z.len() as f64
}

/// Every assignment of 16 phase levels to N ≤ 4 elements, as magnitudes.
pub fn best_grid_gain(h_sr: &[Complex64], h_rd: &[Complex64]) -> f64 {
    let n = h_sr.len();
    let mut best: f64 = 0.0;
    for code in 0..16usize.pow(n as u32) {
        let mut c = code;
        let mut g = Complex64::new(0.0, 0.0);
        for i in 0..n {
            let level = (c % 16) as f64;
            c /= 16;
            g += h_rd[i] * Complex64::from_polar(1.0, TAU * level / 16.0) * h_sr[i];
        }
        best = best.max(g.norm());
    }
    best
}

/// The codebook gradient is the perturbation slope of term one alone and the
/// feature gradient that of term two alone.
/// Panics on a violation.
pub fn check_stop_gradient_routing(seed: u64) {
    let mut r = rng(seed);
    let beta = 0.25;
    let (zn, k) = (6, 4);
    let table = random_tensor(&mut r, Dims::new(1, 1, 5, k));
    let z = random_tensor(&mut r, Dims::new(1, zn, 1, k));
    let rows: Vec<usize> = (0..zn).map(|_| r.random_range(0..5)).collect();
    let (value, g_table, g_z) = kb_grads(&table, &z, &rows, beta);
    assert!((value - (1.0 + beta) * mse_rows(&table, &z, &rows)).abs() < 1e-14);

    let h = 1e-6;
    let term_one = |t: &Tensor4, zz: &Tensor4| mse_rows(t, zz, &rows);
    let term_two = |t: &Tensor4, zz: &Tensor4| beta * mse_rows(t, zz, &rows);
    for i in 0..table.len() {
        let (mut up, mut down) = (table.clone(), table.clone());
        up.data_mut()[i] += h;
        down.data_mut()[i] -= h;
        let slope = (term_one(&up, &z) - term_one(&down, &z)) / (2.0 * h);
        assert!((g_table.data()[i] - slope).abs() < 1e-8);
    }
    for i in 0..z.len() {
        let (mut up, mut down) = (z.clone(), z.clone());
        up.data_mut()[i] += h;
        down.data_mut()[i] -= h;
        let slope = (term_two(&table, &up) - term_two(&table, &down)) / (2.0 * h);
        assert!((g_z.data()[i] - slope).abs() < 1e-8);
        // Term one does depend on z numerically; the stop-gradient hides it.
        let hidden = (term_one(&table, &up) - term_one(&table, &down)) / (2.0 * h);
        assert!((g_z.data()[i] - hidden).abs() > 1e-6 || hidden.abs() < 1e-9);
    }
}
