//! Direct (loop-nest) convolution kernels over row-major n×c×h×w buffers.
//!
//! All three kernels share one geometry and one loop order so that the
//! transposed convolution can be expressed exactly as the input-gradient of
//! the forward convolution.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_ch: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Output positions `o` along one axis for which `o*stride + k - pad` lands
/// inside `[0, in_len)`.
#[inline]
fn valid_range(k: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if in_len + pad > k {
        ((in_len - 1 + pad - k) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

impl ConvGeom {
    fn in_plane(&self) -> usize {
        self.in_h * self.in_w
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Calls `f(oy, iy, ox_lo, ox_hi, ix_offset)` for every in-range output
    /// row of kernel tap (ky, kx); the input column is `ox*stride + kx - pad`.
    #[inline]
    fn for_each_row(&self, ky: usize, kx: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
        let (oy0, oy1) = valid_range(ky, self.pad, self.stride, self.in_h, self.out_h);
        let (ox0, ox1) = valid_range(kx, self.pad, self.stride, self.in_w, self.out_w);
        if ox0 >= ox1 {
            return;
        }
        for oy in oy0..oy1 {
            let iy = oy * self.stride + ky - self.pad;
            f(oy, iy, ox0, ox1);
        }
    }
}

/// `out += conv(x, w)`; `out` should already hold the bias.
pub(crate) fn conv_forward(g: &ConvGeom, x: &[f64], w: &[f64], out: &mut [f64]) {
    let (ip, op) = (g.in_plane(), g.out_plane());
    let s = g.stride;
    for b in 0..g.batch {
        for o in 0..g.out_ch {
            let out_plane = &mut out[(b * g.out_ch + o) * op..][..op];
            for i in 0..g.in_ch {
                let in_plane = &x[(b * g.in_ch + i) * ip..][..ip];
                let taps = &w[(o * g.in_ch + i) * g.kh * g.kw..][..g.kh * g.kw];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let wv = taps[ky * g.kw + kx];
                        g.for_each_row(ky, kx, |oy, iy, ox0, ox1| {
                            let orow = &mut out_plane[oy * g.out_w..][..g.out_w];
                            let irow = &in_plane[iy * g.in_w..][..g.in_w];
                            for ox in ox0..ox1 {
                                orow[ox] += wv * irow[ox * s + kx - g.pad];
                            }
                        });
                    }
                }
            }
        }
    }
}

/// `gx += conv_forward^T(gy)` for a fixed kernel.
pub(crate) fn conv_backward_input(g: &ConvGeom, gy: &[f64], w: &[f64], gx: &mut [f64]) {
    let (ip, op) = (g.in_plane(), g.out_plane());
    let s = g.stride;
    for b in 0..g.batch {
        for i in 0..g.in_ch {
            let gx_plane = &mut gx[(b * g.in_ch + i) * ip..][..ip];
            for o in 0..g.out_ch {
                let gy_plane = &gy[(b * g.out_ch + o) * op..][..op];
                let taps = &w[(o * g.in_ch + i) * g.kh * g.kw..][..g.kh * g.kw];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let wv = taps[ky * g.kw + kx];
                        g.for_each_row(ky, kx, |oy, iy, ox0, ox1| {
                            let grow = &gy_plane[oy * g.out_w..][..g.out_w];
                            let xrow = &mut gx_plane[iy * g.in_w..][..g.in_w];
                            for ox in ox0..ox1 {
                                xrow[ox * s + kx - g.pad] += wv * grow[ox];
                            }
                        });
                    }
                }
            }
        }
    }
}

/// `gw += d conv / d w` contracted with `gy`, summed over the batch in order.
pub(crate) fn conv_backward_weight(g: &ConvGeom, gy: &[f64], x: &[f64], gw: &mut [f64]) {
    let (ip, op) = (g.in_plane(), g.out_plane());
    let s = g.stride;
    for o in 0..g.out_ch {
        for i in 0..g.in_ch {
            let taps = &mut gw[(o * g.in_ch + i) * g.kh * g.kw..][..g.kh * g.kw];
            for b in 0..g.batch {
                let gy_plane = &gy[(b * g.out_ch + o) * op..][..op];
                let in_plane = &x[(b * g.in_ch + i) * ip..][..ip];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let mut acc = 0.0;
                        g.for_each_row(ky, kx, |oy, iy, ox0, ox1| {
                            let grow = &gy_plane[oy * g.out_w..][..g.out_w];
                            let irow = &in_plane[iy * g.in_w..][..g.in_w];
                            for ox in ox0..ox1 {
                                acc += grow[ox] * irow[ox * s + kx - g.pad];
                            }
                        });
                        taps[ky * g.kw + kx] += acc;
                    }
                }
            }
        }
    }
}
