//! Strided 1-D inner loops shared by convolution and its transpose.
//!
//! Every routine pairs a dense sequence (index `t`) with a strided one
//! (index `t * stride + offset`) and only touches indices valid in both.

fn valid_range(
    dense_len: usize,
    strided_len: usize,
    stride: usize,
    offset: isize,
) -> (usize, usize) {
    let s = stride as isize;
    // smallest t with t*s + offset >= 0
    let lo = if offset >= 0 {
        0
    } else {
        ((-offset) + s - 1) / s
    };
    // largest t with t*s + offset <= strided_len - 1
    let top = strided_len as isize - 1 - offset;
    if top < 0 {
        return (0, 0);
    }
    let hi = (top / s + 1).min(dense_len as isize);
    if hi <= lo {
        (0, 0)
    } else {
        (lo as usize, hi as usize)
    }
}

/// `dense[t] += alpha * strided[t*stride + offset]`
pub(crate) fn gather_axpy(
    dense: &mut [f64],
    strided: &[f64],
    alpha: f64,
    stride: usize,
    offset: isize,
) {
    let (lo, hi) = valid_range(dense.len(), strided.len(), stride, offset);
    if lo >= hi {
        return;
    }
    let start = (lo as isize * stride as isize + offset) as usize;
    if stride == 1 {
        let src = &strided[start..start + (hi - lo)];
        for (d, s) in dense[lo..hi].iter_mut().zip(src) {
            *d += alpha * s;
        }
    } else {
        for (k, d) in dense[lo..hi].iter_mut().enumerate() {
            *d += alpha * strided[start + k * stride];
        }
    }
}

/// `strided[t*stride + offset] += alpha * dense[t]`
pub(crate) fn scatter_axpy(
    strided: &mut [f64],
    dense: &[f64],
    alpha: f64,
    stride: usize,
    offset: isize,
) {
    let (lo, hi) = valid_range(dense.len(), strided.len(), stride, offset);
    if lo >= hi {
        return;
    }
    let start = (lo as isize * stride as isize + offset) as usize;
    if stride == 1 {
        let dst = &mut strided[start..start + (hi - lo)];
        for (d, s) in dst.iter_mut().zip(&dense[lo..hi]) {
            *d += alpha * s;
        }
    } else {
        for (k, s) in dense[lo..hi].iter().enumerate() {
            strided[start + k * stride] += alpha * s;
        }
    }
}

/// `sum_t dense[t] * strided[t*stride + offset]`
pub(crate) fn strided_dot(dense: &[f64], strided: &[f64], stride: usize, offset: isize) -> f64 {
    let (lo, hi) = valid_range(dense.len(), strided.len(), stride, offset);
    if lo >= hi {
        return 0.0;
    }
    let start = (lo as isize * stride as isize + offset) as usize;
    if stride == 1 {
        dot(&dense[lo..hi], &strided[start..start + (hi - lo)])
    } else {
        dense[lo..hi]
            .iter()
            .enumerate()
            .map(|(k, d)| d * strided[start + k * stride])
            .sum()
    }
}

/// Four independent accumulators so the loop vectorises.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub dilation: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl ConvGeometry {
    pub fn new(stride: usize, dilation: usize, padding: usize) -> Self {
        Self {
            stride,
            dilation,
            pad_left: padding,
            pad_right: padding,
        }
    }

    /// Stride 1 padding that keeps the length for odd effective kernels.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        let total = dilation * (kernel - 1);
        Self {
            stride: 1,
            dilation,
            pad_left: total / 2,
            pad_right: total - total / 2,
        }
    }

    pub fn conv_out_len(&self, len: usize, kernel: usize) -> Option<usize> {
        let padded = len + self.pad_left + self.pad_right;
        let span = self.dilation * (kernel - 1) + 1;
        (padded >= span && self.stride > 0).then(|| (padded - span) / self.stride + 1)
    }

    /// Output length of the transposed convolution (dilation 1).
    pub fn transposed_out_len(&self, len: usize, kernel: usize) -> Option<usize> {
        ((len - 1) * self.stride + kernel).checked_sub(self.pad_left + self.pad_right)
    }
}

pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub t_in: usize,
    pub t_out: usize,
}

/// Cross-correlation: x `[B, Cin, Tin]`, w `[Cout, Cin, K]` → y `[B, Cout, Tout]`.
pub(crate) fn conv1d_forward(x: &[f64], w: &[f64], d: &ConvDims, g: &ConvGeometry) -> Vec<f64> {
    let mut y = vec![0.0; d.batch * d.c_out * d.t_out];
    for b in 0..d.batch {
        for co in 0..d.c_out {
            let yrow = &mut y[(b * d.c_out + co) * d.t_out..][..d.t_out];
            for ci in 0..d.c_in {
                let xrow = &x[(b * d.c_in + ci) * d.t_in..][..d.t_in];
                for k in 0..d.kernel {
                    let wv = w[(co * d.c_in + ci) * d.kernel + k];
                    let off = (k * g.dilation) as isize - g.pad_left as isize;
                    gather_axpy(yrow, xrow, wv, g.stride, off);
                }
            }
        }
    }
    y
}

pub(crate) fn conv1d_backward_input(
    dy: &[f64],
    w: &[f64],
    d: &ConvDims,
    g: &ConvGeometry,
) -> Vec<f64> {
    let mut dx = vec![0.0; d.batch * d.c_in * d.t_in];
    for b in 0..d.batch {
        for ci in 0..d.c_in {
            let dxrow = &mut dx[(b * d.c_in + ci) * d.t_in..][..d.t_in];
            for co in 0..d.c_out {
                let dyrow = &dy[(b * d.c_out + co) * d.t_out..][..d.t_out];
                for k in 0..d.kernel {
                    let wv = w[(co * d.c_in + ci) * d.kernel + k];
                    let off = (k * g.dilation) as isize - g.pad_left as isize;
                    scatter_axpy(dxrow, dyrow, wv, g.stride, off);
                }
            }
        }
    }
    dx
}

pub(crate) fn conv1d_backward_weight(
    dy: &[f64],
    x: &[f64],
    d: &ConvDims,
    g: &ConvGeometry,
) -> Vec<f64> {
    let mut dw = vec![0.0; d.c_out * d.c_in * d.kernel];
    for b in 0..d.batch {
        for co in 0..d.c_out {
            let dyrow = &dy[(b * d.c_out + co) * d.t_out..][..d.t_out];
            for ci in 0..d.c_in {
                let xrow = &x[(b * d.c_in + ci) * d.t_in..][..d.t_in];
                for k in 0..d.kernel {
                    let off = (k * g.dilation) as isize - g.pad_left as isize;
                    dw[(co * d.c_in + ci) * d.kernel + k] +=
                        strided_dot(dyrow, xrow, g.stride, off);
                }
            }
        }
    }
    dw
}

/// Transposed convolution: x `[B, Cin, Tin]`, w `[Cin, Cout, K]`.
pub(crate) fn conv_t_forward(x: &[f64], w: &[f64], d: &ConvDims, g: &ConvGeometry) -> Vec<f64> {
    let mut y = vec![0.0; d.batch * d.c_out * d.t_out];
    for b in 0..d.batch {
        for co in 0..d.c_out {
            let yrow = &mut y[(b * d.c_out + co) * d.t_out..][..d.t_out];
            for ci in 0..d.c_in {
                let xrow = &x[(b * d.c_in + ci) * d.t_in..][..d.t_in];
                for k in 0..d.kernel {
                    let wv = w[(ci * d.c_out + co) * d.kernel + k];
                    let off = k as isize - g.pad_left as isize;
                    scatter_axpy(yrow, xrow, wv, g.stride, off);
                }
            }
        }
    }
    y
}

pub(crate) fn conv_t_backward_input(
    dy: &[f64],
    w: &[f64],
    d: &ConvDims,
    g: &ConvGeometry,
) -> Vec<f64> {
    let mut dx = vec![0.0; d.batch * d.c_in * d.t_in];
    for b in 0..d.batch {
        for ci in 0..d.c_in {
            let dxrow = &mut dx[(b * d.c_in + ci) * d.t_in..][..d.t_in];
            for co in 0..d.c_out {
                let dyrow = &dy[(b * d.c_out + co) * d.t_out..][..d.t_out];
                for k in 0..d.kernel {
                    let wv = w[(ci * d.c_out + co) * d.kernel + k];
                    let off = k as isize - g.pad_left as isize;
                    gather_axpy(dxrow, dyrow, wv, g.stride, off);
                }
            }
        }
    }
    dx
}

pub(crate) fn conv_t_backward_weight(
    dy: &[f64],
    x: &[f64],
    d: &ConvDims,
    g: &ConvGeometry,
) -> Vec<f64> {
    let mut dw = vec![0.0; d.c_in * d.c_out * d.kernel];
    for b in 0..d.batch {
        for ci in 0..d.c_in {
            let xrow = &x[(b * d.c_in + ci) * d.t_in..][..d.t_in];
            for co in 0..d.c_out {
                let dyrow = &dy[(b * d.c_out + co) * d.t_out..][..d.t_out];
                for k in 0..d.kernel {
                    let off = k as isize - g.pad_left as isize;
                    dw[(ci * d.c_out + co) * d.kernel + k] +=
                        strided_dot(xrow, dyrow, g.stride, off);
                }
            }
        }
    }
    dw
}
