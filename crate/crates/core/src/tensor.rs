//! Dense row-major `f64` arrays and the handful of kernels the models need.

use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        let t = Tensor {
            shape: shape.to_vec(),
            data,
        };
        t.check_finite("Tensor::new")?;
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn eye(n: usize) -> Self {
        Self::from_fn(&[n, n], |k| if k / n == k % n { 1.0 } else { 0.0 })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
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

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} to {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.shape[1];
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.shape[1];
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn check_finite(&self, ctx: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::non_finite(ctx.to_string()))
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "axpy {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if self.ndim() != 2 {
            return Err(Error::shape("transpose needs a 2-D tensor"));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        Ok(Tensor::from_fn(&[c, r], |k| {
            let (j, i) = (k / r, k % r);
            self.data[i * c + j]
        }))
    }
}

/// Standard matrix product of `[n×k]` and `[k×m]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.ndim() != 2 || b.ndim() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::shape(format!(
            "matmul {:?} x {:?}",
            a.shape, b.shape
        )));
    }
    let (n, k, m) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; n * m];
    if m > 0 {
        par::for_each_chunk(&mut out, m, |i, row| {
            for p in 0..k {
                let aip = a.data[i * k + p];
                let brow = &b.data[p * m..(p + 1) * m];
                for (o, bv) in row.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        });
    }
    let t = Tensor {
        shape: vec![n, m],
        data: out,
    };
    t.check_finite("matmul")?;
    Ok(t)
}

/// Geometry of a square-kernel 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], kernels: &[usize], stride: usize, padding: usize) -> Result<Self> {
        if input.len() != 3 || kernels.len() != 4 {
            return Err(Error::shape(format!(
                "conv2d expects C×H×W input and Co×Ci×k×k kernels, got {input:?} / {kernels:?}"
            )));
        }
        let (c_in, h, w) = (input[0], input[1], input[2]);
        let (c_out, kc, k, k2) = (kernels[0], kernels[1], kernels[2], kernels[3]);
        if kc != c_in {
            return Err(Error::shape(format!(
                "kernel expects {kc} input channels, input has {c_in}"
            )));
        }
        if k != k2 || k % 2 == 0 {
            return Err(Error::shape(format!("kernel must be square and odd, got {k}×{k2}")));
        }
        if stride == 0 {
            return Err(Error::invalid("stride must be positive"));
        }
        let extent = |n: usize| -> Result<usize> {
            let span = (n + 2 * padding)
                .checked_sub(k)
                .ok_or_else(|| Error::shape(format!("kernel {k} larger than padded extent")))?;
            if span % stride != 0 {
                return Err(Error::shape(format!(
                    "non-integral output extent: ({n}+2·{padding}−{k})/{stride}"
                )));
            }
            Ok(span / stride + 1)
        };
        Ok(ConvGeom {
            c_in,
            h,
            w,
            c_out,
            k,
            stride,
            padding,
            h_out: extent(h)?,
            w_out: extent(w)?,
        })
    }

    /// Valid output column range for kernel column offset `kj`.
    #[inline]
    fn ox_range(&self, kj: usize) -> (usize, usize) {
        // ix = ox*s + kj - p must lie in [0, w)
        let s = self.stride;
        let lo = if kj >= self.padding {
            0
        } else {
            (self.padding - kj).div_ceil(s)
        };
        let hi = if self.w + self.padding > kj {
            ((self.w + self.padding - kj - 1) / s + 1).min(self.w_out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

/// Cross-correlation of a `C_in×H×W` map with `C_out×C_in×k×k` kernels.
pub fn conv2d(
    input: &Tensor,
    kernels: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = ConvGeom::new(&input.shape, &kernels.shape, stride, padding)?;
    if let Some(b) = bias {
        if b.len() != g.c_out {
            return Err(Error::shape(format!(
                "bias has {} entries for {} output channels",
                b.len(),
                g.c_out
            )));
        }
    }
    let plane = g.h_out * g.w_out;
    let mut out = vec![0.0; g.c_out * plane];
    if plane > 0 {
        par::for_each_chunk(&mut out, plane, |co, dst| {
            conv_channel(&g, input.data(), kernels.data(), co, dst);
            if let Some(b) = bias {
                let bv = b.data[co];
                dst.iter_mut().for_each(|v| *v += bv);
            }
        });
    }
    let t = Tensor {
        shape: vec![g.c_out, g.h_out, g.w_out],
        data: out,
    };
    t.check_finite("conv2d")?;
    Ok(t)
}

fn conv_channel(g: &ConvGeom, input: &[f64], kernels: &[f64], co: usize, dst: &mut [f64]) {
    let (k, s, p) = (g.k, g.stride, g.padding);
    for ci in 0..g.c_in {
        let src = &input[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        let kbase = (co * g.c_in + ci) * k * k;
        for ki in 0..k {
            for kj in 0..k {
                let wv = kernels[kbase + ki * k + kj];
                let (lo, hi) = g.ox_range(kj);
                for oy in 0..g.h_out {
                    let iy = (oy * s + ki) as isize - p as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let srow = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let drow = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                    if s == 1 {
                        let off = lo + kj - p;
                        for (d, x) in drow[lo..hi].iter_mut().zip(&srow[off..off + hi - lo]) {
                            *d += wv * x;
                        }
                    } else {
                        for ox in lo..hi {
                            drow[ox] += wv * srow[ox * s + kj - p];
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of `conv2d` with respect to input, kernels and bias.
pub struct ConvGrads {
    pub input: Tensor,
    pub kernels: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<ConvGrads> {
    let g = ConvGeom::new(&input.shape, &kernels.shape, stride, padding)?;
    if grad_out.shape != [g.c_out, g.h_out, g.w_out] {
        return Err(Error::shape(format!(
            "conv2d_backward: grad_out {:?} vs expected {:?}",
            grad_out.shape,
            [g.c_out, g.h_out, g.w_out]
        )));
    }
    let (k, s, p) = (g.k, g.stride, g.padding);
    let plane_out = g.h_out * g.w_out;
    let plane_in = g.h * g.w;

    let gb: Vec<f64> = (0..g.c_out)
        .map(|co| grad_out.data[co * plane_out..(co + 1) * plane_out].iter().sum())
        .collect();

    // kernel gradient, one output channel per chunk
    let mut gk = vec![0.0; kernels.len()];
    par::for_each_chunk(&mut gk, g.c_in * k * k, |co, dst| {
        let go = &grad_out.data[co * plane_out..(co + 1) * plane_out];
        for ci in 0..g.c_in {
            let src = &input.data[ci * plane_in..(ci + 1) * plane_in];
            for ki in 0..k {
                for kj in 0..k {
                    let (lo, hi) = g.ox_range(kj);
                    let mut acc = 0.0;
                    for oy in 0..g.h_out {
                        let iy = (oy * s + ki) as isize - p as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let srow = &src[iy as usize * g.w..];
                        let grow = &go[oy * g.w_out..];
                        for ox in lo..hi {
                            acc += grow[ox] * srow[ox * s + kj - p];
                        }
                    }
                    dst[(ci * k + ki) * k + kj] = acc;
                }
            }
        }
    });

    // input gradient, one input channel per chunk
    let mut gi = vec![0.0; input.len()];
    if plane_in > 0 {
        par::for_each_chunk(&mut gi, plane_in, |ci, dst| {
            for co in 0..g.c_out {
                let go = &grad_out.data[co * plane_out..(co + 1) * plane_out];
                let kbase = (co * g.c_in + ci) * k * k;
                for ki in 0..k {
                    for kj in 0..k {
                        let wv = kernels.data[kbase + ki * k + kj];
                        let (lo, hi) = g.ox_range(kj);
                        for oy in 0..g.h_out {
                            let iy = (oy * s + ki) as isize - p as isize;
                            if iy < 0 || iy >= g.h as isize {
                                continue;
                            }
                            let drow = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                            let grow = &go[oy * g.w_out..(oy + 1) * g.w_out];
                            for ox in lo..hi {
                                drow[ox * s + kj - p] += wv * grow[ox];
                            }
                        }
                    }
                }
            }
        });
    }

    Ok(ConvGrads {
        input: Tensor {
            shape: input.shape.clone(),
            data: gi,
        },
        kernels: Tensor {
            shape: kernels.shape.clone(),
            data: gk,
        },
        bias: Tensor::vector(gb),
    })
}

/// 2×2 average pooling with stride 2 over a `C×H×W` map (H, W even).
pub fn avg_pool2(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = chw(input)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("avg_pool2 needs even extents, got {h}×{w}")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let d = input.data();
    Ok(Tensor::from_fn(&[c, ho, wo], |idx| {
        let ch = idx / (ho * wo);
        let (y, x) = ((idx / wo) % ho, idx % wo);
        let base = ch * h * w + 2 * y * w + 2 * x;
        0.25 * (d[base] + d[base + 1] + d[base + w] + d[base + w + 1])
    }))
}

pub fn avg_pool2_backward(grad_out: &Tensor, input_shape: &[usize]) -> Tensor {
    let (h, w) = (input_shape[1], input_shape[2]);
    let (ho, wo) = (h / 2, w / 2);
    let go = grad_out.data();
    Tensor::from_fn(input_shape, |idx| {
        let ch = idx / (h * w);
        let (y, x) = ((idx / w) % h, idx % w);
        0.25 * go[ch * ho * wo + (y / 2) * wo + x / 2]
    })
}

pub(crate) fn chw(t: &Tensor) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        s => Err(Error::shape(format!("expected C×H×W, got {s:?}"))),
    }
}

/// `log Σ exp(v)` with max subtraction. Returns `-inf` only if every entry is `-inf`.
pub fn logsumexp_slice(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log-sum-exp along `axis` of a 1-D or 2-D tensor.
pub fn logsumexp(v: &Tensor, axis: usize) -> Result<Tensor> {
    match (v.ndim(), axis) {
        (1, 0) => {
            if v.is_empty() {
                return Err(Error::invalid("logsumexp over an empty axis"));
            }
            Ok(Tensor::vector(vec![logsumexp_slice(&v.data)]))
        }
        (2, 0) | (2, 1) => {
            let (r, c) = (v.shape[0], v.shape[1]);
            if (axis == 0 && r == 0) || (axis == 1 && c == 0) {
                return Err(Error::invalid("logsumexp over an empty axis"));
            }
            let out = if axis == 1 {
                (0..r).map(|i| logsumexp_slice(v.row(i))).collect()
            } else {
                let mut col = vec![0.0; r];
                (0..c)
                    .map(|j| {
                        for (i, x) in col.iter_mut().enumerate() {
                            *x = v.data[i * c + j];
                        }
                        logsumexp_slice(&col)
                    })
                    .collect()
            };
            Ok(Tensor::vector(out))
        }
        _ => Err(Error::shape(format!(
            "logsumexp axis {axis} invalid for shape {:?}",
            v.shape
        ))),
    }
}
