//! Layer building blocks with hand-written backward passes, the parameter
//! visitor used by the optimizer and weight files, and SGD with momentum.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{self, Tensor};

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v *= sigmoid(*v));
    y
}

/// `dL/dx` given `dL/dy` for `y = x·σ(x)`.
pub fn silu_backward(x: &Tensor, grad_y: &Tensor) -> Tensor {
    let mut g = grad_y.clone();
    for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
        let s = sigmoid(xv);
        *gv *= s * (1.0 + xv * (1.0 - s));
    }
    g
}

/// 3×3 same-padding convolution, bias, SiLU, then optional 2×2 average pool.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub weight: Tensor,
    pub bias: Tensor,
    pub pool: bool,
}

/// Values saved by `ConvBlock::forward` for the backward pass.
#[derive(Debug, Clone)]
pub struct BlockTrace {
    input: Tensor,
    pre: Tensor,
}

impl ConvBlock {
    pub const KERNEL: usize = 3;

    /// He-style initialization scaled for SiLU.
    pub fn init(c_in: usize, c_out: usize, pool: bool, rng: &mut Rng) -> Self {
        let k = Self::KERNEL;
        let std = (2.0 / (c_in * k * k) as f64).sqrt();
        ConvBlock {
            weight: Tensor::from_fn(&[c_out, c_in, k, k], |_| std * rng.normal()),
            bias: Tensor::zeros(&[c_out]),
            pool,
        }
    }

    pub fn c_in(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn c_out(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, BlockTrace)> {
        let pre = tensor::conv2d(x, &self.weight, Some(&self.bias), 1, Self::KERNEL / 2)?;
        let act = silu(&pre);
        let out = if self.pool { tensor::avg_pool2(&act)? } else { act };
        Ok((
            out,
            BlockTrace {
                input: x.clone(),
                pre,
            },
        ))
    }

    /// Returns `dL/dinput` and accumulates parameter gradients into `grads`.
    pub fn backward(&self, trace: &BlockTrace, grad_out: &Tensor, grads: &mut ConvBlock) -> Result<Tensor> {
        let grad_act = if self.pool {
            tensor::avg_pool2_backward(grad_out, trace.pre.shape())
        } else {
            grad_out.clone()
        };
        let grad_pre = silu_backward(&trace.pre, &grad_act);
        let g = tensor::conv2d_backward(&trace.input, &self.weight, &grad_pre, 1, Self::KERNEL / 2)?;
        grads.weight.axpy(1.0, &g.kernels)?;
        grads.bias.axpy(1.0, &g.bias)?;
        Ok(g.input)
    }
}

/// Uniform access to every trainable tensor of a model, in a fixed order.
pub trait Parameters: Clone {
    fn named_tensors(&self) -> Vec<(String, &Tensor)>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    fn num_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        self.named_tensors()
            .iter()
            .flat_map(|(_, t)| t.data().iter().copied())
            .collect()
    }

    fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    fn is_finite(&self) -> bool {
        self.named_tensors()
            .iter()
            .all(|(_, t)| t.data().iter().all(|v| v.is_finite()))
    }
}

impl Parameters for ConvBlock {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// `v ← μ·v + g; θ ← θ − lr·v` on flat slices.
pub fn sgd_update(params: &mut [f64], grads: &[f64], velocity: &mut [f64], lr: f64, momentum: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::shape("sgd: params, grads and velocity differ in length"));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::non_finite("gradient"));
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

/// One SGD-with-momentum step over a whole model.
pub fn sgd_step<P: Parameters>(params: &mut P, grads: &P, lr: f64, momentum: f64, velocity: &mut P) -> Result<()> {
    let g = grads.named_tensors();
    let mut v = velocity.tensors_mut();
    let mut p = params.tensors_mut();
    if g.len() != p.len() || v.len() != p.len() {
        return Err(Error::shape("sgd: parameter sets differ"));
    }
    for ((pt, (_, gt)), vt) in p.iter_mut().zip(&g).zip(v.iter_mut()) {
        if pt.shape() != gt.shape() || pt.shape() != vt.shape() {
            return Err(Error::shape("sgd: tensor shapes differ"));
        }
        if gt.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::non_finite("gradient"));
        }
    }
    for ((pt, (_, gt)), vt) in p.iter_mut().zip(&g).zip(v.iter_mut()) {
        sgd_update(pt.data_mut(), gt.data(), vt.data_mut(), lr, momentum)?;
    }
    Ok(())
}

/// Add `other` into `acc` tensor by tensor.
pub fn accumulate<P: Parameters>(acc: &mut P, other: &P) -> Result<()> {
    let o = other.named_tensors();
    for (a, (_, b)) in acc.tensors_mut().into_iter().zip(&o) {
        a.axpy(1.0, b)?;
    }
    Ok(())
}
