//! Batch normalization and instant layer normalization.

use super::tensor::{Real, Tensor};
use super::{BN_EPS, ILN_EPS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Infer,
    Train,
}

/// Borrowed view of one batch-norm layer's parameters.
#[derive(Debug, Clone, Copy)]
pub struct BnParams<'a, T: Real> {
    pub gamma: &'a Tensor<T>,
    pub beta: &'a Tensor<T>,
    pub running_mean: &'a Tensor<T>,
    pub running_var: &'a Tensor<T>,
}

/// Saved activations of a batch-norm forward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T: Real> {
    pub mode: BnMode,
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    /// Batch statistics `(mean, var)` when run in training mode.
    pub batch_stats: Option<(Vec<T>, Vec<T>)>,
}

impl<'a, T: Real> BnParams<'a, T> {
    fn check(&self, c: usize) -> Result<()> {
        for (name, t) in [
            ("gamma", self.gamma),
            ("beta", self.beta),
            ("running_mean", self.running_mean),
            ("running_var", self.running_var),
        ] {
            if t.len() != c {
                return Err(Error::ShapeMismatch(format!(
                    "batch norm {name} has {} entries for {c} channels",
                    t.len()
                )));
            }
        }
        Ok(())
    }
}

/// Per-channel normalization of a `[t, f, c]` map.
///
/// `Infer` uses the running statistics; `Train` normalizes with the
/// statistics of `x` over `(t, f)` and returns them in the cache so that the
/// caller can fold them into the running estimates with [`bn_update_running`].
pub fn batch_norm_cached<T: Real>(x: &Tensor<T>, p: BnParams<'_, T>, mode: BnMode) -> Result<(Tensor<T>, BnCache<T>)> {
    let (_, _, c) = x.dims3();
    p.check(c)?;
    let eps = T::of(BN_EPS);
    let n = x.len() / c.max(1);
    let (mean, var, batch_stats) = match mode {
        BnMode::Infer => (p.running_mean.data().to_vec(), p.running_var.data().to_vec(), None),
        BnMode::Train => {
            let mut mean = vec![T::zero(); c];
            for row in x.data().chunks_exact(c) {
                mean.iter_mut().zip(row).for_each(|(m, &v)| *m += v);
            }
            let inv_n = T::one() / T::of(n as f64);
            mean.iter_mut().for_each(|m| *m *= inv_n);
            let mut var = vec![T::zero(); c];
            for row in x.data().chunks_exact(c) {
                for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s *= inv_n);
            (mean.clone(), var.clone(), Some((mean, var)))
        }
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = x.clone();
    let mut y = x.clone();
    for (hrow, yrow) in xhat.data_mut().chunks_exact_mut(c).zip(y.data_mut().chunks_exact_mut(c)) {
        for k in 0..c {
            let h = (hrow[k] - mean[k]) * inv_std[k];
            hrow[k] = h;
            yrow[k] = h * p.gamma.data()[k] + p.beta.data()[k];
        }
    }
    Ok((y, BnCache { mode, xhat, inv_std, batch_stats }))
}

pub fn batch_norm<T: Real>(x: &Tensor<T>, p: BnParams<'_, T>, mode: BnMode) -> Result<Tensor<T>> {
    let (_, _, c) = x.dims3();
    if mode == BnMode::Train {
        return batch_norm_cached(x, p, mode).map(|(y, _)| y);
    }
    p.check(c)?;
    let eps = T::of(BN_EPS);
    let mut y = x.clone();
    let rm = p.running_mean.data();
    let g = p.gamma.data();
    let b = p.beta.data();
    let inv_std: Vec<T> = p.running_var.data().iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    for row in y.data_mut().chunks_exact_mut(c) {
        for k in 0..c {
            row[k] = (row[k] - rm[k]) * inv_std[k] * g[k] + b[k];
        }
    }
    Ok(y)
}

/// `new = momentum * old + (1 - momentum) * batch`.
pub fn bn_update_running<T: Real>(running_mean: &mut Tensor<T>, running_var: &mut Tensor<T>, batch: &(Vec<T>, Vec<T>), momentum: T) {
    let one_m = T::one() - momentum;
    for (r, &b) in running_mean.data_mut().iter_mut().zip(&batch.0) {
        *r = momentum * *r + one_m * b;
    }
    for (r, &b) in running_var.data_mut().iter_mut().zip(&batch.1) {
        *r = momentum * *r + one_m * b;
    }
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batch_norm_backward<T: Real>(dy: &Tensor<T>, gamma: &Tensor<T>, cache: &BnCache<T>) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (_, _, c) = dy.dims3();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (drow, hrow) in dy.data().chunks_exact(c).zip(cache.xhat.data().chunks_exact(c)) {
        for k in 0..c {
            dbeta[k] += drow[k];
            dgamma[k] += drow[k] * hrow[k];
        }
    }
    let g = gamma.data();
    let mut dx = dy.clone();
    match cache.mode {
        BnMode::Infer => {
            for row in dx.data_mut().chunks_exact_mut(c) {
                for k in 0..c {
                    row[k] *= g[k] * cache.inv_std[k];
                }
            }
        }
        BnMode::Train => {
            let n = T::of((dy.len() / c) as f64);
            for (row, hrow) in dx.data_mut().chunks_exact_mut(c).zip(cache.xhat.data().chunks_exact(c)) {
                for k in 0..c {
                    let scale = g[k] * cache.inv_std[k] / n;
                    row[k] = scale * (n * row[k] - dbeta[k] - hrow[k] * dgamma[k]);
                }
            }
        }
    }
    (
        dx,
        Tensor::param(&[c], dgamma).unwrap(),
        Tensor::param(&[c], dbeta).unwrap(),
    )
}

/// Saved activations of an instant-layer-norm pass.
#[derive(Debug, Clone)]
pub struct IlnCache<T: Real> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
}

fn iln_impl<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T, keep: bool) -> Result<(Tensor<T>, Option<IlnCache<T>>)> {
    let (_, f, c) = x.dims3();
    let frame = f * c;
    if gamma.len() != frame || beta.len() != frame {
        return Err(Error::ShapeMismatch(format!(
            "iLN affine {:?}/{:?} for frames of {f}x{c}",
            gamma.shape(),
            beta.shape()
        )));
    }
    if !(eps > T::zero()) {
        return Err(Error::InvalidArgument("iLN epsilon must be positive".into()));
    }
    let inv_n = T::one() / T::of(frame as f64);
    let mut y = x.clone();
    let mut xhat = if keep { Some(x.clone()) } else { None };
    let mut inv_stds = Vec::with_capacity(x.dim(0));
    for (ti, row) in y.data_mut().chunks_exact_mut(frame).enumerate() {
        let mean = row.iter().copied().sum::<T>() * inv_n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
        let inv_std = T::one() / (var + eps).sqrt();
        inv_stds.push(inv_std);
        if let Some(h) = xhat.as_mut() {
            let hrow = &mut h.data_mut()[ti * frame..(ti + 1) * frame];
            for (hv, &v) in hrow.iter_mut().zip(row.iter()) {
                *hv = (v - mean) * inv_std;
            }
        }
        for ((v, &g), &b) in row.iter_mut().zip(gamma.data()).zip(beta.data()) {
            *v = (*v - mean) * inv_std * g + b;
        }
    }
    Ok((y, xhat.map(|xhat| IlnCache { xhat, inv_std: inv_stds })))
}

/// Instant layer normalization: every frame of a `[t, f, c]` map is
/// normalized with its own mean and variance taken jointly over `f` and `c`,
/// followed by a `[f, c]` affine map shared by all frames.
pub fn iln<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    iln_impl(x, gamma, beta, eps, false).map(|(y, _)| y)
}

pub fn iln_cached<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<(Tensor<T>, IlnCache<T>)> {
    iln_impl(x, gamma, beta, T::of(ILN_EPS), true).map(|(y, c)| (y, c.unwrap()))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn iln_backward<T: Real>(dy: &Tensor<T>, gamma: &Tensor<T>, cache: &IlnCache<T>) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (_, f, c) = dy.dims3();
    let frame = f * c;
    let n = T::of(frame as f64);
    let mut dgamma = Tensor::param_zeros(gamma.shape());
    let mut dbeta = Tensor::param_zeros(gamma.shape());
    let mut dx = dy.clone();
    let mut dxhat = vec![T::zero(); frame];
    for (ti, (drow, hrow)) in dy
        .data()
        .chunks_exact(frame)
        .zip(cache.xhat.data().chunks_exact(frame))
        .enumerate()
    {
        let mut sum_d = T::zero();
        let mut sum_dh = T::zero();
        for i in 0..frame {
            dgamma.data_mut()[i] += drow[i] * hrow[i];
            dbeta.data_mut()[i] += drow[i];
            let d = drow[i] * gamma.data()[i];
            dxhat[i] = d;
            sum_d += d;
            sum_dh += d * hrow[i];
        }
        let scale = cache.inv_std[ti] / n;
        let out = &mut dx.data_mut()[ti * frame..(ti + 1) * frame];
        for i in 0..frame {
            out[i] = scale * (n * dxhat[i] - sum_d - hrow[i] * sum_dh);
        }
    }
    (dx, dgamma, dbeta)
}
