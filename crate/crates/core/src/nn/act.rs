use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Parametric ReLU with one slope per channel (last axis).
pub fn prelu<T: Real>(x: &Tensor<T>, alpha: &Tensor<T>) -> Result<Tensor<T>> {
    let c = *x.shape().last().unwrap_or(&0);
    if alpha.len() != c {
        return Err(Error::ShapeMismatch(format!("PReLU has {} slopes for {c} channels", alpha.len())));
    }
    if !alpha.all_finite() {
        return Err(Error::InvalidArgument("PReLU slope must be finite".into()));
    }
    let mut y = x.clone();
    for row in y.data_mut().chunks_exact_mut(c) {
        for (v, &a) in row.iter_mut().zip(alpha.data()) {
            if *v < T::zero() {
                *v *= a;
            }
        }
    }
    Ok(y)
}

/// Returns `(dx, dalpha)`.
pub fn prelu_backward<T: Real>(x: &Tensor<T>, alpha: &Tensor<T>, dy: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let c = alpha.len();
    let mut dx = dy.clone();
    let mut da = vec![T::zero(); c];
    for (drow, xrow) in dx.data_mut().chunks_exact_mut(c).zip(x.data().chunks_exact(c)) {
        for k in 0..c {
            if xrow[k] < T::zero() {
                da[k] += drow[k] * xrow[k];
                drow[k] *= alpha.data()[k];
            }
        }
    }
    (dx, Tensor::param(&[c], da).unwrap())
}
