use super::conv::dot;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// `y = W x + b` applied to every row of the last axis. `W` is `[d_out, d_in]`.
pub fn fully_connected<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let ws = w.shape();
    let d_in = *x.shape().last().unwrap_or(&0);
    if ws.len() != 2 || ws[1] != d_in || b.len() != ws[0] {
        return Err(Error::ShapeMismatch(format!(
            "FC weight {ws:?} / bias {:?} for input width {d_in}",
            b.shape()
        )));
    }
    let d_out = ws[0];
    let rows = x.len() / d_in.max(1);
    let mut out = Vec::with_capacity(rows * d_out);
    for row in x.data().chunks_exact(d_in) {
        for o in 0..d_out {
            out.push(b.data()[o] + dot(&w.data()[o * d_in..(o + 1) * d_in], row));
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = d_out;
    Tensor::from_vec(&shape, x.axes(), out)
}

/// Returns `(dx, dW, db)`.
pub fn fully_connected_backward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, dy: &Tensor<T>) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (d_out, d_in) = (w.dim(0), w.dim(1));
    let mut dw = Tensor::param_zeros(&[d_out, d_in]);
    let mut db = Tensor::param_zeros(&[d_out]);
    let mut dx = Tensor::zeros(x.shape(), x.axes());
    for ((xrow, dyrow), dxrow) in x
        .data()
        .chunks_exact(d_in)
        .zip(dy.data().chunks_exact(d_out))
        .zip(dx.data_mut().chunks_exact_mut(d_in))
    {
        for o in 0..d_out {
            let g = dyrow[o];
            if g == T::zero() {
                continue;
            }
            db.data_mut()[o] += g;
            let wrow = &w.data()[o * d_in..(o + 1) * d_in];
            let dwrow = &mut dw.data_mut()[o * d_in..(o + 1) * d_in];
            for i in 0..d_in {
                dwrow[i] += g * xrow[i];
                dxrow[i] += g * wrow[i];
            }
        }
    }
    (dx, dw, db)
}
