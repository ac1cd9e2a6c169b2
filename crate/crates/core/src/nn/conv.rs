//! Two-dimensional convolution over `[time, freq, channel]` feature maps.
//!
//! Kernels are stored `[c_out, c_in, k_t, k_f]`. A transposed convolution
//! reuses the same storage interpreted as `[c_in, c_out, k_t, k_f]`, so that
//! it is the exact adjoint of the forward convolution sharing its weights.
//!
//! Causal forward convolutions left-pad time with `k_t - 1` zero frames. The
//! adjoint of such a layer reads *future* frames, so the causal transposed
//! convolution is instead the adjoint of a convolution that pads `k_t - 1`
//! frames on the right: it evaluates the full transpose and drops the trailing
//! outputs that would require look-ahead.

use rayon::prelude::*;

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

const PAR_WORK: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    /// `(k_t, k_f)`
    pub kernel: (usize, usize),
    /// `(s_t, s_f)`
    pub stride: (usize, usize),
    pub time_pad: (usize, usize),
    pub freq_pad: (usize, usize),
}

impl ConvGeom {
    pub fn causal(kernel: (usize, usize), stride: (usize, usize), freq_pad: (usize, usize)) -> Self {
        Self {
            kernel,
            stride,
            time_pad: (kernel.0.saturating_sub(1), 0),
            freq_pad,
        }
    }

    /// Geometry whose adjoint is the causal transposed convolution.
    pub fn anticausal(kernel: (usize, usize), stride: (usize, usize), freq_pad: (usize, usize)) -> Self {
        Self {
            kernel,
            stride,
            time_pad: (0, kernel.0.saturating_sub(1)),
            freq_pad,
        }
    }

    /// Output `(t, f)` of the forward convolution, `None` if the padded input
    /// is shorter than the kernel.
    pub fn out_dims(&self, t: usize, f: usize) -> Option<(usize, usize)> {
        let (kt, kf) = self.kernel;
        let (st, sf) = self.stride;
        let tp = t + self.time_pad.0 + self.time_pad.1;
        let fp = f + self.freq_pad.0 + self.freq_pad.1;
        if tp < kt || fp < kf || st == 0 || sf == 0 {
            return None;
        }
        Some(((tp - kt) / st + 1, (fp - kf) / sf + 1))
    }

    /// Input `(t, f)` reconstructed by the causal transposed convolution
    /// from a `(t, f)` input: time is upsampled by `s_t`, frequency is the
    /// full transpose minus the crop.
    pub fn transposed_dims(&self, t: usize, f: usize) -> Option<(usize, usize)> {
        let (_, kf) = self.kernel;
        let (st, sf) = self.stride;
        let full = (f.checked_sub(1)?) * sf + kf;
        let f_out = full.checked_sub(self.freq_pad.0 + self.freq_pad.1)?;
        Some((t * st, f_out))
    }
}

fn check_kernel<T: Real>(w: &Tensor<T>, g: &ConvGeom) -> Result<(usize, usize)> {
    let s = w.shape();
    if s.len() != 4 || s[2] != g.kernel.0 || s[3] != g.kernel.1 {
        return Err(Error::ShapeMismatch(format!(
            "kernel {s:?} does not match geometry {:?}",
            g.kernel
        )));
    }
    Ok((s[0], s[1]))
}

/// Multi-accumulator dot product with a fixed reduction order.
#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `[ca, cb, kt, kf]` -> `[ca][kt][kf][cb]`
fn pack_forward<T: Real>(w: &Tensor<T>) -> Vec<T> {
    let s = w.shape();
    let (ca, cb, kt, kf) = (s[0], s[1], s[2], s[3]);
    let src = w.data();
    let mut out = vec![T::zero(); src.len()];
    for a in 0..ca {
        for b in 0..cb {
            for j in 0..kt {
                for k in 0..kf {
                    out[((a * kt + j) * kf + k) * cb + b] = src[((a * cb + b) * kt + j) * kf + k];
                }
            }
        }
    }
    out
}

/// `[ca, cb, kt, kf]` -> `[cb][kt][kf][ca]`
fn pack_adjoint<T: Real>(w: &Tensor<T>) -> Vec<T> {
    let s = w.shape();
    let (ca, cb, kt, kf) = (s[0], s[1], s[2], s[3]);
    let src = w.data();
    let mut out = vec![T::zero(); src.len()];
    for a in 0..ca {
        for b in 0..cb {
            for j in 0..kt {
                for k in 0..kf {
                    out[((b * kt + j) * kf + k) * ca + a] = src[((a * cb + b) * kt + j) * kf + k];
                }
            }
        }
    }
    out
}

/// Fill `patch` (`[kt][kf][cb]`) with the input window feeding output `(to, fo)`.
#[inline]
fn gather_forward<T: Real>(x: &[T], tf: (usize, usize, usize), g: &ConvGeom, to: usize, fo: usize, patch: &mut [T]) {
    let (t, f, cb) = tf;
    let (kt, kf) = g.kernel;
    for j in 0..kt {
        let ti = (to * g.stride.0 + j) as isize - g.time_pad.0 as isize;
        for k in 0..kf {
            let dst = &mut patch[(j * kf + k) * cb..(j * kf + k + 1) * cb];
            let fi = (fo * g.stride.1 + k) as isize - g.freq_pad.0 as isize;
            if ti < 0 || ti >= t as isize || fi < 0 || fi >= f as isize {
                dst.fill(T::zero());
            } else {
                let base = (ti as usize * f + fi as usize) * cb;
                dst.copy_from_slice(&x[base..base + cb]);
            }
        }
    }
}

/// Forward convolution: `[t, f, cb] -> [t', f', ca]` with kernel `[ca, cb, kt, kf]`.
pub fn conv2d<T: Real>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>, g: &ConvGeom) -> Result<Tensor<T>> {
    let (ca, cb) = check_kernel(w, g)?;
    let (t, f, c) = x.dims3();
    if c != cb {
        return Err(Error::ShapeMismatch(format!("conv input has {c} channels, kernel expects {cb}")));
    }
    if let Some(b) = bias {
        if b.len() != ca {
            return Err(Error::ShapeMismatch(format!("bias {:?} for {ca} channels", b.shape())));
        }
    }
    let (to_n, fo_n) = g
        .out_dims(t, f)
        .ok_or_else(|| Error::ShapeMismatch(format!("input {t}x{f} shorter than kernel {:?}", g.kernel)))?;
    let wp = pack_forward(w);
    let klen = g.kernel.0 * g.kernel.1 * cb;
    let mut out = Tensor::tfc(to_n, fo_n, ca);
    let xd = x.data();
    let bd = bias.map(|b| b.data());
    let body = |(pos, row): (usize, &mut [T]), patch: &mut Vec<T>| {
        let (to, fo) = (pos / fo_n, pos % fo_n);
        gather_forward(xd, (t, f, cb), g, to, fo, patch);
        for (a, y) in row.iter_mut().enumerate() {
            let v = dot(&wp[a * klen..(a + 1) * klen], patch);
            *y = match bd {
                Some(b) => b[a] + v,
                None => v,
            };
        }
    };
    if to_n * fo_n * ca * klen >= PAR_WORK {
        out.data_mut()
            .par_chunks_mut(ca)
            .enumerate()
            .with_min_len(8)
            .for_each_init(|| vec![T::zero(); klen], |p, item| body(item, p));
    } else {
        let mut patch = vec![T::zero(); klen];
        out.data_mut()
            .chunks_mut(ca)
            .enumerate()
            .for_each(|item| body(item, &mut patch));
    }
    Ok(out)
}

/// Exact adjoint of [`conv2d`] (without bias) for an input of size `x_tf`,
/// evaluated only on input frames in `t_range`.
pub fn conv2d_adjoint_frames<T: Real>(
    y: &Tensor<T>,
    w: &Tensor<T>,
    g: &ConvGeom,
    x_tf: (usize, usize),
    t_range: std::ops::Range<usize>,
) -> Result<Tensor<T>> {
    let (ca, cb) = check_kernel(w, g)?;
    let (ty, fy, c) = y.dims3();
    if c != ca {
        return Err(Error::ShapeMismatch(format!("transposed conv input has {c} channels, kernel expects {ca}")));
    }
    if g.out_dims(x_tf.0, x_tf.1) != Some((ty, fy)) {
        return Err(Error::ShapeMismatch(format!(
            "transposed conv: {ty}x{fy} is not the forward image of {}x{}",
            x_tf.0, x_tf.1
        )));
    }
    if t_range.end > x_tf.0 || t_range.start > t_range.end {
        return Err(Error::InvalidArgument(format!("frame range {t_range:?} outside 0..{}", x_tf.0)));
    }
    let (kt, kf) = g.kernel;
    let (st, sf) = g.stride;
    let wp = pack_adjoint(w);
    let klen = kt * kf * ca;
    let fx = x_tf.1;
    let t0 = t_range.start;
    let mut out = Tensor::tfc(t_range.len(), fx, cb);
    let yd = y.data();
    let body = |(pos, row): (usize, &mut [T]), patch: &mut Vec<T>| {
        let (ti, fi) = (t0 + pos / fx, pos % fx);
        for j in 0..kt {
            let num_t = ti as isize + g.time_pad.0 as isize - j as isize;
            let to = if num_t >= 0 && num_t as usize % st == 0 && (num_t as usize / st) < ty {
                Some(num_t as usize / st)
            } else {
                None
            };
            for k in 0..kf {
                let dst = &mut patch[(j * kf + k) * ca..(j * kf + k + 1) * ca];
                let num_f = fi as isize + g.freq_pad.0 as isize - k as isize;
                let fo = if num_f >= 0 && num_f as usize % sf == 0 && (num_f as usize / sf) < fy {
                    Some(num_f as usize / sf)
                } else {
                    None
                };
                match (to, fo) {
                    (Some(to), Some(fo)) => {
                        let base = (to * fy + fo) * ca;
                        dst.copy_from_slice(&yd[base..base + ca]);
                    }
                    _ => dst.fill(T::zero()),
                }
            }
        }
        for (b, x) in row.iter_mut().enumerate() {
            *x = dot(&wp[b * klen..(b + 1) * klen], patch);
        }
    };
    if t_range.len() * fx * cb * klen >= PAR_WORK {
        out.data_mut()
            .par_chunks_mut(cb)
            .enumerate()
            .with_min_len(8)
            .for_each_init(|| vec![T::zero(); klen], |p, item| body(item, p));
    } else {
        let mut patch = vec![T::zero(); klen];
        out.data_mut()
            .chunks_mut(cb)
            .enumerate()
            .for_each(|item| body(item, &mut patch));
    }
    Ok(out)
}

pub fn conv2d_adjoint<T: Real>(y: &Tensor<T>, w: &Tensor<T>, g: &ConvGeom, x_tf: (usize, usize)) -> Result<Tensor<T>> {
    conv2d_adjoint_frames(y, w, g, x_tf, 0..x_tf.0)
}

/// `d<y, dy>/dW` for `y = conv2d(x, W)`, in `[ca, cb, kt, kf]` layout.
pub fn conv2d_weight_grad<T: Real>(x: &Tensor<T>, dy: &Tensor<T>, g: &ConvGeom) -> Tensor<T> {
    let (t, f, cb) = x.dims3();
    let (to_n, fo_n, ca) = dy.dims3();
    let (kt, kf) = g.kernel;
    let klen = kt * kf * cb;
    let mut acc = vec![T::zero(); ca * klen];
    let mut patch = vec![T::zero(); klen];
    let dyd = dy.data();
    for to in 0..to_n {
        for fo in 0..fo_n {
            gather_forward(x.data(), (t, f, cb), g, to, fo, &mut patch);
            let grow = &dyd[(to * fo_n + fo) * ca..(to * fo_n + fo + 1) * ca];
            for (a, &gv) in grow.iter().enumerate() {
                if gv == T::zero() {
                    continue;
                }
                acc[a * klen..(a + 1) * klen]
                    .iter_mut()
                    .zip(&patch)
                    .for_each(|(d, &p)| *d += gv * p);
            }
        }
    }
    let mut out = Tensor::param_zeros(&[ca, cb, kt, kf]);
    let od = out.data_mut();
    for a in 0..ca {
        for b in 0..cb {
            for j in 0..kt {
                for k in 0..kf {
                    od[((a * cb + b) * kt + j) * kf + k] = acc[((a * kt + j) * kf + k) * cb + b];
                }
            }
        }
    }
    out
}

/// Per-channel sum over every position of a `[t, f, c]` map.
pub fn channel_sum<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (_, _, c) = x.dims3();
    let mut out = vec![T::zero(); c];
    for row in x.data().chunks_exact(c) {
        out.iter_mut().zip(row).for_each(|(o, &v)| *o += v);
    }
    Tensor::param(&[c], out).unwrap()
}

fn add_channel_bias<T: Real>(x: &mut Tensor<T>, b: &Tensor<T>) {
    let c = b.len();
    for row in x.data_mut().chunks_exact_mut(c) {
        row.iter_mut().zip(b.data()).for_each(|(o, &v)| *o += v);
    }
}

/// Causal convolution: time left-padded with `k_t - 1` zero frames.
pub fn conv2d_causal<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: &Tensor<T>,
    stride: (usize, usize),
    f_pad: (usize, usize),
) -> Result<Tensor<T>> {
    let kernel = kernel_of(w)?;
    conv2d(x, w, Some(bias), &ConvGeom::causal(kernel, stride, f_pad))
}

/// Causal transposed convolution with kernel stored `[c_in, c_out, k_t, k_f]`.
pub fn conv2d_transpose_causal<T: Real>(
    y: &Tensor<T>,
    w: &Tensor<T>,
    bias: &Tensor<T>,
    stride: (usize, usize),
    f_crop: (usize, usize),
) -> Result<Tensor<T>> {
    let g = ConvGeom::anticausal(kernel_of(w)?, stride, f_crop);
    let (ty, fy, _) = y.dims3();
    let x_tf = g
        .transposed_dims(ty, fy)
        .ok_or_else(|| Error::ShapeMismatch(format!("transposed conv crop {f_crop:?} too large")))?;
    if bias.len() != w.dim(1) {
        return Err(Error::ShapeMismatch(format!("bias {:?} for {} channels", bias.shape(), w.dim(1))));
    }
    let mut x = conv2d_adjoint(y, w, &g, x_tf)?;
    add_channel_bias(&mut x, bias);
    Ok(x)
}

pub(crate) fn kernel_of<T: Real>(w: &Tensor<T>) -> Result<(usize, usize)> {
    let s = w.shape();
    if s.len() != 4 {
        return Err(Error::ShapeMismatch(format!("kernel must be rank 4, got {s:?}")));
    }
    Ok((s[2], s[3]))
}

pub(crate) fn add_bias<T: Real>(x: &mut Tensor<T>, b: &Tensor<T>) {
    add_channel_bias(x, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::param(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn rand_map(rng: &mut ChaCha8Rng, t: usize, f: usize, c: usize) -> Tensor<f64> {
        let n = t * f * c;
        Tensor::tfc_from(t, f, c, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Quintuple-loop reference with explicit zero padding.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], g: &ConvGeom) -> Tensor<f64> {
        let (t, f, cb) = x.dims3();
        let s = w.shape();
        let (ca, kt, kf) = (s[0], s[2], s[3]);
        let (to_n, fo_n) = g.out_dims(t, f).unwrap();
        let mut out = Tensor::tfc(to_n, fo_n, ca);
        for to in 0..to_n {
            for fo in 0..fo_n {
                for a in 0..ca {
                    let mut acc = b[a];
                    for bb in 0..cb {
                        for j in 0..kt {
                            for k in 0..kf {
                                let ti = (to * g.stride.0 + j) as isize - g.time_pad.0 as isize;
                                let fi = (fo * g.stride.1 + k) as isize - g.freq_pad.0 as isize;
                                if ti >= 0 && (ti as usize) < t && fi >= 0 && (fi as usize) < f {
                                    acc += w.data()[((a * cb + bb) * kt + j) * kf + k]
                                        * x.data()[(ti as usize * f + fi as usize) * cb + bb];
                                }
                            }
                        }
                    }
                    out.data_mut()[(to * fo_n + fo) * ca + a] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_passes_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_map(&mut rng, 4, 5, 3);
        let mut w = Tensor::param_zeros(&[3, 3, 1, 1]);
        for c in 0..3 {
            w.data_mut()[c * 3 + c] = 1.0;
        }
        let b = Tensor::param_zeros(&[3]);
        let y = conv2d_causal(&x, &w, &b, (1, 1), (0, 0)).unwrap();
        assert_eq!(y, x);
        let z = conv2d_transpose_causal(&x, &w, &b, (1, 1), (0, 0)).unwrap();
        assert_eq!(z, x);
    }

    #[test]
    fn matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_map(&mut rng, 6, 9, 2);
        let w = rand_tensor(&mut rng, &[3, 2, 2, 3]);
        let b: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bt = Tensor::param(&[3], b.clone()).unwrap();
        for stride in [(1, 1), (1, 2), (2, 2)] {
            for pad in [(0, 0), (1, 0), (1, 1)] {
                let g = ConvGeom::causal((2, 3), stride, pad);
                let fast = conv2d(&x, &w, Some(&bt), &g).unwrap();
                let slow = naive_conv(&x, &w, &b, &g);
                assert_eq!(fast.shape(), slow.shape());
                for (a, b) in fast.data().iter().zip(slow.data()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_input_transposed_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = rand_tensor(&mut rng, &[4, 2, 2, 3]);
        let y = Tensor::tfc(5, 4, 4);
        let b = Tensor::param_zeros(&[2]);
        let x = conv2d_transpose_causal(&y, &w, &b, (1, 2), (1, 0)).unwrap();
        assert_eq!(x.shape(), &[5, 8, 2]);
        assert!(x.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transposed_is_causal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = rand_tensor(&mut rng, &[3, 2, 2, 3]);
        let b = Tensor::param_zeros(&[2]);
        let y = rand_map(&mut rng, 7, 4, 3);
        let base = conv2d_transpose_causal(&y, &w, &b, (1, 1), (1, 1)).unwrap();
        let mut y2 = y.clone();
        let row = 4 * 3;
        for v in &mut y2.data_mut()[4 * row..] {
            *v += 1.0;
        }
        let pert = conv2d_transpose_causal(&y2, &w, &b, (1, 1), (1, 1)).unwrap();
        let out_row = base.dim(1) * 2;
        assert_eq!(&base.data()[..4 * out_row], &pert.data()[..4 * out_row]);
        assert_ne!(&base.data()[4 * out_row..], &pert.data()[4 * out_row..]);
    }

    #[test]
    fn frame_range_matches_full() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = rand_tensor(&mut rng, &[3, 2, 2, 3]);
        let b = rand_tensor(&mut rng, &[2]);
        let y = rand_map(&mut rng, 5, 4, 3);
        let full = conv2d_transpose_causal(&y, &w, &b, (1, 2), (1, 0)).unwrap();
        let g = ConvGeom::anticausal((2, 3), (1, 2), (1, 0));
        let x_tf = g.transposed_dims(5, 4).unwrap();
        let mut last = conv2d_adjoint_frames(&y, &w, &g, x_tf, 4..5).unwrap();
        add_bias(&mut last, &b);
        assert_eq!(last, full.time_slice(4, 5));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let x = Tensor::<f32>::tfc(3, 4, 2);
        let w = Tensor::param_zeros(&[1, 3, 1, 1]);
        let b = Tensor::param_zeros(&[1]);
        assert!(matches!(
            conv2d_causal(&x, &w, &b, (1, 1), (0, 0)),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
