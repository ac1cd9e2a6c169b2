//! LSTM cells and the two sequence layouts used by the dual-path block.
//!
//! Gate order in every weight matrix is `(input, forget, cell, output)`:
//! rows `[0, h)` are the input gate, `[h, 2h)` forget, `[2h, 3h)` the
//! cell candidate and `[3h, 4h)` the output gate. There is one bias vector
//! of length `4h`.

use rayon::prelude::*;

use super::conv::dot;
use super::tensor::{Axis, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct LstmParams<'a, T: Real> {
    /// `[4h, d_in]`
    pub w_ih: &'a Tensor<T>,
    /// `[4h, h]`
    pub w_hh: &'a Tensor<T>,
    /// `[4h]`
    pub bias: &'a Tensor<T>,
}

impl<'a, T: Real> LstmParams<'a, T> {
    pub fn hidden(&self) -> usize {
        self.w_hh.dim(1)
    }

    pub fn input(&self) -> usize {
        self.w_ih.dim(1)
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.w_hh.shape().get(1).copied().unwrap_or(0);
        let ok = self.w_ih.shape().len() == 2
            && self.w_hh.shape() == [4 * h, h]
            && self.w_ih.dim(0) == 4 * h
            && self.bias.len() == 4 * h;
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "LSTM weights {:?}/{:?}/{:?} are inconsistent",
                self.w_ih.shape(),
                self.w_hh.shape(),
                self.bias.shape()
            )))
        }
    }
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// One recurrence step in place. `gates` is scratch of length `4h` and holds
/// the activated gates on return.
#[inline]
pub fn lstm_step<T: Real>(p: &LstmParams<'_, T>, x: &[T], h: &mut [T], c: &mut [T], gates: &mut [T]) {
    let hd = h.len();
    let d_in = x.len();
    let (wi, wh, b) = (p.w_ih.data(), p.w_hh.data(), p.bias.data());
    for r in 0..4 * hd {
        gates[r] = b[r] + dot(&wi[r * d_in..(r + 1) * d_in], x) + dot(&wh[r * hd..(r + 1) * hd], h);
    }
    for k in 0..hd {
        let i = sigmoid(gates[k]);
        let f = sigmoid(gates[hd + k]);
        let g = gates[2 * hd + k].tanh();
        let o = sigmoid(gates[3 * hd + k]);
        gates[k] = i;
        gates[hd + k] = f;
        gates[2 * hd + k] = g;
        gates[3 * hd + k] = o;
        c[k] = f * c[k] + i * g;
        h[k] = o * c[k].tanh();
    }
}

/// Saved activations of one sequence, everything row-major per step.
#[derive(Debug, Clone)]
pub struct LstmCache<T: Real> {
    pub steps: usize,
    pub x: Vec<T>,
    /// `steps + 1` rows, row 0 is the initial state.
    pub h: Vec<T>,
    pub c: Vec<T>,
    pub gates: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct LstmGrads<T: Real> {
    pub w_ih: Tensor<T>,
    pub w_hh: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> LstmGrads<T> {
    pub fn zeros_like(p: &LstmParams<'_, T>) -> Self {
        Self {
            w_ih: Tensor::param_zeros(p.w_ih.shape()),
            w_hh: Tensor::param_zeros(p.w_hh.shape()),
            bias: Tensor::param_zeros(p.bias.shape()),
        }
    }

    pub fn accumulate(&mut self, other: &Self) {
        self.w_ih.add_assign(&other.w_ih);
        self.w_hh.add_assign(&other.w_hh);
        self.bias.add_assign(&other.bias);
    }
}

fn run_seq<T: Real>(p: &LstmParams<'_, T>, x: &[T], h0: &[T], c0: &[T], reverse: bool, cache: Option<&mut LstmCache<T>>) -> (Vec<T>, Vec<T>, Vec<T>) {
    let hd = p.hidden();
    let d_in = p.input();
    let steps = x.len() / d_in;
    let mut h = h0.to_vec();
    let mut c = c0.to_vec();
    let mut gates = vec![T::zero(); 4 * hd];
    let mut out = vec![T::zero(); steps * hd];
    let mut cache = cache;
    if let Some(cache) = cache.as_deref_mut() {
        cache.steps = steps;
        cache.x = x.to_vec();
        cache.h = Vec::with_capacity((steps + 1) * hd);
        cache.c = Vec::with_capacity((steps + 1) * hd);
        cache.gates = Vec::with_capacity(steps * 4 * hd);
        cache.h.extend_from_slice(&h);
        cache.c.extend_from_slice(&c);
    }
    for n in 0..steps {
        let s = if reverse { steps - 1 - n } else { n };
        lstm_step(p, &x[s * d_in..(s + 1) * d_in], &mut h, &mut c, &mut gates);
        out[s * hd..(s + 1) * hd].copy_from_slice(&h);
        if let Some(cache) = cache.as_deref_mut() {
            cache.h.extend_from_slice(&h);
            cache.c.extend_from_slice(&c);
            cache.gates.extend_from_slice(&gates);
        }
    }
    (out, h, c)
}

/// Runs a unidirectional LSTM over `x: [steps, d_in]` from `state0 = (h, c)`.
/// Returns every hidden output `[steps, h]` and the final state.
pub fn lstm_seq<T: Real>(x: &Tensor<T>, p: &LstmParams<'_, T>, state0: (&[T], &[T])) -> Result<(Tensor<T>, (Vec<T>, Vec<T>))> {
    p.validate()?;
    let hd = p.hidden();
    let d_in = *x.shape().last().unwrap_or(&0);
    if d_in != p.input() {
        return Err(Error::ShapeMismatch(format!("LSTM input width {d_in}, weights expect {}", p.input())));
    }
    if state0.0.len() != hd || state0.1.len() != hd {
        return Err(Error::ShapeMismatch(format!(
            "LSTM state ({}, {}) for hidden size {hd}",
            state0.0.len(),
            state0.1.len()
        )));
    }
    let (out, h, c) = run_seq(p, x.data(), state0.0, state0.1, false, None);
    let steps = x.len() / d_in.max(1);
    Ok((Tensor::from_vec(&[steps, hd], &[Axis::Generic, Axis::Generic], out)?, (h, c)))
}

/// Backpropagation through one cached sequence. `dh_out` is `[steps, h]`
/// in natural (not processing) order. Returns `dx` in natural order.
pub fn lstm_seq_backward<T: Real>(p: &LstmParams<'_, T>, cache: &LstmCache<T>, dh_out: &[T], reverse: bool, grads: &mut LstmGrads<T>) -> Vec<T> {
    let hd = p.hidden();
    let d_in = p.input();
    let steps = cache.steps;
    let mut dx = vec![T::zero(); steps * d_in];
    let mut dh_next = vec![T::zero(); hd];
    let mut dc_next = vec![T::zero(); hd];
    let mut da = vec![T::zero(); 4 * hd];
    let (wi, wh) = (p.w_ih.data(), p.w_hh.data());
    for n in (0..steps).rev() {
        let s = if reverse { steps - 1 - n } else { n };
        let g = &cache.gates[n * 4 * hd..(n + 1) * 4 * hd];
        let c_prev = &cache.c[n * hd..(n + 1) * hd];
        let c_cur = &cache.c[(n + 1) * hd..(n + 2) * hd];
        let h_prev = &cache.h[n * hd..(n + 1) * hd];
        let x = &cache.x[s * d_in..(s + 1) * d_in];
        for k in 0..hd {
            let (i, f, gg, o) = (g[k], g[hd + k], g[2 * hd + k], g[3 * hd + k]);
            let dh = dh_out[s * hd + k] + dh_next[k];
            let tc = c_cur[k].tanh();
            let d_o = dh * tc;
            let dc = dc_next[k] + dh * o * (T::one() - tc * tc);
            let di = dc * gg;
            let dg = dc * i;
            let df = dc * c_prev[k];
            dc_next[k] = dc * f;
            da[k] = di * i * (T::one() - i);
            da[hd + k] = df * f * (T::one() - f);
            da[2 * hd + k] = dg * (T::one() - gg * gg);
            da[3 * hd + k] = d_o * o * (T::one() - o);
        }
        dh_next.iter_mut().for_each(|v| *v = T::zero());
        let dxs = &mut dx[s * d_in..(s + 1) * d_in];
        for r in 0..4 * hd {
            let a = da[r];
            if a == T::zero() {
                continue;
            }
            grads.bias.data_mut()[r] += a;
            let gw = &mut grads.w_ih.data_mut()[r * d_in..(r + 1) * d_in];
            let wrow = &wi[r * d_in..(r + 1) * d_in];
            for j in 0..d_in {
                gw[j] += a * x[j];
                dxs[j] += a * wrow[j];
            }
            let gwh = &mut grads.w_hh.data_mut()[r * hd..(r + 1) * hd];
            let whrow = &wh[r * hd..(r + 1) * hd];
            for j in 0..hd {
                gwh[j] += a * h_prev[j];
                dh_next[j] += a * whrow[j];
            }
        }
    }
    dx
}

/// Bidirectional LSTM over the leading axis of `x: [steps, d_in]`; both
/// directions start from a zero state. Output is `[steps, 2h]` with the
/// forward half first.
pub fn bilstm_over_axis<T: Real>(x: &Tensor<T>, fwd: &LstmParams<'_, T>, bwd: &LstmParams<'_, T>) -> Result<Tensor<T>> {
    fwd.validate()?;
    bwd.validate()?;
    if fwd.hidden() != bwd.hidden() || fwd.input() != bwd.input() {
        return Err(Error::ShapeMismatch("BiLSTM directions configured differently".into()));
    }
    let d_in = *x.shape().last().unwrap_or(&0);
    if d_in != fwd.input() {
        return Err(Error::ShapeMismatch(format!("BiLSTM input width {d_in}, weights expect {}", fwd.input())));
    }
    let steps = x.len() / d_in.max(1);
    let hd = fwd.hidden();
    let zero = vec![T::zero(); hd];
    let (of, _, _) = run_seq(fwd, x.data(), &zero, &zero, false, None);
    let (ob, _, _) = run_seq(bwd, x.data(), &zero, &zero, true, None);
    let mut out = Vec::with_capacity(steps * 2 * hd);
    for s in 0..steps {
        out.extend_from_slice(&of[s * hd..(s + 1) * hd]);
        out.extend_from_slice(&ob[s * hd..(s + 1) * hd]);
    }
    Tensor::from_vec(&[steps, 2 * hd], &[Axis::Generic, Axis::Generic], out)
}

/// Per-frame caches of the intra-frame BiLSTM.
#[derive(Debug, Clone)]
pub struct IntraCache<T: Real> {
    pub frames: Vec<(LstmCache<T>, LstmCache<T>)>,
}

fn empty_cache<T: Real>() -> LstmCache<T> {
    LstmCache {
        steps: 0,
        x: Vec::new(),
        h: Vec::new(),
        c: Vec::new(),
        gates: Vec::new(),
    }
}

/// Intra-frame BiLSTM: for each frame of `x: [t, f, c]` runs a BiLSTM along
/// the frequency axis. Output `[t, f, 2h]`.
pub fn bilstm_frames<T: Real>(x: &Tensor<T>, fwd: &LstmParams<'_, T>, bwd: &LstmParams<'_, T>, keep: bool) -> Result<(Tensor<T>, Option<IntraCache<T>>)> {
    fwd.validate()?;
    bwd.validate()?;
    let (t, f, c) = x.dims3();
    if c != fwd.input() || c != bwd.input() || fwd.hidden() != bwd.hidden() {
        return Err(Error::ShapeMismatch(format!(
            "intra BiLSTM input {c} channels, weights expect {}/{}",
            fwd.input(),
            bwd.input()
        )));
    }
    let hd = fwd.hidden();
    let zero = vec![T::zero(); hd];
    let frame = f * c;
    let per_frame = |ti: usize| {
        let xs = &x.data()[ti * frame..(ti + 1) * frame];
        let (mut cf, mut cb) = (empty_cache(), empty_cache());
        let (of, _, _) = run_seq(fwd, xs, &zero, &zero, false, keep.then_some(&mut cf));
        let (ob, _, _) = run_seq(bwd, xs, &zero, &zero, true, keep.then_some(&mut cb));
        let mut out = Vec::with_capacity(f * 2 * hd);
        for s in 0..f {
            out.extend_from_slice(&of[s * hd..(s + 1) * hd]);
            out.extend_from_slice(&ob[s * hd..(s + 1) * hd]);
        }
        (out, (cf, cb))
    };
    let results: Vec<_> = if t > 1 && f * hd * (c + hd) * t > 1 << 14 {
        (0..t).into_par_iter().map(per_frame).collect()
    } else {
        (0..t).map(per_frame).collect()
    };
    let mut data = Vec::with_capacity(t * f * 2 * hd);
    let mut caches = Vec::with_capacity(if keep { t } else { 0 });
    for (out, cache) in results {
        data.extend_from_slice(&out);
        if keep {
            caches.push(cache);
        }
    }
    let y = Tensor::tfc_from(t, f, 2 * hd, data)?;
    Ok((y, keep.then_some(IntraCache { frames: caches })))
}

/// Returns `dx: [t, f, c]`, accumulating parameter gradients.
pub fn bilstm_frames_backward<T: Real>(
    fwd: &LstmParams<'_, T>,
    bwd: &LstmParams<'_, T>,
    cache: &IntraCache<T>,
    dy: &Tensor<T>,
    gf: &mut LstmGrads<T>,
    gb: &mut LstmGrads<T>,
) -> Tensor<T> {
    let (t, f, two_h) = dy.dims3();
    let hd = two_h / 2;
    let c = fwd.input();
    let mut dx = Tensor::tfc(t, f, c);
    let mut dhf = vec![T::zero(); f * hd];
    let mut dhb = vec![T::zero(); f * hd];
    for ti in 0..t {
        let drow = &dy.data()[ti * f * two_h..(ti + 1) * f * two_h];
        for s in 0..f {
            dhf[s * hd..(s + 1) * hd].copy_from_slice(&drow[s * two_h..s * two_h + hd]);
            dhb[s * hd..(s + 1) * hd].copy_from_slice(&drow[s * two_h + hd..(s + 1) * two_h]);
        }
        let (cf, cb) = &cache.frames[ti];
        let dxf = lstm_seq_backward(fwd, cf, &dhf, false, gf);
        let dxb = lstm_seq_backward(bwd, cb, &dhb, true, gb);
        let out = &mut dx.data_mut()[ti * f * c..(ti + 1) * f * c];
        for i in 0..f * c {
            out[i] = dxf[i] + dxb[i];
        }
    }
    dx
}

/// Per-bin recurrent state of the inter-frame LSTM: `f` independent
/// `(h, c)` pairs stored as `[f, h]` planes.
#[derive(Debug, Clone, PartialEq)]
pub struct BinStates<T: Real> {
    pub h: Vec<T>,
    pub c: Vec<T>,
    pub hidden: usize,
}

impl<T: Real> BinStates<T> {
    pub fn zeros(bins: usize, hidden: usize) -> Self {
        Self {
            h: vec![T::zero(); bins * hidden],
            c: vec![T::zero(); bins * hidden],
            hidden,
        }
    }

    pub fn bins(&self) -> usize {
        self.h.len() / self.hidden.max(1)
    }
}

/// Inter-frame LSTM: every frequency bin of `x: [t, f, c]` is an independent
/// sequence over time. `state` carries `(h, c)` per bin across calls.
/// Output `[t, f, h]`.
pub fn lstm_per_bin<T: Real>(x: &Tensor<T>, p: &LstmParams<'_, T>, state: &mut BinStates<T>, keep: bool) -> Result<(Tensor<T>, Option<Vec<LstmCache<T>>>)> {
    p.validate()?;
    let (t, f, c) = x.dims3();
    let hd = p.hidden();
    if c != p.input() {
        return Err(Error::ShapeMismatch(format!("inter LSTM input {c} channels, weights expect {}", p.input())));
    }
    if state.bins() != f || state.hidden != hd {
        return Err(Error::ShapeMismatch(format!(
            "inter LSTM state holds {} bins x {}, input needs {f} x {hd}",
            state.bins(),
            state.hidden
        )));
    }
    let per_bin = |(fi, (h, cc)): (usize, (&mut [T], &mut [T]))| {
        let mut seq = Vec::with_capacity(t * c);
        for ti in 0..t {
            let base = (ti * f + fi) * c;
            seq.extend_from_slice(&x.data()[base..base + c]);
        }
        let mut cache = empty_cache();
        let (out, hn, cn) = run_seq(p, &seq, h, cc, false, keep.then_some(&mut cache));
        h.copy_from_slice(&hn);
        cc.copy_from_slice(&cn);
        (out, cache)
    };
    let hs = state.h.chunks_mut(hd);
    let cs = state.c.chunks_mut(hd);
    let results: Vec<_> = if f > 1 && t * f * hd * (c + hd) > 1 << 14 {
        hs.zip(cs).collect::<Vec<_>>().into_par_iter().enumerate().map(per_bin).collect()
    } else {
        hs.zip(cs).enumerate().map(per_bin).collect()
    };
    let mut y = Tensor::tfc(t, f, hd);
    let mut caches = Vec::with_capacity(if keep { f } else { 0 });
    for (fi, (out, cache)) in results.into_iter().enumerate() {
        for ti in 0..t {
            let base = (ti * f + fi) * hd;
            y.data_mut()[base..base + hd].copy_from_slice(&out[ti * hd..(ti + 1) * hd]);
        }
        if keep {
            caches.push(cache);
        }
    }
    Ok((y, keep.then_some(caches)))
}

pub fn lstm_per_bin_backward<T: Real>(p: &LstmParams<'_, T>, caches: &[LstmCache<T>], dy: &Tensor<T>, grads: &mut LstmGrads<T>) -> Tensor<T> {
    let (t, f, hd) = dy.dims3();
    let c = p.input();
    let mut dx = Tensor::tfc(t, f, c);
    let mut dh = vec![T::zero(); t * hd];
    for (fi, cache) in caches.iter().enumerate() {
        for ti in 0..t {
            let base = (ti * f + fi) * hd;
            dh[ti * hd..(ti + 1) * hd].copy_from_slice(&dy.data()[base..base + hd]);
        }
        let dxs = lstm_seq_backward(p, cache, &dh, false, grads);
        for ti in 0..t {
            let base = (ti * f + fi) * c;
            dx.data_mut()[base..base + c].copy_from_slice(&dxs[ti * c..(ti + 1) * c]);
        }
    }
    dx
}
