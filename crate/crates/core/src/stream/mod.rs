//! Frame-by-frame inference with fixed latency and bounded state.

mod bench;

pub use bench::{bench_rtf, BenchReport, REFERENCE_GFLOPS, MIN_BENCH_SECONDS};

use std::collections::{HashMap, VecDeque};

use crate::error::{Error, Result};
use crate::model::{apply_mask, forward, CrmMask, ModelConfig, ModelWeights};
use crate::nn::conv::{add_bias, conv2d_adjoint_frames};
use crate::nn::lstm::bilstm_frames;
use crate::nn::tape::{bn_params, lstm_params, param};
use crate::nn::{batch_norm, conv2d, fully_connected, iln, prelu, BinStates, BnMode, ConvGeom, Graph, ParamMap, Tensor, ILN_EPS};
use crate::stft::{Spectrogram, Stft, StftConfig};

/// Input samples consumed before the first output sample is released:
/// one analysis window plus one synthesis hop.
pub const LATENCY_SAMPLES: usize = 600;

const WIN: usize = 400;
const HOP: usize = 200;

/// Evaluates the network on a single new frame, reading and updating the
/// per-layer time context.
struct FrameGraph<'a> {
    params: &'a ParamMap<f32>,
    /// Last `k_t - 1` input frames of every time-convolving layer.
    history: &'a mut HashMap<String, Tensor<f32>>,
    inter: &'a mut HashMap<String, BinStates<f32>>,
}

impl FrameGraph<'_> {
    /// `[k_t, f, c]` window ending with `x`; the history slides by one frame.
    fn window(&mut self, prefix: &str, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let hist = self
            .history
            .get_mut(prefix)
            .ok_or_else(|| Error::InvalidConfig(format!("no stream history for {prefix}")))?;
        let (kt1, f, c) = hist.dims3();
        let (t, fx, cx) = x.dims3();
        if (t, fx, cx) != (1, f, c) {
            return Err(Error::ShapeMismatch(format!("{prefix}: frame {t}x{fx}x{cx}, history {kt1}x{f}x{c}")));
        }
        let mut data = Vec::with_capacity((kt1 + 1) * f * c);
        data.extend_from_slice(hist.data());
        data.extend_from_slice(x.data());
        let win = Tensor::tfc_from(kt1 + 1, f, c, data)?;
        if kt1 > 0 {
            *hist = win.time_slice(1, kt1 + 1);
        }
        Ok(win)
    }
}

impl Graph<f32> for FrameGraph<'_> {
    type V = Tensor<f32>;

    fn params(&self) -> &ParamMap<f32> {
        self.params
    }
    fn value<'s>(&'s self, v: &'s Tensor<f32>) -> &'s Tensor<f32> {
        v
    }
    fn input(&mut self, x: Tensor<f32>) -> Tensor<f32> {
        x
    }
    fn conv(&mut self, x: &Tensor<f32>, prefix: &str, geom: ConvGeom) -> Result<Tensor<f32>> {
        let win = self.window(prefix, x)?;
        let w = param(self.params, &format!("{prefix}.weight"))?;
        let b = param(self.params, &format!("{prefix}.bias"))?;
        conv2d(&win, w, Some(b), &ConvGeom { time_pad: (0, 0), ..geom })
    }
    fn conv_t(&mut self, y: &Tensor<f32>, prefix: &str, geom: ConvGeom) -> Result<Tensor<f32>> {
        let win = self.window(prefix, y)?;
        let w = param(self.params, &format!("{prefix}.weight"))?;
        let b = param(self.params, &format!("{prefix}.bias"))?;
        let (t, f, _) = win.dims3();
        let target = geom
            .transposed_dims(t, f)
            .ok_or_else(|| Error::ShapeMismatch(format!("{prefix}: crop {:?} too large", geom.freq_pad)))?;
        let mut out = conv2d_adjoint_frames(&win, w, &geom, target, t - 1..t)?;
        add_bias(&mut out, b);
        Ok(out)
    }
    fn batch_norm(&mut self, x: &Tensor<f32>, prefix: &str) -> Result<Tensor<f32>> {
        batch_norm(x, bn_params(self.params, prefix)?, BnMode::Infer)
    }
    fn prelu(&mut self, x: &Tensor<f32>, name: &str) -> Result<Tensor<f32>> {
        prelu(x, param(self.params, name)?)
    }
    fn iln(&mut self, x: &Tensor<f32>, prefix: &str) -> Result<Tensor<f32>> {
        let g = param(self.params, &format!("{prefix}.gamma"))?;
        let b = param(self.params, &format!("{prefix}.beta"))?;
        iln(x, g, b, ILN_EPS as f32)
    }
    fn fc(&mut self, x: &Tensor<f32>, prefix: &str) -> Result<Tensor<f32>> {
        let w = param(self.params, &format!("{prefix}.weight"))?;
        let b = param(self.params, &format!("{prefix}.bias"))?;
        fully_connected(x, w, b)
    }
    fn intra_bilstm(&mut self, x: &Tensor<f32>, prefix: &str) -> Result<Tensor<f32>> {
        let pf = lstm_params(self.params, &format!("{prefix}.fwd"))?;
        let pb = lstm_params(self.params, &format!("{prefix}.bwd"))?;
        bilstm_frames(x, &pf, &pb, false).map(|(y, _)| y)
    }
    fn inter_lstm(&mut self, x: &Tensor<f32>, prefix: &str) -> Result<Tensor<f32>> {
        let p = lstm_params(self.params, prefix)?;
        let state = self
            .inter
            .get_mut(prefix)
            .ok_or_else(|| Error::InvalidConfig(format!("no stream state for {prefix}")))?;
        crate::nn::lstm::lstm_per_bin(x, &p, state, false).map(|(y, _)| y)
    }
    fn add(&mut self, a: &Tensor<f32>, b: &Tensor<f32>) -> Result<Tensor<f32>> {
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch(format!("add {:?} + {:?}", a.shape(), b.shape())));
        }
        let mut out = a.clone();
        out.add_assign(b);
        Ok(out)
    }
    fn concat(&mut self, a: &Tensor<f32>, b: &Tensor<f32>) -> Result<Tensor<f32>> {
        Tensor::concat_channels(a, b)
    }
}

/// Streaming enhancer over shared read-only weights.
///
/// Input is re-blocked into 200-sample hops. Output sample `k` is the
/// enhanced version of input sample `k`; the first 200 output samples are
/// released once 600 input samples have arrived and every later hop
/// releases 200 more. [`StreamState::flush`] drains the rest so that the
/// total output length equals the total input length.
pub struct StreamState<'w> {
    weights: &'w ModelWeights,
    stft: Stft<f32>,
    history: HashMap<String, Tensor<f32>>,
    inter: HashMap<String, BinStates<f32>>,
    /// Samples of the analysis window being filled, at most 400.
    inbuf: Vec<f32>,
    /// Overlap-add accumulator aligned with `inbuf`.
    ola: Vec<f32>,
    /// Completed output held back for the synthesis hop.
    ready: VecDeque<f32>,
    pushed: u64,
    emitted: u64,
    frames: u64,
    closed: bool,
}

impl<'w> StreamState<'w> {
    /// Zero-initialized stream. `cfg` must be the configuration the weights
    /// were built for.
    pub fn new(weights: &'w ModelWeights, cfg: &ModelConfig) -> Result<Self> {
        if weights.config() != cfg {
            return Err(Error::InvalidConfig(format!(
                "stream config {} does not match the weights ({})",
                cfg.variant.name(),
                weights.config().variant.name()
            )));
        }
        let plan = cfg.plan()?;
        let mut history = HashMap::new();
        for (i, l) in plan.iter().enumerate() {
            if l.stride.0 != 1 {
                return Err(Error::InvalidConfig(format!("layer {i} strides time by {}", l.stride.0)));
            }
            let kt1 = l.kernel.0 - 1;
            history.insert(format!("enc.{i}.conv"), Tensor::tfc(kt1, l.f_in, l.c_in));
            history.insert(format!("dec.{i}.deconv"), Tensor::tfc(kt1, l.f_out, 2 * l.c_out));
        }
        let bins = cfg.dprnn_freq()?;
        let inter = (0..cfg.n_dprnn)
            .map(|d| (format!("dprnn.{d}.inter.lstm"), BinStates::zeros(bins, cfg.inter_hidden)))
            .collect();
        Ok(Self {
            weights,
            stft: Stft::new(StftConfig::default())?,
            history,
            inter,
            inbuf: Vec::with_capacity(WIN),
            ola: vec![0.0; WIN],
            ready: VecDeque::with_capacity(2 * HOP),
            pushed: 0,
            emitted: 0,
            frames: 0,
            closed: false,
        })
    }

    pub fn for_weights(weights: &'w ModelWeights) -> Result<Self> {
        Self::new(weights, weights.config())
    }

    /// Feeds any number of samples and returns the output that became due.
    pub fn push(&mut self, chunk: &[f32]) -> Result<Vec<f32>> {
        if self.closed {
            return Err(Error::StreamClosed);
        }
        let mut rest = chunk;
        while !rest.is_empty() {
            let take = (WIN - self.inbuf.len()).min(rest.len());
            self.inbuf.extend_from_slice(&rest[..take]);
            rest = &rest[take..];
            if self.inbuf.len() == WIN {
                self.process_frame()?;
            }
        }
        self.pushed += chunk.len() as u64;
        let due = self.ready.len().saturating_sub(HOP);
        Ok(self.release(due))
    }

    /// Pads with at most 400 zeros so the last partial hop and the overlap
    /// tail are synthesized, returns the remaining output and closes the
    /// stream.
    pub fn flush(&mut self) -> Result<Vec<f32>> {
        if self.closed {
            return Err(Error::StreamClosed);
        }
        let n = self.pushed;
        let hop = HOP as u64;
        let pad = (n.div_ceil(hop) * hop + hop - n) as usize;
        let zeros = vec![0.0f32; pad];
        let mut rest: &[f32] = &zeros;
        while !rest.is_empty() {
            let take = (WIN - self.inbuf.len()).min(rest.len());
            self.inbuf.extend_from_slice(&rest[..take]);
            rest = &rest[take..];
            if self.inbuf.len() == WIN {
                self.process_frame()?;
            }
        }
        self.closed = true;
        let due = (n - self.emitted) as usize;
        Ok(self.release(due))
    }

    fn release(&mut self, n: usize) -> Vec<f32> {
        let n = n.min(self.ready.len());
        self.emitted += n as u64;
        self.ready.drain(..n).collect()
    }

    fn process_frame(&mut self) -> Result<()> {
        let bins = self.stft.config().n_bins();
        let mut x = Spectrogram::zeros(1, bins);
        self.stft.analyze_frame(&self.inbuf, &mut x.real, &mut x.imag);
        let cfg = self.weights.config();
        let mut g = FrameGraph {
            params: self.weights.params(),
            history: &mut self.history,
            inter: &mut self.inter,
        };
        let m = forward(&mut g, cfg, &x)?;
        let y = apply_mask(&x, &CrmMask::from_tensor(&m)?)?;
        let mut frame = vec![0.0f32; WIN];
        self.stft.synth_frame(&y.real, &y.imag, &mut frame);
        for (o, v) in self.ola.iter_mut().zip(&frame) {
            *o += *v;
        }
        if let Some(k) = self.ola[..HOP].iter().position(|v| !v.is_finite()) {
            return Err(Error::Diverged(format!("non-finite output in frame {} at offset {k}", self.frames)));
        }
        self.ready.extend(&self.ola[..HOP]);
        self.ola.copy_within(HOP.., 0);
        self.ola[WIN - HOP..].fill(0.0);
        self.inbuf.drain(..HOP);
        self.frames += 1;
        Ok(())
    }

    pub fn samples_pushed(&self) -> u64 {
        self.pushed
    }

    pub fn samples_emitted(&self) -> u64 {
        self.emitted
    }

    pub fn frames_processed(&self) -> u64 {
        self.frames
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Frequency bins of each inter-frame LSTM state.
    pub fn inter_state_bins(&self) -> Vec<usize> {
        let mut v: Vec<_> = self.inter.iter().map(|(k, s)| (k.clone(), s.bins())).collect();
        v.sort();
        v.into_iter().map(|(_, b)| b).collect()
    }

    /// Bytes of mutable per-stream state, buffers included at their fixed
    /// capacities.
    pub fn state_bytes(&self) -> usize {
        let f = std::mem::size_of::<f32>();
        let hist: usize = self.history.values().map(|t| t.len()).sum();
        let inter: usize = self.inter.values().map(|s| s.h.len() + s.c.len()).sum();
        (hist + inter + WIN + self.ola.len() + 2 * HOP) * f
    }
}

/// Streams a whole signal through fresh state in `chunk`-sample pushes,
/// flush included.
pub fn enhance_streaming(w: &ModelWeights, samples: &[f32], chunk: usize) -> Result<Vec<f32>> {
    if chunk == 0 {
        return Err(Error::InvalidArgument("chunk size must be positive".into()));
    }
    let mut st = StreamState::for_weights(w)?;
    let mut out = Vec::with_capacity(samples.len());
    for c in samples.chunks(chunk) {
        out.extend(st.push(c)?);
    }
    out.extend(st.flush()?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{gen_synthetic, Signal, SynthKind};
    use crate::model::{enhance_offline, Variant};

    fn micro(seed: u64) -> ModelWeights {
        ModelWeights::build(&ModelConfig::micro(), seed).unwrap()
    }

    fn input(len_s: f64, seed: u64) -> Vec<f32> {
        gen_synthetic(SynthKind::SpeechLike, len_s, seed).unwrap().into_samples()
    }

    #[test]
    fn first_output_after_exactly_600_samples() {
        let w = micro(1);
        let mut st = StreamState::for_weights(&w).unwrap();
        let x = input(0.1, 2);
        let mut got = Vec::new();
        for (i, &v) in x.iter().enumerate() {
            let out = st.push(&[v]).unwrap();
            if !out.is_empty() {
                got.push((i + 1, out.len()));
            }
        }
        assert_eq!(got.first(), Some(&(LATENCY_SAMPLES, HOP)));
        assert!(got.iter().all(|&(n, len)| len == HOP && n % HOP == 0));
        assert_eq!(st.samples_emitted(), (x.len() / HOP * HOP - 400) as u64);
    }

    #[test]
    fn chunking_is_invisible() {
        let w = micro(3);
        let x = input(0.37, 4);
        let whole = enhance_streaming(&w, &x, x.len()).unwrap();
        assert_eq!(whole.len(), x.len());
        for chunk in [1, 7, 200, 333] {
            assert_eq!(enhance_streaming(&w, &x, chunk).unwrap(), whole, "chunk {chunk}");
        }
    }

    #[test]
    fn matches_offline_bit_for_bit() {
        let w = micro(5);
        let x = input(0.5, 6);
        let streamed = enhance_streaming(&w, &x, 160).unwrap();
        let offline = enhance_offline(&w, &Signal::new(x.clone()).unwrap()).unwrap();
        // offline synthesis lacks the frame that starts one hop before its end
        let common = offline.len() - HOP;
        assert_eq!(&streamed[..common], &offline.samples()[..common]);
        // against an offline run on the flush-padded input, everything agrees
        let n = x.len();
        let mut padded = x.clone();
        padded.resize(n.div_ceil(HOP) * HOP + HOP, 0.0);
        let oracle = enhance_offline(&w, &Signal::new(padded).unwrap()).unwrap();
        assert_eq!(&streamed[..], &oracle.samples()[..n]);
    }

    #[test]
    fn closing_rules() {
        let w = micro(7);
        let mut st = StreamState::for_weights(&w).unwrap();
        assert!(st.flush().unwrap().is_empty());
        assert!(matches!(st.flush(), Err(Error::StreamClosed)));
        assert!(matches!(st.push(&[0.0]), Err(Error::StreamClosed)));

        let mut st = StreamState::for_weights(&w).unwrap();
        let x = input(600.0 / 16000.0, 8);
        let head = st.push(&x).unwrap();
        let tail = st.flush().unwrap();
        assert_eq!((head.len(), tail.len()), (200, 400));
    }

    #[test]
    fn fresh_states_agree_and_config_must_match() {
        let w = micro(9);
        let x = input(0.2, 1);
        let mut a = StreamState::for_weights(&w).unwrap();
        let mut b = StreamState::for_weights(&w).unwrap();
        assert_eq!(a.push(&x).unwrap(), b.push(&x).unwrap());
        assert!(StreamState::new(&w, &ModelConfig::gradcheck()).is_err());
    }

    #[test]
    fn state_size_is_constant() {
        let w = micro(2);
        let mut st = StreamState::for_weights(&w).unwrap();
        let before = st.state_bytes();
        st.push(&input(2.0, 3)).unwrap();
        assert_eq!(st.state_bytes(), before);
        assert_eq!(st.inbuf.capacity(), WIN);
        assert!(st.ready.len() <= 2 * HOP);
    }

    #[test]
    fn dpcrn3_keeps_25_bins_of_inter_state() {
        let w = ModelWeights::build(&ModelConfig::preset(Variant::Dpcrn3), 0).unwrap();
        let st = StreamState::for_weights(&w).unwrap();
        assert_eq!(st.inter_state_bins(), vec![25, 25]);
        let w1 = ModelWeights::build(&ModelConfig::default(), 0).unwrap();
        assert_eq!(StreamState::for_weights(&w1).unwrap().inter_state_bins(), vec![50, 50]);
    }

    #[test]
    fn short_bench_is_refused() {
        assert!(bench_rtf(&micro(0), 5.0, 1).is_err());
    }
}
