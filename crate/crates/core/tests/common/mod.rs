//! Shared trial generators and checks for the integration tests and the
//! acceptance runner.
#![allow(dead_code)]

use dpcrn::audio::{gen_synthetic, mix_at_snr, MixSpec, Signal, SynthKind};
use dpcrn::model::{
    apply_mask, apply_mask_backward, enhance_offline, predict_mask, CrmMask, ModelConfig, ModelWeights, Variant,
};
use dpcrn::nn::{backward, BnMode, ConvGeom, Eval, GradTape, Graph, ParamMap, Tensor};
use dpcrn::stft::{Spectrogram, Stft, StftConfig};
use dpcrn::stream::enhance_streaming;
use dpcrn::train::{breakdown, breakdown_grad};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const HOP: usize = 200;
pub const WIN: usize = 400;

pub const FD_STEP: f64 = 1e-4;
pub const GRAD_TOL: f64 = 1e-4;
pub const GRAD_MIN_FRACTION: f64 = 0.99;

/// Weights for `cfg` with normalization statistics, affine terms, PReLU
/// slopes and biases moved away from their initial constants.
pub fn perturbed_weights(cfg: &ModelConfig, seed: u64) -> ModelWeights {
    let mut w = ModelWeights::build(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    for (name, t) in w.params_mut().iter_mut() {
        for v in t.data_mut() {
            if name.ends_with(".gamma") || name.ends_with(".running_var") {
                *v = rng.gen_range(0.5..1.5);
            } else if name.ends_with("alpha") {
                *v = rng.gen_range(0.05..0.45);
            } else if name.ends_with(".beta") || name.ends_with(".bias") || name.ends_with(".running_mean") {
                *v += rng.gen_range(-0.2..0.2);
            }
        }
    }
    w
}

/// Noisy speech-like input at a random SNR and level.
pub fn noisy_input(duration_s: f64, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = gen_synthetic(SynthKind::SpeechLike, duration_s, rng.gen()).unwrap();
    let n = gen_synthetic(SynthKind::WhiteNoise, duration_s, rng.gen()).unwrap();
    let spec = MixSpec { snr_db: rng.gen_range(-5.0..5.0), seed: rng.gen() };
    let gain = rng.gen_range(0.3f32..2.0);
    let (m, _) = mix_at_snr(&s, &n, spec).unwrap();
    m.samples().iter().map(|v| v * gain).collect()
}

/// Trial `i` of a suite: mostly small models, with every tenth trial on the
/// full DPCRN-1 and one on DPCRN-3.
pub fn trial_config(i: usize) -> ModelConfig {
    match i % 10 {
        0 => ModelConfig::default(),
        5 if i == 5 => ModelConfig::preset(Variant::Dpcrn3),
        k if k % 2 == 1 => ModelConfig::micro(),
        _ => ModelConfig::gradcheck(),
    }
}

fn is_large(cfg: &ModelConfig) -> bool {
    cfg.enc_channels.iter().sum::<usize>() > 100
}

pub struct CausalityTrial {
    pub t0: usize,
    pub frames: usize,
    pub mask_identical: bool,
    pub output_identical: bool,
}

/// Zeroes the input after the last sample of frame `t0` and compares the
/// mask up to `t0` and the enhanced samples that depend only on frames up
/// to `t0`.
pub fn causality_trial(i: usize) -> CausalityTrial {
    let cfg = trial_config(i);
    let seed = 1000 + i as u64;
    let w = perturbed_weights(&cfg, seed);
    let dur = if is_large(&cfg) { 0.5 } else { 1.0 };
    let x = noisy_input(dur, seed);
    let stft = Stft::<f32>::new(StftConfig::default()).unwrap();
    let frames = stft.config().frames_for(x.len());
    let t0 = ChaCha8Rng::seed_from_u64(seed).gen_range(0..frames - 1);
    let mut cut = x.clone();
    cut[t0 * HOP + WIN..].iter_mut().for_each(|v| *v = 0.0);

    let enhance = |x: &[f32]| {
        let spec = stft.analyze(x).unwrap();
        let m = predict_mask(&w, &spec).unwrap();
        let y = stft.synthesize(&apply_mask(&spec, &m).unwrap()).unwrap();
        (m, y)
    };
    let (m_full, y_full) = enhance(&x);
    let (m_cut, y_cut) = enhance(&cut);
    let k = (t0 + 1) * m_full.bins;
    let mask_identical = m_full.real[..k] == m_cut.real[..k] && m_full.imag[..k] == m_cut.imag[..k];
    let n = (t0 + 1) * HOP;
    let output_identical = y_full[..n] == y_cut[..n];
    CausalityTrial { t0, frames, mask_identical, output_identical }
}

/// Largest streaming-versus-offline deviation over the samples both paths
/// compute from the same frames, relative to the offline peak.
pub fn streaming_trial(i: usize) -> f64 {
    let cfg = trial_config(i);
    let seed = 2000 + i as u64;
    let w = perturbed_weights(&cfg, seed);
    let x = noisy_input(3.0, seed);
    let chunk = ChaCha8Rng::seed_from_u64(seed).gen_range(1..=500);
    let streamed = enhance_streaming(&w, &x, chunk).unwrap();
    let offline = enhance_offline(&w, &Signal::new(x).unwrap()).unwrap();
    let common = offline.len() - HOP;
    let o = &offline.samples()[..common];
    let peak = o.iter().fold(0.0f64, |m, v| m.max(v.abs() as f64)).max(f64::MIN_POSITIVE);
    o.iter()
        .zip(&streamed[..common])
        .map(|(a, b)| (*a as f64 - *b as f64).abs() / peak)
        .fold(0.0, f64::max)
}

// ---- per-layer gradients ----

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

#[derive(Debug, Clone)]
pub struct GradStats {
    pub name: &'static str,
    pub coords: usize,
    pub passed: usize,
    pub max_rel: f64,
    pub worst: String,
}

impl GradStats {
    fn new(name: &'static str) -> Self {
        Self { name, coords: 0, passed: 0, max_rel: 0.0, worst: String::new() }
    }

    fn record(&mut self, what: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        let e = rel_err(analytic, numeric);
        self.coords += 1;
        if e <= GRAD_TOL {
            self.passed += 1;
        }
        if e > self.max_rel || self.coords == 1 {
            self.max_rel = e;
            self.worst = format!("{} analytic {analytic:.6e} numeric {numeric:.6e}", what());
        }
    }

    pub fn fraction(&self) -> f64 {
        self.passed as f64 / self.coords.max(1) as f64
    }
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::param(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn rand_map(rng: &mut ChaCha8Rng, t: usize, f: usize, c: usize) -> Tensor<f64> {
    Tensor::tfc_from(t, f, c, (0..t * f * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// One layer driven through any graph.
trait Layer {
    fn run<G: Graph<f64>>(&self, g: &mut G, x: &G::V) -> G::V;
}

struct Conv(ConvGeom);
struct ConvT(ConvGeom);
struct Bn;
struct PRelu;
struct Iln;
struct Fc;
struct Intra;
struct Inter;
/// `concat(x, x) + concat(x, x)`
struct AddConcat;

impl Layer for Conv {
    fn run<G: Graph<f64>>(&self, g: &mut G, x: &G::V) -> G::V {
        g.conv(x, "l", self.0).unwrap()
    }
}
impl Layer for ConvT {
    fn run<G: Graph<f64>>(&self, g: &mut G, x: &G::V) -> G::V {
        g.conv_t(x, "l", self.0).unwrap()
    }
}
impl Layer for Bn {
    fn run<G: Graph<f64>>(&self, g: &mut G, x: &G::V) -> G::V {
        g.batch_norm(x, "l").unwrap()
    }
}
impl Layer for PRelu {
    fn run<G: Graph<f64>>(&self, g: &mut G, x: &G::V) -> G::V {
        g.prelu(x, "l.alpha").unwrap()
    }
}
impl Layer for Iln {
    fn run<G: Graph<f64>>(&self, g: &mut G, x: &G::V) -> G::V {
        g.iln(x, "l").unwrap()
    }
}
impl Layer for Fc {
    fn run<G: Graph<f64>>(&self, g: &mut G, x: &G::V) -> G::V {
        g.fc(x, "l").unwrap()
    }
}
impl Layer for Intra {
    fn run<G: Graph<f64>>(&self, g: &mut G, x: &G::V) -> G::V {
        g.intra_bilstm(x, "l").unwrap()
    }
}
impl Layer for Inter {
    fn run<G: Graph<f64>>(&self, g: &mut G, x: &G::V) -> G::V {
        g.inter_lstm(x, "l").unwrap()
    }
}
impl Layer for AddConcat {
    fn run<G: Graph<f64>>(&self, g: &mut G, x: &G::V) -> G::V {
        let c = g.concat(x, x).unwrap();
        g.add(&c, &c).unwrap()
    }
}

/// Differentiates `<layer(x), r>` for a random `r` in every input and
/// trainable parameter coordinate.
fn check(
    name: &'static str,
    layer: &impl Layer,
    params: &ParamMap<f64>,
    x: &Tensor<f64>,
    mode: BnMode,
    seed: u64,
) -> GradStats {
    let mut tape = GradTape::new(params, mode);
    let xi = tape.input(x.clone());
    let y = layer.run(&mut tape, &xi);
    let out = tape.value(&y).clone();
    tape.set_output(y);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = Tensor::from_vec(out.shape(), out.axes(), (0..out.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .unwrap();
    let grads = backward(&tape, &r).unwrap();
    let f = |p: &ParamMap<f64>, x: &Tensor<f64>| {
        let mut g = Eval::with_mode(p, mode);
        let xv = g.input(x.clone());
        layer.run(&mut g, &xv).dot(&r)
    };
    let h = FD_STEP;
    let mut st = GradStats::new(name);
    let dx = &grads.leaves[&xi];
    for i in 0..x.len() {
        let (mut up, mut dn) = (x.clone(), x.clone());
        up.data_mut()[i] += h;
        dn.data_mut()[i] -= h;
        let num = (f(params, &up) - f(params, &dn)) / (2.0 * h);
        st.record(|| format!("input[{i}]"), dx.data()[i], num);
    }
    for (pname, t) in params {
        if pname.contains("running") {
            continue;
        }
        let g = grads.params.get(pname).unwrap_or_else(|| panic!("no gradient for {pname}"));
        for i in 0..t.len() {
            let (mut up, mut dn) = (params.clone(), params.clone());
            up[pname].data_mut()[i] += h;
            dn[pname].data_mut()[i] -= h;
            let num = (f(&up, x) - f(&dn, x)) / (2.0 * h);
            st.record(|| format!("{pname}[{i}]"), g.data()[i], num);
        }
    }
    st
}

fn pmap(entries: Vec<(&str, Tensor<f64>)>) -> ParamMap<f64> {
    entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn bn_params(rng: &mut ChaCha8Rng, c: usize) -> ParamMap<f64> {
    pmap(vec![
        ("l.gamma", rand_t(rng, &[c], 0.5, 1.5)),
        ("l.beta", rand_t(rng, &[c], -0.5, 0.5)),
        ("l.running_mean", rand_t(rng, &[c], -0.2, 0.2)),
        ("l.running_var", rand_t(rng, &[c], 0.5, 1.5)),
    ])
}

fn lstm(rng: &mut ChaCha8Rng, prefix: &str, d: usize, h: usize) -> Vec<(String, Tensor<f64>)> {
    vec![
        (format!("{prefix}.w_ih"), rand_t(rng, &[4 * h, d], -0.6, 0.6)),
        (format!("{prefix}.w_hh"), rand_t(rng, &[4 * h, h], -0.6, 0.6)),
        (format!("{prefix}.bias"), rand_t(rng, &[4 * h], -0.3, 0.3)),
    ]
}

pub fn grad_conv() -> GradStats {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = ConvGeom::causal((2, 3), (1, 2), (1, 0));
    let p = pmap(vec![("l.weight", rand_t(&mut rng, &[3, 2, 2, 3], -0.5, 0.5)), ("l.bias", rand_t(&mut rng, &[3], -0.5, 0.5))]);
    let x = rand_map(&mut rng, 4, 9, 2);
    check("conv (causal, strided)", &Conv(g), &p, &x, BnMode::Infer, 2)
}

pub fn grad_conv_t() -> GradStats {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = ConvGeom::anticausal((2, 3), (1, 2), (1, 1));
    let p = pmap(vec![("l.weight", rand_t(&mut rng, &[4, 2, 2, 3], -0.5, 0.5)), ("l.bias", rand_t(&mut rng, &[2], -0.5, 0.5))]);
    let x = rand_map(&mut rng, 3, 5, 4);
    check("transposed conv", &ConvT(g), &p, &x, BnMode::Infer, 4)
}

pub fn grad_bn_train() -> GradStats {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = bn_params(&mut rng, 3);
    check("batch norm (batch stats)", &Bn, &p, &rand_map(&mut rng, 3, 4, 3), BnMode::Train, 6)
}

pub fn grad_bn_infer() -> GradStats {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = bn_params(&mut rng, 3);
    check("batch norm (running stats)", &Bn, &p, &rand_map(&mut rng, 3, 4, 3), BnMode::Infer, 8)
}

pub fn grad_prelu() -> GradStats {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = pmap(vec![("l.alpha", rand_t(&mut rng, &[3], 0.05, 0.45))]);
    let mut x = rand_map(&mut rng, 3, 4, 3);
    // at least 0.05 from the kink so the stencil stays on one branch
    x.data_mut().iter_mut().for_each(|v| *v = v.signum() * (v.abs() + 0.05));
    check("prelu", &PRelu, &p, &x, BnMode::Infer, 10)
}

pub fn grad_iln() -> GradStats {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = pmap(vec![("l.gamma", rand_t(&mut rng, &[5, 3], 0.5, 1.5)), ("l.beta", rand_t(&mut rng, &[5, 3], -0.5, 0.5))]);
    check("instant layer norm", &Iln, &p, &rand_map(&mut rng, 3, 5, 3), BnMode::Infer, 12)
}

pub fn grad_fc() -> GradStats {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let p = pmap(vec![("l.weight", rand_t(&mut rng, &[3, 4], -0.5, 0.5)), ("l.bias", rand_t(&mut rng, &[3], -0.5, 0.5))]);
    check("fully connected", &Fc, &p, &rand_map(&mut rng, 2, 3, 4), BnMode::Infer, 14)
}

pub fn grad_intra() -> GradStats {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut p: ParamMap<f64> = lstm(&mut rng, "l.fwd", 3, 2).into_iter().collect();
    p.extend(lstm(&mut rng, "l.bwd", 3, 2));
    check("intra-frame bilstm", &Intra, &p, &rand_map(&mut rng, 2, 4, 3), BnMode::Infer, 16)
}

pub fn grad_inter() -> GradStats {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let p: ParamMap<f64> = lstm(&mut rng, "l", 3, 2).into_iter().collect();
    check("inter-frame lstm", &Inter, &p, &rand_map(&mut rng, 4, 3, 3), BnMode::Infer, 18)
}

pub fn grad_add_concat() -> GradStats {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    check("add and concat", &AddConcat, &ParamMap::new(), &rand_map(&mut rng, 2, 3, 2), BnMode::Infer, 20)
}

fn rand_spec(rng: &mut ChaCha8Rng, frames: usize, bins: usize, scale: f64) -> Spectrogram<f64> {
    let n = frames * bins;
    Spectrogram::new(
        frames,
        bins,
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect(),
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect(),
    )
    .unwrap()
}

/// Training loss through masking and overlap-add synthesis, differentiated
/// in the mask; every tenth bin of a three-frame mask, both loss variants.
pub fn grad_mask_synth_loss() -> GradStats {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let stft = Stft::<f64>::new(StftConfig::default()).unwrap();
    let frames = 3;
    let x = rand_spec(&mut rng, frames, 201, 2.0);
    let target = rand_spec(&mut rng, frames, 201, 2.0);
    let clean = stft.synthesize(&target).unwrap();
    let mask = rand_spec(&mut rng, frames, 201, 1.0);
    let to_mask = |m: &Spectrogram<f64>| CrmMask { frames, bins: 201, real: m.real.clone(), imag: m.imag.clone() };
    let mut st = GradStats::new("mask, synthesis and loss");
    for log_mse in [false, true] {
        let loss = |m: &Spectrogram<f64>| {
            let est = apply_mask(&x, &to_mask(m)).unwrap();
            let s_hat = stft.synthesize(&est).unwrap();
            breakdown(log_mse, &clean, &s_hat, &target, &est).unwrap().total
        };
        let est = apply_mask(&x, &to_mask(&mask)).unwrap();
        let s_hat = stft.synthesize(&est).unwrap();
        let (_, d_wave, d_spec) = breakdown_grad(log_mse, &clean, &s_hat, &target, &est).unwrap();
        let mut d_est = stft.synthesize_backward(&d_wave, frames);
        d_est.real.iter_mut().zip(&d_spec.real).for_each(|(a, b)| *a += b);
        d_est.imag.iter_mut().zip(&d_spec.imag).for_each(|(a, b)| *a += b);
        let dm = apply_mask_backward(&x, &d_est);
        for k in (0..frames * 201).step_by(10) {
            for (imag, analytic) in [(false, dm.real[k]), (true, dm.imag[k])] {
                let (mut up, mut dn) = (mask.clone(), mask.clone());
                let (u, d) = if imag { (&mut up.imag, &mut dn.imag) } else { (&mut up.real, &mut dn.real) };
                u[k] += FD_STEP;
                d[k] -= FD_STEP;
                let num = (loss(&up) - loss(&dn)) / (2.0 * FD_STEP);
                st.record(|| format!("log_mse={log_mse} imag={imag} bin {k}"), analytic, num);
            }
        }
    }
    st
}

pub fn all_layer_grads() -> Vec<GradStats> {
    vec![
        grad_conv(),
        grad_conv_t(),
        grad_bn_train(),
        grad_bn_infer(),
        grad_prelu(),
        grad_iln(),
        grad_fc(),
        grad_intra(),
        grad_inter(),
        grad_add_concat(),
        grad_mask_synth_loss(),
    ]
}
