use super::config::ModelConfig;
use super::weights::ModelWeights;
use crate::audio::Signal;
use crate::error::{Error, Result};
use crate::nn::{Eval, Graph, Real, Tensor};
use crate::stft::{Spectrogram, Stft, StftConfig};

/// Complex ratio mask `M = M_r + i M_i`, one value per time-frequency bin.
#[derive(Debug, Clone, PartialEq)]
pub struct CrmMask<T = f32> {
    pub frames: usize,
    pub bins: usize,
    pub real: Vec<T>,
    pub imag: Vec<T>,
}

impl<T: Real> CrmMask<T> {
    /// The identity mask `1 + 0i`.
    pub fn ones(frames: usize, bins: usize) -> Self {
        Self {
            frames,
            bins,
            real: vec![T::one(); frames * bins],
            imag: vec![T::zero(); frames * bins],
        }
    }

    /// Splits a `[t, bins, 2]` network output into real and imaginary planes.
    pub fn from_tensor(t: &Tensor<T>) -> Result<Self> {
        let (frames, bins, c) = t.dims3();
        if c != 2 {
            return Err(Error::ShapeMismatch(format!("mask needs 2 channels, got {c}")));
        }
        let (real, imag) = t.data().chunks_exact(2).map(|p| (p[0], p[1])).unzip();
        Ok(Self { frames, bins, real, imag })
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        let data = self.real.iter().zip(&self.imag).flat_map(|(&r, &i)| [r, i]).collect();
        Tensor::tfc_from(self.frames, self.bins, 2, data).expect("planes match frames x bins")
    }

    pub fn all_finite(&self) -> bool {
        self.real.iter().chain(&self.imag).all(|v| v.is_finite())
    }
}

/// `[t, bins, 2]` network input: channel 0 real, channel 1 imaginary.
pub fn spec_to_tensor<T: Real>(x: &Spectrogram<T>) -> Tensor<T> {
    let data = x.real.iter().zip(&x.imag).flat_map(|(&r, &i)| [r, i]).collect();
    Tensor::tfc_from(x.frames, x.bins, 2, data).expect("planes match frames x bins")
}

fn dprnn_module<T: Real, G: Graph<T>>(g: &mut G, x: &G::V, d: usize) -> Result<G::V> {
    let p = format!("dprnn.{d}.intra");
    let r = g.intra_bilstm(x, &p)?;
    let r = g.fc(&r, &format!("{p}.fc"))?;
    let r = g.iln(&r, &format!("{p}.iln"))?;
    let x = g.add(x, &r)?;
    let p = format!("dprnn.{d}.inter");
    let r = g.inter_lstm(&x, &format!("{p}.lstm"))?;
    let r = g.fc(&r, &format!("{p}.fc"))?;
    let r = g.iln(&r, &format!("{p}.iln"))?;
    g.add(&x, &r)
}

/// Runs the network on a spectrogram and returns the `[t, bins, 2]` mask
/// value. Works with any [`Graph`], so the same code evaluates directly or
/// records a tape.
pub fn forward<T: Real, G: Graph<T>>(g: &mut G, cfg: &ModelConfig, x: &Spectrogram<T>) -> Result<G::V> {
    if x.bins != cfg.n_bins {
        return Err(Error::ShapeMismatch(format!("input has {} bins, model expects {}", x.bins, cfg.n_bins)));
    }
    let plan = cfg.plan()?;
    let input = g.input(spec_to_tensor(x));
    let mut h = g.iln(&input, "input_iln")?;
    let mut skips = Vec::with_capacity(plan.len());
    for (i, l) in plan.iter().enumerate() {
        h = g.conv(&h, &format!("enc.{i}.conv"), l.enc_geom())?;
        h = g.batch_norm(&h, &format!("enc.{i}.bn"))?;
        h = g.prelu(&h, &format!("enc.{i}.prelu.alpha"))?;
        skips.push(h.clone());
    }
    for d in 0..cfg.n_dprnn {
        h = dprnn_module(g, &h, d)?;
    }
    for (i, l) in plan.iter().enumerate().rev() {
        let cat = g.concat(&h, &skips[i])?;
        h = g.conv_t(&cat, &format!("dec.{i}.deconv"), l.dec_geom())?;
        if i > 0 {
            h = g.batch_norm(&h, &format!("dec.{i}.bn"))?;
            h = g.prelu(&h, &format!("dec.{i}.prelu.alpha"))?;
        }
    }
    Ok(h)
}

/// Inference-mode mask estimate.
pub fn predict_mask(w: &ModelWeights, x: &Spectrogram<f32>) -> Result<CrmMask<f32>> {
    let mut g = Eval::new(w.params());
    let m = forward(&mut g, w.config(), x)?;
    CrmMask::from_tensor(&m)
}

fn check_same<T: Real>(x: &Spectrogram<T>, m: &CrmMask<T>) -> Result<()> {
    if x.frames != m.frames || x.bins != m.bins {
        return Err(Error::ShapeMismatch(format!(
            "spectrogram {}x{} and mask {}x{}",
            x.frames, x.bins, m.frames, m.bins
        )));
    }
    Ok(())
}

/// Enhanced spectrogram: the elementwise complex product `X * M`.
pub fn apply_mask<T: Real>(x: &Spectrogram<T>, m: &CrmMask<T>) -> Result<Spectrogram<T>> {
    check_same(x, m)?;
    let n = x.real.len();
    let mut real = Vec::with_capacity(n);
    let mut imag = Vec::with_capacity(n);
    for k in 0..n {
        let (xr, xi, mr, mi) = (x.real[k], x.imag[k], m.real[k], m.imag[k]);
        real.push(xr * mr - xi * mi);
        imag.push(xr * mi + xi * mr);
    }
    Ok(Spectrogram {
        frames: x.frames,
        bins: x.bins,
        real,
        imag,
    })
}

/// Gradient with respect to the mask of a loss whose gradient with respect
/// to `apply_mask(x, m)` is `ds`.
pub fn apply_mask_backward<T: Real>(x: &Spectrogram<T>, ds: &Spectrogram<T>) -> CrmMask<T> {
    let n = x.real.len();
    let mut real = Vec::with_capacity(n);
    let mut imag = Vec::with_capacity(n);
    for k in 0..n {
        let (xr, xi, gr, gi) = (x.real[k], x.imag[k], ds.real[k], ds.imag[k]);
        real.push(gr * xr + gi * xi);
        imag.push(gi * xr - gr * xi);
    }
    CrmMask {
        frames: x.frames,
        bins: x.bins,
        real,
        imag,
    }
}

/// Whole-signal enhancement: analysis, mask estimation, masking and
/// overlap-add synthesis. The output covers `(T - 1) * hop + win_len`
/// samples, where `T` is the number of complete analysis frames.
pub fn enhance_offline(w: &ModelWeights, s: &Signal) -> Result<Signal> {
    let stft = Stft::<f32>::new(StftConfig::default())?;
    let x = stft.analyze(s.samples())?;
    let m = predict_mask(w, &x)?;
    let y = stft.synthesize(&apply_mask(&x, &m)?)?;
    if let Some(k) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::Diverged(format!("non-finite enhanced sample at {k}")));
    }
    Signal::new(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{gen_synthetic, SynthKind};
    use crate::nn::{backward, BnMode, GradTape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spec(frames: usize, seed: u64) -> Spectrogram<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = frames * 201;
        Spectrogram::new(
            frames,
            201,
            (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect(),
            (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn complex_product_examples() {
        let x = Spectrogram::new(1, 1, vec![1.0f32], vec![2.0]).unwrap();
        let m = CrmMask {
            frames: 1,
            bins: 1,
            real: vec![3.0],
            imag: vec![4.0],
        };
        let y = apply_mask(&x, &m).unwrap();
        assert_eq!((y.real[0], y.imag[0]), (-5.0, 10.0));
        let x = random_spec(3, 1);
        assert_eq!(apply_mask(&x, &CrmMask::ones(3, 201)).unwrap(), x);
        assert!(apply_mask(&x, &CrmMask::ones(2, 201)).is_err());
    }

    #[test]
    fn mask_gradient_is_the_adjoint() {
        let x = random_spec(2, 2).cast::<f64>();
        let ds = random_spec(2, 3).cast::<f64>();
        let dm = random_spec(2, 4).cast::<f64>();
        let dm = CrmMask {
            frames: 2,
            bins: 201,
            real: dm.real,
            imag: dm.imag,
        };
        // <apply_mask(x, dm), ds> == <dm, apply_mask_backward(x, ds)>
        let y = apply_mask(&x, &dm).unwrap();
        let lhs: f64 = y.real.iter().zip(&ds.real).chain(y.imag.iter().zip(&ds.imag)).map(|(a, b)| a * b).sum();
        let g = apply_mask_backward(&x, &ds);
        let rhs: f64 = g.real.iter().zip(&dm.real).chain(g.imag.iter().zip(&dm.imag)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn mask_shape_contract() {
        let w = ModelWeights::build(&ModelConfig::micro(), 5).unwrap();
        for t in [1, 2, 7] {
            let m = predict_mask(&w, &random_spec(t, t as u64)).unwrap();
            assert_eq!((m.frames, m.bins), (t, 201));
            assert!(m.all_finite());
        }
        assert!(predict_mask(&w, &Spectrogram::zeros(2, 200)).is_err());
    }

    #[test]
    fn taped_and_direct_forward_agree() {
        let w = ModelWeights::build(&ModelConfig::micro(), 9).unwrap();
        let x = random_spec(4, 9);
        let direct = predict_mask(&w, &x).unwrap().to_tensor();
        let mut tape = GradTape::new(w.params(), BnMode::Infer);
        let out = forward(&mut tape, w.config(), &x).unwrap();
        assert_eq!(tape.value(&out), &direct);
        tape.set_output(out);
        let zero = Tensor::zeros(direct.shape(), direct.axes());
        let g = backward(&tape, &zero).unwrap();
        assert!(g.params.values().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn identity_mask_weights_pass_through() {
        let cfg = ModelConfig::micro();
        let mut w = ModelWeights::build(&cfg, 1).unwrap();
        for (k, t) in w.params_mut().iter_mut() {
            if k.starts_with("dec.0.deconv") {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        w.params_mut()["dec.0.deconv.bias"].data_mut()[0] = 1.0;
        let s = gen_synthetic(SynthKind::SpeechLike, 0.5, 4).unwrap();
        let out = enhance_offline(&w, &s).unwrap();
        let cfg = StftConfig::default();
        let oracle = crate::stft::synthesize(&crate::stft::analyze(&s, &cfg).unwrap(), &cfg).unwrap();
        assert_eq!(out.len(), oracle.len());
        for (a, b) in out.samples().iter().zip(oracle.samples()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
