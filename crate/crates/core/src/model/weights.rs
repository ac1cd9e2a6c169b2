use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{ParamMap, Real, Tensor};

/// How a manifest entry is initialized and whether it is trained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `U(-1/sqrt(fan), 1/sqrt(fan))`
    Uniform { fan: usize },
    /// LSTM bias: zero except `+1` on the forget gate block.
    ForgetBias { hidden: usize },
    Const(f32),
    /// Batch-norm running statistic, updated by training but never by the
    /// optimizer.
    Running(f32),
}

impl Init {
    pub fn trainable(self) -> bool {
        !matches!(self, Init::Running(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Canonical tensor list of a configuration, in storage order.
pub fn manifest(cfg: &ModelConfig) -> Result<Vec<ManifestEntry>> {
    let plan = cfg.plan()?;
    let mut m = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: Init| m.push(ManifestEntry { name, shape, init });
    let norm = |push: &mut dyn FnMut(String, Vec<usize>, Init), p: &str, shape: Vec<usize>| {
        push(format!("{p}.gamma"), shape.clone(), Init::Const(1.0));
        push(format!("{p}.beta"), shape, Init::Const(0.0));
    };
    let bn = |push: &mut dyn FnMut(String, Vec<usize>, Init), p: &str, c: usize| {
        push(format!("{p}.gamma"), vec![c], Init::Const(1.0));
        push(format!("{p}.beta"), vec![c], Init::Const(0.0));
        push(format!("{p}.running_mean"), vec![c], Init::Running(0.0));
        push(format!("{p}.running_var"), vec![c], Init::Running(1.0));
    };
    let lstm = |push: &mut dyn FnMut(String, Vec<usize>, Init), p: &str, d_in: usize, h: usize| {
        let fan = h;
        push(format!("{p}.w_ih"), vec![4 * h, d_in], Init::Uniform { fan });
        push(format!("{p}.w_hh"), vec![4 * h, h], Init::Uniform { fan });
        push(format!("{p}.bias"), vec![4 * h], Init::ForgetBias { hidden: h });
    };

    norm(&mut push, "input_iln", vec![cfg.n_bins, 2]);
    for (i, l) in plan.iter().enumerate() {
        let (kt, kf) = l.kernel;
        push(
            format!("enc.{i}.conv.weight"),
            vec![l.c_out, l.c_in, kt, kf],
            Init::Uniform { fan: l.c_in * kt * kf },
        );
        push(format!("enc.{i}.conv.bias"), vec![l.c_out], Init::Const(0.0));
        bn(&mut push, &format!("enc.{i}.bn"), l.c_out);
        push(format!("enc.{i}.prelu.alpha"), vec![l.c_out], Init::Const(0.25));
    }
    let c = cfg.bottleneck_channels();
    let f = cfg.dprnn_freq()?;
    for d in 0..cfg.n_dprnn {
        let h = cfg.intra_hidden;
        lstm(&mut push, &format!("dprnn.{d}.intra.fwd"), c, h);
        lstm(&mut push, &format!("dprnn.{d}.intra.bwd"), c, h);
        push(format!("dprnn.{d}.intra.fc.weight"), vec![c, 2 * h], Init::Uniform { fan: 2 * h });
        push(format!("dprnn.{d}.intra.fc.bias"), vec![c], Init::Const(0.0));
        norm(&mut push, &format!("dprnn.{d}.intra.iln"), vec![f, c]);
        let h = cfg.inter_hidden;
        lstm(&mut push, &format!("dprnn.{d}.inter.lstm"), c, h);
        push(format!("dprnn.{d}.inter.fc.weight"), vec![c, h], Init::Uniform { fan: h });
        push(format!("dprnn.{d}.inter.fc.bias"), vec![c], Init::Const(0.0));
        norm(&mut push, &format!("dprnn.{d}.inter.iln"), vec![f, c]);
    }
    for (i, l) in plan.iter().enumerate().rev() {
        let (kt, kf) = l.kernel;
        let c_in = 2 * l.c_out;
        push(
            format!("dec.{i}.deconv.weight"),
            vec![c_in, l.c_in, kt, kf],
            Init::Uniform { fan: c_in * kt * kf },
        );
        push(format!("dec.{i}.deconv.bias"), vec![l.c_in], Init::Const(0.0));
        if i > 0 {
            bn(&mut push, &format!("dec.{i}.bn"), l.c_in);
            push(format!("dec.{i}.prelu.alpha"), vec![l.c_in], Init::Const(0.25));
        }
    }
    Ok(m)
}

/// Whether `name` is updated by the optimizer.
pub fn is_trainable(name: &str) -> bool {
    !(name.ends_with(".running_mean") || name.ends_with(".running_var"))
}

/// Trainable element count of a parameter map.
pub fn param_count<T: Real>(params: &ParamMap<T>) -> usize {
    params.iter().filter(|(k, _)| is_trainable(k)).map(|(_, t)| t.len()).sum()
}

/// A validated parameter set together with the configuration it realizes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    cfg: ModelConfig,
    params: ParamMap<f32>,
}

impl ModelWeights {
    /// Deterministic initialization from `seed`.
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamMap::new();
        for e in manifest(cfg)? {
            let n: usize = e.shape.iter().product();
            let data: Vec<f32> = match e.init {
                Init::Uniform { fan } => {
                    let a = 1.0 / (fan as f64).sqrt();
                    (0..n).map(|_| rng.gen_range(-a..a) as f32).collect()
                }
                Init::ForgetBias { hidden } => (0..n).map(|k| if k / hidden == 1 { 1.0 } else { 0.0 }).collect(),
                Init::Const(v) | Init::Running(v) => vec![v; n],
            };
            params.insert(e.name, Tensor::param(&e.shape, data)?);
        }
        Ok(Self { cfg: cfg.clone(), params })
    }

    /// Checks `params` against the manifest of `cfg`: every entry present
    /// with the right shape, nothing extra, finite values, non-negative
    /// running variances. Tensors are reordered into manifest order.
    pub fn from_params(cfg: &ModelConfig, mut params: ParamMap<f32>) -> Result<Self> {
        cfg.validate()?;
        let mut ordered = ParamMap::new();
        for e in manifest(cfg)? {
            let t = params.swap_remove(&e.name).ok_or_else(|| Error::MissingTensor(e.name.clone()))?;
            if t.shape() != e.shape.as_slice() {
                return Err(Error::ShapeMismatch(format!("{}: {:?}, expected {:?}", e.name, t.shape(), e.shape)));
            }
            if !t.all_finite() {
                return Err(Error::InvalidArgument(format!("{} holds non-finite values", e.name)));
            }
            if e.name.ends_with(".running_var") && t.data().iter().any(|&v| v < 0.0) {
                return Err(Error::InvalidArgument(format!("{} is negative", e.name)));
            }
            ordered.insert(e.name, t);
        }
        if let Some(extra) = params.keys().next() {
            return Err(Error::InvalidConfig(format!("tensor {extra:?} is not part of the manifest")));
        }
        Ok(Self { cfg: cfg.clone(), params: ordered })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamMap<f32> {
        &self.params
    }

    /// Mutable access for optimizers. Shapes must not be changed.
    pub fn params_mut(&mut self) -> &mut ParamMap<f32> {
        &mut self.params
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<f32>> {
        self.params.get(name).ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn param_count(&self) -> usize {
        param_count(&self.params)
    }

    /// CRC32 over names and little-endian values, for quick identity checks.
    pub fn checksum(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for (k, t) in &self.params {
            h.update(k.as_bytes());
            for v in t.data() {
                h.update(&v.to_le_bytes());
            }
        }
        h.finalize()
    }

    /// Parameters converted to another precision.
    pub fn cast_params<T: Real>(&self) -> ParamMap<T> {
        self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect()
    }
}
