//! Desk-scale training on synthetic tone-in-noise mixtures.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::optim::{Adam, Plateau, PlateauEvent, TrainSchedule};
use super::step::{item_step, ItemOutput};
use crate::audio::{gen_synthetic, mix_at_snr, MixSpec, SynthKind, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::model::config::parse_num;
use crate::model::{parse_kv, ModelConfig, ModelWeights};
use crate::nn::norm::bn_update_running;
use crate::nn::{BnMode, ParamMap, Tensor, BN_MOMENTUM};
use crate::stft::{Stft, StftConfig};

/// Everything the toy trainer needs besides the step budget and the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub model: ModelConfig,
    pub sched: TrainSchedule,
    pub snr_db: f64,
    /// Tone frequencies are drawn uniformly from this range.
    pub tone_hz: (f64, f64),
    pub val_items: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::micro(),
            sched: TrainSchedule {
                lr0: 5e-3,
                batch: 4,
                segment_s: 0.5,
                ..TrainSchedule::default()
            },
            snr_db: 0.0,
            tone_hz: (300.0, 3000.0),
            val_items: 4,
        }
    }
}

const TRAIN_KEYS: [&str; 10] = [
    "lr0",
    "batch",
    "halve_patience",
    "stop_patience",
    "segment_s",
    "eval_every",
    "snr_db",
    "tone_min_hz",
    "tone_max_hz",
    "val_items",
];

impl ToyConfig {
    /// Parses `key=value` text. Training keys override the defaults; the
    /// remaining keys describe the model (the micro model if none given).
    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = parse_kv(text)?;
        let mut cfg = Self::default();
        for key in TRAIN_KEYS {
            let Some(v) = kv.shift_remove(key) else { continue };
            match key {
                "lr0" => cfg.sched.lr0 = parse_num(key, &v)?,
                "batch" => cfg.sched.batch = parse_num(key, &v)?,
                "halve_patience" => cfg.sched.halve_patience = parse_num(key, &v)?,
                "stop_patience" => cfg.sched.stop_patience = parse_num(key, &v)?,
                "segment_s" => cfg.sched.segment_s = parse_num(key, &v)?,
                "eval_every" => cfg.sched.eval_every = parse_num(key, &v)?,
                "snr_db" => cfg.snr_db = parse_num(key, &v)?,
                "tone_min_hz" => cfg.tone_hz.0 = parse_num(key, &v)?,
                "tone_max_hz" => cfg.tone_hz.1 = parse_num(key, &v)?,
                _ => cfg.val_items = parse_num(key, &v)?,
            }
        }
        if !kv.is_empty() {
            cfg.model = ModelConfig::from_kv(&kv)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let s = &self.sched;
        let mut out = self.model.to_text();
        let _ = write!(
            out,
            "lr0={}\nbatch={}\nhalve_patience={}\nstop_patience={}\nsegment_s={}\neval_every={}\nsnr_db={}\ntone_min_hz={}\ntone_max_hz={}\nval_items={}\n",
            s.lr0, s.batch, s.halve_patience, s.stop_patience, s.segment_s, s.eval_every, self.snr_db, self.tone_hz.0,
            self.tone_hz.1, self.val_items
        );
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.sched.validate()?;
        let nyquist = SAMPLE_RATE as f64 / 2.0;
        if !(self.tone_hz.0 > 0.0 && self.tone_hz.0 < self.tone_hz.1 && self.tone_hz.1 < nyquist) {
            return Err(Error::InvalidConfig(format!("tone range {:?} Hz", self.tone_hz)));
        }
        if !self.snr_db.is_finite() || self.val_items == 0 {
            return Err(Error::InvalidConfig("snr_db must be finite and val_items positive".into()));
        }
        Ok(())
    }

    /// Segment length in samples, rounded down to whole hops so that
    /// synthesis covers every sample.
    pub fn segment_len(&self) -> usize {
        let n = (self.sched.segment_s * SAMPLE_RATE as f64) as usize;
        (n / 200 * 200).max(400)
    }
}

/// One row of the loss curve (batch means at the parameters before the
/// update of that step).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveRow {
    pub step: usize,
    pub neg_snr: f64,
    pub log_mse: f64,
    pub total: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    /// Number of completed training steps.
    pub step: usize,
    pub val_loss: f64,
    pub event: PlateauEvent,
    pub lr_after: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub weights: ModelWeights,
    pub curve: Vec<CurveRow>,
    pub evals: Vec<EvalPoint>,
    /// Step count at which early stopping fired.
    pub stopped_at: Option<usize>,
}

impl TrainReport {
    /// Training negative SNR at step 0 minus the mean over the last `tail`
    /// steps, in dB. Positive means the loss went down.
    pub fn improvement_db(&self, tail: usize) -> f64 {
        let Some(first) = self.curve.first() else { return 0.0 };
        let tail = tail.clamp(1, self.curve.len());
        let last = &self.curve[self.curve.len() - tail..];
        first.neg_snr - last.iter().map(|r| r.neg_snr).sum::<f64>() / tail as f64
    }
}

/// Deterministic `(mixture, clean)` pair for a data stream position.
pub fn toy_item(cfg: &ToyConfig, seed: u64, stream: u64) -> Result<(Vec<f32>, Vec<f32>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let dur = cfg.segment_len() as f64 / SAMPLE_RATE as f64;
    let freq_hz = rng.gen_range(cfg.tone_hz.0..cfg.tone_hz.1);
    let tone = gen_synthetic(SynthKind::Tone { freq_hz }, dur, rng.gen())?;
    let noise = gen_synthetic(SynthKind::WhiteNoise, dur, rng.gen())?;
    let (mix, _) = mix_at_snr(&tone, &noise, MixSpec { snr_db: cfg.snr_db, seed: rng.gen() })?;
    Ok((mix.into_samples(), tone.into_samples()))
}

const VAL_STREAM: u64 = 1 << 62;

fn mean_bn_stats(items: &[ItemOutput<f32>]) -> IndexMap<String, (Vec<f32>, Vec<f32>)> {
    let mut acc: IndexMap<String, (Vec<f64>, Vec<f64>)> = IndexMap::new();
    for it in items {
        for (name, (m, v)) in &it.bn_stats {
            let e = acc.entry(name.clone()).or_insert_with(|| (vec![0.0; m.len()], vec![0.0; v.len()]));
            e.0.iter_mut().zip(m).for_each(|(a, &b)| *a += b as f64);
            e.1.iter_mut().zip(v).for_each(|(a, &b)| *a += b as f64);
        }
    }
    let n = items.len() as f64;
    acc.into_iter()
        .map(|(k, (m, v))| (k, (m.iter().map(|x| (x / n) as f32).collect(), v.iter().map(|x| (x / n) as f32).collect())))
        .collect()
}

/// Trains from `ModelWeights::build(cfg.model, seed)` for at most `steps`
/// steps. Batch items run in parallel; gradients are reduced in item order,
/// so results do not depend on the thread count.
pub fn train_toy(cfg: &ToyConfig, steps: usize, seed: u64) -> Result<TrainReport> {
    cfg.validate()?;
    let stft = Stft::<f32>::new(StftConfig::default())?;
    let mut weights = ModelWeights::build(&cfg.model, seed)?;
    let mut adam = Adam::<f32>::new();
    let mut plateau = Plateau::new(&cfg.sched);
    let batch = cfg.sched.batch;
    let val: Vec<_> = (0..cfg.val_items as u64)
        .map(|i| toy_item(cfg, seed, VAL_STREAM + i))
        .collect::<Result<_>>()?;
    let mut curve = Vec::with_capacity(steps);
    let mut evals = Vec::new();
    let mut stopped_at = None;

    for step in 0..steps {
        let lr = plateau.lr();
        let items: Vec<ItemOutput<f32>> = (0..batch)
            .into_par_iter()
            .map(|i| {
                let (mix, clean) = toy_item(cfg, seed, (step * batch + i) as u64)?;
                item_step(weights.params(), &cfg.model, BnMode::Train, &stft, &mix, &clean, true)
            })
            .collect::<Result<_>>()?;
        let n = batch as f64;
        let mean = |f: fn(&ItemOutput<f32>) -> f64| items.iter().map(f).sum::<f64>() / n;
        let row = CurveRow {
            step,
            neg_snr: mean(|o| o.loss.neg_snr),
            log_mse: mean(|o| o.loss.log_mse_term),
            total: mean(|o| o.loss.total),
            lr,
        };
        if !row.total.is_finite() {
            return Err(Error::Diverged(format!("non-finite loss at step {step}")));
        }
        curve.push(row);

        let mut grads: ParamMap<f32> = ParamMap::new();
        for it in &items {
            for (k, g) in it.grads.as_ref().expect("taped pass") {
                match grads.get_mut(k) {
                    Some(acc) => acc.add_assign(g),
                    None => {
                        grads.insert(k.clone(), g.clone());
                    }
                }
            }
        }
        grads.values_mut().for_each(|g| g.scale(1.0 / batch as f32));
        adam.step(weights.params_mut(), &grads, lr)
            .map_err(|e| match e {
                Error::Diverged(m) => Error::Diverged(format!("step {step}: {m}")),
                other => other,
            })?;
        for (prefix, stats) in mean_bn_stats(&items) {
            let params = weights.params_mut();
            let mut rm: Tensor<f32> = params[&format!("{prefix}.running_mean")].clone();
            let mut rv: Tensor<f32> = params[&format!("{prefix}.running_var")].clone();
            bn_update_running(&mut rm, &mut rv, &stats, BN_MOMENTUM as f32);
            params[&format!("{prefix}.running_mean")] = rm;
            params[&format!("{prefix}.running_var")] = rv;
        }

        let done = step + 1;
        if done % cfg.sched.eval_every == 0 {
            let val_loss = val
                .par_iter()
                .map(|(mix, clean)| item_step(weights.params(), &cfg.model, BnMode::Infer, &stft, mix, clean, false))
                .collect::<Result<Vec<_>>>()?
                .iter()
                .map(|o| o.loss.total)
                .sum::<f64>()
                / val.len() as f64;
            if !val_loss.is_finite() {
                return Err(Error::Diverged(format!("non-finite validation loss after step {done}")));
            }
            let event = plateau.observe(val_loss);
            evals.push(EvalPoint {
                step: done,
                val_loss,
                event,
                lr_after: plateau.lr(),
            });
            if event == PlateauEvent::Stop {
                stopped_at = Some(done);
                break;
            }
        }
    }
    Ok(TrainReport {
        weights,
        curve,
        evals,
        stopped_at,
    })
}

/// Writes `step,neg_snr,log_mse,total,lr` rows.
pub fn write_curve_csv(rows: &[CurveRow], path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,neg_snr,log_mse,total,lr")?;
    for r in rows {
        writeln!(f, "{},{},{},{},{}", r.step, r.neg_snr, r.log_mse, r.total, r.lr)?;
    }
    f.flush()?;
    Ok(())
}
