//! End-to-end gradient verification against central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::step::{item_step, loss_and_prelu_inputs};
use crate::audio::{gen_synthetic, mix_at_snr, MixSpec, SynthKind};
use crate::error::{Error, Result};
use crate::model::{weights::is_trainable, ModelConfig, ModelWeights};
use crate::nn::{BnMode, ParamMap};
use crate::stft::{Stft, StftConfig};

pub const FD_STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-4;
/// Fraction of coordinates that must be within [`REL_TOL`].
pub const MIN_PASS_FRACTION: f64 = 0.99;
/// Denominator floor of the relative error, so that gradients that vanish
/// to rounding level are compared absolutely.
pub const ABS_FLOOR: f64 = 1e-6;
pub const MAX_PARAMS: usize = 2000;
const INPUT_SECONDS: f64 = 0.1;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub params: usize,
    /// Coordinates compared, over both batch-norm modes.
    pub coords: usize,
    pub max_rel_err: f64,
    pub worst: String,
    /// Largest relative error over coordinates whose stencil stayed on one
    /// PReLU branch everywhere.
    pub max_rel_err_smooth: f64,
    /// Fraction of coordinates within [`REL_TOL`].
    pub pass_fraction: f64,
    /// Coordinates whose difference stencil moved some PReLU input across zero.
    pub kink_coords: usize,
    /// Coordinates outside tolerance whose stencil stayed on one PReLU branch.
    pub unexplained: usize,
    /// Up to ten coordinates outside tolerance as `(name, analytic, numeric)`.
    pub failures: Vec<(String, f64, f64)>,
    /// Smallest |PReLU input| at the evaluation point.
    pub kink_margin: f64,
    pub loss: f64,
}

impl GradcheckReport {
    /// At least 99% of coordinates within tolerance and every coordinate
    /// outside it explained by a kink crossing.
    pub fn passed(&self) -> bool {
        self.pass_fraction >= MIN_PASS_FRACTION && self.unexplained == 0
    }
}

struct Coord {
    name: String,
    rel: f64,
    analytic: f64,
    numeric: f64,
    kink: bool,
}

/// Candidate evaluation points drawn per seed; the one farthest from any
/// PReLU kink is used.
pub const CANDIDATES: u64 = 32;

/// Parameters and signals at which gradients are compared.
#[derive(Debug, Clone)]
pub struct GradcheckPoint {
    pub params: ParamMap<f64>,
    pub mix: Vec<f64>,
    pub clean: Vec<f64>,
    /// Smallest |PReLU input| over both batch-norm modes.
    pub kink_margin: f64,
}

/// Seeded weights with the constant-initialized tensors randomized so every
/// code path carries a generic value.
fn randomized(cfg: &ModelConfig, seed: u64, stream: u64) -> Result<ParamMap<f64>> {
    let mut p = ModelWeights::build(cfg, seed)?.cast_params::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream + 1);
    for (name, t) in p.iter_mut() {
        let draw = |rng: &mut ChaCha8Rng, v: f64| -> Option<f64> {
            if name.ends_with("gamma") || name.ends_with("running_var") {
                Some(rng.gen_range(0.5..1.5))
            } else if name.ends_with("alpha") {
                Some(rng.gen_range(0.05..0.45))
            } else if name.ends_with("beta") || name.ends_with("bias") || name.ends_with("running_mean") {
                Some(v + rng.gen_range(-0.2..0.2))
            } else {
                None
            }
        };
        for v in t.data_mut() {
            match draw(&mut rng, *v) {
                Some(x) => *v = x,
                None => break,
            }
        }
    }
    Ok(p)
}

fn kink_margin(p: &ParamMap<f64>, cfg: &ModelConfig, stft: &Stft<f64>, mix: &[f64], clean: &[f64]) -> Result<f64> {
    let mut m = f64::INFINITY;
    for mode in [BnMode::Train, BnMode::Infer] {
        let (_, z) = loss_and_prelu_inputs(p, cfg, mode, stft, mix, clean)?;
        m = z.iter().fold(m, |m, v| m.min(v.abs()));
    }
    Ok(m)
}

/// Deterministic evaluation point for `seed`: a 0.1 s speech-like mixture
/// at 0 dB and the candidate parameter draw with the widest kink margin.
pub fn gradcheck_point(cfg: &ModelConfig, seed: u64) -> Result<GradcheckPoint> {
    let stft = Stft::<f64>::new(StftConfig::default())?;
    let clean = gen_synthetic(SynthKind::SpeechLike, INPUT_SECONDS, seed)?;
    let noise = gen_synthetic(SynthKind::WhiteNoise, INPUT_SECONDS, seed.wrapping_add(1))?;
    let (mix, _) = mix_at_snr(&clean, &noise, MixSpec { snr_db: 0.0, seed })?;
    let mix: Vec<f64> = mix.samples().iter().map(|&v| v as f64).collect();
    let clean: Vec<f64> = clean.samples().iter().map(|&v| v as f64).collect();
    let scored: Vec<(f64, ParamMap<f64>)> = (0..CANDIDATES)
        .into_par_iter()
        .map(|k| {
            let p = randomized(cfg, seed, k)?;
            Ok((kink_margin(&p, cfg, &stft, &mix, &clean)?, p))
        })
        .collect::<Result<_>>()?;
    let (kink_margin, params) = scored
        .into_iter()
        .reduce(|a, b| if b.0 > a.0 { b } else { a })
        .expect("at least one candidate");
    Ok(GradcheckPoint {
        params,
        mix,
        clean,
        kink_margin,
    })
}

fn crosses_kink(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).any(|(x, y)| (*x < 0.0) != (*y < 0.0))
}

/// Compares analytic gradients of the configured training loss with
/// float64 central differences for every trainable coordinate, in both
/// training and inference batch-norm modes, on a 0.1 s mixture.
pub fn gradcheck(cfg: &ModelConfig, seed: u64) -> Result<GradcheckReport> {
    gradcheck_with_step(cfg, seed, FD_STEP)
}

/// [`gradcheck`] with a custom difference step.
pub fn gradcheck_with_step(cfg: &ModelConfig, seed: u64, h: f64) -> Result<GradcheckReport> {
    cfg.validate()?;
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("difference step {h}")));
    }
    let point = gradcheck_point(cfg, seed)?;
    let (params, mix, clean) = (&point.params, &point.mix, &point.clean);
    let n_params = crate::model::param_count(params);
    if n_params > MAX_PARAMS {
        return Err(Error::InvalidConfig(format!(
            "{n_params} trainable parameters; gradient checks are limited to {MAX_PARAMS}"
        )));
    }
    let stft = Stft::<f64>::new(StftConfig::default())?;
    let mut coords: Vec<Coord> = Vec::new();
    let mut loss = 0.0;
    for mode in [BnMode::Train, BnMode::Infer] {
        let out = item_step(params, cfg, mode, &stft, mix, clean, true)?;
        if mode == BnMode::Train {
            loss = out.loss.total;
        }
        let grads = out.grads.expect("taped pass");
        let (_, base) = loss_and_prelu_inputs(params, cfg, mode, &stft, mix, clean)?;
        let todo: Vec<(String, usize)> = params
            .iter()
            .filter(|(k, _)| is_trainable(k))
            .flat_map(|(k, t)| (0..t.len()).map(move |i| (k.clone(), i)))
            .collect();
        let done: Vec<Coord> = todo
            .par_iter()
            .map(|(name, i)| {
                let mut p = params.clone();
                let x0 = p[name].data()[*i];
                p[name].data_mut()[*i] = x0 + h;
                let (up, bu) = loss_and_prelu_inputs(&p, cfg, mode, &stft, mix, clean)?;
                p[name].data_mut()[*i] = x0 - h;
                let (down, bd) = loss_and_prelu_inputs(&p, cfg, mode, &stft, mix, clean)?;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads.get(name).map_or(0.0, |g| g.data()[*i]);
                Ok(Coord {
                    name: format!("{name}[{i}] ({mode:?})"),
                    rel: relative_error(analytic, numeric),
                    analytic,
                    numeric,
                    kink: crosses_kink(&bu, &base) || crosses_kink(&bd, &base),
                })
            })
            .collect::<Result<_>>()?;
        coords.extend(done);
    }
    let worst = coords.iter().max_by(|a, b| a.rel.total_cmp(&b.rel));
    let mut failed: Vec<&Coord> = coords.iter().filter(|c| c.rel > REL_TOL).collect();
    failed.sort_by(|a, b| b.rel.total_cmp(&a.rel));
    Ok(GradcheckReport {
        params: n_params,
        coords: coords.len(),
        max_rel_err: worst.map_or(0.0, |c| c.rel),
        worst: worst.map(|c| c.name.clone()).unwrap_or_default(),
        max_rel_err_smooth: coords.iter().filter(|c| !c.kink).fold(0.0, |m, c| m.max(c.rel)),
        pass_fraction: (coords.len() - failed.len()) as f64 / coords.len().max(1) as f64,
        kink_coords: coords.iter().filter(|c| c.kink).count(),
        unexplained: failed.iter().filter(|c| !c.kink).count(),
        failures: failed.iter().take(10).map(|c| (c.name.clone(), c.analytic, c.numeric)).collect(),
        kink_margin: point.kink_margin,
        loss,
    })
}
