use super::loss::{breakdown, breakdown_grad, LossBreakdown};
use crate::error::Result;
use crate::model::{apply_mask, apply_mask_backward, forward, CrmMask, ModelConfig};
use crate::nn::{backward, BnMode, Eval, GradTape, ParamMap, Real};
use crate::stft::Stft;

/// Per-layer `(mean, var)` observed by training-mode batch norms.
pub type BnStats<T> = Vec<(String, (Vec<T>, Vec<T>))>;

#[derive(Debug, Clone)]
pub struct ItemOutput<T: Real> {
    pub loss: LossBreakdown,
    /// Gradient of `loss.total` for every parameter the pass touched.
    pub grads: Option<ParamMap<T>>,
    pub bn_stats: BnStats<T>,
}

/// Runs one `(mixture, clean)` pair through the whole signal path
/// (analysis, network, masking, synthesis) and evaluates the variant's
/// loss. With `grad` set the pass is recorded and differentiated.
///
/// The reference is truncated to the synthesized length.
pub fn item_step<T: Real>(
    params: &ParamMap<T>,
    cfg: &ModelConfig,
    mode: BnMode,
    stft: &Stft<T>,
    mix: &[T],
    clean: &[T],
    grad: bool,
) -> Result<ItemOutput<T>> {
    let x = stft.analyze(mix)?;
    let target = stft.analyze(clean)?;
    let log_mse = cfg.variant.uses_log_mse();
    if !grad {
        let mut g = Eval::with_mode(params, mode);
        let m = forward(&mut g, cfg, &x)?;
        let est = apply_mask(&x, &CrmMask::from_tensor(&m)?)?;
        let s_hat = stft.synthesize(&est)?;
        let loss = breakdown(log_mse, &clean[..s_hat.len()], &s_hat, &target, &est)?;
        return Ok(ItemOutput {
            loss,
            grads: None,
            bn_stats: Vec::new(),
        });
    }
    let mut tape = GradTape::new(params, mode);
    let out = forward(&mut tape, cfg, &x)?;
    tape.set_output(out);
    let mask_t = tape.output().expect("output just set");
    let est = apply_mask(&x, &CrmMask::from_tensor(mask_t)?)?;
    let s_hat = stft.synthesize(&est)?;
    let (loss, d_wave, d_spec) = breakdown_grad(log_mse, &clean[..s_hat.len()], &s_hat, &target, &est)?;
    let mut d_est = stft.synthesize_backward(&d_wave, est.frames);
    for (a, b) in d_est.real.iter_mut().zip(&d_spec.real) {
        *a += *b;
    }
    for (a, b) in d_est.imag.iter_mut().zip(&d_spec.imag) {
        *a += *b;
    }
    let d_mask = apply_mask_backward(&x, &d_est).to_tensor();
    let grads = backward(&tape, &d_mask)?;
    Ok(ItemOutput {
        loss,
        grads: Some(grads.params),
        bn_stats: tape.bn_batch_stats().to_vec(),
    })
}

/// Inference-path total loss together with every PReLU input value.
pub fn loss_and_prelu_inputs<T: Real>(
    params: &ParamMap<T>,
    cfg: &ModelConfig,
    mode: BnMode,
    stft: &Stft<T>,
    mix: &[T],
    clean: &[T],
) -> Result<(f64, Vec<T>)> {
    let x = stft.analyze(mix)?;
    let target = stft.analyze(clean)?;
    let mut g = Eval::recording_prelu(params, mode);
    let m = forward(&mut g, cfg, &x)?;
    let est = apply_mask(&x, &CrmMask::from_tensor(&m)?)?;
    let s_hat = stft.synthesize(&est)?;
    let loss = breakdown(cfg.variant.uses_log_mse(), &clean[..s_hat.len()], &s_hat, &target, &est)?;
    Ok((loss.total, g.prelu_inputs().unwrap_or_default().to_vec()))
}
