use super::{LrScheduleKind, TensorMeta, TrainConfig, TransformerParams};
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Learning rate for the update at 0-based `step`.
///
/// Warmup rises linearly from 0 at step 0 to the peak at `warmup_steps`; the
/// linear schedule then decays to 0 at `total_steps`. When `total_steps` does
/// not exceed the warmup, only the warmup ramp applies.
pub fn lr_schedule(step: usize, tc: &TrainConfig, total_steps: usize) -> f64 {
    let peak = tc.learning_rate;
    let warmup = tc.warmup_steps;
    if step < warmup {
        return peak * step as f64 / warmup as f64;
    }
    if total_steps <= warmup {
        return peak;
    }
    match tc.schedule {
        LrScheduleKind::Constant => peak,
        LrScheduleKind::Linear => {
            let remaining = total_steps.saturating_sub(step) as f64;
            peak * remaining / (total_steps - warmup) as f64
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    decay: Vec<bool>,
}

impl AdamState {
    pub fn new(params: &TransformerParams) -> Self {
        let meta: Vec<TensorMeta> = params.tensor_meta();
        let sizes: Vec<usize> = params.slices().iter().map(|s| s.len()).collect();
        AdamState {
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            decay: meta.iter().map(|m| m.decay).collect(),
        }
    }
}

/// One AdamW update with bias correction. Decoupled weight decay
/// (`p -= lr · weight_decay · p`) applies to weight matrices and embeddings
/// only, never to biases or layer-norm parameters.
pub fn adamw_step(
    params: &mut TransformerParams,
    grads: &TransformerParams,
    state: &mut AdamState,
    tc: &TrainConfig,
    lr: f64,
) -> Result<()> {
    let grad_slices = grads.slices();
    if grad_slices.len() != state.m.len()
        || grad_slices
            .iter()
            .zip(&state.m)
            .any(|(g, m)| g.len() != m.len())
    {
        return Err(Error::InvalidInput(
            "gradient shapes do not match the optimizer state".into(),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let decay_factor = 1.0 - lr * tc.weight_decay;
    for (i, (p, g)) in params.slices_mut().into_iter().zip(grad_slices).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let decay = state.decay[i] && tc.weight_decay != 0.0;
        for j in 0..p.len() {
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g[j];
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
            if decay {
                p[j] *= decay_factor;
            }
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence(format!(
                "non-finite parameter after update {}",
                state.step
            )));
        }
    }
    Ok(())
}
