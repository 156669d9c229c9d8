use crate::{Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn for_params(params: &[Tensor]) -> Self {
        AdamState {
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len()
    {
        return Err(TensorError::shape(
            "adam_step",
            format!(
                "{} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if !p.same_shape(g) || !p.same_shape(&state.m[i]) || !p.same_shape(&state.v[i]) {
            return Err(TensorError::shape(
                "adam_step",
                format!("param {} has shape {:?}, grad {:?}", i, p.shape(), g.shape()),
            ));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((w, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mj = cfg.beta1 * *mj + (1.0 - cfg.beta1) * gj;
            *vj = cfg.beta2 * *vj + (1.0 - cfg.beta2) * gj * gj;
            let mhat = *mj / c1;
            let vhat = *vj / c2;
            *w -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
