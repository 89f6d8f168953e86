use super::config::NeuSEConfig;
use super::params::NeuSEParams;

/// Adam moment accumulators, shaped exactly like the parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub t: u64,
    pub m: NeuSEParams,
    pub v: NeuSEParams,
}

impl AdamState {
    pub fn new(params: &NeuSEParams) -> Self {
        AdamState { t: 0, m: NeuSEParams::zeros_like(params), v: NeuSEParams::zeros_like(params) }
    }
}

/// One bias-corrected Adam update over every parameter group. The gradient
/// must be shaped like the parameters (dense; untouched entries are zero).
pub fn adam_step(
    params: &mut NeuSEParams,
    grad: &NeuSEParams,
    state: &mut AdamState,
    config: &NeuSEConfig,
) {
    state.t += 1;
    let b1 = config.beta1;
    let b2 = config.beta2;
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    let lr = config.lr;
    let eps = config.eps;

    let mut pg = params.groups_mut();
    let gg = grad.groups();
    let mut mg = state.m.groups_mut();
    let mut vg = state.v.groups_mut();
    assert_eq!(pg.len(), gg.len());
    for idx in 0..pg.len() {
        let (_, p) = &mut pg[idx];
        let (_, g) = &gg[idx];
        let (_, m) = &mut mg[idx];
        let (_, v) = &mut vg[idx];
        debug_assert_eq!(p.len(), g.len());
        for k in 0..p.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
