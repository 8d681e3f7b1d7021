use super::{NumericsError, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: ParamSet,
    v: ParamSet,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One bias-corrected ADAM update on every parameter for which `trainable`
/// returns true. Other parameters and their moments are left untouched.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &ParamSet,
    state: &mut AdamState,
    config: &AdamConfig,
    trainable: impl Fn(&str) -> bool,
) -> Result<(), NumericsError> {
    if !params.same_layout(grads) || !params.same_layout(&state.m) {
        return Err(NumericsError::Dimension {
            op: "adam_step",
            detail: "parameters, gradients and optimizer state differ in paths or shapes".into(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    let AdamState { m, v, .. } = state;
    for (((path, p), (_, m)), (_, v)) in params.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
        if !trainable(path) {
            continue;
        }
        let g = grads.get(path)?.data();
        for (k, w) in p.data_mut().iter_mut().enumerate() {
            let mk = &mut m.data_mut()[k];
            *mk = config.beta1 * *mk + (1.0 - config.beta1) * g[k];
            let mhat = *mk / c1;
            let vk = &mut v.data_mut()[k];
            *vk = config.beta2 * *vk + (1.0 - config.beta2) * g[k] * g[k];
            let vhat = *vk / c2;
            *w -= config.lr * mhat / (vhat.sqrt() + config.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{InitSpec, Tensor};
    use crate::rng;

    fn params() -> ParamSet {
        let mut p = ParamSet::new();
        let mut r = rng::stream(0, &[]);
        p.register("a", &[3], InitSpec::HeNormal { fan_in: 3 }, &mut r).unwrap();
        p.register("b", &[2, 2], InitSpec::HeNormal { fan_in: 3 }, &mut r).unwrap();
        p
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = params();
        let before = p.clone();
        let mut s = AdamState::new(&p);
        let g = p.zeros_like();
        adam_step(&mut p, &g, &mut s, &AdamConfig::default(), |_| true).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = params();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.assign("a", &Tensor::new(vec![3], vec![0.5, -2.0, 7.0]).unwrap()).unwrap();
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig { lr: 0.01, ..Default::default() };
        adam_step(&mut p, &g, &mut s, &cfg, |_| true).unwrap();
        for (a, b) in p.get("a").unwrap().data().iter().zip(before.get("a").unwrap().data()) {
            assert!(((a - b).abs() - 0.01).abs() < 1e-8);
        }
    }

    #[test]
    fn frozen_paths_stay_bit_identical() {
        let mut p = params();
        let before = p.clone();
        let g = {
            let mut g = p.zeros_like();
            g.assign("b", &Tensor::filled(&[2, 2], 1.0)).unwrap();
            g.assign("a", &Tensor::filled(&[3], 1.0)).unwrap();
            g
        };
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, &AdamConfig::default(), |path| path != "b").unwrap();
        assert_eq!(p.get("b").unwrap(), before.get("b").unwrap());
        assert_ne!(p.get("a").unwrap(), before.get("a").unwrap());
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let mut p = params();
        let mut s = AdamState::new(&p);
        let mut g = ParamSet::new();
        g.register("a", &[3], InitSpec::Constant(0.0), &mut rng::stream(0, &[])).unwrap();
        assert!(adam_step(&mut p, &g, &mut s, &AdamConfig::default(), |_| true).is_err());
    }
}
