use crate::error::Error;
use crate::tensor::{ParamId, ParamStore, Tensor};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        Self { learning_rate, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, indexed by parameter.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    step: u64,
    moments: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of every parameter in `grads`.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &[(ParamId, Tensor)],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    for (id, grad) in grads {
        if store.get(*id).shape() != grad.shape() {
            return Err(Error::Invariant(format!(
                "gradient shape {:?} for parameter {} of shape {:?}",
                grad.shape(),
                store.name(*id),
                store.get(*id).shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (id, grad) in grads {
        let i = id.index();
        if state.moments.len() <= i {
            state.moments.resize(i + 1, None);
        }
        let n = grad.numel();
        let (m, v) = state.moments[i].get_or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
        let mut value = store.get(*id).to_vec();
        for (k, &gk) in grad.data().iter().enumerate() {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
            value[k] -= cfg.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + cfg.eps);
        }
        let updated = store.get(*id).with_data(value)?;
        store.set(*id, updated)?;
    }
    Ok(())
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [(ParamId, Tensor)], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|(_, g)| g.data().iter()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            *g = g.map(|v| v * s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("x", Tensor::full(&[1, 1], v)).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut s, id) = one_param(1.5);
        let mut st = AdamState::new();
        for _ in 0..10 {
            adam_step(&mut s, &[(id, Tensor::zeros(&[1, 1]))], &mut st, &AdamConfig::new(0.1)).unwrap();
        }
        assert_eq!(s.get(id).item(), 1.5);
    }

    #[test]
    fn constant_gradient_steps_approach_learning_rate() {
        let (mut s, id) = one_param(0.0);
        let mut st = AdamState::new();
        let cfg = AdamConfig::new(0.01);
        let mut last = 0.0;
        for _ in 0..1000 {
            let before = s.get(id).item();
            adam_step(&mut s, &[(id, Tensor::full(&[1, 1], 3.0))], &mut st, &cfg).unwrap();
            last = before - s.get(id).item();
        }
        assert!((last - 0.01).abs() < 1e-6, "{last}");
    }

    #[test]
    fn scalar_quadratic_converges() {
        // f(x) = (x - 3)^2, gradient 2(x - 3).
        let (mut s, id) = one_param(0.0);
        let mut st = AdamState::new();
        let cfg = AdamConfig::new(0.1);
        let mut steps = 0;
        while (s.get(id).item() - 3.0).abs() > 1e-4 || steps < 1 {
            let g = 2.0 * (s.get(id).item() - 3.0);
            adam_step(&mut s, &[(id, Tensor::full(&[1, 1], g))], &mut st, &cfg).unwrap();
            steps += 1;
            assert!(steps <= 500, "not converged: x = {}", s.get(id).item());
        }
    }

    #[test]
    fn rejects_shape_mismatch() {
        let (mut s, id) = one_param(0.0);
        let r = adam_step(&mut s, &[(id, Tensor::zeros(&[1, 2]))], &mut AdamState::new(), &AdamConfig::new(0.1));
        assert!(r.is_err());
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let (s, id) = one_param(0.0);
        let _ = s;
        let mut g = vec![(id, Tensor::matrix(1, 2, vec![3.0, 4.0]))];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0].1.data()[0] - 0.6).abs() < 1e-15);
        let mut small = vec![(id, Tensor::matrix(1, 2, vec![0.3, 0.4]))];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].1.data(), &[0.3, 0.4]);
    }
}
