use crate::array::DenseArray;
use crate::error::{GradError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tape::Gradients;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected adaptive-moment optimizer over a fixed set of parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    ids: Vec<ParamId>,
    first: Vec<DenseArray>,
    second: Vec<DenseArray>,
    step: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, ids: Vec<ParamId>, config: AdamConfig) -> Self {
        let first = ids.iter().map(|&id| DenseArray::zeros(store.get(id).shape())).collect();
        let second = ids.iter().map(|&id| DenseArray::zeros(store.get(id).shape())).collect();
        Self { config, ids, first, second, step: 0 }
    }

    /// Optimizer over every parameter in the store.
    pub fn for_all(store: &ParamStore, config: AdamConfig) -> Self {
        Self::new(store, store.ids().collect(), config)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    /// Applies one update from a gradient map produced by `Tape::backward`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        let gs: Vec<DenseArray> = self.ids.iter().map(|&id| grads.param(id)).collect();
        self.step_with(store, &gs)
    }

    /// Applies one update from explicit per-parameter gradients, in the
    /// order of [`Adam::ids`].
    pub fn step_with(&mut self, store: &mut ParamStore, grads: &[DenseArray]) -> Result<()> {
        if grads.len() != self.ids.len() {
            return Err(GradError::ShapeMismatch {
                op: "adam_step",
                shapes: vec![vec![self.ids.len()], vec![grads.len()]],
            });
        }
        for (&id, g) in self.ids.iter().zip(grads) {
            if store.get(id).shape() != g.shape() {
                return Err(GradError::ShapeMismatch {
                    op: "adam_step",
                    shapes: vec![store.get(id).shape().to_vec(), g.shape().to_vec()],
                });
            }
            if !g.all_finite() {
                return Err(GradError::NonFinite { op: "adam_step" });
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (k, (&id, g)) in self.ids.iter().zip(grads).enumerate() {
            let m = self.first[k].data_mut();
            let v = self.second[k].data_mut();
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("p", DenseArray::new(vec![1], vec![value]).unwrap());
        (store, id)
    }

    fn grad(v: f64) -> Vec<DenseArray> {
        vec![DenseArray::new(vec![1], vec![v]).unwrap()]
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut store, id) = single(2.0);
        let mut adam = Adam::for_all(&store, AdamConfig::default());
        adam.step_with(&mut store, &grad(0.0)).unwrap();
        assert_eq!(store.get(id).item(), 2.0);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = 1, v̂ = 1, so the step is lr / (1 + eps).
        let (mut store, id) = single(0.0);
        let mut adam = Adam::for_all(&store, AdamConfig::default());
        adam.step_with(&mut store, &grad(1.0)).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((store.get(id).item() - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_moves_against_sign() {
        for g in [0.3, -2.0] {
            let (mut store, id) = single(1.0);
            let mut adam = Adam::for_all(&store, AdamConfig::default());
            let mut prev = store.get(id).item();
            for _ in 0..200 {
                adam.step_with(&mut store, &grad(g)).unwrap();
                let now = store.get(id).item();
                assert_eq!((now - prev).signum(), -g.signum());
                prev = now;
            }
            assert_eq!(adam.steps(), 200);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let (mut store, _) = single(1.0);
        let mut adam = Adam::for_all(&store, AdamConfig::default());
        let bad = vec![DenseArray::zeros(&[2])];
        assert!(matches!(adam.step_with(&mut store, &bad), Err(GradError::ShapeMismatch { op: "adam_step", .. })));
        assert_eq!(adam.steps(), 0);
    }
}
