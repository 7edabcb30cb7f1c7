//! RMSProp parameter updates.

use std::collections::BTreeMap;

use super::{Gradients, NnError, ParameterSet, Tensor};

/// RMSProp: v ← ρ·v + (1−ρ)·g², x ← x − lr·g/√(v+ε). Accumulators are
/// keyed by parameter name and lazily initialized to zero.
#[derive(Debug, Clone)]
pub struct RmsProp {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    accum: BTreeMap<String, Tensor>,
}

impl RmsProp {
    pub fn new(lr: f64) -> Self {
        Self::with_constants(lr, 0.99, 1e-8)
    }

    pub fn with_constants(lr: f64, rho: f64, eps: f64) -> Self {
        Self {
            lr,
            rho,
            eps,
            accum: BTreeMap::new(),
        }
    }

    /// One update. `grads` must be keyed exactly like `params`.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &Gradients) -> Result<(), NnError> {
        let param_names: Vec<String> = params.names().cloned().collect();
        let grad_names: Vec<&String> = grads.iter().map(|(n, _)| n).collect();
        if param_names.len() != grad_names.len()
            || !param_names.iter().zip(&grad_names).all(|(p, g)| &p == g)
        {
            return Err(NnError::KeyMismatch(format!(
                "params {param_names:?} vs grads {grad_names:?}"
            )));
        }
        for name in &param_names {
            let g = grads.get(name);
            let p = params.get_mut(name);
            if g.shape() != p.shape() {
                return Err(NnError::ShapeMismatch(format!(
                    "grad {name}: {:?} vs param {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let v = self
                .accum
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            if v.shape() != p.shape() {
                return Err(NnError::ShapeMismatch(format!(
                    "accumulator {name}: {:?} vs param {:?}",
                    v.shape(),
                    p.shape()
                )));
            }
            let (rho, lr, eps) = (self.rho, self.lr, self.eps);
            for ((x, &g), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(v.data_mut())
            {
                *v = rho * *v + (1.0 - rho) * g * g;
                *x -= lr * g / (*v + eps).sqrt();
            }
        }
        Ok(())
    }

    pub fn accumulator(&self, name: &str) -> Option<&Tensor> {
        self.accum.get(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(value: f64) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::scalar(value));
        p
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = one_param(0.7);
        let grads = Gradients::zeros_like(&params);
        let mut opt = RmsProp::new(0.01);
        opt.step(&mut params, &grads).unwrap();
        assert_eq!(params.get("w").data()[0], 0.7);
    }

    #[test]
    fn constant_gradient_step_approaches_lr() {
        let mut params = one_param(0.0);
        let mut grads = Gradients::zeros_like(&params);
        grads.get_mut("w").data_mut()[0] = 2.0;
        let lr = 0.01;
        let mut opt = RmsProp::new(lr);
        let mut prev = 0.0;
        let mut displacement = 0.0;
        for _ in 0..2000 {
            opt.step(&mut params, &grads).unwrap();
            let x = params.get("w").data()[0];
            displacement = (x - prev).abs();
            prev = x;
        }
        assert!(
            (displacement - lr).abs() < 1e-4,
            "per-step displacement {displacement} should approach lr {lr}"
        );
    }

    #[test]
    fn accumulator_stays_nonnegative() {
        let mut params = one_param(1.0);
        let mut grads = Gradients::zeros_like(&params);
        let mut opt = RmsProp::new(0.001);
        for sign in [1.0, -1.0, 1.0, -1.0, 1.0] {
            grads.get_mut("w").data_mut()[0] = sign * 3.0;
            opt.step(&mut params, &grads).unwrap();
            assert!(opt.accumulator("w").unwrap().data()[0] >= 0.0);
        }
    }

    #[test]
    fn key_mismatch_is_rejected() {
        let mut params = one_param(1.0);
        let other = one_param(1.0);
        let mut wrong = ParameterSet::new();
        wrong.insert("b", Tensor::scalar(0.0));
        let grads = Gradients::zeros_like(&wrong);
        let mut opt = RmsProp::new(0.01);
        assert!(opt.step(&mut params, &grads).is_err());
        drop(other);
    }
}
