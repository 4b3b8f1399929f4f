//! Adam with bias correction, and global-norm gradient clipping.

use adar_tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::params::{ParamKind, ParamSet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Self::default() }
    }
}

/// First/second moments for each trainable entry of one `ParamSet`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        let zeros: Vec<Tensor<T>> = params.trainable().map(|e| Tensor::zeros(e.value.shape().to_vec())).collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|&v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = T::lit(max_norm / norm);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// One Adam update of every trainable entry. `grads` are in trainable
/// order (see [`ParamSet::gradients`]). Nothing is modified when any
/// gradient is non-finite.
pub fn optimizer_step<T: Scalar>(
    params: &mut ParamSet<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    let trainable: Vec<usize> = params
        .entries()
        .iter()
        .enumerate()
        .filter(|(_, e)| e.kind == ParamKind::Trainable)
        .map(|(i, _)| i)
        .collect();
    if grads.len() != trainable.len() || state.m.len() != trainable.len() {
        return Err(Error::Invalid(format!(
            "optimizer: {} gradients / {} moments for {} trainable tensors",
            grads.len(),
            state.m.len(),
            trainable.len()
        )));
    }
    for (&i, g) in trainable.iter().zip(grads) {
        let e = &params.entries()[i];
        if g.shape() != e.value.shape() {
            return Err(Error::Invalid(format!("optimizer: gradient shape {:?} for {}", g.shape(), e.name)));
        }
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient(e.name.clone()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (one_b1, one_b2) = (T::lit(1.0 - cfg.beta1), T::lit(1.0 - cfg.beta2));
    let step_size = T::lit(cfg.lr / (1.0 - cfg.beta1.powi(t)));
    let bc2_sqrt = T::lit((1.0 - cfg.beta2.powi(t)).sqrt());
    let eps = T::lit(cfg.eps);
    let entries = params.entries_mut();
    for (k, (&i, g)) in trainable.iter().zip(grads).enumerate() {
        let p = entries[i].value.data_mut();
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        for j in 0..p.len() {
            let gj = g.data()[j];
            m[j] = b1 * m[j] + one_b1 * gj;
            v[j] = b2 * v[j] + one_b2 * gj * gj;
            p[j] -= step_size * m[j] / (v[j].sqrt() / bc2_sqrt + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.add("w", Tensor::new([1], vec![v]).unwrap(), ParamKind::Trainable);
        p.add("running_mean", Tensor::new([1], vec![3.0]).unwrap(), ParamKind::Buffer);
        p
    }

    fn g(v: f64) -> Vec<Tensor<f64>> {
        vec![Tensor::new([1], vec![v]).unwrap()]
    }

    #[test]
    fn two_steps_by_hand() {
        let cfg = AdamConfig::default();
        let mut p = scalar(1.0);
        let mut s = AdamState::new(&p);
        optimizer_step(&mut p, &g(0.5), &mut s, &cfg).unwrap();
        optimizer_step(&mut p, &g(-0.25), &mut s, &cfg).unwrap();

        // m1 = 0.25, v1 = 2.5e-4; m2 = 0.0, v2 = 0.999 * 2.5e-4 + 0.001 * 0.0625
        let mut w = 1.0;
        w -= 1e-3 * (0.25 / 0.5) / ((2.5e-4f64 / 0.001).sqrt() + 1e-8);
        let v2 = 0.999 * 2.5e-4 + 0.001 * 0.0625;
        w -= 1e-3 * (0.0 / 0.75) / ((v2 / (1.0 - 0.999f64 * 0.999)).sqrt() + 1e-8);
        assert!((p.entries()[0].value.data()[0] - w).abs() < 1e-12);
        assert_eq!(s.step, 2);
        assert_eq!(s.m[0].data()[0], 0.0);
        assert_eq!(p.entries()[1].value.data()[0], 3.0);
    }

    #[test]
    fn zero_gradient_keeps_parameters_and_decays_moments() {
        let cfg = AdamConfig::default();
        let mut p = scalar(0.7);
        let mut s = AdamState::new(&p);
        optimizer_step(&mut p, &g(1.0), &mut s, &cfg).unwrap();
        let (before, m, v) = (p.entries()[0].value.data()[0], s.m[0].data()[0], s.v[0].data()[0]);
        optimizer_step(&mut p, &g(0.0), &mut s, &cfg).unwrap();
        assert_eq!(s.m[0].data()[0], 0.5 * m);
        assert_eq!(s.v[0].data()[0], 0.999 * v);
        // the moment from step one still moves the parameter
        assert!(p.entries()[0].value.data()[0] < before);

        let mut fresh = scalar(0.7);
        let mut s = AdamState::new(&fresh);
        optimizer_step(&mut fresh, &g(0.0), &mut s, &cfg).unwrap();
        assert_eq!(fresh.entries()[0].value.data()[0], 0.7);
    }

    #[test]
    fn constant_gradient_moves_by_lr() {
        let cfg = AdamConfig::with_lr(0.01);
        for grad in [3.0, -0.02] {
            let mut p = scalar(0.0);
            let mut s = AdamState::new(&p);
            let mut last = 0.0;
            for _ in 0..2000 {
                let before = p.entries()[0].value.data()[0];
                optimizer_step(&mut p, &g(grad), &mut s, &cfg).unwrap();
                last = p.entries()[0].value.data()[0] - before;
            }
            assert!((last + 0.01 * f64::signum(grad)).abs() < 1e-6, "{last}");
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected_untouched() {
        let cfg = AdamConfig::default();
        let mut p = scalar(0.3);
        let mut s = AdamState::new(&p);
        let err = optimizer_step(&mut p, &g(f64::NAN), &mut s, &cfg).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "w"));
        assert_eq!(p.entries()[0].value.data()[0], 0.3);
        assert_eq!(s, AdamState::new(&p));
        assert!(optimizer_step(&mut p, &[], &mut s, &cfg).is_err());
    }

    #[test]
    fn clipping_bounds_the_joint_norm() {
        let mut gs = vec![Tensor::new([2], vec![3.0, 0.0]).unwrap(), Tensor::new([1], vec![4.0f64]).unwrap()];
        assert_eq!(clip_global_norm(&mut gs, 1.0), 5.0);
        assert!((gs[0].data()[0] - 0.6).abs() < 1e-15 && (gs[1].data()[0] - 0.8).abs() < 1e-15);
        let kept = gs.clone();
        assert!((clip_global_norm(&mut gs, 10.0) - 1.0).abs() < 1e-15);
        assert_eq!(gs, kept);
    }
}
