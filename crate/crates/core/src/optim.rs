//! AdamW with decoupled weight decay and a warmup + cosine learning-rate
//! schedule.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::head::{ParamKind, ParamMut};
use crate::{Error, Result};

/// Linear warmup from 0 to `peak_lr`, then cosine decay to `min_lr`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub peak_lr: f64,
    pub min_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl Schedule {
    /// Learning rate for zero-based `step`. The decay phase reaches
    /// `min_lr` exactly on the last step.
    pub fn lr_at(&self, step: usize) -> Result<f64> {
        if step >= self.total_steps {
            return Err(Error::StepOutOfRange {
                step,
                total: self.total_steps,
            });
        }
        if step < self.warmup_steps {
            return Ok(self.peak_lr * step as f64 / self.warmup_steps as f64);
        }
        let span = self.total_steps - 1 - self.warmup_steps;
        if span == 0 {
            return Ok(self.peak_lr);
        }
        let progress = (step - self.warmup_steps) as f64 / span as f64;
        let cosine = 0.5 * (1.0 + libm::cos(core::f64::consts::PI * progress));
        Ok(self.min_lr + (self.peak_lr - self.min_lr) * cosine)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Apply weight decay to batch-norm gain/bias as well.
    pub decay_norm: bool,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.0,
            decay_norm: false,
        }
    }
}

impl AdamWConfig {
    fn decays(&self, kind: ParamKind) -> bool {
        match kind {
            ParamKind::Weight => true,
            ParamKind::Norm => self.decay_norm,
            ParamKind::Bias => false,
        }
    }
}

/// First and second moment buffers per trainable array.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub names: Vec<String>,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(arrays: impl IntoIterator<Item = (String, usize)>) -> Self {
        let (names, sizes): (Vec<String>, Vec<usize>) = arrays.into_iter().unzip();
        Self {
            names,
            first_moment: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }
}

/// One AdamW update over named arrays and their gradients.
///
/// Every gradient is checked for finiteness before anything is modified, so
/// a failed step leaves parameters and state untouched. Arrays whose
/// position in `frozen` is `true` are skipped entirely.
pub fn adamw_step(
    params: &mut [ParamMut<'_>],
    grads: &[&[f64]],
    frozen: &[bool],
    state: &mut OptimizerState,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::LengthMismatch {
            expected: state.first_moment.len(),
            actual: params.len(),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.values.len() != g.len() || state.first_moment[i].len() != g.len() {
            return Err(Error::ShapeMismatch {
                what: "optimizer array",
                expected: p.values.len(),
                actual: g.len(),
            });
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient { array: p.name.clone() });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - libm::pow(cfg.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(cfg.beta2, t as f64);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if frozen.get(i).copied().unwrap_or(false) {
            continue;
        }
        let decay = if cfg.decays(p.kind) { cfg.weight_decay } else { 0.0 };
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        for j in 0..g.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            let w = &mut p.values[j];
            *w -= lr * (m_hat / (libm::sqrt(v_hat) + cfg.eps) + decay * *w);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn one(values: &mut [f64], kind: ParamKind) -> ParamMut<'_> {
        ParamMut {
            name: "p".to_string(),
            kind,
            values,
        }
    }

    fn state_for(n: usize) -> OptimizerState {
        OptimizerState::new([("p".to_string(), n)])
    }

    #[test]
    fn warmup_midpoint_and_peak() {
        let s = Schedule {
            peak_lr: 6e-4,
            min_lr: 3e-5,
            warmup_steps: 250,
            total_steps: 5000,
        };
        assert_eq!(s.lr_at(0).unwrap(), 0.0);
        assert!((s.lr_at(125).unwrap() - 3e-4).abs() < 1e-18);
        assert!((s.lr_at(250).unwrap() - 6e-4).abs() < 1e-18);
        assert!((s.lr_at(4999).unwrap() - 3e-5).abs() <= 3e-5 * 1e-9);
        assert!(matches!(s.lr_at(5000), Err(Error::StepOutOfRange { .. })));
    }

    #[test]
    fn schedule_is_monotone_after_warmup() {
        let s = Schedule {
            peak_lr: 1.0,
            min_lr: 0.1,
            warmup_steps: 10,
            total_steps: 100,
        };
        let lrs: Vec<f64> = (10..100).map(|i| s.lr_at(i).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = [1.5, -2.0];
        let mut st = state_for(2);
        adamw_step(
            &mut [one(&mut p, ParamKind::Weight)],
            &[&[0.0, 0.0]],
            &[],
            &mut st,
            0.1,
            &AdamWConfig::default(),
        )
        .unwrap();
        assert_eq!(p, [1.5, -2.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn pure_decay_shrinks_weights() {
        let mut p = [2.0];
        let mut st = state_for(1);
        let cfg = AdamWConfig {
            weight_decay: 0.8,
            ..Default::default()
        };
        adamw_step(
            &mut [one(&mut p, ParamKind::Weight)],
            &[&[0.0]],
            &[],
            &mut st,
            0.1,
            &cfg,
        )
        .unwrap();
        assert!((p[0] - 2.0 * (1.0 - 0.08)).abs() < 1e-15);

        let mut b = [2.0];
        adamw_step(
            &mut [one(&mut b, ParamKind::Bias)],
            &[&[0.0]],
            &[],
            &mut state_for(1),
            0.1,
            &cfg,
        )
        .unwrap();
        assert_eq!(b, [2.0]);
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let mut p = [1.0];
        let mut st = state_for(1);
        let err = adamw_step(
            &mut [one(&mut p, ParamKind::Weight)],
            &[&[f64::NAN]],
            &[],
            &mut st,
            0.1,
            &AdamWConfig::default(),
        )
        .unwrap_err();
        assert_eq!(err, Error::NonFiniteGradient { array: "p".into() });
        assert_eq!(p, [1.0]);
        assert_eq!(st.step, 0);
    }
}
