//! Adam with bias correction, plus Kaiming-normal weight initialization.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy)]
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
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first/second moment accumulators and step counter.
#[derive(Debug, Clone)]
struct AdamState<T> {
    m: Vec<T>,
    v: Vec<T>,
    step_count: u64,
}

/// Optimizer over a set of parameters addressed by a dense index (the
/// parameter registry hands out those indices). State is created lazily on
/// the first step that carries a gradient for a slot.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    cfg: AdamConfig,
    states: Vec<Option<AdamState<T>>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            states: Vec::new(),
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    /// Bias-corrected update of one parameter in place. Callers skip slots
    /// whose gradient is absent; an absent gradient means no update at all.
    pub fn step(&mut self, slot: usize, param: &mut Tensor<T>, grad: &Tensor<T>) -> Result<()> {
        if param.shape() != grad.shape() {
            return Err(Error::Shape(format!(
                "optimizer gradient shape {:?} does not match parameter shape {:?}",
                grad.shape(),
                param.shape()
            )));
        }
        if slot >= self.states.len() {
            self.states.resize(slot + 1, None);
        }
        let state = self.states[slot].get_or_insert_with(|| AdamState {
            m: vec![T::zero(); param.numel()],
            v: vec![T::zero(); param.numel()],
            step_count: 0,
        });
        if state.m.len() != param.numel() {
            return Err(Error::Shape(format!(
                "optimizer state for slot {slot} holds {} elements but the parameter has {}",
                state.m.len(),
                param.numel()
            )));
        }
        state.step_count += 1;
        let t = state.step_count as i32;
        let (b1, b2) = (T::from_f64(self.cfg.beta1), T::from_f64(self.cfg.beta2));
        let one = T::one();
        let corr1 = T::from_f64(1.0 - self.cfg.beta1.powi(t));
        let corr2 = T::from_f64(1.0 - self.cfg.beta2.powi(t));
        let lr = T::from_f64(self.cfg.lr);
        let eps = T::from_f64(self.cfg.eps);
        for ((p, g), (m, v)) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(state.m.iter_mut().zip(state.v.iter_mut()))
        {
            *m = b1 * *m + (one - b1) * *g;
            *v = b2 * *v + (one - b2) * *g * *g;
            let m_hat = *m / corr1;
            let v_hat = *v / corr2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Standard deviation of the Kaiming-normal distribution:
/// gain/√fan_in with gain = √(2/(1+slope²)).
pub fn kaiming_std(fan_in: usize, slope: f64) -> Result<f64> {
    if fan_in == 0 {
        return Err(Error::Shape("kaiming init requires fan_in > 0".into()));
    }
    let gain = (2.0 / (1.0 + slope * slope)).sqrt();
    Ok(gain / (fan_in as f64).sqrt())
}

/// Zero-mean normal draw with the Kaiming standard deviation. `fan_in` is
/// the product of input channels and kernel extent for convolutions, or the
/// input width for fully-connected weights.
pub fn kaiming_init<T: Scalar>(
    shape: Vec<usize>,
    fan_in: usize,
    slope: f64,
    rng: &mut StreamRng,
) -> Result<Tensor<T>> {
    let std = T::from_f64(kaiming_std(fan_in, slope)?);
    Ok(Tensor::randn(shape, std, rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_magnitude_is_the_learning_rate() {
        // With a constant unit gradient, bias correction makes m̂/√v̂ = 1,
        // so the first update moves by exactly lr (up to eps).
        let mut adam = Adam::<f64>::new(AdamConfig::default());
        let mut p = Tensor::scalar(1.0);
        let g = Tensor::scalar(1.0);
        adam.step(0, &mut p, &g).unwrap();
        let delta = 1.0 - p.item().unwrap();
        assert!((delta - 1e-3).abs() < 1e-9, "delta {delta}");
    }

    #[test]
    fn zero_gradient_leaves_the_parameter_unchanged() {
        let mut adam = Adam::<f64>::new(AdamConfig::default());
        let mut p = Tensor::scalar(0.75);
        let g = Tensor::scalar(0.0);
        adam.step(0, &mut p, &g).unwrap();
        assert_eq!(p.item().unwrap(), 0.75);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut adam = Adam::<f32>::new(AdamConfig::default());
            let mut rng = StreamRng::new(5, "init");
            let mut p = Tensor::<f32>::randn(vec![8], 1.0, &mut rng);
            for i in 1..=10 {
                let g = Tensor::full(vec![8], 0.1 * i as f32);
                adam.step(0, &mut p, &g).unwrap();
            }
            p.data().to_vec()
        };
        let (a, b) = (run(), run());
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut adam = Adam::<f64>::new(AdamConfig::default());
        let mut p = Tensor::zeros(vec![2]);
        let g = Tensor::zeros(vec![3]);
        assert!(adam.step(0, &mut p, &g).is_err());
    }

    #[test]
    fn kaiming_std_closed_forms() {
        assert!((kaiming_std(100, 0.0).unwrap() - (2.0f64 / 100.0).sqrt()).abs() < 1e-12);
        assert!((kaiming_std(2, 1.0).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!(kaiming_std(0, 0.0).is_err());
    }

    #[test]
    fn kaiming_samples_match_the_target_distribution() {
        let mut rng = StreamRng::new(17, "init");
        let n = 100_000;
        let t = kaiming_init::<f64>(vec![n], 100, 0.0, &mut rng).unwrap();
        let mean: f64 = t.data().iter().sum::<f64>() / n as f64;
        let var: f64 = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let target_std = (2.0f64 / 100.0).sqrt();
        assert!(mean.abs() < 3.0 * target_std / (n as f64).sqrt(), "mean {mean}");
        let emp_std = var.sqrt();
        assert!(
            (emp_std - target_std).abs() / target_std < 0.05,
            "std {emp_std} vs {target_std}"
        );
    }
}
