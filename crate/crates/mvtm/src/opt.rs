//! Adam (ascent direction) with bias correction and a single-cycle cosine
//! learning-rate schedule.

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS_ADAM: f64 = 1e-8;

/// First/second moment estimates plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: u32,
}

impl<T: Real> AdamState<T> {
    pub fn new(dim: usize) -> Self {
        AdamState { m: vec![T::zero(); dim], v: vec![T::zero(); dim], t: 0 }
    }

    /// One ascent step: `params ← params + lr·m̂/(√v̂ + ε)`.
    pub fn step(&mut self, params: &mut [T], grad: &[T], lr: T) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "Adam dimension mismatch: state {}, params {}, grad {}",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        self.t += 1;
        let b1 = lit::<T>(BETA1);
        let b2 = lit::<T>(BETA2);
        let eps = lit::<T>(EPS_ADAM);
        let one = T::one();
        let bc1 = one - lit::<T>(BETA1.powi(self.t as i32));
        let bc2 = one - lit::<T>(BETA2.powi(self.t as i32));
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] += lr * m_hat / (v_hat.sqrt() + eps);
            if !to_f64(params[i]).is_finite() {
                return Err(Error::numerical(format!(
                    "non-finite parameter after Adam update at coordinate {i}"
                )));
            }
        }
        Ok(())
    }
}

/// Single-cycle cosine annealing: `lr(e) = lr₀·½(1 + cos(π·e/E_max))`.
pub fn cosine_lr<T: Real>(epoch: usize, initial_lr: T, max_epochs: usize) -> T {
    if max_epochs == 0 {
        return initial_lr;
    }
    let frac = lit::<T>(epoch as f64 / max_epochs as f64);
    initial_lr * lit::<T>(0.5) * (T::one() + (T::pi() * frac).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cosine_schedule_endpoints() {
        assert_relative_eq!(cosine_lr(0, 0.01, 500), 0.01);
        assert_relative_eq!(cosine_lr(500, 0.01, 500), 0.0, epsilon = 1e-18);
        assert_relative_eq!(cosine_lr(250, 0.01, 500), 0.005);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut st = AdamState::<f64>::new(3);
        let mut p = vec![1.0, -2.0, 0.5];
        let orig = p.clone();
        for _ in 0..10 {
            st.step(&mut p, &[0.0; 3], 0.01).unwrap();
        }
        assert_eq!(p, orig);
    }

    #[test]
    fn first_step_is_signwise_lr() {
        // With zero moments, m̂ = g and v̂ = g², so the step is lr·g/(|g|+ε).
        let mut st = AdamState::<f64>::new(2);
        let mut p = vec![0.0, 0.0];
        st.step(&mut p, &[3.0, -0.25], 0.01).unwrap();
        assert_relative_eq!(p[0], 0.01, epsilon = 1e-8);
        assert_relative_eq!(p[1], -0.01, epsilon = 1e-7);
    }

    #[test]
    fn ascends_a_concave_objective() {
        // maximize −(x−2)², gradient 2(2−x)
        let mut st = AdamState::<f64>::new(1);
        let mut p = vec![-1.0];
        for _ in 0..2000 {
            let g = 2.0 * (2.0 - p[0]);
            st.step(&mut p, &[g], 0.05).unwrap();
        }
        assert_relative_eq!(p[0], 2.0, epsilon = 1e-3);
    }

    #[test]
    fn deterministic_replay() {
        let run = || {
            let mut st = AdamState::<f64>::new(2);
            let mut p = vec![0.3, -0.7];
            for i in 0..50 {
                let g = [p[1] + i as f64 * 0.01, -p[0]];
                st.step(&mut p, &g, 0.01).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut st = AdamState::<f64>::new(2);
        let mut p = vec![0.0; 3];
        assert!(st.step(&mut p, &[0.0; 3], 0.01).is_err());
    }
}
