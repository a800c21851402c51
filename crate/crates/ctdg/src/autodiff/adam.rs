//! Adam with bias correction.

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(params: &[Tensor], hyper: AdamHyper) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect(),
            step: 0,
            hyper,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update over aligned parameter/gradient lists.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(params.len(), grads.len(), "gradient count mismatch");
        self.step += 1;
        let t = self.step as i32;
        let h = self.hyper;
        let bc1 = 1.0 - h.beta1.powi(t);
        let bc2 = 1.0 - h.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            assert_eq!(p.shape(), g.shape(), "parameter/gradient shape mismatch");
            for ((pv, &gv), (mv, vv)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data().iter())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mv = h.beta1 * *mv + (1.0 - h.beta1) * gv;
                *vv = h.beta2 * *vv + (1.0 - h.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= h.lr * mhat / (vhat.sqrt() + h.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = vec![Tensor::row(vec![1.0, -2.0, 3.0])];
        let grads = vec![Tensor::zeros(1, 3)];
        let mut state = AdamState::new(&params, AdamHyper::with_lr(0.1));
        let before = params[0].clone();
        for _ in 0..5 {
            state.step(&mut params, &grads);
        }
        assert_eq!(params[0], before);
        assert_eq!(state.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // With eps -> 0, the bias-corrected first step is exactly -lr*sign(g).
        let lr = 0.01;
        let mut hyper = AdamHyper::with_lr(lr);
        hyper.eps = 1e-16;
        for g in [2.5, -0.003] {
            let mut params = vec![Tensor::scalar(1.0)];
            let grads = vec![Tensor::scalar(g)];
            let mut state = AdamState::new(&params, hyper);
            state.step(&mut params, &grads);
            let moved = params[0].at(0, 0) - 1.0;
            assert!(
                (moved + lr * g.signum()).abs() < 1e-9,
                "moved {moved} for grad {g}"
            );
        }
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let run = || {
            let mut params = vec![Tensor::row(vec![0.5, -0.5])];
            let mut state = AdamState::new(&params, AdamHyper::with_lr(0.003));
            for k in 0..50 {
                let g = Tensor::row(vec![(k as f64).sin(), (k as f64).cos()]);
                state.step(&mut params, &[g]);
            }
            params[0].data().iter().map(|v| v.to_bits()).collect::<Vec<u64>>()
        };
        assert_eq!(run(), run());
    }
}
