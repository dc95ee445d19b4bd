//! Adam with bias correction and optional decoupled weight decay.

use super::{Tensor, TensorError};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step_count: u64,
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    pub first_moment: Vec<Vec<f32>>,
    pub second_moment: Vec<Vec<f32>>,
}

/// One optimizer instance owning the moment state for a fixed, ordered set
/// of parameters. `step` must receive the parameters in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub state: AdamState,
    /// Decoupled weight-decay factor; applied only where `decay` is set.
    pub weight_decay: f32,
    pub decay: Vec<bool>,
    names: Vec<String>,
}

impl Adam {
    pub fn new(learning_rate: f32, weight_decay: f32) -> Self {
        Adam {
            state: AdamState {
                step_count: 0,
                learning_rate,
                beta1: 0.9,
                beta2: 0.999,
                epsilon: 1e-8,
                first_moment: Vec::new(),
                second_moment: Vec::new(),
            },
            weight_decay,
            decay: Vec::new(),
            names: Vec::new(),
        }
    }

    /// Registers one parameter; `decay` opts it into weight decay
    /// (weights yes, biases no, by convention of the caller).
    pub fn register(&mut self, name: &str, t: &Tensor, decay: bool) {
        self.state.first_moment.push(vec![0.0; t.len()]);
        self.state.second_moment.push(vec![0.0; t.len()]);
        self.decay.push(decay);
        self.names.push(name.to_string());
    }

    pub fn param_count(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Appends a fully materialized slot; checkpoint loading uses this.
    pub fn push_slot(&mut self, name: &str, decay: bool, first: Vec<f32>, second: Vec<f32>) {
        self.names.push(name.to_string());
        self.decay.push(decay);
        self.state.first_moment.push(first);
        self.state.second_moment.push(second);
    }

    /// Overwrites the moment state, e.g. when resuming from a checkpoint.
    /// Slot count and per-slot lengths must match what was registered.
    pub fn restore_state(
        &mut self,
        step_count: u64,
        first: Vec<Vec<f32>>,
        second: Vec<Vec<f32>>,
    ) -> Result<(), TensorError> {
        let shapes_match = first.len() == self.state.first_moment.len()
            && second.len() == first.len()
            && first
                .iter()
                .zip(&self.state.first_moment)
                .all(|(a, b)| a.len() == b.len())
            && second
                .iter()
                .zip(&self.state.second_moment)
                .all(|(a, b)| a.len() == b.len());
        if !shapes_match {
            return Err(TensorError::ShapeMismatch {
                op: "Adam::restore_state",
                left: vec![first.len()],
                right: vec![self.state.first_moment.len()],
            });
        }
        self.state.step_count = step_count;
        self.state.first_moment = first;
        self.state.second_moment = second;
        Ok(())
    }

    /// Applies one Adam step; consumes and clears each parameter's gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<(), TensorError> {
        assert_eq!(params.len(), self.names.len(), "parameter set drifted");
        self.state.step_count += 1;
        let t = self.state.step_count;
        let b1 = self.state.beta1;
        let b2 = self.state.beta2;
        let bc1 = 1.0 - (b1 as f64).powi(t as i32);
        let bc2 = 1.0 - (b2 as f64).powi(t as i32);
        let lr = self.state.learning_rate;
        let eps = self.state.epsilon;

        for (idx, p) in params.iter_mut().enumerate() {
            let g = p.grad.take().ok_or_else(|| TensorError::MissingGrad {
                name: self.names[idx].clone(),
            })?;
            debug_assert_eq!(g.len(), p.data.len(), "{}", self.names[idx]);
            let m = &mut self.state.first_moment[idx];
            let v = &mut self.state.second_moment[idx];
            let wd = if self.decay[idx] { self.weight_decay } else { 0.0 };
            for i in 0..g.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let mhat = (m[i] as f64 / bc1) as f32;
                let vhat = (v[i] as f64 / bc2) as f32;
                let old = p.data[i];
                p.data[i] = old - lr * (mhat / (vhat.sqrt() + eps)) - lr * wd * old;
            }
        }
        Ok(())
    }
}
