//! Adam with bias correction.

use super::tensor::Tensor;
use super::NnError;

/// First/second moment buffers plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn moments(&self, index: usize) -> (&[f64], &[f64]) {
        (&self.m[index], &self.v[index])
    }

    /// One update over all parameters. A parameter whose grad buffer is
    /// unset (a disconnected branch) is treated as having zero gradient.
    /// The step counter increments once per call.
    pub fn step(&mut self, params: &[Tensor], lr: f64) -> Result<(), NnError> {
        if params.len() != self.m.len() {
            return Err(NnError::ShapeMismatch {
                context: format!("optimizer built for {} params, got {}", self.m.len(), params.len()),
            });
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (index, param) in params.iter().enumerate() {
            let grad = param.grad();
            let grad = match &grad {
                Some(g) => {
                    if g.len() != param.len() {
                        return Err(NnError::ShapeMismatch {
                            context: format!(
                                "grad len {} vs param len {} at index {index}",
                                g.len(),
                                param.len()
                            ),
                        });
                    }
                    g.as_slice()
                }
                None => &[],
            };
            let m = &mut self.m[index];
            let v = &mut self.v[index];
            param.update_data(|data| {
                for j in 0..data.len() {
                    let g = if grad.is_empty() { 0.0 } else { grad[j] };
                    m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                    v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                    let m_hat = m[j] / bc1;
                    let v_hat = v[j] / bc2;
                    data[j] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
                }
            });
        }
        Ok(())
    }
}
