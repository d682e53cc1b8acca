use ndarray::Array2;

use crate::model::ModelParameters;

/// Adaptive-moment optimizer with bias-corrected first and second moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(
        params: &ModelParameters,
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    ) -> Self {
        let zeros: Vec<_> = params
            .blocks()
            .map(|(_, b)| Array2::zeros(b.raw_dim()))
            .collect();
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// Applies one update. An all-zero gradient is a no-op and does not advance the step count.
    pub fn step(&mut self, params: &mut ModelParameters, grads: &[Array2<f64>]) {
        if grads.iter().all(|g| g.iter().all(|&v| v == 0.0)) {
            return;
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (((_, p), g), (m, v)) in params
            .blocks_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
                });
        }
    }
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Array2<f64>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.mapv_inplace(|v| v * scale);
        }
    }
    norm
}
