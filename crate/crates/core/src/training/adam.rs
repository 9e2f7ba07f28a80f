//! Adam optimizer state over a flat parameter index space.

/// First/second moment accumulators. Parameters are addressed by a stable
/// flat offset supplied by the caller, so one state can cover a model's
/// layers and trainable modes with different learning rates per segment.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Updates one contiguous parameter segment starting at `offset`.
    /// Halves run on separate threads; each element is touched by exactly
    /// one thread in a fixed order, so the result is schedule-independent.
    pub fn update_segment(&mut self, offset: usize, lr: f64, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), grads.len());
        debug_assert!(self.t >= 1, "begin_step before update");
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let n = params.len();
        let (beta1, beta2, eps) = (self.beta1, self.beta2, self.eps);
        let half = n / 2;
        let (p_lo, p_hi) = params.split_at_mut(half);
        let (g_lo, g_hi) = grads.split_at(half);
        let (m_lo, m_rest) = self.m[offset..offset + n].split_at_mut(half);
        let (v_lo, v_rest) = self.v[offset..offset + n].split_at_mut(half);
        let kernel = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for k in 0..p.len() {
                let gk = g[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                p[k] -= lr * mhat / (vhat.sqrt() + eps);
            }
        };
        if n >= 4096 {
            rayon::join(
                || kernel(p_lo, g_lo, m_lo, v_lo),
                || kernel(p_hi, g_hi, m_rest, v_rest),
            );
        } else {
            kernel(p_lo, g_lo, m_lo, v_lo);
            kernel(p_hi, g_hi, m_rest, v_rest);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient() {
        let mut adam = AdamState::new(2);
        let mut p = [1.0, -2.0];
        let g = [0.3, -0.7];
        adam.begin_step();
        adam.update_segment(0, 0.01, &mut p, &g);
        // bias correction makes the very first update ~ lr * sign(g)
        assert!((p[0] - (1.0 - 0.01)).abs() < 1e-6, "{}", p[0]);
        assert!((p[1] - (-2.0 + 0.01)).abs() < 1e-6, "{}", p[1]);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut adam = AdamState::new(1);
        let mut p = [3.0];
        for _ in 0..4000 {
            let g = [2.0 * (p[0] - 0.5)];
            adam.begin_step();
            adam.update_segment(0, 0.01, &mut p, &g);
        }
        assert!((p[0] - 0.5).abs() < 1e-3, "{}", p[0]);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut adam = AdamState::new(3);
            let mut p = [0.1, 0.2, 0.3];
            for i in 0..100 {
                let g = [(i as f64).sin(), 0.5, -0.1 * i as f64];
                adam.begin_step();
                adam.update_segment(0, 1e-3, &mut p, &g);
            }
            p
        };
        let a = run();
        let b = run();
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[2].to_bits(), b[2].to_bits());
    }
}
