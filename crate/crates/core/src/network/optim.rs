use crate::error::{LriError, Result};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(LriError::Config(format!("learning rate must be positive, got {lr}")));
        }
        for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(LriError::Config(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if !(eps > 0.0) {
            return Err(LriError::Config(format!("epsilon must be positive, got {eps}")));
        }
        Ok(Adam {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(LriError::Shape(format!(
                "optimizer holds {} moments, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(LriError::Numerical(format!(
                "non-finite gradient {} at parameter {i} (step {})",
                grad[i],
                self.t + 1
            )));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut opt = Adam::new(3, 1e-3, 0.99, 0.9999, 1e-8).unwrap();
        let mut p = vec![1.0, -2.0, 3.5];
        for _ in 0..10 {
            opt.step(&mut p, &[0.0; 3]).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut opt = Adam::new(2, 0.01, 0.99, 0.9999, 1e-8).unwrap();
        let mut p = vec![0.0, 0.0];
        opt.step(&mut p, &[5.0, -0.2]).unwrap();
        assert!((p[0] + 0.01).abs() < 1e-9 && (p[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn quadratic_converges_to_its_minimum() {
        // f(x) = (x - 3)^2 / 2 + 1, minimum at x = 3
        let mut opt = Adam::new(1, 0.01, 0.99, 0.9999, 1e-8).unwrap();
        let mut x = vec![0.5];
        for _ in 0..2000 {
            let g = x[0] - 3.0;
            opt.step(&mut x, &[g]).unwrap();
        }
        assert!((x[0] - 3.0).abs() < 1e-3, "{}", x[0]);
    }

    #[test]
    fn deterministic_trajectories() {
        let run = || {
            let mut opt = Adam::new(2, 1e-3, 0.99, 0.9999, 1e-8).unwrap();
            let mut p: Vec<f64> = vec![0.3, -0.7];
            let mut traj = Vec::new();
            for t in 0..100 {
                let g = [p[0].sin() + t as f64 * 1e-3, p[1] * p[0]];
                opt.step(&mut p, &g).unwrap();
                traj.push(p.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            }
            traj
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Adam::new(1, 0.0, 0.9, 0.99, 1e-8).is_err());
        assert!(Adam::new(1, 1e-3, 1.0, 0.99, 1e-8).is_err());
        let mut opt = Adam::new(1, 1e-3, 0.9, 0.99, 1e-8).unwrap();
        let err = opt.step(&mut [0.0], &[f64::NAN]).unwrap_err();
        assert!(matches!(err, LriError::Numerical(ref m) if m.contains("parameter 0")));
    }
}
