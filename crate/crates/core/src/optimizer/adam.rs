use crate::error::{Error, Result};
use crate::numerics::ComplexTensor;

/// Adam over complex tensors, treating real and imaginary parts as
/// independent coordinates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: i32,
    m: Vec<ComplexTensor>,
    v: Vec<ComplexTensor>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// One update of every parameter from its gradient.
    pub fn step(&mut self, params: &mut [&mut ComplexTensor], grads: &[ComplexTensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(
                "Adam::step",
                format!("{} parameters vs {} gradients", params.len(), grads.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let moments_ok = self.m.get(i).is_none_or(|m| m.shape() == g.shape());
            if p.shape() != g.shape() || !moments_ok {
                return Err(Error::shape(
                    "Adam::step",
                    format!("parameter {i}: {:?} vs gradient {:?}", p.shape(), g.shape()),
                ));
            }
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| ComplexTensor::zeros(g.rows(), g.cols())).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let update = |x: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                for k in 0..x.len() {
                    m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                    v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                    x[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                }
            };
            update(&mut p.re, &g.re, &mut m.re, &mut v.re);
            update(&mut p.im, &g.im, &mut m.im, &mut v.im);
        }
        Ok(())
    }
}
