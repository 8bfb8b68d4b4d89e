use crate::error::{Error, Result};
use crate::tensor_core::tensor::Tensor;

fn check_pair(param: &Tensor, grad: &Tensor) -> Result<()> {
    if param.shape() != grad.shape() {
        return Err(Error::Dimension(format!(
            "optimizer: parameter shape {:?} but gradient shape {:?}",
            param.shape(),
            grad.shape()
        )));
    }
    Ok(())
}

/// Plain stochastic gradient descent.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn new(lr: f64) -> Self {
        Self { lr }
    }

    pub fn step(&self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        self.step_with_lr(params, grads, self.lr)
    }

    pub fn step_with_lr(&self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Contract(
                "optimizer: parameter and gradient counts differ".into(),
            ));
        }
        for (p, g) in params.iter_mut().zip(grads) {
            check_pair(p, g)?;
            for (v, d) in p.data_mut().iter_mut().zip(g.data()) {
                *v -= lr * d;
            }
        }
        Ok(())
    }
}

/// Adam with bias correction. Moment buffers are created on the first step
/// and bound positionally to the parameter list.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Contract(
                "optimizer: parameter and gradient counts differ".into(),
            ));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::Contract("adam: parameter list changed between steps".into()));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            check_pair(p, g)?;
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, (x, d)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * d;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * d * d;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                *x -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
