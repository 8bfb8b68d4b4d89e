use crate::error::Result;
use crate::tensor_core::{Graph, Tensor, Var};

/// Builds a scalar loss from parameter leaves bound in input order.
pub type LossFn<'a> = dyn Fn(&mut Graph, &[Var]) -> Result<Var> + 'a;

/// Central-difference step used by [`gradient_check`].
pub const FD_STEP: f64 = 1e-5;

fn eval(inputs: &[Tensor], f: &LossFn<'_>) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    Ok(g.value(loss).item())
}

/// Largest relative disagreement between reverse-mode gradients and
/// central differences over every scalar of every input, where the relative
/// error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(inputs: &[Tensor], f: &LossFn<'_>) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[i]);
        for k in 0..input.numel() {
            let orig = input.data()[k];
            probe[i].data_mut()[k] = orig + FD_STEP;
            let plus = eval(&probe, f)?;
            probe[i].data_mut()[k] = orig - FD_STEP;
            let minus = eval(&probe, f)?;
            probe[i].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic.data()[k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
