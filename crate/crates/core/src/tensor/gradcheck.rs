use super::error::Result;
use super::graph::{Graph, Var};
use super::tensor::Tensor;

/// Largest relative error between reverse-mode gradients of `f` at `x` and
/// central differences with step `h`:
/// `max_i |a_i − cd_i| / max(|a_i|, |cd_i|, 1e-8)`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: for<'g> Fn(&mut Graph<'g, f64>, Var) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new();
        let v = g.variable(x.clone());
        let out = f(&mut g, v)?;
        let grads = g.backward(out)?;
        grads
            .wrt(v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; x.numel()])
    };
    let eval = |t: Tensor<f64>| -> Result<f64> {
        let mut g = Graph::inference();
        let v = g.constant(t);
        let out = f(&mut g, v)?;
        Ok(g.value(out)[0])
    };
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let cd = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let err = (a - cd).abs() / a.abs().max(cd.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// The relative-error reduction used by [`grad_check`], for callers that
/// compute their own finite differences.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &cd)| (a - cd).abs() / a.abs().max(cd.abs()).max(1e-8))
        .fold(0.0, f64::max)
}
