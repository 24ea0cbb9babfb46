use super::graph::{Graph, NodeId};
use super::params::ParamStore;
use crate::error::{Result, SbrError};

/// Maximum relative error between analytic gradients and central finite
/// differences, taken over every scalar of every parameter.
///
/// The relative error of one scalar is
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<F>(params: &ParamStore, eps: f64, build_loss: F) -> Result<f64>
where
    F: Fn(&mut Graph<'_>) -> Result<NodeId>,
{
    if !(eps > 0.0) {
        return Err(SbrError::Contract(format!("grad_check eps must be > 0, got {eps}")));
    }
    let analytic = {
        let mut g = Graph::new(params);
        let loss = build_loss(&mut g)?;
        g.backward(loss)?
    };
    let eval = |p: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(p);
        let loss = build_loss(&mut g)?;
        g.scalar(loss)
    };

    let mut probe = params.clone();
    let mut worst = 0.0_f64;
    for (name, grad) in analytic.iter() {
        for i in 0..grad.len() {
            let orig = params.require(name)?.values()[i];
            probe.get_mut(name).unwrap().values_mut()[i] = orig + eps;
            let plus = eval(&probe)?;
            probe.get_mut(name).unwrap().values_mut()[i] = orig - eps;
            let minus = eval(&probe)?;
            probe.get_mut(name).unwrap().values_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.values()[i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
