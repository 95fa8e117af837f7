use super::graph::{Graph, Var};
use super::params::{ParamId, ParamSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Central finite-difference step. Small enough that a probe rarely straddles
/// a ReLU or max kink, large enough to stay clear of f64 round-off.
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared in absolute terms.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Analytic parameter gradients of the scalar produced by `loss`.
pub fn analytic_gradients<F>(params: &ParamSet, loss: &F) -> Result<Vec<(ParamId, Tensor)>>
where
    F: Fn(&ParamSet) -> Result<(Graph, Var)>,
{
    let (graph, out) = loss(params)?;
    graph.value(out).ensure_finite("loss")?;
    let grads = graph.backward(out)?;
    Ok(graph.param_grads(&grads))
}

fn loss_value<F>(params: &ParamSet, loss: &F) -> Result<f64>
where
    F: Fn(&ParamSet) -> Result<(Graph, Var)>,
{
    let (graph, out) = loss(params)?;
    let v = graph.value(out).get(0, 0);
    if !v.is_finite() {
        return Err(Error::Numeric("non-finite loss during gradient check".into()));
    }
    Ok(v)
}

/// Compare given analytic gradients against central differences of `loss`.
pub fn compare_gradients<F>(params: &ParamSet, analytic: &[(ParamId, Tensor)], loss: &F) -> Result<GradCheckReport>
where
    F: Fn(&ParamSet) -> Result<(Graph, Var)>,
{
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for (id, grad) in analytic {
        for i in 0..grad.len() {
            let orig = probe.value(*id).data()[i];
            probe.value_mut(*id).data_mut()[i] = orig + FD_STEP;
            let plus = loss_value(&probe, loss)?;
            probe.value_mut(*id).data_mut()[i] = orig - FD_STEP;
            let minus = loss_value(&probe, loss)?;
            probe.value_mut(*id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = relative_error(grad.data()[i], numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((params.param(*id).name().to_string(), i));
            }
        }
    }
    Ok(report)
}

/// Max relative error between backprop and central finite differences over
/// every parameter entry.
pub fn grad_check<F>(params: &ParamSet, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&ParamSet) -> Result<(Graph, Var)>,
{
    let analytic = analytic_gradients(params, &loss)?;
    compare_gradients(params, &analytic, &loss)
}
