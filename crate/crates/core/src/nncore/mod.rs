//! Minimal reverse-mode differentiation core: tensors, a tape, dense layers,
//! Adam, and a finite-difference gradient checker.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{analytic_gradients, compare_gradients, grad_check, relative_error, GradCheckReport, FD_STEP};
pub use graph::{Axis, Gradients, Graph, ParamVars, Var};
pub use params::{AdamConfig, Param, ParamId, ParamSet};
pub use tensor::Tensor;

pub(crate) use params::glorot;

use rand::Rng;

use crate::error::Result;

/// Shared dense map `x · W + b`, the per-point equivalent of a 1×1 convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    /// Glorot-initialized weight and zero bias registered as `{name}.w` / `{name}.b`.
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = params.add_glorot(format!("{name}.w"), fan_in, fan_out, rng)?;
        let bias = params.add(format!("{name}.b"), Tensor::zeros(1, fan_out))?;
        Ok(Linear { weight, bias })
    }

    pub fn forward(&self, g: &mut Graph, vars: &ParamVars, x: Var) -> Result<Var> {
        g.linear(x, vars.get(self.weight), vars.get(self.bias))
    }

    pub fn forward_relu(&self, g: &mut Graph, vars: &ParamVars, x: Var) -> Result<Var> {
        let y = self.forward(g, vars, x)?;
        g.relu(y)
    }

    pub fn in_dim(&self, params: &ParamSet) -> usize {
        params.value(self.weight).rows()
    }

    pub fn out_dim(&self, params: &ParamSet) -> usize {
        params.value(self.weight).cols()
    }
}

/// Evaluate a throwaway graph and return the value of its output node.
pub fn eval<F>(build: F) -> Result<Tensor>
where
    F: FnOnce(&mut Graph) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = build(&mut g)?;
    Ok(g.value(out).clone())
}
