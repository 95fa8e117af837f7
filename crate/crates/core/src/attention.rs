//! Geometric-aware attention: a per-structure channel gate with a residual
//! path, `f_p = A_g ⊙ f_g + f_g` where `A_g = σ(T_u(relu(T_d(f_g))))`,
//! followed by a max pool over structures.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nncore::{Graph, Linear, ParamSet, ParamVars, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionConfig {
    /// Channel count `d`.
    pub channels: usize,
    /// Reduction ratio `r`.
    pub reduction: usize,
}

impl AttentionConfig {
    pub fn new(channels: usize, reduction: usize) -> Result<Self> {
        let cfg = AttentionConfig { channels, reduction };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.reduction == 0 || self.channels == 0 || !self.channels.is_multiple_of(self.reduction) {
            return Err(Error::Config(format!(
                "attention channels {} not divisible by reduction {}",
                self.channels, self.reduction
            )));
        }
        Ok(())
    }

    pub fn bottleneck(&self) -> usize {
        self.channels / self.reduction
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeometricAttention {
    pub down: Linear,
    pub up: Linear,
}

/// Outputs of [`GeometricAttention::attend`] on a graph.
#[derive(Debug, Clone, Copy)]
pub struct Attended {
    pub features: Var,
    pub attention: Var,
}

impl GeometricAttention {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, cfg: &AttentionConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        Ok(GeometricAttention {
            down: Linear::new(params, "attention.down", cfg.channels, cfg.bottleneck(), rng)?,
            up: Linear::new(params, "attention.up", cfg.bottleneck(), cfg.channels, rng)?,
        })
    }

    /// Gate every row of `f_g: [L, d]` independently.
    pub fn attend(&self, g: &mut Graph, vars: &ParamVars, fg: Var) -> Result<Attended> {
        let squeezed = self.down.forward_relu(g, vars, fg)?;
        let expanded = self.up.forward(g, vars, squeezed)?;
        let attention = g.sigmoid(expanded)?;
        let gated = g.mul(attention, fg)?;
        let features = g.add(gated, fg)?;
        Ok(Attended { features, attention })
    }

    /// Value-level `attend`, returning `(f_p, A_g)`.
    pub fn apply(&self, params: &ParamSet, fg: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let vars = g.bind_params(params);
        let x = g.input(fg.clone());
        let out = self.attend(&mut g, &vars, x)?;
        Ok((g.value(out.features).clone(), g.value(out.attention).clone()))
    }
}

/// Max over each consecutive block of `structures` rows: `[B·L, d] → [B, d]`.
pub fn global_pool(g: &mut Graph, fp: Var, structures: usize) -> Result<Var> {
    if structures == 0 || g.value(fp).rows() == 0 {
        return Err(Error::Dimension("global pool over zero structures".into()));
    }
    g.segment_max(fp, structures)
}

/// Value-level pool of a single `[L, d]` matrix to a `d`-vector.
pub fn pool(fp: &Tensor) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let x = g.input(fp.clone());
    let out = global_pool(&mut g, x, fp.rows())?;
    Ok(g.value(out).row(0).to_vec())
}
