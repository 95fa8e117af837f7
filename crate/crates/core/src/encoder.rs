//! Per-point feature extractor: a stack of shared dense + ReLU blocks.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::nncore::{Graph, Linear, ParamSet, ParamVars, Tensor, Var};

/// Largest accepted point norm for encoder input.
pub const NORM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    /// Layer widths starting with the 3 input coordinates.
    pub widths: Vec<usize>,
    /// 1-based index of the block whose output is the point feature.
    pub tap: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            widths: vec![3, 32, 64, 64],
            tap: 3,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.first() != Some(&3) {
            return Err(Error::Config("encoder widths must start at 3".into()));
        }
        if self.widths.contains(&0) {
            return Err(Error::Config("encoder widths must be positive".into()));
        }
        if self.tap == 0 || self.tap >= self.widths.len() {
            return Err(Error::Config(format!(
                "encoder tap {} outside 1..={}",
                self.tap,
                self.widths.len() - 1
            )));
        }
        Ok(())
    }

    /// Width of the tapped feature.
    pub fn feature_dim(&self) -> usize {
        self.widths[self.tap]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoder {
    blocks: Vec<Linear>,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, cfg: &EncoderConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let blocks = (0..cfg.tap)
            .map(|i| Linear::new(params, &format!("encoder.{i}"), cfg.widths[i], cfg.widths[i + 1], rng))
            .collect::<Result<_>>()?;
        Ok(Encoder { blocks })
    }

    pub fn blocks(&self) -> &[Linear] {
        &self.blocks
    }

    /// `[n, 3]` coordinates to `[n, d]` features; rows are independent.
    pub fn forward(&self, g: &mut Graph, vars: &ParamVars, coords: Var) -> Result<Var> {
        let mut h = coords;
        for block in &self.blocks {
            h = block.forward_relu(g, vars, h)?;
        }
        Ok(h)
    }

    /// Features of every point of a normalized cloud.
    pub fn encode(&self, params: &ParamSet, cloud: &PointCloud) -> Result<Tensor> {
        check_normalized(cloud)?;
        let mut g = Graph::new();
        let vars = g.bind_params(params);
        let x = g.input(cloud.to_tensor());
        let f = self.forward(&mut g, &vars, x)?;
        Ok(g.value(f).clone())
    }
}

pub fn check_normalized(cloud: &PointCloud) -> Result<()> {
    let m = cloud.max_norm();
    if m.is_nan() || m > 1.0 + NORM_TOLERANCE {
        return Err(Error::Precondition(format!("cloud is not normalized (max norm {m})")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::normalize;
    use crate::nncore::grad_check;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        let pts = (0..n)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect();
        normalize(&PointCloud::new(pts, 0)).unwrap()
    }

    fn small() -> EncoderConfig {
        EncoderConfig {
            widths: vec![3, 8, 12, 6],
            tap: 3,
        }
    }

    #[test]
    fn config_validation() {
        assert!(EncoderConfig::default().validate().is_ok());
        assert_eq!(EncoderConfig::default().feature_dim(), 64);
        let bad = EncoderConfig {
            widths: vec![4, 8],
            tap: 1,
        };
        assert!(bad.validate().is_err());
        let bad_tap = EncoderConfig {
            widths: vec![3, 8],
            tap: 2,
        };
        assert!(bad_tap.validate().is_err());
    }

    #[test]
    fn identical_points_share_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParamSet::new();
        let enc = Encoder::new(&mut ps, &small(), &mut rng).unwrap();
        let mut c = cloud(&mut rng, 10);
        c.points[4] = c.points[2];
        let f = enc.encode(&ps, &c).unwrap();
        assert_eq!(f.row(2), f.row(4));
        assert_eq!(f.shape(), [10, 6]);
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ps = ParamSet::new();
        let enc = Encoder::new(&mut ps, &small(), &mut rng).unwrap();
        let c = cloud(&mut rng, 16);
        let mut perm: Vec<usize> = (0..16).collect();
        perm.shuffle(&mut rng);
        let f = enc.encode(&ps, &c).unwrap();
        let fp = enc.encode(&ps, &c.permuted(&perm)).unwrap();
        for (i, &src) in perm.iter().enumerate() {
            assert_eq!(fp.row(i), f.row(src));
        }
    }

    #[test]
    fn zero_weights_give_zero_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamSet::new();
        let enc = Encoder::new(&mut ps, &small(), &mut rng).unwrap();
        for id in ps.ids().collect::<Vec<_>>() {
            for v in ps.value_mut(id).data_mut() {
                *v = 0.0;
            }
        }
        let f = enc.encode(&ps, &cloud(&mut rng, 8)).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_unnormalized_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ps = ParamSet::new();
        let enc = Encoder::new(&mut ps, &small(), &mut rng).unwrap();
        let c = PointCloud::new(vec![[0.0, 0.0, 2.0], [0.0, 0.0, 0.0]], 0);
        assert!(matches!(enc.encode(&ps, &c), Err(Error::Precondition(_))));
    }

    #[test]
    fn gradient_check_through_encoder() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ps = ParamSet::new();
        let enc = Encoder::new(&mut ps, &small(), &mut rng).unwrap();
        let c = cloud(&mut rng, 12);
        let probe = Tensor::new(12, 6, (0..72).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let report = grad_check(&ps, |p| {
            let mut g = Graph::new();
            let vars = g.bind_params(p);
            let x = g.input(c.to_tensor());
            let f = enc.forward(&mut g, &vars, x)?;
            let w = g.input(probe.clone());
            let prod = g.mul(f, w)?;
            let s = g.sum_all(prod);
            Ok((g, s))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-3, "{report:?}");
    }
}
