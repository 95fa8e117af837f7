//! Finite-difference check of the whole network on one 32-point cloud,
//! with the neighbor choice of a first pass held fixed.
//!
//!     cargo run --release --example grad_check

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use i3dol::centroid::CentroidConfig;
use i3dol::encoder::EncoderConfig;
use i3dol::geometry::{normalize, PointCloud};
use i3dol::head::ClassifierConfig;
use i3dol::model::{Architecture, Model, ModelConfig};
use i3dol::nncore::{grad_check, Graph, ParamSet};

fn main() -> i3dol::Result<()> {
    let config = ModelConfig {
        encoder: EncoderConfig {
            widths: vec![3, 8, 16, 16],
            tap: 3,
        },
        centroid: CentroidConfig {
            structures: 8,
            neighbors: 6,
            refine_iters: 1,
        },
        reduction: 4,
        classifier: ClassifierConfig { hidden: [16, 12, 8] },
    };
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Model::new(&config, Architecture::default(), 4, &mut rng)?;
        let points = (0..32)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect();
        let cloud = normalize(&PointCloud::new(points, 0))?;
        let batch = [&cloud];

        let mut g = Graph::new();
        let vars = g.bind_params(&model.params);
        let frozen = model.forward(&mut g, &vars, &batch)?.structures;

        let report = grad_check(&model.params, |p: &ParamSet| {
            let mut g = Graph::new();
            let vars = g.bind_params(p);
            let out = model.forward_frozen(&mut g, &vars, &batch, &frozen)?;
            let loss = g.cross_entropy(out.logits, &[1])?;
            Ok((g, loss))
        })?;
        println!(
            "seed {seed}: {} entries, max relative error {:.2e} at {:?}",
            report.checked, report.max_rel_error, report.worst
        );
    }
    Ok(())
}
