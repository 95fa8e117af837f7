//! Train on the first two classes, then export the attention gates of one
//! test cloud as CSV: one row per local structure with its centroid and the
//! gate of every channel.
//!
//!     cargo run --release --example attention_map -- target/attention.csv

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use i3dol::config::RunConfig;
use i3dol::data::{generate, incremental_split};
use i3dol::model::Model;
use i3dol::nncore::Graph;
use i3dol::trainer::{train_state, TrainConfig};

fn main() -> i3dol::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("i3dol-attention.csv"));
    let cfg = RunConfig::desk();
    let dataset = generate(&cfg.generate_config())?;
    let split = incremental_split(&dataset, &[2; 5], 0)?;
    let first = &split.states[0];

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = Model::new(&cfg.model_config(), cfg.architecture(), first.num_classes, &mut rng)?;
    let train: Vec<_> = first.train.iter().collect();
    let train_cfg = TrainConfig {
        epochs: 15,
        ..TrainConfig::default()
    };
    let losses = train_state(&mut model, &train, &train_cfg, &mut rng)?;
    println!("loss {:.4} -> {:.4}", losses[0], losses[losses.len() - 1]);

    let cloud = &first.test[0];
    let mut g = Graph::new();
    let vars = g.bind_params(&model.params);
    let out = model.forward(&mut g, &vars, &[cloud])?;
    let gates = g.value(out.attention.expect("desk preset has attention"));

    let mut csv = String::from("structure,x,y,z");
    for c in 0..gates.cols() {
        let _ = write!(csv, ",a{c}");
    }
    csv.push('\n');
    for (l, p) in out.structures.centroids.iter().enumerate() {
        let _ = write!(csv, "{l},{:?},{:?},{:?}", p[0], p[1], p[2]);
        for v in gates.row(l) {
            let _ = write!(csv, ",{v:?}");
        }
        csv.push('\n');
    }
    std::fs::write(&path, csv).map_err(|e| i3dol::Error::io(&path, e))?;
    let mean = gates.data().iter().sum::<f64>() / gates.len() as f64;
    println!(
        "{} structures x {} channels, mean gate {mean:.3}, wrote {}",
        gates.rows(),
        gates.cols(),
        path.display()
    );
    Ok(())
}
