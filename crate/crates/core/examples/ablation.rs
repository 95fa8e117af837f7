//! The full method against each component removed, on one seed.
//!
//!     cargo run --release --example ablation -- [seed]

use i3dol::config::RunConfig;
use i3dol::data::generate;
use i3dol::trainer::{run, Variant};

fn main() -> i3dol::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let cfg = RunConfig {
        seed,
        data_seed: seed,
        ..RunConfig::desk()
    };
    let dataset = generate(&cfg.generate_config())?;
    let base = cfg.run_spec(dataset.num_classes())?;
    for variant in Variant::ALL {
        let log = run(&variant.apply(&base), &dataset)?.log;
        let per_state: Vec<String> = log.states.iter().map(|s| format!("{:.3}", s.accuracy())).collect();
        println!(
            "{:<6} average {:.4}  [{}]",
            variant.label(),
            log.average_accuracy(),
            per_state.join(" ")
        );
    }
    Ok(())
}
