//! Average incremental accuracy as the exemplar budget grows.
//!
//!     cargo run --release --example exemplar_sweep -- [seed]

use i3dol::config::RunConfig;
use i3dol::data::generate;
use i3dol::trainer::run;

fn main() -> i3dol::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let base = RunConfig {
        seed,
        data_seed: seed,
        ..RunConfig::desk()
    };
    let dataset = generate(&base.generate_config())?;
    for exemplars in [0, 30, 60, 120] {
        let cfg = RunConfig {
            exemplars,
            ..base.clone()
        };
        let log = run(&cfg.run_spec(dataset.num_classes())?, &dataset)?.log;
        println!("|M| = {exemplars:>3}: average accuracy {:.4}", log.average_accuracy());
    }
    Ok(())
}
