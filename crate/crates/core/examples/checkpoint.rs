//! Save a checkpoint after every state and restore the last one.
//!
//!     cargo run --release --example checkpoint

use i3dol::checkpoint::{format_checkpoint, load_checkpoint, save_checkpoint};
use i3dol::config::RunConfig;
use i3dol::data::generate;
use i3dol::trainer::run_with;

fn main() -> i3dol::Result<()> {
    let dir = std::env::temp_dir().join("i3dol-checkpoints");
    std::fs::create_dir_all(&dir).map_err(|e| i3dol::Error::io(&dir, e))?;
    let cfg = RunConfig {
        epochs: 5,
        ..RunConfig::desk()
    };
    let dataset = generate(&cfg.generate_config())?;
    let spec = cfg.run_spec(dataset.num_classes())?;
    let out = run_with(&spec, &dataset, &mut |state, model, stats| {
        save_checkpoint(&dir.join(format!("state_{}.ckpt", state.state)), model, stats)
    })?;

    let last = dir.join(format!("state_{}.ckpt", spec.schedule.states()));
    let (model, stats) = load_checkpoint(&last, &spec.model, spec.arch)?;
    assert_eq!(
        format_checkpoint(&model, &stats),
        format_checkpoint(&out.model, &out.stats)
    );
    println!(
        "restored {} classes and {} parameter tensors from {}",
        model.classes(),
        model.params.len(),
        last.display()
    );
    Ok(())
}
