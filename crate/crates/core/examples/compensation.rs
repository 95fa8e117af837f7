//! Score rectification on a trained model: per-class coefficients at the
//! last state and the predictions it changes.
//!
//!     cargo run --release --example compensation

use i3dol::config::RunConfig;
use i3dol::data::{generate, incremental_split};
use i3dol::trainer::{evaluate, run};

fn main() -> i3dol::Result<()> {
    let cfg = RunConfig::desk();
    let dataset = generate(&cfg.generate_config())?;
    let spec = cfg.run_spec(dataset.num_classes())?;
    let out = run(&spec, &dataset)?;

    let sched = &spec.schedule;
    let last = sched.states();
    let past = sched.past_classes(last);
    let split = incremental_split(&dataset, &sched.classes_per_state, sched.seed)?;
    let test: Vec<_> = split.states.iter().flat_map(|s| s.test.iter().cloned()).collect();

    println!("coefficients at state {last}:");
    for class in 0..past {
        println!("  class {class}: {:.4}", out.stats.coefficient(class, last)?);
    }
    let raw = evaluate(&out.model, &out.stats, &test, last, past, false)?;
    let fair = evaluate(&out.model, &out.stats, &test, last, past, true)?;
    let changed = raw
        .predictions
        .iter()
        .zip(&fair.predictions)
        .filter(|(a, b)| a != b)
        .count();
    println!(
        "accuracy {:.4} -> {:.4}, {changed} predictions changed",
        raw.accuracy, fair.accuracy
    );
    println!(
        "past-class samples predicted as new: {} -> {}",
        raw.past_as_new, fair.past_as_new
    );
    Ok(())
}
