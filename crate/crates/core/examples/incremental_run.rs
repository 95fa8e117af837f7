//! Five incremental states on the synthetic benchmark with the desk preset.
//! Writes `runlog.csv` and `accuracy.svg` to the given directory.
//!
//!     cargo run --release --example incremental_run -- target/run

use std::path::PathBuf;

use i3dol::config::RunConfig;
use i3dol::data::generate;
use i3dol::plot::{read_series, render_svg};
use i3dol::trainer::run;

fn main() -> i3dol::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("i3dol-run"));
    let cfg = RunConfig::desk();
    let dataset = generate(&cfg.generate_config())?;
    let spec = cfg.run_spec(dataset.num_classes())?;
    let output = run(&spec, &dataset)?;

    println!("state  seen  with comp  without  final loss");
    for s in &output.log.states {
        let with = s.acc_with_comp.map(|a| format!("{a:.3}")).unwrap_or_else(|| "-".into());
        println!(
            "{:>5} {:>5} {with:>10} {:>8.3} {:>11.4}",
            s.state,
            s.classes_seen,
            s.acc_without_comp,
            s.loss_final()
        );
    }
    println!("average accuracy {:.4}", output.log.average_accuracy());
    println!("learning order of generated classes {:?}", output.class_order);

    std::fs::create_dir_all(&out).map_err(|e| i3dol::Error::io(&out, e))?;
    let csv = output.log.to_csv(false);
    let svg = render_svg(&read_series(&csv, "runlog")?, "accuracy per state");
    for (name, text) in [("runlog.csv", csv), ("accuracy.svg", svg)] {
        let path = out.join(name);
        std::fs::write(&path, text).map_err(|e| i3dol::Error::io(&path, e))?;
    }
    println!("wrote {}", out.display());
    Ok(())
}
