//! Generate the synthetic shape benchmark, save it as `.pcd` files and load
//! it back.
//!
//!     cargo run --release --example generate_dataset -- target/shapes

use std::path::PathBuf;

use i3dol::data::{generate, load_dataset, save_dataset, GenerateConfig};

fn main() -> i3dol::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("i3dol-shapes"));
    let dataset = generate(&GenerateConfig::default())?;
    std::fs::create_dir_all(&dir).map_err(|e| i3dol::Error::io(&dir, e))?;
    save_dataset(&dir, &dataset)?;
    let back = load_dataset(&dir)?;
    assert_eq!(back, dataset);
    println!(
        "{} train / {} test clouds of {} points in {}",
        back.train.len(),
        back.test.len(),
        back.points,
        dir.display()
    );
    for (label, kind) in back.classes.iter().enumerate() {
        println!("  class {label}: {}", kind.name());
    }
    Ok(())
}
