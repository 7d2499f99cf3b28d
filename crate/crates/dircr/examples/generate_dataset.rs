//! Generate a small puzzle dataset, write it to disk, and read it back.
//!
//! Usage: cargo run --example generate_dataset [-- COUNT [SIZE]]

use std::collections::BTreeMap;

use dircr::puzzle::{
    generate_dataset, load_dataset, validate_puzzle, write_dataset, PuzzleConfig, Split,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let count: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);
    let size: u32 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(32);

    let cfg = PuzzleConfig { image_size: size, ..PuzzleConfig::default() };
    let puzzles = generate_dataset(count, 7, &cfg)?;

    // Every sampled puzzle satisfies its own rules; `validate_puzzle` replays
    // them against the attribute grid.
    let valid = puzzles.iter().filter(|p| validate_puzzle(p)).count();
    println!("generated {count} puzzles at {size}x{size}, {valid} pass validation");

    let mut histogram: BTreeMap<&str, usize> = BTreeMap::new();
    for p in &puzzles {
        for r in &p.rules {
            *histogram.entry(r.kind.name()).or_default() += 1;
        }
    }
    for (kind, n) in &histogram {
        println!("  {kind:<18} {n}");
    }

    let dir = std::env::temp_dir().join("dircr-example-gen");
    std::fs::create_dir_all(&dir)?;
    let base = dir.join("train");
    write_dataset(&puzzles, Split::Train, 7, &base)?;

    let (manifest, reread) = load_dataset(&base)?;
    assert_eq!(reread.len(), puzzles.len());
    assert_eq!(manifest.image_size, size);
    println!(
        "round-tripped through {} (+ .json manifest), split={} seed={}",
        base.with_extension("bin").display(),
        manifest.split,
        manifest.seed
    );
    Ok(())
}
