//! Train a reduced model end to end on a freshly generated dataset and watch
//! the metrics stream. Finishes in well under a minute; for a full desk-scale
//! run use the `dircr train` binary with a config file.
//!
//! Usage: cargo run --release --example train_quick

use dircr::config::RunConfig;
use dircr::puzzle::{generate_dataset, PuzzleConfig};
use dircr::trainer::{Trainer, METRICS_HEADER};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = RunConfig::desk();
    // Shrink the desk preset further so the example stays interactive.
    cfg.model.image_size = 16;
    cfg.model.channels = 8;
    cfg.model.n_blocks = 2;
    cfg.model.n_heads = 2;
    cfg.train.k = 1;
    cfg.train.epochs = 4;
    cfg.train.batch_size = 16;
    cfg.train.warmup_epochs = 2;
    cfg.train.seed = 3;
    cfg.validate()?;

    let pcfg = PuzzleConfig { image_size: cfg.model.image_size as u32, ..PuzzleConfig::default() };
    let train_set = generate_dataset(192, 0, &pcfg)?;
    let val_set = generate_dataset(64, 1, &pcfg)?;

    let mut trainer: Trainer<f32> = Trainer::new(cfg)?;
    println!("{METRICS_HEADER}");
    let records = trainer.train(&train_set, &val_set, |rec, _| {
        println!("{}", rec.csv_row());
        Ok(())
    })?;

    let first = records.first().unwrap();
    let last = records.last().unwrap();
    println!(
        "\nce {:.4} -> {:.4} over {} epochs; rclm engages at epoch {}",
        first.train_ce_loss,
        last.train_ce_loss,
        records.len(),
        trainer.cfg.train.warmup_epochs
    );

    let ckpt = std::env::temp_dir().join("dircr-example-train.ckpt");
    trainer.save_checkpoint(&ckpt)?;
    println!("checkpoint written to {}", ckpt.display());
    Ok(())
}
