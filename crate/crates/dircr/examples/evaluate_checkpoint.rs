//! Checkpoint round-trip: train a couple of epochs, save, reload, and show
//! that the restored trainer evaluates and resumes exactly like the original.
//!
//! Usage: cargo run --release --example evaluate_checkpoint

use dircr::config::RunConfig;
use dircr::puzzle::{generate_dataset, PuzzleConfig};
use dircr::trainer::{evaluate, Trainer};

fn tiny() -> RunConfig {
    let mut cfg = RunConfig::desk();
    cfg.model.image_size = 16;
    cfg.model.channels = 8;
    cfg.model.n_blocks = 2;
    cfg.model.n_heads = 2;
    cfg.train.k = 1;
    cfg.train.epochs = 2;
    cfg.train.batch_size = 16;
    cfg.train.warmup_epochs = 1;
    cfg.train.seed = 9;
    cfg
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = tiny();
    let pcfg = PuzzleConfig { image_size: cfg.model.image_size as u32, ..PuzzleConfig::default() };
    let train_set = generate_dataset(128, 5, &pcfg)?;
    let val_set = generate_dataset(64, 6, &pcfg)?;

    let mut trainer: Trainer<f32> = Trainer::new(cfg)?;
    trainer.train(&train_set, &val_set, |_, _| Ok(()))?;

    let path = std::env::temp_dir().join("dircr-example-eval.ckpt");
    trainer.save_checkpoint(&path)?;

    let restored: Trainer<f32> = Trainer::from_checkpoint(&path)?;
    let acc_orig = evaluate(&trainer.model, &val_set, 16)?;
    let acc_restored = evaluate(&restored.model, &val_set, 16)?;
    println!("val accuracy  original {acc_orig:.4}  restored {acc_restored:.4}");
    assert_eq!(acc_orig, acc_restored, "restore must be exact, not approximate");

    // Resuming is bit-faithful too: one more epoch from the checkpoint equals
    // one more epoch on the live trainer.
    let mut live = trainer;
    let mut resumed = restored;
    live.cfg.train.epochs += 1;
    resumed.cfg.train.epochs += 1;
    let r_live = live.train(&train_set, &val_set, |_, _| Ok(()))?;
    let r_resumed = resumed.train(&train_set, &val_set, |_, _| Ok(()))?;
    assert!(r_live[0].same_metrics(&r_resumed[0]));
    println!(
        "after one resumed epoch both report val accuracy {:.4}",
        r_resumed[0].val_accuracy
    );
    Ok(())
}
