//! The rule-contrastive module in isolation: confidence-gated pseudo-labels,
//! the temperature-scaled contrastive loss with its closed-form anchors, and
//! the acceptance-rate trace of a short training run.
//!
//! Usage: cargo run --release --example rclm_demo

use dircr::config::RunConfig;
use dircr::model::{contrastive_loss, pseudo_label};
use dircr::puzzle::{generate_dataset, PuzzleConfig};
use dircr::trainer::Trainer;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Gating: argmax probability must reach the threshold.
    let confident = [0.02, 0.02, 0.80, 0.02, 0.04, 0.04, 0.03, 0.03];
    let hesitant = [0.20, 0.15, 0.25, 0.10, 0.10, 0.08, 0.07, 0.05];
    println!("pseudo_label(confident, 0.60) = {:?}", pseudo_label(&confident, 0.60));
    println!("pseudo_label(hesitant,  0.60) = {:?}", pseudo_label(&hesitant, 0.60));

    // Closed forms of the contrastive loss. Ten identical embeddings cost
    // 3*ln(10/3) per sample; a single positive against one orthogonal
    // negative at tau = 0.2 costs ln(1 + e^-5).
    let v = vec![0.3, -0.4, 0.5];
    let same = contrastive_loss(&[v.clone(), v.clone(), v.clone()], &vec![v; 7], 0.2);
    println!("identical embeddings: {same:.12} (3*ln(10/3) = {:.12})", 3.0 * (10.0f64 / 3.0).ln());
    let ortho = contrastive_loss(&[vec![1.0, 0.0]], &[vec![0.0, 1.0]], 0.2);
    println!("orthogonal pair:      {ortho:.12} (ln(1+e^-5) = {:.12})", (1.0 + (-5.0f64).exp()).ln());

    // A short run: the accept rate starts at zero during warmup, then rises
    // with model confidence; the correct rate tracks how trustworthy the
    // pseudo-labels are.
    let mut cfg = RunConfig::desk();
    cfg.model.image_size = 16;
    cfg.model.channels = 8;
    cfg.model.n_blocks = 2;
    cfg.model.n_heads = 2;
    cfg.train.k = 1;
    cfg.train.epochs = 5;
    cfg.train.batch_size = 16;
    cfg.train.warmup_epochs = 2;
    cfg.train.seed = 1;
    // Low threshold so acceptance kicks in within this tiny budget; the real
    // runs use the 0.60 default.
    cfg.rclm.confidence_threshold = 0.25;

    let pcfg = PuzzleConfig { image_size: 16, ..PuzzleConfig::default() };
    let train_set = generate_dataset(160, 8, &pcfg)?;
    let val_set = generate_dataset(64, 9, &pcfg)?;
    let mut trainer: Trainer<f32> = Trainer::new(cfg)?;
    println!("\nepoch  rclm_loss  accept  correct");
    trainer.train(&train_set, &val_set, |r, _| {
        println!(
            "{:>5}  {:>9.5}  {:>6.3}  {:>7.3}",
            r.epoch, r.train_rclm_loss, r.pl_accept_rate, r.pl_correct_rate
        );
        Ok(())
    })?;
    Ok(())
}
