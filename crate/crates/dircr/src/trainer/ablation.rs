//! Ablation grid: the five module combinations plus a depth sweep, every
//! variant trained on the same data with the same seeds so the numbers are
//! directly comparable.

use crate::config::RunConfig;
use crate::error::Result;
use crate::puzzle::Puzzle;
use crate::tensor::Scalar;

use super::{MetricsRecord, Trainer};

pub const ABLATION_HEADER: &str = "variant,two_to_one,eight_to_one,rclm,k,mean_accuracy";

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: String,
    pub use_local: bool,
    pub use_global: bool,
    pub use_rclm: bool,
    pub k: usize,
    /// Final validation accuracy per seed, in seed order.
    pub per_seed: Vec<f64>,
}

impl AblationRow {
    pub fn mean_accuracy(&self) -> f64 {
        self.per_seed.iter().sum::<f64>() / self.per_seed.len() as f64
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6}",
            self.variant,
            self.use_local as u8,
            self.use_global as u8,
            self.use_rclm as u8,
            self.k,
            self.mean_accuracy()
        )
    }
}

/// The nine configurations of the ablation table: module combinations at the
/// base depth, then the full model at K = 1..4.
pub fn table3_grid(base: &RunConfig) -> Vec<(String, RunConfig)> {
    let mk = |label: &str, local: bool, global: bool, rclm: bool, k: usize| {
        let mut c = base.clone();
        c.train.use_local = local;
        c.train.use_global = global;
        c.train.use_rclm = rclm;
        c.train.k = k;
        (label.to_string(), c)
    };
    let k = base.train.k;
    let mut grid = vec![
        mk("local_only", true, false, false, k),
        mk("global_only", false, true, false, k),
        mk("local_rclm", true, false, true, k),
        mk("local_global", true, true, false, k),
        mk("full", true, true, true, k),
    ];
    for depth in 1..=4 {
        grid.push(mk(&format!("full_k{depth}"), true, true, true, depth));
    }
    grid
}

/// Trains every grid variant for every seed and collects final validation
/// accuracies. `on_progress` fires after each (variant, seed) run.
pub fn run_ablation<F: Scalar>(
    base: &RunConfig,
    seeds: &[u64],
    train_set: &[Puzzle],
    val_set: &[Puzzle],
    mut on_progress: impl FnMut(&str, u64, f64),
) -> Result<Vec<AblationRow>> {
    assert!(!seeds.is_empty(), "need at least one seed");
    let mut rows = Vec::new();
    for (variant, cfg) in table3_grid(base) {
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut c = cfg.clone();
            c.train.seed = seed;
            let mut trainer: Trainer<F> = Trainer::new(c)?;
            let recs = trainer.train(train_set, val_set, |_, _| Ok(()))?;
            let acc = final_accuracy(&recs);
            on_progress(&variant, seed, acc);
            per_seed.push(acc);
        }
        rows.push(AblationRow {
            variant,
            use_local: cfg.train.use_local,
            use_global: cfg.train.use_global,
            use_rclm: cfg.train.use_rclm,
            k: cfg.train.k,
            per_seed,
        });
    }
    Ok(rows)
}

fn final_accuracy(recs: &[MetricsRecord]) -> f64 {
    recs.last().map(|r| r.val_accuracy).unwrap_or(0.0)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(ABLATION_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Expected ordering between variants: the full model should not trail the
/// two-path model, and the two-path model should sit within a point of the
/// better single path. Returns human-readable violations, if any.
pub fn ordering_violations(rows: &[AblationRow]) -> Vec<String> {
    let acc = |name: &str| -> Option<f64> {
        rows.iter().find(|r| r.variant == name).map(|r| r.mean_accuracy())
    };
    let mut out = Vec::new();
    if let (Some(full), Some(both)) = (acc("full"), acc("local_global")) {
        if full < both {
            out.push(format!(
                "full ({full:.4}) below local_global ({both:.4})"
            ));
        }
    }
    if let (Some(both), Some(local), Some(global)) =
        (acc("local_global"), acc("local_only"), acc("global_only"))
    {
        let best_single = local.max(global);
        if both < best_single - 0.01 {
            out.push(format!(
                "local_global ({both:.4}) more than 1 point below best single path ({best_single:.4})"
            ));
        }
    }
    out
}
