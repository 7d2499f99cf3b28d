//! Command-line surface: dataset generation, training, evaluation, the
//! ablation grid, and puzzle inspection. Every command leaves its inputs
//! untouched and echoes the fully resolved config (defaults < file < `--set`
//! overrides) into the output directory for provenance.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{load_config, RunConfig};
use crate::error::{DircrError, Result};
use crate::puzzle::pgm::write_pgm;
use crate::puzzle::{
    generate_dataset, load_dataset, write_dataset, Puzzle, PuzzleConfig, RuleKind, RuleSpec, Split,
};
use crate::trainer::ablation::{ablation_csv, ordering_violations, run_ablation};
use crate::trainer::{evaluate, write_metrics_csv, Trainer};

#[derive(Parser)]
#[command(
    name = "dircr",
    version,
    about = "Dual-inference rule-contrastive reasoning on Raven-style puzzles"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a puzzle dataset
    Gen(GenArgs),
    /// Train a model and write metrics + checkpoints
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset
    Eval(EvalArgs),
    /// Train the ablation grid and emit its comparison CSV
    Ablate(AblateArgs),
    /// Pretty-print one puzzle of a dataset
    Inspect(InspectArgs),
}

#[derive(Args)]
pub struct GenArgs {
    /// Number of puzzles
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Allowed rule kinds (comma-separated); default: all four
    #[arg(long, value_delimiter = ',')]
    pub rules: Vec<String>,
    /// Panel edge length in pixels
    #[arg(long, default_value_t = 80)]
    pub size: u32,
    /// Rules per puzzle
    #[arg(long, default_value_t = 1)]
    pub rules_per_puzzle: usize,
    /// Dataset split label: train, val, or test
    #[arg(long, default_value = "train")]
    pub split: String,
    /// Output directory; files land at OUT/<split>.{bin,json}
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    /// TOML or JSON config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted override, e.g. --set train.lr=3e-4 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Run directory for config echo, metrics CSV, checkpoints, summary
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Continue from a checkpoint; `--set` then applies on top of its config,
    /// but must not change the architecture
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Checkpoint to evaluate (model config is read from it)
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset base path; defaults to the config's data.val_path
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Seeds trained per variant (comma-separated)
    #[arg(long, value_delimiter = ',', default_values_t = vec![0u64, 1, 2])]
    pub seeds: Vec<u64>,
    /// Grid to run; only "table3" exists
    #[arg(long, default_value = "table3")]
    pub grid: String,
}

#[derive(Args)]
pub struct InspectArgs {
    /// Dataset base path (without .bin/.json extension)
    #[arg(long)]
    pub data: PathBuf,
    /// Puzzle index within the dataset
    #[arg(long)]
    pub index: usize,
    /// Also write the 16 panels as PGM files into this directory
    #[arg(long)]
    pub dump_pgm: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Inspect(a) => cmd_inspect(a),
    }
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    if a.count == 0 {
        return Err(DircrError::Config("--count must be at least 1".into()));
    }
    let split: Split = a.split.parse()?;
    let mut cfg = PuzzleConfig {
        image_size: a.size,
        n_rules: a.rules_per_puzzle,
        ..PuzzleConfig::default()
    };
    if !a.rules.is_empty() {
        cfg.allowed_kinds = a.rules.clone();
    }
    let puzzles = generate_dataset(a.count, a.seed, &cfg)?;
    std::fs::create_dir_all(&a.out)?;
    let base = a.out.join(split.to_string());
    let manifest = write_dataset(&puzzles, split, a.seed, &base)?;
    println!(
        "wrote {} puzzles ({}x{} px) to {}.bin",
        manifest.count,
        manifest.image_size,
        manifest.image_size,
        base.display()
    );
    println!("rule histogram:");
    for (kind, n) in &manifest.rule_histogram {
        println!("  {kind:<18} {n}");
    }
    Ok(())
}

fn load_split(base: &Path, expected_size: u32, what: &str) -> Result<Vec<Puzzle>> {
    let (manifest, puzzles) = load_dataset(base)?;
    if manifest.image_size != expected_size {
        return Err(DircrError::Config(format!(
            "{what} dataset {} is {}x{} px but the model expects {}x{} \
             (set model.image_size to match)",
            base.display(),
            manifest.image_size,
            manifest.image_size,
            expected_size,
            expected_size
        )));
    }
    Ok(puzzles)
}

fn require_path(s: &str, key: &str) -> Result<PathBuf> {
    if s.is_empty() {
        return Err(DircrError::Config(format!("{key} is not set")));
    }
    Ok(PathBuf::from(s))
}

fn echo_config(out_dir: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config.toml"), cfg.resolved_toml())?;
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut trainer: Trainer<f32> = match &a.resume {
        None => Trainer::new(load_config(a.config.as_deref(), &a.set)?)?,
        Some(ckpt) => {
            let mut t = Trainer::from_checkpoint(ckpt)?;
            if a.config.is_some() {
                return Err(DircrError::Config(
                    "--resume uses the checkpoint's config; pass --set overrides instead".into(),
                ));
            }
            if !a.set.is_empty() {
                let merged = t.cfg.with_overrides(&a.set)?;
                if merged.arch() != t.cfg.arch() {
                    return Err(DircrError::Config(
                        "--resume cannot change the architecture (model.*, train.k, \
                         train.use_*, rclm.out_dim)"
                            .into(),
                    ));
                }
                t.opt.lr = merged.train.lr;
                t.opt.weight_decay = merged.train.weight_decay;
                t.cfg = merged;
            }
            t
        }
    };
    echo_config(&a.out_dir, &trainer.cfg)?;
    let train_base = require_path(&trainer.cfg.data.train_path, "data.train_path")?;
    let val_base = require_path(&trainer.cfg.data.val_path, "data.val_path")?;
    let size = trainer.cfg.model.image_size;
    let train_set = load_split(&train_base, size, "training")?;
    let val_set = load_split(&val_base, size, "validation")?;
    println!(
        "training on {} puzzles, validating on {} (epochs {}..{})",
        train_set.len(),
        val_set.len(),
        trainer.epoch,
        trainer.cfg.train.epochs
    );

    let metrics_path = a.out_dir.join("metrics.csv");
    let ckpt_path = a.out_dir.join("checkpoint.ckpt");
    let mut all = Vec::new();
    let records = {
        let all_ref = &mut all;
        trainer.train(&train_set, &val_set, |rec, t| {
            println!(
                "epoch {:>3}: ce {:.4}  rclm {:.4}  val {:.4}  accept {:.2}  ({:.1}s)",
                rec.epoch,
                rec.train_ce_loss,
                rec.train_rclm_loss,
                rec.val_accuracy,
                rec.pl_accept_rate,
                rec.wall_time_s
            );
            all_ref.push(rec.clone());
            write_metrics_csv(&metrics_path, all_ref)?;
            t.save_checkpoint(&ckpt_path)
        })?
    };

    let final_acc = records.last().map(|r| r.val_accuracy).unwrap_or(0.0);
    let best_acc = records.iter().map(|r| r.val_accuracy).fold(0.0, f64::max);
    let stopped_early = trainer.epoch < trainer.cfg.train.epochs;
    let summary = serde_json::json!({
        "final_val_accuracy": final_acc,
        "best_val_accuracy": best_acc,
        "epochs_run": records.len(),
        "next_epoch": trainer.epoch,
        "global_step": trainer.global_step,
        "stopped_early": stopped_early,
        "checkpoint": ckpt_path.display().to_string(),
    });
    std::fs::write(
        a.out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    println!("final val accuracy {final_acc:.4} (best {best_acc:.4})");
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let cli_cfg = load_config(a.config.as_deref(), &a.set)?;
    echo_config(&a.out_dir, &cli_cfg)?;
    let trainer: Trainer<f32> = Trainer::from_checkpoint(&a.checkpoint)?;
    let base = match &a.data {
        Some(p) => p.clone(),
        None => require_path(&cli_cfg.data.val_path, "data.val_path (or --data)")?,
    };
    let puzzles = load_split(&base, trainer.cfg.model.image_size, "evaluation")?;
    let accuracy = evaluate(&trainer.model, &puzzles, trainer.cfg.train.batch_size)?;
    let summary = serde_json::json!({
        "accuracy": accuracy,
        "count": puzzles.len(),
        "checkpoint": a.checkpoint.display().to_string(),
        "data": base.display().to_string(),
    });
    std::fs::write(
        a.out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    println!("accuracy {accuracy:.4} on {} puzzles", puzzles.len());
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    if a.grid != "table3" {
        return Err(DircrError::Config(format!(
            "unknown grid {:?} (only \"table3\" exists)",
            a.grid
        )));
    }
    if a.seeds.is_empty() {
        return Err(DircrError::Config("--seeds must name at least one seed".into()));
    }
    let cfg = load_config(a.config.as_deref(), &a.set)?;
    echo_config(&a.out_dir, &cfg)?;
    let train_base = require_path(&cfg.data.train_path, "data.train_path")?;
    let val_base = require_path(&cfg.data.val_path, "data.val_path")?;
    let train_set = load_split(&train_base, cfg.model.image_size, "training")?;
    let val_set = load_split(&val_base, cfg.model.image_size, "validation")?;

    let rows = run_ablation::<f32>(&cfg, &a.seeds, &train_set, &val_set, |variant, seed, acc| {
        println!("[{variant} seed {seed}] final val accuracy {acc:.4}");
    })?;
    let csv = ablation_csv(&rows);
    std::fs::write(a.out_dir.join("ablation.csv"), &csv)?;
    let violations = ordering_violations(&rows);
    let summary = serde_json::json!({
        "rows": rows.iter().map(|r| serde_json::json!({
            "variant": r.variant,
            "k": r.k,
            "per_seed": r.per_seed,
            "mean_accuracy": r.mean_accuracy(),
        })).collect::<Vec<_>>(),
        "ordering_violations": violations,
    });
    std::fs::write(
        a.out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    print!("{csv}");
    for v in &violations {
        println!("warning: {v}");
    }
    Ok(())
}

fn cmd_inspect(a: InspectArgs) -> Result<()> {
    let (manifest, puzzles) = load_dataset(&a.data)?;
    let p = puzzles.get(a.index).ok_or(DircrError::IndexOutOfRange {
        index: a.index,
        len: puzzles.len(),
    })?;
    println!(
        "puzzle {} of {} ({} split, {}x{} px, seed {})",
        a.index,
        manifest.count,
        manifest.split,
        p.image_size,
        p.image_size,
        p.seed
    );
    println!("answer: A{} (index {})", p.answer_index + 1, p.answer_index);
    println!("rules:");
    for r in &p.rules {
        println!("  - {}", describe_rule(r));
    }
    let labels_q: Vec<String> = (1..=8).map(|i| format!("Q{i}")).collect();
    let labels_a: Vec<String> = (1..=8)
        .map(|i| {
            if i == p.answer_index as usize + 1 {
                format!("A{i}*")
            } else {
                format!("A{i}")
            }
        })
        .collect();
    println!("context:");
    print_panel_rows(&p.context, &labels_q, p.image_size as usize);
    println!("candidates (* = answer):");
    print_panel_rows(&p.candidates, &labels_a, p.image_size as usize);

    if let Some(dir) = &a.dump_pgm {
        std::fs::create_dir_all(dir)?;
        let s = p.image_size;
        for (i, panel) in p.context.iter().enumerate() {
            write_pgm(&dir.join(format!("q{}.pgm", i + 1)), s, s, panel)?;
        }
        for (i, panel) in p.candidates.iter().enumerate() {
            write_pgm(&dir.join(format!("a{}.pgm", i + 1)), s, s, panel)?;
        }
        println!("wrote 16 PGM panels to {}", dir.display());
    }
    Ok(())
}

fn describe_rule(r: &RuleSpec) -> String {
    let attr = match r.attribute {
        crate::puzzle::Attribute::ShapeType => "shape_type",
        crate::puzzle::Attribute::Size => "size",
        crate::puzzle::Attribute::Shade => "shade",
        crate::puzzle::Attribute::Count => "count",
    };
    match r.kind {
        RuleKind::Constant => format!("constant on {attr}"),
        RuleKind::Progression { step } => format!("progression on {attr} (step {step:+})"),
        RuleKind::Arithmetic { sign } => format!(
            "arithmetic on {attr} (v3 = v1 {} v2)",
            if sign >= 0 { "+" } else { "-" }
        ),
        RuleKind::DistributeThree { triple } => format!(
            "distribute_three on {attr} (triple {},{},{})",
            triple[0], triple[1], triple[2]
        ),
    }
}

/// Prints panels four abreast as ASCII thumbnails (downsampled to at most
/// 16x16 cells; darker pixels map to denser glyphs).
fn print_panel_rows(panels: &[Vec<u8>], labels: &[String], size: usize) {
    const RAMP: &[u8] = b"@%#*+=-:. ";
    let block = size.div_ceil(16);
    let cells = size.div_ceil(block);
    for (chunk, label_chunk) in panels.chunks(4).zip(labels.chunks(4)) {
        let mut header = String::new();
        for label in label_chunk {
            header.push_str(&format!("{label:<width$}  ", width = cells));
        }
        println!("{}", header.trim_end());
        for cy in 0..cells {
            let mut line = String::new();
            for panel in chunk {
                for cx in 0..cells {
                    let mut sum = 0u32;
                    let mut n = 0u32;
                    for y in (cy * block)..(((cy + 1) * block).min(size)) {
                        for x in (cx * block)..(((cx + 1) * block).min(size)) {
                            sum += panel[y * size + x] as u32;
                            n += 1;
                        }
                    }
                    let mean = (sum / n.max(1)) as usize;
                    let idx = (mean * (RAMP.len() - 1)) / 255;
                    line.push(RAMP[idx] as char);
                }
                line.push_str("  ");
            }
            println!("{}", line.trim_end());
        }
        println!();
    }
}
