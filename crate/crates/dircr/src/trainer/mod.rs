//! Training loop: cross-entropy over candidate logits, plus the gated
//! contrastive term after warmup. Every random choice is drawn from a stream
//! derived functionally from `(seed, purpose, epoch, step)`, so identical
//! configs produce identical runs and a resumed run replays the exact
//! remainder of the original.

pub mod ablation;
pub mod adam;
pub mod checkpoint;

use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use ndarray::ArrayD;
use rand::seq::SliceRandom;

use crate::config::RunConfig;
use crate::error::{DircrError, Result};
use crate::model::{
    argmax, batch_images, classification_loss, pseudo_label, rclm_graph_loss, softmax8, Fwd,
    Model, ParamStore, StatsStore,
};
use crate::puzzle::Puzzle;
use crate::seed::rng_for;
use crate::tensor::{Scalar, Tape};

use adam::Adam;
use checkpoint::Checkpoint;

pub const METRICS_HEADER: &str =
    "epoch,train_ce_loss,train_rclm_loss,val_accuracy,pl_accept_rate,pl_correct_rate,wall_time_s";

/// One epoch's metrics row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_ce_loss: f64,
    pub train_rclm_loss: f64,
    pub val_accuracy: f64,
    /// Fraction of training samples whose pseudo-label cleared the
    /// confidence threshold this epoch.
    pub pl_accept_rate: f64,
    /// Fraction of accepted pseudo-labels that matched the true answer.
    pub pl_correct_rate: f64,
    pub wall_time_s: f64,
}

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.3}",
            self.epoch,
            self.train_ce_loss,
            self.train_rclm_loss,
            self.val_accuracy,
            self.pl_accept_rate,
            self.pl_correct_rate,
            self.wall_time_s
        )
    }

    /// Equality on everything except wall-clock time.
    pub fn same_metrics(&self, other: &MetricsRecord) -> bool {
        self.epoch == other.epoch
            && self.train_ce_loss == other.train_ce_loss
            && self.train_rclm_loss == other.train_rclm_loss
            && self.val_accuracy == other.val_accuracy
            && self.pl_accept_rate == other.pl_accept_rate
            && self.pl_correct_rate == other.pl_correct_rate
    }
}

pub fn write_metrics_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[derive(Debug)]
pub struct StepStats {
    pub ce: f64,
    pub rclm: f64,
    pub accepted: usize,
    pub pl_correct: usize,
    pub batch: usize,
}

pub struct Trainer<F: Scalar> {
    pub cfg: RunConfig,
    pub model: Model<F>,
    pub opt: Adam<F>,
    /// Next epoch to run.
    pub epoch: usize,
    pub global_step: u64,
    /// Pseudo-labeler snapshot for the two-phase schedule, taken at the end
    /// of warmup.
    frozen: Option<(ParamStore<F>, StatsStore<F>)>,
}

impl<F: Scalar> Trainer<F> {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let model = Model::new(cfg.arch(), cfg.train.seed)?;
        let opt = Adam::new(cfg.train.lr, cfg.train.weight_decay, &model.params);
        Ok(Trainer { cfg, model, opt, epoch: 0, global_step: 0, frozen: None })
    }

    /// Runs epochs `self.epoch..cfg.train.epochs`, invoking `on_epoch` after
    /// each one. Returns the records for the epochs run by this call.
    pub fn train(
        &mut self,
        train_set: &[Puzzle],
        val_set: &[Puzzle],
        mut on_epoch: impl FnMut(&MetricsRecord, &Trainer<F>) -> Result<()>,
    ) -> Result<Vec<MetricsRecord>> {
        if train_set.is_empty() {
            return Err(DircrError::EmptyDataset);
        }
        let bs = self.cfg.train.batch_size;
        let seed = self.cfg.train.seed;
        let mut records = Vec::new();
        while self.epoch < self.cfg.train.epochs {
            let epoch = self.epoch;
            if self.cfg.train.two_phase
                && self.cfg.train.use_rclm
                && epoch >= self.cfg.train.warmup_epochs
                && self.frozen.is_none()
            {
                self.frozen = Some((self.model.params.clone(), self.model.stats.clone()));
            }
            let t0 = Instant::now();
            let mut order: Vec<usize> = (0..train_set.len()).collect();
            order.shuffle(&mut rng_for(seed, "shuffle", &[epoch as u64]));
            let mut ce_sum = 0.0;
            let mut rclm_sum = 0.0;
            let mut accepted = 0usize;
            let mut pl_correct = 0usize;
            let mut seen = 0usize;
            let mut n_batches = 0usize;
            for (step, idxs) in order.chunks(bs).enumerate() {
                let batch: Vec<&Puzzle> = idxs.iter().map(|&i| &train_set[i]).collect();
                let st = self.train_step(&batch, epoch, step)?;
                ce_sum += st.ce;
                rclm_sum += st.rclm;
                accepted += st.accepted;
                pl_correct += st.pl_correct;
                seen += st.batch;
                n_batches += 1;
            }
            let val_accuracy = evaluate(&self.model, val_set, bs)?;
            let rec = MetricsRecord {
                epoch,
                train_ce_loss: ce_sum / n_batches as f64,
                train_rclm_loss: rclm_sum / n_batches as f64,
                val_accuracy,
                pl_accept_rate: accepted as f64 / seen as f64,
                pl_correct_rate: if accepted > 0 {
                    pl_correct as f64 / accepted as f64
                } else {
                    0.0
                },
                wall_time_s: t0.elapsed().as_secs_f64(),
            };
            self.epoch = epoch + 1;
            on_epoch(&rec, self)?;
            records.push(rec);
            if let Some(target) = self.cfg.train.stop_accuracy {
                if val_accuracy >= target {
                    break;
                }
            }
        }
        Ok(records)
    }

    /// One optimizer step on one batch. The contrastive term participates
    /// only from `warmup_epochs` onward; before that it is exactly zero and
    /// contributes no gradient.
    pub fn train_step(
        &mut self,
        batch: &[&Puzzle],
        epoch: usize,
        step: usize,
    ) -> Result<StepStats> {
        let images: ArrayD<F> = batch_images(batch);
        let answers: Vec<usize> = batch.iter().map(|p| p.answer_index as usize).collect();
        let seed = self.cfg.train.seed;

        let tape = Tape::new();
        let mut stats = self.model.stats.clone();
        let rng = rng_for(seed, "dropout", &[epoch as u64, step as u64]);
        let mut fw = Fwd::new(&tape, &self.model.params, &mut stats, true, true, rng);
        let out = self.model.forward(&mut fw, &images)?;
        let ce = classification_loss(&out.logits, &answers)?;
        let ce_val = ce.item().to64();

        let rclm_active = self.cfg.train.use_rclm && epoch >= self.cfg.train.warmup_epochs;
        let (total, rclm_val, n_accepted, n_correct) = if rclm_active {
            let probs = if self.cfg.train.two_phase {
                let (fp, fs) = self
                    .frozen
                    .as_ref()
                    .expect("two-phase snapshot exists once warmup has ended");
                let ftape = Tape::new();
                let mut fstats = fs.clone();
                let frng = rng_for(seed, "frozen", &[]);
                let mut ffw = Fwd::new(&ftape, fp, &mut fstats, false, false, frng);
                let fout = self.model.forward(&mut ffw, &images)?;
                batch_probs(&fout.logits.value())
            } else {
                // Joint mode: pseudo-labels read off the live logits, detached
                // from the graph so no gradient flows through the labeling.
                batch_probs(&out.logits.value())
            };
            let mut acc: Vec<(usize, usize)> = Vec::new();
            let mut correct = 0usize;
            for (i, p) in probs.iter().enumerate() {
                if let Some(c) = pseudo_label(p, self.cfg.rclm.confidence_threshold) {
                    if c == answers[i] {
                        correct += 1;
                    }
                    acc.push((i, c));
                }
            }
            let g_rows = out.g_rows.as_ref().expect("use_rclm implies row features");
            let proj = self.model.projection.as_ref().expect("use_rclm implies projection");
            let rloss = rclm_graph_loss(
                &mut fw,
                g_rows,
                proj,
                &acc,
                self.cfg.rclm.temperature,
                self.cfg.rclm.loss_weight,
            )?;
            let rv = rloss.item().to64();
            (ce.add(&rloss), rv, acc.len(), correct)
        } else {
            (ce, 0.0, 0, 0)
        };

        if !ce_val.is_finite() || !rclm_val.is_finite() {
            return Err(DircrError::NonFiniteLoss {
                epoch,
                step,
                detail: format!("ce={ce_val}, rclm={rclm_val}"),
            });
        }

        let mut grads = tape.backward(&total);
        let leases = fw.into_leases();
        let mut grad_map = HashMap::new();
        for (pid, t) in &leases {
            if let Some(g) = grads.take(t) {
                grad_map.insert(*pid, g);
            }
        }
        self.model.stats = stats;
        self.opt.step(&mut self.model.params, &grad_map);
        self.global_step += 1;
        Ok(StepStats {
            ce: ce_val,
            rclm: rclm_val,
            accepted: n_accepted,
            pl_correct: n_correct,
            batch: batch.len(),
        })
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let named_params = |ps: &ParamStore<F>| -> Vec<(String, ArrayD<F>)> {
            ps.iter().map(|(_, n, v)| (n.to_string(), v.to_owned())).collect()
        };
        let named_stats = |ss: &StatsStore<F>| -> Vec<(String, ArrayD<F>)> {
            ss.iter().map(|(_, n, v)| (n.to_string(), v.clone())).collect()
        };
        let (m, v) = self.opt.moments();
        let ckpt = Checkpoint {
            config: self.cfg.clone(),
            epoch: self.epoch as u64,
            global_step: self.global_step,
            params: named_params(&self.model.params),
            adam_t: self.opt.t,
            adam_m: m.to_vec(),
            adam_v: v.to_vec(),
            stats: named_stats(&self.model.stats),
            frozen: self
                .frozen
                .as_ref()
                .map(|(p, s)| (named_params(p), named_stats(s))),
        };
        checkpoint::save(path, &ckpt)
    }

    /// Rebuilds a trainer in the exact state the checkpoint was saved in.
    pub fn from_checkpoint(path: &Path) -> Result<Self> {
        let ckpt: Checkpoint<F> = checkpoint::load(path)?;
        let mut t = Trainer::new(ckpt.config.clone())?;
        if ckpt.params.len() != t.model.params.len() {
            return Err(DircrError::CorruptFile(format!(
                "parameter count {} does not match architecture ({} expected)",
                ckpt.params.len(),
                t.model.params.len()
            )));
        }
        let (mut m, mut v) = {
            let (m0, v0) = t.opt.moments();
            (m0.to_vec(), v0.to_vec())
        };
        for (i, (name, arr)) in ckpt.params.iter().enumerate() {
            let id = t.model.params.id_of(name).ok_or_else(|| {
                DircrError::CorruptFile(format!("unknown parameter '{name}'"))
            })?;
            check_shape(name, t.model.params.value(id).shape(), arr)?;
            check_shape(name, arr.shape(), &ckpt.adam_m[i])?;
            check_shape(name, arr.shape(), &ckpt.adam_v[i])?;
            t.model.params.set(id, arr.clone());
            m[id.index()] = ckpt.adam_m[i].clone();
            v[id.index()] = ckpt.adam_v[i].clone();
        }
        t.opt.restore(ckpt.adam_t, m, v);
        apply_named_stats(&mut t.model.stats, &ckpt.stats)?;
        if let Some((fp, fs)) = &ckpt.frozen {
            let mut params = t.model.params.clone();
            for (name, arr) in fp {
                let id = params.id_of(name).ok_or_else(|| {
                    DircrError::CorruptFile(format!("unknown frozen parameter '{name}'"))
                })?;
                check_shape(name, params.value(id).shape(), arr)?;
                params.set(id, arr.clone());
            }
            let mut stats = t.model.stats.clone();
            apply_named_stats(&mut stats, fs)?;
            t.frozen = Some((params, stats));
        }
        t.epoch = ckpt.epoch as usize;
        t.global_step = ckpt.global_step;
        Ok(t)
    }
}

fn check_shape<F: Scalar>(name: &str, expected: &[usize], got: &ArrayD<F>) -> Result<()> {
    if expected != got.shape() {
        return Err(DircrError::CorruptFile(format!(
            "'{name}' has shape {:?}, expected {:?}",
            got.shape(),
            expected
        )));
    }
    Ok(())
}

fn apply_named_stats<F: Scalar>(
    stats: &mut StatsStore<F>,
    named: &[(String, ArrayD<F>)],
) -> Result<()> {
    for (name, arr) in named {
        let id = stats.id_of(name).ok_or_else(|| {
            DircrError::CorruptFile(format!("unknown statistic '{name}'"))
        })?;
        if stats.value(id).shape() != arr.shape() {
            return Err(DircrError::CorruptFile(format!(
                "'{name}' has shape {:?}, expected {:?}",
                arr.shape(),
                stats.value(id).shape()
            )));
        }
        stats.set(id, arr.clone());
    }
    Ok(())
}

fn batch_probs<F: Scalar>(logits: &ndarray::ArcArray<F, ndarray::IxDyn>) -> Vec<Vec<f64>> {
    let b = logits.shape()[0];
    (0..b)
        .map(|i| {
            let row: Vec<f64> = (0..8).map(|j| logits[[i, j]].to64()).collect();
            softmax8(&row)
        })
        .collect()
}

/// Accuracy of argmax predictions in inference mode (batch-norm running
/// stats, no dropout).
pub fn evaluate<F: Scalar>(
    model: &Model<F>,
    puzzles: &[Puzzle],
    batch_size: usize,
) -> Result<f64> {
    if puzzles.is_empty() {
        return Err(DircrError::EmptyDataset);
    }
    let mut stats = model.stats.clone();
    let mut correct = 0usize;
    for chunk in puzzles.chunks(batch_size.max(1)) {
        let refs: Vec<&Puzzle> = chunk.iter().collect();
        let images: ArrayD<F> = batch_images(&refs);
        let tape = Tape::new();
        let mut fw = Fwd::new(
            &tape,
            &model.params,
            &mut stats,
            false,
            false,
            rng_for(0, "eval", &[]),
        );
        let out = model.forward(&mut fw, &images)?;
        let lv = out.logits.value();
        for (i, p) in chunk.iter().enumerate() {
            let row: Vec<f64> = (0..8).map(|j| lv[[i, j]].to64()).collect();
            if argmax(&row) == p.answer_index as usize {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / puzzles.len() as f64)
}
