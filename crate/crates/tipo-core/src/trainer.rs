//! Two-stage training: supervised warm start, then preference refinement.
//!
//! The supervised stage fits the policy to every reference branch under
//! its own persona. The preference stage freezes that policy as the
//! reference model and refines a copy with one of the pairwise
//! objectives. An optional validation hook scores the policy every few
//! epochs; when it stops improving we roll back to the best snapshot.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::align::{align_pair, AlignedPair};
use crate::error::{Error, Result};
use crate::objectives::{dpo_batch, sft_batch, step_family_batch, Method, ObjectiveConfig};
use crate::policy::PolicyParams;
use crate::traj::{PreferencePair, TaskMap, Trajectory};
use crate::util::{seeded_rng, sub_seed};

use rand::seq::SliceRandom;

/// Epoch interval between validation probes in the preference stage.
pub const VAL_EVERY: usize = 5;
/// Validation probes without improvement before stopping early.
pub const PATIENCE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_sft: f64,
    pub lr_pref: f64,
    pub epochs_sft: usize,
    pub epochs_pref: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
    pub objective: ObjectiveConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_sft: 0.5,
            lr_pref: 0.1,
            epochs_sft: 30,
            epochs_pref: 30,
            batch_size: 16,
            seed: 0,
            shuffle: true,
            objective: ObjectiveConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.objective.method = method;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [("lr_sft", self.lr_sft), ("lr_pref", self.lr_pref)] {
            if !lr.is_finite() || lr < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite and non-negative, got {lr}"
                )));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".to_string()));
        }
        self.objective.validate()
    }
}

/// One logged measurement. Training rows carry loss and mean z; validation
/// rows carry the compliance probe.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub epoch: usize,
    pub split: &'static str,
    pub loss: Option<f64>,
    pub mean_z: Option<f64>,
    pub compliance: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<LogRecord>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,split,loss,mean_z,compliance\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.epoch,
                r.split,
                fmt_opt(r.loss),
                fmt_opt(r.mean_z),
                fmt_opt(r.compliance)
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn last_train_loss(&self) -> Option<f64> {
        self.records.iter().rev().find(|r| r.split == "train").and_then(|r| r.loss)
    }

    pub fn first_train_loss(&self) -> Option<f64> {
        self.records.iter().find(|r| r.split == "train").and_then(|r| r.loss)
    }
}

fn check_finite(loss: f64, stage: &str, epoch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence(format!("{stage} loss became non-finite ({loss}) at epoch {epoch}")))
    }
}

/// Fits a fresh policy to the reference branches by gradient descent on
/// mean per-step negative log likelihood.
pub fn train_sft(
    tasks: &TaskMap,
    trajs: &[&Trajectory],
    cfg: &TrainConfig,
) -> Result<(PolicyParams, TrainingLog)> {
    cfg.validate()?;
    if trajs.is_empty() {
        return Err(Error::Precondition("no trajectories to fit".to_string()));
    }
    let mut params = PolicyParams::zeros();
    let mut log = TrainingLog::default();
    let mut rng = seeded_rng(sub_seed(cfg.seed, "sft"));
    let mut idx: Vec<usize> = (0..trajs.len()).collect();
    for epoch in 1..=cfg.epochs_sft {
        if cfg.shuffle {
            idx.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut steps_total = 0usize;
        for chunk in idx.chunks(cfg.batch_size) {
            let batch: Vec<&Trajectory> = chunk.iter().map(|&i| trajs[i]).collect();
            let n_steps: usize = batch.iter().map(|t| t.len()).sum();
            let eval = sft_batch(&params, tasks, &batch)?;
            check_finite(eval.loss, "sft", epoch)?;
            params.apply_gradient(&eval.grad, cfg.lr_sft);
            loss_sum += eval.loss * n_steps as f64;
            steps_total += n_steps;
        }
        log.records.push(LogRecord {
            epoch,
            split: "train",
            loss: Some(loss_sum / steps_total as f64),
            mean_z: None,
            compliance: None,
        });
    }
    if cfg.lr_sft > 0.0 && cfg.epochs_sft >= 2 {
        let (first, last) = (log.first_train_loss().unwrap(), log.last_train_loss().unwrap());
        // partial_cmp so a NaN loss also lands in the error arm.
        if last.partial_cmp(&first) != Some(std::cmp::Ordering::Less) {
            return Err(Error::Divergence(format!(
                "sft loss failed to decrease: first epoch {first}, last epoch {last}"
            )));
        }
    }
    Ok((params, log))
}

/// Outcome of the preference stage.
#[derive(Debug, Clone)]
pub struct PrefRun {
    pub params: PolicyParams,
    pub log: TrainingLog,
    pub stopped_early: bool,
    /// Epoch of the snapshot that was kept (last trained epoch when no
    /// validator ran).
    pub best_epoch: usize,
}

/// Validation probe: scores the current policy, higher is better.
pub type Validator<'a> = &'a mut dyn FnMut(&PolicyParams) -> Result<f64>;

/// Refines a frozen supervised policy against preference pairs with the
/// configured objective. When `validator` is given it is probed every
/// [`VAL_EVERY`] epochs; after [`PATIENCE`] probes without improvement
/// training stops and the best-scoring snapshot is returned.
pub fn train_pref(
    sft: &PolicyParams,
    tasks: &TaskMap,
    pairs: &[&PreferencePair],
    cfg: &TrainConfig,
    mut validator: Option<Validator<'_>>,
) -> Result<PrefRun> {
    cfg.validate()?;
    if cfg.objective.method == Method::Sft {
        return Err(Error::Config("preference stage needs a pairwise method, not sft".to_string()));
    }
    if pairs.is_empty() {
        return Err(Error::Precondition("no preference pairs to fit".to_string()));
    }
    let reference = sft.clone_frozen();
    let mut params = sft.clone_frozen();
    let aligned: Option<Vec<AlignedPair>> = if cfg.objective.method.needs_alignment() {
        Some(pairs.iter().map(|p| align_pair(p)).collect::<Result<_>>()?)
    } else {
        None
    };

    let mut log = TrainingLog::default();
    let mut rng = seeded_rng(sub_seed(cfg.seed, "pref"));
    let mut idx: Vec<usize> = (0..pairs.len()).collect();
    let mut best: Option<(f64, Vec<f64>, usize)> = None;
    let mut probes_without_improvement = 0usize;
    let mut stopped_early = false;
    let mut last_epoch = 0usize;

    for epoch in 1..=cfg.epochs_pref {
        last_epoch = epoch;
        if cfg.shuffle {
            idx.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut z_sum = 0.0;
        for chunk in idx.chunks(cfg.batch_size) {
            let eval = match &aligned {
                Some(all) => {
                    let batch: Vec<&AlignedPair> = chunk.iter().map(|&i| &all[i]).collect();
                    step_family_batch(&params, &reference, tasks, &batch, &cfg.objective)?
                }
                None => {
                    let batch: Vec<&PreferencePair> = chunk.iter().map(|&i| pairs[i]).collect();
                    dpo_batch(&params, &reference, tasks, &batch, &cfg.objective)?
                }
            };
            check_finite(eval.loss, cfg.objective.method.label(), epoch)?;
            params.apply_gradient(&eval.grad, cfg.lr_pref);
            loss_sum += eval.loss * chunk.len() as f64;
            z_sum += eval.mean_z * chunk.len() as f64;
        }
        log.records.push(LogRecord {
            epoch,
            split: "train",
            loss: Some(loss_sum / pairs.len() as f64),
            mean_z: Some(z_sum / pairs.len() as f64),
            compliance: None,
        });

        if let Some(probe) = validator.as_deref_mut() {
            if epoch % VAL_EVERY == 0 {
                let score = probe(&params)?;
                log.records.push(LogRecord {
                    epoch,
                    split: "val",
                    loss: None,
                    mean_z: None,
                    compliance: Some(score),
                });
                let improved = best.as_ref().is_none_or(|(b, _, _)| score > *b);
                if improved {
                    best = Some((score, params.w.clone(), epoch));
                    probes_without_improvement = 0;
                } else {
                    probes_without_improvement += 1;
                    if probes_without_improvement >= PATIENCE {
                        stopped_early = true;
                        break;
                    }
                }
            }
        }
    }

    let best_epoch = match best {
        Some((_, w, epoch)) => {
            params = PolicyParams::from_w(w)?;
            epoch
        }
        None => last_epoch,
    };
    Ok(PrefRun { params, log, stopped_early, best_epoch })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;
    use crate::synthgen::{generate, GenConfig};
    use crate::traj::task_map;

    fn small_dataset(n: usize, seed: u64) -> Dataset {
        Dataset::from_gen(generate(&GenConfig::default().with_n_tasks(n).with_seed(seed)).unwrap())
    }

    #[test]
    fn sft_memorizes_a_single_task() {
        let ds = small_dataset(1, 3);
        let tasks = task_map(&ds.tasks);
        let trajs: Vec<&Trajectory> = ds.trajectories.iter().collect();
        let cfg = TrainConfig { epochs_sft: 200, ..TrainConfig::default() };
        let (_, log) = train_sft(&tasks, &trajs, &cfg).unwrap();
        let last = log.last_train_loss().unwrap();
        assert!(last < 0.1, "final loss {last}");
        assert!(log.first_train_loss().unwrap() > last);
    }

    #[test]
    fn zero_learning_rate_keeps_loss_and_params_frozen() {
        let ds = small_dataset(4, 1);
        let tasks = task_map(&ds.tasks);
        let trajs: Vec<&Trajectory> = ds.trajectories.iter().collect();
        let cfg = TrainConfig { lr_sft: 0.0, epochs_sft: 5, ..TrainConfig::default() };
        let (params, log) = train_sft(&tasks, &trajs, &cfg).unwrap();
        let losses: Vec<f64> = log.records.iter().filter_map(|r| r.loss).collect();
        assert!(losses.windows(2).all(|w| w[0] == w[1]), "{losses:?}");
        assert_eq!(params.w, PolicyParams::zeros().w);
    }

    #[test]
    fn sft_is_deterministic() {
        let ds = small_dataset(6, 2);
        let tasks = task_map(&ds.tasks);
        let trajs: Vec<&Trajectory> = ds.trajectories.iter().collect();
        let cfg = TrainConfig { epochs_sft: 10, ..TrainConfig::default() }.with_seed(9);
        let (a, _) = train_sft(&tasks, &trajs, &cfg).unwrap();
        let (b, _) = train_sft(&tasks, &trajs, &cfg).unwrap();
        let bits = |p: &PolicyParams| p.w.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    /// Smoothed with a five-epoch moving average, the training loss should
    /// fall (or hold) in at least nine out of ten windows for both stages.
    #[test]
    fn training_loss_trends_downward() {
        fn mostly_decreasing(losses: &[f64]) {
            let ma: Vec<f64> =
                losses.windows(5).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
            let drops = ma.windows(2).filter(|w| w[1] <= w[0] + 1e-12).count();
            let frac = drops as f64 / (ma.len() - 1) as f64;
            assert!(frac >= 0.9, "only {frac:.2} of windows improved: {ma:?}");
        }
        let train_losses = |log: &TrainingLog| -> Vec<f64> {
            log.records.iter().filter(|r| r.split == "train").filter_map(|r| r.loss).collect()
        };

        let ds = small_dataset(20, 6);
        let tasks = task_map(&ds.tasks);
        let trajs: Vec<&Trajectory> = ds.trajectories.iter().collect();
        let pairs: Vec<&PreferencePair> = ds.pairs.iter().collect();
        let cfg = TrainConfig { epochs_sft: 60, epochs_pref: 60, ..TrainConfig::default() }
            .with_method(Method::Tipo);
        let (sft, sft_log) = train_sft(&tasks, &trajs, &cfg).unwrap();
        mostly_decreasing(&train_losses(&sft_log));
        let run = train_pref(&sft, &tasks, &pairs, &cfg, None).unwrap();
        mostly_decreasing(&train_losses(&run.log));
    }

    #[test]
    fn preference_stage_runs_every_method_and_separates_pairs() {
        let ds = small_dataset(8, 4);
        let tasks = task_map(&ds.tasks);
        let trajs: Vec<&Trajectory> = ds.trajectories.iter().collect();
        let pairs: Vec<&PreferencePair> = ds.pairs.iter().collect();
        let base = TrainConfig { epochs_sft: 15, epochs_pref: 10, ..TrainConfig::default() };
        let (sft, _) = train_sft(&tasks, &trajs, &base).unwrap();
        for method in
            [Method::Dpo, Method::StepDpo, Method::TipoWoPw, Method::TipoWoPg, Method::Tipo]
        {
            let cfg = base.clone().with_method(method);
            let run = train_pref(&sft, &tasks, &pairs, &cfg, None).unwrap();
            let last = run.log.records.iter().rev().find(|r| r.split == "train").unwrap();
            assert!(
                last.mean_z.unwrap() > 0.0,
                "{}: mean z {:?} not positive",
                method.label(),
                last.mean_z
            );
            assert!(!run.stopped_early);
            assert_eq!(run.best_epoch, 10);
        }
    }

    #[test]
    fn preference_stage_is_deterministic() {
        let ds = small_dataset(5, 8);
        let tasks = task_map(&ds.tasks);
        let trajs: Vec<&Trajectory> = ds.trajectories.iter().collect();
        let pairs: Vec<&PreferencePair> = ds.pairs.iter().collect();
        let cfg = TrainConfig { epochs_sft: 10, epochs_pref: 8, ..TrainConfig::default() }
            .with_method(Method::Tipo);
        let (sft, _) = train_sft(&tasks, &trajs, &cfg).unwrap();
        let a = train_pref(&sft, &tasks, &pairs, &cfg, None).unwrap();
        let b = train_pref(&sft, &tasks, &pairs, &cfg, None).unwrap();
        let bits = |p: &PolicyParams| p.w.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.params), bits(&b.params));
    }

    #[test]
    fn early_stopping_rolls_back_to_the_best_probe() {
        let ds = small_dataset(4, 5);
        let tasks = task_map(&ds.tasks);
        let trajs: Vec<&Trajectory> = ds.trajectories.iter().collect();
        let pairs: Vec<&PreferencePair> = ds.pairs.iter().collect();
        let cfg = TrainConfig { epochs_sft: 10, epochs_pref: 30, ..TrainConfig::default() }
            .with_method(Method::Dpo);
        let (sft, _) = train_sft(&tasks, &trajs, &cfg).unwrap();

        // Scores fall after the first probe, so the first snapshot wins and
        // training stops after PATIENCE further probes.
        let mut scores = vec![0.9, 0.8, 0.7, 0.6, 0.5, 0.4].into_iter();
        let mut first_snapshot: Option<Vec<f64>> = None;
        let mut probe = |p: &PolicyParams| -> Result<f64> {
            if first_snapshot.is_none() {
                first_snapshot = Some(p.w.clone());
            }
            Ok(scores.next().unwrap())
        };
        let run = train_pref(&sft, &tasks, &pairs, &cfg, Some(&mut probe)).unwrap();
        assert!(run.stopped_early);
        assert_eq!(run.best_epoch, VAL_EVERY);
        assert_eq!(run.params.w, first_snapshot.unwrap());
        let val_rows = run.log.records.iter().filter(|r| r.split == "val").count();
        assert_eq!(val_rows, 1 + PATIENCE);
    }

    #[test]
    fn improving_validator_keeps_the_last_snapshot() {
        let ds = small_dataset(3, 6);
        let tasks = task_map(&ds.tasks);
        let trajs: Vec<&Trajectory> = ds.trajectories.iter().collect();
        let pairs: Vec<&PreferencePair> = ds.pairs.iter().collect();
        let cfg = TrainConfig { epochs_sft: 8, epochs_pref: 10, ..TrainConfig::default() }
            .with_method(Method::Tipo);
        let (sft, _) = train_sft(&tasks, &trajs, &cfg).unwrap();
        let mut calls = 0;
        let mut probe = |_: &PolicyParams| -> Result<f64> {
            calls += 1;
            Ok(calls as f64)
        };
        let run = train_pref(&sft, &tasks, &pairs, &cfg, Some(&mut probe)).unwrap();
        assert!(!run.stopped_early);
        assert_eq!(run.best_epoch, 10);
        assert_eq!(calls, 2);
    }

    #[test]
    fn preference_stage_rejects_the_supervised_method() {
        let ds = small_dataset(2, 7);
        let tasks = task_map(&ds.tasks);
        let pairs: Vec<&PreferencePair> = ds.pairs.iter().collect();
        let sft = PolicyParams::zeros();
        let cfg = TrainConfig::default().with_method(Method::Sft);
        assert!(matches!(train_pref(&sft, &tasks, &pairs, &cfg, None), Err(Error::Config(_))));
    }

    #[test]
    fn csv_log_has_header_and_blank_fields() {
        let log = TrainingLog {
            records: vec![
                LogRecord {
                    epoch: 1,
                    split: "train",
                    loss: Some(0.5),
                    mean_z: Some(0.25),
                    compliance: None,
                },
                LogRecord {
                    epoch: 5,
                    split: "val",
                    loss: None,
                    mean_z: None,
                    compliance: Some(87.5),
                },
            ],
        };
        let csv = log.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "epoch,split,loss,mean_z,compliance");
        assert_eq!(lines[1], "1,train,0.5,0.25,");
        assert_eq!(lines[2], "5,val,,,87.5");
    }

    #[test]
    fn config_validation_rejects_nonsense() {
        let cfg = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig { lr_pref: f64::NAN, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig { lr_sft: -0.1, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
