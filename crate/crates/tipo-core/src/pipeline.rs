//! End-to-end experiment orchestration: generate, train every method,
//! evaluate on the held-out split, aggregate across seeds, and check the
//! expected trends.
//!
//! A "reproduce" run repeats the whole experiment for three seeds derived
//! from one base seed, then reports each metric as mean ± half-range and
//! verifies the headline comparisons (the weighted, gated step objective
//! against sequence DPO and against its own ablations).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::metrics::{
    evaluate, report_rows, summary_row, EvalConfig, EvalOutput, EvalRow, REPORT_HEADER,
    SUMMARY_HEADER,
};
use crate::objectives::Method;
use crate::policy::PolicyParams;
use crate::synthgen::{generate, GenConfig};
use crate::trainer::{train_pref, train_sft, TrainConfig, TrainingLog, Validator};
use crate::traj::{task_map, PreferencePair, Trajectory};

/// Whole-experiment configuration, the unit the CLI reads from JSON.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub gen: GenConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.train.validate()?;
        self.eval.validate()
    }

    /// Settings the `reproduce` command uses unless the caller overrides
    /// them. The benchmark itself (task generator and splits) stays at the
    /// stock defaults; the training recipe is tuned so that every method is
    /// trained with identical, adequate capacity on that benchmark: a longer
    /// supervised warm start, a preference stage with a learning rate large
    /// enough for the per-column objectives to move, and a softened progress
    /// exponent. The same recipe is applied to all methods.
    pub fn reproduce_defaults() -> Self {
        let mut cfg = RunConfig::default();
        cfg.train.epochs_sft = 58;
        cfg.train.epochs_pref = 200;
        cfg.train.lr_pref = 2.0;
        cfg.train.batch_size = 12;
        cfg.train.objective.beta = 0.2;
        cfg.train.objective.score.gamma = 0.5;
        cfg.eval.max_len = 12;
        cfg
    }
}

/// Preference methods trained on top of the shared supervised warm start.
pub const PREF_METHODS: [Method; 5] =
    [Method::Dpo, Method::StepDpo, Method::TipoWoPw, Method::TipoWoPg, Method::Tipo];

/// The three seeds a reproduction run derives from its base seed.
pub fn reproduce_seeds(base: u64) -> [u64; 3] {
    [base, base + 6, base + 35]
}

#[derive(Debug, Clone)]
pub struct MethodEval {
    pub method: Method,
    pub output: EvalOutput,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

#[derive(Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub dataset: Dataset,
    pub sft_params: PolicyParams,
    pub sft_log: TrainingLog,
    pub method_params: BTreeMap<&'static str, PolicyParams>,
    pub evals: Vec<MethodEval>,
}

impl SeedRun {
    pub fn eval_for(&self, method: Method) -> Option<&MethodEval> {
        self.evals.iter().find(|e| e.method == method)
    }
}

/// Runs one full experiment at `seed`: generate the dataset, fit the
/// supervised warm start once, then fit and evaluate every preference
/// method on top of it. Evaluation uses the test split; the validation
/// split drives early stopping.
pub fn run_seed(cfg: &RunConfig, seed: u64) -> Result<SeedRun> {
    cfg.validate()?;
    let gen_cfg = cfg.gen.clone().with_seed(seed);
    let dataset = Dataset::from_gen(generate(&gen_cfg)?);
    dataset.check_split_hygiene()?;
    let tasks = task_map(&dataset.tasks);
    let train_trajs: Vec<&Trajectory> = dataset.split_trajectories(Split::Train);
    let train_pairs: Vec<&PreferencePair> = dataset.split_pairs(Split::Train);
    let base_train = cfg.train.clone().with_seed(seed);

    let (sft_params, sft_log) = train_sft(&tasks, &train_trajs, &base_train)?;
    let mut method_params = BTreeMap::new();
    let mut evals = Vec::with_capacity(1 + PREF_METHODS.len());
    evals.push(MethodEval {
        method: Method::Sft,
        output: evaluate(&sft_params, &dataset, Split::Test, &cfg.eval)?,
        best_epoch: base_train.epochs_sft,
        stopped_early: false,
    });
    method_params.insert(Method::Sft.label(), sft_params.clone_frozen());

    let has_val = !dataset.split_ids(Split::Val).is_empty();
    for method in PREF_METHODS {
        let train_cfg = base_train.clone().with_method(method);
        let mut probe = |p: &PolicyParams| -> Result<f64> {
            Ok(evaluate(p, &dataset, Split::Val, &cfg.eval)?.summary.compliance)
        };
        let validator: Option<Validator<'_>> = if has_val { Some(&mut probe) } else { None };
        let run = train_pref(&sft_params, &tasks, &train_pairs, &train_cfg, validator)?;
        evals.push(MethodEval {
            method,
            output: evaluate(&run.params, &dataset, Split::Test, &cfg.eval)?,
            best_epoch: run.best_epoch,
            stopped_early: run.stopped_early,
        });
        method_params.insert(method.label(), run.params);
    }
    Ok(SeedRun { seed, dataset, sft_params, sft_log, method_params, evals })
}

/// Mean with the observed range across seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Stat {
    pub fn from_values(values: &[f64]) -> Stat {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Stat { mean, lo, hi }
    }

    /// Half the spread between the best and worst seed.
    pub fn half_range(&self) -> f64 {
        (self.hi - self.lo) / 2.0
    }
}

#[derive(Debug, Clone)]
pub struct MethodAggregate {
    pub method: Method,
    pub sr: Stat,
    pub compliance: Stat,
    pub non_compliance: Stat,
    pub pd: Stat,
}

/// Per-method aggregation across seed runs, in canonical method order.
pub fn aggregate(runs: &[SeedRun]) -> Result<Vec<MethodAggregate>> {
    if runs.is_empty() {
        return Err(Error::Precondition("no seed runs to aggregate".to_string()));
    }
    let mut out = Vec::new();
    for method in Method::ALL {
        let summaries: Vec<_> = runs
            .iter()
            .map(|r| {
                r.eval_for(method).map(|e| e.output.summary).ok_or_else(|| {
                    Error::Precondition(format!(
                        "seed {} missing method {}",
                        r.seed,
                        method.label()
                    ))
                })
            })
            .collect::<Result<_>>()?;
        let pick = |f: fn(&crate::metrics::EvalSummary) -> f64| {
            Stat::from_values(&summaries.iter().map(f).collect::<Vec<f64>>())
        };
        out.push(MethodAggregate {
            method,
            sr: pick(|s| s.sr_overall),
            compliance: pick(|s| s.compliance),
            non_compliance: pick(|s| s.non_compliance),
            pd: pick(|s| s.pd),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TrendCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn find_agg(aggs: &[MethodAggregate], method: Method) -> Result<&MethodAggregate> {
    aggs.iter()
        .find(|a| a.method == method)
        .ok_or_else(|| Error::Precondition(format!("no aggregate for {}", method.label())))
}

/// The headline comparisons a healthy run is expected to show.
pub fn trend_checks(aggs: &[MethodAggregate]) -> Result<Vec<TrendCheck>> {
    let tipo = find_agg(aggs, Method::Tipo)?;
    let dpo = find_agg(aggs, Method::Dpo)?;
    let wo_pw = find_agg(aggs, Method::TipoWoPw)?;
    let wo_pg = find_agg(aggs, Method::TipoWoPg)?;

    let mut checks = Vec::new();
    checks.push(TrendCheck {
        name: "compliance_gain_over_dpo",
        passed: tipo.compliance.mean >= dpo.compliance.mean + 5.0,
        detail: format!(
            "tipo {:.2} vs dpo {:.2} (needs +5.00)",
            tipo.compliance.mean, dpo.compliance.mean
        ),
    });
    checks.push(TrendCheck {
        name: "persona_distinction_not_worse",
        passed: tipo.pd.mean >= dpo.pd.mean,
        detail: format!("tipo {:.4} vs dpo {:.4}", tipo.pd.mean, dpo.pd.mean),
    });
    let worst_ablation = wo_pw.compliance.mean.max(wo_pg.compliance.mean);
    checks.push(TrendCheck {
        name: "both_mechanisms_contribute",
        passed: tipo.compliance.mean >= worst_ablation,
        detail: format!(
            "tipo {:.2} vs best ablation {:.2} (wo_pw {:.2}, wo_pg {:.2})",
            tipo.compliance.mean, worst_ablation, wo_pw.compliance.mean, wo_pg.compliance.mean
        ),
    });
    checks.push(TrendCheck {
        name: "step_accuracy_preserved",
        passed: tipo.sr.mean >= dpo.sr.mean - 0.03,
        detail: format!("tipo {:.4} vs dpo {:.4} (allowed drop 0.03)", tipo.sr.mean, dpo.sr.mean),
    });
    Ok(checks)
}

#[derive(Debug)]
pub struct ReproOutcome {
    pub runs: Vec<SeedRun>,
    pub aggregates: Vec<MethodAggregate>,
    pub trends: Vec<TrendCheck>,
}

impl ReproOutcome {
    pub fn trends_pass(&self) -> bool {
        self.trends.iter().all(|t| t.passed)
    }

    /// Mean metrics per method, one CSV line each.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from(SUMMARY_HEADER);
        out.push('\n');
        for agg in &self.aggregates {
            let s = crate::metrics::EvalSummary {
                sr_overall: agg.sr.mean,
                compliance: agg.compliance.mean,
                non_compliance: agg.non_compliance.mean,
                pd: agg.pd.mean,
            };
            out.push_str(&summary_row(agg.method.label(), &s));
            out.push('\n');
        }
        out
    }

    /// Per-(method, persona, category) breakdown pooled over seeds.
    pub fn report_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for method in Method::ALL {
            let pooled: Vec<EvalRow> = self
                .runs
                .iter()
                .filter_map(|r| r.eval_for(method))
                .flat_map(|e| e.output.rows.iter().cloned())
                .collect();
            for line in report_rows(method.label(), &pooled) {
                out.push_str(&line);
                out.push('\n');
            }
        }
        out
    }

    /// Fixed-width table with mean ± half-range across seeds.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let seeds: Vec<String> = self.runs.iter().map(|r| r.seed.to_string()).collect();
        let _ = writeln!(out, "results over seeds [{}] (mean +/- half-range)", seeds.join(", "));
        let _ = writeln!(
            out,
            "{:<12} {:>20} {:>20} {:>20} {:>20}",
            "method", "step accuracy", "compliance", "non-compliance", "persona distinction"
        );
        for agg in &self.aggregates {
            let cell = |s: &Stat, prec: usize| {
                format!("{:.p$} +/- {:.p$}", s.mean, s.half_range(), p = prec)
            };
            let _ = writeln!(
                out,
                "{:<12} {:>20} {:>20} {:>20} {:>20}",
                agg.method.label(),
                cell(&agg.sr, 4),
                cell(&agg.compliance, 2),
                cell(&agg.non_compliance, 2),
                cell(&agg.pd, 4)
            );
        }
        for t in &self.trends {
            let _ = writeln!(
                out,
                "[{}] {}: {}",
                if t.passed { "PASS" } else { "FAIL" },
                t.name,
                t.detail
            );
        }
        out
    }
}

/// Full reproduction: three derived seeds, aggregation, trend checks.
pub fn reproduce(cfg: &RunConfig, base_seed: u64) -> Result<ReproOutcome> {
    let runs: Vec<SeedRun> = reproduce_seeds(base_seed)
        .into_iter()
        .map(|seed| run_seed(cfg, seed))
        .collect::<Result<_>>()?;
    let aggregates = aggregate(&runs)?;
    let trends = trend_checks(&aggregates)?;
    Ok(ReproOutcome { runs, aggregates, trends })
}

/// Writes `summary.csv` and `report.csv` into `dir`.
pub fn write_outputs(outcome: &ReproOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let summary = dir.join("summary.csv");
    std::fs::write(&summary, outcome.summary_csv()).map_err(|e| Error::io(&summary, e))?;
    let report = dir.join("report.csv");
    std::fs::write(&report, outcome.report_csv()).map_err(|e| Error::io(&report, e))?;
    Ok(())
}
