//! Rollout and evaluation: how well does a policy's greedy behaviour track
//! the persona-conditioned references?
//!
//! - Step accuracy (`sr`): position-wise matches against the reference,
//!   normalized by reference length. Reported as a fraction in [0, 1].
//! - Privacy action scores (`pas_s`, `pas_u`): multiset recall (percent)
//!   of the protective steps of the privacy-first reference, respectively
//!   the exposing steps of the utility-first reference, matched by step
//!   key regardless of position.
//! - Compliance: persona-matched recall averaged over both personas.
//!   Non-compliance: the crossed version (exposing steps emitted under the
//!   privacy-first persona and vice versa); lower is better.
//! - Persona distinction (`pd`): fraction of tasks where the two persona
//!   rollouts actually differ in the right direction and both finish.
//!
//! Tasks are evaluated in task-id order so results never depend on input
//! ordering.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::align::match_key;
use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::policy::{context_for, PolicyParams, PrevAction};
use crate::synthgen::realize_step;
use crate::traj::{
    ActionType, Persona, PrivacyCategory, Step, TaskCategory, TaskInstance, Trajectory,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Rollout cap when the policy never confirms.
    pub max_len: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { max_len: 16 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".to_string()));
        }
        Ok(())
    }
}

/// Greedy rollout: pick the argmax action at every step, materialize it
/// the same way the generator would, stop after `confirm` or at the cap.
pub fn generate_trajectory(
    params: &PolicyParams,
    task: &TaskInstance,
    persona: Persona,
    cfg: &EvalConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    let mut steps = Vec::new();
    let mut prev = PrevAction::Start;
    for t in 0..cfg.max_len {
        let ctx = context_for(task, persona, t, prev)?;
        let action = params.greedy_action(&ctx)?;
        steps.push(realize_step(task, t, action));
        if action == ActionType::Confirm {
            break;
        }
        prev = PrevAction::Action(action);
    }
    Ok(Trajectory { task_id: task.task_id.clone(), persona, steps })
}

/// Two steps match when they are the same action with the same identity
/// args (coordinates excluded).
pub fn step_match(a: &Step, b: &Step) -> bool {
    a.action == b.action && match_key(a) == match_key(b)
}

/// Position-wise step accuracy against the reference, in [0, 1].
pub fn success_rate(gen: &Trajectory, reference: &Trajectory) -> f64 {
    if reference.steps.is_empty() {
        return 0.0;
    }
    let matched = gen.steps.iter().zip(&reference.steps).filter(|(g, r)| step_match(g, r)).count();
    matched as f64 / reference.steps.len() as f64
}

fn key_multiset(traj: &Trajectory, category: PrivacyCategory) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for step in &traj.steps {
        if step.category() == category {
            *counts.entry(match_key(step)).or_insert(0) += 1;
        }
    }
    counts
}

/// Multiset recall (percent) of the reference's `category` steps in the
/// generation, matched by step key. `None` when the reference has none.
pub fn privacy_action_score(
    gen: &Trajectory,
    reference: &Trajectory,
    category: PrivacyCategory,
) -> Option<f64> {
    let ref_keys = key_multiset(reference, category);
    let total: usize = ref_keys.values().sum();
    if total == 0 {
        return None;
    }
    let gen_keys = key_multiset(gen, category);
    let matched: usize =
        ref_keys.iter().map(|(k, &n)| n.min(gen_keys.get(k).copied().unwrap_or(0))).sum();
    Some(100.0 * matched as f64 / total as f64)
}

/// Per-(task, persona) evaluation row.
#[derive(Debug, Clone)]
pub struct EvalRow {
    pub task_id: String,
    pub category: TaskCategory,
    pub persona: Persona,
    pub sr: f64,
    /// Persona-matched privacy recall: protective steps for the
    /// privacy-first persona, exposing steps for the utility-first one.
    pub pas_matched: Option<f64>,
    /// Crossed recall against the opposite persona's reference; feeds
    /// non-compliance.
    pub pas_crossed: Option<f64>,
    pub generated: Trajectory,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    /// Mean step accuracy over every (task, persona) rollout, in [0, 1].
    pub sr_overall: f64,
    /// Mean persona-matched privacy recall, percent.
    pub compliance: f64,
    /// Mean crossed privacy recall, percent (lower is better).
    pub non_compliance: f64,
    /// Fraction of tasks whose two rollouts separate the personas.
    pub pd: f64,
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub rows: Vec<EvalRow>,
    /// One entry per task: did the persona-distinction predicate hold?
    pub pd_per_task: Vec<(String, bool)>,
    pub summary: EvalSummary,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn category_count(traj: &Trajectory, category: PrivacyCategory) -> usize {
    traj.steps.iter().filter(|s| s.category() == category).count()
}

fn ends_in_confirm(traj: &Trajectory) -> bool {
    traj.steps.last().map(|s| s.action == ActionType::Confirm).unwrap_or(false)
}

/// The persona-distinction predicate for one task's pair of rollouts.
pub fn persona_distinction(gen_pf: &Trajectory, gen_uf: &Trajectory) -> bool {
    let protective_gap = category_count(gen_pf, PrivacyCategory::Protective)
        > category_count(gen_uf, PrivacyCategory::Protective);
    let exposing_gap = category_count(gen_uf, PrivacyCategory::Exposing)
        >= category_count(gen_pf, PrivacyCategory::Exposing);
    let both_finish = !gen_pf.steps.is_empty()
        && !gen_uf.steps.is_empty()
        && ends_in_confirm(gen_pf)
        && ends_in_confirm(gen_uf);
    protective_gap && exposing_gap && both_finish
}

/// Evaluates arbitrary rollouts produced by `gen_fn` against the stored
/// references for `split`. Tasks are processed in task-id order.
pub fn evaluate_with<F>(dataset: &Dataset, split: Split, mut gen_fn: F) -> Result<EvalOutput>
where
    F: FnMut(&TaskInstance, Persona) -> Result<Trajectory>,
{
    let tasks = dataset.split_tasks(split);
    let mut rows = Vec::with_capacity(tasks.len() * 2);
    let mut pd_per_task = Vec::with_capacity(tasks.len());
    for task in tasks {
        let ref_pf = dataset.reference(&task.task_id, Persona::PrivacyFirst)?;
        let ref_uf = dataset.reference(&task.task_id, Persona::UtilityFirst)?;
        let gen_pf = gen_fn(task, Persona::PrivacyFirst)?;
        let gen_uf = gen_fn(task, Persona::UtilityFirst)?;

        pd_per_task.push((task.task_id.clone(), persona_distinction(&gen_pf, &gen_uf)));
        rows.push(EvalRow {
            task_id: task.task_id.clone(),
            category: task.category,
            persona: Persona::PrivacyFirst,
            sr: success_rate(&gen_pf, ref_pf),
            pas_matched: privacy_action_score(&gen_pf, ref_pf, PrivacyCategory::Protective),
            pas_crossed: privacy_action_score(&gen_pf, ref_uf, PrivacyCategory::Exposing),
            generated: gen_pf,
        });
        rows.push(EvalRow {
            task_id: task.task_id.clone(),
            category: task.category,
            persona: Persona::UtilityFirst,
            sr: success_rate(&gen_uf, ref_uf),
            pas_matched: privacy_action_score(&gen_uf, ref_uf, PrivacyCategory::Exposing),
            pas_crossed: privacy_action_score(&gen_uf, ref_pf, PrivacyCategory::Protective),
            generated: gen_uf,
        });
    }

    let per_persona = |persona: Persona, field: fn(&EvalRow) -> Option<f64>| {
        mean(rows.iter().filter(|r| r.persona == persona).filter_map(field))
    };
    let summary = EvalSummary {
        sr_overall: mean(rows.iter().map(|r| r.sr)),
        compliance: (per_persona(Persona::PrivacyFirst, |r| r.pas_matched)
            + per_persona(Persona::UtilityFirst, |r| r.pas_matched))
            / 2.0,
        non_compliance: (per_persona(Persona::PrivacyFirst, |r| r.pas_crossed)
            + per_persona(Persona::UtilityFirst, |r| r.pas_crossed))
            / 2.0,
        pd: mean(pd_per_task.iter().map(|(_, ok)| if *ok { 1.0 } else { 0.0 })),
    };
    Ok(EvalOutput { rows, pd_per_task, summary })
}

/// Evaluates greedy rollouts of `params` on one split.
pub fn evaluate(
    params: &PolicyParams,
    dataset: &Dataset,
    split: Split,
    cfg: &EvalConfig,
) -> Result<EvalOutput> {
    cfg.validate()?;
    evaluate_with(dataset, split, |task, persona| generate_trajectory(params, task, persona, cfg))
}

/// Scores the stored references against themselves; the ceiling every
/// metric should hit by construction.
pub fn evaluate_references(dataset: &Dataset, split: Split) -> Result<EvalOutput> {
    evaluate_with(dataset, split, |task, persona| {
        dataset.reference(&task.task_id, persona).cloned()
    })
}

pub const REPORT_HEADER: &str = "method,persona,category,sr,pas_s,pas_u";
pub const SUMMARY_HEADER: &str = "method,sr_overall,compliance,non_compliance,pd";

fn fmt_opt_pct(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_default()
}

/// Per-(persona, category) aggregate lines for `report.csv`. Accepts rows
/// pooled from any number of evaluations of the same method.
pub fn report_rows(method: &str, rows: &[EvalRow]) -> Vec<String> {
    let mut lines = Vec::new();
    for persona in Persona::BOTH {
        for category in TaskCategory::ALL {
            let group: Vec<&EvalRow> =
                rows.iter().filter(|r| r.persona == persona && r.category == category).collect();
            if group.is_empty() {
                continue;
            }
            let sr = mean(group.iter().map(|r| r.sr));
            let matched: Vec<f64> = group.iter().filter_map(|r| r.pas_matched).collect();
            let pas = if matched.is_empty() { None } else { Some(mean(matched.iter().copied())) };
            let (pas_s, pas_u) = match persona {
                Persona::PrivacyFirst => (pas, None),
                Persona::UtilityFirst => (None, pas),
            };
            lines.push(format!(
                "{method},{},{},{sr:.4},{},{}",
                persona,
                category.label(),
                fmt_opt_pct(pas_s),
                fmt_opt_pct(pas_u)
            ));
        }
    }
    lines
}

/// One aggregate line for `summary.csv`.
pub fn summary_row(method: &str, s: &EvalSummary) -> String {
    format!("{method},{:.4},{:.2},{:.2},{:.4}", s.sr_overall, s.compliance, s.non_compliance, s.pd)
}
