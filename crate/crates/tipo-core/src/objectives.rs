//! Training objectives and their analytic gradients.
//!
//! All preference objectives score both branches under the pair's persona
//! and subtract the same quantity under a frozen reference policy:
//!
//! ```text
//! z      = beta * [(log pi(y+) - log pi(y-)) - (log ref(y+) - log ref(y-))]
//! loss   = softplus(-z)                                  (sequence level)
//! z_t    = same bracket per aligned column, branch-wise contexts
//! z_hat  = m_t * alpha_t * z_t                           (weighted step level)
//! ```
//!
//! Placeholder slots contribute exactly 0 to every log-prob term. A column
//! whose combined weight `m_t * alpha_t` is zero contributes softplus(0) =
//! ln 2 to the loss and bitwise zero to the gradient: the code skips the
//! accumulation entirely rather than multiplying by zero.
//!
//! Reduction is fixed: mean over columns within a pair, then mean over
//! pairs; sequence DPO is one comparison per pair, mean over pairs.

use serde::{Deserialize, Serialize};

use crate::align::{AlignedColumn, AlignedPair};
use crate::error::{Error, Result};
use crate::intensity::{delta_score, intensity_weight, padding_gate, ScoreConfig};
use crate::policy::{context_for, PolicyParams, PrevAction, StepContext};
use crate::traj::{get_task, PreferencePair, TaskInstance, TaskMap, Trajectory};
use crate::util::{sigmoid, softplus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sft,
    Dpo,
    StepDpo,
    TipoWoPw,
    TipoWoPg,
    Tipo,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Sft,
        Method::Dpo,
        Method::StepDpo,
        Method::TipoWoPw,
        Method::TipoWoPg,
        Method::Tipo,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::Sft => "sft",
            Method::Dpo => "dpo",
            Method::StepDpo => "step_dpo",
            Method::TipoWoPw => "tipo_wo_pw",
            Method::TipoWoPg => "tipo_wo_pg",
            Method::Tipo => "tipo",
        }
    }

    /// Step-level methods consume aligned pairs; sequence DPO consumes raw
    /// pairs.
    pub fn needs_alignment(self) -> bool {
        matches!(self, Method::StepDpo | Method::TipoWoPw | Method::TipoWoPg | Method::Tipo)
    }

    /// (use intensity weights, use padding gate) for the weighted family.
    fn weighting(self) -> (bool, bool) {
        match self {
            Method::Tipo => (true, true),
            Method::TipoWoPw => (false, true),
            Method::TipoWoPg => (true, false),
            _ => (false, false),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub method: Method,
    pub beta: f64,
    pub score: ScoreConfig,
    /// Exploratory: also gate columns whose rejected side is padding.
    pub gate_rejected: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            method: Method::Tipo,
            beta: 0.1,
            score: ScoreConfig::default(),
            gate_rejected: false,
        }
    }
}

impl ObjectiveConfig {
    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        self.score.validate()
    }
}

/// Loss, gradient and the mean comparison score of one batch.
#[derive(Debug, Clone)]
pub struct BatchEval {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Mean z for sequence DPO, mean z_hat (weighted, gated) for the step
    /// family, 0 for sft.
    pub mean_z: f64,
}

/// Mean negative log likelihood of every step in the batch.
pub fn sft_batch(
    params: &PolicyParams,
    tasks: &TaskMap,
    batch: &[&Trajectory],
) -> Result<BatchEval> {
    if batch.is_empty() {
        return Err(Error::Precondition("sft batch is empty".to_string()));
    }
    let n_steps: usize = batch.iter().map(|t| t.len()).sum();
    if n_steps == 0 {
        return Err(Error::Precondition("sft batch has no steps".to_string()));
    }
    let coeff = -1.0 / n_steps as f64;
    let mut grad = PolicyParams::zero_grad();
    let mut total_lp = 0.0;
    for traj in batch {
        let task = get_task(tasks, &traj.task_id)?;
        let mut prev = PrevAction::Start;
        for (t, step) in traj.steps.iter().enumerate() {
            let ctx = context_for(task, traj.persona, t, prev)?;
            total_lp += params.log_prob(&ctx, step.action)?;
            params.accumulate_log_prob_grad(&ctx, step.action, coeff, &mut grad)?;
            prev = PrevAction::Action(step.action);
        }
    }
    Ok(BatchEval { loss: -total_lp / n_steps as f64, grad, mean_z: 0.0 })
}

/// Sequence-level comparison score for one pair. Both branches are scored
/// under the pair's persona.
pub fn dpo_z(
    params: &PolicyParams,
    reference: &PolicyParams,
    task: &TaskInstance,
    pair: &PreferencePair,
    beta: f64,
) -> Result<f64> {
    let lp_c = params.traj_log_prob(task, pair.persona, &pair.chosen)?;
    let lp_r = params.traj_log_prob(task, pair.persona, &pair.rejected)?;
    let ref_c = reference.traj_log_prob(task, pair.persona, &pair.chosen)?;
    let ref_r = reference.traj_log_prob(task, pair.persona, &pair.rejected)?;
    Ok(beta * ((lp_c - lp_r) - (ref_c - ref_r)))
}

/// DPO pairwise loss from a comparison score.
pub fn dpo_loss(z: f64) -> f64 {
    softplus(-z)
}

pub fn dpo_batch(
    params: &PolicyParams,
    reference: &PolicyParams,
    tasks: &TaskMap,
    batch: &[&PreferencePair],
    cfg: &ObjectiveConfig,
) -> Result<BatchEval> {
    if batch.is_empty() {
        return Err(Error::Precondition("preference batch is empty".to_string()));
    }
    let n = batch.len() as f64;
    let mut grad = PolicyParams::zero_grad();
    let mut loss = 0.0;
    let mut mean_z = 0.0;
    for pair in batch {
        let task = get_task(tasks, &pair.task_id)?;
        let z = dpo_z(params, reference, task, pair, cfg.beta)?;
        loss += dpo_loss(z) / n;
        mean_z += z / n;
        let coeff = sigmoid(-z) * cfg.beta / n;
        accumulate_traj_grad(params, task, pair.persona, &pair.chosen, -coeff, &mut grad)?;
        accumulate_traj_grad(params, task, pair.persona, &pair.rejected, coeff, &mut grad)?;
    }
    Ok(BatchEval { loss, grad, mean_z })
}

fn accumulate_traj_grad(
    params: &PolicyParams,
    task: &TaskInstance,
    persona: crate::traj::Persona,
    traj: &Trajectory,
    coeff: f64,
    grad: &mut [f64],
) -> Result<()> {
    let mut prev = PrevAction::Start;
    for (t, step) in traj.steps.iter().enumerate() {
        let ctx = context_for(task, persona, t, prev)?;
        params.accumulate_log_prob_grad(&ctx, step.action, coeff, grad)?;
        prev = PrevAction::Action(step.action);
    }
    Ok(())
}

/// Branch-wise contexts at one aligned column. A side is `None` when that
/// side of the column is the padding placeholder.
#[derive(Debug, Clone, Copy)]
pub struct ColumnContexts {
    pub chosen: Option<StepContext>,
    pub rejected: Option<StepContext>,
}

/// Contexts for every column of an aligned pair. Each branch advances its
/// own step position and previous action only on real steps, so contexts
/// match what sequence scoring of the stripped branch would see.
pub fn column_contexts(task: &TaskInstance, ap: &AlignedPair) -> Result<Vec<ColumnContexts>> {
    let mut out = Vec::with_capacity(ap.len());
    let mut pos_c = 0usize;
    let mut prev_c = PrevAction::Start;
    let mut pos_r = 0usize;
    let mut prev_r = PrevAction::Start;
    for col in &ap.columns {
        let chosen = match col.chosen.step() {
            Some(step) => {
                let ctx = context_for(task, ap.persona, pos_c, prev_c)?;
                pos_c += 1;
                prev_c = PrevAction::Action(step.action);
                Some(ctx)
            }
            None => None,
        };
        let rejected = match col.rejected.step() {
            Some(step) => {
                let ctx = context_for(task, ap.persona, pos_r, prev_r)?;
                pos_r += 1;
                prev_r = PrevAction::Action(step.action);
                Some(ctx)
            }
            None => None,
        };
        out.push(ColumnContexts { chosen, rejected });
    }
    Ok(out)
}

/// Step-level comparison score for one aligned column. Placeholder sides
/// contribute exactly 0 to each log-prob term.
pub fn step_z(
    params: &PolicyParams,
    reference: &PolicyParams,
    col: &AlignedColumn,
    ctxs: &ColumnContexts,
    beta: f64,
) -> Result<f64> {
    let term = |p: &PolicyParams,
                slot: &crate::align::AlignedSlot,
                ctx: &Option<StepContext>|
     -> Result<f64> {
        match (slot.step(), ctx) {
            (Some(step), Some(c)) => p.log_prob(c, step.action),
            (None, None) => Ok(0.0),
            _ => {
                Err(Error::Precondition("column context does not match slot occupancy".to_string()))
            }
        }
    };
    let lp_c = term(params, &col.chosen, &ctxs.chosen)?;
    let lp_r = term(params, &col.rejected, &ctxs.rejected)?;
    let ref_c = term(reference, &col.chosen, &ctxs.chosen)?;
    let ref_r = term(reference, &col.rejected, &ctxs.rejected)?;
    Ok(beta * ((lp_c - lp_r) - (ref_c - ref_r)))
}

/// Plain step-level DPO: every column weighs 1, padding included. Kept as
/// its own loop (not the weighted family with constants) so the
/// equivalence between the two routes is a real check.
pub fn step_dpo_batch(
    params: &PolicyParams,
    reference: &PolicyParams,
    tasks: &TaskMap,
    batch: &[&AlignedPair],
    cfg: &ObjectiveConfig,
) -> Result<BatchEval> {
    if batch.is_empty() {
        return Err(Error::Precondition("preference batch is empty".to_string()));
    }
    let n = batch.len() as f64;
    let mut grad = PolicyParams::zero_grad();
    let mut loss = 0.0;
    let mut mean_z = 0.0;
    for ap in batch {
        let task = get_task(tasks, &ap.task_id)?;
        let ctxs = column_contexts(task, ap)?;
        let t_norm = ap.len() as f64;
        for (col, cc) in ap.columns.iter().zip(&ctxs) {
            let z = step_z(params, reference, col, cc, cfg.beta)?;
            loss += softplus(-z) / (t_norm * n);
            mean_z += z / (t_norm * n);
            let coeff = sigmoid(-z) * cfg.beta / (t_norm * n);
            if let (Some(step), Some(ctx)) = (col.chosen.step(), &cc.chosen) {
                params.accumulate_log_prob_grad(ctx, step.action, -coeff, &mut grad)?;
            }
            if let (Some(step), Some(ctx)) = (col.rejected.step(), &cc.rejected) {
                params.accumulate_log_prob_grad(ctx, step.action, coeff, &mut grad)?;
            }
        }
    }
    Ok(BatchEval { loss, grad, mean_z })
}

/// The weighted, gated step family. `use_alpha`/`use_gate` switch the two
/// mechanisms independently so the ablations share one code path.
pub fn weighted_step_batch(
    params: &PolicyParams,
    reference: &PolicyParams,
    tasks: &TaskMap,
    batch: &[&AlignedPair],
    cfg: &ObjectiveConfig,
    use_alpha: bool,
    use_gate: bool,
) -> Result<BatchEval> {
    if batch.is_empty() {
        return Err(Error::Precondition("preference batch is empty".to_string()));
    }
    let n = batch.len() as f64;
    let mut grad = PolicyParams::zero_grad();
    let mut loss = 0.0;
    let mut mean_z = 0.0;
    for ap in batch {
        let task = get_task(tasks, &ap.task_id)?;
        let ctxs = column_contexts(task, ap)?;
        let t_norm = ap.len() as f64;
        for (col, cc) in ap.columns.iter().zip(&ctxs) {
            let m = if use_gate { padding_gate(col, cfg.gate_rejected) } else { 1.0 };
            let alpha = if use_alpha {
                intensity_weight(delta_score(col, ap.persona, &cfg.score) as f64, &cfg.score)
            } else {
                1.0
            };
            let weight = m * alpha;
            if weight == 0.0 {
                // z_hat is exactly 0: the column adds ln 2 to the loss and
                // nothing at all to the gradient.
                loss += std::f64::consts::LN_2 / (t_norm * n);
                continue;
            }
            let z = step_z(params, reference, col, cc, cfg.beta)?;
            let z_hat = weight * z;
            loss += softplus(-z_hat) / (t_norm * n);
            mean_z += z_hat / (t_norm * n);
            let coeff = sigmoid(-z_hat) * weight * cfg.beta / (t_norm * n);
            if let (Some(step), Some(ctx)) = (col.chosen.step(), &cc.chosen) {
                params.accumulate_log_prob_grad(ctx, step.action, -coeff, &mut grad)?;
            }
            if let (Some(step), Some(ctx)) = (col.rejected.step(), &cc.rejected) {
                params.accumulate_log_prob_grad(ctx, step.action, coeff, &mut grad)?;
            }
        }
    }
    Ok(BatchEval { loss, grad, mean_z })
}

/// Dispatches a step-level batch to the method's code path.
pub fn step_family_batch(
    params: &PolicyParams,
    reference: &PolicyParams,
    tasks: &TaskMap,
    batch: &[&AlignedPair],
    cfg: &ObjectiveConfig,
) -> Result<BatchEval> {
    match cfg.method {
        Method::StepDpo => step_dpo_batch(params, reference, tasks, batch, cfg),
        Method::Tipo | Method::TipoWoPw | Method::TipoWoPg => {
            let (use_alpha, use_gate) = cfg.method.weighting();
            weighted_step_batch(params, reference, tasks, batch, cfg, use_alpha, use_gate)
        }
        other => {
            Err(Error::Config(format!("method `{}` is not a step-level objective", other.label())))
        }
    }
}
