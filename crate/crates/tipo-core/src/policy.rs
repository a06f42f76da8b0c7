//! Featurized log-linear action policy.
//!
//! A step context is embedded as six one-hot blocks (persona, task
//! category, goal bin, step bucket, previous action, persona x previous
//! action), 96 features total. The policy is a single weight matrix
//! W[feature, action]; logits are sums of the six active rows and the
//! distribution is a softmax over the 19 live heads. The `no_action` head
//! exists in the matrix for layout stability but is masked: it can never
//! be scored, sampled or updated.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::traj::{ActionType, Persona, TaskCategory, TaskInstance, Trajectory, N_ACTIONS};
use crate::util::fnv1a64;

pub const GOAL_BINS: usize = 16;
pub const STEP_BUCKETS: usize = 12;
/// Previous-action slots: the 20 actions plus a distinguished START.
pub const PREV_SLOTS: usize = N_ACTIONS + 1;
pub const N_FEATURES: usize = 2 + 3 + GOAL_BINS + STEP_BUCKETS + PREV_SLOTS + 2 * PREV_SLOTS;
pub const N_PARAMS: usize = N_FEATURES * N_ACTIONS;
pub const FEATURE_TEMPLATE_VERSION: u32 = 1;

const MASKED: usize = ActionType::NoAction as usize;
pub const N_LIVE_ACTIONS: usize = N_ACTIONS - 1;

const OFF_PERSONA: usize = 0;
const OFF_CATEGORY: usize = 2;
const OFF_GOAL: usize = 5;
const OFF_BUCKET: usize = 5 + GOAL_BINS;
const OFF_PREV: usize = OFF_BUCKET + STEP_BUCKETS;
const OFF_CROSS: usize = OFF_PREV + PREV_SLOTS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PrevAction {
    Start,
    Action(ActionType),
}

impl PrevAction {
    pub fn index(self) -> usize {
        match self {
            PrevAction::Start => N_ACTIONS,
            PrevAction::Action(a) => a.id(),
        }
    }
}

/// Everything the policy can see when choosing the next action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StepContext {
    pub persona: Persona,
    pub category: TaskCategory,
    pub goal_id: usize,
    pub step_index_bucket: usize,
    pub prev_action: PrevAction,
}

impl StepContext {
    pub fn new(
        persona: Persona,
        category: TaskCategory,
        goal_id: usize,
        position: usize,
        prev_action: PrevAction,
    ) -> Result<StepContext> {
        if goal_id >= GOAL_BINS {
            return Err(Error::Precondition(format!(
                "goal_id {goal_id} out of range [0, {GOAL_BINS})"
            )));
        }
        Ok(StepContext {
            persona,
            category,
            goal_id,
            step_index_bucket: position.min(STEP_BUCKETS - 1),
            prev_action,
        })
    }
}

/// Stable goal bin for a task: templated goal text hashed into [0, GOAL_BINS).
pub fn goal_id(task: &TaskInstance) -> usize {
    (fnv1a64(task.goal.as_bytes()) % GOAL_BINS as u64) as usize
}

/// Context for step `position` of `task` under `persona`, given the
/// previous action taken.
pub fn context_for(
    task: &TaskInstance,
    persona: Persona,
    position: usize,
    prev_action: PrevAction,
) -> Result<StepContext> {
    StepContext::new(persona, task.category, goal_id(task), position, prev_action)
}

/// Contexts for scoring an action sequence step by step from the start.
pub fn sequence_contexts(
    task: &TaskInstance,
    persona: Persona,
    actions: &[ActionType],
) -> Result<Vec<StepContext>> {
    let mut prev = PrevAction::Start;
    let mut out = Vec::with_capacity(actions.len());
    for (t, &a) in actions.iter().enumerate() {
        out.push(context_for(task, persona, t, prev)?);
        prev = PrevAction::Action(a);
    }
    Ok(out)
}

/// The six active feature indices for a context, one per block.
pub fn featurize(ctx: &StepContext) -> Result<[usize; 6]> {
    if ctx.goal_id >= GOAL_BINS {
        return Err(Error::Precondition(format!(
            "goal_id {} out of range [0, {GOAL_BINS})",
            ctx.goal_id
        )));
    }
    if ctx.step_index_bucket >= STEP_BUCKETS {
        return Err(Error::Precondition(format!(
            "step bucket {} out of range [0, {STEP_BUCKETS})",
            ctx.step_index_bucket
        )));
    }
    let p = ctx.persona.index();
    let prev = ctx.prev_action.index();
    Ok([
        OFF_PERSONA + p,
        OFF_CATEGORY + ctx.category.index(),
        OFF_GOAL + ctx.goal_id,
        OFF_BUCKET + ctx.step_index_bucket,
        OFF_PREV + prev,
        OFF_CROSS + p * PREV_SLOTS + prev,
    ])
}

/// Log-softmax over the live heads for raw weights. Exposed at slice level
/// so finite-difference checks can evaluate without rebuilding params.
pub fn log_prob_raw(w: &[f64], active: &[usize; 6], action: ActionType) -> f64 {
    debug_assert_eq!(w.len(), N_PARAMS);
    let mut logits = [0.0f64; N_ACTIONS];
    for &row in active {
        let base = row * N_ACTIONS;
        for (k, l) in logits.iter_mut().enumerate() {
            *l += w[base + k];
        }
    }
    let mut max = f64::NEG_INFINITY;
    for (k, &l) in logits.iter().enumerate() {
        if k != MASKED && l > max {
            max = l;
        }
    }
    let mut sum = 0.0;
    for (k, &l) in logits.iter().enumerate() {
        if k != MASKED {
            sum += (l - max).exp();
        }
    }
    logits[action.id()] - (max + sum.ln())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub w: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros() -> PolicyParams {
        PolicyParams { w: vec![0.0; N_PARAMS] }
    }

    pub fn from_w(w: Vec<f64>) -> Result<PolicyParams> {
        if w.len() != N_PARAMS {
            return Err(Error::Config(format!(
                "weight vector has {} entries, expected {N_PARAMS}",
                w.len()
            )));
        }
        Ok(PolicyParams { w })
    }

    /// Deep copy for use as a frozen reference policy.
    pub fn clone_frozen(&self) -> PolicyParams {
        self.clone()
    }

    pub fn log_prob(&self, ctx: &StepContext, action: ActionType) -> Result<f64> {
        if action == ActionType::NoAction {
            return Err(Error::Precondition(
                "no_action is masked and cannot be scored".to_string(),
            ));
        }
        let active = featurize(ctx)?;
        Ok(log_prob_raw(&self.w, &active, action))
    }

    /// Probabilities over the live heads (masked head always 0).
    pub fn probs(&self, ctx: &StepContext) -> Result<[f64; N_ACTIONS]> {
        let active = featurize(ctx)?;
        let mut logits = [0.0f64; N_ACTIONS];
        for &row in &active {
            let base = row * N_ACTIONS;
            for (k, l) in logits.iter_mut().enumerate() {
                *l += self.w[base + k];
            }
        }
        let mut max = f64::NEG_INFINITY;
        for (k, &l) in logits.iter().enumerate() {
            if k != MASKED && l > max {
                max = l;
            }
        }
        let mut sum = 0.0;
        let mut probs = [0.0f64; N_ACTIONS];
        for (k, &l) in logits.iter().enumerate() {
            if k != MASKED {
                probs[k] = (l - max).exp();
                sum += probs[k];
            }
        }
        for (k, p) in probs.iter_mut().enumerate() {
            if k != MASKED {
                *p /= sum;
            }
        }
        Ok(probs)
    }

    /// Greedy argmax over live heads; ties resolve to the lowest action id.
    pub fn greedy_action(&self, ctx: &StepContext) -> Result<ActionType> {
        let probs = self.probs(ctx)?;
        let mut best = 0usize;
        for k in 1..N_ACTIONS {
            if k != MASKED && probs[k] > probs[best] {
                best = k;
            }
        }
        Ok(ActionType::from_id(best).unwrap())
    }

    /// Adds `coeff * d log pi(action | ctx) / dW` into `grad`. Only the six
    /// active feature rows are touched; the masked head never moves.
    pub fn accumulate_log_prob_grad(
        &self,
        ctx: &StepContext,
        action: ActionType,
        coeff: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        if action == ActionType::NoAction {
            return Err(Error::Precondition(
                "no_action is masked and cannot be scored".to_string(),
            ));
        }
        debug_assert_eq!(grad.len(), N_PARAMS);
        let active = featurize(ctx)?;
        let probs = self.probs(ctx)?;
        let a = action.id();
        for &row in &active {
            let base = row * N_ACTIONS;
            for (k, &p) in probs.iter().enumerate() {
                if k == MASKED {
                    continue;
                }
                let indicator = if k == a { 1.0 } else { 0.0 };
                grad[base + k] += coeff * (indicator - p);
            }
        }
        Ok(())
    }

    /// Sum of step log-probabilities of a trajectory under this policy.
    pub fn traj_log_prob(
        &self,
        task: &TaskInstance,
        persona: Persona,
        traj: &Trajectory,
    ) -> Result<f64> {
        if traj.is_empty() {
            return Err(Error::Precondition(format!(
                "cannot score empty trajectory for task {}",
                traj.task_id
            )));
        }
        let actions = traj.actions();
        let contexts = sequence_contexts(task, persona, &actions)?;
        let mut total = 0.0;
        for (ctx, &a) in contexts.iter().zip(&actions) {
            total += self.log_prob(ctx, a)?;
        }
        Ok(total)
    }

    pub fn zero_grad() -> Vec<f64> {
        vec![0.0; N_PARAMS]
    }

    /// Plain SGD step: w -= lr * grad.
    pub fn apply_gradient(&mut self, grad: &[f64], lr: f64) {
        debug_assert_eq!(grad.len(), N_PARAMS);
        for (w, g) in self.w.iter_mut().zip(grad) {
            *w -= lr * g;
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    f: usize,
    n_actions: usize,
    feature_template_version: u32,
    /// Row-major by feature: w[f * n_actions + a].
    w: Vec<f64>,
}

pub fn save_checkpoint(path: &Path, params: &PolicyParams) -> Result<()> {
    let file = CheckpointFile {
        f: N_FEATURES,
        n_actions: N_ACTIONS,
        feature_template_version: FEATURE_TEMPLATE_VERSION,
        w: params.w.clone(),
    };
    let json = serde_json::to_string(&file)
        .map_err(|e| Error::Data(format!("serialize checkpoint: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile = serde_json::from_slice(&bytes).map_err(|e| Error::Schema {
        path: path.into(),
        line: 1,
        msg: e.to_string(),
    })?;
    if file.feature_template_version != FEATURE_TEMPLATE_VERSION {
        return Err(Error::Data(format!(
            "checkpoint feature template v{} incompatible with v{FEATURE_TEMPLATE_VERSION}",
            file.feature_template_version
        )));
    }
    if file.f != N_FEATURES || file.n_actions != N_ACTIONS {
        return Err(Error::Data(format!(
            "checkpoint dims {}x{} incompatible with {N_FEATURES}x{N_ACTIONS}",
            file.f, file.n_actions
        )));
    }
    PolicyParams::from_w(file.w)
}
