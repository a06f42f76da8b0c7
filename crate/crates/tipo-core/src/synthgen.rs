//! Seeded synthetic benchmark: persona-branching GUI tasks.
//!
//! Each task is a neutral backbone (open the app, search, tap, scroll...)
//! with one to three decision points where the two personas diverge: the
//! privacy-first branch takes the protective action, the utility-first
//! branch the exposing one. With some probability the privacy-first branch
//! additionally appends a short defensive epilogue (logout / clear traces),
//! which is what makes branch lengths differ. Both branches always end
//! with `confirm`.
//!
//! Generation is deterministic: every task draws from its own
//! ChaCha8 stream seeded from (seed, task index), so inserting or removing
//! tasks never shifts the randomness of the others. Step args and
//! descriptions are pure functions of (task, position, action), which lets
//! evaluation rebuild byte-identical steps for actions a policy picks at
//! rollout time.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traj::{
    ActionType, DecisionPoint, Persona, PreferencePair, Step, TaskCategory, TaskInstance,
    Trajectory,
};
use crate::util::{fnv1a64, seeded_rng, sub_seed, sub_seed_indexed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_tasks: usize,
    /// Relative weights for browsing/account-file/transactional tasks.
    pub category_mix: [f64; 3],
    pub backbone_len_range: [usize; 2],
    pub decision_points_range: [usize; 2],
    /// Chance that the privacy-first branch appends a defensive epilogue.
    pub epilogue_prob: f64,
    pub seed: u64,
    /// Train/val/test fractions over tasks.
    pub split: [f64; 3],
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_tasks: 150,
            category_mix: [1.0, 1.0, 1.0],
            backbone_len_range: [3, 7],
            decision_points_range: [1, 3],
            epilogue_prob: 0.6,
            seed: 0,
            split: [0.6, 0.1, 0.3],
        }
    }
}

impl GenConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_n_tasks(mut self, n: usize) -> Self {
        self.n_tasks = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tasks == 0 {
            return Err(Error::Config("n_tasks must be at least 1".to_string()));
        }
        if self.category_mix.iter().any(|&w| !w.is_finite() || w < 0.0)
            || self.category_mix.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::Config(format!(
                "category_mix must be non-negative with positive sum, got {:?}",
                self.category_mix
            )));
        }
        let [blo, bhi] = self.backbone_len_range;
        if blo < 2 || bhi < blo {
            return Err(Error::Config(format!(
                "backbone_len_range must satisfy 2 <= lo <= hi, got [{blo}, {bhi}]"
            )));
        }
        let [dlo, dhi] = self.decision_points_range;
        if dlo < 1 || dhi < dlo {
            return Err(Error::Config(format!(
                "decision_points_range must satisfy 1 <= lo <= hi, got [{dlo}, {dhi}]"
            )));
        }
        if !(0.0..=1.0).contains(&self.epilogue_prob) {
            return Err(Error::Config(format!(
                "epilogue_prob must lie in [0, 1], got {}",
                self.epilogue_prob
            )));
        }
        if self.split.iter().any(|&f| !f.is_finite() || f < 0.0)
            || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!(
                "split fractions must be non-negative and sum to 1, got {:?}",
                self.split
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Goal phrasings grouped by the decision flavor a task exercises, so the
/// goal text carries which privacy decision the flow will hit (the way "on
/// the shared tablet" implies a logout at the end). Texts within a group
/// are picked to share one goal-id hash bin, distinct across groups, so the
/// featurized policy can read that signal from the goal feature alone.
/// Indexed by the task's position in `decision_pool(category)`.
fn goal_templates(category: TaskCategory, pair_idx: usize) -> &'static [&'static str] {
    match (category, pair_idx) {
        (TaskCategory::BrowsingInteraction, 0) => &[
            "Watch a product review video in a private window",
            "Browse the photography feed quietly",
        ],
        (TaskCategory::BrowsingInteraction, 1) => &[
            "Look up the score of last night's match",
            "Find a nearby coffee shop on the map",
            "Browse new arrivals at the outdoor store",
        ],
        (TaskCategory::BrowsingInteraction, _) => &[
            "Join the beta program from the landing page",
            "Redeem the trial offer on the pricing page",
        ],
        (TaskCategory::AccountFile, 0) => {
            &["Download the signed lease document", "Archive last month's invoices"]
        }
        (TaskCategory::AccountFile, 1) => &[
            "Check the inbox on the shared tablet",
            "Print the ticket from the lobby computer",
            "Check loyalty points on the store terminal",
            "Look up the order status on a shared device",
        ],
        (TaskCategory::AccountFile, _) => {
            &["Update the account recovery email", "Share the meeting notes with the team"]
        }
        (TaskCategory::Transactional, 0) => &[
            "Buy a movie ticket",
            "Order a replacement phone case",
            "Order a desk lamp for the study",
        ],
        (TaskCategory::Transactional, 1) => {
            &["Settle the water bill", "Pay the gym membership fee"]
        }
        (TaskCategory::Transactional, _) => {
            &["Redeem the seasonal discount code", "Request an invoice for the last order"]
        }
    }
}

const APPS: [(TaskCategory, &[&str]); 3] = [
    (TaskCategory::BrowsingInteraction, &["browser", "newsreel", "cliptube", "mapgo", "feedly"]),
    (TaskCategory::AccountFile, &["cloudbox", "notekeeper", "photovault", "docsafe"]),
    (TaskCategory::Transactional, &["shopcart", "quickpay", "ridehail", "tablely"]),
];

const PERMISSIONS: [&str; 5] = ["location", "contacts", "camera", "microphone", "notifications"];

const FILES: [&str; 5] = ["lease.pdf", "photos 2025", "notes.md", "invoices q2", "contacts.vcf"];

const QUERIES: [&str; 6] = [
    "usb c cable",
    "weekend weather",
    "coffee near me",
    "meeting notes",
    "electricity bill",
    "movie times",
];

const TEXTS: [&str; 4] = ["guest", "table for two", "home address", "promo code"];

/// Persona-divergent action pairs per category (protective, exposing).
fn decision_pool(category: TaskCategory) -> &'static [(ActionType, ActionType)] {
    use ActionType::*;
    match category {
        TaskCategory::BrowsingInteraction => &[
            (EnableIncognito, AcceptTracking),
            (DeclineTracking, AcceptTracking),
            (ReadPolicy, AcceptTracking),
        ],
        TaskCategory::AccountFile => {
            &[(SaveLocal, SaveCloud), (Logout, StayLoggedIn), (DenyPermission, GrantPermission)]
        }
        TaskCategory::Transactional => &[
            (DenyPermission, GrantPermission),
            (ClearTraces, UseStoredInfo),
            (DeclineTracking, AcceptTracking),
        ],
    }
}

/// Per-category filler cycle for backbone positions after `open_app`.
/// Each cycle visits distinct actions with distinct successors, so the
/// backbone flow of a category is a fixed, learnable routine (the way a
/// real app funnels every task through the same screens); what varies per
/// task is length, decision placement, and step arguments.
fn neutral_fillers(category: TaskCategory) -> &'static [ActionType] {
    use ActionType::*;
    // Confirm is reserved for the terminal step.
    match category {
        TaskCategory::BrowsingInteraction => &[Search, Scroll, Tap, Back],
        TaskCategory::AccountFile => &[TypeText, Tap, Search, Scroll],
        TaskCategory::Transactional => &[Search, TypeText, Tap, Scroll],
    }
}

fn pick<'a>(pool: &'a [&'a str], task_id: &str, salt: &str) -> &'a str {
    let h = fnv1a64(format!("{task_id}/{salt}").as_bytes());
    pool[(h % pool.len() as u64) as usize]
}

fn app_name(task: &TaskInstance) -> &'static str {
    let pool = APPS.iter().find(|(c, _)| *c == task.category).unwrap().1;
    pick(pool, &task.task_id, "app")
}

/// Materializes a step for `action` at `position` of `task`. Identity args
/// depend only on (task, action); coordinates depend on the position and
/// are ignored by step matching.
pub fn realize_step(task: &TaskInstance, position: usize, action: ActionType) -> Step {
    let id = &task.task_id;
    let coord = |salt: &str| {
        let h = fnv1a64(format!("{id}/{position}/{salt}").as_bytes());
        (120 + h % 840, 180 + (h >> 20) % 1600)
    };
    let step = Step::new(position, action);
    match action {
        ActionType::OpenApp => {
            let app = app_name(task);
            step.with_arg("name", app).with_desc(&format!("open the {app} app"))
        }
        ActionType::Tap => {
            let (x, y) = coord("tap");
            step.with_arg("x", &x.to_string())
                .with_arg("y", &y.to_string())
                .with_desc("tap the highlighted control")
        }
        ActionType::TypeText => {
            let text = pick(&TEXTS, id, "text");
            step.with_arg("text", text).with_desc(&format!("type \"{text}\" into the field"))
        }
        ActionType::Scroll => step.with_arg("direction", "down").with_desc("scroll down the page"),
        ActionType::Back => step.with_desc("go back to the previous screen"),
        ActionType::Search => {
            let q = pick(&QUERIES, id, "query");
            step.with_arg("query", q).with_desc(&format!("search for {q}"))
        }
        ActionType::Confirm => step.with_desc("confirm and finish the task"),
        ActionType::ReadPolicy => step
            .with_arg("target", "privacy policy")
            .with_desc("open and read the privacy policy first"),
        ActionType::GrantPermission => {
            let p = pick(&PERMISSIONS, id, "perm");
            step.with_arg("target", &format!("{p} permission"))
                .with_desc(&format!("grant the {p} permission request"))
        }
        ActionType::DenyPermission => {
            let p = pick(&PERMISSIONS, id, "perm");
            step.with_arg("target", &format!("{p} permission"))
                .with_desc(&format!("deny the {p} permission request"))
        }
        ActionType::EnableIncognito => step
            .with_arg("target", "incognito mode")
            .with_desc("switch to incognito before browsing"),
        ActionType::AcceptTracking => step
            .with_arg("target", "tracking banner")
            .with_desc("accept the personalization banner"),
        ActionType::DeclineTracking => step
            .with_arg("target", "tracking banner")
            .with_desc("decline the personalization banner"),
        ActionType::StayLoggedIn => {
            step.with_arg("target", "account session").with_desc("keep the account signed in")
        }
        ActionType::Logout => {
            step.with_arg("target", "account session").with_desc("log out of the account")
        }
        ActionType::ClearTraces => {
            step.with_arg("target", "local traces").with_desc("clear locally stored traces")
        }
        ActionType::SaveLocal => {
            let f = pick(&FILES, id, "file");
            step.with_arg("target", f).with_desc(&format!("save {f} to this device only"))
        }
        ActionType::SaveCloud => {
            let f = pick(&FILES, id, "file");
            step.with_arg("target", f).with_desc(&format!("upload {f} to cloud sync"))
        }
        ActionType::UseStoredInfo => step
            .with_arg("target", "stored payment profile")
            .with_desc("reuse the stored payment profile"),
        ActionType::NoAction => step,
    }
}

/// One task plus its two reference branches.
#[derive(Debug, Clone)]
pub struct GeneratedTask {
    pub task: TaskInstance,
    pub privacy_first: Trajectory,
    pub utility_first: Trajectory,
}

fn weighted_category(rng: &mut impl Rng, mix: &[f64; 3]) -> TaskCategory {
    let total: f64 = mix.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, &w) in mix.iter().enumerate() {
        if u < w || i == 2 {
            return TaskCategory::ALL[i];
        }
        u -= w;
    }
    TaskCategory::Transactional
}

fn generate_task(cfg: &GenConfig, index: usize) -> GeneratedTask {
    let mut rng = seeded_rng(sub_seed_indexed(cfg.seed, "task", index as u64));
    let task_id = format!("task_{index:04}");
    let category = weighted_category(&mut rng, &cfg.category_mix);

    // One decision flavor per task: a flow that hits a permission dialog
    // tends to hit it at every gate, and the goal text advertises which
    // flavor this flow is.
    let pool = decision_pool(category);
    let pair_idx = rng.gen_range(0..pool.len());
    let templates = goal_templates(category, pair_idx);
    let goal = (*templates.choose(&mut rng).unwrap()).to_string();

    let [blo, bhi] = cfg.backbone_len_range;
    let backbone_len = rng.gen_range(blo..=bhi);
    let fillers = neutral_fillers(category);
    let mut backbone = Vec::with_capacity(backbone_len);
    backbone.push(ActionType::OpenApp);
    for i in 1..backbone_len {
        backbone.push(fillers[(i - 1) % fillers.len()]);
    }

    let [dlo, dhi] = cfg.decision_points_range;
    let n_dp = rng.gen_range(dlo..=dhi).min(backbone_len);
    let mut candidates: Vec<usize> = (1..=backbone_len).collect();
    candidates.shuffle(&mut rng);
    // Decision gates are separated by at least one plain step, as real flows
    // space their dialogs; this also keeps references free of back-to-back
    // repeats of one action, which a greedy policy would latch onto.
    let mut positions: Vec<usize> = Vec::with_capacity(n_dp);
    for p in candidates {
        if positions.len() == n_dp {
            break;
        }
        if positions.iter().all(|&q| p.abs_diff(q) >= 2) {
            positions.push(p);
        }
    }
    positions.sort_unstable();

    let has_epilogue = rng.gen_bool(cfg.epilogue_prob);
    let (protective_action, exposing_action) = pool[pair_idx];
    let decision_points: Vec<DecisionPoint> = positions
        .iter()
        .enumerate()
        .map(|(k, &position)| DecisionPoint {
            position,
            protective_action,
            exposing_action,
            adds_epilogue: has_epilogue && k == positions.len() - 1,
        })
        .collect();

    let epilogue: Vec<ActionType> = if has_epilogue {
        if rng.gen_range(1..=2) == 2 {
            vec![ActionType::Logout, ActionType::ClearTraces]
        } else if rng.gen_bool(0.5) {
            vec![ActionType::ClearTraces]
        } else {
            vec![ActionType::Logout]
        }
    } else {
        Vec::new()
    };

    let task =
        TaskInstance { task_id: task_id.clone(), goal, category, backbone_len, decision_points };

    let mut pf_actions = Vec::new();
    let mut uf_actions = Vec::new();
    // Walk the backbone slots plus one trailing slot: a decision at
    // position i fires before backbone step i, so position == backbone_len
    // means a decision after the final backbone step.
    for (i, slot) in backbone.iter().map(Some).chain([None]).enumerate() {
        for dp in &task.decision_points {
            if dp.position == i {
                pf_actions.push(dp.protective_action);
                uf_actions.push(dp.exposing_action);
            }
        }
        if let Some(&action) = slot {
            pf_actions.push(action);
            uf_actions.push(action);
        }
    }
    pf_actions.extend(&epilogue);
    pf_actions.push(ActionType::Confirm);
    uf_actions.push(ActionType::Confirm);

    let realize = |persona: Persona, actions: &[ActionType]| Trajectory {
        task_id: task_id.clone(),
        persona,
        steps: actions.iter().enumerate().map(|(t, &a)| realize_step(&task, t, a)).collect(),
    };

    GeneratedTask {
        privacy_first: realize(Persona::PrivacyFirst, &pf_actions),
        utility_first: realize(Persona::UtilityFirst, &uf_actions),
        task,
    }
}

/// Emits both persona preferences for each task: the persona-matching
/// branch is chosen, the other rejected.
pub fn build_preference_pairs(generated: &[GeneratedTask]) -> Vec<PreferencePair> {
    let mut pairs = Vec::with_capacity(generated.len() * 2);
    for g in generated {
        pairs.push(PreferencePair {
            task_id: g.task.task_id.clone(),
            persona: Persona::PrivacyFirst,
            chosen: g.privacy_first.clone(),
            rejected: g.utility_first.clone(),
        });
        pairs.push(PreferencePair {
            task_id: g.task.task_id.clone(),
            persona: Persona::UtilityFirst,
            chosen: g.utility_first.clone(),
            rejected: g.privacy_first.clone(),
        });
    }
    pairs
}

fn assign_splits(cfg: &GenConfig, task_ids: &[String]) -> Result<SplitAssignment> {
    let n = task_ids.len();
    let n_train = (n as f64 * cfg.split[0]).round() as usize;
    let n_val = (n as f64 * cfg.split[1]).round() as usize;
    if n_train + n_val > n {
        return Err(Error::Config(format!(
            "split fractions {:?} leave no room for a test set over {n} tasks",
            cfg.split
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeded_rng(sub_seed(cfg.seed, "split"));
    order.shuffle(&mut rng);
    let take = |k: usize, from: &mut std::vec::IntoIter<usize>| -> Vec<String> {
        let mut ids: Vec<String> = from.by_ref().take(k).map(|i| task_ids[i].clone()).collect();
        ids.sort();
        ids
    };
    let mut it = order.into_iter();
    let train = take(n_train, &mut it);
    let val = take(n_val, &mut it);
    let test = take(n - n_train - n_val, &mut it);
    Ok(SplitAssignment { train, val, test })
}

/// Full synthetic dataset for one seed.
#[derive(Debug, Clone)]
pub struct GenOutput {
    pub tasks: Vec<TaskInstance>,
    pub trajectories: Vec<Trajectory>,
    pub pairs: Vec<PreferencePair>,
    pub splits: SplitAssignment,
}

pub fn generate(cfg: &GenConfig) -> Result<GenOutput> {
    cfg.validate()?;
    let generated: Vec<GeneratedTask> = (0..cfg.n_tasks).map(|i| generate_task(cfg, i)).collect();

    let mut tasks = Vec::with_capacity(generated.len());
    let mut trajectories = Vec::with_capacity(generated.len() * 2);
    for g in &generated {
        g.task.validate()?;
        crate::traj::ensure_valid(&g.privacy_first)?;
        crate::traj::ensure_valid(&g.utility_first)?;
        tasks.push(g.task.clone());
        trajectories.push(g.privacy_first.clone());
        trajectories.push(g.utility_first.clone());
    }
    let pairs = build_preference_pairs(&generated);
    for p in &pairs {
        p.validate()?;
    }
    let task_ids: Vec<String> = tasks.iter().map(|t| t.task_id.clone()).collect();
    let splits = assign_splits(cfg, &task_ids)?;
    Ok(GenOutput { tasks, trajectories, pairs, splits })
}
