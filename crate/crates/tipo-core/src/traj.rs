//! Action vocabulary, trajectory schema and JSONL persistence.
//!
//! A trajectory is a flat list of UI steps executed for one task under one
//! persona. The action vocabulary is closed: 20 actions with fixed ids,
//! of which `no_action` is reserved for alignment padding and never
//! appears in raw trajectories.
//!
//! Step args are free string-to-string maps. Identity-relevant args
//! (`name`, `query`, `target`, `text`, `direction`, ...) describe what the
//! step acts on; coordinate args `x`/`y` are screen noise and are ignored
//! when steps are compared. Privacy category is a function of the action,
//! derived on demand and never stored.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed action vocabulary, in id order. `no_action` (id 19) is the
/// alignment placeholder and is masked out of the policy's output heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionType {
    OpenApp,
    Tap,
    TypeText,
    Scroll,
    Back,
    Search,
    Confirm,
    ReadPolicy,
    GrantPermission,
    DenyPermission,
    EnableIncognito,
    AcceptTracking,
    DeclineTracking,
    StayLoggedIn,
    Logout,
    ClearTraces,
    SaveLocal,
    SaveCloud,
    UseStoredInfo,
    NoAction,
}

pub const N_ACTIONS: usize = 20;

pub const ALL_ACTIONS: [ActionType; N_ACTIONS] = [
    ActionType::OpenApp,
    ActionType::Tap,
    ActionType::TypeText,
    ActionType::Scroll,
    ActionType::Back,
    ActionType::Search,
    ActionType::Confirm,
    ActionType::ReadPolicy,
    ActionType::GrantPermission,
    ActionType::DenyPermission,
    ActionType::EnableIncognito,
    ActionType::AcceptTracking,
    ActionType::DeclineTracking,
    ActionType::StayLoggedIn,
    ActionType::Logout,
    ActionType::ClearTraces,
    ActionType::SaveLocal,
    ActionType::SaveCloud,
    ActionType::UseStoredInfo,
    ActionType::NoAction,
];

impl ActionType {
    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<ActionType> {
        ALL_ACTIONS.get(id).copied()
    }

    /// Wire name, identical to the serde representation.
    pub fn name(self) -> &'static str {
        match self {
            ActionType::OpenApp => "open_app",
            ActionType::Tap => "tap",
            ActionType::TypeText => "type_text",
            ActionType::Scroll => "scroll",
            ActionType::Back => "back",
            ActionType::Search => "search",
            ActionType::Confirm => "confirm",
            ActionType::ReadPolicy => "read_policy",
            ActionType::GrantPermission => "grant_permission",
            ActionType::DenyPermission => "deny_permission",
            ActionType::EnableIncognito => "enable_incognito",
            ActionType::AcceptTracking => "accept_tracking",
            ActionType::DeclineTracking => "decline_tracking",
            ActionType::StayLoggedIn => "stay_logged_in",
            ActionType::Logout => "logout",
            ActionType::ClearTraces => "clear_traces",
            ActionType::SaveLocal => "save_local",
            ActionType::SaveCloud => "save_cloud",
            ActionType::UseStoredInfo => "use_stored_info",
            ActionType::NoAction => "no_action",
        }
    }

    /// Fixed action-to-category table. The match is exhaustive, so adding
    /// an action without categorizing it will not compile.
    pub fn category(self) -> PrivacyCategory {
        use ActionType::*;
        match self {
            ReadPolicy | DenyPermission | EnableIncognito | DeclineTracking | Logout
            | ClearTraces | SaveLocal => PrivacyCategory::Protective,
            GrantPermission | AcceptTracking | StayLoggedIn | SaveCloud | UseStoredInfo => {
                PrivacyCategory::Exposing
            }
            OpenApp | Tap | TypeText | Scroll | Back | Search | Confirm | NoAction => {
                PrivacyCategory::Neutral
            }
        }
    }
}

impl fmt::Display for ActionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActionType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        ALL_ACTIONS
            .iter()
            .copied()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown action `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrivacyCategory {
    Protective,
    Exposing,
    Neutral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Persona {
    PrivacyFirst,
    UtilityFirst,
}

impl Persona {
    pub fn opposite(self) -> Persona {
        match self {
            Persona::PrivacyFirst => Persona::UtilityFirst,
            Persona::UtilityFirst => Persona::PrivacyFirst,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Persona::PrivacyFirst => 0,
            Persona::UtilityFirst => 1,
        }
    }

    pub const BOTH: [Persona; 2] = [Persona::PrivacyFirst, Persona::UtilityFirst];
}

impl fmt::Display for Persona {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Persona::PrivacyFirst => f.write_str("privacy_first"),
            Persona::UtilityFirst => f.write_str("utility_first"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskCategory {
    BrowsingInteraction,
    AccountFile,
    Transactional,
}

impl TaskCategory {
    pub fn index(self) -> usize {
        match self {
            TaskCategory::BrowsingInteraction => 0,
            TaskCategory::AccountFile => 1,
            TaskCategory::Transactional => 2,
        }
    }

    pub const ALL: [TaskCategory; 3] =
        [TaskCategory::BrowsingInteraction, TaskCategory::AccountFile, TaskCategory::Transactional];

    pub fn label(self) -> &'static str {
        match self {
            TaskCategory::BrowsingInteraction => "browsing_interaction",
            TaskCategory::AccountFile => "account_file",
            TaskCategory::Transactional => "transactional",
        }
    }
}

/// One UI step. `args` is ordered so serialized output is stable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    pub action: ActionType,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub args: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub desc: String,
}

impl Step {
    pub fn new(index: usize, action: ActionType) -> Step {
        Step { index, action, args: BTreeMap::new(), desc: String::new() }
    }

    pub fn with_arg(mut self, key: &str, value: &str) -> Step {
        self.args.insert(key.to_string(), value.to_string());
        self
    }

    pub fn with_desc(mut self, desc: &str) -> Step {
        self.desc = desc.to_string();
        self
    }

    pub fn category(&self) -> PrivacyCategory {
        self.action.category()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub persona: Persona,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn actions(&self) -> Vec<ActionType> {
        self.steps.iter().map(|s| s.action).collect()
    }
}

/// Collects every violation instead of stopping at the first, so data
/// problems can be reported in one pass.
pub fn validate_trajectory(t: &Trajectory) -> Vec<String> {
    let mut violations = Vec::new();
    if t.steps.is_empty() {
        violations.push(format!("{}/{}: trajectory has no steps", t.task_id, t.persona));
    }
    for (i, step) in t.steps.iter().enumerate() {
        if step.action == ActionType::NoAction {
            violations.push(format!(
                "{}/{} step {}: no_action is reserved for alignment padding",
                t.task_id, t.persona, i
            ));
        }
        if step.index != i {
            violations.push(format!(
                "{}/{} step {}: index {} not contiguous from 0",
                t.task_id, t.persona, i, step.index
            ));
        }
    }
    violations
}

pub fn ensure_valid(t: &Trajectory) -> Result<()> {
    let v = validate_trajectory(t);
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::Data(v.join("; ")))
    }
}

/// A persona-labeled preference over the two branches of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub task_id: String,
    pub persona: Persona,
    pub chosen: Trajectory,
    pub rejected: Trajectory,
}

impl PreferencePair {
    pub fn validate(&self) -> Result<()> {
        if self.chosen.task_id != self.task_id || self.rejected.task_id != self.task_id {
            return Err(Error::Data(format!(
                "pair {}: branch task ids do not match",
                self.task_id
            )));
        }
        if self.chosen.persona != self.persona {
            return Err(Error::Data(format!(
                "pair {}/{}: chosen branch carries persona {}",
                self.task_id, self.persona, self.chosen.persona
            )));
        }
        if self.rejected.persona != self.persona.opposite() {
            return Err(Error::Data(format!(
                "pair {}/{}: rejected branch carries persona {}",
                self.task_id, self.persona, self.rejected.persona
            )));
        }
        ensure_valid(&self.chosen)?;
        ensure_valid(&self.rejected)
    }
}

/// A point in the task backbone where the two personas take different
/// actions. `position` indexes into the backbone: the decision step is
/// inserted before backbone step `position`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionPoint {
    pub position: usize,
    pub protective_action: ActionType,
    pub exposing_action: ActionType,
    pub adds_epilogue: bool,
}

impl DecisionPoint {
    pub fn validate(&self) -> Result<()> {
        if self.protective_action.category() != PrivacyCategory::Protective {
            return Err(Error::Data(format!(
                "decision point: {} is not protective",
                self.protective_action
            )));
        }
        if self.exposing_action.category() != PrivacyCategory::Exposing {
            return Err(Error::Data(format!(
                "decision point: {} is not exposing",
                self.exposing_action
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub task_id: String,
    /// Goal template text, shared by all tasks cut from the same template.
    pub goal: String,
    pub category: TaskCategory,
    pub backbone_len: usize,
    pub decision_points: Vec<DecisionPoint>,
}

/// Task lookup by id, ordered for deterministic iteration.
pub type TaskMap = BTreeMap<String, TaskInstance>;

pub fn task_map(tasks: &[TaskInstance]) -> TaskMap {
    tasks.iter().map(|t| (t.task_id.clone(), t.clone())).collect()
}

pub fn get_task<'a>(tasks: &'a TaskMap, task_id: &str) -> Result<&'a TaskInstance> {
    tasks.get(task_id).ok_or_else(|| Error::Data(format!("unknown task id `{task_id}`")))
}

impl TaskInstance {
    pub fn validate(&self) -> Result<()> {
        if self.decision_points.is_empty() {
            return Err(Error::Data(format!("task {}: no decision points", self.task_id)));
        }
        if self.backbone_len == 0 {
            return Err(Error::Data(format!("task {}: empty backbone", self.task_id)));
        }
        for dp in &self.decision_points {
            dp.validate()?;
            if dp.position == 0 || dp.position > self.backbone_len {
                return Err(Error::Data(format!(
                    "task {}: decision position {} outside backbone (len {})",
                    self.task_id, dp.position, self.backbone_len
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// JSONL persistence

/// Writes one JSON object per line. Works for any serializable record.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for rec in records {
        let line = serde_json::to_string(rec)
            .map_err(|e| Error::Data(format!("serialize failed: {e}")))?;
        out.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a JSONL file, reporting the 1-based line number of the first bad
/// line. Blank lines are skipped; an empty file yields an empty list.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| {
            let msg = e.to_string();
            match e.classify() {
                serde_json::error::Category::Data => {
                    Error::Schema { path: path.into(), line: i + 1, msg }
                }
                _ => Error::Parse { path: path.into(), line: i + 1, msg },
            }
        })?;
        records.push(rec);
    }
    Ok(records)
}

pub fn write_trajectories(path: &Path, trajs: &[Trajectory]) -> Result<()> {
    write_jsonl(path, trajs)
}

pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    let trajs: Vec<Trajectory> = read_jsonl(path)?;
    for t in &trajs {
        ensure_valid(t)?;
    }
    Ok(trajs)
}
