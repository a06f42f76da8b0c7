//! On-disk dataset layout and split bookkeeping.
//!
//! A dataset directory holds four files:
//! - `tasks.jsonl` - one task definition per line
//! - `trajectories.jsonl` - both persona branches for every task
//! - `pairs.jsonl` - preference pairs (chosen/rejected per persona)
//! - `splits.json` - train/val/test task-id lists
//!
//! Loading validates everything and cross-checks that the splits are a
//! disjoint cover of the task set, so downstream code can trust that a
//! test task never leaks training data.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::synthgen::{GenOutput, SplitAssignment};
use crate::traj::{read_jsonl, write_jsonl, Persona, PreferencePair, TaskInstance, Trajectory};

pub const TASKS_FILE: &str = "tasks.jsonl";
pub const TRAJECTORIES_FILE: &str = "trajectories.jsonl";
pub const PAIRS_FILE: &str = "pairs.jsonl";
pub const SPLITS_FILE: &str = "splits.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => {
                Err(Error::Config(format!("unknown split {other:?}; expected train, val, or test")))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub tasks: Vec<TaskInstance>,
    pub trajectories: Vec<Trajectory>,
    pub pairs: Vec<PreferencePair>,
    pub splits: SplitAssignment,
}

impl Dataset {
    pub fn from_gen(out: GenOutput) -> Dataset {
        Dataset {
            tasks: out.tasks,
            trajectories: out.trajectories,
            pairs: out.pairs,
            splits: out.splits,
        }
    }

    pub fn task_map(&self) -> BTreeMap<String, &TaskInstance> {
        self.tasks.iter().map(|t| (t.task_id.clone(), t)).collect()
    }

    pub fn split_ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.splits.train,
            Split::Val => &self.splits.val,
            Split::Test => &self.splits.test,
        }
    }

    /// Tasks of one split, ordered by task id.
    pub fn split_tasks(&self, split: Split) -> Vec<&TaskInstance> {
        let ids: BTreeSet<&String> = self.split_ids(split).iter().collect();
        let mut tasks: Vec<&TaskInstance> =
            self.tasks.iter().filter(|t| ids.contains(&t.task_id)).collect();
        tasks.sort_by(|a, b| a.task_id.cmp(&b.task_id));
        tasks
    }

    pub fn split_pairs(&self, split: Split) -> Vec<&PreferencePair> {
        let ids: BTreeSet<&String> = self.split_ids(split).iter().collect();
        self.pairs.iter().filter(|p| ids.contains(&p.task_id)).collect()
    }

    pub fn split_trajectories(&self, split: Split) -> Vec<&Trajectory> {
        let ids: BTreeSet<&String> = self.split_ids(split).iter().collect();
        self.trajectories.iter().filter(|t| ids.contains(&t.task_id)).collect()
    }

    /// The reference branch for (task, persona); errors when absent.
    pub fn reference(&self, task_id: &str, persona: Persona) -> Result<&Trajectory> {
        self.trajectories
            .iter()
            .find(|t| t.task_id == task_id && t.persona == persona)
            .ok_or_else(|| Error::Data(format!("no reference trajectory for {task_id}/{persona}")))
    }

    /// Confirms the splits partition the task set: pairwise disjoint and
    /// jointly covering, with no unknown ids.
    pub fn check_split_hygiene(&self) -> Result<()> {
        let all_tasks: BTreeSet<&str> = self.tasks.iter().map(|t| t.task_id.as_str()).collect();
        let mut seen: BTreeMap<&str, Split> = BTreeMap::new();
        for split in Split::ALL {
            for id in self.split_ids(split) {
                if !all_tasks.contains(id.as_str()) {
                    return Err(Error::Data(format!(
                        "split {} lists unknown task {id}",
                        split.name()
                    )));
                }
                if let Some(prev) = seen.insert(id.as_str(), split) {
                    return Err(Error::Data(format!(
                        "task {id} appears in both {} and {}",
                        prev.name(),
                        split.name()
                    )));
                }
            }
        }
        if seen.len() != all_tasks.len() {
            let missing: Vec<&str> =
                all_tasks.iter().filter(|id| !seen.contains_key(**id)).copied().collect();
            return Err(Error::Data(format!(
                "{} task(s) assigned to no split: {}",
                missing.len(),
                missing.join(", ")
            )));
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let all_tasks: BTreeSet<&str> = self.tasks.iter().map(|t| t.task_id.as_str()).collect();
        for task in &self.tasks {
            task.validate()?;
        }
        for traj in &self.trajectories {
            crate::traj::ensure_valid(traj)?;
            if !all_tasks.contains(traj.task_id.as_str()) {
                return Err(Error::Data(format!(
                    "trajectory references unknown task {}",
                    traj.task_id
                )));
            }
        }
        for pair in &self.pairs {
            pair.validate()?;
            if !all_tasks.contains(pair.task_id.as_str()) {
                return Err(Error::Data(format!("pair references unknown task {}", pair.task_id)));
            }
        }
        self.check_split_hygiene()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&dir.join(TASKS_FILE), &self.tasks)?;
        write_jsonl(&dir.join(TRAJECTORIES_FILE), &self.trajectories)?;
        write_jsonl(&dir.join(PAIRS_FILE), &self.pairs)?;
        let splits_path = dir.join(SPLITS_FILE);
        let json = serde_json::to_string_pretty(&self.splits)
            .map_err(|e| Error::Data(format!("serializing splits: {e}")))?;
        fs::write(&splits_path, json + "\n").map_err(|e| Error::io(&splits_path, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let tasks: Vec<TaskInstance> = read_jsonl(&dir.join(TASKS_FILE))?;
        let trajectories: Vec<Trajectory> = read_jsonl(&dir.join(TRAJECTORIES_FILE))?;
        let pairs: Vec<PreferencePair> = read_jsonl(&dir.join(PAIRS_FILE))?;
        let splits_path = dir.join(SPLITS_FILE);
        let raw = fs::read_to_string(&splits_path).map_err(|e| Error::io(&splits_path, e))?;
        let splits: SplitAssignment = serde_json::from_str(&raw).map_err(|e| Error::Schema {
            path: splits_path.clone(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        let ds = Dataset { tasks, trajectories, pairs, splits };
        ds.validate()?;
        Ok(ds)
    }
}

/// Paths of the files a dataset directory is expected to contain.
pub fn dataset_files(dir: &Path) -> [PathBuf; 4] {
    [dir.join(TASKS_FILE), dir.join(TRAJECTORIES_FILE), dir.join(PAIRS_FILE), dir.join(SPLITS_FILE)]
}
