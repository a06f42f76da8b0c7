//! Pads a preference pair's two branches into equal-length columns.
//!
//! The aligned length is always `T = max(|chosen|, |rejected|)`.
//! Placeholders (`no_action`) are inserted only into the shorter branch,
//! so the longer branch keeps one real step per column. Among all
//! placements the aligner picks one that maximizes the number of matched
//! columns (same [`match_key`] on both sides); ties are broken toward the
//! lexicographically smallest set of placeholder column indices, which
//! makes the output unique and reproducible. Equal-length branches are
//! zipped directly: mismatches become substitution columns, never gaps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traj::{PreferencePair, Step, Trajectory};

/// Canonical identity string for a step: action name plus sorted
/// identity-relevant args. Coordinate args `x`/`y` are dropped; keys and
/// values are lowercased and internal whitespace is collapsed, so cosmetic
/// differences in how a step was recorded do not break matching.
pub fn match_key(step: &Step) -> String {
    let mut args: Vec<String> = step
        .args
        .iter()
        .filter(|(k, _)| {
            let k = k.to_lowercase();
            k != "x" && k != "y"
        })
        .map(|(k, v)| format!("{}={}", canon(k), canon(v)))
        .collect();
    args.sort();
    format!("{}|{}", step.action.name(), args.join(","))
}

fn canon(s: &str) -> String {
    s.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// One side of an aligned column: a real step or the padding placeholder.
#[derive(Debug, Clone, PartialEq)]
pub enum AlignedSlot {
    Step(Step),
    NoAction,
}

impl AlignedSlot {
    pub fn step(&self) -> Option<&Step> {
        match self {
            AlignedSlot::Step(s) => Some(s),
            AlignedSlot::NoAction => None,
        }
    }

    pub fn is_placeholder(&self) -> bool {
        matches!(self, AlignedSlot::NoAction)
    }

    pub fn key(&self) -> String {
        match self {
            AlignedSlot::Step(s) => match_key(s),
            AlignedSlot::NoAction => "no_action|".to_string(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SlotRepr {
    Text(String),
    Step(Step),
}

impl Serialize for AlignedSlot {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            AlignedSlot::Step(s) => s.serialize(ser),
            AlignedSlot::NoAction => ser.serialize_str("no_action"),
        }
    }
}

impl<'de> Deserialize<'de> for AlignedSlot {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        match SlotRepr::deserialize(de)? {
            SlotRepr::Step(s) => Ok(AlignedSlot::Step(s)),
            SlotRepr::Text(t) if t == "no_action" => Ok(AlignedSlot::NoAction),
            SlotRepr::Text(t) => Err(serde::de::Error::custom(format!(
                "placeholder slot must be \"no_action\", got \"{t}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedColumn {
    pub t: usize,
    pub chosen: AlignedSlot,
    pub rejected: AlignedSlot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedPair {
    pub task_id: String,
    pub persona: crate::traj::Persona,
    pub columns: Vec<AlignedColumn>,
}

impl AlignedPair {
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// Real steps of the chosen branch, placeholders stripped.
    pub fn chosen_steps(&self) -> Vec<Step> {
        self.columns.iter().filter_map(|c| c.chosen.step().cloned()).collect()
    }

    pub fn rejected_steps(&self) -> Vec<Step> {
        self.columns.iter().filter_map(|c| c.rejected.step().cloned()).collect()
    }

    pub fn placeholder_columns(&self) -> Vec<usize> {
        self.columns
            .iter()
            .filter(|c| c.chosen.is_placeholder() || c.rejected.is_placeholder())
            .map(|c| c.t)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n_chosen = self.columns.iter().filter(|c| !c.chosen.is_placeholder()).count();
        let n_rejected = self.columns.iter().filter(|c| !c.rejected.is_placeholder()).count();
        if n_chosen == 0 || n_rejected == 0 {
            return Err(Error::Data(format!("aligned pair {}: a branch is empty", self.task_id)));
        }
        let expected_pads = n_chosen.abs_diff(n_rejected);
        let mut pads = 0usize;
        for (i, col) in self.columns.iter().enumerate() {
            if col.t != i {
                return Err(Error::Data(format!(
                    "aligned pair {}: column index {} at position {}",
                    self.task_id, col.t, i
                )));
            }
            match (&col.chosen, &col.rejected) {
                (AlignedSlot::NoAction, AlignedSlot::NoAction) => {
                    return Err(Error::Data(format!(
                        "aligned pair {}: column {} has placeholders on both sides",
                        self.task_id, i
                    )));
                }
                (AlignedSlot::NoAction, _) => {
                    if n_chosen >= n_rejected {
                        return Err(Error::Data(format!(
                            "aligned pair {}: placeholder on the longer side at column {}",
                            self.task_id, i
                        )));
                    }
                    pads += 1;
                }
                (_, AlignedSlot::NoAction) => {
                    if n_rejected >= n_chosen {
                        return Err(Error::Data(format!(
                            "aligned pair {}: placeholder on the longer side at column {}",
                            self.task_id, i
                        )));
                    }
                    pads += 1;
                }
                _ => {}
            }
        }
        if pads != expected_pads {
            return Err(Error::Data(format!(
                "aligned pair {}: {} placeholders, expected {}",
                self.task_id, pads, expected_pads
            )));
        }
        Ok(())
    }

    pub fn matched_columns(&self) -> usize {
        self.columns.iter().filter(|c| c.chosen.key() == c.rejected.key()).count()
    }
}

/// Aligns the pair's branches into `max(|chosen|, |rejected|)` columns.
pub fn align_pair(pair: &PreferencePair) -> Result<AlignedPair> {
    pair.validate()?;
    let chosen = &pair.chosen;
    let rejected = &pair.rejected;

    let columns = if chosen.len() == rejected.len() {
        chosen
            .steps
            .iter()
            .zip(rejected.steps.iter())
            .enumerate()
            .map(|(t, (c, r))| AlignedColumn {
                t,
                chosen: AlignedSlot::Step(c.clone()),
                rejected: AlignedSlot::Step(r.clone()),
            })
            .collect()
    } else if chosen.len() > rejected.len() {
        pad_shorter(chosen, rejected, true)
    } else {
        pad_shorter(rejected, chosen, false)
    };

    let aligned = AlignedPair { task_id: pair.task_id.clone(), persona: pair.persona, columns };
    aligned.validate()?;
    Ok(aligned)
}

/// Places the shorter branch's steps into the longer branch's column grid.
/// `chosen_is_longer` tells which side of each column the longer branch
/// occupies.
fn pad_shorter(
    longer: &Trajectory,
    shorter: &Trajectory,
    chosen_is_longer: bool,
) -> Vec<AlignedColumn> {
    let lk: Vec<String> = longer.steps.iter().map(match_key).collect();
    let sk: Vec<String> = shorter.steps.iter().map(match_key).collect();
    let n = lk.len();
    let m = sk.len();

    // suffix[i][j]: max matched columns aligning longer[i..] with shorter[j..].
    let mut suffix = vec![vec![0usize; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..=m.min(i + m)).rev() {
            // Feasibility: must be able to place all remaining shorter steps.
            if m - j > n - i {
                continue;
            }
            let mut best = 0usize;
            if j < m {
                let hit = usize::from(lk[i] == sk[j]);
                best = best.max(hit + suffix[i + 1][j + 1]);
            }
            if (n - i) > (m - j) {
                best = best.max(suffix[i + 1][j]);
            }
            suffix[i][j] = best;
        }
    }

    // Forward walk preferring the gap whenever it preserves optimality;
    // this yields the lexicographically smallest placeholder index set.
    let mut columns = Vec::with_capacity(n);
    let (mut i, mut j) = (0usize, 0usize);
    while i < n {
        let gap_ok = (n - i) > (m - j) && suffix[i + 1][j] == suffix[i][j];
        let (short_slot, advanced) = if gap_ok {
            (AlignedSlot::NoAction, false)
        } else {
            (AlignedSlot::Step(shorter.steps[j].clone()), true)
        };
        let long_slot = AlignedSlot::Step(longer.steps[i].clone());
        let (chosen, rejected) =
            if chosen_is_longer { (long_slot, short_slot) } else { (short_slot, long_slot) };
        columns.push(AlignedColumn { t: i, chosen, rejected });
        i += 1;
        if advanced {
            j += 1;
        }
    }
    debug_assert_eq!(j, m);
    columns
}

pub fn write_aligned(path: &std::path::Path, pairs: &[AlignedPair]) -> Result<()> {
    crate::traj::write_jsonl(path, pairs)
}

pub fn read_aligned(path: &std::path::Path) -> Result<Vec<AlignedPair>> {
    let pairs: Vec<AlignedPair> = crate::traj::read_jsonl(path)?;
    for p in &pairs {
        p.validate()?;
    }
    Ok(pairs)
}
