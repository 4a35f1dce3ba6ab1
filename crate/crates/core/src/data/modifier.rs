use serde::{Deserialize, Serialize};

use crate::data::{ModifierColumn, ModifierTable};
use crate::error::{Error, Result};
use crate::stats::{quantile_sorted, sorted_copy};

/// Beyond this many subset splits a categorical modifier falls back to
/// one-vs-rest candidates.
pub const MAX_SUBSET_CANDIDATES: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModifierKind {
    Continuous,
    Categorical { levels: Vec<String> },
}

/// Split rules a modifier-tree node may use. Subsets are bit masks over level
/// codes; rows whose level is in the mask go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitCandidates {
    Thresholds(Vec<f64>),
    Subsets(Vec<u64>),
}

impl SplitCandidates {
    pub fn len(&self) -> usize {
        match self {
            SplitCandidates::Thresholds(t) => t.len(),
            SplitCandidates::Subsets(s) => s.len(),
        }
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModifierDef {
    pub name: String,
    pub kind: ModifierKind,
    pub candidates: SplitCandidates,
}

impl ModifierDef {
    pub fn level_index(&self, level: &str) -> Option<u32> {
        match &self.kind {
            ModifierKind::Categorical { levels } => {
                levels.iter().position(|l| l == level).map(|i| i as u32)
            }
            ModifierKind::Continuous => None,
        }
    }
}

/// Candidate split rules for one modifier column.
///
/// Continuous columns get up to `max_splits` thresholds at the quantiles
/// k/(max_splits+1), deduplicated and kept strictly inside the observed range.
/// Categorical columns get every nonempty proper subset of levels up to
/// complement (subsets holding level 0), or one-vs-rest splits when that count
/// exceeds [`MAX_SUBSET_CANDIDATES`].
pub fn modifier_split_candidates(
    name: &str,
    column: &ModifierColumn,
    max_splits: usize,
) -> Result<ModifierDef> {
    if max_splits == 0 {
        return Err(Error::InvalidArgument("modifier splits must be at least 1".into()));
    }
    match column {
        ModifierColumn::Continuous { values } => {
            let sorted = sorted_copy(values);
            let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
            let mut thresholds: Vec<f64> = (1..=max_splits)
                .map(|k| quantile_sorted(&sorted, k as f64 / (max_splits + 1) as f64))
                .filter(|q| *q > min && *q < max)
                .collect();
            thresholds.dedup();
            Ok(ModifierDef {
                name: name.to_string(),
                kind: ModifierKind::Continuous,
                candidates: SplitCandidates::Thresholds(thresholds),
            })
        }
        ModifierColumn::Categorical { levels, .. } => {
            let l = levels.len();
            if l > 64 {
                return Err(Error::InvalidData(format!(
                    "modifier `{name}` has {l} levels; at most 64 are supported"
                )));
            }
            let subsets = if l < 2 {
                Vec::new()
            } else if l <= 6 && (1usize << (l - 1)) - 1 <= MAX_SUBSET_CANDIDATES {
                let rest = l - 1;
                (0..(1u64 << rest) - 1).map(|bits| 1 | (bits << 1)).collect()
            } else {
                (0..l).map(|i| 1u64 << i).collect()
            };
            Ok(ModifierDef {
                name: name.to_string(),
                kind: ModifierKind::Categorical {
                    levels: levels.clone(),
                },
                candidates: SplitCandidates::Subsets(subsets),
            })
        }
    }
}

/// Definitions for the named columns of `table`, or for every column when
/// `names` is empty.
pub fn modifier_defs(table: &ModifierTable, names: &[String], max_splits: usize) -> Result<Vec<ModifierDef>> {
    let picked: Vec<&String> = if names.is_empty() {
        table.names().iter().collect()
    } else {
        names.iter().collect()
    };
    picked
        .into_iter()
        .map(|name| {
            let j = table
                .index_of(name)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown modifier `{name}`")))?;
            modifier_split_candidates(name, &table.columns()[j], max_splits)
        })
        .collect()
}
