//! Preorder node lists used to persist trees and replay them elsewhere.

use serde::{Deserialize, Serialize};

use super::{DlmTree, ModRule, ModifierTree, Node, TreePair};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum DlmNodeRecord {
    Split { lo: usize, hi: usize, split: usize },
    Leaf { lo: usize, hi: usize, effect: f64 },
}

impl DlmTree {
    pub fn to_records(&self) -> Vec<DlmNodeRecord> {
        fn walk(n: &Node<usize, f64>, lo: usize, hi: usize, out: &mut Vec<DlmNodeRecord>) {
            match n {
                Node::Leaf(effect) => out.push(DlmNodeRecord::Leaf { lo, hi, effect: *effect }),
                Node::Split { rule, left, right } => {
                    out.push(DlmNodeRecord::Split { lo, hi, split: *rule });
                    walk(left, lo, *rule, out);
                    walk(right, rule + 1, hi, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.root, 1, self.lags, &mut out);
        out
    }

    pub fn from_records(lags: usize, records: &[DlmNodeRecord]) -> Result<Self> {
        fn build(
            records: &[DlmNodeRecord],
            pos: &mut usize,
            lo: usize,
            hi: usize,
        ) -> Result<Node<usize, f64>> {
            let rec = records
                .get(*pos)
                .ok_or_else(|| Error::Archive("truncated tree record".into()))?;
            *pos += 1;
            match *rec {
                DlmNodeRecord::Leaf { lo: l, hi: h, effect } if (l, h) == (lo, hi) => Ok(Node::Leaf(effect)),
                DlmNodeRecord::Split { lo: l, hi: h, split } if (l, h) == (lo, hi) && lo <= split && split < hi => {
                    let left = build(records, pos, lo, split)?;
                    let right = build(records, pos, split + 1, hi)?;
                    Ok(Node::split(split, left, right))
                }
                _ => Err(Error::Archive(format!("inconsistent tree record at node {}", *pos - 1))),
            }
        }
        let mut pos = 0;
        let root = build(records, &mut pos, 1, lags)?;
        if pos != records.len() {
            return Err(Error::Archive("trailing nodes in tree record".into()));
        }
        Ok(Self { lags, root })
    }
}

/// The DLM structure at one modifier-tree leaf: one tree, or two trees and
/// their interaction surface (row-major, empty when interactions are off).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadRecord {
    pub trees: Vec<Vec<DlmNodeRecord>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub omega: Vec<f64>,
}

impl PayloadRecord {
    pub fn dlm_trees(&self, lags: usize) -> Result<Vec<DlmTree>> {
        self.trees.iter().map(|r| DlmTree::from_records(lags, r)).collect()
    }

    pub fn pair(&self, lags: usize, exposures: &[usize]) -> Result<Option<TreePair>> {
        if self.trees.len() != 2 || exposures.len() != 2 {
            return Ok(None);
        }
        let mut trees = self.dlm_trees(lags)?;
        let t2 = trees.pop().unwrap();
        let t1 = trees.pop().unwrap();
        let cells = t1.root.leaf_count() * t2.root.leaf_count();
        let omega = if self.omega.is_empty() {
            vec![0.0; cells]
        } else {
            self.omega.clone()
        };
        TreePair::new(t1, t2, exposures[0], exposures[1], omega).map(Some)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum ModNodeRecord {
    Split { rule: ModRule },
    Leaf { payload: PayloadRecord },
}

/// One ensemble member: exposure assignment per DLM-tree slot and its
/// modifier tree in preorder (a single leaf when there is no heterogeneity).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberRecord {
    pub exposures: Vec<usize>,
    pub tree: Vec<ModNodeRecord>,
}

impl MemberRecord {
    pub fn from_tree(exposures: Vec<usize>, tree: &ModifierTree<PayloadRecord>) -> Self {
        fn walk(n: &Node<ModRule, PayloadRecord>, out: &mut Vec<ModNodeRecord>) {
            match n {
                Node::Leaf(p) => out.push(ModNodeRecord::Leaf { payload: p.clone() }),
                Node::Split { rule, left, right } => {
                    out.push(ModNodeRecord::Split { rule: rule.clone() });
                    walk(left, out);
                    walk(right, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(&tree.root, &mut out);
        Self { exposures, tree: out }
    }

    pub fn modifier_tree(&self) -> Result<ModifierTree<PayloadRecord>> {
        fn build(records: &[ModNodeRecord], pos: &mut usize) -> Result<Node<ModRule, PayloadRecord>> {
            let rec = records
                .get(*pos)
                .ok_or_else(|| Error::Archive("truncated modifier tree record".into()))?;
            *pos += 1;
            match rec {
                ModNodeRecord::Leaf { payload } => Ok(Node::Leaf(payload.clone())),
                ModNodeRecord::Split { rule } => {
                    let left = build(records, pos)?;
                    let right = build(records, pos)?;
                    Ok(Node::split(rule.clone(), left, right))
                }
            }
        }
        let mut pos = 0;
        let root = build(&self.tree, &mut pos)?;
        if pos != self.tree.len() {
            return Err(Error::Archive("trailing nodes in modifier tree record".into()));
        }
        Ok(ModifierTree { root })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dlm_records_round_trip() {
        let t = DlmTree {
            lags: 10,
            root: Node::split(3, Node::Leaf(0.5), Node::split(7, Node::Leaf(-1.0), Node::Leaf(2.0))),
        };
        let rec = t.to_records();
        assert_eq!(rec.len(), 5);
        assert_eq!(rec[0], DlmNodeRecord::Split { lo: 1, hi: 10, split: 3 });
        assert_eq!(DlmTree::from_records(10, &rec).unwrap(), t);
        assert!(DlmTree::from_records(9, &rec).is_err());
        assert!(DlmTree::from_records(10, &rec[..4]).is_err());
    }

    #[test]
    fn member_records_round_trip() {
        let payload = |e: f64| PayloadRecord {
            trees: vec![DlmTree::constant(4, e).to_records()],
            omega: Vec::new(),
        };
        let tree = ModifierTree {
            root: Node::split(
                ModRule::Threshold { modifier: 0, value: 1.5 },
                Node::Leaf(payload(1.0)),
                Node::Leaf(payload(2.0)),
            ),
        };
        let m = MemberRecord::from_tree(vec![0], &tree);
        let json = serde_json::to_string(&m).unwrap();
        let back: MemberRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.modifier_tree().unwrap(), tree);
    }
}
