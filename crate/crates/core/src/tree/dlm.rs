use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Node, RuleSpace};
use crate::error::{Error, Result};

/// Lags `1..=lags`; a split at `s` sends `[lo, s]` left and `[s+1, hi]` right.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LagSpace {
    pub lags: usize,
}

impl LagSpace {
    pub fn new(lags: usize) -> Self {
        Self { lags }
    }
}

impl RuleSpace for LagSpace {
    type Rule = usize;
    type Region = (usize, usize);

    fn root(&self) -> (usize, usize) {
        (1, self.lags)
    }
    fn candidates(&self, &(lo, hi): &(usize, usize)) -> Vec<usize> {
        (lo..hi).collect()
    }
    fn is_valid(&self, &(lo, hi): &(usize, usize), s: &usize) -> bool {
        lo <= *s && *s < hi
    }
    fn children(&self, &(lo, hi): &(usize, usize), s: &usize) -> ((usize, usize), (usize, usize)) {
        ((lo, *s), (*s + 1, hi))
    }
    fn log_rule_prior(&self, &(lo, hi): &(usize, usize), _: &usize) -> f64 {
        -((hi - lo) as f64).ln()
    }
    fn sample_rule<G: Rng + ?Sized>(&self, &(lo, hi): &(usize, usize), rng: &mut G) -> Option<usize> {
        (hi > lo).then(|| rng.random_range(lo..hi))
    }
    fn can_split(&self, &(lo, hi): &(usize, usize)) -> bool {
        hi > lo
    }
}

/// A DLM tree shape without effects.
pub type DlmTopology = Node<usize, ()>;

/// Terminal lag intervals left to right.
pub fn intervals<L>(tree: &Node<usize, L>, lags: usize) -> Vec<(usize, usize)> {
    fn walk<L>(n: &Node<usize, L>, lo: usize, hi: usize, out: &mut Vec<(usize, usize)>) {
        match n {
            Node::Leaf(_) => out.push((lo, hi)),
            Node::Split { rule, left, right } => {
                walk(left, lo, *rule, out);
                walk(right, rule + 1, hi, out);
            }
        }
    }
    let mut out = Vec::new();
    walk(tree, 1, lags, &mut out);
    out
}

/// A DLM tree: split lags at internal nodes, an effect at each terminal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DlmTree {
    pub lags: usize,
    pub root: Node<usize, f64>,
}

impl DlmTree {
    pub fn constant(lags: usize, effect: f64) -> Self {
        Self {
            lags,
            root: Node::Leaf(effect),
        }
    }

    /// Attach `effects` (left to right) to a topology.
    pub fn from_topology(lags: usize, topology: &DlmTopology, effects: &[f64]) -> Self {
        assert_eq!(topology.leaf_count(), effects.len());
        let mut k = 0;
        let root = topology.map_leaves(&mut |_| {
            k += 1;
            effects[k - 1]
        });
        Self { lags, root }
    }

    pub fn intervals(&self) -> Vec<(usize, usize)> {
        intervals(&self.root, self.lags)
    }

    pub fn effects(&self) -> Vec<f64> {
        self.root.leaves().into_iter().copied().collect()
    }

    /// Effect of the terminal whose interval holds lag `t`.
    pub fn evaluate(&self, t: usize) -> Result<f64> {
        if t == 0 || t > self.lags {
            return Err(Error::InvalidArgument(format!(
                "lag {t} outside 1..={}",
                self.lags
            )));
        }
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf(d) => return Ok(*d),
                Node::Split { rule, left, right } => {
                    node = if t <= *rule { left } else { right };
                }
            }
        }
    }

    /// The effect at every lag.
    pub fn theta(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.lags];
        for ((lo, hi), d) in self.intervals().into_iter().zip(self.effects()) {
            out[lo - 1..hi].iter_mut().for_each(|v| *v = d);
        }
        out
    }
}

/// Sum of tree evaluations at every lag.
pub fn ensemble_theta(trees: &[DlmTree], lags: usize) -> Vec<f64> {
    let mut out = vec![0.0; lags];
    for tree in trees {
        for (o, v) in out.iter_mut().zip(tree.theta()) {
            *o += v;
        }
    }
    out
}

/// Two DLM trees with an interaction surface over their terminal cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreePair {
    pub tree1: DlmTree,
    pub tree2: DlmTree,
    pub exposure1: usize,
    pub exposure2: usize,
    /// C1 × C2, row-major.
    pub omega: Vec<f64>,
}

impl TreePair {
    pub fn new(tree1: DlmTree, tree2: DlmTree, exposure1: usize, exposure2: usize, omega: Vec<f64>) -> Result<Self> {
        let (c1, c2) = (tree1.root.leaf_count(), tree2.root.leaf_count());
        if omega.len() != c1 * c2 {
            return Err(Error::Shape(format!(
                "interaction surface has {} cells for {c1} x {c2} terminals",
                omega.len()
            )));
        }
        Ok(Self {
            tree1,
            tree2,
            exposure1,
            exposure2,
            omega,
        })
    }

    /// Main effects of both trees and the T × T (row-major) interaction grid.
    pub fn pair_effects(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let lags = self.tree1.lags;
        let i1 = self.tree1.intervals();
        let i2 = self.tree2.intervals();
        let mut grid = vec![0.0; lags * lags];
        for (a, &(lo1, hi1)) in i1.iter().enumerate() {
            for (b, &(lo2, hi2)) in i2.iter().enumerate() {
                let w = self.omega[a * i2.len() + b];
                for t1 in lo1..=hi1 {
                    grid[(t1 - 1) * lags + lo2 - 1..(t1 - 1) * lags + hi2]
                        .iter_mut()
                        .for_each(|g| *g = w);
                }
            }
        }
        (self.tree1.theta(), self.tree2.theta(), grid)
    }
}
