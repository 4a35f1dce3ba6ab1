use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Node, RuleSpace};
use crate::data::{ModifierCell, ModifierDef, SplitCandidates};
use crate::error::{Error, Result};

/// A modifier-tree split. Rows with `value <= threshold`, or whose level is
/// in `mask`, go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModRule {
    Threshold { modifier: usize, value: f64 },
    Subset { modifier: usize, mask: u64 },
}

impl ModRule {
    pub fn modifier(&self) -> usize {
        match self {
            ModRule::Threshold { modifier, .. } | ModRule::Subset { modifier, .. } => *modifier,
        }
    }

    pub fn goes_left(&self, row: &[ModifierCell]) -> Result<bool> {
        let m = self.modifier();
        match (self, row.get(m)) {
            (ModRule::Threshold { value, .. }, Some(ModifierCell::Real(v))) if !v.is_nan() => Ok(*v <= *value),
            (ModRule::Subset { mask, .. }, Some(ModifierCell::Level(c))) if *c < 64 => Ok(mask >> c & 1 == 1),
            _ => Err(Error::InvalidArgument(format!(
                "missing or mistyped value for modifier {m}"
            ))),
        }
    }
}

/// What remains of each modifier's range along a root-to-node path:
/// open threshold bounds for continuous modifiers, the allowed level mask
/// for categorical ones.
#[derive(Debug, Clone, PartialEq)]
pub enum ModBound {
    Range(f64, f64),
    Levels(u64),
}

pub type ModRegion = Vec<ModBound>;

/// Split rules drawn from the modifiers' candidate lists. Only modifiers
/// flagged in `included` may be used; a new rule picks one of the included
/// modifiers that still has a usable candidate, then a candidate, both
/// uniformly.
#[derive(Debug, Clone, Copy)]
pub struct ModifierSpace<'a> {
    pub defs: &'a [ModifierDef],
    pub included: &'a [bool],
}

impl<'a> ModifierSpace<'a> {
    pub fn new(defs: &'a [ModifierDef], included: &'a [bool]) -> Self {
        assert_eq!(defs.len(), included.len());
        Self { defs, included }
    }

    /// Rules on modifier `m` that split `region` into two non-empty parts.
    pub fn valid_for(&self, region: &ModRegion, m: usize) -> Vec<ModRule> {
        match (&self.defs[m].candidates, &region[m]) {
            (SplitCandidates::Thresholds(ts), ModBound::Range(lo, hi)) => ts
                .iter()
                .filter(|v| *lo < **v && **v < *hi)
                .map(|v| ModRule::Threshold { modifier: m, value: *v })
                .collect(),
            (SplitCandidates::Subsets(ss), ModBound::Levels(allowed)) => ss
                .iter()
                .filter(|s| *s & allowed != 0 && allowed & !*s != 0)
                .map(|s| ModRule::Subset { modifier: m, mask: *s })
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Modifiers with at least one usable candidate in `region`, with the
    /// number of such candidates.
    pub fn eligible_modifiers(&self, region: &ModRegion) -> Vec<(usize, usize)> {
        (0..self.defs.len())
            .filter(|m| self.included[*m])
            .map(|m| (m, self.valid_for(region, m).len()))
            .filter(|(_, n)| *n > 0)
            .collect()
    }
}

impl RuleSpace for ModifierSpace<'_> {
    type Rule = ModRule;
    type Region = ModRegion;

    fn root(&self) -> ModRegion {
        self.defs
            .iter()
            .map(|d| match &d.candidates {
                SplitCandidates::Thresholds(_) => ModBound::Range(f64::NEG_INFINITY, f64::INFINITY),
                SplitCandidates::Subsets(_) => {
                    let levels = match &d.kind {
                        crate::data::ModifierKind::Categorical { levels } => levels.len(),
                        crate::data::ModifierKind::Continuous => 0,
                    };
                    ModBound::Levels(if levels >= 64 { u64::MAX } else { (1u64 << levels) - 1 })
                }
            })
            .collect()
    }

    fn candidates(&self, region: &ModRegion) -> Vec<ModRule> {
        (0..self.defs.len())
            .filter(|m| self.included[*m])
            .flat_map(|m| self.valid_for(region, m))
            .collect()
    }

    fn is_valid(&self, region: &ModRegion, rule: &ModRule) -> bool {
        let m = rule.modifier();
        m < self.defs.len() && self.included[m] && self.valid_for(region, m).contains(rule)
    }

    fn children(&self, region: &ModRegion, rule: &ModRule) -> (ModRegion, ModRegion) {
        let (mut l, mut r) = (region.clone(), region.clone());
        match (rule, &region[rule.modifier()]) {
            (ModRule::Threshold { modifier, value }, ModBound::Range(lo, hi)) => {
                l[*modifier] = ModBound::Range(*lo, *value);
                r[*modifier] = ModBound::Range(*value, *hi);
            }
            (ModRule::Subset { modifier, mask }, ModBound::Levels(allowed)) => {
                l[*modifier] = ModBound::Levels(allowed & mask);
                r[*modifier] = ModBound::Levels(allowed & !mask);
            }
            _ => panic!("rule kind does not match modifier kind"),
        }
        (l, r)
    }

    fn log_rule_prior(&self, region: &ModRegion, rule: &ModRule) -> f64 {
        if !self.is_valid(region, rule) {
            return f64::NEG_INFINITY;
        }
        let eligible = self.eligible_modifiers(region);
        let n = eligible
            .iter()
            .find(|(m, _)| *m == rule.modifier())
            .map(|(_, n)| *n)
            .unwrap();
        -(eligible.len() as f64).ln() - (n as f64).ln()
    }

    fn sample_rule<G: Rng + ?Sized>(&self, region: &ModRegion, rng: &mut G) -> Option<ModRule> {
        let eligible = self.eligible_modifiers(region);
        if eligible.is_empty() {
            return None;
        }
        let (m, _) = eligible[rng.random_range(0..eligible.len())];
        let rules = self.valid_for(region, m);
        Some(rules[rng.random_range(0..rules.len())].clone())
    }

    fn can_split(&self, region: &ModRegion) -> bool {
        !self.eligible_modifiers(region).is_empty()
    }

    fn change_nog_only(&self) -> bool {
        true
    }
}

/// Leaf index (left to right) that `row` falls into.
pub fn assign_subgroup<L>(tree: &Node<ModRule, L>, row: &[ModifierCell]) -> Result<usize> {
    let mut node = tree;
    let mut offset = 0;
    loop {
        match node {
            Node::Leaf(_) => return Ok(offset),
            Node::Split { rule, left, right } => {
                if rule.goes_left(row)? {
                    node = left;
                } else {
                    offset += left.leaf_count();
                    node = right;
                }
            }
        }
    }
}

/// A modifier tree with a payload at each leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModifierTree<L> {
    pub root: Node<ModRule, L>,
}

impl<L> ModifierTree<L> {
    pub fn assign_subgroup(&self, row: &[ModifierCell]) -> Result<usize> {
        assign_subgroup(&self.root, row)
    }

    /// Whether modifier `m` appears in any split.
    pub fn uses(&self, m: usize) -> bool {
        fn walk<L>(n: &Node<ModRule, L>, m: usize) -> bool {
            match n {
                Node::Leaf(_) => false,
                Node::Split { rule, left, right } => rule.modifier() == m || walk(left, m) || walk(right, m),
            }
        }
        walk(&self.root, m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{modifier_split_candidates, ModifierColumn};
    use crate::tree::{propose_move, tree_log_prior_full, MoveWeights, TreePriorParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn age_split() -> Node<ModRule, ()> {
        Node::split(
            ModRule::Threshold { modifier: 0, value: 30.0 },
            Node::Leaf(()),
            Node::Leaf(()),
        )
    }

    #[test]
    fn root_only_sends_everything_to_leaf_zero() {
        let t: Node<ModRule, ()> = Node::Leaf(());
        assert_eq!(assign_subgroup(&t, &[ModifierCell::Real(3.0)]).unwrap(), 0);
    }

    #[test]
    fn threshold_boundary_goes_left() {
        let t = age_split();
        let at = |v: f64| assign_subgroup(&t, &[ModifierCell::Real(v)]).unwrap();
        assert_eq!(at(29.0), 0);
        assert_eq!(at(30.0), 0);
        assert_eq!(at(31.0), 1);
        assert!(assign_subgroup(&t, &[]).is_err());
        assert!(assign_subgroup(&t, &[ModifierCell::Real(f64::NAN)]).is_err());
        assert!(assign_subgroup(&t, &[ModifierCell::Level(0)]).is_err());
    }

    #[test]
    fn depth_two_partition_matches_brute_force() {
        // sex codes: 0 = F, 1 = M; BMI continuous.
        let tree: Node<ModRule, ()> = Node::split(
            ModRule::Subset { modifier: 0, mask: 0b01 },
            Node::split(ModRule::Threshold { modifier: 1, value: 25.0 }, Node::Leaf(()), Node::Leaf(())),
            Node::split(ModRule::Threshold { modifier: 1, value: 28.5 }, Node::Leaf(()), Node::Leaf(())),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut seen = [0usize; 4];
        for _ in 0..100 {
            let sex = rng.random_range(0..2u32);
            let bmi = 18.0 + 17.0 * rng.random::<f64>();
            let row = [ModifierCell::Level(sex), ModifierCell::Real(bmi)];
            let brute = match (sex, bmi) {
                (0, b) if b <= 25.0 => 0,
                (0, _) => 1,
                (_, b) if b <= 28.5 => 2,
                _ => 3,
            };
            let leaf = assign_subgroup(&tree, &row).unwrap();
            assert_eq!(leaf, brute);
            seen[leaf] += 1;
        }
        assert_eq!(seen.iter().sum::<usize>(), 100);
    }

    fn defs() -> Vec<ModifierDef> {
        let ages: Vec<f64> = (20..40).map(f64::from).collect();
        vec![
            modifier_split_candidates("age", &ModifierColumn::Continuous { values: ages }, 4).unwrap(),
            modifier_split_candidates("sex", &ModifierColumn::categorical(&["F", "M"]), 4).unwrap(),
        ]
    }

    #[test]
    fn nested_regions_shrink() {
        let defs = defs();
        let inc = [true, true];
        let space = ModifierSpace::new(&defs, &inc);
        let root = space.root();
        // 4 thresholds plus 1 subset.
        assert_eq!(space.candidates(&root).len(), 5);
        let rule = ModRule::Subset { modifier: 1, mask: 1 };
        let (l, _) = space.children(&root, &rule);
        assert_eq!(space.candidates(&l).len(), 4);
        let first = space.candidates(&root)[0].clone();
        let (l, r) = space.children(&root, &first);
        assert_eq!(space.candidates(&l).len(), 1);
        assert_eq!(space.candidates(&r).len(), 4);
    }

    #[test]
    fn rule_prior_two_stage_uniform() {
        let defs = defs();
        let inc = [true, true];
        let space = ModifierSpace::new(&defs, &inc);
        let root = space.root();
        let total: f64 = space
            .candidates(&root)
            .iter()
            .map(|r| space.log_rule_prior(&root, r).exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
        let sex = ModRule::Subset { modifier: 1, mask: 1 };
        assert!((space.log_rule_prior(&root, &sex) - 0.5f64.ln()).abs() < 1e-12);
        let inc = [true, false];
        let only_age = ModifierSpace::new(&defs, &inc);
        assert_eq!(only_age.log_rule_prior(&root, &sex), f64::NEG_INFINITY);
    }

    #[test]
    fn modifier_moves_keep_prior_finite() {
        let defs = defs();
        let inc = [true, true];
        let space = ModifierSpace::new(&defs, &inc);
        let params = TreePriorParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut tree: Node<ModRule, ()> = Node::Leaf(());
        for _ in 0..500 {
            if let Some(p) = propose_move(&space, &tree, &MoveWeights::default(), &mut rng) {
                assert!(p.log_q_ratio.is_finite());
                tree = crate::tree::apply_skeleton(&tree, &p);
                assert!(tree_log_prior_full(&space, &tree, &params).is_finite());
            }
        }
    }
}
