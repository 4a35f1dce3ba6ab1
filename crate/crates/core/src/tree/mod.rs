//! Binary trees over a rule space, their prior, and Metropolis-Hastings
//! moves. The same machinery drives DLM trees (rules are split lags) and
//! modifier trees (rules are thresholds or level subsets).

mod dlm;
mod modifier;
mod record;

pub use dlm::{ensemble_theta, intervals, DlmTopology, DlmTree, LagSpace, TreePair};
pub use modifier::{assign_subgroup, ModRegion, ModRule, ModifierSpace, ModifierTree};
pub use record::{DlmNodeRecord, MemberRecord, ModNodeRecord, PayloadRecord};

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node<R, L> {
    Leaf(L),
    Split {
        rule: R,
        left: Box<Node<R, L>>,
        right: Box<Node<R, L>>,
    },
}

/// Left is `false`, right is `true`.
pub type Path = Vec<bool>;

impl<R, L> Node<R, L> {
    pub fn split(rule: R, left: Node<R, L>, right: Node<R, L>) -> Self {
        Node::Split {
            rule,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Leaf(_))
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Node::Leaf(_) => 1,
            Node::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    pub fn internal_count(&self) -> usize {
        self.leaf_count() - 1
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf(_) => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn get(&self, path: &[bool]) -> &Node<R, L> {
        let mut node = self;
        for &dir in path {
            node = match node {
                Node::Split { left, right, .. } => {
                    if dir {
                        right
                    } else {
                        left
                    }
                }
                Node::Leaf(_) => panic!("path runs past a leaf"),
            };
        }
        node
    }

    pub fn get_mut(&mut self, path: &[bool]) -> &mut Node<R, L> {
        let mut node = self;
        for &dir in path {
            node = match node {
                Node::Split { left, right, .. } => {
                    if dir {
                        right
                    } else {
                        left
                    }
                }
                Node::Leaf(_) => panic!("path runs past a leaf"),
            };
        }
        node
    }

    /// Leaf payloads left to right.
    pub fn leaves(&self) -> Vec<&L> {
        let mut out = Vec::new();
        fn walk<'a, R, L>(n: &'a Node<R, L>, out: &mut Vec<&'a L>) {
            match n {
                Node::Leaf(l) => out.push(l),
                Node::Split { left, right, .. } => {
                    walk(left, out);
                    walk(right, out);
                }
            }
        }
        walk(self, &mut out);
        out
    }

    pub fn leaves_mut(&mut self) -> Vec<&mut L> {
        let mut out = Vec::new();
        fn walk<'a, R, L>(n: &'a mut Node<R, L>, out: &mut Vec<&'a mut L>) {
            match n {
                Node::Leaf(l) => out.push(l),
                Node::Split { left, right, .. } => {
                    walk(left, out);
                    walk(right, out);
                }
            }
        }
        walk(self, &mut out);
        out
    }

    /// Index of the first leaf under `path` in left-to-right leaf order.
    pub fn leaf_offset(&self, path: &[bool]) -> usize {
        let mut node = self;
        let mut offset = 0;
        for &dir in path {
            match node {
                Node::Split { left, right, .. } => {
                    if dir {
                        offset += left.leaf_count();
                        node = right;
                    } else {
                        node = left;
                    }
                }
                Node::Leaf(_) => panic!("path runs past a leaf"),
            }
        }
        offset
    }

    /// Same shape and rules, payloads dropped.
    pub fn skeleton(&self) -> Node<R, ()>
    where
        R: Clone,
    {
        self.map_leaves(&mut |_| ())
    }

    pub fn map_leaves<M>(&self, f: &mut impl FnMut(&L) -> M) -> Node<R, M>
    where
        R: Clone,
    {
        match self {
            Node::Leaf(l) => Node::Leaf(f(l)),
            Node::Split { rule, left, right } => {
                let l = left.map_leaves(f);
                let r = right.map_leaves(f);
                Node::split(rule.clone(), l, r)
            }
        }
    }

    /// Paths of internal nodes whose children are both leaves.
    pub fn nog_paths(&self) -> Vec<Path> {
        let mut out = Vec::new();
        fn walk<R, L>(n: &Node<R, L>, path: &mut Path, out: &mut Vec<Path>) {
            if let Node::Split { left, right, .. } = n {
                if left.is_leaf() && right.is_leaf() {
                    out.push(path.clone());
                }
                path.push(false);
                walk(left, path, out);
                path.pop();
                path.push(true);
                walk(right, path, out);
                path.pop();
            }
        }
        walk(self, &mut Vec::new(), &mut out);
        out
    }
}

/// The set of split rules a tree may use and how they carve up regions.
pub trait RuleSpace {
    type Rule: Clone + PartialEq + std::fmt::Debug;
    type Region: Clone;

    fn root(&self) -> Self::Region;
    /// Every rule that splits `region` into two nonempty parts.
    fn candidates(&self, region: &Self::Region) -> Vec<Self::Rule>;
    fn is_valid(&self, region: &Self::Region, rule: &Self::Rule) -> bool;
    fn children(&self, region: &Self::Region, rule: &Self::Rule) -> (Self::Region, Self::Region);
    /// Log probability that [`RuleSpace::sample_rule`] draws `rule` at `region`.
    fn log_rule_prior(&self, region: &Self::Region, rule: &Self::Rule) -> f64;
    fn sample_rule<G: Rng + ?Sized>(&self, region: &Self::Region, rng: &mut G) -> Option<Self::Rule>;

    fn can_split(&self, region: &Self::Region) -> bool {
        !self.candidates(region).is_empty()
    }
    /// Restrict change moves to internal nodes with two leaf children.
    fn change_nog_only(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreePriorParams {
    pub alpha: f64,
    pub beta: f64,
    pub num_trees: usize,
}

impl Default for TreePriorParams {
    fn default() -> Self {
        Self {
            alpha: 0.95,
            beta: 2.0,
            num_trees: 20,
        }
    }
}

impl TreePriorParams {
    pub fn p_split(&self, depth: usize) -> f64 {
        self.alpha * (1.0 + depth as f64).powf(-self.beta)
    }
}

fn log_prior_inner<S: RuleSpace, L>(
    space: &S,
    node: &Node<S::Rule, L>,
    region: &S::Region,
    depth: usize,
    params: &TreePriorParams,
    with_rules: bool,
) -> f64 {
    match node {
        Node::Leaf(_) => {
            if space.can_split(region) {
                (1.0 - params.p_split(depth)).ln()
            } else {
                0.0
            }
        }
        Node::Split { rule, left, right } => {
            if !space.is_valid(region, rule) {
                return f64::NEG_INFINITY;
            }
            let (lr, rr) = space.children(region, rule);
            let mut lp = params.p_split(depth).ln();
            if with_rules {
                lp += space.log_rule_prior(region, rule);
            }
            lp + log_prior_inner(space, left, &lr, depth + 1, params, with_rules)
                + log_prior_inner(space, right, &rr, depth + 1, params, with_rules)
        }
    }
}

/// Log of ∏ p_split(d) over internal nodes × ∏ (1 − p_split(d)) over leaves
/// that could still split, with p_split(d) = α(1+d)^−β. Leaves whose region
/// admits no rule contribute nothing.
pub fn tree_log_prior<S: RuleSpace, L>(space: &S, tree: &Node<S::Rule, L>, params: &TreePriorParams) -> f64 {
    log_prior_inner(space, tree, &space.root(), 0, params, false)
}

/// [`tree_log_prior`] plus the log probability of each split rule. This is
/// the density the sampler targets; it sums to one over all trees.
pub fn tree_log_prior_full<S: RuleSpace, L>(
    space: &S,
    tree: &Node<S::Rule, L>,
    params: &TreePriorParams,
) -> f64 {
    log_prior_inner(space, tree, &space.root(), 0, params, true)
}

/// Draw a topology from the full prior.
pub fn sample_prior_tree<S: RuleSpace, G: Rng + ?Sized>(
    space: &S,
    params: &TreePriorParams,
    rng: &mut G,
) -> Node<S::Rule, ()> {
    fn grow<S: RuleSpace, G: Rng + ?Sized>(
        space: &S,
        region: &S::Region,
        depth: usize,
        params: &TreePriorParams,
        rng: &mut G,
    ) -> Node<S::Rule, ()> {
        if !space.can_split(region) || rng.random::<f64>() >= params.p_split(depth) {
            return Node::Leaf(());
        }
        let rule = space.sample_rule(region, rng).expect("region can split");
        let (lr, rr) = space.children(region, &rule);
        let left = grow(space, &lr, depth + 1, params, rng);
        let right = grow(space, &rr, depth + 1, params, rng);
        Node::split(rule, left, right)
    }
    grow(space, &space.root(), 0, params, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveKind {
    Grow,
    Prune,
    Change,
}

impl MoveKind {
    pub const ALL: [MoveKind; 3] = [MoveKind::Grow, MoveKind::Prune, MoveKind::Change];
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoveWeights {
    pub grow: f64,
    pub prune: f64,
    pub change: f64,
}

impl Default for MoveWeights {
    fn default() -> Self {
        Self {
            grow: 0.3,
            prune: 0.3,
            change: 0.4,
        }
    }
}

impl MoveWeights {
    fn weight(&self, kind: MoveKind) -> f64 {
        match kind {
            MoveKind::Grow => self.grow,
            MoveKind::Prune => self.prune,
            MoveKind::Change => self.change,
        }
    }
}

/// Where moves are possible in a given tree.
#[derive(Debug, Clone)]
pub struct MoveSites<R, G> {
    /// Leaves whose region admits a rule, with region and depth.
    pub growable: Vec<(Path, G, usize)>,
    pub nog: Vec<Path>,
    /// Internal nodes with at least one alternative rule, and those rules.
    pub changeable: Vec<(Path, G, Vec<R>)>,
}

impl<R, G> MoveSites<R, G> {
    fn feasible(&self, kind: MoveKind) -> bool {
        match kind {
            MoveKind::Grow => !self.growable.is_empty(),
            MoveKind::Prune => !self.nog.is_empty(),
            MoveKind::Change => !self.changeable.is_empty(),
        }
    }

    /// Probability of choosing `kind` after renormalizing over feasible kinds.
    pub fn kind_prob(&self, kind: MoveKind, w: &MoveWeights) -> f64 {
        if !self.feasible(kind) {
            return 0.0;
        }
        let total: f64 = MoveKind::ALL
            .iter()
            .filter(|k| self.feasible(**k))
            .map(|k| w.weight(*k))
            .sum();
        w.weight(kind) / total
    }
}

fn subtree_valid<S: RuleSpace, L>(space: &S, node: &Node<S::Rule, L>, region: &S::Region) -> bool {
    match node {
        Node::Leaf(_) => true,
        Node::Split { rule, left, right } => {
            if !space.is_valid(region, rule) {
                return false;
            }
            let (lr, rr) = space.children(region, rule);
            subtree_valid(space, left, &lr) && subtree_valid(space, right, &rr)
        }
    }
}

/// Rules that could replace the one at an internal node while keeping every
/// descendant rule valid, excluding the current rule.
fn change_alternatives<S: RuleSpace, L>(space: &S, node: &Node<S::Rule, L>, region: &S::Region) -> Vec<S::Rule> {
    let Node::Split { rule, left, right } = node else {
        return Vec::new();
    };
    space
        .candidates(region)
        .into_iter()
        .filter(|r| r != rule)
        .filter(|r| {
            let (lr, rr) = space.children(region, r);
            subtree_valid(space, left, &lr) && subtree_valid(space, right, &rr)
        })
        .collect()
}

pub fn move_sites<S: RuleSpace, L>(space: &S, tree: &Node<S::Rule, L>) -> MoveSites<S::Rule, S::Region> {
    let mut sites = MoveSites {
        growable: Vec::new(),
        nog: Vec::new(),
        changeable: Vec::new(),
    };
    fn walk<S: RuleSpace, L>(
        space: &S,
        node: &Node<S::Rule, L>,
        region: S::Region,
        path: &mut Path,
        sites: &mut MoveSites<S::Rule, S::Region>,
    ) {
        match node {
            Node::Leaf(_) => {
                if space.can_split(&region) {
                    sites.growable.push((path.clone(), region, path.len()));
                }
            }
            Node::Split { rule, left, right } => {
                let nog = left.is_leaf() && right.is_leaf();
                if nog {
                    sites.nog.push(path.clone());
                }
                if nog || !space.change_nog_only() {
                    let alts = change_alternatives(space, node, &region);
                    if !alts.is_empty() {
                        sites.changeable.push((path.clone(), region.clone(), alts));
                    }
                }
                let (lr, rr) = space.children(&region, rule);
                path.push(false);
                walk(space, left, lr, path, sites);
                path.pop();
                path.push(true);
                walk(space, right, rr, path, sites);
                path.pop();
            }
        }
    }
    walk(space, tree, space.root(), &mut Vec::new(), &mut sites);
    sites
}

/// A proposed structural change. `log_q_ratio` is log q(reverse) − log
/// q(forward) for the structural part of the kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal<R> {
    pub kind: MoveKind,
    pub path: Path,
    /// New rule for grow and change; `None` for prune.
    pub rule: Option<R>,
    pub log_q_ratio: f64,
}

/// Apply a proposal to a tree of unit payloads.
pub fn apply_skeleton<R: Clone>(tree: &Node<R, ()>, p: &Proposal<R>) -> Node<R, ()> {
    let mut out = tree.clone();
    let node = out.get_mut(&p.path);
    match p.kind {
        MoveKind::Grow => {
            *node = Node::split(p.rule.clone().unwrap(), Node::Leaf(()), Node::Leaf(()));
        }
        MoveKind::Prune => *node = Node::Leaf(()),
        MoveKind::Change => {
            if let Node::Split { rule, .. } = node {
                *rule = p.rule.clone().unwrap();
            }
        }
    }
    out
}

/// Draw a grow, prune or change proposal. Kinds are chosen with
/// `weights` renormalized over those feasible; grow picks a growable leaf
/// uniformly and draws its rule from the rule prior; prune picks an internal
/// node with two leaf children uniformly; change picks a changeable node
/// uniformly and a new rule uniformly among its alternatives. Returns `None`
/// when no move is possible.
pub fn propose_move<S: RuleSpace, L, G: Rng + ?Sized>(
    space: &S,
    tree: &Node<S::Rule, L>,
    weights: &MoveWeights,
    rng: &mut G,
) -> Option<Proposal<S::Rule>> {
    let sites = move_sites(space, tree);
    let probs: Vec<f64> = MoveKind::ALL.iter().map(|k| sites.kind_prob(*k, weights)).collect();
    if probs.iter().all(|p| *p == 0.0) {
        return None;
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut kind = MoveKind::Change;
    for (k, p) in MoveKind::ALL.iter().zip(&probs) {
        acc += p;
        if u < acc && *p > 0.0 {
            kind = *k;
            break;
        }
    }
    if probs[kind.index()] == 0.0 {
        // Rounding left `u` past the last feasible bucket.
        kind = *MoveKind::ALL
            .iter()
            .rev()
            .find(|k| probs[k.index()] > 0.0)
            .unwrap();
    }
    let skeleton = tree.skeleton();
    let fwd_kind = probs[kind.index()].ln();
    let proposal = match kind {
        MoveKind::Grow => {
            let (path, region, _) = &sites.growable[rng.random_range(0..sites.growable.len())];
            let rule = space.sample_rule(region, rng).expect("growable leaf");
            let fwd = fwd_kind - (sites.growable.len() as f64).ln() + space.log_rule_prior(region, &rule);
            let mut p = Proposal {
                kind,
                path: path.clone(),
                rule: Some(rule),
                log_q_ratio: 0.0,
            };
            let after = move_sites(space, &apply_skeleton(&skeleton, &p));
            let rev = after.kind_prob(MoveKind::Prune, weights).ln() - (after.nog.len() as f64).ln();
            p.log_q_ratio = rev - fwd;
            p
        }
        MoveKind::Prune => {
            let path = sites.nog[rng.random_range(0..sites.nog.len())].clone();
            let fwd = fwd_kind - (sites.nog.len() as f64).ln();
            let Node::Split { rule, .. } = tree.get(&path) else {
                unreachable!()
            };
            let rule = rule.clone();
            let mut p = Proposal {
                kind,
                path: path.clone(),
                rule: None,
                log_q_ratio: 0.0,
            };
            let after = move_sites(space, &apply_skeleton(&skeleton, &p));
            let region = after
                .growable
                .iter()
                .find(|(gp, _, _)| *gp == path)
                .map(|(_, r, _)| r.clone())
                .expect("pruned node is growable");
            let rev = after.kind_prob(MoveKind::Grow, weights).ln() - (after.growable.len() as f64).ln()
                + space.log_rule_prior(&region, &rule);
            p.log_q_ratio = rev - fwd;
            p
        }
        MoveKind::Change => {
            let (path, _, alts) = &sites.changeable[rng.random_range(0..sites.changeable.len())];
            let rule = alts[rng.random_range(0..alts.len())].clone();
            let fwd = fwd_kind - (sites.changeable.len() as f64).ln() - (alts.len() as f64).ln();
            let mut p = Proposal {
                kind,
                path: path.clone(),
                rule: Some(rule),
                log_q_ratio: 0.0,
            };
            let after = move_sites(space, &apply_skeleton(&skeleton, &p));
            let (_, _, back) = after
                .changeable
                .iter()
                .find(|(cp, _, _)| cp == path)
                .expect("change is reversible");
            let rev = after.kind_prob(MoveKind::Change, weights).ln()
                - (after.changeable.len() as f64).ln()
                - (back.len() as f64).ln();
            p.log_q_ratio = rev - fwd;
            p
        }
    };
    Some(proposal)
}

/// Region of the node at `path`.
pub fn region_at<S: RuleSpace, L>(space: &S, tree: &Node<S::Rule, L>, path: &[bool]) -> S::Region {
    let mut region = space.root();
    let mut node = tree;
    for &dir in path {
        let Node::Split { rule, left, right } = node else {
            panic!("path runs past a leaf");
        };
        let (lr, rr) = space.children(&region, rule);
        if dir {
            region = rr;
            node = right;
        } else {
            region = lr;
            node = left;
        }
    }
    region
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Every topology over lags 1..=T.
    fn enumerate(lo: usize, hi: usize) -> Vec<DlmTopology> {
        let mut out = vec![Node::Leaf(())];
        for s in lo..hi {
            for l in enumerate(lo, s) {
                for r in enumerate(s + 1, hi) {
                    out.push(Node::split(s, l.clone(), r));
                }
            }
        }
        out
    }

    #[test]
    fn root_only_prior() {
        let space = LagSpace::new(37);
        let p = TreePriorParams::default();
        let t: DlmTopology = Node::Leaf(());
        assert!((tree_log_prior(&space, &t, &p) - 0.05f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn depth_one_prior() {
        let space = LagSpace::new(37);
        let p = TreePriorParams::default();
        let t: DlmTopology = Node::split(20, Node::Leaf(()), Node::Leaf(()));
        let expected = 0.95f64.ln() + 2.0 * (1.0 - 0.95 * 2f64.powi(-2)).ln();
        assert!((tree_log_prior(&space, &t, &p) - expected).abs() < 1e-12);
    }

    #[test]
    fn vanishing_alpha_forbids_splits() {
        let space = LagSpace::new(5);
        let p = TreePriorParams {
            alpha: 0.0,
            ..Default::default()
        };
        let t: DlmTopology = Node::split(2, Node::Leaf(()), Node::Leaf(()));
        assert_eq!(tree_log_prior(&space, &t, &p), f64::NEG_INFINITY);
    }

    #[test]
    fn prior_sums_to_one_small_lag_space() {
        for lags in [2, 3, 4] {
            let space = LagSpace::new(lags);
            let trees = enumerate(1, lags);
            for p in [TreePriorParams::default(), TreePriorParams { alpha: 0.5, beta: 0.5, num_trees: 1 }] {
                let total: f64 = trees
                    .iter()
                    .map(|t| tree_log_prior_full(&space, t, &p).exp())
                    .sum();
                assert!((total - 1.0).abs() < 1e-10, "T={lags}: {total}");
            }
        }
        assert_eq!(enumerate(1, 3).len(), 5);
        assert_eq!(enumerate(1, 4).len(), 15);
    }

    #[test]
    fn prior_sampler_matches_density() {
        let space = LagSpace::new(3);
        let p = TreePriorParams::default();
        let trees = enumerate(1, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let mut counts = vec![0usize; trees.len()];
        for _ in 0..n {
            let t = sample_prior_tree(&space, &p, &mut rng);
            counts[trees.iter().position(|x| *x == t).unwrap()] += 1;
        }
        for (t, c) in trees.iter().zip(counts) {
            let pr = tree_log_prior_full(&space, t, &p).exp();
            let se = (pr * (1.0 - pr) / n as f64).sqrt();
            assert!((c as f64 / n as f64 - pr).abs() < 4.0 * se + 1e-9);
        }
    }

    #[test]
    fn root_only_tree_can_only_grow() {
        let space = LagSpace::new(10);
        let t: DlmTopology = Node::Leaf(());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let p = propose_move(&space, &t, &MoveWeights::default(), &mut rng).unwrap();
            assert_eq!(p.kind, MoveKind::Grow);
        }
    }

    #[test]
    fn single_lag_pair_tree_has_no_moves() {
        let space = LagSpace::new(2);
        let t: DlmTopology = Node::split(1, Node::Leaf(()), Node::Leaf(()));
        let sites = move_sites(&space, &t);
        assert!(sites.growable.is_empty());
        assert!(sites.changeable.is_empty());
        assert_eq!(sites.nog.len(), 1);
    }

    #[test]
    fn move_kind_frequencies_follow_weights() {
        let space = LagSpace::new(12);
        let t: DlmTopology = Node::split(
            4,
            Node::split(2, Node::Leaf(()), Node::Leaf(())),
            Node::Leaf(()),
        );
        let w = MoveWeights::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[propose_move(&space, &t, &w, &mut rng).unwrap().kind.index()] += 1;
        }
        for (k, p) in [0.3, 0.3, 0.4].iter().enumerate() {
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((counts[k] as f64 / n as f64 - p).abs() < 3.0 * se, "{counts:?}");
        }
    }

    #[test]
    fn grow_then_prune_restores_topology() {
        let t: DlmTopology = Node::split(3, Node::Leaf(()), Node::Leaf(()));
        let grow = Proposal {
            kind: MoveKind::Grow,
            path: vec![true],
            rule: Some(6),
            log_q_ratio: 0.0,
        };
        let grown = apply_skeleton(&t, &grow);
        assert_eq!(intervals(&grown, 9), vec![(1, 3), (4, 6), (7, 9)]);
        let prune = Proposal {
            kind: MoveKind::Prune,
            path: vec![true],
            rule: None,
            log_q_ratio: 0.0,
        };
        assert_eq!(apply_skeleton(&grown, &prune), t);
    }

    /// The kernel's q ratios, checked by computing both directions directly
    /// from the move-site counts.
    #[test]
    fn grow_and_prune_ratios_are_reciprocal() {
        let space = LagSpace::new(8);
        let w = MoveWeights::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t: DlmTopology = Node::split(5, Node::Leaf(()), Node::Leaf(()));
        for _ in 0..200 {
            let p = propose_move(&space, &t, &w, &mut rng).unwrap();
            let after = apply_skeleton(&t, &p);
            // Find the reverse proposal's ratio by brute force over repeated draws.
            let reverse = match p.kind {
                MoveKind::Grow => Proposal {
                    kind: MoveKind::Prune,
                    path: p.path.clone(),
                    rule: None,
                    log_q_ratio: 0.0,
                },
                MoveKind::Prune => {
                    let Node::Split { rule, .. } = t.get(&p.path) else { unreachable!() };
                    Proposal {
                        kind: MoveKind::Grow,
                        path: p.path.clone(),
                        rule: Some(*rule),
                        log_q_ratio: 0.0,
                    }
                }
                MoveKind::Change => {
                    let Node::Split { rule, .. } = t.get(&p.path) else { unreachable!() };
                    Proposal {
                        kind: MoveKind::Change,
                        path: p.path.clone(),
                        rule: Some(*rule),
                        log_q_ratio: 0.0,
                    }
                }
            };
            assert_eq!(apply_skeleton(&after, &reverse), t);
            let q_rev = log_q_of(&space, &after, &reverse, &w);
            let q_fwd = log_q_of(&space, &t, &p, &w);
            assert!((p.log_q_ratio - (q_rev - q_fwd)).abs() < 1e-12);
        }
    }

    fn log_q_of(space: &LagSpace, t: &DlmTopology, p: &Proposal<usize>, w: &MoveWeights) -> f64 {
        let sites = move_sites(space, t);
        let kp = sites.kind_prob(p.kind, w).ln();
        match p.kind {
            MoveKind::Grow => {
                let region = region_at(space, t, &p.path);
                kp - (sites.growable.len() as f64).ln() + space.log_rule_prior(&region, p.rule.as_ref().unwrap())
            }
            MoveKind::Prune => kp - (sites.nog.len() as f64).ln(),
            MoveKind::Change => {
                let (_, _, alts) = sites.changeable.iter().find(|(cp, _, _)| *cp == p.path).unwrap();
                kp - (sites.changeable.len() as f64).ln() - (alts.len() as f64).ln()
            }
        }
    }
}
