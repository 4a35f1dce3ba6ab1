//! One Markov chain.
//!
//! Every model is an ensemble of members. A member is a modifier tree whose
//! leaves each carry one DLM tree (single exposure) or two (mixtures), plus
//! the exposure assigned to each DLM-tree slot, shared across its leaves.
//! Without heterogeneity the modifier tree stays a single leaf.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::fit::{DrawMatrix, FitMeta, InteractionBlock, IterationLog, MoveLedger, PosteriorFit};
use super::gaussian::LinearPosterior;
use super::model::{Family, InteractionMode, McmcControl, ModelSpec};
use super::pg::sample_polya_gamma;
use crate::data::{Dataset, ModifierCell};
use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::stats::log_sum_exp;
use crate::tree::{
    apply_skeleton, intervals, propose_move, sample_prior_tree, tree_log_prior_full, DlmNodeRecord, DlmTopology,
    LagSpace, MemberRecord, ModRegion, ModRule, ModifierSpace, ModifierTree, MoveKind, MoveWeights, Node, PayloadRecord, RuleSpace,
    TreePriorParams,
};

const SIGMA2_SHAPE: f64 = 0.001;
const SIGMA2_RATE: f64 = 0.001;
const MAX_VIOLATIONS: usize = 50;
const MAX_MODIFIERS: usize = 20;

#[derive(Debug, Clone)]
struct Payload {
    trees: Vec<DlmTopology>,
    coef: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Member {
    tree: Node<ModRule, Payload>,
    exposures: [usize; 2],
    leaf_rows: Vec<Vec<usize>>,
    fitted: Vec<f64>,
}

impl Member {
    fn payload(&self, leaf: usize) -> &Payload {
        self.tree.leaves()[leaf]
    }
    fn payload_mut(&mut self, leaf: usize) -> &mut Payload {
        self.tree.leaves_mut().swap_remove(leaf)
    }
}

/// Read-only pieces shared by every update.
struct Context<'a> {
    data: &'a Dataset,
    spec: &'a ModelSpec,
    control: &'a McmcControl,
    n: usize,
    lags: usize,
    exposures: usize,
    slots: usize,
    interactions: bool,
    /// Per exposure, row-major n × (lags + 1) cumulative sums over lags.
    prefix: Vec<Vec<f64>>,
    /// Per row, modifier values in `spec.modifiers` order.
    mod_rows: Vec<Vec<ModifierCell>>,
    lag_space: LagSpace,
    weights: MoveWeights,
    all_modifiers: Vec<bool>,
}

impl<'a> Context<'a> {
    fn new(data: &'a Dataset, spec: &'a ModelSpec, control: &'a McmcControl) -> Result<Self> {
        let n = data.rows();
        let lags = data.lags();
        let prefix = data
            .exposures()
            .iter()
            .map(|e| {
                let mut p = vec![0.0; n * (lags + 1)];
                for i in 0..n {
                    let row = e.row(i);
                    for t in 0..lags {
                        p[i * (lags + 1) + t + 1] = p[i * (lags + 1) + t] + row[t];
                    }
                }
                p
            })
            .collect();
        if spec.het && spec.modifiers.len() > MAX_MODIFIERS {
            return Err(Error::Unsupported(format!(
                "at most {MAX_MODIFIERS} modifiers are supported, got {}",
                spec.modifiers.len()
            )));
        }
        let mod_rows = if spec.het {
            let idx: Vec<usize> = spec
                .modifiers
                .iter()
                .map(|d| {
                    data.modifiers()
                        .index_of(&d.name)
                        .ok_or_else(|| Error::Spec(format!("modifier `{}` is not in the data", d.name)))
                })
                .collect::<Result<_>>()?;
            (0..n)
                .map(|i| idx.iter().map(|&j| data.modifiers().columns()[j].cell(i)).collect())
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            data,
            spec,
            control,
            n,
            lags,
            exposures: data.exposures().len(),
            slots: spec.slots(),
            interactions: spec.has_interactions(),
            prefix,
            mod_rows,
            lag_space: LagSpace::new(lags),
            weights: MoveWeights::default(),
            all_modifiers: vec![true; spec.modifiers.len()],
        })
    }

    fn coef_len(&self, trees: &[DlmTopology]) -> usize {
        let main: usize = trees.iter().map(Node::leaf_count).sum();
        if self.interactions && trees.len() == 2 {
            main + trees[0].leaf_count() * trees[1].leaf_count()
        } else {
            main
        }
    }

    /// Leaf design: interval sums of each tree's exposure, then products of
    /// the two trees' interval sums when interactions are modeled.
    fn design(&self, trees: &[DlmTopology], exposures: &[usize], rows: &[usize]) -> (Vec<f64>, usize) {
        let ivs: Vec<Vec<(usize, usize)>> = trees.iter().map(|t| intervals(t, self.lags)).collect();
        let k = self.coef_len(trees);
        let stride = self.lags + 1;
        let mut x = Vec::with_capacity(rows.len() * k);
        for &i in rows {
            let start = x.len();
            for (iv, &m) in ivs.iter().zip(exposures) {
                let p = &self.prefix[m][i * stride..(i + 1) * stride];
                x.extend(iv.iter().map(|&(lo, hi)| p[hi] - p[lo - 1]));
            }
            if self.interactions && trees.len() == 2 {
                let c1 = ivs[0].len();
                let c2 = ivs[1].len();
                for a in 0..c1 {
                    let u1 = x[start + a];
                    for b in 0..c2 {
                        let u2 = x[start + c1 + b];
                        x.push(u1 * u2);
                    }
                }
            }
        }
        (x, k)
    }

    fn split_rows(&self, rows: &[usize], rule: &ModRule) -> (Vec<usize>, Vec<usize>) {
        rows.iter()
            .partition(|&&i| rule.goes_left(&self.mod_rows[i]).expect("modifier rows are complete"))
    }

    fn payload_log_prior(&self, trees: &[DlmTopology]) -> f64 {
        trees
            .iter()
            .map(|t| tree_log_prior_full(&self.lag_space, t, &self.spec.tree_prior))
            .sum()
    }
}

/// Per-update quantities that stay fixed while one member is updated.
struct Conditional<'r> {
    r: &'r [f64],
    w: &'r [f64],
    sigma2: f64,
    tau2: f64,
}

impl Conditional<'_> {
    fn log_ml(&self, ctx: &Context, trees: &[DlmTopology], exposures: &[usize], rows: &[usize]) -> f64 {
        if rows.is_empty() || ctx.control.hooks.prior_only {
            return 0.0;
        }
        let (x, k) = ctx.design(trees, exposures, rows);
        LinearPosterior::new(&x, k, rows, self.w, self.r, self.sigma2, self.tau2).log_ml
    }
}

fn accept<G: Rng + ?Sized>(ctx: &Context, log_alpha: f64, rng: &mut G) -> bool {
    let u: f64 = rng.random();
    ctx.control.hooks.accept_all || u.ln() < log_alpha
}

fn record(ledger: &mut MoveLedger, kind: MoveKind, accepted: bool) {
    ledger.proposed[kind.index()] += 1;
    if accepted {
        ledger.accepted[kind.index()] += 1;
    } else {
        ledger.rejected[kind.index()] += 1;
    }
}

fn dlm_move<G: Rng + ?Sized>(
    ctx: &Context,
    member: &mut Member,
    leaf: usize,
    slot: usize,
    cond: &Conditional,
    rng: &mut G,
    ledger: &mut MoveLedger,
) {
    let exposures = &member.exposures[..ctx.slots];
    let payload = member.payload(leaf);
    let tree = &payload.trees[slot];
    let Some(prop) = propose_move(&ctx.lag_space, tree, &ctx.weights, rng) else {
        return;
    };
    let mut trees = payload.trees.clone();
    trees[slot] = apply_skeleton(tree, &prop);
    let rows = &member.leaf_rows[leaf];
    let prior = &ctx.spec.tree_prior;
    let log_alpha = cond.log_ml(ctx, &trees, exposures, rows) - cond.log_ml(ctx, &payload.trees, exposures, rows)
        + tree_log_prior_full(&ctx.lag_space, &trees[slot], prior)
        - tree_log_prior_full(&ctx.lag_space, tree, prior)
        + prop.log_q_ratio;
    let ok = accept(ctx, log_alpha, rng);
    record(ledger, prop.kind, ok);
    if ok {
        member.payload_mut(leaf).trees = trees;
    }
}

/// log g(child | parent): half the time the child copies the parent's DLM
/// trees, half the time it is a fresh draw from the tree prior.
fn log_copy_or_prior(ctx: &Context, child: &[DlmTopology], parent: &[DlmTopology]) -> f64 {
    let copy = if child == parent { 0.5 } else { 0.0 };
    (copy + 0.5 * ctx.payload_log_prior(child).exp()).ln()
}

/// Log probability that a grow at a leaf holding `parent` produces children
/// `(left, right)`: one side (chosen evenly) keeps the parent, the other is
/// drawn from [`log_copy_or_prior`].
fn log_grow_payload(ctx: &Context, left: &[DlmTopology], right: &[DlmTopology], parent: &[DlmTopology]) -> f64 {
    let mut terms = Vec::new();
    if left == parent {
        terms.push(0.5f64.ln() + log_copy_or_prior(ctx, right, parent));
    }
    if right == parent {
        terms.push(0.5f64.ln() + log_copy_or_prior(ctx, left, parent));
    }
    log_sum_exp(&terms)
}

/// Log probability that a prune of `(left, right)` keeps `parent`.
fn log_prune_payload(left: &[DlmTopology], right: &[DlmTopology], parent: &[DlmTopology]) -> f64 {
    let hits = usize::from(left == parent) + usize::from(right == parent);
    (0.5 * hits as f64).ln()
}

fn merge_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] < b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// A modifier tree reduced to what the inclusion prior needs. Each modifier
/// is included with probability `rho`; given the included set S, a split
/// picks a modifier uniformly among those in S with a usable candidate, and
/// a node with none of them cannot split. Summing over S leaves the tree's
/// prior as `local` plus a term that depends on the eligible sets only.
#[derive(Debug, Clone)]
struct ModShape {
    used: u32,
    /// Split probabilities and candidate counts, independent of S.
    local: f64,
    /// Eligible set at each split.
    splits: Vec<u32>,
    /// Eligible set and log stop probability at each leaf.
    leaves: Vec<(u32, f64)>,
}

fn eligible_mask(space: &ModifierSpace, region: &ModRegion) -> (u32, Vec<(usize, usize)>) {
    let el = space.eligible_modifiers(region);
    (el.iter().fold(0, |acc, (m, _)| acc | (1 << m)), el)
}

fn mod_shape<L>(space: &ModifierSpace, tree: &Node<ModRule, L>, prior: &TreePriorParams) -> ModShape {
    fn walk<L>(
        space: &ModifierSpace,
        node: &Node<ModRule, L>,
        region: &ModRegion,
        depth: usize,
        prior: &TreePriorParams,
        out: &mut ModShape,
    ) {
        let (mask, el) = eligible_mask(space, region);
        match node {
            Node::Leaf(_) => out.leaves.push((mask, (1.0 - prior.p_split(depth)).ln())),
            Node::Split { rule, left, right } => {
                let m = rule.modifier();
                let cands = el.iter().find(|(j, _)| *j == m).map_or(0, |(_, c)| *c);
                out.used |= 1 << m;
                out.local += prior.p_split(depth).ln() - (cands as f64).ln();
                out.splits.push(mask);
                let (lr, rr) = space.children(region, rule);
                walk(space, left, &lr, depth + 1, prior, out);
                walk(space, right, &rr, depth + 1, prior, out);
            }
        }
    }
    let mut out = ModShape {
        used: 0,
        local: 0.0,
        splits: Vec::new(),
        leaves: Vec::new(),
    };
    walk(space, tree, &space.root(), 0, prior, &mut out);
    out
}

/// Log of the sum over included sets S (non-empty, containing every used
/// modifier) of P(S) times the S-dependent factors of every tree's prior.
fn log_inclusion_mass(shapes: &[ModShape], modifiers: usize, rho: f64) -> f64 {
    let full: u32 = if modifiers == 32 { u32::MAX } else { (1u32 << modifiers) - 1 };
    let used = shapes.iter().fold(0, |acc, s| acc | s.used);
    let free = full & !used;
    let (lr, lnr) = (rho.ln(), (1.0 - rho).ln());
    let mut terms = Vec::new();
    let mut sub = free;
    loop {
        let set = used | sub;
        let k = set.count_ones() as usize;
        let absent = modifiers - k;
        if set != 0 && !(absent > 0 && rho >= 1.0) {
            let mut v = k as f64 * lr + if absent > 0 { absent as f64 * lnr } else { 0.0 };
            for s in shapes {
                for e in &s.splits {
                    v -= f64::from((set & e).count_ones()).ln();
                }
                for (e, l) in &s.leaves {
                    if set & e != 0 {
                        v += l;
                    }
                }
            }
            terms.push(v);
        }
        if sub == 0 {
            break;
        }
        sub = (sub - 1) & free;
    }
    log_sum_exp(&terms)
}

/// Replace every split on `from` with a rule on `to` drawn uniformly among
/// those valid in the split's new region. Returns the log ratio of reverse
/// to forward proposal probabilities, or `None` if some region has no rule
/// on `to`.
fn relabel<L, G: Rng + ?Sized>(
    space: &ModifierSpace,
    node: &mut Node<ModRule, L>,
    old: &ModRegion,
    new: &ModRegion,
    (from, to): (usize, usize),
    rng: &mut G,
) -> Option<f64> {
    let Node::Split { rule, left, right } = node else {
        return Some(0.0);
    };
    let (ol, or) = space.children(old, rule);
    let mut lq = 0.0;
    if rule.modifier() == from {
        let back = space.valid_for(old, from).len();
        let fwd = space.valid_for(new, to);
        if fwd.is_empty() {
            return None;
        }
        *rule = fwd[rng.random_range(0..fwd.len())].clone();
        lq += (fwd.len() as f64).ln() - (back as f64).ln();
    }
    let (nl, nr) = space.children(new, rule);
    lq += relabel(space, left, &ol, &nl, (from, to), rng)?;
    lq += relabel(space, right, &or, &nr, (from, to), rng)?;
    Some(lq)
}

fn partition_rows<L>(ctx: &Context, node: &Node<ModRule, L>, rows: Vec<usize>, out: &mut Vec<Vec<usize>>) {
    match node {
        Node::Leaf(_) => out.push(rows),
        Node::Split { rule, left, right } => {
            let (l, r) = ctx.split_rows(&rows, rule);
            partition_rows(ctx, left, l, out);
            partition_rows(ctx, right, r, out);
        }
    }
}

fn modifier_move<G: Rng + ?Sized>(
    ctx: &Context,
    member: &mut Member,
    a: usize,
    shapes: &mut [ModShape],
    cond: &Conditional,
    rng: &mut G,
    ledger: &mut MoveLedger,
) {
    let space = ModifierSpace::new(&ctx.spec.modifiers, &ctx.all_modifiers);
    let prior = &ctx.spec.tree_prior;
    let Some(prop) = propose_move(&space, &member.tree, &ctx.weights, rng) else {
        return;
    };
    let exposures = member.exposures;
    let exposures = &exposures[..ctx.slots];
    let skeleton = member.tree.skeleton();
    let (nmod, rho) = (ctx.spec.modifiers.len(), ctx.spec.modifier_sparsity);
    let mut shape = mod_shape(&space, &apply_skeleton(&skeleton, &prop), prior);
    let old = shapes[a].local + log_inclusion_mass(shapes, nmod, rho);
    std::mem::swap(&mut shapes[a], &mut shape);
    let tree_ratio = shapes[a].local + log_inclusion_mass(shapes, nmod, rho) - old;
    std::mem::swap(&mut shapes[a], &mut shape);
    let first = member.tree.leaf_offset(&prop.path);
    match prop.kind {
        MoveKind::Grow => {
            let rule = prop.rule.clone().unwrap();
            let (lrows, rrows) = ctx.split_rows(&member.leaf_rows[first], &rule);
            if lrows.is_empty() || rrows.is_empty() {
                record(ledger, prop.kind, false);
                return;
            }
            let parent = member.payload(first).trees.clone();
            let keep_left = rng.random::<bool>();
            let other: Vec<DlmTopology> = if rng.random::<bool>() {
                parent.clone()
            } else {
                (0..ctx.slots)
                    .map(|_| sample_prior_tree(&ctx.lag_space, prior, rng))
                    .collect()
            };
            let (lt, rt) = if keep_left {
                (parent.clone(), other)
            } else {
                (other, parent.clone())
            };
            let log_alpha = cond.log_ml(ctx, &lt, exposures, &lrows) + cond.log_ml(ctx, &rt, exposures, &rrows)
                - cond.log_ml(ctx, &parent, exposures, &member.leaf_rows[first])
                + tree_ratio
                + ctx.payload_log_prior(&lt)
                + ctx.payload_log_prior(&rt)
                - ctx.payload_log_prior(&parent)
                + prop.log_q_ratio
                + log_prune_payload(&lt, &rt, &parent)
                - log_grow_payload(ctx, &lt, &rt, &parent);
            let ok = accept(ctx, log_alpha, rng);
            record(ledger, prop.kind, ok);
            if ok {
                shapes[a] = shape;
                *member.tree.get_mut(&prop.path) = Node::split(
                    rule,
                    Node::Leaf(Payload {
                        trees: lt,
                        coef: Vec::new(),
                    }),
                    Node::Leaf(Payload {
                        trees: rt,
                        coef: Vec::new(),
                    }),
                );
                member.leaf_rows.splice(first..=first, [lrows, rrows]);
            }
        }
        MoveKind::Prune => {
            let (lt, rt) = (member.payload(first).trees.clone(), member.payload(first + 1).trees.clone());
            let keep_left = rng.random::<bool>();
            let parent = if keep_left { lt.clone() } else { rt.clone() };
            let (lrows, rrows) = (&member.leaf_rows[first], &member.leaf_rows[first + 1]);
            let rows = merge_sorted(lrows, rrows);
            let log_alpha = cond.log_ml(ctx, &parent, exposures, &rows)
                - cond.log_ml(ctx, &lt, exposures, lrows)
                - cond.log_ml(ctx, &rt, exposures, rrows)
                + tree_ratio
                + ctx.payload_log_prior(&parent)
                - ctx.payload_log_prior(&lt)
                - ctx.payload_log_prior(&rt)
                + prop.log_q_ratio
                + log_grow_payload(ctx, &lt, &rt, &parent)
                - log_prune_payload(&lt, &rt, &parent);
            let ok = accept(ctx, log_alpha, rng);
            record(ledger, prop.kind, ok);
            if ok {
                shapes[a] = shape;
                *member.tree.get_mut(&prop.path) = Node::Leaf(Payload {
                    trees: parent,
                    coef: Vec::new(),
                });
                member.leaf_rows.splice(first..=first + 1, [rows]);
            }
        }
        MoveKind::Change => {
            let rule = prop.rule.clone().unwrap();
            let rows = merge_sorted(&member.leaf_rows[first], &member.leaf_rows[first + 1]);
            let (lrows, rrows) = ctx.split_rows(&rows, &rule);
            if lrows.is_empty() || rrows.is_empty() {
                record(ledger, prop.kind, false);
                return;
            }
            let (lt, rt) = (&member.payload(first).trees, &member.payload(first + 1).trees);
            let log_alpha = cond.log_ml(ctx, lt, exposures, &lrows) + cond.log_ml(ctx, rt, exposures, &rrows)
                - cond.log_ml(ctx, lt, exposures, &member.leaf_rows[first])
                - cond.log_ml(ctx, rt, exposures, &member.leaf_rows[first + 1])
                + tree_ratio
                + prop.log_q_ratio;
            let ok = accept(ctx, log_alpha, rng);
            record(ledger, prop.kind, ok);
            if ok {
                shapes[a] = shape;
                if let Node::Split { rule: r, .. } = member.tree.get_mut(&prop.path) {
                    *r = rule;
                }
                member.leaf_rows[first] = lrows;
                member.leaf_rows[first + 1] = rrows;
            }
        }
    }
}

/// Draw one slot's exposure from its full conditional: the marginal
/// likelihood of the member under each exposure times its selection weight.
fn exposure_gibbs<G: Rng + ?Sized>(
    ctx: &Context,
    member: &mut Member,
    slot: usize,
    log_select: &[f64],
    cond: &Conditional,
    rng: &mut G,
) {
    let partner = member.exposures[1 - slot];
    let support: Vec<usize> = (0..ctx.exposures)
        .filter(|m| !(ctx.spec.interaction_mode == InteractionMode::Noself && *m == partner))
        .collect();
    let leaves = member.tree.leaves();
    let logw: Vec<f64> = support
        .iter()
        .map(|&m| {
            let mut exps = member.exposures;
            exps[slot] = m;
            leaves
                .iter()
                .zip(&member.leaf_rows)
                .map(|(p, rows)| cond.log_ml(ctx, &p.trees, &exps, rows))
                .sum::<f64>()
                + log_select[m]
        })
        .collect();
    member.exposures[slot] = support[sample_log_weights(&logw, rng)];
}

fn sample_log_weights<G: Rng + ?Sized>(logw: &[f64], rng: &mut G) -> usize {
    let norm = log_sum_exp(logw);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, lw) in logw.iter().enumerate() {
        acc += (lw - norm).exp();
        if u < acc {
            return k;
        }
    }
    logw.len() - 1
}

/// Draw every leaf's coefficients and rebuild the member's fitted values.
fn draw_coefficients<G: Rng + ?Sized>(ctx: &Context, member: &mut Member, cond: &Conditional, rng: &mut G) {
    member.fitted.iter_mut().for_each(|f| *f = 0.0);
    let exposures = member.exposures;
    let exposures = &exposures[..ctx.slots];
    let rows_by_leaf = member.leaf_rows.clone();
    for (payload, rows) in member.tree.leaves_mut().into_iter().zip(&rows_by_leaf) {
        let (x, k) = ctx.design(&payload.trees, exposures, rows);
        let post = LinearPosterior::new(&x, k, rows, cond.w, cond.r, cond.sigma2, cond.tau2);
        payload.coef = post.draw(rng);
        for (xi, &i) in x.chunks_exact(k).zip(rows) {
            member.fitted[i] = xi.iter().zip(&payload.coef).map(|(a, b)| a * b).sum();
        }
    }
}

/// Slice sampler on ξ = log τ for the half-Cauchy(0, s) prior given `k`
/// N(0, τ²) coefficients with sum of squares `ss`.
fn slice_log_tau<G: Rng + ?Sized>(xi0: f64, k: usize, ss: f64, scale: f64, rng: &mut G) -> f64 {
    let logf = |xi: f64| -((k as f64) - 1.0) * xi - 0.5 * ss * (-2.0 * xi).exp() - (1.0 + (2.0 * xi).exp() / (scale * scale)).ln();
    let width = 1.0;
    let level = logf(xi0) + rng.random::<f64>().ln();
    let mut lo = xi0 - width * rng.random::<f64>();
    let mut hi = lo + width;
    for _ in 0..50 {
        if logf(lo) <= level {
            break;
        }
        lo -= width;
    }
    for _ in 0..50 {
        if logf(hi) <= level {
            break;
        }
        hi += width;
    }
    loop {
        let xi = lo + (hi - lo) * rng.random::<f64>();
        if logf(xi) > level {
            return xi;
        }
        if xi < xi0 {
            lo = xi;
        } else {
            hi = xi;
        }
    }
}

/// Log of a Gamma(shape, 1) draw, stable for tiny shapes.
fn log_gamma_draw<G: Rng + ?Sized>(shape: f64, rng: &mut G) -> f64 {
    if shape >= 1.0 {
        Gamma::new(shape, 1.0).unwrap().sample(rng).ln()
    } else {
        let g = Gamma::new(shape + 1.0, 1.0).unwrap().sample(rng).ln();
        g + rng.random::<f64>().ln() / shape
    }
}

pub(crate) struct Chain<'a> {
    ctx: Context<'a>,
    rng: ChaCha8Rng,
    members: Vec<Member>,
    gamma: Vec<f64>,
    sigma2: f64,
    tau2: f64,
    log_select: Vec<f64>,
    shapes: Vec<ModShape>,
    /// Working response and weights (the outcome and ones for Gaussian).
    z: Vec<f64>,
    w: Vec<f64>,
    r: Vec<f64>,
    ztwz: Option<Cholesky>,
    violations: Vec<String>,
    violation_count: usize,
}

impl<'a> Chain<'a> {
    pub(crate) fn new(data: &'a Dataset, spec: &'a ModelSpec, control: &'a McmcControl, seed: u64) -> Result<Self> {
        spec.validate_for(data)?;
        control.validate()?;
        let ctx = Context::new(data, spec, control)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = ctx.n;
        let m = ctx.exposures;
        let members: Vec<Member> = (0..spec.tree_prior.num_trees)
            .map(|_| {
                let e1 = rng.random_range(0..m);
                let mut e2 = rng.random_range(0..m);
                if spec.interaction_mode == InteractionMode::Noself {
                    while e2 == e1 {
                        e2 = rng.random_range(0..m);
                    }
                }
                let trees = vec![Node::Leaf(()); ctx.slots];
                let coef = vec![0.0; ctx.coef_len(&trees)];
                Member {
                    tree: Node::Leaf(Payload { trees, coef }),
                    exposures: [e1, e2],
                    leaf_rows: vec![(0..n).collect()],
                    fitted: vec![0.0; n],
                }
            })
            .collect();
        let (z, w) = match spec.family {
            Family::Gaussian => (data.outcome().to_vec(), vec![1.0; n]),
            Family::Logit => (data.outcome().iter().map(|y| (y - 0.5) / 0.25).collect(), vec![0.25; n]),
        };
        let design = data.design();
        let p = design.cols();
        let ztwz = |w: &[f64]| {
            let mut a = vec![0.0; p * p];
            for i in 0..n {
                let zi = design.row(i);
                for j in 0..p {
                    for k in 0..=j {
                        a[j * p + k] += w[i] * zi[j] * zi[k];
                    }
                }
            }
            for j in 0..p {
                for k in 0..j {
                    a[k * p + j] = a[j * p + k];
                }
            }
            Cholesky::new(&a, p).ok_or_else(|| Error::RankDeficient("design is singular".into()))
        };
        let chol = ztwz(&w)?;
        let mut ztz_r = vec![0.0; p];
        for i in 0..n {
            for (j, zij) in design.row(i).iter().enumerate() {
                ztz_r[j] += w[i] * zij * z[i];
            }
        }
        let gamma = chol.solve(&ztz_r);
        let r: Vec<f64> = (0..n)
            .map(|i| z[i] - design.row(i).iter().zip(&gamma).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let sigma2 = match (control.hooks.fixed_sigma2, spec.family) {
            (Some(s), _) => s,
            (None, Family::Gaussian) => {
                let ss: f64 = r.iter().map(|v| v * v).sum();
                (ss / (n.saturating_sub(p).max(1)) as f64).max(1e-8)
            }
            (None, Family::Logit) => 1.0,
        };
        let tau2 = control.hooks.fixed_tau2.unwrap_or(1.0);
        let shapes = if spec.het {
            let space = ModifierSpace::new(&spec.modifiers, &ctx.all_modifiers);
            members.iter().map(|m| mod_shape(&space, &m.tree, &spec.tree_prior)).collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            log_select: vec![-(m as f64).ln(); m],
            shapes,
            ztwz: (spec.family == Family::Gaussian).then_some(chol),
            ctx,
            rng,
            members,
            gamma,
            sigma2,
            tau2,
            z,
            w,
            r,
            violations: Vec::new(),
            violation_count: 0,
        })
    }

    fn update_member(&mut self, a: usize, log: &mut IterationLog) {
        let Chain {
            ctx,
            rng,
            members,
            sigma2,
            tau2,
            log_select,
            shapes,
            w,
            r,
            ..
        } = self;
        let member = &mut members[a];
        for (ri, fi) in r.iter_mut().zip(&member.fitted) {
            *ri += fi;
        }
        if !ctx.control.hooks.freeze_trees {
            let cond = Conditional {
                r,
                w,
                sigma2: *sigma2,
                tau2: *tau2,
            };
            if ctx.spec.het {
                modifier_move(ctx, member, a, shapes, &cond, rng, &mut log.modifier);
            }
            for leaf in 0..member.leaf_rows.len() {
                for slot in 0..ctx.slots {
                    dlm_move(ctx, member, leaf, slot, &cond, rng, &mut log.dlm);
                }
            }
            if ctx.spec.mixture {
                for slot in 0..2 {
                    exposure_gibbs(ctx, member, slot, log_select, &cond, rng);
                }
            }
            draw_coefficients(ctx, member, &cond, rng);
        }
        for (ri, fi) in r.iter_mut().zip(&member.fitted) {
            *ri -= fi;
        }
    }

    fn zgamma(&self, i: usize) -> f64 {
        self.ctx.data.design().row(i).iter().zip(&self.gamma).map(|(a, b)| a * b).sum()
    }

    fn update_gamma(&mut self) {
        let n = self.ctx.n;
        let design = self.ctx.data.design();
        let p = design.cols();
        for i in 0..n {
            let zg = self.zgamma(i);
            self.r[i] += zg;
        }
        let owned;
        let chol = match &self.ztwz {
            Some(c) => c,
            None => {
                let mut a = vec![0.0; p * p];
                for i in 0..n {
                    let zi = design.row(i);
                    for j in 0..p {
                        for k in 0..=j {
                            a[j * p + k] += self.w[i] * zi[j] * zi[k];
                        }
                    }
                }
                for j in 0..p {
                    for k in 0..j {
                        a[k * p + j] = a[j * p + k];
                    }
                }
                owned = Cholesky::new(&a, p).expect("weighted design is positive definite");
                &owned
            }
        };
        let mut b = vec![0.0; p];
        for i in 0..n {
            for (j, zij) in design.row(i).iter().enumerate() {
                b[j] += self.w[i] * zij * self.r[i];
            }
        }
        let mean = chol.solve(&b);
        let mut e: Vec<f64> = (0..p).map(|_| self.rng.sample(StandardNormal)).collect();
        chol.backward(&mut e);
        let sd = self.sigma2.sqrt();
        self.gamma = mean.iter().zip(&e).map(|(m, e)| m + sd * e).collect();
        for i in 0..n {
            let zg = self.zgamma(i);
            self.r[i] -= zg;
        }
    }

    fn update_sigma2(&mut self) {
        if let Some(s) = self.ctx.control.hooks.fixed_sigma2 {
            self.sigma2 = s;
            return;
        }
        if self.ctx.spec.family != Family::Gaussian {
            return;
        }
        let ss: f64 = self.r.iter().zip(&self.w).map(|(r, w)| w * r * r).sum();
        let shape = SIGMA2_SHAPE + 0.5 * self.ctx.n as f64;
        let rate = SIGMA2_RATE + 0.5 * ss;
        let g = Gamma::new(shape, 1.0 / rate).unwrap().sample(&mut self.rng);
        self.sigma2 = 1.0 / g;
    }

    fn update_polya_gamma(&mut self) {
        if self.ctx.spec.family != Family::Logit {
            return;
        }
        let y = self.ctx.data.outcome();
        for i in 0..self.ctx.n {
            let eta = self.z[i] - self.r[i];
            let omega = sample_polya_gamma(1.0, eta, &mut self.rng);
            self.w[i] = omega;
            self.z[i] = (y[i] - 0.5) / omega;
            self.r[i] = self.z[i] - eta;
        }
    }

    fn update_tau2(&mut self) {
        if let Some(t) = self.ctx.control.hooks.fixed_tau2 {
            self.tau2 = t;
            return;
        }
        if self.ctx.control.hooks.freeze_trees {
            return;
        }
        let (mut k, mut ss) = (0usize, 0.0);
        for m in &self.members {
            for p in m.tree.leaves() {
                k += p.coef.len();
                ss += p.coef.iter().map(|c| c * c).sum::<f64>();
            }
        }
        let xi = slice_log_tau(0.5 * self.tau2.ln(), k, ss, self.ctx.spec.shrinkage.tau_scale, &mut self.rng);
        self.tau2 = (2.0 * xi).exp();
    }

    fn selection_counts(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.ctx.exposures];
        if self.ctx.spec.mixture {
            for m in &self.members {
                counts[m.exposures[0]] += 1;
                counts[m.exposures[1]] += 1;
            }
        }
        counts
    }

    fn update_selection(&mut self) {
        if !self.ctx.spec.mixture {
            return;
        }
        let counts = self.selection_counts();
        let m = self.ctx.exposures as f64;
        let logs: Vec<f64> = counts
            .iter()
            .map(|&c| log_gamma_draw(self.ctx.spec.kappa / m + c as f64, &mut self.rng))
            .collect();
        let norm = log_sum_exp(&logs);
        self.log_select = logs.iter().map(|l| l - norm).collect();
    }

    /// Move every split on one used modifier over to an unused one, across
    /// all members at once, keeping each leaf's DLM trees and effects.
    fn swap_modifier(&mut self) {
        let ctx = &self.ctx;
        if !ctx.spec.het || ctx.control.hooks.freeze_trees {
            return;
        }
        let nmod = ctx.spec.modifiers.len();
        let used = self.shapes.iter().fold(0u32, |acc, s| acc | s.used);
        let (on, off): (Vec<usize>, Vec<usize>) = (0..nmod).partition(|j| used >> j & 1 == 1);
        if on.is_empty() || off.is_empty() {
            return;
        }
        let from = on[self.rng.random_range(0..on.len())];
        let to = off[self.rng.random_range(0..off.len())];
        let space = ModifierSpace::new(&ctx.spec.modifiers, &ctx.all_modifiers);
        let prior = &ctx.spec.tree_prior;
        let root = space.root();
        let mut log_alpha = 0.0;
        let mut shapes = self.shapes.clone();
        let mut r = self.r.clone();
        let mut changed = Vec::new();
        for (a, member) in self.members.iter().enumerate() {
            if shapes[a].used >> from & 1 == 0 {
                continue;
            }
            let mut tree = member.tree.clone();
            let Some(lq) = relabel(&space, &mut tree, &root, &root, (from, to), &mut self.rng) else {
                return;
            };
            let mut rows = Vec::new();
            partition_rows(ctx, &tree, (0..ctx.n).collect(), &mut rows);
            if rows.iter().any(Vec::is_empty) {
                return;
            }
            let exposures = &member.exposures[..ctx.slots];
            let mut fitted = vec![0.0; ctx.n];
            for (payload, rows) in tree.leaves().into_iter().zip(&rows) {
                let (x, k) = ctx.design(&payload.trees, exposures, rows);
                for (xi, &i) in x.chunks_exact(k).zip(rows) {
                    fitted[i] = xi.iter().zip(&payload.coef).map(|(a, b)| a * b).sum();
                }
            }
            for ((ri, old), new) in r.iter_mut().zip(&member.fitted).zip(&fitted) {
                *ri += old - new;
            }
            log_alpha += lq - shapes[a].local;
            shapes[a] = mod_shape(&space, &tree, prior);
            log_alpha += shapes[a].local;
            changed.push((a, tree, rows, fitted));
        }
        let rho = ctx.spec.modifier_sparsity;
        log_alpha += log_inclusion_mass(&shapes, nmod, rho) - log_inclusion_mass(&self.shapes, nmod, rho);
        if !ctx.control.hooks.prior_only {
            let ss = |r: &[f64]| r.iter().zip(&self.w).map(|(v, w)| w * v * v).sum::<f64>();
            log_alpha -= (ss(&r) - ss(&self.r)) / (2.0 * self.sigma2);
        }
        if !accept(ctx, log_alpha, &mut self.rng) {
            return;
        }
        for (a, tree, rows, fitted) in changed {
            let m = &mut self.members[a];
            m.tree = tree;
            m.leaf_rows = rows;
            m.fitted = fitted;
        }
        self.shapes = shapes;
        self.r = r;
    }

    fn check_invariants(&mut self) {
        let mut found = Vec::new();
        let lags = self.ctx.lags;
        for (a, m) in self.members.iter().enumerate() {
            for p in m.tree.leaves() {
                for t in &p.trees {
                    let iv = intervals(t, lags);
                    let contiguous = iv.first().map(|f| f.0) == Some(1)
                        && iv.last().map(|l| l.1) == Some(lags)
                        && iv.windows(2).all(|w| w[0].1 + 1 == w[1].0)
                        && iv.iter().all(|(lo, hi)| lo <= hi);
                    if !contiguous {
                        found.push(format!("member {a}: terminal intervals {iv:?} do not partition 1..={lags}"));
                    }
                }
                let expected = if self.ctx.control.hooks.freeze_trees {
                    p.coef.len()
                } else {
                    self.ctx.coef_len(&p.trees)
                };
                if p.coef.len() != expected {
                    found.push(format!(
                        "member {a}: {} effects for a {expected}-cell structure",
                        p.coef.len()
                    ));
                }
            }
            let mut covered: Vec<usize> = m.leaf_rows.iter().flatten().copied().collect();
            covered.sort_unstable();
            if covered != (0..self.ctx.n).collect::<Vec<_>>() {
                found.push(format!("member {a}: subgroups do not partition the rows"));
            }
            if self.ctx.spec.interaction_mode == InteractionMode::Noself && m.exposures[0] == m.exposures[1] {
                found.push(format!("member {a}: no-self pair assigned one exposure twice"));
            }
        }
        for i in 0..self.ctx.n {
            let total: f64 = self.members.iter().map(|m| m.fitted[i]).sum();
            let expected = self.z[i] - self.zgamma(i) - total;
            if (expected - self.r[i]).abs() > 1e-10 {
                found.push(format!("row {i}: residual {} differs from {expected}", self.r[i]));
                break;
            }
        }
        if self.ctx.spec.mixture {
            let sum: u32 = self.selection_counts().iter().sum();
            if sum as usize != 2 * self.members.len() {
                found.push(format!("selection counts sum to {sum}"));
            }
        }
        self.violation_count += found.len();
        let room = MAX_VIOLATIONS.saturating_sub(self.violations.len());
        self.violations.extend(found.into_iter().take(room));
    }

    /// Main effect of each exposure, averaged over rows for modifier trees.
    fn theta(&self) -> Vec<Vec<f64>> {
        let lags = self.ctx.lags;
        let n = self.ctx.n as f64;
        let mut out = vec![vec![0.0; lags]; self.ctx.exposures];
        for m in &self.members {
            for (p, rows) in m.tree.leaves().into_iter().zip(&m.leaf_rows) {
                if p.coef.is_empty() || rows.is_empty() {
                    continue;
                }
                let share = rows.len() as f64 / n;
                let mut offset = 0;
                for (slot, t) in p.trees.iter().enumerate() {
                    let e = m.exposures[slot];
                    for (c, (lo, hi)) in intervals(t, lags).into_iter().enumerate() {
                        let v = p.coef[offset + c];
                        for l in lo..=hi {
                            out[e][l - 1] += share * v;
                        }
                    }
                    offset += t.leaf_count();
                }
            }
        }
        out
    }

    fn interaction_blocks(&self) -> Vec<InteractionBlock> {
        let mut out = Vec::new();
        if !self.ctx.interactions || self.ctx.spec.het {
            return out;
        }
        let mode = self.ctx.spec.interaction_mode;
        for m in &self.members {
            let p = m.payload(0);
            if p.coef.is_empty() {
                continue;
            }
            let (e1, e2) = (m.exposures[0], m.exposures[1]);
            let pair = mode.pair_index(self.ctx.exposures, e1, e2).expect("assignment respects the mode");
            let i1 = intervals(&p.trees[0], self.ctx.lags);
            let i2 = intervals(&p.trees[1], self.ctx.lags);
            let base = i1.len() + i2.len();
            for (a, &r1) in i1.iter().enumerate() {
                for (b, &r2) in i2.iter().enumerate() {
                    let value = p.coef[base + a * i2.len() + b];
                    let (lags1, lags2) = if e1 <= e2 { (r1, r2) } else { (r2, r1) };
                    out.push(InteractionBlock {
                        pair,
                        lags1,
                        lags2,
                        value,
                    });
                }
            }
        }
        out
    }

    fn member_records(&self) -> Vec<MemberRecord> {
        let lags = self.ctx.lags;
        self.members
            .iter()
            .map(|m| {
                let tree = ModifierTree {
                    root: m.tree.map_leaves(&mut |p: &Payload| {
                        let mut offset = 0;
                        let trees: Vec<Vec<DlmNodeRecord>> = p
                            .trees
                            .iter()
                            .map(|t| {
                                let c = t.leaf_count();
                                let coef = if p.coef.is_empty() {
                                    vec![0.0; c]
                                } else {
                                    p.coef[offset..offset + c].to_vec()
                                };
                                offset += c;
                                crate::tree::DlmTree::from_topology(lags, t, &coef).to_records()
                            })
                            .collect();
                        let omega = if p.coef.len() > offset { p.coef[offset..].to_vec() } else { Vec::new() };
                        PayloadRecord { trees, omega }
                    }),
                };
                MemberRecord::from_tree(m.exposures[..self.ctx.slots].to_vec(), &tree)
            })
            .collect()
    }

    fn contribution_variance(&self) -> f64 {
        let n = self.ctx.n;
        let total: Vec<f64> = (0..n).map(|i| self.members.iter().map(|m| m.fitted[i]).sum()).collect();
        let mean = total.iter().sum::<f64>() / n as f64;
        total.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64
    }

    fn iteration(&mut self) -> IterationLog {
        let mut log = IterationLog::default();
        for a in 0..self.members.len() {
            self.update_member(a, &mut log);
        }
        self.swap_modifier();
        self.update_gamma();
        self.update_sigma2();
        self.update_polya_gamma();
        self.update_tau2();
        self.update_selection();
        if self.ctx.control.hooks.debug_checks {
            self.check_invariants();
        }
        let a = self.members.len() as f64;
        let dlm_trees: usize = self.members.iter().map(|m| m.leaf_rows.len() * self.ctx.slots).sum();
        log.mean_dlm_leaves = self
            .members
            .iter()
            .flat_map(|m| m.tree.leaves())
            .flat_map(|p| p.trees.iter())
            .map(|t| t.leaf_count() as f64)
            .sum::<f64>()
            / dlm_trees as f64;
        log.mean_modifier_leaves = self.members.iter().map(|m| m.leaf_rows.len() as f64).sum::<f64>() / a;
        log
    }

    pub(crate) fn run(mut self) -> PosteriorFit {
        let control = self.ctx.control;
        let data = self.ctx.data;
        let spec = self.ctx.spec;
        let retained = control.retained();
        let p = data.design().cols();
        let lags = self.ctx.lags;
        let m = self.ctx.exposures;
        let mut fit = PosteriorFit {
            meta: FitMeta::new(spec, control, data),
            gamma_draws: DrawMatrix::with_capacity(p, retained),
            sigma2_draws: Vec::with_capacity(retained),
            tau2_draws: Vec::with_capacity(retained),
            theta_draws: (0..m).map(|_| DrawMatrix::with_capacity(lags, retained)).collect(),
            interaction_draws: Vec::new(),
            exposure_selection_counts: DrawMatrix::with_capacity(m, retained),
            modifier_usage: DrawMatrix::with_capacity(spec.modifiers.len(), retained),
            contribution_var: Vec::with_capacity(retained),
            tree_logs: Vec::with_capacity(control.n_iter),
            het_records: Vec::new(),
            invariant_violations: Vec::new(),
            violation_count: 0,
            exposures: data.exposures().to_vec(),
            modifiers: data.modifiers().clone(),
        };
        let total = control.n_burn + control.n_iter;
        let report_every = (total / 20).max(1);
        let mut rolling = (0u64, 0u64);
        for it in 1..=total {
            let log = self.iteration();
            rolling.0 += log.dlm.accepted.iter().map(|v| u64::from(*v)).sum::<u64>();
            rolling.1 += log.dlm.proposed.iter().map(|v| u64::from(*v)).sum::<u64>();
            if control.progress && it % report_every == 0 {
                let rate = if rolling.1 > 0 { rolling.0 as f64 / rolling.1 as f64 } else { 0.0 };
                eprintln!("iteration {it}/{total}  tree acceptance {rate:.3}");
                rolling = (0, 0);
            }
            if it <= control.n_burn {
                continue;
            }
            fit.tree_logs.push(log);
            let k = it - control.n_burn;
            if k % control.n_thin != 0 {
                continue;
            }
            fit.gamma_draws.push_row(&self.gamma);
            if spec.family == Family::Gaussian {
                fit.sigma2_draws.push(self.sigma2);
            }
            fit.tau2_draws.push(self.tau2);
            for (e, th) in self.theta().into_iter().enumerate() {
                fit.theta_draws[e].push_row(&th);
            }
            if self.ctx.interactions && !spec.het {
                fit.interaction_draws.push(self.interaction_blocks());
            }
            fit.exposure_selection_counts.push_row(&self.selection_counts());
            let usage: Vec<u8> = (0..spec.modifiers.len())
                .map(|j| {
                    u8::from(self.members.iter().any(|mem| {
                        fn uses<L>(n: &Node<ModRule, L>, j: usize) -> bool {
                            match n {
                                Node::Leaf(_) => false,
                                Node::Split { rule, left, right } => {
                                    rule.modifier() == j || uses(left, j) || uses(right, j)
                                }
                            }
                        }
                        uses(&mem.tree, j)
                    }))
                })
                .collect();
            fit.modifier_usage.push_row(&usage);
            fit.contribution_var.push(self.contribution_variance());
            if spec.het {
                fit.het_records.push(self.member_records());
            }
        }
        fit.invariant_violations = std::mem::take(&mut self.violations);
        fit.violation_count = self.violation_count;
        fit
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ModifierDef, ModifierKind, SplitCandidates};

    fn defs() -> Vec<ModifierDef> {
        let cat = |name: &str, k: usize, subsets: Vec<u64>| ModifierDef {
            name: name.into(),
            kind: ModifierKind::Categorical {
                levels: (0..k).map(|i| i.to_string()).collect(),
            },
            candidates: SplitCandidates::Subsets(subsets),
        };
        vec![
            cat("sex", 2, vec![0b01]),
            ModifierDef {
                name: "age".into(),
                kind: ModifierKind::Continuous,
                candidates: SplitCandidates::Thresholds(vec![30.0, 40.0, 50.0]),
            },
            cat("group", 3, vec![0b001, 0b010, 0b100]),
            ModifierDef {
                name: "bmi".into(),
                kind: ModifierKind::Continuous,
                candidates: SplitCandidates::Thresholds(vec![25.0]),
            },
        ]
    }

    #[test]
    fn collapsed_inclusion_matches_enumeration() {
        let defs = defs();
        let leaf = || Node::Leaf(());
        let trees: Vec<Node<ModRule, ()>> = vec![
            Node::split(
                ModRule::Threshold { modifier: 1, value: 40.0 },
                Node::split(ModRule::Subset { modifier: 0, mask: 0b01 }, leaf(), leaf()),
                leaf(),
            ),
            leaf(),
            Node::split(ModRule::Subset { modifier: 2, mask: 0b010 }, leaf(), leaf()),
        ];
        let prior = TreePriorParams::default();
        for rho in [0.5, 0.2, 1.0] {
            let all = vec![true; defs.len()];
            let space = ModifierSpace::new(&defs, &all);
            let shapes: Vec<ModShape> = trees.iter().map(|t| mod_shape(&space, t, &prior)).collect();
            let got = shapes.iter().map(|s| s.local).sum::<f64>() + log_inclusion_mass(&shapes, defs.len(), rho);
            let mut terms = Vec::new();
            for set in 1u32..16 {
                if set & 0b0111 != 0b0111 {
                    continue;
                }
                let incl: Vec<bool> = (0..4).map(|j| set & (1 << j) != 0).collect();
                let k = set.count_ones() as i32;
                let p_set = rho.powi(k) * (1.0 - rho).powi(4 - k);
                if p_set == 0.0 {
                    continue;
                }
                let space = ModifierSpace::new(&defs, &incl);
                terms.push(p_set.ln() + trees.iter().map(|t| tree_log_prior_full(&space, t, &prior)).sum::<f64>());
            }
            let want = log_sum_exp(&terms);
            assert!((got - want).abs() < 1e-10, "rho {rho}: {got} vs {want}");
        }
    }

    #[test]
    fn collapsed_inclusion_without_splits_excludes_empty_set() {
        let defs = defs();
        let all = vec![true; defs.len()];
        let space = ModifierSpace::new(&defs, &all);
        let prior = TreePriorParams::default();
        let shapes = vec![mod_shape(&space, &Node::<ModRule, ()>::Leaf(()), &prior)];
        let stop = (1.0 - prior.p_split(0)).ln();
        let want = (1.0 - 0.5f64.powi(4)).ln() + stop;
        assert!((log_inclusion_mass(&shapes, 4, 0.5) - want).abs() < 1e-12);
    }

    #[test]
    fn sorted_merge() {
        assert_eq!(merge_sorted(&[1, 4, 9], &[0, 5]), vec![0, 1, 4, 5, 9]);
        assert_eq!(merge_sorted(&[], &[2]), vec![2]);
    }

    #[test]
    fn payload_proposal_probabilities() {
        // Grow then prune must carry reciprocal payload probabilities: the
        // grow side sums to one over every child pair reachable from one
        // parent when enumerated over copies and prior draws.
        let lags = 3;
        let data = crate::data::Dataset::new(
            vec![0.0, 1.0, 2.0],
            crate::data::Design::intercept_only(3),
            vec![crate::data::ExposureMatrix::new("x", 3, lags, vec![1.0; 9]).unwrap()],
            Default::default(),
        )
        .unwrap();
        let spec = ModelSpec::tdlm();
        let control = McmcControl::default();
        let ctx = Context::new(&data, &spec, &control).unwrap();
        let all: Vec<DlmTopology> = vec![
            Node::Leaf(()),
            Node::split(1, Node::Leaf(()), Node::Leaf(())),
            Node::split(2, Node::Leaf(()), Node::Leaf(())),
            Node::split(1, Node::Leaf(()), Node::split(2, Node::Leaf(()), Node::Leaf(()))),
            Node::split(2, Node::split(1, Node::Leaf(()), Node::Leaf(())), Node::Leaf(())),
        ];
        let parent = vec![all[1].clone()];
        let mut total = 0.0;
        for a in &all {
            for b in &all {
                let (l, r) = (vec![a.clone()], vec![b.clone()]);
                if l == parent || r == parent {
                    total += log_grow_payload(&ctx, &l, &r, &parent).exp();
                }
            }
        }
        assert!((total - 1.0).abs() < 1e-12, "{total}");
    }
}
