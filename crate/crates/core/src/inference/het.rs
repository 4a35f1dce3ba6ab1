//! Individualized and subgroup effects from stored modifier trees.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::LagTable;
use crate::data::{ModifierCell, ModifierColumn, ModifierKind};
use crate::error::{Error, Result};
use crate::mcmc::{DrawMatrix, PosteriorFit};
use crate::stats::{quantile, sorted_copy};
use crate::tree::{assign_subgroup, ModRule, Node};

/// A modifier value as supplied by a user: a number or a level label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModifierValue {
    Real(f64),
    Level(String),
}

struct Member {
    tree: Node<ModRule, ()>,
    /// Per leaf, exposure-major lag curves (M × T).
    curves: Vec<Vec<f64>>,
}

/// Parsed modifier-tree ensembles for every retained draw, ready for
/// repeated individualized and subgroup queries.
pub struct HetDraws {
    lags: usize,
    exposures: Vec<String>,
    draws: Vec<Vec<Member>>,
}

impl HetDraws {
    pub fn new(fit: &PosteriorFit) -> Result<Self> {
        if !fit.meta.spec.het {
            return Err(Error::InvalidArgument("heterogeneous effects need a modifier-tree fit".into()));
        }
        let lags = fit.meta.lags;
        let m = fit.meta.exposure_names.len();
        let draws = fit
            .het_records
            .iter()
            .map(|members| {
                members
                    .iter()
                    .map(|rec| {
                        let tree = rec.modifier_tree()?;
                        let mut curves = Vec::new();
                        for p in tree.root.leaves() {
                            let mut c = vec![0.0; m * lags];
                            for (slot, t) in p.dlm_trees(lags)?.iter().enumerate() {
                                let e = rec.exposures[slot];
                                for (v, th) in c[e * lags..(e + 1) * lags].iter_mut().zip(t.theta()) {
                                    *v += th;
                                }
                            }
                            curves.push(c);
                        }
                        Ok(Member {
                            tree: tree.root.skeleton(),
                            curves,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            lags,
            exposures: fit.meta.exposure_names.clone(),
            draws,
        })
    }

    fn tables(&self, draws: &DrawMatrix<f64>, conf_level: f64) -> Vec<LagTable> {
        let lags = self.lags;
        self.exposures
            .iter()
            .enumerate()
            .map(|(e, name)| {
                let mut sub = DrawMatrix::with_capacity(lags, draws.rows());
                for d in 0..draws.rows() {
                    sub.push_row(&draws.row(d)[e * lags..(e + 1) * lags]);
                }
                LagTable::from_draws(name, &sub, conf_level)
            })
            .collect()
    }

    /// Per-draw curves (M × T per row) for one coded modifier row.
    pub fn individual_draws(&self, row: &[ModifierCell]) -> Result<DrawMatrix<f64>> {
        let width = self.exposures.len() * self.lags;
        let mut out = DrawMatrix::with_capacity(width, self.draws.len());
        let mut acc = vec![0.0; width];
        for members in &self.draws {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for mem in members {
                let leaf = assign_subgroup(&mem.tree, row)?;
                for (a, c) in acc.iter_mut().zip(&mem.curves[leaf]) {
                    *a += c;
                }
            }
            out.push_row(&acc);
        }
        Ok(out)
    }

    pub fn individual(&self, row: &[ModifierCell], conf_level: f64) -> Result<Vec<LagTable>> {
        Ok(self.tables(&self.individual_draws(row)?, conf_level))
    }

    /// Per-draw average of the row curves over each group of rows. Empty
    /// groups yield `None`.
    pub fn group_draws(&self, rows: &[Vec<ModifierCell>], groups: &[Vec<usize>]) -> Result<Vec<Option<DrawMatrix<f64>>>> {
        let width = self.exposures.len() * self.lags;
        let mut out: Vec<Option<DrawMatrix<f64>>> = groups
            .iter()
            .map(|g| (!g.is_empty()).then(|| DrawMatrix::with_capacity(width, self.draws.len())))
            .collect();
        let mut acc = vec![vec![0.0; width]; groups.len()];
        for members in &self.draws {
            acc.iter_mut().for_each(|a| a.iter_mut().for_each(|v| *v = 0.0));
            for mem in members {
                let leaves: Vec<usize> = rows
                    .iter()
                    .map(|r| assign_subgroup(&mem.tree, r))
                    .collect::<Result<_>>()?;
                for (g, idx) in groups.iter().enumerate() {
                    if idx.is_empty() {
                        continue;
                    }
                    let mut counts = vec![0usize; mem.curves.len()];
                    for &i in idx {
                        counts[leaves[i]] += 1;
                    }
                    let n = idx.len() as f64;
                    for (leaf, &c) in counts.iter().enumerate() {
                        if c == 0 {
                            continue;
                        }
                        let w = c as f64 / n;
                        for (a, v) in acc[g].iter_mut().zip(&mem.curves[leaf]) {
                            *a += w * v;
                        }
                    }
                }
            }
            for (o, a) in out.iter_mut().zip(&acc) {
                if let Some(o) = o {
                    o.push_row(a);
                }
            }
        }
        Ok(out)
    }

    pub fn subgroups(&self, fit: &PosteriorFit, group_by: &[GroupBy], conf_level: f64) -> Result<Vec<Subgroup>> {
        let (labels, groups) = partition_rows(fit, group_by)?;
        let rows = coded_rows(fit)?;
        let draws = self.group_draws(&rows, &groups)?;
        Ok(labels
            .into_iter()
            .zip(groups)
            .zip(draws)
            .map(|((labels, idx), d)| Subgroup {
                labels,
                rows: idx.len(),
                effects: d.map(|d| self.tables(&d, conf_level)),
            })
            .collect())
    }
}

/// Modifier rows of the fitted data in model modifier order.
fn coded_rows(fit: &PosteriorFit) -> Result<Vec<Vec<ModifierCell>>> {
    let idx: Vec<usize> = fit
        .meta
        .modifier_names
        .iter()
        .map(|n| {
            fit.modifiers
                .index_of(n)
                .ok_or_else(|| Error::Archive(format!("modifier `{n}` missing from stored data")))
        })
        .collect::<Result<_>>()?;
    Ok((0..fit.meta.rows)
        .map(|i| idx.iter().map(|&j| fit.modifiers.columns()[j].cell(i)).collect())
        .collect())
}

/// Codes a named modifier row in model modifier order.
pub fn encode_row(fit: &PosteriorFit, values: &BTreeMap<String, ModifierValue>) -> Result<Vec<ModifierCell>> {
    for k in values.keys() {
        if !fit.meta.modifier_names.contains(k) {
            return Err(Error::InvalidArgument(format!("unknown modifier `{k}`")));
        }
    }
    fit.meta
        .spec
        .modifiers
        .iter()
        .map(|def| {
            let v = values
                .get(&def.name)
                .ok_or_else(|| Error::InvalidArgument(format!("missing value for modifier `{}`", def.name)))?;
            match (&def.kind, v) {
                (ModifierKind::Continuous, ModifierValue::Real(x)) if x.is_finite() => Ok(ModifierCell::Real(*x)),
                (ModifierKind::Categorical { levels }, ModifierValue::Level(l)) => levels
                    .iter()
                    .position(|x| x == l)
                    .map(|p| ModifierCell::Level(p as u32))
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown level `{l}` for modifier `{}`", def.name))),
                _ => Err(Error::InvalidArgument(format!("wrong value type for modifier `{}`", def.name))),
            }
        })
        .collect()
}

/// Lag curves for one individual described by every model modifier.
pub fn individualized_effect(
    fit: &PosteriorFit,
    values: &BTreeMap<String, ModifierValue>,
    conf_level: f64,
) -> Result<Vec<LagTable>> {
    let row = encode_row(fit, values)?;
    HetDraws::new(fit)?.individual(&row, conf_level)
}

/// Grouping on one modifier. Continuous modifiers are cut at `cuts`
/// (bins `(-inf, c1], (c1, c2], ..., (ck, inf)`), by default at the
/// terciles; categorical modifiers group by level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBy {
    pub modifier: String,
    #[serde(default)]
    pub cuts: Option<Vec<f64>>,
}

impl GroupBy {
    pub fn new(modifier: impl Into<String>) -> Self {
        Self {
            modifier: modifier.into(),
            cuts: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subgroup {
    /// One label per grouping modifier.
    pub labels: Vec<String>,
    pub rows: usize,
    /// `None` when no row falls in the subgroup.
    pub effects: Option<Vec<LagTable>>,
}

fn fmt_num(x: f64) -> String {
    let s = format!("{x:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

/// Bins of one modifier: labels and the bin of every row.
fn bins(fit: &PosteriorFit, g: &GroupBy) -> Result<(Vec<String>, Vec<usize>)> {
    let j = fit
        .modifiers
        .index_of(&g.modifier)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown modifier `{}`", g.modifier)))?;
    match &fit.modifiers.columns()[j] {
        ModifierColumn::Categorical { levels, codes } => {
            if g.cuts.is_some() {
                return Err(Error::InvalidArgument(format!("`{}` is categorical; cuts do not apply", g.modifier)));
            }
            Ok((levels.clone(), codes.iter().map(|c| *c as usize).collect()))
        }
        ModifierColumn::Continuous { values } => {
            let cuts = match &g.cuts {
                Some(c) => {
                    if c.is_empty() || c.windows(2).any(|w| !(w[0] < w[1])) || c.iter().any(|x| !x.is_finite()) {
                        return Err(Error::InvalidArgument("cuts must be finite and strictly increasing".into()));
                    }
                    c.clone()
                }
                None => {
                    let mut c = vec![quantile(values, 1.0 / 3.0), quantile(values, 2.0 / 3.0)];
                    c.dedup();
                    c
                }
            };
            let mut labels = Vec::with_capacity(cuts.len() + 1);
            labels.push(format!("<={}", fmt_num(cuts[0])));
            for w in cuts.windows(2) {
                labels.push(format!("({},{}]", fmt_num(w[0]), fmt_num(w[1])));
            }
            labels.push(format!(">{}", fmt_num(cuts[cuts.len() - 1])));
            let bin = values.iter().map(|v| cuts.iter().filter(|c| v > c).count()).collect();
            Ok((labels, bin))
        }
    }
}

fn partition_rows(fit: &PosteriorFit, group_by: &[GroupBy]) -> Result<(Vec<Vec<String>>, Vec<Vec<usize>>)> {
    if group_by.is_empty() || group_by.len() > 2 {
        return Err(Error::InvalidArgument("group by one or two modifiers".into()));
    }
    if group_by.len() == 2 && group_by[0].modifier == group_by[1].modifier {
        return Err(Error::InvalidArgument("grouping modifiers must differ".into()));
    }
    let parts = group_by.iter().map(|g| bins(fit, g)).collect::<Result<Vec<_>>>()?;
    let n = fit.meta.rows;
    let mut labels = vec![Vec::new()];
    let mut key: Vec<usize> = vec![0; n];
    for (names, bin) in &parts {
        labels = labels
            .into_iter()
            .flat_map(|l: Vec<String>| {
                names.iter().map(move |nm| {
                    let mut l = l.clone();
                    l.push(nm.clone());
                    l
                })
            })
            .collect();
        for (k, b) in key.iter_mut().zip(bin) {
            *k = *k * names.len() + b;
        }
    }
    let mut groups = vec![Vec::new(); labels.len()];
    for (i, k) in key.into_iter().enumerate() {
        groups[k].push(i);
    }
    Ok((labels, groups))
}

/// Lag curves averaged over the fitted rows in each subgroup.
pub fn subgroup_effect(fit: &PosteriorFit, group_by: &[GroupBy], conf_level: f64) -> Result<Vec<Subgroup>> {
    HetDraws::new(fit)?.subgroups(fit, group_by, conf_level)
}

/// Share of all modifier-tree splits on one modifier at each split value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitShare {
    pub split: String,
    /// Threshold for continuous modifiers.
    pub value: Option<f64>,
    pub count: usize,
    pub share: f64,
}

pub fn modifier_splits(fit: &PosteriorFit, modifier: &str) -> Result<Vec<SplitShare>> {
    if !fit.meta.spec.het {
        return Err(Error::InvalidArgument("split summaries need a modifier-tree fit".into()));
    }
    let j = fit
        .meta
        .modifier_names
        .iter()
        .position(|n| n == modifier)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown modifier `{modifier}`")))?;
    let def = &fit.meta.spec.modifiers[j];
    let mut thresholds: Vec<f64> = Vec::new();
    let mut masks: BTreeMap<u64, usize> = BTreeMap::new();
    for members in &fit.het_records {
        for rec in members {
            for node in &rec.tree {
                if let crate::tree::ModNodeRecord::Split { rule } = node {
                    match rule {
                        ModRule::Threshold { modifier, value } if *modifier == j => thresholds.push(*value),
                        ModRule::Subset { modifier, mask } if *modifier == j => *masks.entry(*mask).or_default() += 1,
                        _ => {}
                    }
                }
            }
        }
    }
    let total = (thresholds.len() + masks.values().sum::<usize>()) as f64;
    let mut out = Vec::new();
    let sorted = sorted_copy(&thresholds);
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i];
        let k = sorted[i..].iter().take_while(|x| **x == v).count();
        out.push(SplitShare {
            split: format!("<={}", fmt_num(v)),
            value: Some(v),
            count: k,
            share: k as f64 / total,
        });
        i += k;
    }
    if let ModifierKind::Categorical { levels } = &def.kind {
        for (mask, k) in masks {
            let left: Vec<&str> = levels
                .iter()
                .enumerate()
                .filter(|(c, _)| mask >> c & 1 == 1)
                .map(|(_, l)| l.as_str())
                .collect();
            out.push(SplitShare {
                split: left.join("|"),
                value: None,
                count: k,
                share: k as f64 / total,
            });
        }
    }
    Ok(out)
}
