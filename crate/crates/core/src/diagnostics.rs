//! Convergence and mixing diagnostics: traces, tree-move acceptance, tree
//! sizes, binned densities and split R̂.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::{Family, MoveLedger, PosteriorFit};
use crate::stats::{batch_means_se, mean, quantile_sorted, sorted_copy, variance};
use crate::tree::MoveKind;

const MIN_BINS: usize = 20;
const MAX_BINS: usize = 200;
const ROLLING_WINDOW: usize = 100;

/// A quantity to trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Param {
    Sigma2,
    Tau2,
    Gamma { name: String },
    /// Lag effect of an exposure (population average for modifier trees).
    Theta { exposure: String, lag: usize },
    Cumulative { exposure: String },
}

impl FromStr for Param {
    type Err = Error;
    /// `sigma2`, `tau2`, `gamma:NAME`, `theta:EXPOSURE:LAG`, `cumulative`
    /// (first exposure) or `cumulative:EXPOSURE`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["sigma2"] => Ok(Param::Sigma2),
            ["tau2"] => Ok(Param::Tau2),
            ["gamma", name] => Ok(Param::Gamma { name: name.to_string() }),
            ["cumulative"] => Ok(Param::Cumulative { exposure: String::new() }),
            ["cumulative", e] => Ok(Param::Cumulative { exposure: e.to_string() }),
            ["theta", e, lag] => Ok(Param::Theta {
                exposure: e.to_string(),
                lag: lag
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad lag in `{s}`")))?,
            }),
            _ => Err(Error::InvalidArgument(format!(
                "unknown parameter `{s}`; use sigma2, tau2, gamma:NAME, theta:EXPOSURE:LAG or cumulative[:EXPOSURE]"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub name: String,
    pub values: Vec<f64>,
    pub mean: f64,
    pub mc_se: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KindRate {
    pub proposed: u64,
    pub accepted: u64,
    pub rejected: u64,
    /// `None` when nothing was proposed.
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub grow: KindRate,
    pub prune: KindRate,
    pub change: KindRate,
    pub overall: KindRate,
    /// Acceptance over a trailing window of iterations, one value per
    /// post-burn-in iteration.
    pub rolling: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Density {
    pub name: String,
    pub edges: Vec<f64>,
    pub density: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub traces: Vec<Trace>,
    pub dlm_acceptance: Acceptance,
    /// Present for modifier-tree models.
    pub modifier_acceptance: Option<Acceptance>,
    /// Mean terminal nodes per DLM tree, per post-burn-in iteration.
    pub dlm_tree_sizes: Vec<f64>,
    pub modifier_tree_sizes: Option<Vec<f64>>,
    pub densities: Vec<Density>,
    /// Accepted + rejected equals proposed for every kind and iteration.
    pub ledger_consistent: bool,
}

/// Lags at 25, 50 and 75% of `lags`.
pub fn default_lags(lags: usize) -> Vec<usize> {
    let mut out: Vec<usize> = [0.25, 0.5, 0.75]
        .iter()
        .map(|p| ((p * lags as f64).round() as usize).clamp(1, lags))
        .collect();
    out.dedup();
    out
}

/// Each exposure at the quartile lags, σ² for gaussian fits and the cumulative effects.
pub fn default_params(fit: &PosteriorFit) -> Vec<Param> {
    let mut out = Vec::new();
    for e in &fit.meta.exposure_names {
        for lag in default_lags(fit.meta.lags) {
            out.push(Param::Theta {
                exposure: e.clone(),
                lag,
            });
        }
    }
    if fit.meta.spec.family == Family::Gaussian {
        out.push(Param::Sigma2);
    }
    for e in &fit.meta.exposure_names {
        out.push(Param::Cumulative { exposure: e.clone() });
    }
    out
}

fn exposure_index(fit: &PosteriorFit, name: &str) -> Result<usize> {
    if name.is_empty() {
        return Ok(0);
    }
    fit.meta
        .exposure_names
        .iter()
        .position(|e| e == name)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown exposure `{name}`")))
}

/// Draw series and display name for one parameter.
pub fn series(fit: &PosteriorFit, p: &Param) -> Result<(String, Vec<f64>)> {
    match p {
        Param::Sigma2 => {
            if fit.sigma2_draws.is_empty() {
                return Err(Error::InvalidArgument("sigma2 is not sampled for this family".into()));
            }
            Ok(("sigma2".into(), fit.sigma2_draws.clone()))
        }
        Param::Tau2 => Ok(("tau2".into(), fit.tau2_draws.clone())),
        Param::Gamma { name } => {
            let j = fit
                .meta
                .covariate_names
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown covariate `{name}`")))?;
            Ok((format!("gamma:{name}"), fit.gamma_draws.column(j)))
        }
        Param::Theta { exposure, lag } => {
            let e = exposure_index(fit, exposure)?;
            if *lag == 0 || *lag > fit.meta.lags {
                return Err(Error::InvalidArgument(format!("lag {lag} outside 1..={}", fit.meta.lags)));
            }
            let name = &fit.meta.exposure_names[e];
            Ok((format!("theta:{name}:{lag}"), fit.theta_draws[e].column(lag - 1)))
        }
        Param::Cumulative { exposure } => {
            let e = exposure_index(fit, exposure)?;
            let name = &fit.meta.exposure_names[e];
            Ok((format!("cumulative:{name}"), fit.cumulative_draws(e)))
        }
    }
}

/// Freedman–Diaconis histogram normalized to unit area, at least 20 bins.
pub fn density(name: &str, values: &[f64]) -> Density {
    let sorted = sorted_copy(values);
    let n = sorted.len();
    let (lo, hi) = (sorted[0], sorted[n - 1]);
    if !(hi > lo) {
        let (a, b) = (lo - 0.5, lo + 0.5);
        let edges: Vec<f64> = (0..=MIN_BINS).map(|k| a + (b - a) * k as f64 / MIN_BINS as f64).collect();
        let mut density = vec![0.0; MIN_BINS];
        density[MIN_BINS / 2] = MIN_BINS as f64;
        return Density {
            name: name.to_string(),
            edges,
            density,
        };
    }
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let width = 2.0 * iqr / (n as f64).cbrt();
    let bins = if width > 0.0 {
        (((hi - lo) / width).ceil() as usize).clamp(MIN_BINS, MAX_BINS)
    } else {
        MIN_BINS
    };
    let h = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| lo + h * k as f64).collect();
    let mut counts = vec![0usize; bins];
    for v in &sorted {
        let k = (((v - lo) / h) as usize).min(bins - 1);
        counts[k] += 1;
    }
    Density {
        name: name.to_string(),
        edges,
        density: counts.iter().map(|c| *c as f64 / (n as f64 * h)).collect(),
    }
}

fn kind_rate(proposed: u64, accepted: u64, rejected: u64) -> KindRate {
    KindRate {
        proposed,
        accepted,
        rejected,
        rate: (proposed > 0).then(|| accepted as f64 / proposed as f64),
    }
}

fn acceptance(ledgers: &[MoveLedger]) -> Acceptance {
    let mut tot = [[0u64; 3]; 3];
    for l in ledgers {
        for k in 0..3 {
            tot[0][k] += u64::from(l.proposed[k]);
            tot[1][k] += u64::from(l.accepted[k]);
            tot[2][k] += u64::from(l.rejected[k]);
        }
    }
    let per = |k: MoveKind| kind_rate(tot[0][k.index()], tot[1][k.index()], tot[2][k.index()]);
    let sum = |r: usize| tot[r].iter().sum::<u64>();
    let mut rolling = Vec::with_capacity(ledgers.len());
    let (mut p, mut a) = (0u64, 0u64);
    for (i, l) in ledgers.iter().enumerate() {
        p += l.proposed.iter().map(|v| u64::from(*v)).sum::<u64>();
        a += l.accepted.iter().map(|v| u64::from(*v)).sum::<u64>();
        if i >= ROLLING_WINDOW {
            let old = &ledgers[i - ROLLING_WINDOW];
            p -= old.proposed.iter().map(|v| u64::from(*v)).sum::<u64>();
            a -= old.accepted.iter().map(|v| u64::from(*v)).sum::<u64>();
        }
        rolling.push(if p > 0 { a as f64 / p as f64 } else { 0.0 });
    }
    Acceptance {
        grow: per(MoveKind::Grow),
        prune: per(MoveKind::Prune),
        change: per(MoveKind::Change),
        overall: kind_rate(sum(0), sum(1), sum(2)),
        rolling,
    }
}

/// Build the report. An empty selection uses the defaults: each exposure's
/// effect at the quartile lags, σ² and the cumulative effects.
pub fn diagnose(fit: &PosteriorFit, selections: &[Param]) -> Result<DiagnosticsReport> {
    if fit.draws() == 0 {
        return Err(Error::InvalidArgument("fit has no retained draws".into()));
    }
    let params = if selections.is_empty() {
        default_params(fit)
    } else {
        selections.to_vec()
    };
    let mut traces = Vec::new();
    let mut densities = Vec::new();
    for p in &params {
        let (name, values) = series(fit, p)?;
        densities.push(density(&name, &values));
        traces.push(Trace {
            mean: mean(&values),
            mc_se: batch_means_se(&values),
            name,
            values,
        });
    }
    let dlm: Vec<MoveLedger> = fit.tree_logs.iter().map(|l| l.dlm).collect();
    let het = fit.meta.spec.het;
    let modifier: Vec<MoveLedger> = fit.tree_logs.iter().map(|l| l.modifier).collect();
    let ledger_consistent = dlm
        .iter()
        .chain(&modifier)
        .all(|l| (0..3).all(|k| l.accepted[k] + l.rejected[k] == l.proposed[k]));
    Ok(DiagnosticsReport {
        traces,
        dlm_acceptance: acceptance(&dlm),
        modifier_acceptance: het.then(|| acceptance(&modifier)),
        dlm_tree_sizes: fit.tree_logs.iter().map(|l| l.mean_dlm_leaves).collect(),
        modifier_tree_sizes: het.then(|| fit.tree_logs.iter().map(|l| l.mean_modifier_leaves).collect()),
        densities,
        ledger_consistent,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRhat {
    pub rhat: f64,
    /// Every half-chain had zero variance; `rhat` is then reported as 1.
    pub degenerate: bool,
}

/// Split-chain potential scale reduction over one or more chains.
pub fn gelman_split_rhat(chains: &[&[f64]]) -> Result<SplitRhat> {
    if chains.is_empty() {
        return Err(Error::InvalidArgument("need at least one series".into()));
    }
    let n = chains.iter().map(|c| c.len()).min().unwrap() / 2;
    if n < 2 {
        return Err(Error::InvalidArgument("each series needs at least 4 values".into()));
    }
    let mut halves: Vec<&[f64]> = Vec::new();
    for c in chains {
        let len = 2 * n;
        let c = &c[c.len() - len..];
        halves.push(&c[..n]);
        halves.push(&c[n..]);
    }
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let w = mean(&halves.iter().map(|h| variance(h)).collect::<Vec<_>>());
    let b = n as f64 * variance(&means);
    if w == 0.0 {
        return Ok(SplitRhat {
            rhat: if b == 0.0 { 1.0 } else { f64::INFINITY },
            degenerate: b == 0.0,
        });
    }
    let nf = n as f64;
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    Ok(SplitRhat {
        rhat: (var_plus / w).sqrt(),
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn identical_series_give_one() {
        let s: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let r = gelman_split_rhat(&[&s, &s]).unwrap();
        assert!(r.rhat < 1.05, "{r:?}");
        let c = vec![2.0; 10];
        let r = gelman_split_rhat(&[&c, &c]).unwrap();
        assert_eq!((r.rhat, r.degenerate), (1.0, true));
    }

    #[test]
    fn separated_chains_flag() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = (0..200).map(|_| 1e-3 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 100.0).collect();
        assert!(gelman_split_rhat(&[&a, &b]).unwrap().rhat > 1.1);
    }

    #[test]
    fn white_noise_calibration() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<f64> = (0..2000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..2000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let r = gelman_split_rhat(&[&a, &b]).unwrap().rhat;
        assert!((0.99..=1.05).contains(&r), "{r}");
    }

    #[test]
    fn short_series_rejected() {
        assert!(gelman_split_rhat(&[&[1.0, 2.0, 3.0]]).is_err());
        assert!(gelman_split_rhat(&[]).is_err());
    }

    #[test]
    fn density_has_unit_area() {
        let v: Vec<f64> = (0..500).map(|i| ((i * 7919) % 1000) as f64 / 10.0).collect();
        let d = density("x", &v);
        assert!(d.density.len() >= MIN_BINS);
        let area: f64 = d.density.iter().zip(d.edges.windows(2)).map(|(h, e)| h * (e[1] - e[0])).sum();
        assert!((area - 1.0).abs() < 1e-12);
        let c = density("c", &[3.0; 10]);
        assert_eq!(c.density.len(), MIN_BINS);
    }

    #[test]
    fn quartile_lags() {
        assert_eq!(default_lags(37), vec![9, 19, 28]);
        assert_eq!(default_lags(1), vec![1]);
    }

    #[test]
    fn param_parsing() {
        assert_eq!("sigma2".parse::<Param>().unwrap(), Param::Sigma2);
        assert_eq!(
            "theta:PM25:11".parse::<Param>().unwrap(),
            Param::Theta {
                exposure: "PM25".into(),
                lag: 11
            }
        );
        assert!("theta:PM25".parse::<Param>().is_err());
    }
}
