//! Posterior summaries: interval tables, critical windows, cumulative and
//! marginal effects, exposure selection, modifier inclusion and
//! heterogeneous effects.

mod het;
mod render;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::ExposureMatrix;
use crate::error::{Error, Result};
use crate::linalg::least_squares;
use crate::mcmc::{DrawMatrix, Family, InteractionMode, PosteriorFit};
use crate::stats::{interval, log_sum_exp, mean, quantile, quantile_sorted, sorted_copy};

pub use het::{
    encode_row, individualized_effect, modifier_splits, subgroup_effect, GroupBy, HetDraws, ModifierValue, SplitShare,
    Subgroup,
};
pub use render::{render_run_info, render_text};

/// Posterior mean with an equal-tailed credible interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Estimate {
    pub fn from_draws(draws: &[f64], conf_level: f64) -> Self {
        let (mean, lower, upper) = interval(draws, conf_level);
        Self { mean, lower, upper }
    }

    pub fn excludes_zero(&self) -> bool {
        self.lower > 0.0 || self.upper < 0.0
    }
}

/// Inclusive run of consecutive lags, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LagRun {
    pub start: usize,
    pub end: usize,
}

impl fmt::Display for LagRun {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.start == self.end {
            write!(f, "{}", self.start)
        } else {
            write!(f, "{}-{}", self.start, self.end)
        }
    }
}

/// Formats runs the way summaries print them: `11-20,36-37`.
pub fn format_runs(runs: &[LagRun]) -> String {
    runs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Per-lag effects of one exposure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagTable {
    pub exposure: String,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub critical: Vec<bool>,
}

impl LagTable {
    pub fn from_draws(exposure: &str, draws: &DrawMatrix<f64>, conf_level: f64) -> Self {
        let mut t = LagTable {
            exposure: exposure.to_string(),
            mean: Vec::with_capacity(draws.cols),
            lower: Vec::with_capacity(draws.cols),
            upper: Vec::with_capacity(draws.cols),
            critical: Vec::with_capacity(draws.cols),
        };
        for j in 0..draws.cols {
            let e = Estimate::from_draws(&draws.column(j), conf_level);
            t.mean.push(e.mean);
            t.lower.push(e.lower);
            t.upper.push(e.upper);
            t.critical.push(e.excludes_zero());
        }
        t
    }

    pub fn windows(&self) -> Vec<LagRun> {
        critical_windows(&self.lower, &self.upper)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedEffect {
    pub name: String,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub significant: bool,
}

/// Lagged interaction windows of one exposure pair: for each lag of the
/// first exposure, the runs of the second exposure's lags whose cell
/// interval excludes zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairWindows {
    pub exposure1: String,
    pub exposure2: String,
    pub relative_effect: f64,
    pub rows: Vec<(usize, Vec<LagRun>)>,
    /// Cells with an interval excluding zero over all T × T cells.
    pub flagged_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureSelection {
    pub exposure: String,
    pub posterior_inclusion: f64,
    pub prior_inclusion: f64,
    pub bayes_factor: f64,
    pub selected: bool,
    pub relative_effect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModifierPip {
    pub modifier: String,
    pub pip: f64,
}

/// How co-exposures are fixed when reading off one exposure's curve in a
/// mixture with interactions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum MarginalizePolicy {
    /// Empirical mean of each co-exposure over all rows and lags.
    Mean,
    /// The q-th percentile (0–100) of each co-exposure at each lag.
    Percentile(f64),
    /// The q-th percentile of each co-exposure over all rows and lags.
    PooledPercentile(f64),
    /// One constant per exposure, in fitted exposure order.
    Levels(Vec<f64>),
}

impl Default for MarginalizePolicy {
    fn default() -> Self {
        MarginalizePolicy::Mean
    }
}

impl FromStr for MarginalizePolicy {
    type Err = Error;
    /// `mean`, `qNN`, `pooled-qNN` or `levels=v1,v2,...`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad marginalization `{s}`; use mean, qNN, pooled-qNN or levels=v1,..."));
        let pct = |q: &str| -> Result<f64> {
            let q: f64 = q.parse().map_err(|_| bad())?;
            if (0.0..=100.0).contains(&q) {
                Ok(q)
            } else {
                Err(bad())
            }
        };
        if s == "mean" {
            Ok(MarginalizePolicy::Mean)
        } else if let Some(q) = s.strip_prefix("pooled-q") {
            Ok(MarginalizePolicy::PooledPercentile(pct(q)?))
        } else if let Some(q) = s.strip_prefix('q') {
            Ok(MarginalizePolicy::Percentile(pct(q)?))
        } else if let Some(v) = s.strip_prefix("levels=") {
            let levels = v
                .split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?;
            Ok(MarginalizePolicy::Levels(levels))
        } else {
            Err(bad())
        }
    }
}

impl fmt::Display for MarginalizePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MarginalizePolicy::Mean => f.write_str("mean"),
            MarginalizePolicy::Percentile(q) => write!(f, "q{q}"),
            MarginalizePolicy::PooledPercentile(q) => write!(f, "pooled-q{q}"),
            MarginalizePolicy::Levels(v) => {
                let s: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                write!(f, "levels={}", s.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub model_class: String,
    pub covariates: Vec<String>,
    pub sample_size: usize,
    pub family: String,
    pub trees: usize,
    pub alpha: f64,
    pub beta: f64,
    pub n_burn: usize,
    pub n_iter: usize,
    pub n_thin: usize,
    pub draws: usize,
    pub exposures: Vec<String>,
    pub lags: usize,
    pub interaction_mode: String,
    pub pairs: usize,
    pub kappa: f64,
    pub modifier_sparsity: f64,
    pub modifiers: Vec<String>,
}

impl RunInfo {
    pub fn from_fit(fit: &PosteriorFit) -> Self {
        let meta = &fit.meta;
        let spec = &meta.spec;
        RunInfo {
            model_class: meta.model_class.clone(),
            covariates: meta.covariate_names.clone(),
            sample_size: meta.rows,
            family: spec.family.to_string(),
            trees: spec.tree_prior.num_trees,
            alpha: spec.tree_prior.alpha,
            beta: spec.tree_prior.beta,
            n_burn: meta.control.n_burn,
            n_iter: meta.control.n_iter,
            n_thin: meta.control.n_thin,
            draws: fit.draws(),
            exposures: meta.exposure_names.clone(),
            lags: meta.lags,
            interaction_mode: spec.interaction_mode.to_string(),
            pairs: meta.pairs.len(),
            kappa: spec.kappa,
            modifier_sparsity: spec.modifier_sparsity,
            modifiers: meta.modifier_names.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub run_info: RunInfo,
    pub conf_level: f64,
    pub policy: MarginalizePolicy,
    pub fixed_effects: Vec<FixedEffect>,
    /// Per exposure; empty for modifier-tree models.
    pub dlm_tables: Vec<LagTable>,
    pub critical_windows: Vec<Vec<LagRun>>,
    pub cumulative: Vec<Estimate>,
    pub interaction_windows: Vec<PairWindows>,
    pub exposure_selection: Vec<ExposureSelection>,
    pub pips: Vec<ModifierPip>,
    pub relative_effect: Vec<f64>,
    /// Posterior mean of σ (Gaussian only).
    pub residual_se: Option<f64>,
    /// Variance of the fitted exposure contribution over σ̂².
    pub signal_to_noise: Option<f64>,
}

/// Maximal runs of consecutive lags whose interval excludes zero.
pub fn critical_windows(lower: &[f64], upper: &[f64]) -> Vec<LagRun> {
    assert_eq!(lower.len(), upper.len());
    let mut runs: Vec<LagRun> = Vec::new();
    for (t, (lo, hi)) in lower.iter().zip(upper).enumerate() {
        if *lo > 0.0 || *hi < 0.0 {
            let lag = t + 1;
            match runs.last_mut() {
                Some(r) if r.end + 1 == lag => r.end = lag,
                _ => runs.push(LagRun { start: lag, end: lag }),
            }
        }
    }
    runs
}

/// Per-draw sum over lags, summarized.
pub fn cumulative_effect(theta: &DrawMatrix<f64>, conf_level: f64) -> Estimate {
    let sums: Vec<f64> = (0..theta.rows()).map(|i| theta.row(i).iter().sum()).collect();
    Estimate::from_draws(&sums, conf_level)
}

/// Co-exposure level at every lag, per exposure, under `policy`.
pub fn policy_levels(fit: &PosteriorFit, policy: &MarginalizePolicy) -> Result<Vec<Vec<f64>>> {
    let lags = fit.meta.lags;
    let m = fit.exposures.len();
    match policy {
        MarginalizePolicy::Mean => Ok(fit.exposures.iter().map(|e| vec![mean(e.values()); lags]).collect()),
        MarginalizePolicy::PooledPercentile(q) => Ok(fit
            .exposures
            .iter()
            .map(|e| vec![quantile(e.values(), q / 100.0); lags])
            .collect()),
        MarginalizePolicy::Percentile(q) => Ok(fit
            .exposures
            .iter()
            .map(|e| (1..=lags).map(|t| quantile(&e.lag_column(t), q / 100.0)).collect())
            .collect()),
        MarginalizePolicy::Levels(v) => {
            if v.len() != m {
                return Err(Error::InvalidArgument(format!(
                    "expected {m} levels in exposure order {}, got {}",
                    fit.meta.exposure_names.join(", "),
                    v.len()
                )));
            }
            Ok(v.iter().map(|x| vec![*x; lags]).collect())
        }
    }
}

fn prefix(v: &[f64]) -> Vec<f64> {
    let mut p = vec![0.0; v.len() + 1];
    for (i, x) in v.iter().enumerate() {
        p[i + 1] = p[i] + x;
    }
    p
}

/// Draws of exposure `exposure`'s lag curve with co-exposures held at the
/// policy levels: main effect plus every interaction cell times the summed
/// partner level over the partner's lag range. Within-exposure cells
/// contribute along both of their axes.
pub fn marginal_effect(fit: &PosteriorFit, exposure: usize, policy: &MarginalizePolicy) -> Result<DrawMatrix<f64>> {
    let spec = &fit.meta.spec;
    if !spec.mixture {
        return Err(Error::InvalidArgument("marginal effects need a mixture fit".into()));
    }
    if spec.het {
        return Err(Error::Unsupported(
            "co-exposure marginalization is not defined for heterogeneous mixtures".into(),
        ));
    }
    if exposure >= fit.exposures.len() {
        return Err(Error::InvalidArgument(format!("no exposure {exposure}")));
    }
    let levels = policy_levels(fit, policy)?;
    let mut out = fit.theta_draws[exposure].clone();
    if fit.interaction_draws.is_empty() {
        return Ok(out);
    }
    let sums: Vec<Vec<f64>> = levels.iter().map(|l| prefix(l)).collect();
    let range = |m: usize, (lo, hi): (usize, usize)| sums[m][hi] - sums[m][lo - 1];
    for (d, blocks) in fit.interaction_draws.iter().enumerate() {
        let row = &mut out.values[d * out.cols..(d + 1) * out.cols];
        for b in blocks {
            let (a, c) = fit.meta.pairs[b.pair];
            if a == exposure {
                let w = b.value * range(c, b.lags2);
                for t in b.lags1.0..=b.lags1.1 {
                    row[t - 1] += w;
                }
            }
            if c == exposure {
                let w = b.value * range(a, b.lags1);
                for t in b.lags2.0..=b.lags2.1 {
                    row[t - 1] += w;
                }
            }
        }
    }
    Ok(out)
}

/// Per-draw T × T interaction surface of one pair, row-major by the first
/// exposure's lag.
pub fn interaction_surface(fit: &PosteriorFit, pair: usize) -> DrawMatrix<f64> {
    let lags = fit.meta.lags;
    let mut out = DrawMatrix::with_capacity(lags * lags, fit.interaction_draws.len());
    let mut grid = vec![0.0; lags * lags];
    for blocks in &fit.interaction_draws {
        grid.iter_mut().for_each(|g| *g = 0.0);
        for b in blocks.iter().filter(|b| b.pair == pair) {
            for t1 in b.lags1.0..=b.lags1.1 {
                for t2 in b.lags2.0..=b.lags2.1 {
                    grid[(t1 - 1) * lags + t2 - 1] += b.value;
                }
            }
        }
        out.push_row(&grid);
    }
    out
}

fn pair_windows(fit: &PosteriorFit, conf_level: f64) -> Vec<PairWindows> {
    let lags = fit.meta.lags;
    let mut out = Vec::new();
    let mut magnitude = Vec::new();
    for (p, &(a, b)) in fit.meta.pairs.iter().enumerate() {
        let surf = interaction_surface(fit, p);
        let mut lower = vec![0.0; lags * lags];
        let mut upper = vec![0.0; lags * lags];
        for j in 0..lags * lags {
            let e = Estimate::from_draws(&surf.column(j), conf_level);
            lower[j] = e.lower;
            upper[j] = e.upper;
        }
        let rows: Vec<(usize, Vec<LagRun>)> = (0..lags)
            .filter_map(|t1| {
                let runs = critical_windows(&lower[t1 * lags..(t1 + 1) * lags], &upper[t1 * lags..(t1 + 1) * lags]);
                (!runs.is_empty()).then_some((t1 + 1, runs))
            })
            .collect();
        let flagged = (0..lags * lags).filter(|&j| lower[j] > 0.0 || upper[j] < 0.0).count();
        let abs: Vec<f64> = (0..surf.rows()).map(|i| surf.row(i).iter().map(|v| v.abs()).sum()).collect();
        magnitude.push(mean(&abs));
        out.push(PairWindows {
            exposure1: fit.meta.exposure_names[a].clone(),
            exposure2: fit.meta.exposure_names[b].clone(),
            relative_effect: 0.0,
            rows,
            flagged_fraction: flagged as f64 / (lags * lags) as f64,
        });
    }
    let max = magnitude.iter().copied().fold(0.0, f64::max);
    for (w, m) in out.iter_mut().zip(magnitude) {
        w.relative_effect = if max > 0.0 { m / max } else { 0.0 };
    }
    out
}

/// Prior probability that an exposure fills at least one of the 2 × `trees`
/// slots when assignments are Dirichlet(κ/M)-multinomial. With `noself` the
/// two slots of a tree must differ, so the prior is conditioned on that.
fn prior_inclusion(kappa: f64, exposures: usize, trees: usize, noself: bool) -> f64 {
    let a = kappa / exposures as f64;
    if !noself {
        let rest = kappa - a;
        let n = 2.0 * trees as f64;
        let log_p0 = ln_gamma(rest + n) + ln_gamma(kappa) - ln_gamma(rest) - ln_gamma(kappa + n);
        return 1.0 - log_p0.exp();
    }
    let all = log_noself_mass(a, exposures, trees);
    let without = log_noself_mass(a, exposures - 1, trees);
    1.0 - (without - all).exp()
}

/// Log of Σ over assignments of `m` exposures to every slot of `trees`
/// two-slot trees, no tree holding one exposure twice, of ∏ rising
/// factorials (a)_{count}. Exposures are added one at a time while tracking
/// how many trees have zero and one slot filled.
fn log_noself_mass(a: f64, m: usize, trees: usize) -> f64 {
    let ln_fact: Vec<f64> = (0..=trees).map(|n| ln_gamma(n as f64 + 1.0)).collect();
    let ln_choose = |n: usize, k: usize| ln_fact[n] - ln_fact[k] - ln_fact[n - k];
    let ln_rising: Vec<f64> = (0..=2 * trees).map(|c| ln_gamma(a + c as f64) - ln_gamma(a)).collect();
    let w = trees + 1;
    let mut f = vec![f64::NEG_INFINITY; w * w];
    f[trees * w] = 0.0;
    for _ in 0..m {
        let mut g = vec![f64::NEG_INFINITY; w * w];
        for n0 in 0..=trees {
            for n1 in 0..=trees - n0 {
                let cur = f[n0 * w + n1];
                if cur == f64::NEG_INFINITY {
                    continue;
                }
                for j in 0..=n0 {
                    for k in 0..=n1 {
                        let v = cur + ln_choose(n0, j) + j as f64 * std::f64::consts::LN_2 + ln_choose(n1, k) + ln_rising[j + k];
                        let idx = (n0 - j) * w + n1 + j - k;
                        g[idx] = log_sum_exp(&[g[idx], v]);
                    }
                }
            }
        }
        f = g;
    }
    f[0]
}

fn bayes_factor(post: f64, prior: f64) -> f64 {
    let odds = |p: f64| p / (1.0 - p);
    if post >= 1.0 {
        f64::INFINITY
    } else if prior >= 1.0 {
        0.0
    } else {
        odds(post) / odds(prior)
    }
}

/// Mean of Σ_t |θ_t| per exposure, divided by the largest.
fn relative_effects(curves: &[DrawMatrix<f64>]) -> Vec<f64> {
    let mags: Vec<f64> = curves
        .iter()
        .map(|c| {
            let per: Vec<f64> = (0..c.rows()).map(|i| c.row(i).iter().map(|v| v.abs()).sum()).collect();
            mean(&per)
        })
        .collect();
    let max = mags.iter().copied().fold(0.0, f64::max);
    mags.iter().map(|m| if max > 0.0 { m / max } else { 0.0 }).collect()
}

/// Bayes-factor exposure selection for mixture fits.
pub fn exposure_selection(fit: &PosteriorFit, bf_threshold: f64) -> Result<Vec<ExposureSelection>> {
    let spec = &fit.meta.spec;
    if !spec.mixture {
        return Err(Error::InvalidArgument("exposure selection needs a mixture fit".into()));
    }
    let m = fit.exposures.len();
    let curves: Vec<DrawMatrix<f64>> = if spec.het {
        fit.theta_draws.clone()
    } else {
        (0..m)
            .map(|e| marginal_effect(fit, e, &MarginalizePolicy::Mean))
            .collect::<Result<_>>()?
    };
    let rel = relative_effects(&curves);
    let counts = &fit.exposure_selection_counts;
    let noself = spec.interaction_mode == InteractionMode::Noself;
    let prior = prior_inclusion(spec.kappa, m, spec.tree_prior.num_trees, noself);
    Ok((0..m)
        .map(|e| {
            let col = counts.column(e);
            let post = col.iter().filter(|c| **c > 0).count() as f64 / col.len().max(1) as f64;
            let bf = if m == 1 { f64::INFINITY } else { bayes_factor(post, prior) };
            ExposureSelection {
                exposure: fit.meta.exposure_names[e].clone(),
                posterior_inclusion: post,
                prior_inclusion: prior,
                bayes_factor: bf,
                selected: bf >= bf_threshold,
                relative_effect: rel[e],
            }
        })
        .collect())
}

/// Fraction of draws in which some modifier tree splits on each modifier.
pub fn modifier_pip(fit: &PosteriorFit) -> Result<Vec<ModifierPip>> {
    if !fit.meta.spec.het {
        return Err(Error::InvalidArgument("inclusion probabilities need a modifier-tree fit".into()));
    }
    let usage = &fit.modifier_usage;
    Ok(fit
        .meta
        .modifier_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let col = usage.column(j);
            ModifierPip {
                modifier: name.clone(),
                pip: col.iter().map(|v| f64::from(*v)).sum::<f64>() / col.len().max(1) as f64,
            }
        })
        .collect())
}

pub fn summarize(fit: &PosteriorFit, conf_level: f64, policy: &MarginalizePolicy) -> Result<FitSummary> {
    if !(conf_level > 0.0 && conf_level < 1.0) {
        return Err(Error::InvalidArgument("confidence level must lie in (0, 1)".into()));
    }
    if fit.draws() == 0 {
        return Err(Error::InvalidArgument("fit has no retained draws".into()));
    }
    let meta = &fit.meta;
    let spec = &meta.spec;
    let m = fit.exposures.len();
    if let MarginalizePolicy::Levels(v) = policy {
        if v.len() != m {
            policy_levels(fit, policy)?;
        }
    }
    let fixed_effects = meta
        .covariate_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let e = Estimate::from_draws(&fit.gamma_draws.column(j), conf_level);
            FixedEffect {
                name: name.clone(),
                mean: e.mean,
                lower: e.lower,
                upper: e.upper,
                significant: e.excludes_zero(),
            }
        })
        .collect();
    let curves: Vec<DrawMatrix<f64>> = if spec.mixture && !spec.het {
        (0..m).map(|e| marginal_effect(fit, e, policy)).collect::<Result<_>>()?
    } else {
        fit.theta_draws.clone()
    };
    let (dlm_tables, critical) = if spec.het {
        (Vec::new(), Vec::new())
    } else {
        let tables: Vec<LagTable> = curves
            .iter()
            .zip(&meta.exposure_names)
            .map(|(c, name)| LagTable::from_draws(name, c, conf_level))
            .collect();
        let windows = tables.iter().map(LagTable::windows).collect();
        (tables, windows)
    };
    let cumulative = curves.iter().map(|c| cumulative_effect(c, conf_level)).collect();
    let interaction_windows = if spec.has_interactions() && !spec.het {
        pair_windows(fit, conf_level)
    } else {
        Vec::new()
    };
    let exposure_selection = if spec.mixture {
        exposure_selection(fit, 0.5)?
    } else {
        Vec::new()
    };
    let pips = if spec.het { modifier_pip(fit)? } else { Vec::new() };
    let (residual_se, signal_to_noise) = if spec.family == Family::Gaussian {
        let sd: Vec<f64> = fit.sigma2_draws.iter().map(|s| s.sqrt()).collect();
        let s2 = mean(&fit.sigma2_draws);
        (Some(mean(&sd)), Some(mean(&fit.contribution_var) / s2))
    } else {
        (None, None)
    };
    Ok(FitSummary {
        run_info: RunInfo::from_fit(fit),
        conf_level,
        policy: policy.clone(),
        fixed_effects,
        dlm_tables,
        critical_windows: critical,
        relative_effect: relative_effects(&curves),
        cumulative,
        interaction_windows,
        exposure_selection,
        pips,
        residual_se,
        signal_to_noise,
    })
}

/// Contrast endpoints for [`adj_coexposure`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Contrast {
    /// Percentiles in (0, 1) of each target's time-averaged exposure.
    Percentiles { low: f64, high: f64 },
    /// Exact levels on the raw scale.
    Levels { low: f64, high: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoexposureEffect {
    pub exposure: String,
    pub low: f64,
    pub high: f64,
    /// Predicted co-exposure levels (raw scale) at the low and high values,
    /// in exposure order; the target's own entry is its contrast level.
    pub predicted_low: Vec<f64>,
    pub predicted_high: Vec<f64>,
    pub effect: Estimate,
}

const SPLINE_KNOTS: usize = 10;

/// Cubic regression spline with truncated-power basis on evenly spaced
/// interior knots, fitted by least squares with a tiny ridge.
struct CubicSpline {
    knots: Vec<f64>,
    center: f64,
    scale: f64,
    coef: Vec<f64>,
}

impl CubicSpline {
    fn basis(&self, x: f64) -> Vec<f64> {
        let z = (x - self.center) / self.scale;
        let mut b = vec![1.0, z, z * z, z * z * z];
        b.extend(self.knots.iter().map(|k| (z - k).max(0.0).powi(3)));
        b
    }

    fn fit(x: &[f64], y: &[f64]) -> Result<Self> {
        let sorted = sorted_copy(x);
        let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
        let center = quantile_sorted(&sorted, 0.5);
        let scale = (hi - lo).max(f64::EPSILON);
        let (zl, zh) = ((lo - center) / scale, (hi - center) / scale);
        let knots = (1..=SPLINE_KNOTS)
            .map(|k| zl + (zh - zl) * k as f64 / (SPLINE_KNOTS + 1) as f64)
            .collect();
        let mut s = Self {
            knots,
            center,
            scale,
            coef: Vec::new(),
        };
        let k = 4 + SPLINE_KNOTS;
        let design: Vec<f64> = x.iter().flat_map(|xi| s.basis(*xi)).collect();
        s.coef = least_squares(&design, x.len(), k, y, 1e-12)
            .ok_or_else(|| Error::InvalidData("spline fit is singular".into()))?;
        Ok(s)
    }

    fn predict(&self, x: f64) -> f64 {
        self.basis(x).iter().zip(&self.coef).map(|(a, b)| a * b).sum()
    }
}

/// Effect of moving each exposure from `low` to `high` while co-exposures
/// move to their expected levels given the target, predicted by a cubic
/// spline of co-exposure time averages on target time averages.
pub fn adj_coexposure(exposures: &[ExposureMatrix], fit: &PosteriorFit, contrast: Contrast) -> Result<Vec<CoexposureEffect>> {
    let meta = &fit.meta;
    if meta.spec.het {
        return Err(Error::Unsupported(
            "co-exposure adjustment is not defined for heterogeneous fits".into(),
        ));
    }
    let m = meta.exposure_names.len();
    let names: Vec<&str> = exposures.iter().map(ExposureMatrix::name).collect();
    if names != meta.exposure_names.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::InvalidArgument(format!(
            "exposures must be {} in that order",
            meta.exposure_names.join(", ")
        )));
    }
    let (lo, hi) = match contrast {
        Contrast::Percentiles { low, high } | Contrast::Levels { low, high } => (low, high),
    };
    if !(lo < hi) {
        return Err(Error::InvalidArgument("contrast needs low < high".into()));
    }
    if let Contrast::Percentiles { .. } = contrast {
        if lo < 0.0 || hi > 1.0 {
            return Err(Error::InvalidArgument("contrast percentiles must lie in [0, 1]".into()));
        }
    }
    let averages: Vec<Vec<f64>> = exposures.iter().map(ExposureMatrix::row_means).collect();
    // Cumulative main effects and interaction totals per draw, fitted units.
    let draws = fit.draws();
    let cum: Vec<Vec<f64>> = (0..m).map(|e| fit.cumulative_draws(e)).collect();
    let pair_totals: Vec<Vec<f64>> = (0..meta.pairs.len())
        .map(|p| {
            fit.interaction_draws
                .iter()
                .map(|blocks| {
                    blocks
                        .iter()
                        .filter(|b| b.pair == p)
                        .map(|b| b.value * (b.lags1.1 - b.lags1.0 + 1) as f64 * (b.lags2.1 - b.lags2.0 + 1) as f64)
                        .sum()
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(m);
    for target in 0..m {
        let (low, high) = match contrast {
            Contrast::Percentiles { low, high } => (quantile(&averages[target], low), quantile(&averages[target], high)),
            Contrast::Levels { low, high } => (low, high),
        };
        let mut pl = vec![0.0; m];
        let mut ph = vec![0.0; m];
        for e in 0..m {
            if e == target {
                pl[e] = low;
                ph[e] = high;
            } else {
                let s = CubicSpline::fit(&averages[target], &averages[e])?;
                pl[e] = s.predict(low);
                ph[e] = s.predict(high);
            }
        }
        let fl: Vec<f64> = pl.iter().zip(&meta.scale_factors).map(|(v, s)| v / s).collect();
        let fh: Vec<f64> = ph.iter().zip(&meta.scale_factors).map(|(v, s)| v / s).collect();
        let value = |d: usize, lv: &[f64]| -> f64 {
            let mut f: f64 = (0..m).map(|e| lv[e] * cum[e][d]).sum();
            for (p, &(a, b)) in meta.pairs.iter().enumerate() {
                if let Some(t) = pair_totals[p].get(d) {
                    f += lv[a] * lv[b] * t;
                }
            }
            f
        };
        let contrast_draws: Vec<f64> = (0..draws).map(|d| value(d, &fh) - value(d, &fl)).collect();
        out.push(CoexposureEffect {
            exposure: meta.exposure_names[target].clone(),
            low,
            high,
            predicted_low: pl,
            predicted_high: ph,
            effect: Estimate::from_draws(&contrast_draws, 0.95),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn critical_window_definition() {
        let runs = critical_windows(&[-0.1, -0.1, 0.01], &[-0.02, 0.05, 0.05]);
        assert_eq!(runs, vec![LagRun { start: 1, end: 1 }, LagRun { start: 3, end: 3 }]);
        assert!(critical_windows(&[-1.0; 4], &[1.0; 4]).is_empty());
        let lower: Vec<f64> = (1..=37).map(|t| if (11..=20).contains(&t) || t >= 36 { 0.1 } else { -0.1 }).collect();
        assert_eq!(format_runs(&critical_windows(&lower, &[1.0; 37])), "11-20,36-37");
    }

    #[test]
    fn cumulative_arithmetic() {
        let d = DrawMatrix::new(2, vec![1.0, 1.0, 3.0, 3.0]);
        assert_eq!(cumulative_effect(&d, 0.95).mean, 4.0);
        let anti = DrawMatrix::new(2, vec![0.5, -1.0, -0.5, 1.0]);
        assert_eq!(cumulative_effect(&anti, 0.95).mean, 0.0);
    }

    #[test]
    fn policy_parsing() {
        assert_eq!("mean".parse::<MarginalizePolicy>().unwrap(), MarginalizePolicy::Mean);
        assert_eq!("q25".parse::<MarginalizePolicy>().unwrap(), MarginalizePolicy::Percentile(25.0));
        assert_eq!(
            "levels=1,1,1,1,1".parse::<MarginalizePolicy>().unwrap(),
            MarginalizePolicy::Levels(vec![1.0; 5])
        );
        assert_eq!(
            "pooled-q50".parse::<MarginalizePolicy>().unwrap(),
            MarginalizePolicy::PooledPercentile(50.0)
        );
        assert!("q120".parse::<MarginalizePolicy>().is_err());
        assert!("median".parse::<MarginalizePolicy>().is_err());
        for s in ["mean", "q25", "pooled-q50", "levels=1,2.5"] {
            assert_eq!(s.parse::<MarginalizePolicy>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn prior_inclusion_matches_enumeration() {
        // κ = 1, M = 2, one tree: P(count_0 = 0) = B(1/2, 2 + 1/2)/B(1/2, 1/2) = 3/8.
        assert!((prior_inclusion(1.0, 2, 1, false) - 0.625).abs() < 1e-12);
        // Two exposures without self pairs fill every tree with both.
        assert_eq!(prior_inclusion(1.0, 2, 3, true), 1.0);
    }

    /// Dirichlet-multinomial probability of one assignment sequence.
    fn dm_log_prob(seq: &[usize], m: usize, kappa: f64) -> f64 {
        let a = kappa / m as f64;
        let mut counts = vec![0usize; m];
        for &s in seq {
            counts[s] += 1;
        }
        let num: f64 = counts.iter().map(|&c| ln_gamma(a + c as f64) - ln_gamma(a)).sum();
        num - (ln_gamma(kappa + seq.len() as f64) - ln_gamma(kappa))
    }

    #[test]
    fn noself_prior_matches_enumeration() {
        for (m, trees, kappa) in [(3usize, 2usize, 1.0), (4, 2, 0.3), (3, 3, 2.5)] {
            let slots = 2 * trees;
            let (mut valid, mut excluded) = (0.0, 0.0);
            for code in 0..m.pow(slots as u32) {
                let seq: Vec<usize> = (0..slots).map(|i| code / m.pow(i as u32) % m).collect();
                if seq.chunks(2).any(|p| p[0] == p[1]) {
                    continue;
                }
                let p = dm_log_prob(&seq, m, kappa).exp();
                valid += p;
                if !seq.contains(&0) {
                    excluded += p;
                }
            }
            let oracle = 1.0 - excluded / valid;
            assert!((prior_inclusion(kappa, m, trees, true) - oracle).abs() < 1e-12, "{m} {trees}");
        }
    }

    #[test]
    fn bayes_factor_limits() {
        assert_eq!(bayes_factor(1.0, 0.5), f64::INFINITY);
        assert_eq!(bayes_factor(0.0, 0.5), 0.0);
        assert!((bayes_factor(0.5, 0.5) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn spline_reproduces_cubic() {
        let x: Vec<f64> = (0..200).map(|i| i as f64 / 20.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 - 2.0 * v + 0.3 * v * v * v).collect();
        let s = CubicSpline::fit(&x, &y).unwrap();
        for v in [0.5, 3.3, 9.0] {
            let err = (s.predict(v) - (1.0 - 2.0 * v + 0.3 * v * v * v)).abs();
            assert!(err < 1e-4, "{v}: {err}");
        }
    }
}
