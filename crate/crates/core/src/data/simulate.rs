//! Synthetic datasets with a known truth, for tests and demonstrations.
//!
//! Configuration is a TOML document:
//!
//! ```toml
//! n = 1000
//! lags = 37
//! family = "gaussian"        # or "logit"
//! noise_sd = 1.0
//! intercept = 0.0
//! autocorrelation = 0.5      # lag-1 correlation within an exposure
//! cross_correlation = 0.0    # same-lag correlation between exposures
//! exposure_mean = 0.0
//! exposure_sd = 1.0
//!
//! [[exposures]]
//! name = "PM25"
//! windows = [{ start = 11, end = 15, effect = 0.03 }]
//!
//! [[covariates]]
//! name = "x1"
//! coefficient = 0.5
//!
//! [[interactions]]
//! exposure1 = "PM25"
//! exposure2 = "TEMP"
//! lags1 = [11, 15]
//! lags2 = [5, 10]
//! effect = 0.01
//!
//! [[modifiers]]
//! name = "sex"
//! kind = "binary"            # binary | categorical | continuous
//! levels = ["F", "M"]
//!
//! [heterogeneity]
//! modifier = "sex"
//! level = "M"                # or `threshold = 30.0` (rows above it) for continuous
//! exposure = "PM25"
//! windows = [{ start = 11, end = 15, effect = 0.1 }]
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Design, ExposureMatrix, ModifierColumn, ModifierTable};
use crate::error::{Error, Result};
use crate::mcmc::Family;

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectWindow {
    pub start: usize,
    pub end: usize,
    pub effect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExposureConfig {
    pub name: String,
    #[serde(default)]
    pub windows: Vec<EffectWindow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateConfig {
    pub name: String,
    #[serde(default)]
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionConfig {
    pub exposure1: String,
    pub exposure2: String,
    pub lags1: [usize; 2],
    pub lags2: [usize; 2],
    pub effect: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimModifierKind {
    Binary,
    Categorical,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModifierConfig {
    pub name: String,
    pub kind: SimModifierKind,
    /// Levels for binary/categorical modifiers, drawn uniformly.
    #[serde(default)]
    pub levels: Vec<String>,
    #[serde(default)]
    pub mean: f64,
    #[serde(default = "one")]
    pub sd: f64,
    /// Added to the fixed-effect design as well.
    #[serde(default = "yes")]
    pub in_design: bool,
    /// Main effect per indicator column (or per unit for continuous).
    #[serde(default)]
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeterogeneityConfig {
    pub modifier: String,
    #[serde(default)]
    pub level: Option<String>,
    #[serde(default)]
    pub threshold: Option<f64>,
    pub exposure: String,
    pub windows: Vec<EffectWindow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub n: usize,
    pub lags: usize,
    #[serde(default)]
    pub family: Family,
    #[serde(default = "one")]
    pub noise_sd: f64,
    #[serde(default)]
    pub intercept: f64,
    #[serde(default)]
    pub autocorrelation: f64,
    #[serde(default)]
    pub cross_correlation: f64,
    #[serde(default)]
    pub exposure_mean: f64,
    #[serde(default = "one")]
    pub exposure_sd: f64,
    pub exposures: Vec<ExposureConfig>,
    #[serde(default)]
    pub covariates: Vec<CovariateConfig>,
    #[serde(default)]
    pub interactions: Vec<InteractionConfig>,
    #[serde(default)]
    pub modifiers: Vec<ModifierConfig>,
    #[serde(default)]
    pub heterogeneity: Option<HeterogeneityConfig>,
}

impl SimulationConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Single exposure, no covariates, unit-variance AR(1) exposures.
    pub fn single_exposure(n: usize, lags: usize, windows: Vec<EffectWindow>) -> Self {
        Self {
            n,
            lags,
            family: Family::Gaussian,
            noise_sd: 1.0,
            intercept: 0.0,
            autocorrelation: 0.5,
            cross_correlation: 0.0,
            exposure_mean: 0.0,
            exposure_sd: 1.0,
            exposures: vec![ExposureConfig {
                name: "X".into(),
                windows,
            }],
            covariates: Vec::new(),
            interactions: Vec::new(),
            modifiers: Vec::new(),
            heterogeneity: None,
        }
    }

    fn exposure_index(&self, name: &str) -> Result<usize> {
        self.exposures
            .iter()
            .position(|e| e.name == name)
            .ok_or_else(|| Error::Config(format!("unknown exposure `{name}`")))
    }

    fn check_window(&self, start: usize, end: usize) -> Result<()> {
        if start == 0 || start > end || end > self.lags {
            return Err(Error::Config(format!(
                "window {start}-{end} outside lags 1-{}",
                self.lags
            )));
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.lags < 2 {
            return Err(Error::Config("need n >= 1 and lags >= 2".into()));
        }
        if self.exposures.is_empty() {
            return Err(Error::Config("at least one exposure is required".into()));
        }
        if !(-1.0 < self.autocorrelation && self.autocorrelation < 1.0) {
            return Err(Error::Config("autocorrelation must lie in (-1, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.cross_correlation) {
            return Err(Error::Config("cross_correlation must lie in [0, 1)".into()));
        }
        if self.noise_sd < 0.0 || self.exposure_sd <= 0.0 {
            return Err(Error::Config("standard deviations must be positive".into()));
        }
        for e in &self.exposures {
            for w in &e.windows {
                self.check_window(w.start, w.end)?;
            }
        }
        for it in &self.interactions {
            self.exposure_index(&it.exposure1)?;
            self.exposure_index(&it.exposure2)?;
            self.check_window(it.lags1[0], it.lags1[1])?;
            self.check_window(it.lags2[0], it.lags2[1])?;
        }
        for m in &self.modifiers {
            match m.kind {
                SimModifierKind::Binary if m.levels.len() != 2 && !m.levels.is_empty() => {
                    return Err(Error::Config(format!(
                        "binary modifier `{}` needs exactly two levels",
                        m.name
                    )))
                }
                SimModifierKind::Categorical if m.levels.len() < 2 => {
                    return Err(Error::Config(format!(
                        "categorical modifier `{}` needs at least two levels",
                        m.name
                    )))
                }
                _ => {}
            }
        }
        if let Some(h) = &self.heterogeneity {
            self.exposure_index(&h.exposure)?;
            let m = self
                .modifiers
                .iter()
                .find(|m| m.name == h.modifier)
                .ok_or_else(|| Error::Config(format!("unknown modifier `{}`", h.modifier)))?;
            match (m.kind, &h.level, h.threshold) {
                (SimModifierKind::Continuous, None, Some(_)) => {}
                (SimModifierKind::Binary | SimModifierKind::Categorical, Some(_), None) => {}
                _ => {
                    return Err(Error::Config(
                        "heterogeneity needs `level` for categorical or `threshold` for continuous modifiers"
                            .into(),
                    ))
                }
            }
            for w in &h.windows {
                self.check_window(w.start, w.end)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionTruth {
    pub exposure1: usize,
    pub exposure2: usize,
    /// Row-major lags × lags grid, `[t1 - 1][t2 - 1]`.
    pub grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupTruth {
    pub modifier: String,
    pub level: Option<String>,
    pub threshold: Option<f64>,
    pub exposure: usize,
    /// Total lag effect for rows inside the subgroup.
    pub theta: Vec<f64>,
    pub members: Vec<bool>,
}

/// Exactly what was injected into the simulated outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTruth {
    pub exposure_names: Vec<String>,
    /// Per exposure, the lag effect for rows outside any subgroup.
    pub theta: Vec<Vec<f64>>,
    pub interactions: Vec<InteractionTruth>,
    pub subgroup: Option<SubgroupTruth>,
    /// Coefficients in design-column order.
    pub gamma: Vec<f64>,
    pub noise_sd: f64,
    pub family: Family,
}

impl SimulationTruth {
    /// Lag effect of exposure `m` for row `i`.
    pub fn theta_for_row(&self, m: usize, i: usize) -> &[f64] {
        match &self.subgroup {
            Some(s) if s.exposure == m && s.members[i] => &s.theta,
            _ => &self.theta[m],
        }
    }

    pub fn cumulative(&self, m: usize) -> f64 {
        self.theta[m].iter().sum()
    }

    /// Noise-free linear predictor implied by the truth record.
    pub fn linear_predictor(&self, data: &Dataset) -> Vec<f64> {
        let lags = data.lags();
        (0..data.rows())
            .map(|i| {
                let mut eta: f64 = data
                    .design()
                    .row(i)
                    .iter()
                    .zip(&self.gamma)
                    .map(|(z, g)| z * g)
                    .sum();
                for (m, e) in data.exposures().iter().enumerate() {
                    let th = self.theta_for_row(m, i);
                    eta += e.row(i).iter().zip(th).map(|(x, t)| x * t).sum::<f64>();
                }
                for it in &self.interactions {
                    let x1 = data.exposures()[it.exposure1].row(i);
                    let x2 = data.exposures()[it.exposure2].row(i);
                    for t1 in 0..lags {
                        for t2 in 0..lags {
                            eta += x1[t1] * x2[t2] * it.grid[t1 * lags + t2];
                        }
                    }
                }
                eta
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub data: Dataset,
    pub truth: SimulationTruth,
}

fn window_vector(lags: usize, windows: &[EffectWindow]) -> Vec<f64> {
    let mut theta = vec![0.0; lags];
    for w in windows {
        for t in w.start..=w.end {
            theta[t - 1] += w.effect;
        }
    }
    theta
}

pub fn simulate_dataset(config: &SimulationConfig, seed: u64) -> Result<SimulatedData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, lags, m_count) = (config.n, config.lags, config.exposures.len());
    let rho = config.autocorrelation;
    let innov_sd = (1.0 - rho * rho).sqrt();
    let shared = config.cross_correlation.sqrt();
    let own = (1.0 - config.cross_correlation).sqrt();

    let mut exposure_values = vec![vec![0.0; n * lags]; m_count];
    let mut state = vec![0.0; m_count];
    for i in 0..n {
        for t in 0..lags {
            let common: f64 = rng.sample(StandardNormal);
            for (m, s) in state.iter_mut().enumerate() {
                let own_draw: f64 = rng.sample(StandardNormal);
                let e = shared * common + own * own_draw;
                *s = if t == 0 { e } else { rho * *s + innov_sd * e };
                exposure_values[m][i * lags + t] = config.exposure_mean + config.exposure_sd * *s;
            }
        }
    }

    let covariates: Vec<Vec<f64>> = config
        .covariates
        .iter()
        .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
        .collect();

    let mut modifier_columns = Vec::with_capacity(config.modifiers.len());
    for mc in &config.modifiers {
        let col = match mc.kind {
            SimModifierKind::Continuous => ModifierColumn::Continuous {
                values: (0..n)
                    .map(|_| mc.mean + mc.sd * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            },
            SimModifierKind::Binary | SimModifierKind::Categorical => {
                let levels = if mc.levels.is_empty() {
                    vec!["0".to_string(), "1".to_string()]
                } else {
                    mc.levels.clone()
                };
                let raw: Vec<&str> = (0..n)
                    .map(|_| levels[rng.random_range(0..levels.len())].as_str())
                    .collect();
                let mut col = ModifierColumn::categorical(&raw);
                // Keep every declared level even if unobserved in a tiny sample.
                if let ModifierColumn::Categorical { levels: seen, codes } = &mut col {
                    let mut all = levels.clone();
                    all.sort();
                    all.dedup();
                    for c in codes.iter_mut() {
                        *c = all.iter().position(|l| *l == seen[*c as usize]).unwrap() as u32;
                    }
                    *seen = all;
                }
                col
            }
        };
        modifier_columns.push(col);
    }

    // Design: intercept, covariates, then modifiers flagged for the design.
    let mut names = vec!["(Intercept)".to_string()];
    let mut gamma = vec![config.intercept];
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
    for (cc, values) in config.covariates.iter().zip(&covariates) {
        names.push(cc.name.clone());
        gamma.push(cc.coefficient);
        cols.push(values.clone());
    }
    for (mc, col) in config.modifiers.iter().zip(&modifier_columns) {
        if !mc.in_design {
            continue;
        }
        match col {
            ModifierColumn::Continuous { values } => {
                names.push(mc.name.clone());
                gamma.push(mc.coefficient);
                cols.push(values.clone());
            }
            ModifierColumn::Categorical { levels, codes } => {
                for (li, level) in levels.iter().enumerate().skip(1) {
                    names.push(format!("{}{level}", mc.name));
                    gamma.push(mc.coefficient);
                    cols.push(codes.iter().map(|&c| f64::from(u8::from(c as usize == li))).collect());
                }
            }
        }
    }
    let p = names.len();
    let mut design_values = vec![0.0; n * p];
    for (j, col) in cols.iter().enumerate() {
        for i in 0..n {
            design_values[i * p + j] = col[i];
        }
    }
    let design = Design::new(names, n, design_values)?;

    let exposures = config
        .exposures
        .iter()
        .zip(exposure_values)
        .map(|(ec, values)| ExposureMatrix::new(ec.name.clone(), n, lags, values))
        .collect::<Result<Vec<_>>>()?;
    let modifier_names = config.modifiers.iter().map(|m| m.name.clone()).collect();
    let modifiers = ModifierTable::new(modifier_names, modifier_columns)?;

    let theta: Vec<Vec<f64>> = config
        .exposures
        .iter()
        .map(|e| window_vector(lags, &e.windows))
        .collect();
    let interactions = config
        .interactions
        .iter()
        .map(|it| {
            let e1 = config.exposure_index(&it.exposure1)?;
            let e2 = config.exposure_index(&it.exposure2)?;
            let mut grid = vec![0.0; lags * lags];
            for t1 in it.lags1[0]..=it.lags1[1] {
                for t2 in it.lags2[0]..=it.lags2[1] {
                    grid[(t1 - 1) * lags + t2 - 1] += it.effect;
                }
            }
            Ok(InteractionTruth {
                exposure1: e1,
                exposure2: e2,
                grid,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let subgroup = match &config.heterogeneity {
        None => None,
        Some(h) => {
            let mi = config
                .modifiers
                .iter()
                .position(|m| m.name == h.modifier)
                .expect("validated");
            let members = match &modifiers.columns()[mi] {
                ModifierColumn::Continuous { values } => {
                    let th = h.threshold.expect("validated");
                    values.iter().map(|v| *v > th).collect()
                }
                ModifierColumn::Categorical { levels, codes } => {
                    let level = h.level.as_deref().expect("validated");
                    let code = levels.iter().position(|l| l == level).ok_or_else(|| {
                        Error::Config(format!("modifier `{}` has no level `{level}`", h.modifier))
                    })?;
                    codes.iter().map(|&c| c as usize == code).collect()
                }
            };
            let exposure = config.exposure_index(&h.exposure)?;
            let extra = window_vector(lags, &h.windows);
            Some(SubgroupTruth {
                modifier: h.modifier.clone(),
                level: h.level.clone(),
                threshold: h.threshold,
                exposure,
                theta: theta[exposure].iter().zip(&extra).map(|(a, b)| a + b).collect(),
                members,
            })
        }
    };

    let truth = SimulationTruth {
        exposure_names: config.exposures.iter().map(|e| e.name.clone()).collect(),
        theta,
        interactions,
        subgroup,
        gamma,
        noise_sd: config.noise_sd,
        family: config.family,
    };

    // Outcome: the design-independent parts are computed through the truth
    // record so that the record is, by construction, what was injected.
    let placeholder = Dataset::new(vec![0.0; n], design, exposures, modifiers)?;
    let eta = truth.linear_predictor(&placeholder);
    let outcome: Vec<f64> = eta
        .iter()
        .map(|&e| match config.family {
            Family::Gaussian => e + config.noise_sd * rng.sample::<f64, _>(StandardNormal),
            Family::Logit => {
                let p = 1.0 / (1.0 + (-e).exp());
                f64::from(u8::from(rng.random::<f64>() < p))
            }
        })
        .collect();
    let data = Dataset::new(
        outcome,
        placeholder.design().clone(),
        placeholder.exposures().to_vec(),
        placeholder.modifiers().clone(),
    )?;
    Ok(SimulatedData { data, truth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn window_config() -> SimulationConfig {
        SimulationConfig::single_exposure(
            1000,
            37,
            vec![EffectWindow {
                start: 11,
                end: 15,
                effect: 0.03,
            }],
        )
    }

    #[test]
    fn ols_on_true_window_recovers_cumulative() {
        let sim = simulate_dataset(&window_config(), 11).unwrap();
        let d = &sim.data;
        let n = d.rows();
        // Regress y on intercept plus the five window lags.
        let x = DMatrix::from_fn(n, 6, |i, j| {
            if j == 0 {
                1.0
            } else {
                d.exposures()[0].get(i, 10 + j)
            }
        });
        let y = DVector::from_column_slice(d.outcome());
        let xtx = x.transpose() * &x;
        let inv = xtx.try_inverse().unwrap();
        let beta = &inv * x.transpose() * &y;
        let resid = &y - &x * &beta;
        let s2 = resid.dot(&resid) / (n - 6) as f64;
        let cum: f64 = (1..6).map(|j| beta[j]).sum();
        let var: f64 = (1..6).flat_map(|a| (1..6).map(move |b| (a, b))).map(|(a, b)| inv[(a, b)]).sum::<f64>() * s2;
        assert!(
            (cum - 0.15).abs() < 3.0 * var.sqrt(),
            "cumulative {cum} se {}",
            var.sqrt()
        );
        assert!((sim.truth.cumulative(0) - 0.15).abs() < 1e-12);
    }

    #[test]
    fn zero_everything_gives_intercept() {
        let mut c = SimulationConfig::single_exposure(50, 5, Vec::new());
        c.noise_sd = 0.0;
        c.intercept = 2.5;
        let sim = simulate_dataset(&c, 3).unwrap();
        assert!(sim.data.outcome().iter().all(|y| *y == 2.5));
    }

    #[test]
    fn deterministic_given_seed() {
        let a = simulate_dataset(&window_config(), 5).unwrap();
        let b = simulate_dataset(&window_config(), 5).unwrap();
        assert_eq!(a.data, b.data);
        let c = simulate_dataset(&window_config(), 6).unwrap();
        assert_ne!(a.data.outcome(), c.data.outcome());
    }

    #[test]
    fn truth_matches_injected_signal() {
        // With no noise the outcome is exactly the truth's linear predictor,
        // recomputed here by direct summation.
        let mut c = window_config();
        c.n = 40;
        c.noise_sd = 0.0;
        c.covariates.push(CovariateConfig {
            name: "z".into(),
            coefficient: 0.7,
        });
        let sim = simulate_dataset(&c, 9).unwrap();
        let d = &sim.data;
        for i in 0..d.rows() {
            let mut eta = d.design().row(i)[1] * 0.7;
            for t in 11..=15 {
                eta += 0.03 * d.exposures()[0].get(i, t);
            }
            assert!((d.outcome()[i] - eta).abs() < 1e-12);
        }
    }

    #[test]
    fn toml_config_parses() {
        let text = r#"
            n = 20
            lags = 6
            family = "logit"
            [[exposures]]
            name = "A"
            windows = [{ start = 2, end = 3, effect = 0.5 }]
            [[exposures]]
            name = "B"
            [[modifiers]]
            name = "sex"
            kind = "binary"
            levels = ["F", "M"]
            [heterogeneity]
            modifier = "sex"
            level = "M"
            exposure = "A"
            windows = [{ start = 1, end = 1, effect = 1.0 }]
        "#;
        let c = SimulationConfig::from_toml(text).unwrap();
        let sim = simulate_dataset(&c, 1).unwrap();
        assert!(sim.data.outcome().iter().all(|y| *y == 0.0 || *y == 1.0));
        assert_eq!(sim.data.design().names(), &["(Intercept)", "sexM"]);
        let s = sim.truth.subgroup.as_ref().unwrap();
        assert_eq!(s.theta[0], 1.0);
        assert_eq!(s.theta[1], 0.5);
    }

    #[test]
    fn inconsistent_config_rejected() {
        let mut c = window_config();
        c.exposures[0].windows[0].end = 40;
        assert!(simulate_dataset(&c, 1).is_err());
        let mut c = window_config();
        c.interactions.push(InteractionConfig {
            exposure1: "X".into(),
            exposure2: "nope".into(),
            lags1: [1, 2],
            lags2: [1, 2],
            effect: 1.0,
        });
        assert!(simulate_dataset(&c, 1).is_err());
    }
}
