use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ModifierDef, ModifierKind};
use crate::error::{Error, Result};
use crate::tree::TreePriorParams;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    #[default]
    Gaussian,
    Logit,
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(Family::Gaussian),
            "logit" | "logistic" | "binomial" => Ok(Family::Logit),
            "zinb" => Err(Error::Unsupported(
                "the zero-inflated negative binomial family is not implemented".into(),
            )),
            other => Err(Error::Spec(format!("unknown family `{other}`"))),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Gaussian => "gaussian",
            Family::Logit => "logit",
        })
    }
}

/// Only linear lag effects are implemented.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DlmType {
    #[default]
    Linear,
}

impl FromStr for DlmType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(DlmType::Linear),
            "nonlinear" | "monotone" => Err(Error::Unsupported(format!(
                "dlm type `{s}` is not implemented; only `linear` is available"
            ))),
            other => Err(Error::Spec(format!("unknown dlm type `{other}`"))),
        }
    }
}

/// Which lagged interactions a mixture model carries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionMode {
    #[default]
    None,
    /// Between different exposures only.
    Noself,
    /// Between and within exposures.
    All,
}

impl FromStr for InteractionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(InteractionMode::None),
            "noself" => Ok(InteractionMode::Noself),
            "all" => Ok(InteractionMode::All),
            other => Err(Error::Spec(format!("unknown interaction mode `{other}`"))),
        }
    }
}

impl fmt::Display for InteractionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InteractionMode::None => "none",
            InteractionMode::Noself => "noself",
            InteractionMode::All => "all",
        })
    }
}

impl InteractionMode {
    /// Exposure pairs `(m1, m2)` with `m1 <= m2` that may interact.
    pub fn pairs(self, exposures: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for a in 0..exposures {
            for b in a..exposures {
                let keep = match self {
                    InteractionMode::None => false,
                    InteractionMode::Noself => a != b,
                    InteractionMode::All => true,
                };
                if keep {
                    out.push((a, b));
                }
            }
        }
        out
    }

    pub fn pair_index(self, exposures: usize, m1: usize, m2: usize) -> Option<usize> {
        let (a, b) = (m1.min(m2), m1.max(m2));
        self.pairs(exposures).iter().position(|p| *p == (a, b))
    }
}

/// Global effect-shrinkage configuration: every terminal effect and
/// interaction cell is N(0, τ²) with τ ~ half-Cauchy(0, `tau_scale`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shrinkage {
    pub tau_scale: f64,
}

impl Default for Shrinkage {
    fn default() -> Self {
        Self { tau_scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub dlm_type: DlmType,
    pub mixture: bool,
    pub het: bool,
    pub interaction_mode: InteractionMode,
    pub tree_prior: TreePriorParams,
    pub shrinkage: Shrinkage,
    /// Concentration of the Dirichlet prior on exposure selection.
    pub kappa: f64,
    /// Prior inclusion probability of each modifier.
    pub modifier_sparsity: f64,
    pub modifiers: Vec<ModifierDef>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            family: Family::Gaussian,
            dlm_type: DlmType::Linear,
            mixture: false,
            het: false,
            interaction_mode: InteractionMode::None,
            tree_prior: TreePriorParams::default(),
            shrinkage: Shrinkage::default(),
            kappa: 1.0,
            modifier_sparsity: 0.5,
            modifiers: Vec::new(),
        }
    }
}

impl ModelSpec {
    pub fn tdlm() -> Self {
        Self::default()
    }

    pub fn tdlmm(mode: InteractionMode) -> Self {
        Self {
            mixture: true,
            interaction_mode: mode,
            ..Self::default()
        }
    }

    pub fn hdlm(modifiers: Vec<ModifierDef>) -> Self {
        Self {
            het: true,
            modifiers,
            ..Self::default()
        }
    }

    pub fn hdlmm(modifiers: Vec<ModifierDef>, mode: InteractionMode) -> Self {
        Self {
            mixture: true,
            het: true,
            interaction_mode: mode,
            modifiers,
            ..Self::default()
        }
    }

    pub fn model_class(&self) -> &'static str {
        match (self.mixture, self.het) {
            (false, false) => "tdlm",
            (true, false) => "tdlmm",
            (false, true) => "hdlm",
            (true, true) => "hdlmm",
        }
    }

    /// DLM trees per ensemble member.
    pub fn slots(&self) -> usize {
        if self.mixture {
            2
        } else {
            1
        }
    }

    pub fn has_interactions(&self) -> bool {
        self.mixture && self.interaction_mode != InteractionMode::None
    }

    /// Checks that do not need data.
    pub fn validate(&self) -> Result<()> {
        let p = &self.tree_prior;
        if !(p.alpha > 0.0 && p.alpha < 1.0) || !(p.beta >= 0.0) || p.num_trees == 0 {
            return Err(Error::Spec(
                "tree prior needs 0 < alpha < 1, beta >= 0 and at least one tree".into(),
            ));
        }
        if self.interaction_mode != InteractionMode::None && !self.mixture {
            return Err(Error::Spec("interactions require a mixture model".into()));
        }
        if self.het && self.modifiers.is_empty() {
            return Err(Error::Spec("heterogeneous models need at least one modifier".into()));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::Spec("kappa must be positive".into()));
        }
        if !(self.modifier_sparsity > 0.0 && self.modifier_sparsity <= 1.0) {
            return Err(Error::Spec("modifier sparsity must lie in (0, 1]".into()));
        }
        if !(self.shrinkage.tau_scale > 0.0) {
            return Err(Error::Spec("shrinkage scale must be positive".into()));
        }
        Ok(())
    }

    /// Checks against a dataset.
    pub fn validate_for(&self, data: &Dataset) -> Result<()> {
        self.validate()?;
        let m = data.exposures().len();
        if self.mixture && m < 2 {
            return Err(Error::Spec(format!("a mixture model needs at least 2 exposures, got {m}")));
        }
        if !self.mixture && m != 1 {
            return Err(Error::Spec(format!(
                "a single-exposure model needs exactly 1 exposure, got {m}; use a mixture model"
            )));
        }
        if self.family == Family::Logit && data.outcome().iter().any(|y| *y != 0.0 && *y != 1.0) {
            return Err(Error::InvalidData("logit family requires a 0/1 outcome".into()));
        }
        if self.het {
            for def in &self.modifiers {
                let j = data.modifiers().index_of(&def.name).ok_or_else(|| {
                    Error::Spec(format!("modifier `{}` is not in the data", def.name))
                })?;
                let ok = matches!(
                    (&def.kind, &data.modifiers().columns()[j]),
                    (ModifierKind::Continuous, crate::data::ModifierColumn::Continuous { .. })
                        | (ModifierKind::Categorical { .. }, crate::data::ModifierColumn::Categorical { .. })
                );
                if !ok {
                    return Err(Error::Spec(format!("modifier `{}` has the wrong kind", def.name)));
                }
            }
        }
        Ok(())
    }
}

/// Test hooks. All off by default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplerHooks {
    /// Keep every tree root-only with zero effects; no tree moves.
    pub freeze_trees: bool,
    pub fixed_sigma2: Option<f64>,
    pub fixed_tau2: Option<f64>,
    /// Accept every valid tree proposal.
    pub accept_all: bool,
    /// Check structural invariants every iteration and record violations.
    pub debug_checks: bool,
    /// Drop the likelihood from tree and exposure moves, so trees follow
    /// their prior.
    #[serde(default)]
    pub prior_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcControl {
    pub n_burn: usize,
    pub n_iter: usize,
    pub n_thin: usize,
    pub seed: u64,
    pub n_chains: usize,
    #[serde(default)]
    pub hooks: SamplerHooks,
    /// Print progress to standard error.
    #[serde(default)]
    pub progress: bool,
}

impl Default for McmcControl {
    fn default() -> Self {
        Self {
            n_burn: 2500,
            n_iter: 10000,
            n_thin: 5,
            seed: 1,
            n_chains: 1,
            hooks: SamplerHooks::default(),
            progress: false,
        }
    }
}

impl McmcControl {
    pub fn new(n_burn: usize, n_iter: usize, n_thin: usize, seed: u64) -> Self {
        Self {
            n_burn,
            n_iter,
            n_thin,
            seed,
            ..Self::default()
        }
    }

    pub fn retained(&self) -> usize {
        self.n_iter / self.n_thin
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_thin == 0 || self.n_iter == 0 || self.n_chains == 0 {
            return Err(Error::Spec("n_iter, n_thin and n_chains must be positive".into()));
        }
        if self.n_iter < self.n_thin {
            return Err(Error::Spec("n_iter must be at least n_thin".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_control_retains_2000() {
        assert_eq!(McmcControl::default().retained(), 2000);
    }

    #[test]
    fn noself_with_five_exposures_has_ten_pairs() {
        assert_eq!(InteractionMode::Noself.pairs(5).len(), 10);
        assert_eq!(InteractionMode::All.pairs(5).len(), 15);
        assert!(InteractionMode::None.pairs(5).is_empty());
        assert_eq!(InteractionMode::Noself.pair_index(5, 3, 1), Some(5));
        assert_eq!(InteractionMode::Noself.pair_index(5, 2, 2), None);
    }

    #[test]
    fn zinb_is_unsupported() {
        let e = "zinb".parse::<Family>().unwrap_err();
        assert_eq!(e.category(), crate::ErrorCategory::UnsupportedModel);
        assert!("poisson".parse::<Family>().is_err());
        assert_eq!("logit".parse::<Family>().unwrap(), Family::Logit);
    }

    #[test]
    fn spec_consistency() {
        let mut s = ModelSpec::tdlm();
        s.interaction_mode = InteractionMode::Noself;
        assert!(s.validate().is_err());
        assert!(ModelSpec::hdlm(Vec::new()).validate().is_err());
        assert!(ModelSpec::tdlmm(InteractionMode::All).validate().is_ok());
    }
}
