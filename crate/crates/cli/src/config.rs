//! Fit settings, read from a TOML file and overridden by flags.

use std::path::{Path, PathBuf};

use laggard::data::{iqr_scale, load_wide_table, modifier_defs, Dataset, ExposureColumns, WideTableSpec};
use laggard::mcmc::{DlmType, Family, InteractionMode, McmcControl, ModelSpec, Shrinkage};
use laggard::tree::TreePriorParams;
use laggard::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Wide-format table, one row per observation.
    pub data: Option<PathBuf>,
    pub outcome: Option<String>,
    pub covariates: Vec<String>,
    /// `NAME` reads columns `NAME_1`, `NAME_2`, ...; `NAME=PREFIX` reads
    /// `PREFIX1`, `PREFIX2`, ...
    pub exposures: Vec<String>,
    pub family: String,
    pub dlm_type: String,
    pub mixture: bool,
    /// `none`, `noself` or `all`. Mixtures default to `noself`.
    pub interactions: Option<String>,
    pub het: bool,
    /// Defaults to the covariates.
    pub modifiers: Option<Vec<String>>,
    pub modifier_splits: usize,
    pub modifier_sparsity: f64,
    pub kappa: f64,
    pub trees: usize,
    pub alpha: f64,
    pub beta: f64,
    pub tau_scale: f64,
    pub burn: usize,
    pub iter: usize,
    pub thin: usize,
    pub seed: u64,
    pub chains: usize,
    /// `none` or `iqr`.
    pub scale: String,
    pub delimiter: char,
    pub out: Option<PathBuf>,
}

impl Default for FitConfig {
    fn default() -> Self {
        let spec = ModelSpec::default();
        let control = McmcControl::default();
        Self {
            data: None,
            outcome: None,
            covariates: Vec::new(),
            exposures: Vec::new(),
            family: "gaussian".into(),
            dlm_type: "linear".into(),
            mixture: false,
            interactions: None,
            het: false,
            modifiers: None,
            modifier_splits: 10,
            modifier_sparsity: spec.modifier_sparsity,
            kappa: spec.kappa,
            trees: spec.tree_prior.num_trees,
            alpha: spec.tree_prior.alpha,
            beta: spec.tree_prior.beta,
            tau_scale: spec.shrinkage.tau_scale,
            burn: control.n_burn,
            iter: control.n_iter,
            thin: control.n_thin,
            seed: control.seed,
            chains: control.n_chains,
            scale: "none".into(),
            delimiter: ',',
            out: None,
        }
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl FitConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
    }

    pub fn modifier_names(&self) -> Vec<String> {
        self.modifiers.clone().unwrap_or_else(|| self.covariates.clone())
    }

    fn interaction_mode(&self) -> Result<InteractionMode> {
        match &self.interactions {
            Some(s) => s.parse(),
            None if self.mixture => Ok(InteractionMode::Noself),
            None => Ok(InteractionMode::None),
        }
    }

    fn table_spec(&self) -> Result<WideTableSpec> {
        let outcome = self.outcome.clone().ok_or_else(|| usage("no outcome column given"))?;
        if self.exposures.is_empty() {
            return Err(usage("no exposure given"));
        }
        if !self.delimiter.is_ascii() {
            return Err(usage("delimiter must be a single ASCII character"));
        }
        let exposures = self
            .exposures
            .iter()
            .map(|e| match e.split_once('=') {
                Some((name, prefix)) => (name.to_string(), ExposureColumns::Prefix(prefix.to_string())),
                None => (e.clone(), ExposureColumns::Prefix(format!("{e}_"))),
            })
            .collect();
        Ok(WideTableSpec {
            outcome,
            covariates: self.covariates.clone(),
            exposures,
            modifiers: if self.het { self.modifier_names() } else { Vec::new() },
            delimiter: self.delimiter as u8,
        })
    }

    pub fn load_data(&self) -> Result<Dataset> {
        let path = self.data.as_ref().ok_or_else(|| usage("no data file given"))?;
        let data = load_wide_table(path, &self.table_spec()?)?;
        match self.scale.as_str() {
            "none" => Ok(data),
            "iqr" => data.map_exposures(iqr_scale),
            other => Err(usage(format!("unknown scaling `{other}`; use none or iqr"))),
        }
    }

    pub fn model_spec(&self, data: &Dataset) -> Result<ModelSpec> {
        let family: Family = self.family.parse()?;
        let dlm_type: DlmType = self.dlm_type.parse()?;
        let modifiers = if self.het {
            modifier_defs(data.modifiers(), &self.modifier_names(), self.modifier_splits)?
        } else {
            Vec::new()
        };
        let spec = ModelSpec {
            family,
            dlm_type,
            mixture: self.mixture,
            het: self.het,
            interaction_mode: self.interaction_mode()?,
            tree_prior: TreePriorParams {
                alpha: self.alpha,
                beta: self.beta,
                num_trees: self.trees,
            },
            shrinkage: Shrinkage {
                tau_scale: self.tau_scale,
            },
            kappa: self.kappa,
            modifier_sparsity: self.modifier_sparsity,
            modifiers,
        };
        spec.validate_for(data)?;
        Ok(spec)
    }

    pub fn control(&self) -> McmcControl {
        McmcControl {
            n_burn: self.burn,
            n_iter: self.iter,
            n_thin: self.thin,
            seed: self.seed,
            n_chains: self.chains,
            ..McmcControl::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_keys_match_fields() {
        let c: FitConfig = toml::from_str(
            "data = \"d.csv\"\noutcome = \"y\"\nexposures = [\"pm25\", \"temp=t\"]\nmixture = true\nburn = 10\n",
        )
        .unwrap();
        assert_eq!(c.burn, 10);
        assert_eq!(c.interaction_mode().unwrap(), InteractionMode::Noself);
        let spec = c.table_spec().unwrap();
        assert_eq!(spec.exposures[0].1, ExposureColumns::Prefix("pm25_".into()));
        assert_eq!(spec.exposures[1].1, ExposureColumns::Prefix("t".into()));
        assert!(toml::from_str::<FitConfig>("bogus = 1").is_err());
    }

    #[test]
    fn modifiers_default_to_covariates() {
        let c = FitConfig {
            het: true,
            covariates: vec!["sex".into(), "age".into()],
            ..FitConfig::default()
        };
        assert_eq!(c.modifier_names(), vec!["sex".to_string(), "age".to_string()]);
    }
}
