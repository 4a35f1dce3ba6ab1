//! Outcome, covariate, exposure and modifier data in the wide layout every
//! model consumes: one row per subject, one column per exposure lag.

mod modifier;
mod pivot;
mod scale;
pub mod simulate;
mod table;

pub use modifier::{modifier_defs, modifier_split_candidates, ModifierDef, ModifierKind, SplitCandidates};
pub use pivot::{pivot_time_series, PivotSpec};
pub use scale::{center_exposures, iqr_scale};
pub use table::{load_wide_table, load_wide_table_from_reader, ExposureColumns, Table, WideTableSpec};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// An n × T block of lagged measurements of one exposure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureMatrix {
    name: String,
    rows: usize,
    lags: usize,
    values: Vec<f64>,
    scale_factor: f64,
}

impl ExposureMatrix {
    /// `values` is row-major: row `i`, lag `t` (1-based) sits at `i * lags + t - 1`.
    pub fn new(name: impl Into<String>, rows: usize, lags: usize, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if rows == 0 {
            return Err(Error::Shape(format!("exposure `{name}` has no rows")));
        }
        if lags < 2 {
            return Err(Error::Shape(format!(
                "exposure `{name}` needs at least 2 lags, got {lags}"
            )));
        }
        if values.len() != rows * lags {
            return Err(Error::Shape(format!(
                "exposure `{name}`: {} values for {rows} rows x {lags} lags",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::MissingValue {
                row: pos / lags + 1,
                column: format!("{name}_{}", pos % lags + 1),
            });
        }
        Ok(Self {
            name,
            rows,
            lags,
            values,
            scale_factor: 1.0,
        })
    }

    pub(crate) fn with_scale(mut self, scale_factor: f64) -> Self {
        self.scale_factor = scale_factor;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn lags(&self) -> usize {
        self.lags
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn scale_factor(&self) -> f64 {
        self.scale_factor
    }
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.lags..(i + 1) * self.lags]
    }
    /// Value for row `i` at 1-based lag `t`.
    pub fn get(&self, i: usize, t: usize) -> f64 {
        self.values[i * self.lags + t - 1]
    }
    /// All rows at 1-based lag `t`.
    pub fn lag_column(&self, t: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, t)).collect()
    }
    /// Per-row average over lags.
    pub fn row_means(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.row(i).iter().sum::<f64>() / self.lags as f64)
            .collect()
    }
}

/// Fixed-effect design: intercept first, then covariates with categorical
/// columns expanded to reference-coded indicators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    names: Vec<String>,
    rows: usize,
    values: Vec<f64>,
}

impl Design {
    pub fn new(names: Vec<String>, rows: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * names.len() {
            return Err(Error::Shape(format!(
                "design has {} values for {rows} rows x {} columns",
                values.len(),
                names.len()
            )));
        }
        Ok(Self { names, rows, values })
    }

    pub fn intercept_only(rows: usize) -> Self {
        Self {
            names: vec!["(Intercept)".into()],
            rows,
            values: vec![1.0; rows],
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.names.len()
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.cols();
        &self.values[i * p..(i + 1) * p]
    }

    /// Numerical rank via singular values relative to the largest one.
    pub fn rank(&self) -> usize {
        let m = DMatrix::from_row_slice(self.rows, self.cols(), &self.values);
        let sv = m.singular_values();
        let max = sv.iter().copied().fold(0.0, f64::max);
        sv.iter().filter(|s| **s > max * 1e-10 && **s > 0.0).count()
    }

    pub fn check_full_rank(&self) -> Result<()> {
        if self.rows < self.cols() {
            return Err(Error::RankDeficient(format!(
                "{} columns but only {} rows",
                self.cols(),
                self.rows
            )));
        }
        let r = self.rank();
        if r < self.cols() {
            return Err(Error::RankDeficient(format!(
                "rank {r} < {} columns ({})",
                self.cols(),
                self.names.join(", ")
            )));
        }
        Ok(())
    }
}

/// One modifier column as loaded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModifierColumn {
    Continuous { values: Vec<f64> },
    Categorical { levels: Vec<String>, codes: Vec<u32> },
}

impl ModifierColumn {
    pub fn len(&self) -> usize {
        match self {
            ModifierColumn::Continuous { values } => values.len(),
            ModifierColumn::Categorical { codes, .. } => codes.len(),
        }
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn cell(&self, i: usize) -> ModifierCell {
        match self {
            ModifierColumn::Continuous { values } => ModifierCell::Real(values[i]),
            ModifierColumn::Categorical { codes, .. } => ModifierCell::Level(codes[i]),
        }
    }

    /// Builds a categorical column with levels in lexicographic order.
    pub fn categorical<S: AsRef<str>>(raw: &[S]) -> Self {
        let mut levels: Vec<String> = raw.iter().map(|s| s.as_ref().to_string()).collect();
        levels.sort();
        levels.dedup();
        let codes = raw
            .iter()
            .map(|s| levels.iter().position(|l| l == s.as_ref()).unwrap() as u32)
            .collect();
        ModifierColumn::Categorical { levels, codes }
    }
}

/// A coded modifier value: a real number or the index of a categorical level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ModifierCell {
    Real(f64),
    Level(u32),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModifierTable {
    names: Vec<String>,
    columns: Vec<ModifierColumn>,
}

impl ModifierTable {
    pub fn new(names: Vec<String>, columns: Vec<ModifierColumn>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::Shape("modifier names and columns differ in count".into()));
        }
        if let Some(first) = columns.first() {
            if columns.iter().any(|c| c.len() != first.len()) {
                return Err(Error::Shape("modifier columns differ in length".into()));
            }
        }
        Ok(Self { names, columns })
    }
    pub fn names(&self) -> &[String] {
        &self.names
    }
    pub fn columns(&self) -> &[ModifierColumn] {
        &self.columns
    }
    pub fn len(&self) -> usize {
        self.columns.len()
    }
    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }
    pub fn rows(&self) -> Option<usize> {
        self.columns.first().map(ModifierColumn::len)
    }
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
    pub fn row(&self, i: usize) -> Vec<ModifierCell> {
        self.columns.iter().map(|c| c.cell(i)).collect()
    }
}

/// Everything a model needs, validated at construction and immutable after.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    outcome: Vec<f64>,
    design: Design,
    exposures: Vec<ExposureMatrix>,
    modifiers: ModifierTable,
}

impl Dataset {
    pub fn new(
        outcome: Vec<f64>,
        design: Design,
        exposures: Vec<ExposureMatrix>,
        modifiers: ModifierTable,
    ) -> Result<Self> {
        let n = outcome.len();
        if n == 0 {
            return Err(Error::Shape("dataset has no rows".into()));
        }
        if let Some(i) = outcome.iter().position(|v| !v.is_finite()) {
            return Err(Error::MissingValue {
                row: i + 1,
                column: "outcome".into(),
            });
        }
        if design.rows() != n {
            return Err(Error::Shape(format!(
                "design has {} rows, outcome has {n}",
                design.rows()
            )));
        }
        if exposures.is_empty() {
            return Err(Error::Shape("at least one exposure is required".into()));
        }
        let lags = exposures[0].lags();
        for e in &exposures {
            if e.rows() != n {
                return Err(Error::Shape(format!(
                    "exposure `{}` has {} rows, outcome has {n}",
                    e.name(),
                    e.rows()
                )));
            }
            if e.lags() != lags {
                return Err(Error::Shape(format!(
                    "exposure `{}` has {} lags, `{}` has {lags}",
                    e.name(),
                    e.lags(),
                    exposures[0].name()
                )));
            }
        }
        for (i, e) in exposures.iter().enumerate() {
            if exposures[..i].iter().any(|o| o.name() == e.name()) {
                return Err(Error::Shape(format!("duplicate exposure name `{}`", e.name())));
            }
        }
        if let Some(r) = modifiers.rows() {
            if r != n {
                return Err(Error::Shape(format!("modifier table has {r} rows, outcome has {n}")));
            }
        }
        design.check_full_rank()?;
        Ok(Self {
            outcome,
            design,
            exposures,
            modifiers,
        })
    }

    pub fn rows(&self) -> usize {
        self.outcome.len()
    }
    pub fn lags(&self) -> usize {
        self.exposures[0].lags()
    }
    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }
    pub fn design(&self) -> &Design {
        &self.design
    }
    pub fn exposures(&self) -> &[ExposureMatrix] {
        &self.exposures
    }
    pub fn exposure_names(&self) -> Vec<String> {
        self.exposures.iter().map(|e| e.name().to_string()).collect()
    }
    pub fn modifiers(&self) -> &ModifierTable {
        &self.modifiers
    }

    pub(crate) fn exposures_mut(&mut self) -> &mut Vec<ExposureMatrix> {
        &mut self.exposures
    }

    /// Replace exposures with a transformed set of identical shape.
    pub fn map_exposures(
        mut self,
        f: impl Fn(&ExposureMatrix) -> Result<ExposureMatrix>,
    ) -> Result<Self> {
        let mapped = self.exposures.iter().map(f).collect::<Result<Vec<_>>>()?;
        self.exposures = mapped;
        Ok(self)
    }

    /// SHA-256 over every numeric cell and label, in a fixed order.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.outcome {
            h.update(v.to_le_bytes());
        }
        for name in self.design.names() {
            h.update(name.as_bytes());
            h.update([0]);
        }
        for v in self.design.values() {
            h.update(v.to_le_bytes());
        }
        for e in &self.exposures {
            h.update(e.name().as_bytes());
            h.update([0]);
            for v in e.values() {
                h.update(v.to_le_bytes());
            }
        }
        for (name, col) in self.modifiers.names().iter().zip(self.modifiers.columns()) {
            h.update(name.as_bytes());
            h.update([0]);
            match col {
                ModifierColumn::Continuous { values } => {
                    for v in values {
                        h.update(v.to_le_bytes());
                    }
                }
                ModifierColumn::Categorical { levels, codes } => {
                    for l in levels {
                        h.update(l.as_bytes());
                        h.update([0]);
                    }
                    for c in codes {
                        h.update(c.to_le_bytes());
                    }
                }
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exposure(name: &str, rows: usize, lags: usize) -> ExposureMatrix {
        let values = (0..rows * lags).map(|v| v as f64).collect();
        ExposureMatrix::new(name, rows, lags, values).unwrap()
    }

    #[test]
    fn exposure_requires_two_lags() {
        assert!(matches!(
            ExposureMatrix::new("a", 2, 1, vec![1.0, 2.0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn dataset_rejects_unequal_lags() {
        let err = Dataset::new(
            vec![1.0, 2.0, 3.0],
            Design::intercept_only(3),
            vec![exposure("a", 3, 3), exposure("b", 3, 2)],
            ModifierTable::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn dataset_rejects_rank_deficient_design() {
        let design = Design::new(
            vec!["(Intercept)".into(), "dup".into()],
            3,
            vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
        )
        .unwrap();
        let err = Dataset::new(
            vec![1.0, 2.0, 3.0],
            design,
            vec![exposure("a", 3, 3)],
            ModifierTable::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::RankDeficient(_)));
    }

    #[test]
    fn categorical_levels_sorted() {
        let col = ModifierColumn::categorical(&["b", "a", "c", "a"]);
        match col {
            ModifierColumn::Categorical { levels, codes } => {
                assert_eq!(levels, ["a", "b", "c"]);
                assert_eq!(codes, [1, 0, 2, 0]);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let d = Dataset::new(
            vec![1.0, 2.0, 3.0],
            Design::intercept_only(3),
            vec![exposure("a", 3, 3)],
            ModifierTable::default(),
        )
        .unwrap();
        let mut e = d.clone();
        assert_eq!(d.content_hash(), e.content_hash());
        e.outcome[0] = 9.0;
        assert_ne!(d.content_hash(), e.content_hash());
    }
}
