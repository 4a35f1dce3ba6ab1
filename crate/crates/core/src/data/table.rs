use std::io::{Read, Write};
use std::path::Path;

use crate::data::{Dataset, Design, ExposureMatrix, ModifierColumn, ModifierTable};
use crate::error::{Error, Result};

/// A header-plus-rows text table; cells are kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: impl AsRef<Path>, delimiter: u8) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::from_reader(file, delimiter)
    }

    pub fn from_reader<R: Read>(reader: R, delimiter: u8) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.iter().map(str::to_string).collect::<Vec<_>>();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Self { headers, rows })
    }

    pub fn write<W: Write>(&self, writer: W, delimiter: u8) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .delimiter(delimiter)
            .from_writer(writer);
        w.write_record(&self.headers)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    fn cell(&self, row: usize, col: usize) -> Result<&str> {
        let v = self.rows[row].get(col).map(String::as_str).unwrap_or("");
        if is_missing(v) {
            return Err(Error::MissingValue {
                row: row + 1,
                column: self.headers[col].clone(),
            });
        }
        Ok(v)
    }

    fn numeric_column(&self, col: usize) -> Result<Vec<f64>> {
        (0..self.rows.len())
            .map(|r| {
                let v = self.cell(r, col)?;
                v.parse::<f64>().map_err(|_| Error::BadValue {
                    row: r + 1,
                    column: self.headers[col].clone(),
                    value: v.to_string(),
                })
            })
            .collect()
    }

    /// Parsed as numbers if every cell parses, otherwise `None`.
    fn try_numeric(&self, col: usize) -> Result<Option<Vec<f64>>> {
        let mut out = Vec::with_capacity(self.rows.len());
        for r in 0..self.rows.len() {
            match self.cell(r, col)?.parse::<f64>() {
                Ok(v) => out.push(v),
                Err(_) => return Ok(None),
            }
        }
        Ok(Some(out))
    }

    fn string_column(&self, col: usize) -> Result<Vec<String>> {
        (0..self.rows.len())
            .map(|r| self.cell(r, col).map(str::to_string))
            .collect()
    }
}

fn is_missing(v: &str) -> bool {
    v.is_empty() || v.eq_ignore_ascii_case("na") || v.eq_ignore_ascii_case("nan")
}

/// How the lag columns of one exposure are located in the header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExposureColumns {
    /// Explicit ordered list, lag 1 first.
    List(Vec<String>),
    /// `prefix1`, `prefix2`, … for as long as consecutive columns exist.
    Prefix(String),
}

#[derive(Debug, Clone)]
pub struct WideTableSpec {
    pub outcome: String,
    pub covariates: Vec<String>,
    pub exposures: Vec<(String, ExposureColumns)>,
    pub modifiers: Vec<String>,
    pub delimiter: u8,
}

impl WideTableSpec {
    pub fn new(outcome: impl Into<String>) -> Self {
        Self {
            outcome: outcome.into(),
            covariates: Vec::new(),
            exposures: Vec::new(),
            modifiers: Vec::new(),
            delimiter: b',',
        }
    }
}

pub fn load_wide_table(path: impl AsRef<Path>, spec: &WideTableSpec) -> Result<Dataset> {
    let table = Table::read(path, spec.delimiter)?;
    dataset_from_table(&table, spec)
}

pub fn load_wide_table_from_reader<R: Read>(reader: R, spec: &WideTableSpec) -> Result<Dataset> {
    let table = Table::from_reader(reader, spec.delimiter)?;
    dataset_from_table(&table, spec)
}

fn resolve_lag_columns(table: &Table, name: &str, cols: &ExposureColumns) -> Result<Vec<usize>> {
    match cols {
        ExposureColumns::List(list) => list.iter().map(|c| table.column_index(c)).collect(),
        ExposureColumns::Prefix(prefix) => {
            let mut out = Vec::new();
            let mut k = 1;
            while let Ok(ix) = table.column_index(&format!("{prefix}{k}")) {
                out.push(ix);
                k += 1;
            }
            if out.is_empty() {
                return Err(Error::MissingColumn(format!("{prefix}1 (exposure `{name}`)")));
            }
            Ok(out)
        }
    }
}

pub(crate) fn dataset_from_table(table: &Table, spec: &WideTableSpec) -> Result<Dataset> {
    let n = table.rows.len();
    let outcome_ix = table.column_index(&spec.outcome)?;
    let covariate_ix = spec
        .covariates
        .iter()
        .map(|c| table.column_index(c))
        .collect::<Result<Vec<_>>>()?;
    let modifier_ix = spec
        .modifiers
        .iter()
        .map(|c| table.column_index(c))
        .collect::<Result<Vec<_>>>()?;
    let mut lag_ix = Vec::with_capacity(spec.exposures.len());
    for (name, cols) in &spec.exposures {
        lag_ix.push(resolve_lag_columns(table, name, cols)?);
    }
    if let Some(first) = lag_ix.first() {
        for ((name, _), ix) in spec.exposures.iter().zip(&lag_ix) {
            if ix.len() != first.len() {
                return Err(Error::Shape(format!(
                    "exposure `{name}` has {} lag columns, `{}` has {}",
                    ix.len(),
                    spec.exposures[0].0,
                    first.len()
                )));
            }
        }
    }

    let outcome = table.numeric_column(outcome_ix)?;

    let mut names = vec!["(Intercept)".to_string()];
    let mut columns: Vec<Vec<f64>> = vec![vec![1.0; n]];
    for (&ix, cname) in covariate_ix.iter().zip(&spec.covariates) {
        match table.try_numeric(ix)? {
            Some(values) => {
                names.push(cname.clone());
                columns.push(values);
            }
            None => {
                let raw = table.string_column(ix)?;
                if let ModifierColumn::Categorical { levels, codes } = ModifierColumn::categorical(&raw) {
                    for (li, level) in levels.iter().enumerate().skip(1) {
                        names.push(format!("{cname}{level}"));
                        columns.push(
                            codes
                                .iter()
                                .map(|&c| if c as usize == li { 1.0 } else { 0.0 })
                                .collect(),
                        );
                    }
                }
            }
        }
    }
    let p = names.len();
    let mut values = vec![0.0; n * p];
    for (j, col) in columns.iter().enumerate() {
        for i in 0..n {
            values[i * p + j] = col[i];
        }
    }
    let design = Design::new(names, n, values)?;

    let mut exposures = Vec::with_capacity(spec.exposures.len());
    for ((name, _), ix) in spec.exposures.iter().zip(&lag_ix) {
        let lags = ix.len();
        let mut values = vec![0.0; n * lags];
        for (t, &c) in ix.iter().enumerate() {
            for (i, v) in table.numeric_column(c)?.into_iter().enumerate() {
                values[i * lags + t] = v;
            }
        }
        exposures.push(ExposureMatrix::new(name.clone(), n, lags, values)?);
    }

    let mut mod_cols = Vec::with_capacity(modifier_ix.len());
    for &ix in &modifier_ix {
        mod_cols.push(match table.try_numeric(ix)? {
            Some(values) => ModifierColumn::Continuous { values },
            None => ModifierColumn::categorical(&table.string_column(ix)?),
        });
    }
    let modifiers = ModifierTable::new(spec.modifiers.clone(), mod_cols)?;
    Dataset::new(outcome, design, exposures, modifiers)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_e3() -> WideTableSpec {
        let mut s = WideTableSpec::new("y");
        s.exposures.push((
            "E".into(),
            ExposureColumns::List(vec!["e1".into(), "e2".into(), "e3".into()]),
        ));
        s
    }

    #[test]
    fn three_row_single_exposure() {
        let csv = "y,e1,e2,e3\n1,0.1,0.2,0.3\n2,1.1,1.2,1.3\n3,2.1,2.2,2.4\n";
        let d = load_wide_table_from_reader(csv.as_bytes(), &spec_e3()).unwrap();
        assert_eq!(d.rows(), 3);
        assert_eq!(d.lags(), 3);
        assert_eq!(d.exposures().len(), 1);
        assert_eq!(d.exposures()[0].get(2, 3), 2.4);
        assert_eq!(d.outcome(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn unequal_lag_counts_is_shape_error() {
        let csv = "y,a1,a2,b1\n1,1,2,3\n";
        let mut s = WideTableSpec::new("y");
        s.exposures.push(("A".into(), ExposureColumns::List(vec!["a1".into(), "a2".into()])));
        s.exposures.push(("B".into(), ExposureColumns::List(vec!["b1".into()])));
        let err = load_wide_table_from_reader(csv.as_bytes(), &s).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "{err}");
    }

    #[test]
    fn missing_column_is_named() {
        let csv = "y,e1,e2\n1,1,2\n";
        let err = load_wide_table_from_reader(csv.as_bytes(), &spec_e3()).unwrap_err();
        match err {
            Error::MissingColumn(c) => assert_eq!(c, "e3"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn missing_cell_reports_row_and_column() {
        let csv = "y,e1,e2,e3\n1,1,2,3\n2,1,NA,3\n";
        let err = load_wide_table_from_reader(csv.as_bytes(), &spec_e3()).unwrap_err();
        match err {
            Error::MissingValue { row, column } => {
                assert_eq!(row, 2);
                assert_eq!(column, "e2");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn prefix_columns_are_discovered_in_order() {
        let csv = "y,pm_2,pm_1,pm_3,z\n1,20,10,30,0\n2,21,11,31,0\n";
        let mut s = WideTableSpec::new("y");
        s.exposures.push(("PM".into(), ExposureColumns::Prefix("pm_".into())));
        let d = load_wide_table_from_reader(csv.as_bytes(), &s).unwrap();
        assert_eq!(d.exposures()[0].row(1), &[11.0, 21.0, 31.0]);
    }

    #[test]
    fn categorical_covariate_reference_coded() {
        let csv = "y,race,x,e1,e2\n\
                   1.0,white,0.5,1,2\n\
                   2.0,Black,1.5,2,1\n\
                   0.5,AsianPI,2.0,3,3\n\
                   1.5,white,-1.0,1,5\n\
                   2.5,Black,0.0,4,2\n";
        let mut s = WideTableSpec::new("y");
        s.covariates = vec!["race".into(), "x".into()];
        s.exposures.push(("E".into(), ExposureColumns::Prefix("e".into())));
        let d = load_wide_table_from_reader(csv.as_bytes(), &s).unwrap();
        // Lexicographic level order: AsianPI (reference), Black, white.
        assert_eq!(d.design().names(), &["(Intercept)", "raceBlack", "racewhite", "x"]);
        let expected: [[f64; 4]; 5] = [
            [1.0, 0.0, 1.0, 0.5],
            [1.0, 1.0, 0.0, 1.5],
            [1.0, 0.0, 0.0, 2.0],
            [1.0, 0.0, 1.0, -1.0],
            [1.0, 1.0, 0.0, 0.0],
        ];
        for (i, row) in expected.iter().enumerate() {
            assert_eq!(d.design().row(i), row);
        }
    }

    #[test]
    fn modifiers_detect_kind() {
        let csv = "y,sex,age,e1,e2\n1,M,30,1,2\n2,F,31,2,1\n3,F,29,1,1\n";
        let mut s = WideTableSpec::new("y");
        s.modifiers = vec!["sex".into(), "age".into()];
        s.exposures.push(("E".into(), ExposureColumns::Prefix("e".into())));
        let d = load_wide_table_from_reader(csv.as_bytes(), &s).unwrap();
        assert!(matches!(d.modifiers().columns()[0], ModifierColumn::Categorical { .. }));
        assert!(matches!(d.modifiers().columns()[1], ModifierColumn::Continuous { .. }));
    }
}
