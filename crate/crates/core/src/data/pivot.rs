use chrono::{Datelike, NaiveDate};

use crate::data::Table;
use crate::error::{Error, Result};

/// Which columns of a long (one row per date) table to carry over unchanged
/// and which to expand into lag columns.
#[derive(Debug, Clone)]
pub struct PivotSpec {
    pub date: String,
    /// Kept at the reference date `t`.
    pub keep: Vec<String>,
    /// Expanded to `<name>_<l>` holding the value at `t - l`.
    pub lagged: Vec<String>,
    pub lags: usize,
}

/// Dates may be ISO `YYYY-MM-DD` or plain integers (day indices).
fn date_ordinal(s: &str, row: usize) -> Result<i64> {
    if let Ok(i) = s.parse::<i64>() {
        return Ok(i);
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map(|d| i64::from(d.num_days_from_ce()))
        .map_err(|_| Error::BadValue {
            row,
            column: "date".into(),
            value: s.to_string(),
        })
}


/// Convert a time series into the wide layout: one output row per date
/// with at least `lags` earlier dates available.
pub fn pivot_time_series(table: &Table, spec: &PivotSpec) -> Result<Table> {
    if spec.lags == 0 {
        return Err(Error::InvalidArgument("lag count must be at least 1".into()));
    }
    let n = table.rows.len();
    if spec.lags >= n {
        return Err(Error::InvalidArgument(format!(
            "lag count {} needs at least {} rows, table has {n}",
            spec.lags,
            spec.lags + 1
        )));
    }
    let date_ix = table.column_index(&spec.date)?;
    let keep_ix = spec
        .keep
        .iter()
        .map(|c| table.column_index(c))
        .collect::<Result<Vec<_>>>()?;
    let lag_ix = spec
        .lagged
        .iter()
        .map(|c| table.column_index(c))
        .collect::<Result<Vec<_>>>()?;

    let dates = table
        .rows
        .iter()
        .enumerate()
        .map(|(r, row)| date_ordinal(row.get(date_ix).map(String::as_str).unwrap_or(""), r + 1))
        .collect::<Result<Vec<_>>>()?;
    let step = dates[1] - dates[0];
    if step <= 0 {
        return Err(Error::InvalidData("dates are not strictly increasing".into()));
    }
    for (r, w) in dates.windows(2).enumerate() {
        if w[1] - w[0] != step {
            return Err(Error::InvalidData(format!(
                "dates are not sorted and equally spaced at row {}",
                r + 2
            )));
        }
    }

    let mut headers = vec![spec.date.clone()];
    headers.extend(spec.keep.iter().cloned());
    for name in &spec.lagged {
        for l in 1..=spec.lags {
            headers.push(format!("{name}_{l}"));
        }
    }
    let cell = |r: usize, c: usize| table.rows[r].get(c).cloned().unwrap_or_default();
    let rows = (spec.lags..n)
        .map(|k| {
            let mut row = vec![cell(k, date_ix)];
            row.extend(keep_ix.iter().map(|&c| cell(k, c)));
            for &c in &lag_ix {
                for l in 1..=spec.lags {
                    row.push(cell(k - l, c));
                }
            }
            row
        })
        .collect();
    Ok(Table { headers, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(values: &[&str]) -> Table {
        Table {
            headers: vec!["date".into(), "y".into(), "x".into()],
            rows: values
                .iter()
                .enumerate()
                .map(|(i, v)| vec![format!("2024-01-0{}", i + 1), format!("{i}"), v.to_string()])
                .collect(),
        }
    }

    fn spec(lags: usize) -> PivotSpec {
        PivotSpec {
            date: "date".into(),
            keep: vec!["y".into()],
            lagged: vec!["x".into()],
            lags,
        }
    }

    #[test]
    fn lag_alignment() {
        let out = pivot_time_series(&series(&["10", "20", "30", "40"]), &spec(2)).unwrap();
        assert_eq!(out.headers, ["date", "y", "x_1", "x_2"]);
        assert_eq!(out.rows.len(), 2);
        assert_eq!(out.rows[0], ["2024-01-03", "2", "20", "10"]);
        assert_eq!(out.rows[1], ["2024-01-04", "3", "30", "20"]);
    }

    #[test]
    fn lag_equal_to_length_errors() {
        assert!(pivot_time_series(&series(&["1", "2", "3", "4"]), &spec(4)).is_err());
    }

    #[test]
    fn constant_series() {
        let out = pivot_time_series(&series(&["7"; 6]), &spec(3)).unwrap();
        assert!(out.rows.iter().all(|r| r[2..].iter().all(|v| v == "7")));
    }

    #[test]
    fn unsorted_dates_rejected() {
        let mut t = series(&["1", "2", "3", "4"]);
        t.rows.swap(1, 2);
        assert!(matches!(
            pivot_time_series(&t, &spec(1)),
            Err(Error::InvalidData(_))
        ));
    }

    #[test]
    fn integer_dates_with_gap_rejected() {
        let t = Table {
            headers: vec!["date".into(), "y".into(), "x".into()],
            rows: vec![
                vec!["1".into(), "0".into(), "1".into()],
                vec!["2".into(), "0".into(), "1".into()],
                vec!["4".into(), "0".into(), "1".into()],
            ],
        };
        assert!(pivot_time_series(&t, &spec(1)).is_err());
    }
}
