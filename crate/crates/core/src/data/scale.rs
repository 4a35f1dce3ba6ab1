use crate::data::{Dataset, ExposureMatrix};
use crate::error::{Error, Result};
use crate::stats::{quantile_sorted, sorted_copy};

/// Divide every cell by the interquartile range of all cells pooled.
///
/// The returned `scale_factor` is relative to the raw measurements, so a
/// matrix that was already scaled accumulates factors.
pub fn iqr_scale(matrix: &ExposureMatrix) -> Result<ExposureMatrix> {
    let sorted = sorted_copy(matrix.values());
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    if !(iqr > 0.0) {
        return Err(Error::InvalidData(format!(
            "exposure `{}` has zero interquartile range",
            matrix.name()
        )));
    }
    let values = matrix.values().iter().map(|v| v / iqr).collect();
    Ok(
        ExposureMatrix::new(matrix.name(), matrix.rows(), matrix.lags(), values)?
            .with_scale(matrix.scale_factor() * iqr),
    )
}

/// Subtract each lag column's mean from every exposure.
///
/// Refused when lagged interactions are modeled: marginal effects are then
/// evaluated at co-exposure levels on the original scale.
pub fn center_exposures(mut data: Dataset, with_interactions: bool) -> Result<Dataset> {
    if with_interactions {
        return Err(Error::Spec(
            "exposures must not be centered when mixture interactions are modeled".into(),
        ));
    }
    for e in data.exposures_mut().iter_mut() {
        let (n, lags) = (e.rows(), e.lags());
        let means: Vec<f64> = (1..=lags)
            .map(|t| (0..n).map(|i| e.get(i, t)).sum::<f64>() / n as f64)
            .collect();
        let values = e
            .values()
            .iter()
            .enumerate()
            .map(|(k, v)| v - means[k % lags])
            .collect();
        *e = ExposureMatrix::new(e.name(), n, lags, values)?.with_scale(e.scale_factor());
    }
    Ok(data)
}
