//! Small numerical helpers shared by the sampler and the summaries.

/// Quantile of already sorted data by linear interpolation between order
/// statistics (the `h = (n - 1) p` rule). Every quantile in the crate goes
/// through this function.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let p = p.clamp(0.0, 1.0);
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

pub fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn quantile(values: &[f64], p: f64) -> f64 {
    quantile_sorted(&sorted_copy(values), p)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance.
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
}

/// Posterior mean plus equal-tailed interval at `conf_level`.
///
/// The mean is clamped into the interval so `lower <= mean <= upper` holds even
/// for pathological, heavily skewed draw sets.
pub fn interval(draws: &[f64], conf_level: f64) -> (f64, f64, f64) {
    let sorted = sorted_copy(draws);
    let tail = (1.0 - conf_level) / 2.0;
    let lower = quantile_sorted(&sorted, tail);
    let upper = quantile_sorted(&sorted, 1.0 - tail);
    let m = mean(draws).clamp(lower, upper);
    (m, lower, upper)
}

/// Monte Carlo standard error of the mean of a correlated chain via
/// non-overlapping batch means (batch count ~ sqrt(n)).
pub fn batch_means_se(chain: &[f64]) -> f64 {
    let n = chain.len();
    if n < 4 {
        return (variance(chain) / n.max(1) as f64).sqrt();
    }
    let batches = ((n as f64).sqrt().floor() as usize).max(2);
    let size = n / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| mean(&chain[b * size..(b + 1) * size]))
        .collect();
    (variance(&means) / batches as f64).sqrt()
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_interpolation_quantiles() {
        let v: Vec<f64> = (0..=4).map(f64::from).collect();
        assert_eq!(quantile_sorted(&v, 0.25), 1.0);
        assert_eq!(quantile_sorted(&v, 0.75), 3.0);
        assert_eq!(quantile_sorted(&v, 0.1), 0.4);
        assert_eq!(quantile_sorted(&[5.0], 0.3), 5.0);
    }

    #[test]
    fn interval_is_ordered() {
        let (m, lo, hi) = interval(&[3.0, 1.0, 2.0, 10.0], 0.5);
        assert!(lo <= m && m <= hi);
    }

    #[test]
    fn log_sum_exp_handles_infinities() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
    }
}
