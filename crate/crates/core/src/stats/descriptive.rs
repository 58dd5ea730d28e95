use super::{at_least, StatsError};

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance (n − 1 denominator).
pub fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() as f64 - 1.0)
}

/// Quantile by linear interpolation between order statistics (Hyndman-Fan
/// type 7). `sorted` must be ascending and nonempty.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `(Q1 − 1.5·IQR, Q3 + 1.5·IQR)`.
pub fn iqr_fences(values: &[f64]) -> Result<(f64, f64), StatsError> {
    at_least(values, 4)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_type7(&sorted, 0.25);
    let q3 = quantile_type7(&sorted, 0.75);
    let iqr = q3 - q1;
    Ok((q1 - 1.5 * iqr, q3 + 1.5 * iqr))
}

/// Group ids whose value lies strictly outside the IQR fences.
pub fn iqr_outliers(values: &[f64], group_ids: &[u32]) -> Result<Vec<u32>, StatsError> {
    if values.len() != group_ids.len() {
        return Err(StatsError::LengthMismatch(values.len(), group_ids.len()));
    }
    let (lo, hi) = iqr_fences(values)?;
    Ok(values
        .iter()
        .zip(group_ids)
        .filter(|(v, _)| **v < lo || **v > hi)
        .map(|(_, g)| *g)
        .collect())
}
