//! The single percentile definition used project-wide: linear interpolation
//! between order statistics, inclusive of both ends (rank 0 is the minimum,
//! rank 100 the maximum).

/// Percentile of already sorted data. `rank` is in `[0, 100]`.
///
/// Returns NaN for an empty slice.
pub fn percentile_sorted(sorted: &[f64], rank: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n == 1 {
        return sorted[0];
    }
    let pos = (rank / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    let a = sorted[lo];
    let b = sorted[hi];
    if frac == 0.0 || a == b {
        a
    } else {
        a + frac * (b - a)
    }
}

/// Sort a copy of `values` and evaluate every rank in `ranks`.
pub fn percentiles(values: &[f64], ranks: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    ranks.iter().map(|&r| percentile_sorted(&sorted, r)).collect()
}
