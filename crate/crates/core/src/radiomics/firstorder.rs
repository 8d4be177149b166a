//! First-order intensity statistics over the foreground voxels.
//!
//! Moments use the population convention. Kurtosis is `m4 / m2^2` (not
//! excess). Entropy and Uniformity use the discretized levels. Skewness and
//! Kurtosis are 0 for a constant ROI.

use super::discretize::bin_level;
use super::xlog2x;
use crate::percentile::percentile_sorted;

pub const NAMES: [&str; 18] = [
    "10Percentile",
    "90Percentile",
    "Energy",
    "Entropy",
    "InterquartileRange",
    "Kurtosis",
    "Maximum",
    "Mean",
    "MeanAbsoluteDeviation",
    "Median",
    "Minimum",
    "Range",
    "RobustMeanAbsoluteDeviation",
    "RootMeanSquared",
    "Skewness",
    "StandardDeviation",
    "Uniformity",
    "Variance",
];

/// Statistics of `values` (must be nonempty); `ng` sets the histogram used by
/// Entropy and Uniformity.
pub fn firstorder_from_values(values: &[f64], ng: usize) -> [f64; 18] {
    assert!(!values.is_empty(), "first-order features need at least one voxel");
    let n = values.len() as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let min = sorted[0];
    let max = sorted[sorted.len() - 1];
    let mean = values.iter().sum::<f64>() / n;
    let energy: f64 = values.iter().map(|x| x * x).sum();
    let (mut m2, mut m3, mut m4, mut mad) = (0.0, 0.0, 0.0, 0.0);
    for &x in values {
        let d = x - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
        mad += d.abs();
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    mad /= n;
    let (skew, kurt) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2))
    } else {
        (0.0, 0.0)
    };
    let p10 = percentile_sorted(&sorted, 10.0);
    let p90 = percentile_sorted(&sorted, 90.0);
    let iqr = percentile_sorted(&sorted, 75.0) - percentile_sorted(&sorted, 25.0);
    let median = percentile_sorted(&sorted, 50.0);

    let robust: Vec<f64> = values.iter().copied().filter(|&x| x >= p10 && x <= p90).collect();
    let rmad = if robust.is_empty() {
        0.0
    } else {
        let rm = robust.iter().sum::<f64>() / robust.len() as f64;
        robust.iter().map(|x| (x - rm).abs()).sum::<f64>() / robust.len() as f64
    };

    let mut hist = vec![0.0; ng];
    for &x in values {
        hist[bin_level(x, min, max, ng) as usize - 1] += 1.0;
    }
    let entropy = -hist.iter().map(|&c| xlog2x(c / n)).sum::<f64>();
    let uniformity: f64 = hist.iter().map(|&c| (c / n).powi(2)).sum();

    [
        p10,
        p90,
        energy,
        entropy,
        iqr,
        kurt,
        max,
        mean,
        mad,
        median,
        min,
        max - min,
        rmad,
        (energy / n).sqrt(),
        skew,
        m2.sqrt(),
        uniformity,
        m2,
    ]
}
