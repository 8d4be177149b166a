//! Gray-level co-occurrence features.
//!
//! One symmetric matrix per offset in [`OFFSETS_13`], normalized to a joint
//! probability `p(i, j)`; the 24 features are computed per matrix and then
//! averaged over the offsets that have at least one voxel pair. Entropies use
//! base 2 and skip zero cells. Any ratio with a zero denominator is 0.

use nalgebra::DMatrix;

use super::discretize::{DiscretizedRoi, OFFSETS_13};
use super::{ratio, xlog2x};

pub const NAMES: [&str; 24] = [
    "Autocorrelation",
    "ClusterProminence",
    "ClusterShade",
    "ClusterTendency",
    "Contrast",
    "Correlation",
    "DifferenceAverage",
    "DifferenceEntropy",
    "DifferenceVariance",
    "Id",
    "Idm",
    "Idmn",
    "Idn",
    "Imc1",
    "Imc2",
    "InverseVariance",
    "JointAverage",
    "JointEnergy",
    "JointEntropy",
    "MCC",
    "MaximumProbability",
    "SumAverage",
    "SumEntropy",
    "SumSquares",
];

/// Raw symmetric co-occurrence counts for one offset, `ng x ng` row-major
/// with level `l` at index `l - 1`.
pub fn cooccurrence(d: &DiscretizedRoi, offset: [i64; 3]) -> Vec<f64> {
    let ng = d.ng();
    let stride = d.pstride(offset);
    let grid = d.padded();
    let mut m = vec![0.0; ng * ng];
    for idx in d.foreground() {
        let a = grid[idx];
        let b = grid[(idx as isize + stride) as usize];
        if b > 0 {
            let (i, j) = (a as usize - 1, b as usize - 1);
            m[i * ng + j] += 1.0;
            m[j * ng + i] += 1.0;
        }
    }
    m
}

pub fn glcm_features(d: &DiscretizedRoi) -> [f64; 24] {
    let mut acc = [0.0; 24];
    let mut used = 0usize;
    for o in OFFSETS_13 {
        let counts = cooccurrence(d, o);
        let total: f64 = counts.iter().sum();
        if total == 0.0 {
            continue;
        }
        let p: Vec<f64> = counts.iter().map(|c| c / total).collect();
        let f = matrix_features(&p, d.ng());
        for (a, v) in acc.iter_mut().zip(f) {
            *a += v;
        }
        used += 1;
    }
    if used > 0 {
        for a in &mut acc {
            *a /= used as f64;
        }
    }
    acc
}

/// The 24 features of one normalized symmetric matrix.
pub fn matrix_features(p: &[f64], ng: usize) -> [f64; 24] {
    let lvl = |k: usize| (k + 1) as f64;
    let mut px = vec![0.0; ng];
    let mut py = vec![0.0; ng];
    for i in 0..ng {
        for j in 0..ng {
            px[i] += p[i * ng + j];
            py[j] += p[i * ng + j];
        }
    }
    let mu_x: f64 = px.iter().enumerate().map(|(i, &v)| lvl(i) * v).sum();
    let mu_y: f64 = py.iter().enumerate().map(|(j, &v)| lvl(j) * v).sum();
    let var_x: f64 = px.iter().enumerate().map(|(i, &v)| (lvl(i) - mu_x).powi(2) * v).sum();
    let var_y: f64 = py.iter().enumerate().map(|(j, &v)| (lvl(j) - mu_y).powi(2) * v).sum();

    // p_{x+y}(k) for k = 2..=2ng at index k - 2; p_{x-y}(k) for k = 0..ng.
    let mut p_sum = vec![0.0; 2 * ng - 1];
    let mut p_diff = vec![0.0; ng];
    let mut autocorr = 0.0;
    let (mut prom, mut shade, mut tend) = (0.0, 0.0, 0.0);
    let mut contrast = 0.0;
    let mut energy = 0.0;
    let mut h_xy = 0.0;
    let mut h_xy1 = 0.0;
    let mut h_xy2 = 0.0;
    let mut max_p: f64 = 0.0;
    let mut sum_squares = 0.0;
    for i in 0..ng {
        for j in 0..ng {
            let v = p[i * ng + j];
            let (a, b) = (lvl(i), lvl(j));
            p_sum[i + j] += v;
            p_diff[i.abs_diff(j)] += v;
            autocorr += v * a * b;
            let c = a + b - mu_x - mu_y;
            tend += c * c * v;
            shade += c * c * c * v;
            prom += c * c * c * c * v;
            contrast += (a - b).powi(2) * v;
            energy += v * v;
            h_xy -= xlog2x(v);
            let q = px[i] * py[j];
            if v > 0.0 {
                h_xy1 -= v * q.log2();
            }
            h_xy2 -= xlog2x(q);
            max_p = max_p.max(v);
            sum_squares += (a - mu_x).powi(2) * v;
        }
    }
    let h_x: f64 = -px.iter().map(|&v| xlog2x(v)).sum::<f64>();
    let h_y: f64 = -py.iter().map(|&v| xlog2x(v)).sum::<f64>();

    let correlation = ratio(autocorr - mu_x * mu_y, (var_x * var_y).sqrt());

    let diff_avg: f64 = p_diff.iter().enumerate().map(|(k, &v)| k as f64 * v).sum();
    let diff_ent: f64 = -p_diff.iter().map(|&v| xlog2x(v)).sum::<f64>();
    let diff_var: f64 = p_diff
        .iter()
        .enumerate()
        .map(|(k, &v)| (k as f64 - diff_avg).powi(2) * v)
        .sum();
    let ngf = ng as f64;
    let (mut id, mut idm, mut idmn, mut idn, mut inv_var) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (k, &v) in p_diff.iter().enumerate() {
        let kf = k as f64;
        id += v / (1.0 + kf);
        idm += v / (1.0 + kf * kf);
        idmn += v / (1.0 + kf * kf / (ngf * ngf));
        idn += v / (1.0 + kf / ngf);
        if k > 0 {
            inv_var += v / (kf * kf);
        }
    }
    let sum_avg: f64 = p_sum.iter().enumerate().map(|(k, &v)| (k + 2) as f64 * v).sum();
    let sum_ent: f64 = -p_sum.iter().map(|&v| xlog2x(v)).sum::<f64>();

    let imc1 = ratio(h_xy - h_xy1, h_x.max(h_y));
    let imc2 = {
        let e = h_xy2 - h_xy;
        if e > 0.0 {
            (1.0 - (-2.0 * e).exp()).sqrt()
        } else {
            0.0
        }
    };

    [
        autocorr,
        prom,
        shade,
        tend,
        contrast,
        correlation,
        diff_avg,
        diff_ent,
        diff_var,
        id,
        idm,
        idmn,
        idn,
        imc1,
        imc2,
        inv_var,
        mu_x,
        energy,
        h_xy,
        mcc(p, &px, &py, ng),
        max_p,
        sum_avg,
        sum_ent,
        sum_squares,
    ]
}

/// Maximal correlation coefficient: square root of the second largest
/// eigenvalue of `Q(i,j) = sum_k p(i,k) p(j,k) / (px(i) py(k))`.
///
/// `Q` is similar to the symmetric `A A^T` with
/// `A = Dx^{-1/2} P Dy^{-1/2}`, which is what gets decomposed. Levels with
/// zero marginal are dropped first. Fewer than two present levels gives 0.
fn mcc(p: &[f64], px: &[f64], py: &[f64], ng: usize) -> f64 {
    let rows: Vec<usize> = (0..ng).filter(|&i| px[i] > 0.0).collect();
    let cols: Vec<usize> = (0..ng).filter(|&j| py[j] > 0.0).collect();
    if rows.len() < 2 {
        return 0.0;
    }
    let a = DMatrix::from_fn(rows.len(), cols.len(), |r, c| {
        let (i, j) = (rows[r], cols[c]);
        p[i * ng + j] / (px[i] * py[j]).sqrt()
    });
    let s = &a * a.transpose();
    let mut eig: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    eig[1].max(0.0).sqrt()
}
