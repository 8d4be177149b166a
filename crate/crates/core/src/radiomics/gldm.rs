//! Gray-level dependence features.
//!
//! The dependence of a voxel is the number of its 26 foreground neighbours
//! with exactly the same level (0..=26). Emphasis terms use the dependence
//! size `j = dependence + 1`, i.e. the matrix column index counting the
//! centre voxel, so an isolated voxel has `j = 1`.

use super::discretize::DiscretizedRoi;
use super::xlog2x;

pub const NAMES: [&str; 14] = [
    "DependenceEntropy",
    "DependenceNonUniformity",
    "DependenceNonUniformityNormalized",
    "DependenceVariance",
    "GrayLevelNonUniformity",
    "GrayLevelVariance",
    "HighGrayLevelEmphasis",
    "LargeDependenceEmphasis",
    "LargeDependenceHighGrayLevelEmphasis",
    "LargeDependenceLowGrayLevelEmphasis",
    "LowGrayLevelEmphasis",
    "SmallDependenceEmphasis",
    "SmallDependenceHighGrayLevelEmphasis",
    "SmallDependenceLowGrayLevelEmphasis",
];

/// Per-voxel dependence counts in foreground storage order.
pub fn dependences(d: &DiscretizedRoi) -> Vec<(u32, usize)> {
    let grid = d.padded();
    let nbrs = d.neighbour_strides();
    d.foreground()
        .into_iter()
        .map(|i| {
            let l = grid[i];
            let dep = nbrs.iter().filter(|&&s| grid[(i as isize + s) as usize] == l).count();
            (l, dep)
        })
        .collect()
}

pub fn gldm_features(d: &DiscretizedRoi) -> [f64; 14] {
    let mut m = vec![vec![0.0; 27]; d.ng()];
    for (l, dep) in dependences(d) {
        m[l as usize - 1][dep] += 1.0;
    }
    matrix_features(&m)
}

/// Features of a dependence matrix (rows: levels, column `k`: dependence
/// `k`, i.e. dependence size `k + 1`).
pub fn matrix_features(m: &[Vec<f64>]) -> [f64; 14] {
    let nz: f64 = m.iter().flatten().sum();
    if nz == 0.0 {
        return [0.0; 14];
    }
    let n_dep = m.first().map_or(0, Vec::len);
    let mut gl_marg = vec![0.0; m.len()];
    let mut dep_marg = vec![0.0; n_dep];
    let (mut sde, mut lde, mut lgle, mut hgle) = (0.0, 0.0, 0.0, 0.0);
    let (mut sdlgle, mut sdhgle, mut ldlgle, mut ldhgle) = (0.0, 0.0, 0.0, 0.0);
    let (mut mu_i, mut mu_j, mut entropy) = (0.0, 0.0, 0.0);
    for (gi, row) in m.iter().enumerate() {
        let i = (gi + 1) as f64;
        let i2 = i * i;
        for (k, &c) in row.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let j = (k + 1) as f64;
            let j2 = j * j;
            gl_marg[gi] += c;
            dep_marg[k] += c;
            sde += c / j2;
            lde += c * j2;
            lgle += c / i2;
            hgle += c * i2;
            sdlgle += c / (i2 * j2);
            sdhgle += c * i2 / j2;
            ldlgle += c * j2 / i2;
            ldhgle += c * i2 * j2;
            let p = c / nz;
            mu_i += p * i;
            mu_j += p * j;
            entropy -= xlog2x(p);
        }
    }
    let (mut var_i, mut var_j) = (0.0, 0.0);
    for (gi, row) in m.iter().enumerate() {
        for (k, &c) in row.iter().enumerate() {
            if c > 0.0 {
                let p = c / nz;
                var_i += p * ((gi + 1) as f64 - mu_i).powi(2);
                var_j += p * ((k + 1) as f64 - mu_j).powi(2);
            }
        }
    }
    let gln: f64 = gl_marg.iter().map(|v| v * v).sum::<f64>() / nz;
    let dn: f64 = dep_marg.iter().map(|v| v * v).sum::<f64>() / nz;
    [
        entropy,
        dn,
        dn / nz,
        var_j,
        gln,
        var_i,
        hgle / nz,
        lde / nz,
        ldhgle / nz,
        ldlgle / nz,
        lgle / nz,
        sde / nz,
        sdhgle / nz,
        sdlgle / nz,
    ]
}
