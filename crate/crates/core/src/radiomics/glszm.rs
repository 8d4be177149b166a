//! Gray-level size-zone features over 26-connected equal-level zones.

use super::discretize::DiscretizedRoi;
use super::{ratio, xlog2x};

pub const NAMES: [&str; 16] = [
    "GrayLevelNonUniformity",
    "GrayLevelNonUniformityNormalized",
    "GrayLevelVariance",
    "HighGrayLevelZoneEmphasis",
    "LargeAreaEmphasis",
    "LargeAreaHighGrayLevelEmphasis",
    "LargeAreaLowGrayLevelEmphasis",
    "LowGrayLevelZoneEmphasis",
    "SizeZoneNonUniformity",
    "SizeZoneNonUniformityNormalized",
    "SmallAreaEmphasis",
    "SmallAreaHighGrayLevelEmphasis",
    "SmallAreaLowGrayLevelEmphasis",
    "ZoneEntropy",
    "ZonePercentage",
    "ZoneVariance",
];

/// Zones as `(level, size)` pairs in order of their first voxel.
pub fn zones(d: &DiscretizedRoi) -> Vec<(u32, usize)> {
    let grid = d.padded();
    let nbrs = d.neighbour_strides();
    let mut seen = vec![false; grid.len()];
    let mut stack = Vec::new();
    let mut out = Vec::new();
    for start in d.foreground() {
        if seen[start] {
            continue;
        }
        let level = grid[start];
        seen[start] = true;
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            for &s in &nbrs {
                let j = (i as isize + s) as usize;
                if !seen[j] && grid[j] == level {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        out.push((level, size));
    }
    out
}

pub fn glszm_features(d: &DiscretizedRoi) -> [f64; 16] {
    let z = zones(d);
    let max_size = z.iter().map(|&(_, s)| s).max().unwrap_or(1);
    let mut m = vec![vec![0.0; max_size]; d.ng()];
    for (level, size) in z {
        m[level as usize - 1][size - 1] += 1.0;
    }
    matrix_features(&m, d.count())
}

/// Features of a size-zone matrix (rows: levels, column `s - 1`: zones of
/// size `s`).
pub fn matrix_features(m: &[Vec<f64>], n_voxels: usize) -> [f64; 16] {
    let nz: f64 = m.iter().flatten().sum();
    if nz == 0.0 {
        return [0.0; 16];
    }
    let np = n_voxels as f64;
    let n_size = m.first().map_or(0, Vec::len);
    let mut gl_marg = vec![0.0; m.len()];
    let mut sz_marg = vec![0.0; n_size];
    let (mut sae, mut lae, mut lglze, mut hglze) = (0.0, 0.0, 0.0, 0.0);
    let (mut salgle, mut sahgle, mut lalgle, mut lahgle) = (0.0, 0.0, 0.0, 0.0);
    let (mut mu_i, mut mu_j, mut entropy) = (0.0, 0.0, 0.0);
    for (gi, row) in m.iter().enumerate() {
        let i = (gi + 1) as f64;
        let i2 = i * i;
        for (sj, &c) in row.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let j = (sj + 1) as f64;
            let j2 = j * j;
            gl_marg[gi] += c;
            sz_marg[sj] += c;
            sae += c / j2;
            lae += c * j2;
            lglze += c / i2;
            hglze += c * i2;
            salgle += c / (i2 * j2);
            sahgle += c * i2 / j2;
            lalgle += c * j2 / i2;
            lahgle += c * i2 * j2;
            let p = c / nz;
            mu_i += p * i;
            mu_j += p * j;
            entropy -= xlog2x(p);
        }
    }
    let (mut var_i, mut var_j) = (0.0, 0.0);
    for (gi, row) in m.iter().enumerate() {
        for (sj, &c) in row.iter().enumerate() {
            if c > 0.0 {
                let p = c / nz;
                var_i += p * ((gi + 1) as f64 - mu_i).powi(2);
                var_j += p * ((sj + 1) as f64 - mu_j).powi(2);
            }
        }
    }
    let gln: f64 = gl_marg.iter().map(|v| v * v).sum::<f64>() / nz;
    let szn: f64 = sz_marg.iter().map(|v| v * v).sum::<f64>() / nz;
    [
        gln,
        gln / nz,
        var_i,
        hglze / nz,
        lae / nz,
        lahgle / nz,
        lalgle / nz,
        lglze / nz,
        szn,
        szn / nz,
        sae / nz,
        sahgle / nz,
        salgle / nz,
        entropy,
        ratio(nz, np),
        var_j,
    ]
}
