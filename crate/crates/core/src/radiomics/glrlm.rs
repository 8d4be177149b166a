//! Gray-level run-length features, averaged over the 13 directions.
//!
//! A run is a maximal line of equal-level foreground voxels along a
//! direction. With `R(i, j)` the number of runs of level `i` and length `j`,
//! `Nr` the run count and `Np` the voxel count, `p(i, j) = R(i, j) / Nr`.

use super::discretize::{DiscretizedRoi, OFFSETS_13};
use super::{ratio, xlog2x};

pub const NAMES: [&str; 16] = [
    "GrayLevelNonUniformity",
    "GrayLevelNonUniformityNormalized",
    "GrayLevelVariance",
    "HighGrayLevelRunEmphasis",
    "LongRunEmphasis",
    "LongRunHighGrayLevelEmphasis",
    "LongRunLowGrayLevelEmphasis",
    "LowGrayLevelRunEmphasis",
    "RunEntropy",
    "RunLengthNonUniformity",
    "RunLengthNonUniformityNormalized",
    "RunPercentage",
    "RunVariance",
    "ShortRunEmphasis",
    "ShortRunHighGrayLevelEmphasis",
    "ShortRunLowGrayLevelEmphasis",
];

/// Run-length matrix for one direction: `ng` rows, column `j - 1` holds runs
/// of length `j`.
pub fn run_length_matrix(d: &DiscretizedRoi, offset: [i64; 3]) -> Vec<Vec<f64>> {
    let max_len = *d.dims().iter().max().expect("3 dims");
    let mut r = vec![vec![0.0; max_len]; d.ng()];
    let stride = d.pstride(offset);
    let grid = d.padded();
    for idx in d.foreground() {
        let level = grid[idx];
        // Only start at the first voxel of a run.
        if grid[(idx as isize - stride) as usize] == level {
            continue;
        }
        let mut len = 1;
        let mut cur = idx as isize + stride;
        while grid[cur as usize] == level {
            len += 1;
            cur += stride;
        }
        r[level as usize - 1][len - 1] += 1.0;
    }
    r
}

pub fn glrlm_features(d: &DiscretizedRoi) -> [f64; 16] {
    let mut acc = [0.0; 16];
    let mut used = 0;
    for o in OFFSETS_13 {
        let r = run_length_matrix(d, o);
        if let Some(f) = matrix_features(&r, d.count()) {
            for (a, v) in acc.iter_mut().zip(f) {
                *a += v;
            }
            used += 1;
        }
    }
    if used > 0 {
        for a in &mut acc {
            *a /= used as f64;
        }
    }
    acc
}

/// Features of one run-length matrix; `None` when it holds no runs.
pub fn matrix_features(r: &[Vec<f64>], n_voxels: usize) -> Option<[f64; 16]> {
    let nr: f64 = r.iter().flatten().sum();
    if nr == 0.0 {
        return None;
    }
    let np = n_voxels as f64;
    let n_len = r.first().map_or(0, Vec::len);
    let mut gl_marg = vec![0.0; r.len()];
    let mut rl_marg = vec![0.0; n_len];
    let (mut sre, mut lre, mut lglre, mut hglre) = (0.0, 0.0, 0.0, 0.0);
    let (mut srlgle, mut srhgle, mut lrlgle, mut lrhgle) = (0.0, 0.0, 0.0, 0.0);
    let (mut mu_i, mut mu_j, mut entropy) = (0.0, 0.0, 0.0);
    for (gi, row) in r.iter().enumerate() {
        let i = (gi + 1) as f64;
        let i2 = i * i;
        for (lj, &c) in row.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let j = (lj + 1) as f64;
            let j2 = j * j;
            gl_marg[gi] += c;
            rl_marg[lj] += c;
            sre += c / j2;
            lre += c * j2;
            lglre += c / i2;
            hglre += c * i2;
            srlgle += c / (i2 * j2);
            srhgle += c * i2 / j2;
            lrlgle += c * j2 / i2;
            lrhgle += c * i2 * j2;
            let p = c / nr;
            mu_i += p * i;
            mu_j += p * j;
            entropy -= xlog2x(p);
        }
    }
    let (mut var_i, mut var_j) = (0.0, 0.0);
    for (gi, row) in r.iter().enumerate() {
        for (lj, &c) in row.iter().enumerate() {
            if c > 0.0 {
                let p = c / nr;
                var_i += p * ((gi + 1) as f64 - mu_i).powi(2);
                var_j += p * ((lj + 1) as f64 - mu_j).powi(2);
            }
        }
    }
    let gln: f64 = gl_marg.iter().map(|v| v * v).sum::<f64>() / nr;
    let rln: f64 = rl_marg.iter().map(|v| v * v).sum::<f64>() / nr;
    Some([
        gln,
        gln / nr,
        var_i,
        hglre / nr,
        lre / nr,
        lrhgle / nr,
        lrlgle / nr,
        lglre / nr,
        entropy,
        rln,
        rln / nr,
        ratio(nr, np),
        var_j,
        sre / nr,
        srhgle / nr,
        srlgle / nr,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(levels: &[u32], ng: usize) -> DiscretizedRoi {
        DiscretizedRoi::from_levels([levels.len(), 1, 1], [1.0; 3], ng, levels).unwrap()
    }

    fn get(f: &[f64; 16], name: &str) -> f64 {
        f[NAMES.iter().position(|n| *n == name).unwrap()]
    }

    #[test]
    fn constant_line_is_one_run() {
        let d = line(&[2; 7], 3);
        let r = run_length_matrix(&d, [1, 0, 0]);
        assert_eq!(r[1][6], 1.0);
        assert_eq!(r.iter().flatten().sum::<f64>(), 1.0);
        let f = matrix_features(&r, 7).unwrap();
        assert_eq!(get(&f, "RunLengthNonUniformity"), 1.0);
        assert_eq!(get(&f, "LongRunEmphasis"), 49.0);
    }

    #[test]
    fn alternating_line_has_unit_runs() {
        let d = line(&[1, 2, 1, 2, 1, 2], 2);
        let f = glrlm_features(&d);
        assert_eq!(get(&f, "ShortRunEmphasis"), 1.0);
        assert_eq!(get(&f, "RunPercentage"), 1.0);
    }

    #[test]
    fn voxel_count_identity() {
        let dims = [5, 4, 3];
        let levels: Vec<u32> = (0..60).map(|i| ((i * 7 + i / 5) % 4) as u32).collect();
        let d = DiscretizedRoi::from_levels(dims, [1.0; 3], 3, &levels).unwrap();
        for o in OFFSETS_13 {
            let r = run_length_matrix(&d, o);
            let total: f64 = r
                .iter()
                .flat_map(|row| row.iter().enumerate().map(|(j, c)| c * (j + 1) as f64))
                .sum();
            assert_eq!(total as usize, d.count());
        }
    }
}
