//! Neighbourhood gray-tone difference features.
//!
//! For every foreground voxel with at least one foreground 26-neighbour,
//! `s_i` accumulates `|i - mean(neighbour levels)|` for its level `i`.
//! Voxels without foreground neighbours are left out. `n_i` counts the
//! contributing voxels of level `i`, `Nvp = sum n_i`, `p_i = n_i / Nvp`, and
//! `Ngp` is the number of levels with `p_i > 0`.

use super::discretize::DiscretizedRoi;

pub const NAMES: [&str; 5] = ["Busyness", "Coarseness", "Complexity", "Contrast", "Strength"];

/// Cap applied to Coarseness when `sum p_i s_i` is zero.
pub const COARSENESS_CAP: f64 = 1e6;

/// Per-level `(n_i, s_i)`.
pub fn tone_differences(d: &DiscretizedRoi) -> Vec<(f64, f64)> {
    let grid = d.padded();
    let nbrs = d.neighbour_strides();
    let mut out = vec![(0.0, 0.0); d.ng()];
    for i in d.foreground() {
        let (mut sum, mut cnt) = (0u64, 0u32);
        for &s in &nbrs {
            let l = grid[(i as isize + s) as usize];
            if l > 0 {
                sum += l as u64;
                cnt += 1;
            }
        }
        if cnt == 0 {
            continue;
        }
        let level = grid[i];
        let slot = &mut out[level as usize - 1];
        slot.0 += 1.0;
        slot.1 += (level as f64 - sum as f64 / cnt as f64).abs();
    }
    out
}

pub fn ngtdm_features(d: &DiscretizedRoi) -> [f64; 5] {
    features_from(&tone_differences(d))
}

pub fn features_from(ns: &[(f64, f64)]) -> [f64; 5] {
    let nvp: f64 = ns.iter().map(|v| v.0).sum();
    if nvp == 0.0 {
        return [0.0, COARSENESS_CAP, 0.0, 0.0, 0.0];
    }
    // (level, p_i, s_i) for present levels.
    let present: Vec<(f64, f64, f64)> = ns
        .iter()
        .enumerate()
        .filter(|(_, v)| v.0 > 0.0)
        .map(|(k, v)| ((k + 1) as f64, v.0 / nvp, v.1))
        .collect();
    let ngp = present.len() as f64;
    let ps_sum: f64 = present.iter().map(|&(_, p, s)| p * s).sum();
    let s_sum: f64 = present.iter().map(|&(_, _, s)| s).sum();

    let coarseness = if ps_sum > 0.0 {
        (1.0 / ps_sum).min(COARSENESS_CAP)
    } else {
        COARSENESS_CAP
    };
    let (mut c_pair, mut busy_den, mut complexity, mut strength_num) = (0.0, 0.0, 0.0, 0.0);
    for &(i, pi, si) in &present {
        for &(j, pj, sj) in &present {
            c_pair += pi * pj * (i - j).powi(2);
            busy_den += (i * pi - j * pj).abs();
            complexity += (i - j).abs() * (pi * si + pj * sj) / (pi + pj);
            strength_num += (pi + pj) * (i - j).powi(2);
        }
    }
    let contrast = if ngp > 1.0 {
        c_pair / (ngp * (ngp - 1.0)) * s_sum / nvp
    } else {
        0.0
    };
    let busyness = if busy_den > 0.0 { ps_sum / busy_den } else { 0.0 };
    let strength = if s_sum > 0.0 { strength_num / s_sum } else { 0.0 };
    [busyness, coarseness, complexity / nvp, contrast, strength]
}
