//! Quadratic-time reference metrics: pairwise AUC, direct Dice counts and
//! Hausdorff distances over every pair of boundary voxels.

use ipmn_core::volume::{Geometry, Mask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Mann-Whitney as literal pair counting; ties score one half.
pub fn pairwise_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if positive[i] && !positive[j] {
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

/// Mean over classes that have both positives and negatives.
pub fn macro_auc(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
    let per: Vec<f64> = (0..3)
        .filter_map(|c| {
            let s: Vec<f64> = probs.iter().map(|p| p[c]).collect();
            let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            pairwise_auc(&s, &pos)
        })
        .collect();
    per.iter().sum::<f64>() / per.len() as f64
}

/// 30 cases with scores on a coarse grid so ties are common.
pub fn random_scores(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..30).map(|_| rng.random_range(0..3)).collect();
    let probs = labels
        .iter()
        .map(|&l| {
            let mut p: Vec<f64> = (0..3)
                .map(|c| (rng.random_range(0..10) + if c == l { 3 } else { 0 }) as f64)
                .collect();
            let s: f64 = p.iter().sum::<f64>().max(1.0);
            p.iter_mut().for_each(|v| *v /= s);
            p
        })
        .collect();
    (probs, labels)
}

pub fn dice(a: &Mask, b: &Mask) -> f64 {
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        na += x as usize;
        nb += y as usize;
        inter += (x && y) as usize;
    }
    if na + nb == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (na + nb) as f64
    }
}

/// Foreground voxels touching the grid edge or a background face neighbour.
fn boundary_points(m: &Mask, spacing: [f64; 3]) -> Vec<[f64; 3]> {
    let [nx, ny, nz] = m.dims();
    let at = |x: i64, y: i64, z: i64| {
        x >= 0
            && y >= 0
            && z >= 0
            && (x as usize) < nx
            && (y as usize) < ny
            && (z as usize) < nz
            && m.get(x as usize, y as usize, z as usize)
    };
    let mut out = vec![];
    for z in 0..nz as i64 {
        for y in 0..ny as i64 {
            for x in 0..nx as i64 {
                if !at(x, y, z) {
                    continue;
                }
                let faces = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)];
                if faces.iter().any(|&(dx, dy, dz)| !at(x + dx, y + dy, z + dz)) {
                    out.push([x as f64 * spacing[0], y as f64 * spacing[1], z as f64 * spacing[2]]);
                }
            }
        }
    }
    out
}

fn p95(mut d: Vec<f64>) -> f64 {
    d.sort_by(f64::total_cmp);
    let pos = 0.95 * (d.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    d[lo] + (pos - lo as f64) * (d[hi] - d[lo])
}

fn directed(from: &[[f64; 3]], to: &[[f64; 3]]) -> Vec<f64> {
    from.iter()
        .map(|p| {
            to.iter()
                .map(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

pub fn hd95(a: &Mask, b: &Mask, spacing: [f64; 3]) -> f64 {
    let (pa, pb) = (boundary_points(a, spacing), boundary_points(b, spacing));
    p95(directed(&pa, &pb)).max(p95(directed(&pb, &pa)))
}

/// A pair of overlapping irregular blobs on a 16^3 grid with random
/// anisotropic spacing.
pub fn random_masks(seed: u64) -> (Mask, Mask, [f64; 3]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spacing = [
        rng.random_range(0.5..2.0),
        rng.random_range(0.5..2.0),
        rng.random_range(0.5..2.5),
    ];
    let g = Geometry::new([16, 16, 16], spacing);
    let blob = |rng: &mut ChaCha8Rng| {
        let n = rng.random_range(1..=3);
        let balls: Vec<([f64; 3], [f64; 3])> = (0..n)
            .map(|_| {
                let c = [
                    rng.random_range(3.0..13.0),
                    rng.random_range(3.0..13.0),
                    rng.random_range(3.0..13.0),
                ];
                let r = [
                    rng.random_range(1.5..6.0),
                    rng.random_range(1.5..6.0),
                    rng.random_range(1.5..6.0),
                ];
                (c, r)
            })
            .collect();
        let data: Vec<bool> = (0..16 * 16 * 16)
            .map(|i| {
                let p = [(i % 16) as f64, ((i / 16) % 16) as f64, (i / 256) as f64];
                let inside = balls
                    .iter()
                    .any(|(c, r)| (0..3).map(|k| ((p[k] - c[k]) / r[k]).powi(2)).sum::<f64>() <= 1.0);
                inside ^ rng.random_bool(0.02)
            })
            .collect();
        Mask::from_data(g.clone(), data).unwrap()
    };
    let a = blob(&mut rng);
    let b = blob(&mut rng);
    (a, b, spacing)
}
