//! Classification metrics and segmentation overlap/distance metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::percentile::percentile_sorted;
use crate::table::{CLASS_NAMES, N_CLASSES};
use crate::volume::Mask;

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b || a == 0 {
        return Err(Error::InvalidInput(format!("{a} predictions for {b} labels")));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(preds.len(), labels.len())?;
    let ok = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(ok as f64 / labels.len() as f64)
}

/// `m[true][pred]` counts.
pub fn confusion_matrix(preds: &[usize], labels: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    check_lengths(preds.len(), labels.len())?;
    let mut m = vec![vec![0; classes]; classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p >= classes || l >= classes {
            return Err(Error::InvalidInput(format!("class index out of range: {p}, {l}")));
        }
        m[l][p] += 1;
    }
    Ok(m)
}

/// Per-class precision and recall. A class never predicted has precision 0;
/// a class absent from the labels has recall 0.
pub fn per_class_precision_recall(preds: &[usize], labels: &[usize], classes: usize) -> Result<Vec<(f64, f64)>> {
    let m = confusion_matrix(preds, labels, classes)?;
    Ok((0..classes)
        .map(|c| {
            let tp = m[c][c] as f64;
            let predicted: usize = (0..classes).map(|t| m[t][c]).sum();
            let actual: usize = m[c].iter().sum();
            let pr = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
            let rc = if actual == 0 { 0.0 } else { tp / actual as f64 };
            (pr, rc)
        })
        .collect())
}

/// Macro-averaged precision and recall over all classes.
pub fn macro_precision_recall(preds: &[usize], labels: &[usize], classes: usize) -> Result<(f64, f64)> {
    let pc = per_class_precision_recall(preds, labels, classes)?;
    let n = classes as f64;
    Ok((
        pc.iter().map(|p| p.0).sum::<f64>() / n,
        pc.iter().map(|p| p.1).sum::<f64>() / n,
    ))
}

/// Binary AUC by the rank statistic, ties counted as one half. `None` when
/// either side is empty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean.
        let mean_rank = (i + j + 2) as f64 / 2.0;
        let pos_in_run = idx[i..=j].iter().filter(|&&k| positive[k]).count();
        rank_sum += mean_rank * pos_in_run as f64;
        i = j + 1;
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// One-vs-rest AUC per class (`None` for classes without both positives
/// and negatives) and their macro mean.
pub fn auc_ovr(probs: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<(Vec<Option<f64>>, f64)> {
    check_lengths(probs.len(), labels.len())?;
    if let Some(p) = probs.iter().find(|p| p.len() != classes) {
        return Err(Error::InvalidInput(format!("probability vector of length {}", p.len())));
    }
    let per: Vec<Option<f64>> = (0..classes)
        .map(|c| {
            let s: Vec<f64> = probs.iter().map(|p| p[c]).collect();
            let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            binary_auc(&s, &pos)
        })
        .collect();
    let defined: Vec<f64> = per.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::InsufficientData("AUC needs at least two distinct labels".into()));
    }
    let macro_auc = defined.iter().sum::<f64>() / defined.len() as f64;
    Ok((per, macro_auc))
}

pub fn auc_ovr_macro(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    Ok(auc_ovr(probs, labels, N_CLASSES)?.1)
}

/// ROC points `(threshold, fpr, tpr)`, from the strictest threshold down.
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Vec<(f64, f64, f64)> {
    let n_pos = positive.iter().filter(|&&p| p).count().max(1) as f64;
    let n_neg = positive.iter().filter(|&&p| !p).count().max(1) as f64;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = vec![(f64::INFINITY, 0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < idx.len() {
        let thr = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == thr {
            if positive[idx[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        out.push((thr, fp / n_neg, tp / n_pos));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub auc: Option<f64>,
    pub support: usize,
}

/// Classification report. `auc` is the one-vs-rest macro average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc: f64,
    pub auc: f64,
    pub pr: f64,
    pub rc: f64,
    pub per_class: BTreeMap<String, ClassMetrics>,
    pub n: usize,
    pub auc_averaging: String,
}

pub fn evaluate(probs: &[Vec<f64>], labels: &[usize]) -> Result<EvalReport> {
    let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let acc = accuracy(&preds, labels)?;
    let (pr, rc) = macro_precision_recall(&preds, labels, N_CLASSES)?;
    let (per_auc, auc) = auc_ovr(probs, labels, N_CLASSES)?;
    let pc = per_class_precision_recall(&preds, labels, N_CLASSES)?;
    let per_class = (0..N_CLASSES)
        .map(|c| {
            (
                CLASS_NAMES[c].to_string(),
                ClassMetrics {
                    precision: pc[c].0,
                    recall: pc[c].1,
                    auc: per_auc[c],
                    support: labels.iter().filter(|&&l| l == c).count(),
                },
            )
        })
        .collect();
    Ok(EvalReport {
        acc,
        auc,
        pr,
        rc,
        per_class,
        n: labels.len(),
        auc_averaging: "macro one-vs-rest".into(),
    })
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut b = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[b] {
            b = i;
        }
    }
    b
}

/// Dice overlap. Two empty masks agree perfectly.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    a.ensure_same_geometry(b)?;
    let (na, nb) = (a.count(), b.count());
    if na + nb == 0 {
        return Ok(1.0);
    }
    let inter = a.data().iter().zip(b.data()).filter(|(x, y)| **x && **y).count();
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// Foreground voxels with a background 6-neighbour or on the grid edge.
pub fn boundary(m: &Mask) -> Mask {
    let [nx, ny, nz] = m.dims();
    m.with_data(
        (0..m.len())
            .map(|i| {
                if !m.data()[i] {
                    return false;
                }
                let [x, y, z] = m.geometry().coords(i);
                if x == 0 || y == 0 || z == 0 || x + 1 == nx || y + 1 == ny || z + 1 == nz {
                    return true;
                }
                !(m.get(x - 1, y, z)
                    && m.get(x + 1, y, z)
                    && m.get(x, y - 1, z)
                    && m.get(x, y + 1, z)
                    && m.get(x, y, z - 1)
                    && m.get(x, y, z + 1))
            })
            .collect(),
    )
    .expect("same length")
}

/// Exact 1D squared distance transform of sampled function `f` with squared
/// step `w` (lower envelope of parabolas).
fn dt1d(f: &[f64], w: f64, out: &mut [f64]) {
    let n = f.len();
    let mut v: Vec<usize> = Vec::with_capacity(n);
    let mut z: Vec<f64> = Vec::with_capacity(n + 1);
    for q in (0..n).filter(|&q| f[q].is_finite()) {
        let fq = f[q] + w * (q * q) as f64;
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let fp = f[p] + w * (p * p) as f64;
                    let s = (fq - fp) / (2.0 * w * (q - p) as f64);
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = w * d * d + f[v[k]];
    }
}

/// Squared Euclidean distance in mm from every voxel to the nearest set voxel.
pub fn squared_edt(m: &Mask) -> Vec<f64> {
    let dims = m.dims();
    let s = m.spacing();
    let g = m.geometry().clone();
    let mut d: Vec<f64> = m.data().iter().map(|&b| if b { 0.0 } else { f64::INFINITY }).collect();
    for axis in 0..3 {
        let n = dims[axis];
        let w = s[axis] * s[axis];
        let (a, b) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let others: Vec<[usize; 2]> = (0..dims[b]).flat_map(|j| (0..dims[a]).map(move |i| [i, j])).collect();
        let mut line = vec![0.0; n];
        let mut res = vec![0.0; n];
        for o in others {
            let at = |q: usize| {
                let mut c = [0; 3];
                c[axis] = q;
                c[a] = o[0];
                c[b] = o[1];
                g.index(c[0], c[1], c[2])
            };
            for q in 0..n {
                line[q] = d[at(q)];
            }
            dt1d(&line, w, &mut res);
            for q in 0..n {
                d[at(q)] = res[q];
            }
        }
    }
    d
}

fn directed_p95(from: &Mask, to_dist2: &[f64]) -> f64 {
    let mut dists: Vec<f64> = from
        .data()
        .iter()
        .zip(to_dist2)
        .filter(|(b, _)| **b)
        .map(|(_, d)| d.sqrt())
        .collect();
    dists.sort_by(f64::total_cmp);
    percentile_sorted(&dists, 95.0)
}

/// Symmetric 95th-percentile boundary distance in mm.
pub fn hd95(a: &Mask, b: &Mask) -> Result<f64> {
    a.ensure_same_geometry(b)?;
    if a.count() == 0 || b.count() == 0 {
        return Err(Error::EmptyMask);
    }
    let (ba, bb) = (boundary(a), boundary(b));
    let (da, db) = (squared_edt(&ba), squared_edt(&bb));
    Ok(directed_p95(&ba, &db).max(directed_p95(&bb, &da)))
}

/// Segmentation quality of one case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationQc {
    pub dice: f64,
    pub hd95_mm: f64,
}

pub fn segmentation_qc(a: &Mask, b: &Mask) -> Result<SegmentationQc> {
    Ok(SegmentationQc {
        dice: dice(a, b)?,
        hd95_mm: hd95(a, b)?,
    })
}
