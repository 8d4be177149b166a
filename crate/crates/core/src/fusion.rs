//! Confidence-gated decision fusion of two probability vectors.
//!
//! `fuse` returns the radiomics vector when its top probability reaches the
//! gate `t`, and the blend `k * p_d + (1 - k) * p_r` otherwise.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the component sum of a probability vector.
pub const SUM_TOL: f64 = 1e-9;
/// Tolerance on the row sum of an external probability file.
pub const FILE_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbabilityVector {
    p: Vec<f64>,
}

impl ProbabilityVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        Self::checked(p, "")
    }

    fn checked(p: Vec<f64>, case_id: &str) -> Result<Self> {
        let bad = |reason: String| Error::InvalidProbability {
            case_id: case_id.to_string(),
            reason,
        };
        if p.len() < 2 {
            return Err(bad(format!("{} components", p.len())));
        }
        if let Some(v) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(bad(format!("component {v} outside [0, 1]")));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > SUM_TOL {
            return Err(bad(format!("components sum to {s}")));
        }
        Ok(ProbabilityVector { p })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.p.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the largest component; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut b = 0;
        for (i, &v) in self.p.iter().enumerate() {
            if v > self.p[b] {
                b = i;
            }
        }
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub k: f64,
    pub t: f64,
}

impl FusionParams {
    pub fn new(k: f64, t: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&k) || !(t > 0.0 && t <= 1.01) {
            return Err(Error::InvalidInput(format!(
                "fusion parameters k={k}, t={t} out of range"
            )));
        }
        Ok(FusionParams { k, t })
    }

    /// Never gates and puts all weight on the deep-learning vector.
    pub const PURE_DL: FusionParams = FusionParams { k: 1.0, t: 1.01 };
    /// Always returns the radiomics vector.
    pub const PURE_RADIOMICS: FusionParams = FusionParams { k: 0.0, t: 1.01 };
}

pub fn fuse(p_d: &ProbabilityVector, p_r: &ProbabilityVector, params: FusionParams) -> Result<ProbabilityVector> {
    if p_d.len() != p_r.len() {
        return Err(Error::InvalidInput(format!(
            "vectors of length {} and {}",
            p_d.len(),
            p_r.len()
        )));
    }
    if p_r.max() >= params.t {
        return Ok(p_r.clone());
    }
    let k = params.k;
    let p = p_d.p.iter().zip(&p_r.p).map(|(d, r)| k * d + (1.0 - k) * r).collect();
    Ok(ProbabilityVector { p })
}

/// `{0.0, 0.1, ..., 1.0}`.
pub fn default_k_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// `{0.34, 0.40, ..., 1.00, 1.01}`.
pub fn default_t_grid() -> Vec<f64> {
    let mut t: Vec<f64> = (0..=11).map(|i| (34 + 6 * i) as f64 / 100.0).collect();
    t.push(1.01);
    t
}

/// One case presented to the fusion search.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionCase {
    pub p_d: ProbabilityVector,
    pub p_r: ProbabilityVector,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionGridPoint {
    pub k: f64,
    pub t: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionSearchResult {
    pub params: FusionParams,
    pub accuracy: f64,
    pub pure_dl_accuracy: f64,
    pub pure_radiomics_accuracy: f64,
    pub points: Vec<FusionGridPoint>,
}

/// Argmax accuracy of fused predictions.
pub fn fused_accuracy(cases: &[FusionCase], params: FusionParams) -> Result<f64> {
    let mut correct = 0;
    for c in cases {
        if fuse(&c.p_d, &c.p_r, params)?.argmax() == c.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / cases.len() as f64)
}

/// Exhaustive joint search over `k_grid x t_grid`. The grids must reach
/// both pure strategies: some `k = 0` or `t <= 1/3` for radiomics, and
/// `k = 1` with some `t > 1` for deep learning. Ties go to the smallest `t`,
/// then the smallest `k`.
pub fn fusion_grid_search(cases: &[FusionCase], k_grid: &[f64], t_grid: &[f64]) -> Result<FusionSearchResult> {
    if cases.is_empty() || k_grid.is_empty() || t_grid.is_empty() {
        return Err(Error::InsufficientData("fusion search needs cases and grids".into()));
    }
    let reaches_radiomics = k_grid.contains(&0.0) || t_grid.iter().any(|&t| t <= 1.0 / 3.0);
    let reaches_dl = k_grid.contains(&1.0) && t_grid.iter().any(|&t| t > 1.0);
    if !reaches_radiomics || !reaches_dl {
        return Err(Error::InvalidInput(
            "fusion grid must contain both pure strategies".into(),
        ));
    }
    let mut ts = t_grid.to_vec();
    let mut ks = k_grid.to_vec();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ks.sort_by(f64::total_cmp);
    ks.dedup();
    let grid: Vec<(f64, f64)> = ts.iter().flat_map(|&t| ks.iter().map(move |&k| (k, t))).collect();
    let accs = crate::par::try_map(&grid, |&(k, t)| fused_accuracy(cases, FusionParams::new(k, t)?))?;
    let mut best = 0;
    for (i, &a) in accs.iter().enumerate() {
        if a > accs[best] {
            best = i;
        }
    }
    let points = grid
        .iter()
        .zip(&accs)
        .map(|(&(k, t), &accuracy)| FusionGridPoint { k, t, accuracy })
        .collect();
    Ok(FusionSearchResult {
        params: FusionParams {
            k: grid[best].0,
            t: grid[best].1,
        },
        accuracy: accs[best],
        pure_dl_accuracy: fused_accuracy(cases, FusionParams::PURE_DL)?,
        pure_radiomics_accuracy: fused_accuracy(cases, FusionParams::PURE_RADIOMICS)?,
        points,
    })
}

const DL_HEADER: [&str; 4] = ["case_id", "p_healthy", "p_low", "p_high"];

/// Read `case_id,p_healthy,p_low,p_high`. Rows must sum to 1 within
/// [`FILE_SUM_TOL`]; accepted rows are renormalized to sum to 1.
pub fn read_dl_probabilities(path: &Path) -> Result<Vec<(String, ProbabilityVector)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv_open(path, e))?;
    let header = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != DL_HEADER {
        return Err(Error::csv(path, format!("header must be {}", DL_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let id = rec[0].to_string();
        let bad = |reason: String| Error::InvalidProbability {
            case_id: id.clone(),
            reason,
        };
        let p = (1..4)
            .map(|j| {
                rec[j]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| bad(format!("bad number {:?}", &rec[j])))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(v) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(bad(format!("component {v} outside [0, 1]")));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > FILE_SUM_TOL {
            return Err(bad(format!("components sum to {s}")));
        }
        let pv = ProbabilityVector::checked(p.iter().map(|v| v / s).collect(), &id)?;
        out.push((id, pv));
    }
    Ok(out)
}

pub fn write_dl_probabilities(path: &Path, rows: &[(String, ProbabilityVector)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv_open(path, e))?;
    w.write_record(DL_HEADER).map_err(|e| Error::csv(path, e))?;
    for (id, p) in rows {
        let mut rec = vec![id.clone()];
        rec.extend(p.as_slice().iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
