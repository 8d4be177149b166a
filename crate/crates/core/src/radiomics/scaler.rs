use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `sign(x) * ln(1 + |x|)`: equals `ln(1 + x)` for `x >= 0` and stays
/// defined for negative features such as skewness.
#[inline]
pub fn signed_log1p(x: f64) -> f64 {
    if x >= 0.0 {
        x.ln_1p()
    } else {
        -(-x).ln_1p()
    }
}

/// Per-feature log transform followed by unit-variance scaling.
///
/// Statistics use the population convention. Features with zero spread are
/// flagged constant and always scale to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Case ids the statistics were fitted on.
    #[serde(default)]
    pub training_ids: Vec<String>,
}

impl FeatureScaler {
    pub fn fit(names: &[String], rows: &[&[f64]]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InsufficientData("cannot fit a scaler on zero rows".into()));
        }
        let p = names.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; p];
        for row in rows {
            if row.len() != p {
                return Err(Error::InvalidInput(format!(
                    "row has {} values, expected {p}",
                    row.len()
                )));
            }
            for (m, &x) in mean.iter_mut().zip(row.iter()) {
                if !x.is_finite() {
                    return Err(Error::InvalidInput(format!("non-finite feature value {x}")));
                }
                *m += signed_log1p(x);
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; p];
        for row in rows {
            for ((v, &x), &m) in var.iter_mut().zip(row.iter()).zip(&mean) {
                *v += (signed_log1p(x) - m).powi(2);
            }
        }
        let std = var.iter().map(|v| (v / n).sqrt()).collect();
        Ok(FeatureScaler {
            names: names.to_vec(),
            mean,
            std,
            training_ids: Vec::new(),
        })
    }

    pub fn is_constant(&self, i: usize) -> bool {
        self.std[i] == 0.0
    }

    pub fn apply(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.mean.len() {
            return Err(Error::InvalidInput(format!(
                "row has {} values, scaler expects {}",
                row.len(),
                self.mean.len()
            )));
        }
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&x, (&m, &s))| {
                if !x.is_finite() {
                    Err(Error::InvalidInput(format!("non-finite feature value {x}")))
                } else if s == 0.0 {
                    Ok(0.0)
                } else {
                    Ok((signed_log1p(x) - m) / s)
                }
            })
            .collect()
    }
}
