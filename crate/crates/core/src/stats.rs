//! Clinical covariates from masks and the statistical screening tools:
//! OLS, bidirectional stepwise selection and Welch's t-test.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Mask;

/// Foreground volume in millilitres.
pub fn mask_volume_ml(m: &Mask) -> Result<f64> {
    let n = m.count();
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(n as f64 * m.geometry().voxel_volume_mm3() / 1000.0)
}

/// Physical diagonal of the mask's tight bounding box, in mm. The box spans
/// whole voxels, so a single voxel has diagonal `|spacing|`.
pub fn mask_diagonal_mm(m: &Mask) -> Result<f64> {
    let b = m.bounding_box(0)?;
    let d = b.dims();
    let s = m.spacing();
    Ok((0..3).map(|a| (d[a] as f64 * s[a]).powi(2)).sum::<f64>().sqrt())
}

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn beta_reg(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Continued fraction for the incomplete beta, modified Lentz evaluation.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Student-t CDF with `dof > 0` degrees of freedom.
pub fn student_t_cdf(t: f64, dof: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = 0.5 * beta_reg(dof / 2.0, 0.5, dof / (dof + t * t));
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Two-sided p-value `P(|T| >= |t|)`.
pub fn t_two_sided_p(t: f64, dof: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(dof / 2.0, 0.5, dof / (dof + t * t)).min(1.0)
}

/// Ordinary least squares fit with an intercept. Index 0 of every
/// per-coefficient vector is the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsResult {
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_stats: Vec<f64>,
    pub p_values: Vec<f64>,
    pub r_squared: f64,
    pub rss: f64,
    pub n: usize,
    pub dof: usize,
}

/// Relative pivot size below which the design counts as rank deficient.
const RANK_TOL: f64 = 1e-10;

/// Fit `y ~ 1 + X`; `rows[i]` holds the predictors of observation `i`.
pub fn ols_fit(rows: &[Vec<f64>], y: &[f64]) -> Result<OlsResult> {
    let n = rows.len();
    if n != y.len() {
        return Err(Error::InvalidInput(format!("{n} rows but {} targets", y.len())));
    }
    let p = rows.first().map_or(0, Vec::len);
    if n <= p + 1 {
        return Err(Error::InsufficientData(format!(
            "{n} observations for {} coefficients",
            p + 1
        )));
    }
    if rows.iter().any(|r| r.len() != p) {
        return Err(Error::InvalidInput("ragged predictor rows".into()));
    }
    if rows.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value in OLS input".into()));
    }
    let x = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] });
    let yv = DVector::from_column_slice(y);

    // Column-scaled QR: rank detection independent of predictor units.
    let scale: Vec<f64> = (0..=p)
        .map(|j| x.column(j).norm())
        .map(|s| if s > 0.0 { s } else { 1.0 })
        .collect();
    let xs = DMatrix::from_fn(n, p + 1, |i, j| x[(i, j)] / scale[j]);
    let qr = xs.qr();
    let r = qr.r();
    let rmax = (0..=p).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    if (0..=p).any(|j| r[(j, j)].abs() <= RANK_TOL * rmax) {
        return Err(Error::RankDeficient);
    }
    let qty = qr.q().transpose() * &yv;
    let bs = r.solve_upper_triangular(&qty).ok_or(Error::RankDeficient)?;
    let rinv = r
        .solve_upper_triangular(&DMatrix::identity(p + 1, p + 1))
        .ok_or(Error::RankDeficient)?;
    let coefficients: Vec<f64> = (0..=p).map(|j| bs[j] / scale[j]).collect();

    let fitted = &x * DVector::from_column_slice(&coefficients);
    let rss: f64 = (&yv - fitted).iter().map(|e| e * e).sum();
    let ybar = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    let r_squared = if tss > 0.0 {
        (1.0 - rss / tss).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let dof = n - (p + 1);
    let sigma2 = rss / dof as f64;

    let mut std_errors = Vec::with_capacity(p + 1);
    let mut t_stats = Vec::with_capacity(p + 1);
    let mut p_values = Vec::with_capacity(p + 1);
    for j in 0..=p {
        // diag((XᵀX)⁻¹) = row norms of R⁻¹, undone for the column scale.
        let d: f64 = rinv.row(j).iter().map(|v| v * v).sum::<f64>() / (scale[j] * scale[j]);
        let se = (sigma2 * d).sqrt();
        let b = coefficients[j];
        let t = if se > 0.0 {
            b / se
        } else if b == 0.0 {
            0.0
        } else {
            b.signum() * f64::INFINITY
        };
        std_errors.push(se);
        t_stats.push(t);
        p_values.push(t_two_sided_p(t, dof as f64));
    }
    Ok(OlsResult {
        coefficients,
        std_errors,
        t_stats,
        p_values,
        r_squared,
        rss,
        n,
        dof,
    })
}

/// Outcome of stepwise selection: predictor indices in the order they
/// appear in the design (ascending), and the final fit on them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepwiseResult {
    pub selected: Vec<usize>,
    pub fit: OlsResult,
}

fn fit_subset(rows: &[Vec<f64>], y: &[f64], cols: &[usize]) -> Result<OlsResult> {
    let sub: Vec<Vec<f64>> = rows.iter().map(|r| cols.iter().map(|&c| r[c]).collect()).collect();
    ols_fit(&sub, y)
}

/// Bidirectional stepwise selection. Each step adds the outside predictor
/// with the smallest p-value below `p_enter`, then drops the inside
/// predictor with the largest p-value above `p_remove`. Candidates whose
/// addition makes the design rank deficient are skipped. Ties go to the
/// lower predictor index. A revisited subset ends the search.
pub fn stepwise_select(rows: &[Vec<f64>], y: &[f64], p_enter: f64, p_remove: f64) -> Result<StepwiseResult> {
    let p = rows.first().map_or(0, Vec::len);
    let mut selected: Vec<usize> = Vec::new();
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    seen.insert(selected.clone());
    loop {
        let mut changed = false;

        let mut best: Option<(usize, f64)> = None;
        for j in (0..p).filter(|j| !selected.contains(j)) {
            let mut cols = selected.clone();
            cols.push(j);
            cols.sort_unstable();
            let fit = match fit_subset(rows, y, &cols) {
                Ok(f) => f,
                Err(Error::RankDeficient) | Err(Error::InsufficientData(_)) => continue,
                Err(e) => return Err(e),
            };
            let pj = fit.p_values[1 + cols.iter().position(|&c| c == j).unwrap()];
            if best.is_none_or(|(_, bp)| pj < bp) {
                best = Some((j, pj));
            }
        }
        if let Some((j, pj)) = best {
            if pj < p_enter {
                selected.push(j);
                selected.sort_unstable();
                changed = true;
            }
        }

        if !selected.is_empty() {
            let fit = fit_subset(rows, y, &selected)?;
            let mut worst: Option<(usize, f64)> = None;
            for (k, &pv) in fit.p_values[1..].iter().enumerate() {
                if pv > p_remove && worst.is_none_or(|(_, wp)| pv > wp) {
                    worst = Some((k, pv));
                }
            }
            if let Some((k, _)) = worst {
                selected.remove(k);
                changed = true;
            }
        }

        if !changed || !seen.insert(selected.clone()) {
            break;
        }
    }
    let fit = fit_subset(rows, y, &selected)?;
    Ok(StepwiseResult { selected, fit })
}

/// Welch's unequal-variance t-test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub dof: f64,
    pub p: f64,
}

pub fn welch_ttest(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "Welch test needs two samples of size >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let moments = |s: &[f64]| {
        let n = s.len() as f64;
        let m = s.iter().sum::<f64>() / n;
        let v = s.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (n, m, v)
    };
    let (na, ma, va) = moments(a);
    let (nb, mb, vb) = moments(b);
    let (qa, qb) = (va / na, vb / nb);
    let se2 = qa + qb;
    if !(se2 > 0.0) {
        return Err(Error::InsufficientData("both samples have zero variance".into()));
    }
    let t = (ma - mb) / se2.sqrt();
    let dof = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
    Ok(WelchResult {
        t,
        dof,
        p: t_two_sided_p(t, dof),
    })
}
