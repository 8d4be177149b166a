//! Brute-force statistics: normal equations solved by Gauss-Jordan
//! elimination, statrs for the t distribution, and a literal stepwise loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, StudentsT};

pub struct OracleFit {
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub t: Vec<f64>,
    pub p: Vec<f64>,
    pub r2: f64,
    pub rss: f64,
}

/// Inverse by Gauss-Jordan with partial pivoting.
pub fn invert(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| m[i][c].abs().partial_cmp(&m[j][c].abs()).unwrap())?;
        if m[piv][c].abs() < 1e-12 {
            return None;
        }
        m.swap(c, piv);
        let d = m[c][c];
        for v in m[c].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                if f != 0.0 {
                    let pivot = m[c].clone();
                    for (v, p) in m[r].iter_mut().zip(&pivot) {
                        *v -= f * p;
                    }
                }
            }
        }
    }
    Some(m.into_iter().map(|r| r[n..].to_vec()).collect())
}

pub fn two_sided(t: f64, dof: f64) -> f64 {
    let d = StudentsT::new(0.0, 1.0, dof).unwrap();
    2.0 * d.cdf(-t.abs())
}

/// `y ~ 1 + X` through `(X'X)^-1 X'y`.
pub fn ols(rows: &[Vec<f64>], y: &[f64]) -> Option<OracleFit> {
    let n = rows.len();
    let x: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| std::iter::once(1.0).chain(r.iter().copied()).collect())
        .collect();
    let k = x[0].len();
    let xtx: Vec<Vec<f64>> = (0..k)
        .map(|a| (0..k).map(|b| (0..n).map(|i| x[i][a] * x[i][b]).sum()).collect())
        .collect();
    let xty: Vec<f64> = (0..k).map(|a| (0..n).map(|i| x[i][a] * y[i]).sum()).collect();
    let inv = invert(&xtx)?;
    let beta: Vec<f64> = (0..k).map(|a| (0..k).map(|b| inv[a][b] * xty[b]).sum()).collect();
    let rss: f64 = (0..n)
        .map(|i| (y[i] - (0..k).map(|a| x[i][a] * beta[a]).sum::<f64>()).powi(2))
        .sum();
    let ybar = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    let dof = (n - k) as f64;
    let s2 = rss / dof;
    let se: Vec<f64> = (0..k).map(|a| (s2 * inv[a][a]).sqrt()).collect();
    let t: Vec<f64> = beta.iter().zip(&se).map(|(b, s)| b / s).collect();
    let p = t.iter().map(|&t| two_sided(t, dof)).collect();
    Some(OracleFit {
        beta,
        se,
        t,
        p,
        r2: 1.0 - rss / tss,
        rss,
    })
}

fn subset(rows: &[Vec<f64>], cols: &[usize]) -> Vec<Vec<f64>> {
    rows.iter().map(|r| cols.iter().map(|&c| r[c]).collect()).collect()
}

/// Forward entry of the smallest p below `p_enter`, then removal of the
/// largest p above `p_remove`, until nothing changes or a subset repeats.
pub fn stepwise(rows: &[Vec<f64>], y: &[f64], p_enter: f64, p_remove: f64) -> Vec<usize> {
    let p = rows[0].len();
    let mut sel: Vec<usize> = vec![];
    let mut history = vec![sel.clone()];
    loop {
        let before = sel.clone();
        let mut cand: Vec<(f64, usize)> = vec![];
        for j in 0..p {
            if sel.contains(&j) {
                continue;
            }
            let mut cols = sel.clone();
            cols.push(j);
            cols.sort();
            if let Some(f) = ols(&subset(rows, &cols), y) {
                let pos = cols.iter().position(|&c| c == j).unwrap();
                cand.push((f.p[pos + 1], j));
            }
        }
        // Strict minimum; the earliest column wins ties.
        if let Some(&(pj, j)) = cand.iter().fold(None, |b: Option<&(f64, usize)>, c| match b {
            Some(b) if b.0 <= c.0 => Some(b),
            _ => Some(c),
        }) {
            if pj < p_enter {
                sel.push(j);
                sel.sort();
            }
        }
        if !sel.is_empty() {
            let f = ols(&subset(rows, &sel), y).unwrap();
            let mut worst: Option<(f64, usize)> = None;
            for (k, &pv) in f.p[1..].iter().enumerate() {
                if pv > p_remove && worst.is_none_or(|w| pv > w.0) {
                    worst = Some((pv, k));
                }
            }
            if let Some((_, k)) = worst {
                sel.remove(k);
            }
        }
        if sel == before || history.contains(&sel) {
            return sel;
        }
        history.push(sel.clone());
    }
}

pub struct Welch {
    pub t: f64,
    pub dof: f64,
    pub p: f64,
}

pub fn welch(a: &[f64], b: &[f64]) -> Welch {
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let var = |s: &[f64]| {
        let m = mean(s);
        s.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (s.len() - 1) as f64
    };
    let (va, vb) = (var(a) / a.len() as f64, var(b) / b.len() as f64);
    let t = (mean(a) - mean(b)) / (va + vb).sqrt();
    let dof = (va + vb).powi(2) / (va * va / (a.len() - 1) as f64 + vb * vb / (b.len() - 1) as f64);
    Welch {
        t,
        dof,
        p: two_sided(t, dof),
    }
}

/// Random regression problem: 20..60 rows, 1..=6 predictors, a random
/// subset of them truly active.
pub fn random_problem(seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(20..60);
    let p = rng.random_range(1..=6);
    let beta: Vec<f64> = (0..p)
        .map(|_| {
            if rng.random_bool(0.5) {
                rng.random_range(-2.0..2.0)
            } else {
                0.0
            }
        })
        .collect();
    let scale: Vec<f64> = (0..p).map(|_| 10f64.powf(rng.random_range(-1.0..2.0))).collect();
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let r: Vec<f64> = (0..p)
            .map(|j| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale[j] * z
            })
            .collect();
        let noise: f64 = StandardNormal.sample(&mut rng);
        y.push(
            3.0 + r
                .iter()
                .zip(&beta)
                .zip(&scale)
                .map(|((x, b), s)| x * b / s)
                .sum::<f64>()
                + noise,
        );
        rows.push(r);
    }
    (rows, y)
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + 1e-12
}

/// Compare OLS, stepwise and Welch against the oracles on one problem.
pub fn check_problem(seed: u64, rel: f64) -> Vec<String> {
    use ipmn_core::stats::{ols_fit, stepwise_select, welch_ttest};
    let (rows, y) = random_problem(seed);
    let mut bad = Vec::new();
    let lib = ols_fit(&rows, &y).unwrap();
    let or = ols(&rows, &y).unwrap();
    let vecs = [
        ("beta", &lib.coefficients, &or.beta),
        ("se", &lib.std_errors, &or.se),
        ("t", &lib.t_stats, &or.t),
        ("p", &lib.p_values, &or.p),
    ];
    for (what, a, b) in vecs {
        for (k, (x, w)) in a.iter().zip(b.iter()).enumerate() {
            if !close(*x, *w, rel) {
                bad.push(format!("seed {seed} ols {what}[{k}]: library {x} oracle {w}"));
            }
        }
    }
    for (what, x, w) in [("r2", lib.r_squared, or.r2), ("rss", lib.rss, or.rss)] {
        if !close(x, w, rel) {
            bad.push(format!("seed {seed} ols {what}: library {x} oracle {w}"));
        }
    }

    let sw = stepwise_select(&rows, &y, 0.05, 0.10).unwrap();
    let want = stepwise(&rows, &y, 0.05, 0.10);
    if sw.selected != want {
        bad.push(format!(
            "seed {seed} stepwise: library {:?} oracle {want:?}",
            sw.selected
        ));
    }

    // Welch on the target split by the sign of the first predictor.
    let side = |positive: bool| -> Vec<f64> {
        y.iter()
            .zip(&rows)
            .filter(|(_, r)| (r[0] > 0.0) == positive)
            .map(|(&v, _)| v)
            .collect()
    };
    let (a, b) = (side(true), side(false));
    if a.len() >= 2 && b.len() >= 2 {
        let lib = welch_ttest(&a, &b).unwrap();
        let or = welch(&a, &b);
        for (what, x, w) in [("t", lib.t, or.t), ("dof", lib.dof, or.dof), ("p", lib.p, or.p)] {
            if !close(x, w, rel) {
                bad.push(format!("seed {seed} welch {what}: library {x} oracle {w}"));
            }
        }
    }
    bad
}
