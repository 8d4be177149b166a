//! Direct-definition radiomics oracle: explicit coordinates with bounds
//! checks, hash-map matrices, union-find zones and a general (non-symmetric)
//! eigen-solver for MCC. Shares nothing with the library beyond the volume
//! types used to build inputs.

use std::collections::BTreeMap;

use ipmn_core::volume::{Geometry, Mask, Volume};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Roi {
    pub dims: [usize; 3],
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
    pub ng: usize,
}

impl Roi {
    pub fn volume(&self) -> (Volume, Mask) {
        let g = Geometry::new(self.dims, [1.0, 1.0, 1.0]);
        (
            Volume::new(g.clone(), self.values.clone()).unwrap(),
            Mask::from_data(g, self.mask.clone()).unwrap(),
        )
    }

    fn idx(&self, p: [i64; 3]) -> Option<usize> {
        let d = self.dims;
        if (0..3).all(|a| p[a] >= 0 && (p[a] as usize) < d[a]) {
            Some(p[0] as usize + d[0] * (p[1] as usize + d[1] * p[2] as usize))
        } else {
            None
        }
    }

    fn points(&self) -> Vec<[i64; 3]> {
        let mut out = Vec::new();
        for z in 0..self.dims[2] {
            for y in 0..self.dims[1] {
                for x in 0..self.dims[0] {
                    let p = [x as i64, y as i64, z as i64];
                    if self.mask[self.idx(p).unwrap()] {
                        out.push(p);
                    }
                }
            }
        }
        out
    }
}

/// Random ROI: dims in 1..=6, a random nonempty mask, values with
/// deliberate ties, bin count in 2..=8. Every fifth ROI is constant.
pub fn random_roi(seed: u64) -> Roi {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = [
        rng.random_range(1..=6),
        rng.random_range(1..=6),
        rng.random_range(1..=6),
    ];
    let n: usize = dims.iter().product();
    let fill = rng.random_range(0.3..1.0);
    let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(fill)).collect();
    if !mask.contains(&true) {
        mask[rng.random_range(0..n)] = true;
    }
    let constant = seed % 5 == 4;
    let values = (0..n)
        .map(|_| {
            if constant {
                7.25
            } else if rng.random_bool(0.3) {
                rng.random_range(0..6) as f64 * 10.0
            } else {
                rng.random_range(-50.0..400.0)
            }
        })
        .collect();
    Roi {
        dims,
        values,
        mask,
        ng: rng.random_range(2..=8),
    }
}

fn log2_term(p: f64) -> f64 {
    if p > 0.0 {
        -p * p.log2()
    } else {
        0.0
    }
}

fn safe_div(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q / 100.0;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Gray level per foreground voxel index.
fn levels(roi: &Roi) -> BTreeMap<usize, usize> {
    let fg: Vec<f64> = roi.points().iter().map(|&p| roi.values[roi.idx(p).unwrap()]).collect();
    let lo = fg.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = fg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = BTreeMap::new();
    for p in roi.points() {
        let i = roi.idx(p).unwrap();
        let l = if hi > lo {
            let w = (hi - lo) / roi.ng as f64;
            (((roi.values[i] - lo) / w).floor() as i64 + 1).clamp(1, roi.ng as i64) as usize
        } else {
            1
        };
        out.insert(i, l);
    }
    out
}

fn first_order(roi: &Roi, lv: &BTreeMap<usize, usize>, out: &mut BTreeMap<String, f64>) {
    let x: Vec<f64> = roi.points().iter().map(|&p| roi.values[roi.idx(p).unwrap()]).collect();
    let n = x.len() as f64;
    let mut s = x.clone();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = x.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    let (p10, p90) = (percentile(&s, 10.0), percentile(&s, 90.0));
    let r: Vec<f64> = x.iter().cloned().filter(|&v| v >= p10 && v <= p90).collect();
    let rmean = r.iter().sum::<f64>() / r.len() as f64;
    let mut hist = BTreeMap::new();
    for &l in lv.values() {
        *hist.entry(l).or_insert(0.0) += 1.0;
    }
    let energy: f64 = x.iter().map(|v| v * v).sum();
    let f = |k: &str, v: f64, out: &mut BTreeMap<String, f64>| {
        out.insert(format!("firstorder_{k}"), v);
    };
    f("10Percentile", p10, out);
    f("90Percentile", p90, out);
    f("Energy", energy, out);
    f("Entropy", hist.values().map(|&c| log2_term(c / n)).sum(), out);
    f("InterquartileRange", percentile(&s, 75.0) - percentile(&s, 25.0), out);
    f("Kurtosis", if var > 0.0 { m4 / (var * var) } else { 0.0 }, out);
    f("Maximum", s[s.len() - 1], out);
    f("Mean", mean, out);
    f(
        "MeanAbsoluteDeviation",
        x.iter().map(|v| (v - mean).abs()).sum::<f64>() / n,
        out,
    );
    f("Median", percentile(&s, 50.0), out);
    f("Minimum", s[0], out);
    f("Range", s[s.len() - 1] - s[0], out);
    // Interpolated P10/P90 can bracket no voxel at all (e.g. two voxels).
    let rmad = if r.is_empty() {
        0.0
    } else {
        r.iter().map(|v| (v - rmean).abs()).sum::<f64>() / r.len() as f64
    };
    f("RobustMeanAbsoluteDeviation", rmad, out);
    f("RootMeanSquared", (energy / n).sqrt(), out);
    f("Skewness", if var > 0.0 { m3 / var.powf(1.5) } else { 0.0 }, out);
    f("StandardDeviation", var.sqrt(), out);
    f("Uniformity", hist.values().map(|&c| (c / n).powi(2)).sum(), out);
    f("Variance", var, out);
}

/// One representative per +/- pair of the 26 unit offsets.
fn directions() -> Vec<[i64; 3]> {
    let mut out = Vec::new();
    for dz in -1..=1i64 {
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                if dz > 0 || (dz == 0 && dy > 0) || (dz == 0 && dy == 0 && dx > 0) {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

fn neighbours26() -> Vec<[i64; 3]> {
    let mut out = Vec::new();
    for dz in -1..=1i64 {
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                if (dx, dy, dz) != (0, 0, 0) {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

fn add(p: [i64; 3], o: [i64; 3], k: i64) -> [i64; 3] {
    [p[0] + k * o[0], p[1] + k * o[1], p[2] + k * o[2]]
}

fn level_at(roi: &Roi, lv: &BTreeMap<usize, usize>, p: [i64; 3]) -> Option<usize> {
    roi.idx(p).and_then(|i| lv.get(&i).copied())
}

const GLCM_NAMES: [&str; 24] = [
    "Autocorrelation",
    "ClusterProminence",
    "ClusterShade",
    "ClusterTendency",
    "Contrast",
    "Correlation",
    "DifferenceAverage",
    "DifferenceEntropy",
    "DifferenceVariance",
    "Id",
    "Idm",
    "Idmn",
    "Idn",
    "Imc1",
    "Imc2",
    "InverseVariance",
    "JointAverage",
    "JointEnergy",
    "JointEntropy",
    "MCC",
    "MaximumProbability",
    "SumAverage",
    "SumEntropy",
    "SumSquares",
];

fn glcm(roi: &Roi, lv: &BTreeMap<usize, usize>, out: &mut BTreeMap<String, f64>) {
    let ng = roi.ng;
    let mut acc: BTreeMap<&str, f64> = BTreeMap::new();
    let mut used = 0.0;
    for o in directions() {
        let mut c: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for p in roi.points() {
            if let (Some(a), Some(b)) = (level_at(roi, lv, p), level_at(roi, lv, add(p, o, 1))) {
                *c.entry((a, b)).or_insert(0.0) += 1.0;
                *c.entry((b, a)).or_insert(0.0) += 1.0;
            }
        }
        let total: f64 = c.values().sum();
        if total == 0.0 {
            continue;
        }
        used += 1.0;
        let p = |i: usize, j: usize| c.get(&(i, j)).copied().unwrap_or(0.0) / total;
        let lvls: Vec<usize> = (1..=ng).collect();
        let px = |i: usize| lvls.iter().map(|&j| p(i, j)).sum::<f64>();
        let py = |j: usize| lvls.iter().map(|&i| p(i, j)).sum::<f64>();
        let mux: f64 = lvls.iter().map(|&i| i as f64 * px(i)).sum();
        let muy: f64 = lvls.iter().map(|&j| j as f64 * py(j)).sum();
        let sx = lvls
            .iter()
            .map(|&i| (i as f64 - mux).powi(2) * px(i))
            .sum::<f64>()
            .sqrt();
        let sy = lvls
            .iter()
            .map(|&j| (j as f64 - muy).powi(2) * py(j))
            .sum::<f64>()
            .sqrt();
        let mut pd = vec![0.0; ng];
        let mut ps = vec![0.0; 2 * ng + 1];
        for &i in &lvls {
            for &j in &lvls {
                pd[i.abs_diff(j)] += p(i, j);
                ps[i + j] += p(i, j);
            }
        }
        let sum_ij = |f: &dyn Fn(f64, f64, f64) -> f64| -> f64 {
            let mut s = 0.0;
            for &i in &lvls {
                for &j in &lvls {
                    s += f(i as f64, j as f64, p(i, j));
                }
            }
            s
        };
        let hx: f64 = lvls.iter().map(|&i| log2_term(px(i))).sum();
        let hy: f64 = lvls.iter().map(|&j| log2_term(py(j))).sum();
        let hxy = sum_ij(&|_, _, v| log2_term(v));
        let mut hxy1 = 0.0;
        let mut hxy2 = 0.0;
        for &i in &lvls {
            for &j in &lvls {
                let q = px(i) * py(j);
                if p(i, j) > 0.0 {
                    hxy1 -= p(i, j) * q.log2();
                }
                hxy2 += log2_term(q);
            }
        }
        let da: f64 = pd.iter().enumerate().map(|(k, v)| k as f64 * v).sum();
        let sa: f64 = ps.iter().enumerate().map(|(k, v)| k as f64 * v).sum();
        let ngf = ng as f64;
        // MCC from the eigenvalues of the non-symmetric Q.
        let present: Vec<usize> = lvls.iter().copied().filter(|&i| px(i) > 0.0).collect();
        let mcc = if present.len() < 2 {
            0.0
        } else {
            let q = DMatrix::from_fn(present.len(), present.len(), |a, b| {
                present
                    .iter()
                    .map(|&k| p(present[a], k) * p(present[b], k) / (px(present[a]) * py(k)))
                    .sum::<f64>()
            });
            let mut ev: Vec<f64> = q.complex_eigenvalues().iter().map(|z| z.re).collect();
            ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
            ev[1].max(0.0).sqrt()
        };
        let e = hxy2 - hxy;
        let feats: [(&str, f64); 24] = [
            ("Autocorrelation", sum_ij(&|i, j, v| i * j * v)),
            ("ClusterProminence", sum_ij(&|i, j, v| (i + j - mux - muy).powi(4) * v)),
            ("ClusterShade", sum_ij(&|i, j, v| (i + j - mux - muy).powi(3) * v)),
            ("ClusterTendency", sum_ij(&|i, j, v| (i + j - mux - muy).powi(2) * v)),
            ("Contrast", sum_ij(&|i, j, v| (i - j).powi(2) * v)),
            (
                "Correlation",
                safe_div(sum_ij(&|i, j, v| i * j * v) - mux * muy, sx * sy),
            ),
            ("DifferenceAverage", da),
            ("DifferenceEntropy", pd.iter().map(|&v| log2_term(v)).sum()),
            (
                "DifferenceVariance",
                pd.iter().enumerate().map(|(k, v)| (k as f64 - da).powi(2) * v).sum(),
            ),
            ("Id", sum_ij(&|i, j, v| v / (1.0 + (i - j).abs()))),
            ("Idm", sum_ij(&|i, j, v| v / (1.0 + (i - j).powi(2)))),
            ("Idmn", sum_ij(&|i, j, v| v / (1.0 + (i - j).powi(2) / (ngf * ngf)))),
            ("Idn", sum_ij(&|i, j, v| v / (1.0 + (i - j).abs() / ngf))),
            ("Imc1", safe_div(hxy - hxy1, hx.max(hy))),
            ("Imc2", if e > 0.0 { (1.0 - (-2.0 * e).exp()).sqrt() } else { 0.0 }),
            (
                "InverseVariance",
                sum_ij(&|i, j, v| if i != j { v / (i - j).powi(2) } else { 0.0 }),
            ),
            ("JointAverage", mux),
            ("JointEnergy", sum_ij(&|_, _, v| v * v)),
            ("JointEntropy", hxy),
            ("MCC", mcc),
            ("MaximumProbability", c.values().cloned().fold(0.0, f64::max) / total),
            ("SumAverage", sa),
            ("SumEntropy", ps.iter().map(|&v| log2_term(v)).sum()),
            ("SumSquares", sum_ij(&|i, _, v| (i - mux).powi(2) * v)),
        ];
        for (k, v) in feats {
            *acc.entry(k).or_insert(0.0) += v;
        }
    }
    if used == 0.0 {
        // No voxel pairs in any direction: every feature is defined as 0.
        for k in GLCM_NAMES {
            out.insert(format!("glcm_{k}"), 0.0);
        }
    }
    for (k, v) in acc {
        out.insert(format!("glcm_{k}"), v / used);
    }
}

/// Sparse (level, size) count matrix shared by GLRLM, GLSZM and GLDM.
struct SizeMatrix {
    m: BTreeMap<(usize, usize), f64>,
}

impl SizeMatrix {
    fn total(&self) -> f64 {
        self.m.values().sum()
    }
    fn mean_of(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        self.m
            .iter()
            .map(|(&(i, j), &c)| c * f(i as f64, j as f64))
            .sum::<f64>()
            / self.total()
    }
    fn gl_nonuniformity(&self) -> f64 {
        let mut g: BTreeMap<usize, f64> = BTreeMap::new();
        for (&(i, _), &c) in &self.m {
            *g.entry(i).or_insert(0.0) += c;
        }
        g.values().map(|v| v * v).sum::<f64>() / self.total()
    }
    fn size_nonuniformity(&self) -> f64 {
        let mut g: BTreeMap<usize, f64> = BTreeMap::new();
        for (&(_, j), &c) in &self.m {
            *g.entry(j).or_insert(0.0) += c;
        }
        g.values().map(|v| v * v).sum::<f64>() / self.total()
    }
    fn variances(&self) -> (f64, f64) {
        let mi = self.mean_of(|i, _| i);
        let mj = self.mean_of(|_, j| j);
        (
            self.mean_of(|i, _| (i - mi).powi(2)),
            self.mean_of(|_, j| (j - mj).powi(2)),
        )
    }
    fn entropy(&self) -> f64 {
        let t = self.total();
        self.m.values().map(|&c| log2_term(c / t)).sum()
    }
}

fn runs(roi: &Roi, lv: &BTreeMap<usize, usize>, o: [i64; 3]) -> SizeMatrix {
    let mut m = BTreeMap::new();
    for p in roi.points() {
        let l = level_at(roi, lv, p).unwrap();
        if level_at(roi, lv, add(p, o, -1)) == Some(l) {
            continue;
        }
        let mut len = 1;
        while level_at(roi, lv, add(p, o, len as i64)) == Some(l) {
            len += 1;
        }
        *m.entry((l, len)).or_insert(0.0) += 1.0;
    }
    SizeMatrix { m }
}

fn glrlm(roi: &Roi, lv: &BTreeMap<usize, usize>, out: &mut BTreeMap<String, f64>) {
    let np = lv.len() as f64;
    let mut acc: BTreeMap<&str, f64> = BTreeMap::new();
    let dirs = directions();
    for &o in &dirs {
        let r = runs(roi, lv, o);
        let nr = r.total();
        let (gv, rv) = r.variances();
        let feats = [
            ("GrayLevelNonUniformity", r.gl_nonuniformity()),
            ("GrayLevelNonUniformityNormalized", r.gl_nonuniformity() / nr),
            ("GrayLevelVariance", gv),
            ("HighGrayLevelRunEmphasis", r.mean_of(|i, _| i * i)),
            ("LongRunEmphasis", r.mean_of(|_, j| j * j)),
            ("LongRunHighGrayLevelEmphasis", r.mean_of(|i, j| i * i * j * j)),
            ("LongRunLowGrayLevelEmphasis", r.mean_of(|i, j| j * j / (i * i))),
            ("LowGrayLevelRunEmphasis", r.mean_of(|i, _| 1.0 / (i * i))),
            ("RunEntropy", r.entropy()),
            ("RunLengthNonUniformity", r.size_nonuniformity()),
            ("RunLengthNonUniformityNormalized", r.size_nonuniformity() / nr),
            ("RunPercentage", nr / np),
            ("RunVariance", rv),
            ("ShortRunEmphasis", r.mean_of(|_, j| 1.0 / (j * j))),
            ("ShortRunHighGrayLevelEmphasis", r.mean_of(|i, j| i * i / (j * j))),
            ("ShortRunLowGrayLevelEmphasis", r.mean_of(|i, j| 1.0 / (i * i * j * j))),
        ];
        for (k, v) in feats {
            *acc.entry(k).or_insert(0.0) += v;
        }
    }
    for (k, v) in acc {
        out.insert(format!("glrlm_{k}"), v / dirs.len() as f64);
    }
}

fn find(parent: &mut [usize], mut a: usize) -> usize {
    while parent[a] != a {
        parent[a] = parent[parent[a]];
        a = parent[a];
    }
    a
}

fn glszm(roi: &Roi, lv: &BTreeMap<usize, usize>, out: &mut BTreeMap<String, f64>) {
    let n: usize = roi.dims.iter().product();
    let mut parent: Vec<usize> = (0..n).collect();
    for p in roi.points() {
        let a = roi.idx(p).unwrap();
        for o in neighbours26() {
            let q = add(p, o, 1);
            if let Some(b) = roi.idx(q) {
                if lv.get(&b) == lv.get(&a) {
                    let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut sizes: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (&i, &l) in lv {
        let r = find(&mut parent, i);
        sizes.entry(r).or_insert((l, 0)).1 += 1;
    }
    let mut m = BTreeMap::new();
    for (l, s) in sizes.values() {
        *m.entry((*l, *s)).or_insert(0.0) += 1.0;
    }
    let z = SizeMatrix { m };
    let nz = z.total();
    let (gv, zv) = z.variances();
    let feats = [
        ("GrayLevelNonUniformity", z.gl_nonuniformity()),
        ("GrayLevelNonUniformityNormalized", z.gl_nonuniformity() / nz),
        ("GrayLevelVariance", gv),
        ("HighGrayLevelZoneEmphasis", z.mean_of(|i, _| i * i)),
        ("LargeAreaEmphasis", z.mean_of(|_, j| j * j)),
        ("LargeAreaHighGrayLevelEmphasis", z.mean_of(|i, j| i * i * j * j)),
        ("LargeAreaLowGrayLevelEmphasis", z.mean_of(|i, j| j * j / (i * i))),
        ("LowGrayLevelZoneEmphasis", z.mean_of(|i, _| 1.0 / (i * i))),
        ("SizeZoneNonUniformity", z.size_nonuniformity()),
        ("SizeZoneNonUniformityNormalized", z.size_nonuniformity() / nz),
        ("SmallAreaEmphasis", z.mean_of(|_, j| 1.0 / (j * j))),
        ("SmallAreaHighGrayLevelEmphasis", z.mean_of(|i, j| i * i / (j * j))),
        ("SmallAreaLowGrayLevelEmphasis", z.mean_of(|i, j| 1.0 / (i * i * j * j))),
        ("ZoneEntropy", z.entropy()),
        ("ZonePercentage", nz / lv.len() as f64),
        ("ZoneVariance", zv),
    ];
    for (k, v) in feats {
        out.insert(format!("glszm_{k}"), v);
    }
}

fn gldm(roi: &Roi, lv: &BTreeMap<usize, usize>, out: &mut BTreeMap<String, f64>) {
    let mut m = BTreeMap::new();
    for p in roi.points() {
        let l = level_at(roi, lv, p).unwrap();
        let dep = neighbours26()
            .into_iter()
            .filter(|&o| level_at(roi, lv, add(p, o, 1)) == Some(l))
            .count();
        *m.entry((l, dep + 1)).or_insert(0.0) += 1.0;
    }
    let d = SizeMatrix { m };
    let nz = d.total();
    let (gv, dv) = d.variances();
    let feats = [
        ("DependenceEntropy", d.entropy()),
        ("DependenceNonUniformity", d.size_nonuniformity()),
        ("DependenceNonUniformityNormalized", d.size_nonuniformity() / nz),
        ("DependenceVariance", dv),
        ("GrayLevelNonUniformity", d.gl_nonuniformity()),
        ("GrayLevelVariance", gv),
        ("HighGrayLevelEmphasis", d.mean_of(|i, _| i * i)),
        ("LargeDependenceEmphasis", d.mean_of(|_, j| j * j)),
        ("LargeDependenceHighGrayLevelEmphasis", d.mean_of(|i, j| i * i * j * j)),
        ("LargeDependenceLowGrayLevelEmphasis", d.mean_of(|i, j| j * j / (i * i))),
        ("LowGrayLevelEmphasis", d.mean_of(|i, _| 1.0 / (i * i))),
        ("SmallDependenceEmphasis", d.mean_of(|_, j| 1.0 / (j * j))),
        (
            "SmallDependenceHighGrayLevelEmphasis",
            d.mean_of(|i, j| i * i / (j * j)),
        ),
        (
            "SmallDependenceLowGrayLevelEmphasis",
            d.mean_of(|i, j| 1.0 / (i * i * j * j)),
        ),
    ];
    for (k, v) in feats {
        out.insert(format!("gldm_{k}"), v);
    }
}

pub const COARSENESS_CAP: f64 = 1e6;

fn ngtdm(roi: &Roi, lv: &BTreeMap<usize, usize>, out: &mut BTreeMap<String, f64>) {
    let mut n: BTreeMap<usize, f64> = BTreeMap::new();
    let mut s: BTreeMap<usize, f64> = BTreeMap::new();
    for p in roi.points() {
        let l = level_at(roi, lv, p).unwrap();
        let nb: Vec<f64> = neighbours26()
            .into_iter()
            .filter_map(|o| level_at(roi, lv, add(p, o, 1)))
            .map(|v| v as f64)
            .collect();
        if nb.is_empty() {
            continue;
        }
        let avg = nb.iter().sum::<f64>() / nb.len() as f64;
        *n.entry(l).or_insert(0.0) += 1.0;
        *s.entry(l).or_insert(0.0) += (l as f64 - avg).abs();
    }
    let nvp: f64 = n.values().sum();
    let f = |k: &str, v: f64, out: &mut BTreeMap<String, f64>| {
        out.insert(format!("ngtdm_{k}"), v);
    };
    if nvp == 0.0 {
        f("Busyness", 0.0, out);
        f("Coarseness", COARSENESS_CAP, out);
        f("Complexity", 0.0, out);
        f("Contrast", 0.0, out);
        f("Strength", 0.0, out);
        return;
    }
    let lv_p: Vec<(f64, f64, f64)> = n.iter().map(|(&l, &c)| (l as f64, c / nvp, s[&l])).collect();
    let ngp = lv_p.len() as f64;
    let sps: f64 = lv_p.iter().map(|&(_, p, s)| p * s).sum();
    let ssum: f64 = lv_p.iter().map(|&(_, _, s)| s).sum();
    type Level = (f64, f64, f64);
    let pair = |g: &dyn Fn(Level, Level) -> f64| -> f64 {
        let mut t = 0.0;
        for &a in &lv_p {
            for &b in &lv_p {
                t += g(a, b);
            }
        }
        t
    };
    let contrast_sum = pair(&|a, b| a.1 * b.1 * (a.0 - b.0).powi(2));
    let busy = pair(&|a, b| (a.0 * a.1 - b.0 * b.1).abs());
    let complexity = pair(&|a, b| (a.0 - b.0).abs() * (a.1 * a.2 + b.1 * b.2) / (a.1 + b.1));
    let strength = pair(&|a, b| (a.1 + b.1) * (a.0 - b.0).powi(2));
    f("Busyness", safe_div(sps, busy), out);
    f(
        "Coarseness",
        if sps > 0.0 {
            (1.0 / sps).min(COARSENESS_CAP)
        } else {
            COARSENESS_CAP
        },
        out,
    );
    f("Complexity", complexity / nvp, out);
    f(
        "Contrast",
        if ngp > 1.0 {
            contrast_sum / (ngp * (ngp - 1.0)) * ssum / nvp
        } else {
            0.0
        },
        out,
    );
    f("Strength", safe_div(strength, ssum), out);
}

/// All 93 first-order and texture features by name.
pub fn oracle_features(roi: &Roi) -> BTreeMap<String, f64> {
    let lv = levels(roi);
    let mut out = BTreeMap::new();
    first_order(roi, &lv, &mut out);
    glcm(roi, &lv, &mut out);
    glrlm(roi, &lv, &mut out);
    glszm(roi, &lv, &mut out);
    gldm(roi, &lv, &mut out);
    ngtdm(roi, &lv, &mut out);
    out
}

/// Relative agreement with a 1e-12 absolute floor for values that are zero
/// in exact arithmetic.
pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + 1e-12
}

/// Compare library and oracle on one ROI; returns mismatch descriptions.
pub fn check_roi(seed: u64, rel: f64) -> Vec<String> {
    let roi = random_roi(seed);
    let (v, m) = roi.volume();
    let fv = ipmn_core::radiomics::extract_feature_vector(&v, &m, roi.ng).expect("extraction");
    let oracle = oracle_features(&roi);
    assert_eq!(oracle.len(), 93, "oracle covers 93 features");
    let mut bad = Vec::new();
    for (name, &want) in &oracle {
        let got = fv.get(name).unwrap_or_else(|| panic!("library lacks {name}"));
        // MCC is a square root of an eigenvalue; compare squares so a
        // near-zero eigenvalue does not amplify solver rounding.
        let ok = if name == "glcm_MCC" {
            close(got * got, want * want, rel)
        } else {
            close(got, want, rel)
        };
        if !ok {
            bad.push(format!("seed {seed} {name}: library {got} oracle {want}"));
        }
    }
    bad
}
