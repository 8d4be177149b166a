//! Seeded synthetic multi-center study.
//!
//! Each case is an ellipsoidal pancreas in a textured background. Class
//! signal lives in three places: T1 texture correlation length, T2
//! hyperintense blobs, and pancreas size. Centers differ by an affine
//! intensity distortion, noise level and (optionally) storage orientation.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{write_dl_probabilities, ProbabilityVector};
use crate::par;
use crate::preprocess::gaussian_blur;
use crate::stats::{mask_diagonal_mm, mask_volume_ml};
use crate::table::{write_clinical_csv, write_labels_csv, CaseLabel, ClinicalRecord, N_CLASSES};
use crate::volume::{save_nifti, Geometry, Grid, Mask, Volume};

/// Acquisition differences of one center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterSpec {
    pub name: String,
    pub scale: f64,
    pub shift: f64,
    pub noise_sd: f64,
    /// Store volumes with the x and y axes flipped (LPS).
    pub lps: bool,
}

/// Per-class texture and lesion parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTexture {
    /// Texture correlation length, T1 then T2.
    pub corr_length_mm: [f64; 2],
    /// Inclusive range of the blob count. Blobs share one placement across
    /// contrasts.
    pub blob_count: [usize; 2],
    /// Inclusive range of blob radii.
    pub blob_radius_mm: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub n_cases: [usize; N_CLASSES],
    pub centers: Vec<CenterSpec>,
    pub dims: [usize; 3],
    pub spacing_mm: f64,
    pub classes: [ClassTexture; N_CLASSES],
    /// Uniform jitter (mm) on the per-case correlation length.
    pub corr_jitter_mm: f64,
    /// Blob amplitude in units of the tissue texture amplitude, T1 and T2.
    pub blob_contrast: [f64; 2],
    /// Peak relative deviation of the multiplicative bias field.
    pub bias_field_strength: f64,
    /// Relative growth of the ellipsoid semi-axes per class step.
    pub volume_effect: f64,
    /// Relative standard deviation of each semi-axis between cases.
    pub size_jitter: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        let center = |name: &str, scale, shift, noise_sd, lps| CenterSpec {
            name: name.into(),
            scale,
            shift,
            noise_sd,
            lps,
        };
        PhantomSpec {
            n_cases: [50, 50, 50],
            centers: vec![
                center("A", 1.0, 0.0, 4.0, false),
                center("B", 1.6, 40.0, 6.0, true),
                center("C", 0.7, 15.0, 3.0, false),
            ],
            dims: [64, 64, 64],
            spacing_mm: 1.0,
            classes: [
                ClassTexture {
                    corr_length_mm: [1.0, 1.5],
                    blob_count: [0, 0],
                    blob_radius_mm: [2.0, 3.0],
                },
                ClassTexture {
                    corr_length_mm: [2.0, 1.5],
                    blob_count: [0, 1],
                    blob_radius_mm: [2.0, 3.0],
                },
                ClassTexture {
                    corr_length_mm: [2.0, 1.5],
                    blob_count: [5, 8],
                    blob_radius_mm: [2.5, 3.5],
                },
            ],
            corr_jitter_mm: 0.3,
            blob_contrast: [0.0, 5.0],
            bias_field_strength: 0.25,
            volume_effect: 0.12,
            size_jitter: 0.15,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("phantom spec: {m}")));
        if self.n_cases.contains(&0) {
            return bad("every class needs at least one case");
        }
        if self.centers.is_empty() {
            return bad("no centers");
        }
        if self.centers.iter().any(|c| !(c.scale > 0.0) || c.noise_sd < 0.0) {
            return bad("center scales must be > 0 and noise >= 0");
        }
        if self.dims.iter().any(|&d| d < 16) || !(self.spacing_mm > 0.0) {
            return bad("dims must be >= 16 and spacing > 0");
        }
        for c in &self.classes {
            if c.corr_length_mm.iter().any(|&l| !(l > 0.0))
                || c.blob_count[0] > c.blob_count[1]
                || !(c.blob_radius_mm[0] > 0.0 && c.blob_radius_mm[0] <= c.blob_radius_mm[1])
            {
                return bad("class texture ranges are invalid");
            }
        }
        if !(0.0..0.9).contains(&self.bias_field_strength)
            || self.volume_effect < 0.0
            || !(0.0..0.3).contains(&self.size_jitter)
        {
            return bad("bias strength must be in [0, 0.9), volume effect >= 0 and size jitter in [0, 0.3)");
        }
        Ok(())
    }

    pub fn total_cases(&self) -> usize {
        self.n_cases.iter().sum()
    }

    /// Class label and center index of case `i`: classes are laid out in
    /// order, centers dealt round-robin within a class.
    pub fn case_layout(&self, i: usize) -> (usize, usize) {
        let mut j = i;
        for (label, &n) in self.n_cases.iter().enumerate() {
            if j < n {
                return (label, j % self.centers.len());
            }
            j -= n;
        }
        panic!("case index {i} out of range");
    }

    fn rng(&self, i: usize, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((i as u64) << 8) | stream);
        rng
    }
}

/// One generated case, in RAS orientation.
#[derive(Debug, Clone)]
pub struct PhantomCase {
    pub case_id: String,
    pub center: String,
    pub label: usize,
    pub t1: Volume,
    pub t2: Volume,
    pub mask: Mask,
    pub clinical: ClinicalRecord,
}

pub fn case_id(i: usize) -> String {
    format!("case_{i:04}")
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Unit-variance Gaussian random field: white noise smoothed by a Gaussian
/// of width `corr_mm`.
fn random_field(geom: &Geometry, corr_mm: f64, rng: &mut impl Rng) -> Vec<f64> {
    let noise: Vec<f64> = (0..geom.len()).map(|_| normal(rng)).collect();
    let mut f = gaussian_blur(geom, &noise, corr_mm);
    let n = f.len() as f64;
    let mean = f.iter().sum::<f64>() / n;
    let sd = (f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    f.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    f
}

/// Smooth field `1 + strength * s` with `|s| <= 1`, built from random
/// low-frequency cosines.
fn bias_field(geom: &Geometry, strength: f64, rng: &mut impl Rng) -> Vec<f64> {
    let terms: Vec<([f64; 3], f64)> = (0..4)
        .map(|_| {
            let k = [
                rng.random_range(0.0..1.2),
                rng.random_range(0.0..1.2),
                rng.random_range(0.0..1.2),
            ];
            (k, rng.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    let d = geom.dims;
    (0..geom.len())
        .map(|i| {
            let c = geom.coords(i);
            let u: Vec<f64> = (0..3).map(|a| c[a] as f64 / (d[a] - 1) as f64 * 2.0 - 1.0).collect();
            let s: f64 = terms
                .iter()
                .map(|(k, ph)| (std::f64::consts::PI * (k[0] * u[0] + k[1] * u[1] + k[2] * u[2]) + ph).cos())
                .sum::<f64>()
                / terms.len() as f64;
            1.0 + strength * s
        })
        .collect()
}

struct Ellipsoid {
    center: [f64; 3],
    semi: [f64; 3],
    angle: f64,
}

impl Ellipsoid {
    /// Normalized radius: < 1 inside.
    fn rho(&self, p: [f64; 3]) -> f64 {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        let (s, c) = self.angle.sin_cos();
        let q = [c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]];
        (0..3).map(|a| (q[a] / self.semi[a]).powi(2)).sum::<f64>().sqrt()
    }
}

const BLOB_RETRIES: usize = 200;

/// Generate case `i` of the study in memory.
pub fn generate_case(spec: &PhantomSpec, i: usize) -> Result<PhantomCase> {
    let (label, ci) = spec.case_layout(i);
    let center = &spec.centers[ci];
    let tex = &spec.classes[label];
    let geom = Geometry::new(spec.dims, [spec.spacing_mm; 3]);
    let mut rng = spec.rng(i, 0);

    let mm = |d: usize| d as f64 * spec.spacing_mm;
    let grow = 1.0 + spec.volume_effect * label as f64;
    let base = [
        0.28 * mm(spec.dims[0]),
        0.16 * mm(spec.dims[1]),
        0.13 * mm(spec.dims[2]),
    ];
    let ell = Ellipsoid {
        center: [0, 1, 2].map(|a| 0.5 * mm(spec.dims[a] - 1) + rng.random_range(-2.0..2.0) * spec.spacing_mm),
        semi: [0, 1, 2].map(|a| base[a] * grow * (1.0 + spec.size_jitter * normal(&mut rng)).clamp(0.6, 1.4)),
        angle: rng.random_range(-0.3..0.3),
    };
    let pos = |x: usize, y: usize, z: usize| [mm(x), mm(y), mm(z)];
    let mask = Mask::from_fn(geom.clone(), |x, y, z| ell.rho(pos(x, y, z)) < 1.0)?;
    if mask.count() == 0 {
        return Err(Error::InvalidInput(format!("case {i}: empty pancreas mask")));
    }

    // Blobs are placed fully inside the mask.
    let n_blobs = rng.random_range(tex.blob_count[0]..=tex.blob_count[1]);
    let inside: Vec<usize> = (0..geom.len()).filter(|&j| mask.data()[j]).collect();
    let mut blobs: Vec<([f64; 3], f64)> = Vec::with_capacity(n_blobs);
    for _ in 0..n_blobs {
        let r = rng.random_range(tex.blob_radius_mm[0]..=tex.blob_radius_mm[1]);
        let mut placed = false;
        for _ in 0..BLOB_RETRIES {
            let c = geom.coords(inside[rng.random_range(0..inside.len())]);
            let p = pos(c[0], c[1], c[2]);
            // Sample the ball surface along the axes and diagonals.
            let ok = (0..26).all(|k| {
                let o = [(k % 3) as f64 - 1.0, ((k / 3) % 3) as f64 - 1.0, (k / 9) as f64 - 1.0];
                let n = (o[0] * o[0] + o[1] * o[1] + o[2] * o[2]).sqrt().max(1.0);
                ell.rho([p[0] + r * o[0] / n, p[1] + r * o[1] / n, p[2] + r * o[2] / n]) < 1.0
            });
            if ok {
                blobs.push((p, r));
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InvalidInput(format!(
                "case {i}: could not place a blob of radius {r:.2} mm after {BLOB_RETRIES} tries"
            )));
        }
    }
    let blob_profile: Vec<f64> = (0..geom.len())
        .map(|j| {
            let c = geom.coords(j);
            let p = pos(c[0], c[1], c[2]);
            blobs
                .iter()
                .map(|(b, r)| {
                    let d = ((p[0] - b[0]).powi(2) + (p[1] - b[1]).powi(2) + (p[2] - b[2]).powi(2)).sqrt();
                    1.0 / (1.0 + ((d - r) / 0.5).exp())
                })
                .fold(0.0, f64::max)
        })
        .collect();

    // Tissue levels and texture amplitudes, T1 then T2.
    const TISSUE: [(f64, f64, f64, f64); 2] = [(400.0, 60.0, 250.0, 30.0), (300.0, 50.0, 150.0, 25.0)];
    let mut images = Vec::with_capacity(2);
    for (k, &(level, amp, bg_level, bg_amp)) in TISSUE.iter().enumerate() {
        let mut crng = spec.rng(i, 1 + k as u64);
        let corr = (tex.corr_length_mm[k] + crng.random_range(-1.0..=1.0) * spec.corr_jitter_mm).max(0.3);
        let organ = random_field(&geom, corr, &mut crng);
        let background = random_field(&geom, 2.0, &mut crng);
        let field = bias_field(&geom, spec.bias_field_strength, &mut crng);
        let data: Vec<f64> = (0..geom.len())
            .map(|j| {
                let ideal = if mask.data()[j] {
                    level + amp * (organ[j] + spec.blob_contrast[k] * blob_profile[j])
                } else {
                    bg_level + bg_amp * background[j]
                };
                let v = center.scale * ideal.max(0.0) * field[j] + center.shift + center.noise_sd * normal(&mut crng);
                v.max(0.0)
            })
            .collect();
        images.push(Volume::new(geom.clone(), data)?);
    }
    let t2 = images.pop().expect("two contrasts");
    let t1 = images.pop().expect("two contrasts");

    let mut crng = spec.rng(i, 3);
    let volume_ml = mask_volume_ml(&mask)?;
    let diagonal_mm = mask_diagonal_mm(&mask)?;
    let l = label as f64;
    let clinical = ClinicalRecord {
        case_id: case_id(i),
        diabetes: f64::from(crng.random_bool(0.15 + 0.05 * l)),
        volume_ml,
        diagonal_mm,
        vol_over_diag: volume_ml / diagonal_mm,
        age: (62.0 + 10.0 * normal(&mut crng)).round().clamp(20.0, 95.0),
        gender: f64::from(crng.random_bool(0.5)),
        bmi: ((25.0 + 4.0 * normal(&mut crng)) * 10.0).round() / 10.0,
        chronic_pancreatitis: f64::from(crng.random_bool(0.08 + 0.04 * l)),
        label,
    };
    Ok(PhantomCase {
        case_id: case_id(i),
        center: center.name.clone(),
        label,
        t1,
        t2,
        mask,
        clinical,
    })
}

/// Store a RAS grid with flipped x and y axes; `reorient_ras` undoes it.
pub fn to_lps<T: Copy>(g: &Grid<T>) -> Result<Grid<T>> {
    let [nx, ny, nz] = g.dims();
    let src = g.geometry();
    let geom = Geometry::new(src.dims, src.spacing)
        .with_direction([[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]])
        .with_origin(src.world([(nx - 1) as f64, (ny - 1) as f64, 0.0]));
    let mut data = Vec::with_capacity(g.len());
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                data.push(g.get(nx - 1 - x, ny - 1 - y, z));
            }
        }
    }
    Grid::from_data(geom, data)
}

/// Files of one written study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyManifest {
    pub spec: PhantomSpec,
    pub seed: u64,
    pub cases: Vec<CaseLabel>,
    pub dl_probabilities: Option<String>,
}

pub fn case_dir(root: &Path, case_id: &str) -> PathBuf {
    root.join(case_id)
}

/// Write `root/<case_id>/{t1,t2,mask}.nii.gz`, `clinical.csv`, `labels.csv`
/// and `manifest.json`. With `dl_accuracy`, also write synthetic DL
/// probabilities to `dl_probs.csv`.
pub fn generate_study(spec: &PhantomSpec, root: &Path, dl_accuracy: Option<f64>) -> Result<StudyManifest> {
    spec.validate()?;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let idx: Vec<usize> = (0..spec.total_cases()).collect();
    let written = par::try_map(&idx, |&i| {
        let case = generate_case(spec, i)?;
        let dir = case_dir(root, &case.case_id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let lps = spec.centers[spec.case_layout(i).1].lps;
        if lps {
            save_nifti(&to_lps(&case.t1)?, dir.join("t1.nii.gz"))?;
            save_nifti(&to_lps(&case.t2)?, dir.join("t2.nii.gz"))?;
            save_nifti(&to_lps(&case.mask)?, dir.join("mask.nii.gz"))?;
        } else {
            save_nifti(&case.t1, dir.join("t1.nii.gz"))?;
            save_nifti(&case.t2, dir.join("t2.nii.gz"))?;
            save_nifti(&case.mask, dir.join("mask.nii.gz"))?;
        }
        Ok::<_, Error>((
            CaseLabel {
                case_id: case.case_id,
                center: case.center,
                label: case.label,
            },
            case.clinical,
        ))
    })?;
    let (labels, clinical): (Vec<CaseLabel>, Vec<ClinicalRecord>) = written.into_iter().unzip();
    write_clinical_csv(&root.join("clinical.csv"), &clinical)?;
    write_labels_csv(&root.join("labels.csv"), &labels)?;
    let dl_probabilities = match dl_accuracy {
        Some(acc) => {
            let rows = synthetic_dl_probabilities(&labels, acc, spec.seed)?;
            write_dl_probabilities(&root.join("dl_probs.csv"), &rows)?;
            Some("dl_probs.csv".to_string())
        }
        None => None,
    };
    let manifest = StudyManifest {
        spec: spec.clone(),
        seed: spec.seed,
        cases: labels,
        dl_probabilities,
    };
    let path = root.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Calibrated synthetic deep-learning probabilities. Each case draws a
/// confidence `c` uniformly from an interval centred on `accuracy`, is
/// classified correctly with probability `c`, and puts mass `c` on the
/// predicted class. Errors are independent of any image content.
pub fn synthetic_dl_probabilities(
    labels: &[CaseLabel],
    accuracy: f64,
    seed: u64,
) -> Result<Vec<(String, ProbabilityVector)>> {
    let chance = 1.0 / N_CLASSES as f64;
    if !(accuracy > chance && accuracy <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "DL accuracy {accuracy} outside (1/{N_CLASSES}, 1]"
        )));
    }
    // Half-width keeps c inside (chance, 1], so the predicted class is the
    // strict argmax once the rest is split below c.
    let half = (1.0 - accuracy).min(0.5 * (accuracy - chance));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    labels
        .iter()
        .map(|l| {
            let c: f64 = if half > 0.0 {
                rng.random_range(accuracy - half..=accuracy + half)
            } else {
                accuracy
            };
            let top = if rng.random_bool(c) {
                l.label
            } else {
                (l.label + rng.random_range(1..N_CLASSES)) % N_CLASSES
            };
            let others: Vec<usize> = (0..N_CLASSES).filter(|&k| k != top).collect();
            let rest = 1.0 - c;
            // Split the remainder so neither share reaches c.
            let lo = (rest - c).max(0.0);
            let a = if rest > 0.0 {
                lo + (rest - 2.0 * lo) * rng.random_range(0.05..0.95)
            } else {
                0.0
            };
            let mut p = vec![0.0; N_CLASSES];
            p[top] = c;
            p[others[0]] = a;
            p[others[1]] = (rest - a).max(0.0);
            Ok((l.case_id.clone(), ProbabilityVector::new(p)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PhantomSpec {
        PhantomSpec {
            n_cases: [2, 2, 2],
            dims: [32, 32, 32],
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn layout_is_class_major() {
        let s = small();
        let layout: Vec<(usize, usize)> = (0..6).map(|i| s.case_layout(i)).collect();
        assert_eq!(layout, vec![(0, 0), (0, 1), (1, 0), (1, 1), (2, 0), (2, 1)]);
    }

    #[test]
    fn cases_are_deterministic_and_valid() {
        let s = small();
        let a = generate_case(&s, 4).unwrap();
        let b = generate_case(&s, 4).unwrap();
        assert_eq!(a.t1.data(), b.t1.data());
        assert_eq!(a.t2.data(), b.t2.data());
        assert!(a.mask.count() > 0);
        assert!(a.t1.data().iter().all(|v| *v >= 0.0));
        assert_eq!(a.clinical.vol_over_diag, a.clinical.volume_ml / a.clinical.diagonal_mm);
    }

    #[test]
    fn lps_storage_round_trips() {
        let c = generate_case(&small(), 0).unwrap();
        let back = to_lps(&c.t1).unwrap().reorient_ras().unwrap();
        assert_eq!(back.data(), c.t1.data());
        assert!(back.same_geometry(&c.t1));
    }

    #[test]
    fn dl_probabilities_are_valid() {
        let labels: Vec<CaseLabel> = (0..50)
            .map(|i| CaseLabel {
                case_id: case_id(i),
                center: "A".into(),
                label: i % 3,
            })
            .collect();
        let perfect = synthetic_dl_probabilities(&labels, 1.0, 1).unwrap();
        assert!(perfect.iter().zip(&labels).all(|((_, p), l)| p.argmax() == l.label));
        assert!(synthetic_dl_probabilities(&labels, 1.0 / 3.0, 1).is_err());
        // Top-class mass is the probability of being right, so the mean
        // top mass tracks the realised accuracy.
        let many: Vec<CaseLabel> = (0..6000)
            .map(|i| CaseLabel {
                label: i % 3,
                ..labels[0].clone()
            })
            .collect();
        let p = synthetic_dl_probabilities(&many, 0.75, 3).unwrap();
        let hits = p.iter().zip(&many).filter(|((_, p), l)| p.argmax() == l.label).count() as f64 / 6000.0;
        let conf = p.iter().map(|(_, p)| p.max()).sum::<f64>() / 6000.0;
        assert!((hits - 0.75).abs() < 0.02, "{hits}");
        assert!((conf - 0.75).abs() < 0.01, "{conf}");
        for (_, v) in &p {
            let top = v.max();
            assert_eq!(v.as_slice().iter().filter(|&&x| x == top).count(), 1);
        }
    }

    #[test]
    fn spec_validation() {
        let mut s = small();
        s.n_cases[1] = 0;
        assert!(s.validate().is_err());
        let mut s = small();
        s.classes[2].blob_radius_mm = [30.0, 30.0];
        s.classes[2].blob_count = [1, 1];
        assert!(generate_case(&s, 5).is_err());
    }
}
