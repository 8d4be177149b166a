//! Intensity cleaning: homomorphic bias-field correction, 3D median
//! denoising and Nyul landmark standardization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::percentile::percentiles;
use crate::volume::{Geometry, Mask, Volume};

/// Default Gaussian width (mm) of the log-domain bias-field estimate.
pub const DEFAULT_BIAS_SIGMA_MM: f64 = 30.0;
/// Default median radius in voxels.
pub const DEFAULT_MEDIAN_RADIUS: usize = 1;
/// Default standard scale for Nyul landmarks.
pub const DEFAULT_SCALE: [f64; 2] = [0.0, 100.0];

/// Default landmark ranks: 1, 10, 20, ..., 90, 99.
pub fn default_ranks() -> Vec<f64> {
    let mut r = vec![1.0];
    r.extend((1..=9).map(|i| 10.0 * i as f64));
    r.push(99.0);
    r
}

/// Separable Gaussian blur with per-axis width `sigma_mm / spacing`.
///
/// The kernel is truncated at three standard deviations and renormalized
/// over the in-bounds taps, so a zero field blurs to exactly zero and the
/// boundary does not darken.
pub fn gaussian_blur(geom: &Geometry, data: &[f64], sigma_mm: f64) -> Vec<f64> {
    let mut cur = data.to_vec();
    for axis in 0..3 {
        let sigma = sigma_mm / geom.spacing[axis];
        if sigma <= 0.0 || geom.dims[axis] == 1 {
            continue;
        }
        let radius = ((3.0 * sigma).ceil() as usize).min(geom.dims[axis] - 1);
        let kernel: Vec<f64> = (0..=radius)
            .map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp())
            .collect();
        cur = blur_axis(geom.dims, &cur, axis, &kernel);
    }
    cur
}

fn blur_axis(dims: [usize; 3], src: &[f64], axis: usize, kernel: &[f64]) -> Vec<f64> {
    let [nx, ny, _] = dims;
    let n = dims[axis];
    let stride = [1, nx, nx * ny][axis];
    let radius = kernel.len() - 1;
    // The normalizer only depends on the distance to the two line ends.
    let norms: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius).min(n - 1);
            (lo..=hi).map(|j| kernel[i.abs_diff(j)]).sum()
        })
        .collect();
    let tap = |start: usize, i: usize| {
        let lo = i.saturating_sub(radius);
        let hi = (i + radius).min(n - 1);
        let mut acc = 0.0;
        for j in lo..=hi {
            acc += kernel[i.abs_diff(j)] * src[start + j * stride];
        }
        acc / norms[i]
    };
    let plane = nx * ny;
    let mut out = vec![0.0; src.len()];
    // One z-slab per task. Lines along x and y stay inside a slab; along z
    // each output voxel gathers from the other slabs.
    par::for_each_chunk_mut(&mut out, plane, |z, slab| {
        let base = z * plane;
        for (local, o) in slab.iter_mut().enumerate() {
            let pos = [local % nx, local / nx, z][axis];
            *o = tap(base + local - pos * stride, pos);
        }
    });
    out
}

/// Homomorphic bias-field correction.
///
/// With `L = ln(1 + v)` and `F` the Gaussian blur of `L`, the output is
/// `exp(L - F + mean(F)) - 1`, clipped at zero. It is evaluated as
/// `v * g + (g - 1)` with `g = exp(mean(F) - F)` so that a flat field leaves
/// voxels untouched bit for bit.
pub fn correct_bias(v: &Volume, sigma_mm: f64) -> Result<Volume> {
    if !(sigma_mm > 0.0) {
        return Err(Error::InvalidInput(format!(
            "bias sigma must be positive, got {sigma_mm}"
        )));
    }
    if let Some(&bad) = v.data().iter().find(|&&x| x < 0.0) {
        return Err(Error::InvalidInput(format!(
            "bias correction needs non-negative voxels, found {bad}"
        )));
    }
    let log: Vec<f64> = v.data().iter().map(|&x| x.ln_1p()).collect();
    let reference = log[0];
    let centered: Vec<f64> = log.iter().map(|&l| l - reference).collect();
    let field = gaussian_blur(v.geometry(), &centered, sigma_mm);
    let mean = field.iter().sum::<f64>() / field.len() as f64;
    let data = v
        .data()
        .iter()
        .zip(&field)
        .map(|(&x, &f)| {
            let d = mean - f;
            if d == 0.0 {
                x
            } else {
                (x * d.exp() + d.exp_m1()).max(0.0)
            }
        })
        .collect();
    Volume::new(v.geometry().clone(), data)
}

/// 3D median filter over the `(2r+1)^3` neighbourhood clipped to the grid.
///
/// Where clipping leaves an even count the lower median is taken, so every
/// output value is one of the input values.
pub fn denoise_median(v: &Volume, radius: usize) -> Result<Volume> {
    if radius == 0 {
        return Err(Error::InvalidInput("median radius must be at least 1".into()));
    }
    let [nx, ny, nz] = v.dims();
    let plane = nx * ny;
    let src = v.data();
    let mut out = vec![0.0; src.len()];
    par::for_each_chunk_mut(&mut out, plane, |z, slab| {
        let mut buf = Vec::with_capacity((2 * radius + 1).pow(3));
        let z0 = z.saturating_sub(radius);
        let z1 = (z + radius).min(nz - 1);
        for y in 0..ny {
            let y0 = y.saturating_sub(radius);
            let y1 = (y + radius).min(ny - 1);
            for x in 0..nx {
                let x0 = x.saturating_sub(radius);
                let x1 = (x + radius).min(nx - 1);
                buf.clear();
                for zz in z0..=z1 {
                    for yy in y0..=y1 {
                        let row = nx * (yy + ny * zz);
                        buf.extend_from_slice(&src[row + x0..=row + x1]);
                    }
                }
                let mid = (buf.len() - 1) / 2;
                let (_, m, _) = buf.select_nth_unstable_by(mid, f64::total_cmp);
                slab[x + nx * y] = *m;
            }
        }
    });
    Volume::new(v.geometry().clone(), out)
}

/// Learned Nyul landmark map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NyulModel {
    pub ranks: Vec<f64>,
    pub standard_landmarks: Vec<f64>,
    pub scale_bounds: [f64; 2],
}

fn validate_ranks(ranks: &[f64]) -> Result<()> {
    if ranks.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "need at least 3 landmark ranks, got {}",
            ranks.len()
        )));
    }
    if ranks.iter().any(|&r| !(r > 0.0 && r < 100.0)) {
        return Err(Error::InvalidInput("landmark ranks must lie in (0, 100)".into()));
    }
    if ranks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("landmark ranks must be strictly increasing".into()));
    }
    Ok(())
}

/// Landmark intensities of `v` at `ranks`, restricted to the mask foreground
/// when one is given.
pub fn image_landmarks(v: &Volume, mask: Option<&Mask>, ranks: &[f64]) -> Result<Vec<f64>> {
    let values = match mask {
        Some(m) => {
            let vals = v.masked_values(m)?;
            if vals.is_empty() {
                return Err(Error::EmptyMask);
            }
            vals
        }
        None => v.data().to_vec(),
    };
    let lm = percentiles(&values, ranks);
    let (lo, hi) = (lm[0], lm[lm.len() - 1]);
    if lo == hi {
        return Err(Error::DegenerateImage(format!(
            "landmarks collapse to a single intensity {lo}"
        )));
    }
    Ok(lm)
}

/// Learn the standard landmarks from a training set.
pub fn nyul_train(
    images: &[Volume],
    masks: Option<&[Mask]>,
    ranks: &[f64],
    scale_bounds: [f64; 2],
) -> Result<NyulModel> {
    validate_ranks(ranks)?;
    if images.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "Nyul training needs at least 2 images, got {}",
            images.len()
        )));
    }
    if let Some(m) = masks {
        if m.len() != images.len() {
            return Err(Error::InvalidInput(format!(
                "{} images but {} masks",
                images.len(),
                m.len()
            )));
        }
    }
    if !(scale_bounds[0] < scale_bounds[1]) {
        return Err(Error::InvalidInput("scale bounds must be increasing".into()));
    }
    let idx: Vec<usize> = (0..images.len()).collect();
    let per_image = par::try_map(&idx, |&i| image_landmarks(&images[i], masks.map(|m| &m[i]), ranks))?;
    let [s_min, s_max] = scale_bounds;
    let mut sums = vec![0.0; ranks.len()];
    for lm in &per_image {
        let (lo, hi) = (lm[0], lm[lm.len() - 1]);
        for (s, &p) in sums.iter_mut().zip(lm) {
            *s += s_min + (p - lo) / (hi - lo) * (s_max - s_min);
        }
    }
    let standard: Vec<f64> = sums.iter().map(|s| s / images.len() as f64).collect();
    if standard.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::DegenerateImage(
            "trained standard landmarks are not strictly increasing".into(),
        ));
    }
    Ok(NyulModel {
        ranks: ranks.to_vec(),
        standard_landmarks: standard,
        scale_bounds,
    })
}

impl NyulModel {
    /// Map `v` onto the standard scale with the piecewise-linear landmark
    /// map; intensities outside the end landmarks follow the terminal
    /// segment slopes.
    pub fn apply(&self, v: &Volume, mask: Option<&Mask>) -> Result<Volume> {
        let lm = image_landmarks(v, mask, &self.ranks)?;
        let map = LandmarkMap::new(&lm, &self.standard_landmarks);
        let data = v.data().iter().map(|&x| map.eval(x)).collect();
        Volume::new(v.geometry().clone(), data)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: NyulModel = serde_json::from_str(s)?;
        validate_ranks(&m.ranks)?;
        if m.ranks.len() != m.standard_landmarks.len() || m.standard_landmarks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "standard landmarks must be strictly increasing and match ranks".into(),
            ));
        }
        Ok(m)
    }
}

struct LandmarkMap<'a> {
    src: &'a [f64],
    dst: &'a [f64],
    low_slope: f64,
    high_slope: f64,
}

impl<'a> LandmarkMap<'a> {
    fn new(src: &'a [f64], dst: &'a [f64]) -> Self {
        let slope = |i: usize| (dst[i + 1] - dst[i]) / (src[i + 1] - src[i]);
        let n = src.len();
        let first = (0..n - 1).find(|&i| src[i + 1] > src[i]).unwrap_or(0);
        let last = (0..n - 1).rev().find(|&i| src[i + 1] > src[i]).unwrap_or(0);
        LandmarkMap {
            src,
            dst,
            low_slope: slope(first),
            high_slope: slope(last),
        }
    }

    fn eval(&self, x: f64) -> f64 {
        let n = self.src.len();
        if x <= self.src[0] {
            return self.dst[0] + (x - self.src[0]) * self.low_slope;
        }
        if x >= self.src[n - 1] {
            return self.dst[n - 1] + (x - self.src[n - 1]) * self.high_slope;
        }
        // src[i] <= x < src[i + 1], so the segment has positive width.
        let i = self.src.partition_point(|&l| l <= x) - 1;
        let t = (x - self.src[i]) / (self.src[i + 1] - self.src[i]);
        self.dst[i] + t * (self.dst[i + 1] - self.dst[i])
    }
}
