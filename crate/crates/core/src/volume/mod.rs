//! Volumetric images, masks and their geometry.
//!
//! Voxels are stored x-fastest (`index = x + nx * (y + ny * z)`), matching
//! the on-disk NIfTI layout. The direction matrix maps array axes to world
//! (RAS+) axes: column `j` is the unit world direction of array axis `j`.

mod nifti;

pub use nifti::{load_mask, load_nifti, load_volume, save_nifti, NiftiData, NiftiDatatype, NiftiVoxel};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const UNIT_TOL: f64 = 1e-4;

/// Physical layout shared by a volume and its masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dims: [usize; 3],
    /// mm per voxel along each array axis.
    pub spacing: [f64; 3],
    /// `direction[row][col]`; column `col` is the world direction of axis `col`.
    pub direction: [[f64; 3]; 3],
    /// World position (mm) of the center of voxel (0, 0, 0).
    pub origin: [f64; 3],
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Self {
        Geometry {
            dims,
            spacing,
            direction: IDENTITY,
            origin: [0.0; 3],
        }
    }

    pub fn with_direction(mut self, direction: [[f64; 3]; 3]) -> Self {
        self.direction = direction;
        self
    }

    pub fn with_origin(mut self, origin: [f64; 3]) -> Self {
        self.origin = origin;
        self
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// World coordinate of a (possibly fractional) voxel index.
    pub fn world(&self, ijk: [f64; 3]) -> [f64; 3] {
        let mut w = self.origin;
        for (row, wr) in w.iter_mut().enumerate() {
            for (col, &c) in ijk.iter().enumerate() {
                *wr += self.direction[row][col] * self.spacing[col] * c;
            }
        }
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "dimensions must be positive, got {:?}",
                self.dims
            )));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "spacing must be positive, got {:?}",
                self.spacing
            )));
        }
        for col in 0..3 {
            let norm = (0..3).map(|r| self.direction[r][col].powi(2)).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_TOL {
                return Err(Error::InvalidInput(format!(
                    "direction column {col} is not unit norm ({norm})"
                )));
            }
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidInput("non-finite origin".into()));
        }
        Ok(())
    }

    /// For each array axis: the world axis it points along and whether it
    /// points in the negative direction. Fails for oblique directions.
    pub fn axis_permutation(&self) -> Result<[(usize, bool); 3]> {
        let mut out = [(0usize, false); 3];
        let mut seen = [false; 3];
        for (col, slot) in out.iter_mut().enumerate() {
            let (world, value) = (0..3)
                .map(|r| (r, self.direction[r][col]))
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .expect("three rows");
            let off_axis = (0..3)
                .filter(|&r| r != world)
                .map(|r| self.direction[r][col].abs())
                .fold(0.0, f64::max);
            if off_axis > UNIT_TOL || (value.abs() - 1.0).abs() > UNIT_TOL {
                return Err(Error::UnsupportedOrientation(format!(
                    "axis {col} is oblique: {:?}",
                    [self.direction[0][col], self.direction[1][col], self.direction[2][col]]
                )));
            }
            if seen[world] {
                return Err(Error::UnsupportedOrientation(format!(
                    "two array axes map to world axis {world}"
                )));
            }
            seen[world] = true;
            *slot = (world, value < 0.0);
        }
        Ok(out)
    }

    fn same_as(&self, other: &Geometry) -> bool {
        const TOL: f64 = 1e-6;
        self.dims == other.dims
            && close3(&self.spacing, &other.spacing, TOL)
            && close3(&self.origin, &other.origin, TOL)
            && (0..3).all(|r| close3(&self.direction[r], &other.direction[r], TOL))
    }
}

fn close3(a: &[f64; 3], b: &[f64; 3], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

pub const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// A dense voxel grid with geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    geom: Geometry,
    data: Vec<T>,
}

/// Scalar intensity image.
pub type Volume = Grid<f64>;
/// Binary label image.
pub type Mask = Grid<bool>;

impl<T: Copy> Grid<T> {
    pub fn from_data(geom: Geometry, data: Vec<T>) -> Result<Self> {
        geom.validate()?;
        if data.len() != geom.len() {
            return Err(Error::InvalidInput(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                geom.dims
            )));
        }
        Ok(Grid { geom, data })
    }

    pub fn filled(geom: Geometry, value: T) -> Result<Self> {
        let n = geom.len();
        Self::from_data(geom, vec![value; n])
    }

    pub fn from_fn(geom: Geometry, f: impl Fn(usize, usize, usize) -> T) -> Result<Self> {
        let [nx, ny, nz] = geom.dims;
        let mut data = Vec::with_capacity(geom.len());
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::from_data(geom, data)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geom.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.geom.spacing
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.geom.index(x, y, z)]
    }

    /// Same geometry, new voxel values.
    pub fn with_data<U: Copy>(&self, data: Vec<U>) -> Result<Grid<U>> {
        Grid::from_data(self.geom.clone(), data)
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            geom: self.geom.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_geometry<U>(&self, other: &Grid<U>) -> bool {
        self.geom.same_as(&other.geom)
    }

    pub fn ensure_same_geometry<U>(&self, other: &Grid<U>) -> Result<()> {
        if self.same_geometry(other) {
            Ok(())
        } else {
            Err(Error::GeometryMismatch(format!(
                "dims {:?} spacing {:?} vs dims {:?} spacing {:?}",
                self.geom.dims, self.geom.spacing, other.geom.dims, other.geom.spacing
            )))
        }
    }

    /// Permute and flip axes so the result is in RAS+ orientation with an
    /// identity direction matrix. Oblique directions are rejected.
    pub fn reorient_ras(&self) -> Result<Self> {
        let perm = self.geom.axis_permutation()?;
        let src = self.geom.dims;
        let mut dims = [0usize; 3];
        let mut spacing = [0.0; 3];
        let mut corner = [0.0; 3];
        for (axis, &(world, flip)) in perm.iter().enumerate() {
            dims[world] = src[axis];
            spacing[world] = self.geom.spacing[axis];
            if flip {
                corner[axis] = (src[axis] - 1) as f64;
            }
        }
        let origin = self.geom.world(corner);
        let geom = Geometry {
            dims,
            spacing,
            direction: IDENTITY,
            origin,
        };

        // Output voxel `o` reads input voxel `i` with i[axis] = o[world] or
        // its mirror when flipped.
        let mut data = Vec::with_capacity(self.data.len());
        for oz in 0..dims[2] {
            for oy in 0..dims[1] {
                for ox in 0..dims[0] {
                    let o = [ox, oy, oz];
                    let mut i = [0usize; 3];
                    for (axis, &(world, flip)) in perm.iter().enumerate() {
                        i[axis] = if flip { src[axis] - 1 - o[world] } else { o[world] };
                    }
                    data.push(self.data[self.geom.index(i[0], i[1], i[2])]);
                }
            }
        }
        Grid::from_data(geom, data)
    }

    /// Extract the sub-grid `[lo, hi)`; the origin moves with the corner.
    pub fn crop(&self, roi: &RoiBox) -> Result<Self> {
        for a in 0..3 {
            if roi.lo[a] >= roi.hi[a] || roi.hi[a] > self.geom.dims[a] {
                return Err(Error::OutOfBounds(format!(
                    "box {:?}..{:?} for dims {:?}",
                    roi.lo, roi.hi, self.geom.dims
                )));
            }
        }
        let dims = roi.dims();
        let origin = self.geom.world([roi.lo[0] as f64, roi.lo[1] as f64, roi.lo[2] as f64]);
        let geom = Geometry {
            dims,
            spacing: self.geom.spacing,
            direction: self.geom.direction,
            origin,
        };
        let mut data = Vec::with_capacity(geom.len());
        for z in roi.lo[2]..roi.hi[2] {
            for y in roi.lo[1]..roi.hi[1] {
                let row = self.geom.index(roi.lo[0], y, z);
                data.extend_from_slice(&self.data[row..row + dims[0]]);
            }
        }
        Grid::from_data(geom, data)
    }
}

impl Volume {
    /// Validating constructor that additionally rejects NaN/Inf voxels.
    pub fn new(geom: Geometry, data: Vec<f64>) -> Result<Self> {
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite voxel at index {i}")));
        }
        Grid::from_data(geom, data)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Intensities of the voxels selected by `mask`, in storage order.
    pub fn masked_values(&self, mask: &Mask) -> Result<Vec<f64>> {
        self.ensure_same_geometry(mask)?;
        Ok(self
            .data
            .iter()
            .zip(mask.data())
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .collect())
    }

    /// Resample onto an isotropic grid of `target_mm`.
    ///
    /// Output voxel `o` samples the input at continuous index
    /// `o * target_mm / spacing`, clamped to the grid; voxel (0,0,0) keeps its
    /// world position.
    pub fn resample_isotropic(&self, target_mm: f64, mode: Interpolation) -> Result<Volume> {
        let (geom, coords) = resample_plan(&self.geom, target_mm)?;
        let [nx, ny, _] = geom.dims;
        let plane = nx * ny;
        let mut data = vec![0.0; geom.len()];
        crate::par::for_each_chunk_mut(&mut data, plane, |z, slab| {
            let cz = &coords[2][z];
            for y in 0..ny {
                let cy = &coords[1][y];
                for x in 0..nx {
                    let cx = &coords[0][x];
                    slab[x + nx * y] = match mode {
                        Interpolation::Nearest => self.get(cx.nearest(), cy.nearest(), cz.nearest()),
                        Interpolation::Linear => self.trilinear(cx, cy, cz),
                    };
                }
            }
        });
        Volume::new(geom, data)
    }

    fn trilinear(&self, cx: &Sample, cy: &Sample, cz: &Sample) -> f64 {
        let lerp = |a: f64, b: f64, t: f64| if t == 0.0 || a == b { a } else { a + t * (b - a) };
        let row = |y: usize, z: usize| lerp(self.get(cx.lo, y, z), self.get(cx.hi, y, z), cx.frac);
        let plane = |z: usize| lerp(row(cy.lo, z), row(cy.hi, z), cy.frac);
        lerp(plane(cz.lo), plane(cz.hi), cz.frac)
    }
}

impl Mask {
    /// Binarize a volume with `value > 0`.
    pub fn from_volume(v: &Volume) -> Mask {
        v.map(|x| x > 0.0)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Nearest-neighbour isotropic resampling.
    pub fn resample_isotropic(&self, target_mm: f64) -> Result<Mask> {
        let (geom, coords) = resample_plan(&self.geom, target_mm)?;
        let [nx, ny, nz] = geom.dims;
        let mut data = Vec::with_capacity(geom.len());
        for cz in coords[2].iter().take(nz) {
            for cy in coords[1].iter().take(ny) {
                for cx in coords[0].iter().take(nx) {
                    data.push(self.get(cx.nearest(), cy.nearest(), cz.nearest()));
                }
            }
        }
        Grid::from_data(geom, data)
    }

    /// Tightest box around the foreground, dilated by `margin_vox` and
    /// clipped to the grid.
    pub fn bounding_box(&self, margin_vox: usize) -> Result<RoiBox> {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for (idx, _) in self.data.iter().enumerate().filter(|(_, &b)| b) {
            any = true;
            let c = self.geom.coords(idx);
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a] + 1);
            }
        }
        if !any {
            return Err(Error::EmptyMask);
        }
        for a in 0..3 {
            lo[a] = lo[a].saturating_sub(margin_vox);
            hi[a] = (hi[a] + margin_vox).min(self.geom.dims[a]);
        }
        Ok(RoiBox { lo, hi, margin_vox })
    }
}

/// Interpolation kernel for [`Volume::resample_isotropic`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Linear,
    Nearest,
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    lo: usize,
    hi: usize,
    frac: f64,
}

impl Sample {
    fn nearest(&self) -> usize {
        if self.frac < 0.5 {
            self.lo
        } else {
            self.hi
        }
    }
}

fn resample_plan(src: &Geometry, target_mm: f64) -> Result<(Geometry, [Vec<Sample>; 3])> {
    if !(target_mm > 0.0 && target_mm.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "target spacing must be positive, got {target_mm}"
        )));
    }
    let mut dims = [0usize; 3];
    let mut coords: [Vec<Sample>; 3] = Default::default();
    for a in 0..3 {
        let extent = src.dims[a] as f64 * src.spacing[a] / target_mm;
        dims[a] = ((extent - 1e-9).ceil() as usize).max(1);
        let step = target_mm / src.spacing[a];
        let last = (src.dims[a] - 1) as f64;
        coords[a] = (0..dims[a])
            .map(|o| {
                let c = (o as f64 * step).min(last);
                let lo = c.floor() as usize;
                let frac = c - lo as f64;
                let hi = if frac > 0.0 { lo + 1 } else { lo };
                Sample { lo, hi, frac }
            })
            .collect();
    }
    let geom = Geometry {
        dims,
        spacing: [target_mm; 3],
        direction: src.direction,
        origin: src.origin,
    };
    Ok((geom, coords))
}

/// Axis-aligned voxel box `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
    pub margin_vox: usize,
}

impl RoiBox {
    pub fn full(dims: [usize; 3]) -> Self {
        RoiBox {
            lo: [0; 3],
            hi: dims,
            margin_vox: 0,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        [
            self.hi[0] - self.lo[0],
            self.hi[1] - self.lo[1],
            self.hi[2] - self.lo[2],
        ]
    }

    pub fn contains(&self, c: [usize; 3]) -> bool {
        (0..3).all(|a| c[a] >= self.lo[a] && c[a] < self.hi[a])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(dims: [usize; 3], spacing: [f64; 3]) -> Volume {
        Volume::from_fn(Geometry::new(dims, spacing), |x, y, z| (x + 10 * y + 100 * z) as f64).unwrap()
    }

    fn lps(geom: Geometry) -> Geometry {
        geom.with_direction([[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]])
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(Volume::new(Geometry::new([2, 2, 2], [1.0, 0.0, 1.0]), vec![0.0; 8]).is_err());
        assert!(Volume::new(Geometry::new([2, 2, 2], [1.0; 3]), vec![0.0; 7]).is_err());
        let mut d = vec![0.0; 8];
        d[3] = f64::NAN;
        assert!(Volume::new(Geometry::new([2, 2, 2], [1.0; 3]), d).is_err());
    }

    #[test]
    fn ras_is_identity_on_ras() {
        let v = ramp([3, 4, 5], [1.0, 2.0, 3.0]);
        assert_eq!(v.reorient_ras().unwrap(), v);
    }

    #[test]
    fn lps_flips_first_two_axes() {
        let base = ramp([3, 4, 5], [1.0; 3]);
        let v = Volume::new(lps(base.geometry().clone()), base.data().to_vec()).unwrap();
        let r = v.reorient_ras().unwrap();
        for z in 0..5 {
            for y in 0..4 {
                for x in 0..3 {
                    assert_eq!(r.get(x, y, z), v.get(2 - x, 3 - y, z));
                }
            }
        }
        assert_eq!(r.geometry().direction, IDENTITY);
        assert_eq!(r.reorient_ras().unwrap(), r);
        // The world position of every voxel is preserved.
        let w_in = v.geometry().world([2.0, 3.0, 1.0]);
        let w_out = r.geometry().world([0.0, 0.0, 1.0]);
        for a in 0..3 {
            assert!((w_in[a] - w_out[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn permuted_axes_move_dims_and_spacing() {
        // Array axis 0 points superior, axis 1 right, axis 2 anterior.
        let dir = [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]];
        let g = Geometry::new([2, 3, 4], [1.0, 2.0, 3.0]).with_direction(dir);
        let v = Volume::from_fn(g, |x, y, z| (x + 10 * y + 100 * z) as f64).unwrap();
        let r = v.reorient_ras().unwrap();
        assert_eq!(r.dims(), [3, 4, 2]);
        assert_eq!(r.spacing(), [2.0, 3.0, 1.0]);
        assert_eq!(r.get(2, 3, 1), v.get(1, 2, 3));
    }

    #[test]
    fn oblique_is_rejected() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let g = Geometry::new([2, 2, 2], [1.0; 3]).with_direction([[s, -s, 0.0], [s, s, 0.0], [0.0, 0.0, 1.0]]);
        let v = Volume::filled(g, 1.0).unwrap();
        assert!(matches!(v.reorient_ras(), Err(Error::UnsupportedOrientation(_))));
    }

    #[test]
    fn resample_constant_is_exact() {
        let v = Volume::filled(Geometry::new([5, 6, 7], [0.7, 1.3, 2.9]), 5.0).unwrap();
        let r = v.resample_isotropic(1.0, Interpolation::Linear).unwrap();
        assert!(r.data().iter().all(|&x| x == 5.0));
    }

    #[test]
    fn resample_identity() {
        let v = ramp([4, 5, 6], [1.5; 3]);
        let r = v.resample_isotropic(1.5, Interpolation::Linear).unwrap();
        assert_eq!(r.data(), v.data());
        assert_eq!(r.dims(), v.dims());
    }

    #[test]
    fn resample_ramp_halves_increment() {
        let v = Volume::from_fn(Geometry::new([10, 3, 3], [2.0, 1.0, 1.0]), |x, _, _| x as f64 * 3.0).unwrap();
        let r = v.resample_isotropic(1.0, Interpolation::Linear).unwrap();
        assert_eq!(r.dims(), [20, 3, 3]);
        // Analytic ramp: value at physical x mm is 1.5 * x.
        for x in 0..19 {
            let expect = 1.5 * x as f64;
            assert!((r.get(x, 1, 1) - expect).abs() < 1e-6, "x={x}");
        }
    }

    #[test]
    fn bounding_box_cases() {
        let g = Geometry::new([10, 10, 10], [1.0; 3]);
        let m = Mask::from_fn(g.clone(), |x, y, z| (x, y, z) == (3, 3, 3)).unwrap();
        let b = m.bounding_box(0).unwrap();
        assert_eq!((b.lo, b.hi), ([3; 3], [4; 3]));
        let b = m.bounding_box(2).unwrap();
        assert_eq!((b.lo, b.hi), ([1; 3], [6; 3]));
        let corner = Mask::from_fn(g.clone(), |x, y, z| (x, y, z) == (0, 0, 9)).unwrap();
        let b = corner.bounding_box(5).unwrap();
        assert_eq!((b.lo, b.hi), ([0, 0, 4], [6, 6, 10]));
        let empty = Mask::filled(g, false).unwrap();
        assert!(matches!(empty.bounding_box(1), Err(Error::EmptyMask)));
    }

    #[test]
    fn crop_cases() {
        let v = ramp([6, 5, 4], [1.0, 2.0, 3.0]);
        let full = v.crop(&RoiBox::full(v.dims())).unwrap();
        assert_eq!(full, v);
        let b = RoiBox {
            lo: [1, 2, 1],
            hi: [4, 5, 3],
            margin_vox: 0,
        };
        let c = v.crop(&b).unwrap();
        assert_eq!(c.dims(), [3, 3, 2]);
        for z in 0..2 {
            for y in 0..3 {
                for x in 0..3 {
                    assert_eq!(c.get(x, y, z), v.get(x + 1, y + 2, z + 1));
                }
            }
        }
        assert_eq!(c.geometry().origin, [1.0, 4.0, 3.0]);
        assert_eq!(c.crop(&RoiBox::full(c.dims())).unwrap(), c);
        let bad = RoiBox {
            lo: [0; 3],
            hi: [7, 5, 4],
            margin_vox: 0,
        };
        assert!(matches!(v.crop(&bad), Err(Error::OutOfBounds(_))));
    }
}
