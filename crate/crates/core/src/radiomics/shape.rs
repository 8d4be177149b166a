//! 3D shape descriptors from the voxel representation of a mask.
//!
//! Volume is voxel count times voxel volume (MeshVolume reports the same
//! quantity). Surface area counts exposed voxel faces. Diameters are
//! distances between foreground voxel centres; only surface voxels are
//! visited since extreme pairs always lie on the surface. Axis lengths are
//! `4 * sqrt(eigenvalue)` of the population covariance of voxel centres.

use nalgebra::Matrix3;

use super::ratio;
use crate::error::{Error, Result};
use crate::volume::Mask;

pub const NAMES: [&str; 14] = [
    "Elongation",
    "Flatness",
    "LeastAxisLength",
    "MajorAxisLength",
    "Maximum2DDiameterColumn",
    "Maximum2DDiameterRow",
    "Maximum2DDiameterSlice",
    "Maximum3DDiameter",
    "MeshVolume",
    "MinorAxisLength",
    "Sphericity",
    "SurfaceArea",
    "SurfaceVolumeRatio",
    "VoxelVolume",
];

pub fn shape_features(m: &Mask) -> Result<[f64; 14]> {
    let [nx, ny, nz] = m.dims();
    let sp = m.spacing();
    let face_area = [sp[1] * sp[2], sp[0] * sp[2], sp[0] * sp[1]];
    let inside = |x: i64, y: i64, z: i64| {
        x >= 0
            && y >= 0
            && z >= 0
            && (x as usize) < nx
            && (y as usize) < ny
            && (z as usize) < nz
            && m.get(x as usize, y as usize, z as usize)
    };

    let mut count = 0usize;
    let mut area = 0.0;
    let mut surface: Vec<[i64; 3]> = Vec::new();
    let mut sum = [0.0; 3];
    let mut centres: Vec<[f64; 3]> = Vec::new();
    for z in 0..nz as i64 {
        for y in 0..ny as i64 {
            for x in 0..nx as i64 {
                if !inside(x, y, z) {
                    continue;
                }
                count += 1;
                let mut exposed = false;
                for (axis, fa) in face_area.iter().enumerate() {
                    let mut d = [0i64; 3];
                    for s in [-1, 1] {
                        d[axis] = s;
                        if !inside(x + d[0], y + d[1], z + d[2]) {
                            area += fa;
                            exposed = true;
                        }
                    }
                }
                if exposed {
                    surface.push([x, y, z]);
                }
                let c = [x as f64 * sp[0], y as f64 * sp[1], z as f64 * sp[2]];
                for a in 0..3 {
                    sum[a] += c[a];
                }
                centres.push(c);
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let volume = count as f64 * sp[0] * sp[1] * sp[2];

    let n = count as f64;
    let mean = [sum[0] / n, sum[1] / n, sum[2] / n];
    let mut cov = Matrix3::<f64>::zeros();
    for c in &centres {
        let d = [c[0] - mean[0], c[1] - mean[1], c[2] - mean[2]];
        for r in 0..3 {
            for k in 0..3 {
                cov[(r, k)] += d[r] * d[k];
            }
        }
    }
    cov /= n;
    let mut eig: Vec<f64> = cov.symmetric_eigenvalues().iter().map(|&e| e.max(0.0)).collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let (major, minor, least) = (eig[0], eig[1], eig[2]);

    let diam = max_diameters(&surface, sp);
    let sphericity = ratio((36.0 * std::f64::consts::PI * volume * volume).cbrt(), area);

    Ok([
        ratio(minor, major).sqrt(),
        ratio(least, major).sqrt(),
        4.0 * least.sqrt(),
        4.0 * major.sqrt(),
        diam.column,
        diam.row,
        diam.slice,
        diam.full,
        volume,
        4.0 * minor.sqrt(),
        sphericity,
        area,
        ratio(area, volume),
        volume,
    ])
}

struct Diameters {
    full: f64,
    /// Pairs sharing the z index (axial plane).
    slice: f64,
    /// Pairs sharing the y index.
    column: f64,
    /// Pairs sharing the x index.
    row: f64,
}

fn max_diameters(pts: &[[i64; 3]], sp: [f64; 3]) -> Diameters {
    let mut best = [0.0f64; 4];
    for (k, a) in pts.iter().enumerate() {
        for b in &pts[k + 1..] {
            let d = [
                (a[0] - b[0]) as f64 * sp[0],
                (a[1] - b[1]) as f64 * sp[1],
                (a[2] - b[2]) as f64 * sp[2],
            ];
            let d2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            best[0] = best[0].max(d2);
            if a[2] == b[2] {
                best[1] = best[1].max(d2);
            }
            if a[1] == b[1] {
                best[2] = best[2].max(d2);
            }
            if a[0] == b[0] {
                best[3] = best[3].max(d2);
            }
        }
    }
    Diameters {
        full: best[0].sqrt(),
        slice: best[1].sqrt(),
        column: best[2].sqrt(),
        row: best[3].sqrt(),
    }
}
