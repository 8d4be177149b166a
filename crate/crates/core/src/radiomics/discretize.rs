use crate::error::{Error, Result};
use crate::volume::{Mask, Volume};

/// Default number of gray-level bins per ROI.
pub const DEFAULT_BIN_COUNT: usize = 32;

/// Unique 3D offsets at distance 1 (one per +/- pair), in a fixed order.
pub const OFFSETS_13: [[i64; 3]; 13] = [
    [1, 0, 0],
    [-1, 1, 0],
    [0, 1, 0],
    [1, 1, 0],
    [-1, -1, 1],
    [0, -1, 1],
    [1, -1, 1],
    [-1, 0, 1],
    [0, 0, 1],
    [1, 0, 1],
    [-1, 1, 1],
    [0, 1, 1],
    [1, 1, 1],
];

/// Gray-level image of an ROI.
///
/// Levels are `1..=ng` on foreground voxels and 0 elsewhere. The grid is
/// stored with a one-voxel zero border so neighbour lookups never leave the
/// array.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedRoi {
    dims: [usize; 3],
    spacing: [f64; 3],
    ng: usize,
    padded: Vec<u32>,
    count: usize,
}

impl DiscretizedRoi {
    /// Build directly from levels (0 = background). Levels above `ng` are
    /// rejected.
    pub fn from_levels(dims: [usize; 3], spacing: [f64; 3], ng: usize, levels: &[u32]) -> Result<Self> {
        if levels.len() != dims.iter().product::<usize>() {
            return Err(Error::InvalidInput("level array does not match dims".into()));
        }
        if ng < 1 || levels.iter().any(|&l| l as usize > ng) {
            return Err(Error::InvalidInput(format!("levels must lie in 0..={ng}")));
        }
        let p = [dims[0] + 2, dims[1] + 2, dims[2] + 2];
        let mut padded = vec![0u32; p[0] * p[1] * p[2]];
        let mut count = 0;
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let l = levels[x + dims[0] * (y + dims[1] * z)];
                    count += (l > 0) as usize;
                    padded[(x + 1) + p[0] * ((y + 1) + p[1] * (z + 1))] = l;
                }
            }
        }
        if count == 0 {
            return Err(Error::EmptyMask);
        }
        Ok(DiscretizedRoi {
            dims,
            spacing,
            ng,
            padded,
            count,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    /// Number of gray-level bins.
    pub fn ng(&self) -> usize {
        self.ng
    }

    /// Number of foreground voxels.
    pub fn count(&self) -> usize {
        self.count
    }

    #[inline]
    pub fn level(&self, x: usize, y: usize, z: usize) -> u32 {
        self.padded[self.pidx(x + 1, y + 1, z + 1)]
    }

    /// Unpadded level array in storage order.
    pub fn levels(&self) -> Vec<u32> {
        let [nx, ny, nz] = self.dims;
        let mut out = Vec::with_capacity(nx * ny * nz);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    out.push(self.level(x, y, z));
                }
            }
        }
        out
    }

    pub(crate) fn padded_dims(&self) -> [usize; 3] {
        [self.dims[0] + 2, self.dims[1] + 2, self.dims[2] + 2]
    }

    pub(crate) fn padded(&self) -> &[u32] {
        &self.padded
    }

    #[inline]
    pub(crate) fn pidx(&self, x: usize, y: usize, z: usize) -> usize {
        let p = self.padded_dims();
        x + p[0] * (y + p[1] * z)
    }

    /// Linear stride of an offset in the padded array.
    pub(crate) fn pstride(&self, o: [i64; 3]) -> isize {
        let p = self.padded_dims();
        (o[0] + p[0] as i64 * (o[1] + p[1] as i64 * o[2])) as isize
    }

    /// Padded indices of all foreground voxels in storage order.
    pub(crate) fn foreground(&self) -> Vec<usize> {
        let [nx, ny, nz] = self.dims;
        let mut out = Vec::with_capacity(self.count);
        for z in 1..=nz {
            for y in 1..=ny {
                let row = self.pidx(1, y, z);
                for i in row..row + nx {
                    if self.padded[i] > 0 {
                        out.push(i);
                    }
                }
            }
        }
        out
    }

    /// Padded strides of the 26 neighbours.
    pub(crate) fn neighbour_strides(&self) -> Vec<isize> {
        let mut out = Vec::with_capacity(26);
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if (dx, dy, dz) != (0, 0, 0) {
                        out.push(self.pstride([dx, dy, dz]));
                    }
                }
            }
        }
        out
    }
}

/// Bin a single intensity with fixed bin count over `[min, max]`.
#[inline]
pub fn bin_level(x: f64, min: f64, max: f64, ng: usize) -> u32 {
    if max <= min {
        return 1;
    }
    let width = (max - min) / ng as f64;
    let l = ((x - min) / width).floor() as i64 + 1;
    l.clamp(1, ng as i64) as u32
}

/// Fixed-bin-count discretization of the foreground intensities.
pub fn discretize(v: &Volume, m: &Mask, ng: usize) -> Result<DiscretizedRoi> {
    if ng < 2 {
        return Err(Error::InvalidInput(format!("bin count must be >= 2, got {ng}")));
    }
    v.ensure_same_geometry(m)?;
    let (min, max) = v
        .data()
        .iter()
        .zip(m.data())
        .filter(|(_, &b)| b)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&x, _)| {
            (lo.min(x), hi.max(x))
        });
    if min > max {
        return Err(Error::EmptyMask);
    }
    let levels: Vec<u32> = v
        .data()
        .iter()
        .zip(m.data())
        .map(|(&x, &b)| if b { bin_level(x, min, max, ng) } else { 0 })
        .collect();
    DiscretizedRoi::from_levels(v.dims(), v.spacing(), ng, &levels)
}
