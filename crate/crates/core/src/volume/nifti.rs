//! Minimal NIfTI-1 single-file reader/writer.
//!
//! Supported: little-endian `.nii` / `.nii.gz`, three dimensions, datatypes
//! uint8, int16 and float32, sform (preferred) or qform orientation, and
//! `scl_slope` / `scl_inter` scaling.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{Geometry, Grid, Mask, Volume, IDENTITY};
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

/// On-disk voxel type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NiftiDatatype {
    U8,
    I16,
    F32,
}

impl NiftiDatatype {
    fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(NiftiDatatype::U8),
            4 => Ok(NiftiDatatype::I16),
            16 => Ok(NiftiDatatype::F32),
            other => Err(Error::UnsupportedDatatype(other)),
        }
    }

    fn code(self) -> i16 {
        match self {
            NiftiDatatype::U8 => 2,
            NiftiDatatype::I16 => 4,
            NiftiDatatype::F32 => 16,
        }
    }

    fn bytes(self) -> usize {
        match self {
            NiftiDatatype::U8 => 1,
            NiftiDatatype::I16 => 2,
            NiftiDatatype::F32 => 4,
        }
    }
}

/// Decoded file contents before conversion to a volume or mask.
#[derive(Debug, Clone)]
pub struct NiftiData {
    pub geometry: Geometry,
    pub datatype: NiftiDatatype,
    /// Scaled voxel values.
    pub values: Vec<f64>,
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"))
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    if is_gz(path) {
        MultiGzDecoder::new(BufReader::new(file))
            .read_to_end(&mut buf)
            .map_err(|e| Error::io(path, e))?;
    } else {
        BufReader::new(file)
            .read_to_end(&mut buf)
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(buf)
}

fn i16_at(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn i32_at(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes(b[off..off + 4].try_into().expect("4 bytes"))
}

fn f32_at(b: &[u8], off: usize) -> f64 {
    f32::from_le_bytes(b[off..off + 4].try_into().expect("4 bytes")) as f64
}

/// Parse a NIfTI-1 file into scaled values and geometry.
pub fn load_nifti(path: impl AsRef<Path>) -> Result<NiftiData> {
    let path = path.as_ref();
    let bytes = read_all(path)?;
    parse(&bytes)
}

// Row/column loops mirror the header layout.
#[allow(clippy::needless_range_loop)]
fn parse(b: &[u8]) -> Result<NiftiData> {
    if b.len() < HEADER_SIZE {
        return Err(Error::MalformedHeader(format!(
            "file is {} bytes, shorter than a header",
            b.len()
        )));
    }
    if i32_at(b, 0) != HEADER_SIZE as i32 {
        return Err(Error::MalformedHeader(
            "sizeof_hdr is not 348 (big-endian files are not supported)".into(),
        ));
    }
    if &b[344..348] != b"n+1\0" {
        return Err(Error::MalformedHeader(format!(
            "magic {:?} is not \"n+1\"",
            String::from_utf8_lossy(&b[344..347])
        )));
    }
    let ndim = i16_at(b, 40);
    if ndim != 3 {
        return Err(Error::MalformedHeader(format!("expected 3 dimensions, found {ndim}")));
    }
    let mut dims = [0usize; 3];
    for (a, d) in dims.iter_mut().enumerate() {
        let v = i16_at(b, 42 + 2 * a);
        if v <= 0 {
            return Err(Error::MalformedHeader(format!("dim[{}] = {v}", a + 1)));
        }
        *d = v as usize;
    }
    let datatype = NiftiDatatype::from_code(i16_at(b, 70))?;
    let qfac = if f32_at(b, 76) < 0.0 { -1.0 } else { 1.0 };
    let mut spacing = [0.0; 3];
    for (a, s) in spacing.iter_mut().enumerate() {
        *s = f32_at(b, 80 + 4 * a);
        if !(*s > 0.0 && s.is_finite()) {
            return Err(Error::MalformedHeader(format!(
                "pixdim[{}] = {} is not positive",
                a + 1,
                *s
            )));
        }
    }
    let vox_offset = f32_at(b, 108) as usize;
    let slope = f32_at(b, 112);
    let inter = f32_at(b, 116);
    let qform_code = i16_at(b, 252);
    let sform_code = i16_at(b, 254);

    let (direction, origin) = if sform_code > 0 {
        let mut dir = [[0.0; 3]; 3];
        let mut origin = [0.0; 3];
        for row in 0..3 {
            for col in 0..3 {
                dir[row][col] = f32_at(b, 280 + 16 * row + 4 * col);
            }
            origin[row] = f32_at(b, 280 + 16 * row + 12);
        }
        for col in 0..3 {
            let norm = (0..3).map(|r| dir[r][col].powi(2)).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::MalformedHeader(format!("sform column {col} is zero")));
            }
            for row in dir.iter_mut() {
                row[col] /= norm;
            }
        }
        (snap(dir), origin)
    } else if qform_code > 0 {
        let q = [f32_at(b, 256), f32_at(b, 260), f32_at(b, 264)];
        let origin = [f32_at(b, 268), f32_at(b, 272), f32_at(b, 276)];
        (snap(quaternion_to_rotation(q, qfac)), origin)
    } else {
        (IDENTITY, [0.0; 3])
    };

    let n: usize = dims.iter().product();
    let need = vox_offset + n * datatype.bytes();
    if vox_offset < HEADER_SIZE || b.len() < need {
        return Err(Error::MalformedHeader(format!(
            "voxel data truncated: need {need} bytes, have {}",
            b.len()
        )));
    }
    let raw = &b[vox_offset..need];
    let scale = slope != 0.0 && slope.is_finite();
    let mut values: Vec<f64> = match datatype {
        NiftiDatatype::U8 => raw.iter().map(|&v| v as f64).collect(),
        NiftiDatatype::I16 => raw
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64)
            .collect(),
        NiftiDatatype::F32 => raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
    };
    if scale {
        for v in &mut values {
            *v = slope * *v + inter;
        }
    }
    let geometry = Geometry {
        dims,
        spacing,
        direction,
        origin,
    };
    geometry.validate()?;
    Ok(NiftiData {
        geometry,
        datatype,
        values,
    })
}

/// Round direction entries that are within float32 noise of -1, 0 or 1.
fn snap(mut dir: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    for row in dir.iter_mut() {
        for v in row.iter_mut() {
            let r = v.round();
            if (*v - r).abs() < 1e-5 {
                *v = r;
            }
        }
    }
    dir
}

fn quaternion_to_rotation([b, c, d]: [f64; 3], qfac: f64) -> [[f64; 3]; 3] {
    let a2 = 1.0 - (b * b + c * c + d * d);
    let (a, b, c, d) = if a2 < 1e-7 {
        let s = (b * b + c * c + d * d).sqrt();
        (0.0, b / s, c / s, d / s)
    } else {
        (a2.sqrt(), b, c, d)
    };
    [
        [
            a * a + b * b - c * c - d * d,
            2.0 * (b * c - a * d),
            qfac * 2.0 * (b * d + a * c),
        ],
        [
            2.0 * (b * c + a * d),
            a * a + c * c - b * b - d * d,
            qfac * 2.0 * (c * d - a * b),
        ],
        [
            2.0 * (b * d - a * c),
            2.0 * (c * d + a * b),
            qfac * (a * a + d * d - c * c - b * b),
        ],
    ]
}

/// Returns (b, c, d, qfac) for an orthonormal direction matrix.
fn rotation_to_quaternion(dir: &[[f64; 3]; 3]) -> ([f64; 3], f64) {
    let mut r = *dir;
    let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
    let qfac = if det < 0.0 {
        for row in r.iter_mut() {
            row[2] = -row[2];
        }
        -1.0
    } else {
        1.0
    };
    let trace = r[0][0] + r[1][1] + r[2][2] + 1.0;
    let (mut a, mut b, mut c, mut d);
    if trace > 0.5 {
        a = 0.5 * trace.sqrt();
        b = 0.25 * (r[2][1] - r[1][2]) / a;
        c = 0.25 * (r[0][2] - r[2][0]) / a;
        d = 0.25 * (r[1][0] - r[0][1]) / a;
    } else {
        let xd = 1.0 + r[0][0] - (r[1][1] + r[2][2]);
        let yd = 1.0 + r[1][1] - (r[0][0] + r[2][2]);
        let zd = 1.0 + r[2][2] - (r[0][0] + r[1][1]);
        if xd > 1.0 {
            b = 0.5 * xd.sqrt();
            c = 0.25 * (r[0][1] + r[1][0]) / b;
            d = 0.25 * (r[0][2] + r[2][0]) / b;
            a = 0.25 * (r[2][1] - r[1][2]) / b;
        } else if yd > 1.0 {
            c = 0.5 * yd.sqrt();
            b = 0.25 * (r[0][1] + r[1][0]) / c;
            d = 0.25 * (r[1][2] + r[2][1]) / c;
            a = 0.25 * (r[0][2] - r[2][0]) / c;
        } else {
            d = 0.5 * zd.sqrt();
            b = 0.25 * (r[0][2] + r[2][0]) / d;
            c = 0.25 * (r[1][2] + r[2][1]) / d;
            a = 0.25 * (r[1][0] - r[0][1]) / d;
        }
        if a < 0.0 {
            b = -b;
            c = -c;
            d = -d;
            a = -a;
        }
    }
    let _ = a;
    ([b, c, d], qfac)
}

/// Load a scalar volume. NaN/Inf voxels are rejected.
pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let d = load_nifti(path)?;
    Volume::new(d.geometry, d.values)
}

/// Load a mask, binarizing with `value > 0`.
pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let d = load_nifti(path)?;
    let data = d.values.iter().map(|&v| v > 0.0).collect();
    Grid::from_data(d.geometry, data)
}

/// Element types that can be written to NIfTI.
pub trait NiftiVoxel: Copy {
    const DATATYPE: NiftiDatatype;
    fn write_le(self, out: &mut Vec<u8>);
}

impl NiftiVoxel for f64 {
    const DATATYPE: NiftiDatatype = NiftiDatatype::F32;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self as f32).to_le_bytes());
    }
}

impl NiftiVoxel for bool {
    const DATATYPE: NiftiDatatype = NiftiDatatype::U8;
    fn write_le(self, out: &mut Vec<u8>) {
        out.push(self as u8);
    }
}

fn header(geom: &Geometry, datatype: NiftiDatatype) -> Vec<u8> {
    let mut h = vec![0u8; VOX_OFFSET];
    let put_i16 = |h: &mut Vec<u8>, off: usize, v: i16| h[off..off + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |h: &mut Vec<u8>, off: usize, v: f64| h[off..off + 4].copy_from_slice(&(v as f32).to_le_bytes());
    h[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    put_i16(&mut h, 40, 3);
    for a in 0..3 {
        put_i16(&mut h, 42 + 2 * a, geom.dims[a] as i16);
    }
    for a in 4..8 {
        put_i16(&mut h, 40 + 2 * a, 1);
    }
    put_i16(&mut h, 70, datatype.code());
    put_i16(&mut h, 72, (datatype.bytes() * 8) as i16);
    let (quat, qfac) = rotation_to_quaternion(&geom.direction);
    put_f32(&mut h, 76, qfac);
    for a in 0..3 {
        put_f32(&mut h, 80 + 4 * a, geom.spacing[a]);
    }
    put_f32(&mut h, 108, VOX_OFFSET as f64);
    put_f32(&mut h, 112, 1.0);
    put_f32(&mut h, 116, 0.0);
    // xyzt_units: mm
    h[123] = 2;
    put_i16(&mut h, 252, 1);
    put_i16(&mut h, 254, 1);
    for (i, &q) in quat.iter().enumerate() {
        put_f32(&mut h, 256 + 4 * i, q);
    }
    for (i, &o) in geom.origin.iter().enumerate() {
        put_f32(&mut h, 268 + 4 * i, o);
    }
    for row in 0..3 {
        for col in 0..3 {
            put_f32(
                &mut h,
                280 + 16 * row + 4 * col,
                geom.direction[row][col] * geom.spacing[col],
            );
        }
        put_f32(&mut h, 280 + 16 * row + 12, geom.origin[row]);
    }
    h[344..348].copy_from_slice(b"n+1\0");
    h
}

/// Write a volume (float32) or mask (uint8). `.gz` paths are compressed.
pub fn save_nifti<T: NiftiVoxel>(grid: &Grid<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if grid.dims().iter().any(|&d| d > i16::MAX as usize) {
        return Err(Error::InvalidInput(format!(
            "dims {:?} exceed the NIfTI-1 limit",
            grid.dims()
        )));
    }
    let mut bytes = header(grid.geometry(), T::DATATYPE);
    bytes.reserve(grid.len() * T::DATATYPE.bytes());
    for &v in grid.data() {
        v.write_le(&mut bytes);
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    if is_gz(path) {
        let mut enc = GzEncoder::new(w, Compression::fast());
        enc.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        enc.finish()
            .and_then(|mut w| w.flush())
            .map_err(|e| Error::io(path, e))?;
    } else {
        w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
