//! Dense 3D grids and the detached-header volume format.
//!
//! Voxels are stored x-fastest: the linear index of `(x, y, z)` is
//! `x + X * (y + Y * z)`. On disk a volume is a pair of files sharing a stem:
//! `<stem>.vhdr`, a small TOML document
//!
//! ```text
//! dims = [24, 24, 24]
//! spacing = [1.0, 1.0, 1.0]
//! dtype = "f32"
//! order = "x-fastest-le"
//! ```
//!
//! and `<stem>.vraw`, the raw little-endian voxel stream. Masks are written as
//! `u8` with values `{0, 1}`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HEADER_EXT: &str = "vhdr";
pub const RAW_EXT: &str = "vraw";
pub const ORDER: &str = "x-fastest-le";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridShape {
    dims: [usize; 3],
    spacing: [f64; 3],
}

impl GridShape {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidShape(format!("dims must be >= 1, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidShape(format!("spacing must be finite and > 0, got {spacing:?}")));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::InvalidShape(format!("voxel count of {dims:?} overflows")))?;
        Ok(Self { dims, spacing })
    }

    /// Unit spacing.
    pub fn with_dims(dims: [usize; 3]) -> Result<Self> {
        Self::new(dims, [1.0; 3])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Volume of one voxel in mm³.
    pub fn voxel_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let x = i % self.dims[0];
        let r = i / self.dims[0];
        [x, r % self.dims[1], r / self.dims[1]]
    }

    pub fn contains(&self, p: [i64; 3]) -> bool {
        (0..3).all(|a| p[a] >= 0 && (p[a] as usize) < self.dims[a])
    }

    pub(crate) fn ensure_same(&self, other: &GridShape) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::mismatch(self, other))
        }
    }
}

/// Real scalar per voxel, every value finite.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    shape: GridShape,
    data: Vec<f64>,
}

impl Volume {
    pub fn new(shape: GridShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::InvalidValue(format!(
                "volume data has {} values, shape needs {}",
                data.len(),
                shape.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite value {} at voxel {i}", data[i])));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: GridShape, value: f64) -> Self {
        assert!(value.is_finite());
        Self { shape, data: vec![value; shape.len()] }
    }

    pub fn from_fn(shape: GridShape, mut f: impl FnMut([usize; 3]) -> f64) -> Result<Self> {
        let data = (0..shape.len()).map(|i| f(shape.coords(i))).collect();
        Self::new(shape, data)
    }

    /// Crisp probability volume equal to the mask.
    pub fn from_mask(mask: &Mask) -> Self {
        Self {
            shape: mask.shape,
            data: mask.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.shape.index(x, y, z)]
    }

    /// Fails unless every value lies in `[0, 1]`.
    pub fn ensure_probability(&self) -> Result<()> {
        match self.data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            None => Ok(()),
            Some(i) => Err(Error::InvalidValue(format!(
                "probability volume has value {} at voxel {i}",
                self.data[i]
            ))),
        }
    }
}

/// One bit per voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    shape: GridShape,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(shape: GridShape, data: Vec<bool>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::InvalidValue(format!(
                "mask data has {} values, shape needs {}",
                data.len(),
                shape.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn empty(shape: GridShape) -> Self {
        Self { shape, data: vec![false; shape.len()] }
    }

    pub fn from_fn(shape: GridShape, mut f: impl FnMut([usize; 3]) -> bool) -> Self {
        let data = (0..shape.len()).map(|i| f(shape.coords(i))).collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.shape.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = self.shape.index(x, y, z);
        self.data[i] = value;
    }

    /// Number of foreground voxels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }
}

/// Binarizes a probability volume; a bit is set iff the voxel value is `>= t`.
pub fn threshold(v: &Volume, t: f64) -> Result<Mask> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParam(format!("threshold must lie in [0, 1], got {t}")));
    }
    v.ensure_probability()?;
    Ok(Mask { shape: v.shape, data: v.data.iter().map(|&x| x >= t).collect() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    U8,
}

impl Dtype {
    fn as_str(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::U8 => "u8",
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    dims: [usize; 3],
    spacing: [f64; 3],
    dtype: String,
    order: String,
}

/// Resolves `path` (a `.vhdr`, a `.vraw` or a bare stem) into the header/raw pair.
pub fn file_pair(path: &Path) -> (PathBuf, PathBuf) {
    match path.extension().and_then(|e| e.to_str()) {
        Some(HEADER_EXT) | Some(RAW_EXT) => (path.with_extension(HEADER_EXT), path.with_extension(RAW_EXT)),
        _ => {
            let mut h = path.as_os_str().to_owned();
            h.push(".");
            h.push(HEADER_EXT);
            let mut r = path.as_os_str().to_owned();
            r.push(".");
            r.push(RAW_EXT);
            (h.into(), r.into())
        }
    }
}

fn read_raw(path: &Path) -> Result<(GridShape, Dtype, Vec<u8>)> {
    let (hpath, rpath) = file_pair(path);
    let text = fs::read_to_string(&hpath).map_err(|e| Error::io(&hpath, e))?;
    let header: Header = toml::from_str(&text).map_err(|e| Error::format(&hpath, e.to_string()))?;
    if header.order != ORDER {
        return Err(Error::format(&hpath, format!("unsupported order {:?}", header.order)));
    }
    let dtype = match header.dtype.as_str() {
        "f32" => Dtype::F32,
        "u8" => Dtype::U8,
        other => return Err(Error::format(&hpath, format!("unknown dtype {other:?}"))),
    };
    let shape = GridShape::new(header.dims, header.spacing).map_err(|e| Error::format(&hpath, e.to_string()))?;
    let bytes = fs::read(&rpath).map_err(|e| Error::io(&rpath, e))?;
    let want = shape.len() * dtype.size();
    if bytes.len() != want {
        return Err(Error::format(
            &rpath,
            format!("size mismatch: header declares {} voxels ({want} bytes), raw file holds {} bytes", shape.len(), bytes.len()),
        ));
    }
    Ok((shape, dtype, bytes))
}

fn write_pair(path: &Path, shape: &GridShape, dtype: Dtype, bytes: &[u8]) -> Result<()> {
    let (hpath, rpath) = file_pair(path);
    let header = Header {
        dims: shape.dims,
        spacing: shape.spacing,
        dtype: dtype.as_str().to_string(),
        order: ORDER.to_string(),
    };
    let text = toml::to_string(&header).expect("header serializes");
    fs::write(&hpath, text).map_err(|e| Error::io(&hpath, e))?;
    fs::write(&rpath, bytes).map_err(|e| Error::io(&rpath, e))?;
    Ok(())
}

/// Reads a volume. `u8` files load as their integer values.
pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let (shape, dtype, bytes) = read_raw(path)?;
    let data: Vec<f64> = match dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        Dtype::U8 => bytes.iter().map(|&b| b as f64).collect(),
    };
    Volume::new(shape, data).map_err(|e| Error::format(file_pair(path).1, e.to_string()))
}

/// Writes a volume as `f32`. Values are rounded to the nearest `f32`, so a
/// volume produced by [`load_volume`] round-trips bit for bit.
pub fn save_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = Vec::with_capacity(v.data.len() * 4);
    for &x in &v.data {
        let f = x as f32;
        if !f.is_finite() {
            return Err(Error::InvalidValue(format!("value {x} does not fit in f32")));
        }
        bytes.extend_from_slice(&f.to_le_bytes());
    }
    write_pair(path.as_ref(), &v.shape, Dtype::F32, &bytes)
}

/// Reads a mask stored as `u8` or `f32`; every value must be 0 or 1.
pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let v = load_volume(path)?;
    let mut data = Vec::with_capacity(v.data.len());
    for (i, &x) in v.data.iter().enumerate() {
        match x {
            0.0 => data.push(false),
            1.0 => data.push(true),
            _ => return Err(Error::format(file_pair(path).1, format!("mask value {x} at voxel {i} is not 0 or 1"))),
        }
    }
    Ok(Mask { shape: v.shape, data })
}

pub fn save_mask(m: &Mask, path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = m.data.iter().map(|&b| b as u8).collect();
    write_pair(path.as_ref(), &m.shape, Dtype::U8, &bytes)
}
