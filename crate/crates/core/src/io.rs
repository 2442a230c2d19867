//! Portable array files.
//!
//! Layout (little-endian): magic `UMRI\0`, format version `u16`, dtype `u8`
//! (0 = real `f32`, 1 = complex as `f32` pairs), rank `u8` (at most 4), one
//! `u32` per extent, then the row-major payload.
//!
//! Masks are stored as a real vector over the k-space columns: 0 for an
//! unsampled column, 1 for a sampled outer column and 2 for the center band.

use std::fs;
use std::path::Path;

use num_complex::{Complex32, Complex64};

use crate::error::{Error, Result};
use crate::mriops::{CoilMeasurement, ComplexGrid, Mask, RealGrid, SensitivityMaps};

pub const ARRAY_MAGIC: &[u8; 5] = b"UMRI\0";
pub const ARRAY_VERSION: u16 = 1;
pub const MAX_RANK: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    Real(Vec<f32>),
    Complex(Vec<Complex32>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: ArrayData,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: ArrayData) -> Result<Self> {
        if shape.len() > MAX_RANK {
            return Err(Error::invalid(format!("rank {} exceeds {MAX_RANK}", shape.len())));
        }
        let n: usize = shape.iter().product();
        let len = match &data {
            ArrayData::Real(v) => v.len(),
            ArrayData::Complex(v) => v.len(),
        };
        if n != len {
            return Err(Error::shape(format!("shape {shape:?} holds {n} values, data has {len}")));
        }
        Ok(Array { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &ArrayData {
        &self.data
    }

    pub fn is_complex(&self) -> bool {
        matches!(self.data, ArrayData::Complex(_))
    }

    /// Size of the file this array serializes to.
    pub fn encoded_len(&self) -> usize {
        let per = if self.is_complex() { 8 } else { 4 };
        header_len(self.shape.len()) + per * self.shape.iter().product::<usize>()
    }

    pub fn from_real_grid(g: &RealGrid) -> Self {
        Array {
            shape: vec![g.height(), g.width()],
            data: ArrayData::Real(g.data().iter().map(|&v| v as f32).collect()),
        }
    }

    pub fn from_real_grids(gs: &[RealGrid]) -> Result<Self> {
        let first = gs.first().ok_or_else(|| Error::invalid("no slices"))?;
        if gs.iter().any(|g| g.dims() != first.dims()) {
            return Err(Error::shape("slices differ in size"));
        }
        Ok(Array {
            shape: vec![gs.len(), first.height(), first.width()],
            data: ArrayData::Real(gs.iter().flat_map(|g| g.data().iter().map(|&v| v as f32)).collect()),
        })
    }

    pub fn from_complex_grid(g: &ComplexGrid) -> Self {
        Array {
            shape: vec![g.height(), g.width()],
            data: ArrayData::Complex(g.data().iter().map(|v| Complex32::new(v.re as f32, v.im as f32)).collect()),
        }
    }

    pub fn from_complex_grids(gs: &[ComplexGrid]) -> Result<Self> {
        let first = gs.first().ok_or_else(|| Error::invalid("no planes"))?;
        if gs.iter().any(|g| g.dims() != first.dims()) {
            return Err(Error::shape("planes differ in size"));
        }
        Ok(Array {
            shape: vec![gs.len(), first.height(), first.width()],
            data: ArrayData::Complex(
                gs.iter()
                    .flat_map(|g| g.data().iter().map(|v| Complex32::new(v.re as f32, v.im as f32)))
                    .collect(),
            ),
        })
    }

    /// `(count, height, width)` of a rank-2 or rank-3 array.
    fn planes(&self) -> Result<(usize, usize, usize)> {
        match *self.shape.as_slice() {
            [h, w] => Ok((1, h, w)),
            [n, h, w] => Ok((n, h, w)),
            _ => Err(Error::shape(format!("expected a 2-D or 3-D array, got shape {:?}", self.shape))),
        }
    }

    /// Slices of a real array, or magnitudes of a complex one.
    pub fn to_real_grids(&self) -> Result<Vec<RealGrid>> {
        let (n, h, w) = self.planes()?;
        let values: Vec<f64> = match &self.data {
            ArrayData::Real(v) => v.iter().map(|&x| x as f64).collect(),
            ArrayData::Complex(v) => v.iter().map(|x| (x.re as f64).hypot(x.im as f64)).collect(),
        };
        (0..n).map(|i| RealGrid::new(h, w, values[i * h * w..(i + 1) * h * w].to_vec())).collect()
    }

    /// Complex planes; a real array is read as having zero imaginary part.
    pub fn to_complex_grids(&self) -> Result<Vec<ComplexGrid>> {
        let (n, h, w) = self.planes()?;
        let values: Vec<Complex64> = match &self.data {
            ArrayData::Real(v) => v.iter().map(|&x| Complex64::new(x as f64, 0.0)).collect(),
            ArrayData::Complex(v) => v.iter().map(|x| Complex64::new(x.re as f64, x.im as f64)).collect(),
        };
        (0..n).map(|i| ComplexGrid::new(h, w, values[i * h * w..(i + 1) * h * w].to_vec())).collect()
    }
}

fn header_len(rank: usize) -> usize {
    ARRAY_MAGIC.len() + 2 + 1 + 1 + 4 * rank
}

pub fn encode_array(a: &Array) -> Vec<u8> {
    let mut buf = Vec::with_capacity(a.encoded_len());
    buf.extend_from_slice(ARRAY_MAGIC);
    buf.extend_from_slice(&ARRAY_VERSION.to_le_bytes());
    buf.push(u8::from(a.is_complex()));
    buf.push(a.shape.len() as u8);
    for &e in &a.shape {
        buf.extend_from_slice(&(e as u32).to_le_bytes());
    }
    match &a.data {
        ArrayData::Real(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        ArrayData::Complex(v) => v.iter().for_each(|x| {
            buf.extend_from_slice(&x.re.to_le_bytes());
            buf.extend_from_slice(&x.im.to_le_bytes());
        }),
    }
    buf
}

pub fn decode_array(path: &Path, bytes: &[u8]) -> Result<Array> {
    let bad = |m: String| Error::format(path, m);
    if bytes.len() < header_len(0) || &bytes[..ARRAY_MAGIC.len()] != ARRAY_MAGIC {
        return Err(bad("not a UMRI array file (bad magic)".into()));
    }
    let mut pos = ARRAY_MAGIC.len();
    let version = u16::from_le_bytes([bytes[pos], bytes[pos + 1]]);
    if version != ARRAY_VERSION {
        return Err(bad(format!("unsupported array format version {version}")));
    }
    pos += 2;
    let dtype = bytes[pos];
    let rank = bytes[pos + 1] as usize;
    pos += 2;
    if dtype > 1 {
        return Err(bad(format!("unknown dtype code {dtype}")));
    }
    if rank > MAX_RANK {
        return Err(bad(format!("rank {rank} exceeds {MAX_RANK}")));
    }
    if bytes.len() < header_len(rank) {
        return Err(bad("truncated header".into()));
    }
    let shape: Vec<usize> = (0..rank)
        .map(|i| u32::from_le_bytes(bytes[pos + 4 * i..pos + 4 * i + 4].try_into().expect("4 bytes")) as usize)
        .collect();
    pos += 4 * rank;
    let per = if dtype == 1 { 8usize } else { 4 };
    let payload = shape
        .iter()
        .try_fold(per, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| bad(format!("extents {shape:?} overflow")))?;
    let rest = bytes.len() - pos;
    if rest < payload {
        return Err(bad(format!("truncated payload: {rest} bytes for {payload} expected")));
    }
    if rest > payload {
        return Err(bad(format!("{} trailing bytes after payload", rest - payload)));
    }
    let floats: Vec<f32> = bytes[pos..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let data = if dtype == 1 {
        ArrayData::Complex(floats.chunks_exact(2).map(|p| Complex32::new(p[0], p[1])).collect())
    } else {
        ArrayData::Real(floats)
    };
    Array::new(shape, data)
}

pub fn write_array(path: &Path, a: &Array) -> Result<()> {
    fs::write(path, encode_array(a)).map_err(|e| Error::io(path, e))
}

pub fn read_array(path: &Path) -> Result<Array> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_array(path, &bytes)
}

pub fn mask_to_array(m: &Mask) -> Result<Array> {
    if m.has_dropped_samples() {
        return Err(Error::invalid("masks with dropped samples cannot be stored as column masks"));
    }
    let band = m.center_band();
    let values = (0..m.width())
        .map(|c| {
            if band.contains(&c) {
                2.0
            } else if m.is_column_sampled(c) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Array::new(vec![m.width()], ArrayData::Real(values))
}

pub fn mask_from_array(a: &Array) -> Result<Mask> {
    let values = match (&a.data, a.shape.as_slice()) {
        (ArrayData::Real(v), [_]) => v,
        _ => return Err(Error::shape(format!("a mask is a real vector, got shape {:?}", a.shape))),
    };
    let mut sampled = Vec::new();
    let mut center = Vec::new();
    for (c, &v) in values.iter().enumerate() {
        match v {
            0.0 => {}
            1.0 => sampled.push(c),
            2.0 => {
                sampled.push(c);
                center.push(c);
            }
            _ => return Err(Error::invalid(format!("mask entry {v} at column {c} is not 0, 1 or 2"))),
        }
    }
    let band = match (center.first(), center.last()) {
        (Some(&a), Some(&b)) if b + 1 - a == center.len() => a..b + 1,
        (None, None) => 0..0,
        _ => return Err(Error::invalid("center band columns are not contiguous")),
    };
    Mask::new(values.len(), sampled, band)
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    mask_from_array(&read_array(path)?)
}

/// Maps are renormalized after reading to absorb 32-bit rounding; the
/// support is where any map is non-zero.
pub fn read_maps(path: &Path) -> Result<SensitivityMaps> {
    let maps = read_array(path)?.to_complex_grids()?;
    let (h, w) = maps[0].dims();
    let support = (0..h * w)
        .map(|i| maps.iter().any(|m| m.data()[i] != Complex64::new(0.0, 0.0)))
        .collect();
    SensitivityMaps::normalized(maps, support)
}

pub fn read_measurement(path: &Path, mask: Mask) -> Result<CoilMeasurement> {
    let coils = read_array(path)?.to_complex_grids()?;
    CoilMeasurement::new(coils, mask).map_err(|e| Error::format(path, e.to_string()))
}
