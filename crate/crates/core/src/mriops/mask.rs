use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::ComplexGrid;
use crate::error::{Error, Result};

/// Individual k-space entries removed from otherwise sampled columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DroppedSamples {
    height: usize,
    /// Row-major `height x width`; `true` marks a removed entry.
    flags: Vec<bool>,
}

/// A 1-D under-sampling mask: a set of fully sampled k-space columns, the
/// low-frequency center band among them, and optionally individual entries
/// dropped from those columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    width: usize,
    sampled: Vec<usize>,
    center: Range<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dropped: Option<DroppedSamples>,
}

impl Mask {
    pub fn new(width: usize, mut sampled: Vec<usize>, center: Range<usize>) -> Result<Self> {
        sampled.sort_unstable();
        sampled.dedup();
        if let Some(&last) = sampled.last() {
            if last >= width {
                return Err(Error::invalid(format!("sampled column {last} outside width {width}")));
            }
        }
        if center.start > center.end || center.end > width {
            return Err(Error::invalid(format!("center band {center:?} outside width {width}")));
        }
        if center.clone().any(|c| sampled.binary_search(&c).is_err()) {
            return Err(Error::invalid("center band must be sampled"));
        }
        Ok(Mask {
            width,
            sampled,
            center,
            dropped: None,
        })
    }

    pub fn full(width: usize) -> Self {
        Mask {
            width,
            sampled: (0..width).collect(),
            center: 0..width,
            dropped: None,
        }
    }

    pub fn empty(width: usize) -> Self {
        Mask {
            width,
            sampled: Vec::new(),
            center: 0..0,
            dropped: None,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn sampled_columns(&self) -> &[usize] {
        &self.sampled
    }

    pub fn center_band(&self) -> Range<usize> {
        self.center.clone()
    }

    pub fn num_sampled(&self) -> usize {
        self.sampled.len()
    }

    /// `width / sampled columns`; infinite for an empty mask.
    pub fn acceleration(&self) -> f64 {
        self.width as f64 / self.sampled.len() as f64
    }

    pub fn is_column_sampled(&self, col: usize) -> bool {
        self.sampled.binary_search(&col).is_ok()
    }

    /// Whether entry `(row, col)` is part of the measurement.
    pub fn keeps(&self, row: usize, col: usize) -> bool {
        self.is_column_sampled(col)
            && self
                .dropped
                .as_ref()
                .map_or(true, |d| !d.flags[row * self.width + col])
    }

    pub fn has_dropped_samples(&self) -> bool {
        self.dropped.is_some()
    }

    /// Sampled columns outside the center band.
    pub fn outer_columns(&self) -> Vec<usize> {
        self.sampled
            .iter()
            .copied()
            .filter(|c| !self.center.contains(c))
            .collect()
    }

    pub fn column_flags(&self) -> Vec<bool> {
        let mut f = vec![false; self.width];
        for &c in &self.sampled {
            f[c] = true;
        }
        f
    }

    /// Same mask with `cols` no longer sampled.
    pub fn without_columns(&self, cols: &[usize]) -> Result<Mask> {
        if cols.iter().any(|c| self.center.contains(c)) {
            return Err(Error::invalid("cannot remove center-band columns"));
        }
        let sampled = self.sampled.iter().copied().filter(|c| !cols.contains(c)).collect();
        Ok(Mask {
            width: self.width,
            sampled,
            center: self.center.clone(),
            dropped: self.dropped.clone(),
        })
    }

    /// Same mask with individual `(row, col)` entries removed.
    pub fn without_samples(&self, height: usize, entries: &[(usize, usize)]) -> Result<Mask> {
        let mut flags = match &self.dropped {
            Some(d) if d.height == height => d.flags.clone(),
            Some(_) => return Err(Error::shape("dropped-sample height mismatch")),
            None => vec![false; height * self.width],
        };
        for &(r, c) in entries {
            if r >= height || c >= self.width {
                return Err(Error::invalid(format!("entry ({r}, {c}) outside {height}x{}", self.width)));
            }
            flags[r * self.width + c] = true;
        }
        Ok(Mask {
            width: self.width,
            sampled: self.sampled.clone(),
            center: self.center.clone(),
            dropped: Some(DroppedSamples { height, flags }),
        })
    }

    fn check_grid(&self, k: &ComplexGrid) -> Result<()> {
        if k.width() != self.width {
            return Err(Error::shape(format!(
                "mask width {} vs grid width {}",
                self.width,
                k.width()
            )));
        }
        if let Some(d) = &self.dropped {
            if d.height != k.height() {
                return Err(Error::shape("mask dropped-sample height vs grid height"));
            }
        }
        Ok(())
    }

    /// Zeroes every entry the mask does not keep, in place.
    pub fn apply_in_place(&self, k: &mut ComplexGrid) -> Result<()> {
        self.check_grid(k)?;
        let flags = self.column_flags();
        let w = self.width;
        for (i, v) in k.data_mut().iter_mut().enumerate() {
            let (r, c) = (i / w, i % w);
            let kept = flags[c] && self.dropped.as_ref().map_or(true, |d| !d.flags[r * w + c]);
            if !kept {
                *v = num_complex::Complex64::new(0.0, 0.0);
            }
        }
        Ok(())
    }

    /// Positions kept by the mask, row-major.
    pub(crate) fn kept_flags(&self, height: usize) -> Vec<bool> {
        let flags = self.column_flags();
        (0..height * self.width)
            .map(|i| {
                let (r, c) = (i / self.width, i % self.width);
                flags[c] && self.dropped.as_ref().map_or(true, |d| !d.flags[r * self.width + c])
            })
            .collect()
    }
}

/// Keeps the sampled columns of `k` and zeroes the rest.
pub fn apply_mask(k: &ComplexGrid, m: &Mask) -> Result<ComplexGrid> {
    let mut out = k.clone();
    m.apply_in_place(&mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn grid() -> ComplexGrid {
        ComplexGrid::from_fn(3, 5, |r, c| Complex64::new(r as f64 + 1.0, c as f64 - 2.0))
    }

    #[test]
    fn full_and_empty_masks() {
        let k = grid();
        assert_eq!(apply_mask(&k, &Mask::full(5)).unwrap(), k);
        let z = apply_mask(&k, &Mask::empty(5)).unwrap();
        assert!(z.data().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn masking_is_idempotent_and_columnwise() {
        let m = Mask::new(5, vec![4, 1, 2], 1..3).unwrap();
        let once = apply_mask(&grid(), &m).unwrap();
        assert_eq!(apply_mask(&once, &m).unwrap(), once);
        for r in 0..3 {
            for c in 0..5 {
                let kept = [1, 2, 4].contains(&c);
                assert_eq!(once.at(r, c) == grid().at(r, c), kept);
            }
        }
    }

    #[test]
    fn center_must_be_sampled() {
        assert!(Mask::new(5, vec![0, 1], 1..3).is_err());
        assert!(Mask::new(5, vec![0, 7], 0..1).is_err());
    }

    #[test]
    fn width_mismatch_is_rejected() {
        assert!(apply_mask(&grid(), &Mask::full(4)).is_err());
    }

    #[test]
    fn dropped_samples_are_zeroed() {
        let m = Mask::full(5).without_samples(3, &[(1, 2)]).unwrap();
        let out = apply_mask(&grid(), &m).unwrap();
        assert_eq!(out.at(1, 2), Complex64::new(0.0, 0.0));
        assert!(!m.keeps(1, 2));
        assert!(m.keeps(0, 2));
    }
}
