//! Per-layer visualization: how well can each hidden layer's channels,
//! linearly combined, represent a (downsampled) target image?

use nalgebra::{DMatrix, DVector};

use super::DecoderState;
use crate::error::{Error, Result};
use crate::mriops::RealGrid;
use crate::tensor::{Real, Tape};

/// Least-squares fit of one hidden layer's channels to the target.
#[derive(Clone, Debug)]
pub struct ProbeLayer {
    pub layer: usize,
    pub size: (usize, usize),
    pub coefficients: Vec<f64>,
    pub image: RealGrid,
    pub target: RealGrid,
    pub residual_norm: f64,
}

/// Singular values below this fraction of the largest are treated as zero.
const PINV_RCOND: f64 = 1e-12;

/// Area-weighted (box filter) resampling to a smaller grid.
pub fn area_downsample(img: &RealGrid, height: usize, width: usize) -> Result<RealGrid> {
    let (h, w) = img.dims();
    if height == 0 || width == 0 || height > h || width > w {
        return Err(Error::invalid(format!("cannot area-downsample {h}x{w} to {height}x{width}")));
    }
    let weights = |src: usize, dst: usize| -> Vec<Vec<(usize, f64)>> {
        let ratio = src as f64 / dst as f64;
        (0..dst)
            .map(|i| {
                let (lo, hi) = (i as f64 * ratio, (i + 1) as f64 * ratio);
                let mut taps = Vec::new();
                let mut j = lo.floor() as usize;
                while (j as f64) < hi && j < src {
                    let overlap = (hi.min(j as f64 + 1.0) - lo.max(j as f64)).max(0.0);
                    if overlap > 0.0 {
                        taps.push((j, overlap / ratio));
                    }
                    j += 1;
                }
                taps
            })
            .collect()
    };
    let rows = weights(h, height);
    let cols = weights(w, width);
    Ok(RealGrid::from_fn(height, width, |r, c| {
        let mut acc = 0.0;
        for &(sr, wr) in &rows[r] {
            for &(sc, wc) in &cols[c] {
                acc += wr * wc * img.at(sr, sc);
            }
        }
        acc
    }))
}

/// Solves `min_a ‖A a − b‖` through the SVD pseudo-inverse, so rank-deficient
/// systems get the minimum-norm solution.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let eps = (smax * PINV_RCOND).max(f64::MIN_POSITIVE);
    svd.solve(b, eps).map_err(|e| Error::invalid(format!("least squares: {e}")))
}

/// Fits every hidden layer's channels to the target downsampled to that
/// layer's resolution.
pub fn layer_probe<T: Real>(state: &DecoderState<T>, target: &RealGrid) -> Result<Vec<ProbeLayer>> {
    let [h, w] = state.config().output_shape;
    if target.dims() != (h, w) {
        return Err(Error::shape(format!(
            "probe target {:?} vs decoder output {:?}",
            target.dims(),
            (h, w)
        )));
    }
    let mut tape = Tape::new();
    let graph = state.record(&mut tape)?;
    graph
        .hidden
        .iter()
        .enumerate()
        .map(|(j, &var)| {
            let act = tape.value(var);
            let (c, lh, lw) = act.chw()?;
            let t = area_downsample(target, lh, lw)?;
            let a = DMatrix::from_fn(lh * lw, c, |p, ch| act.data()[ch * lh * lw + p].as_f64());
            let b = DVector::from_column_slice(t.data());
            let coef = least_squares(&a, &b)?;
            let fitted = &a * &coef;
            let residual_norm = (&fitted - &b).norm();
            Ok(ProbeLayer {
                layer: j + 1,
                size: (lh, lw),
                coefficients: coef.iter().copied().collect(),
                image: RealGrid::new(lh, lw, fitted.iter().copied().collect())?,
                target: t,
                residual_norm,
            })
        })
        .collect()
}
