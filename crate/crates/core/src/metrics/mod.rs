//! Full-reference image quality metrics with the normalization and
//! evaluation-mode options used when comparing reconstructions.

mod report;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mriops::RealGrid;

pub use report::{evaluate, EvaluationMode, MetricReport, MetricSummary, PerImage};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const VIF_SIGMA_NSQ: f64 = 2.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    /// Each image mapped to `[0, 1]`.
    Minmax,
    /// Each image to zero mean and unit standard deviation.
    MeanstdBoth,
    /// Only the ground truth, moved to the reconstruction's mean and std.
    #[default]
    MeanstdGt,
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Normalization::None),
            "minmax" => Ok(Normalization::Minmax),
            "meanstd_both" => Ok(Normalization::MeanstdBoth),
            "meanstd_gt" => Ok(Normalization::MeanstdGt),
            _ => Err(Error::invalid(format!(
                "unknown normalization {s:?} (none, minmax, meanstd_both, meanstd_gt)"
            ))),
        }
    }
}

fn check_same(a: &RealGrid, b: &RealGrid) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!("images {:?} and {:?} differ in size", a.dims(), b.dims())));
    }
    Ok(())
}

/// Mean and population standard deviation.
pub(crate) fn moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn standardize(g: &RealGrid, what: &str) -> Result<(RealGrid, f64, f64)> {
    let (mean, std) = moments(g.data());
    if !(std > 0.0) {
        return Err(Error::invalid(format!("{what} is constant; mean-std normalization undefined")));
    }
    Ok((g.map(|v| (v - mean) / std), mean, std))
}

fn minmax(g: &RealGrid, what: &str) -> Result<RealGrid> {
    let (lo, hi) = (g.min(), g.max());
    if !(hi > lo) {
        return Err(Error::invalid(format!("{what} is constant; min-max normalization undefined")));
    }
    Ok(g.map(|v| (v - lo) / (hi - lo)))
}

pub fn normalize(gt: &RealGrid, recon: &RealGrid, mode: Normalization) -> Result<(RealGrid, RealGrid)> {
    check_same(gt, recon)?;
    match mode {
        Normalization::None => Ok((gt.clone(), recon.clone())),
        Normalization::Minmax => Ok((minmax(gt, "ground truth")?, minmax(recon, "reconstruction")?)),
        Normalization::MeanstdBoth => Ok((
            standardize(gt, "ground truth")?.0,
            standardize(recon, "reconstruction")?.0,
        )),
        Normalization::MeanstdGt => {
            let (z, gt_mean, gt_std) = standardize(gt, "ground truth")?;
            let (mean, std) = moments(recon.data());
            if (mean, std) == (gt_mean, gt_std) {
                return Ok((gt.clone(), recon.clone()));
            }
            Ok((z.map(|v| v * std + mean), recon.clone()))
        }
    }
}

/// `10 log10(range^2 / MSE)`; `+inf` when the images are identical.
pub fn psnr(gt: &RealGrid, recon: &RealGrid, data_range: f64) -> Result<f64> {
    check_same(gt, recon)?;
    if !(data_range > 0.0) {
        return Err(Error::invalid(format!("data_range {data_range} must be positive")));
    }
    let mse = mse(gt, recon)?;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (data_range * data_range / mse).log10() })
}

pub fn mse(a: &RealGrid, b: &RealGrid) -> Result<f64> {
    check_same(a, b)?;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.data().len() as f64)
}

/// Normalized 1-D Gaussian taps.
fn gaussian_taps(n: usize, sigma: f64) -> Vec<f64> {
    let c = (n as f64 - 1.0) / 2.0;
    let t: Vec<f64> = (0..n).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = t.iter().sum();
    t.into_iter().map(|v| v / s).collect()
}

/// Separable correlation with a square window, keeping only positions
/// where the window fits entirely.
fn filter_valid(data: &[f64], h: usize, w: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = taps.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = taps.iter().enumerate().map(|(k, t)| t * data[r * w + c + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = taps.iter().enumerate().map(|(k, t)| t * rows[(r + k) * ow + c]).sum();
        }
    }
    (out, oh, ow)
}

struct LocalStats {
    mu1: Vec<f64>,
    mu2: Vec<f64>,
    s11: Vec<f64>,
    s22: Vec<f64>,
    s12: Vec<f64>,
}

fn local_stats(a: &[f64], b: &[f64], h: usize, w: usize, taps: &[f64]) -> LocalStats {
    let prod = |f: &dyn Fn(f64, f64) -> f64| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>();
    let (mu1, _, _) = filter_valid(a, h, w, taps);
    let (mu2, _, _) = filter_valid(b, h, w, taps);
    let (e11, _, _) = filter_valid(&prod(&|x, _| x * x), h, w, taps);
    let (e22, _, _) = filter_valid(&prod(&|_, y| y * y), h, w, taps);
    let (e12, _, _) = filter_valid(&prod(&|x, y| x * y), h, w, taps);
    let s11 = e11.iter().zip(&mu1).map(|(e, m)| e - m * m).collect();
    let s22 = e22.iter().zip(&mu2).map(|(e, m)| e - m * m).collect();
    let s12 = e12.iter().zip(mu1.iter().zip(&mu2)).map(|(e, (m1, m2))| e - m1 * m2).collect();
    LocalStats { mu1, mu2, s11, s22, s12 }
}

/// Mean SSIM and mean contrast-structure term over the valid region.
fn ssim_parts(a: &[f64], b: &[f64], h: usize, w: usize, data_range: f64) -> (f64, f64) {
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let st = local_stats(a, b, h, w, &taps);
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let n = st.mu1.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..st.mu1.len() {
        let (m1, m2) = (st.mu1[i], st.mu2[i]);
        let csi = (2.0 * st.s12[i] + c2) / (st.s11[i] + st.s22[i] + c2);
        let l = (2.0 * m1 * m2 + c1) / (m1 * m1 + m2 * m2 + c1);
        ssim += l * csi;
        cs += csi;
    }
    (ssim / n, cs / n)
}

fn check_window(g: &RealGrid, need: usize, what: &str) -> Result<()> {
    let (h, w) = g.dims();
    if h < need || w < need {
        return Err(Error::invalid(format!("{what} needs images of at least {need}x{need}, got {h}x{w}")));
    }
    Ok(())
}

/// Gaussian-window SSIM (11 x 11, sigma 1.5), averaged over the positions
/// where the window fits.
pub fn ssim(gt: &RealGrid, recon: &RealGrid, data_range: f64) -> Result<f64> {
    check_same(gt, recon)?;
    check_window(gt, SSIM_WINDOW, "SSIM")?;
    if !(data_range > 0.0) {
        return Err(Error::invalid(format!("data_range {data_range} must be positive")));
    }
    let (h, w) = gt.dims();
    Ok(ssim_parts(gt.data(), recon.data(), h, w, data_range).0)
}

fn halve(data: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            let i = 2 * r * w + 2 * c;
            out[r * ow + c] = 0.25 * (data[i] + data[i + 1] + data[i + w] + data[i + w + 1]);
        }
    }
    (out, oh, ow)
}

/// Number of MS-SSIM scales that keep every scale at least 11 pixels wide.
pub fn ms_ssim_scales(height: usize, width: usize) -> usize {
    let mut n = 0;
    let (mut h, mut w) = (height, width);
    while n < MS_SSIM_WEIGHTS.len() && h >= SSIM_WINDOW && w >= SSIM_WINDOW {
        n += 1;
        h /= 2;
        w /= 2;
    }
    n
}

/// Multi-scale SSIM with 2 x 2 average downsampling. Scales that would fall
/// below the window size are dropped and the remaining weights rescaled to
/// sum to one. Contrast terms are clamped at zero.
pub fn ms_ssim(gt: &RealGrid, recon: &RealGrid, data_range: f64) -> Result<f64> {
    check_same(gt, recon)?;
    check_window(gt, SSIM_WINDOW, "MS-SSIM")?;
    if !(data_range > 0.0) {
        return Err(Error::invalid(format!("data_range {data_range} must be positive")));
    }
    let (mut h, mut w) = gt.dims();
    let scales = ms_ssim_scales(h, w);
    let weights = &MS_SSIM_WEIGHTS[..scales];
    let total: f64 = weights.iter().sum();
    let mut a = gt.data().to_vec();
    let mut b = recon.data().to_vec();
    let mut score = 1.0;
    for (j, wj) in weights.iter().enumerate() {
        let (s, cs) = ssim_parts(&a, &b, h, w, data_range);
        let term = if j + 1 == scales { s } else { cs };
        score *= term.max(0.0).powf(wj / total);
        if j + 1 < scales {
            let (na, nh, nw) = halve(&a, h, w);
            b = halve(&b, h, w).0;
            a = na;
            h = nh;
            w = nw;
        }
    }
    Ok(score)
}

/// Pixel-domain visual information fidelity over four scales with Gaussian
/// windows of 17, 9, 5 and 3 taps and noise variance 2. Deliberately
/// asymmetric: `gt` is the reference. Scales that no longer fit their
/// window are skipped, so images down to 32 x 32 are accepted.
pub fn vif(gt: &RealGrid, recon: &RealGrid) -> Result<f64> {
    check_same(gt, recon)?;
    check_window(gt, 32, "VIF")?;
    let (mut h, mut w) = gt.dims();
    let mut a = gt.data().to_vec();
    let mut b = recon.data().to_vec();
    let (mut num, mut den) = (0.0, 0.0);
    for scale in 1..=4u32 {
        let n = (1usize << (5 - scale)) + 1;
        let taps = gaussian_taps(n, n as f64 / 5.0);
        if scale > 1 {
            if h + 2 < 3 * n || w + 2 < 3 * n {
                break;
            }
            let (fa, fh, fw) = filter_valid(&a, h, w, &taps);
            let (fb, _, _) = filter_valid(&b, h, w, &taps);
            let sub = |v: &[f64]| {
                let mut out = Vec::new();
                for r in (0..fh).step_by(2) {
                    for c in (0..fw).step_by(2) {
                        out.push(v[r * fw + c]);
                    }
                }
                out
            };
            a = sub(&fa);
            b = sub(&fb);
            h = fh.div_ceil(2);
            w = fw.div_ceil(2);
        }
        let st = local_stats(&a, &b, h, w, &taps);
        for i in 0..st.mu1.len() {
            let mut s1 = st.s11[i].max(0.0);
            let s2 = st.s22[i].max(0.0);
            let s12 = st.s12[i];
            let mut g = s12 / (s1 + 1e-10);
            let mut sv = s2 - g * s12;
            if s1 < 1e-10 {
                g = 0.0;
                sv = s2;
                s1 = 0.0;
            }
            if s2 < 1e-10 {
                g = 0.0;
                sv = 0.0;
            }
            if g < 0.0 {
                sv = s2;
                g = 0.0;
            }
            if sv <= 1e-10 {
                sv = 1e-10;
            }
            num += (1.0 + g * g * s1 / (sv + VIF_SIGMA_NSQ)).log10();
            den += (1.0 + s1 / VIF_SIGMA_NSQ).log10();
        }
    }
    if !(den > 0.0) {
        return Err(Error::invalid("reference image has no variance; VIF undefined"));
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> RealGrid {
        RealGrid::from_fn(h, w, |r, c| ((r * 7 + c * 3) % 11) as f64 / 10.0)
    }

    #[test]
    fn psnr_examples() {
        let a = RealGrid::zeros(4, 4);
        let b = RealGrid::from_fn(4, 4, |_, _| 1.0);
        assert!((psnr(&a, &b, 1.0).unwrap() - 0.0).abs() < 1e-12);
        let c = RealGrid::from_fn(4, 4, |_, _| 0.1);
        assert!((psnr(&a, &c, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        assert!(psnr(&a, &a, 0.0).is_err());
    }

    #[test]
    fn normalization_modes() {
        let gt = ramp(8, 8);
        let recon = gt.map(|v| 3.0 * v + 2.0);
        let (g2, r2) = normalize(&gt, &recon, Normalization::MeanstdGt).unwrap();
        assert_eq!(r2, recon);
        let (m1, s1) = moments(g2.data());
        let (m2, s2) = moments(recon.data());
        assert!((m1 - m2).abs() < 1e-10 && (s1 - s2).abs() < 1e-10);
        let two = RealGrid::from_fn(2, 2, |r, c| 2.0 + ((r + c) % 2) as f64 * 2.0);
        let (mm, _) = normalize(&two, &two, Normalization::Minmax).unwrap();
        assert_eq!((mm.min(), mm.max()), (0.0, 1.0));
        let flat = RealGrid::zeros(3, 3);
        assert!(normalize(&flat, &flat, Normalization::MeanstdBoth).is_err());
        for mode in [Normalization::None, Normalization::Minmax, Normalization::MeanstdBoth, Normalization::MeanstdGt] {
            let (a, b) = normalize(&gt, &gt, mode).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ssim_of_constants_matches_closed_form() {
        let a = RealGrid::from_fn(16, 16, |_, _| 0.3);
        let b = RealGrid::from_fn(16, 16, |_, _| 0.7);
        let c1 = (SSIM_K1 * 1.0f64).powi(2);
        let want = (2.0 * 0.3 * 0.7 + c1) / (0.09 + 0.49 + c1);
        assert!((ssim(&a, &b, 1.0).unwrap() - want).abs() < 1e-12);
        assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&RealGrid::zeros(8, 8), &RealGrid::zeros(8, 8), 1.0).is_err());
    }

    #[test]
    fn ms_ssim_scale_truncation() {
        assert_eq!(ms_ssim_scales(176, 176), 5);
        assert_eq!(ms_ssim_scales(128, 96), 4);
        assert_eq!(ms_ssim_scales(11, 40), 1);
        let x = ramp(40, 40);
        assert!((ms_ssim(&x, &x, 1.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vif_identity_and_noise() {
        let x = RealGrid::from_fn(64, 64, |r, c| 128.0 + 60.0 * ((r as f64 / 5.0).sin() * (c as f64 / 7.0).cos()));
        assert!((vif(&x, &x).unwrap() - 1.0).abs() < 1e-6);
        let noisy = RealGrid::from_fn(64, 64, |r, c| x.at(r, c) + if (r * 31 + c * 17) % 7 < 3 { 40.0 } else { -30.0 });
        assert!(vif(&x, &noisy).unwrap() < 1.0);
    }
}
