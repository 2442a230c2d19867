use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{ms_ssim, normalize, psnr, ssim, vif, Normalization};
use crate::error::{Error, Result};
use crate::mriops::RealGrid;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluationMode {
    /// Dynamic range and normalization per slice.
    #[default]
    Image,
    /// Dynamic range and normalization over the whole volume.
    Volume,
}

impl std::str::FromStr for EvaluationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(EvaluationMode::Image),
            "volume" => Ok(EvaluationMode::Volume),
            _ => Err(Error::invalid(format!("unknown evaluation mode {s:?} (image, volume)"))),
        }
    }
}

/// Scores of one slice.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerImage {
    pub psnr: f64,
    pub ssim: f64,
    pub ms_ssim: f64,
    pub vif: f64,
}

/// Non-finite values are written as the strings `"inf"`, `"-inf"`, `"nan"`.
mod lenient {
    use super::*;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    fn to_repr(v: f64) -> Repr {
        if v.is_finite() {
            Repr::Num(v)
        } else if v.is_nan() {
            Repr::Text("nan".into())
        } else if v > 0.0 {
            Repr::Text("inf".into())
        } else {
            Repr::Text("-inf".into())
        }
    }

    fn from_repr<E: serde::de::Error>(r: Repr) -> std::result::Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Text(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(E::custom(format!("unexpected number text {s:?}"))),
            },
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        to_repr(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
            v.iter().map(|&x| to_repr(x)).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
            Vec::<Repr>::deserialize(d)?.into_iter().map(from_repr).collect()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSummary {
    #[serde(with = "lenient::vec")]
    pub per_image: Vec<f64>,
    #[serde(with = "lenient")]
    pub mean: f64,
    /// Half-width of the normal-approximation 95% interval of the mean.
    #[serde(with = "lenient")]
    pub ci95: f64,
}

impl MetricSummary {
    pub fn new(per_image: Vec<f64>) -> Self {
        let n = per_image.len() as f64;
        let mean = per_image.iter().sum::<f64>() / n;
        let first = per_image[0];
        let ci95 = if per_image.iter().all(|&v| v == first) {
            0.0
        } else if per_image.len() < 2 {
            0.0
        } else {
            let var = per_image.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            1.96 * var.sqrt() / n.sqrt()
        };
        MetricSummary { per_image, mean, ci95 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub psnr: MetricSummary,
    pub ssim: MetricSummary,
    pub ms_ssim: MetricSummary,
    pub vif: MetricSummary,
    pub normalization: Normalization,
    pub evaluation_mode: EvaluationMode,
}

impl MetricReport {
    pub fn per_image(&self, i: usize) -> PerImage {
        PerImage {
            psnr: self.psnr.per_image[i],
            ssim: self.ssim.per_image[i],
            ms_ssim: self.ms_ssim.per_image[i],
            vif: self.vif.per_image[i],
        }
    }
}

fn stack(slices: &[RealGrid]) -> Result<RealGrid> {
    let (h, w) = slices[0].dims();
    let mut data = Vec::with_capacity(h * w * slices.len());
    for s in slices {
        data.extend_from_slice(s.data());
    }
    RealGrid::new(h * slices.len(), w, data)
}

fn unstack(g: &RealGrid, n: usize) -> Result<Vec<RealGrid>> {
    let (h, w) = (g.height() / n, g.width());
    g.data().chunks_exact(h * w).map(|c| RealGrid::new(h, w, c.to_vec())).collect()
}

/// Scores every slice pair. In image mode each slice is normalized and given
/// its own dynamic range (max - min of the normalized ground truth); in
/// volume mode both are computed once over the whole volume. VIF is
/// evaluated on intensities rescaled so the dynamic range spans 255.
pub fn evaluate(
    recon: &[RealGrid],
    gt: &[RealGrid],
    normalization: Normalization,
    mode: EvaluationMode,
) -> Result<MetricReport> {
    if recon.is_empty() || gt.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty volume"));
    }
    if recon.len() != gt.len() {
        return Err(Error::shape(format!(
            "{} reconstructed slices vs {} ground-truth slices",
            recon.len(),
            gt.len()
        )));
    }
    let dims = gt[0].dims();
    if gt.iter().chain(recon).any(|g| g.dims() != dims) {
        return Err(Error::shape("all slices must share one size"));
    }
    let pairs: Vec<(RealGrid, RealGrid, f64)> = match mode {
        EvaluationMode::Image => recon
            .iter()
            .zip(gt)
            .map(|(r, g)| {
                let (g, r) = normalize(g, r, normalization)?;
                let range = g.max() - g.min();
                Ok((g, r, range))
            })
            .collect::<Result<_>>()?,
        EvaluationMode::Volume => {
            let (g, r) = normalize(&stack(gt)?, &stack(recon)?, normalization)?;
            let range = g.max() - g.min();
            unstack(&g, gt.len())?
                .into_iter()
                .zip(unstack(&r, gt.len())?)
                .map(|(g, r)| (g, r, range))
                .collect()
        }
    };
    let mut scores = Vec::with_capacity(pairs.len());
    for (g, r, range) in &pairs {
        if !(*range > 0.0) {
            return Err(Error::invalid("ground truth has zero dynamic range"));
        }
        let k = 255.0 / range;
        scores.push(PerImage {
            psnr: psnr(g, r, *range)?,
            ssim: ssim(g, r, *range)?,
            ms_ssim: ms_ssim(g, r, *range)?,
            vif: vif(&g.map(|v| v * k), &r.map(|v| v * k))?,
        });
    }
    let col = |f: fn(&PerImage) -> f64| MetricSummary::new(scores.iter().map(f).collect());
    Ok(MetricReport {
        psnr: col(|s| s.psnr),
        ssim: col(|s| s.ssim),
        ms_ssim: col(|s| s.ms_ssim),
        vif: col(|s| s.vif),
        normalization,
        evaluation_mode: mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slice(seed: usize, scale: f64) -> RealGrid {
        RealGrid::from_fn(48, 48, |r, c| scale * (((r * 13 + c * 7 + seed * 5) % 17) as f64 / 16.0 + 0.1 * (r as f64 / 4.0).sin()))
    }

    #[test]
    fn single_slice_modes_agree() {
        let g = slice(0, 1.0);
        let r = slice(1, 1.0);
        let a = evaluate(&[r.clone()], &[g.clone()], Normalization::MeanstdGt, EvaluationMode::Image).unwrap();
        let b = evaluate(&[r], &[g], Normalization::MeanstdGt, EvaluationMode::Volume).unwrap();
        assert_eq!(a.psnr.per_image, b.psnr.per_image);
        assert_eq!(a.vif.per_image, b.vif.per_image);
    }

    #[test]
    fn json_layout_and_inf_sentinel() {
        let g = slice(0, 1.0);
        let rep = evaluate(&[g.clone()], &[g], Normalization::None, EvaluationMode::Image).unwrap();
        let v = serde_json::to_value(&rep).unwrap();
        assert_eq!(v["psnr"]["per_image"][0], "inf");
        assert_eq!(v["psnr"]["mean"], "inf");
        assert_eq!(v["ssim"]["mean"], 1.0);
        assert_eq!(v["normalization"], "none");
        assert_eq!(v["evaluation_mode"], "image");
        let back: MetricReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, rep);
    }

    #[test]
    fn ci95_formula() {
        let s = MetricSummary::new(vec![1.0, 2.0, 3.0, 4.0]);
        assert!((s.mean - 2.5).abs() < 1e-12);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((s.ci95 - 1.96 * sd / 2.0).abs() < 1e-12);
    }
}
