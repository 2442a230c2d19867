use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use umri::metrics::{evaluate, ms_ssim, normalize, psnr, ssim, vif, EvaluationMode, Normalization};
use umri::mriops::RealGrid;

fn noise_image(seed: u64, h: usize, w: usize) -> RealGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RealGrid::from_fn(h, w, |_, _| rng.gen::<f64>())
}

fn smooth_image(seed: u64, h: usize, w: usize) -> RealGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f: Vec<(f64, f64, f64)> = (0..6).map(|_| (rng.gen_range(0.02..0.3), rng.gen_range(0.02..0.3), rng.gen_range(0.0..6.3))).collect();
    RealGrid::from_fn(h, w, |r, c| {
        0.5 + f.iter().map(|(a, b, p)| 0.08 * (a * r as f64 + b * c as f64 + p).sin()).sum::<f64>()
    })
}

fn gauss2d(n: usize, sigma: f64) -> Vec<Vec<f64>> {
    let c = (n as f64 - 1.0) / 2.0;
    let mut k: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (-((i as f64 - c).powi(2) + (j as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
                .collect()
        })
        .collect();
    let s: f64 = k.iter().flatten().sum();
    k.iter_mut().flatten().for_each(|v| *v /= s);
    k
}

/// Weighted window statistics at one top-left corner, straight from the
/// definitions.
fn window_stats(a: &[f64], b: &[f64], w: usize, r0: usize, c0: usize, k: &[Vec<f64>]) -> [f64; 5] {
    let n = k.len();
    let (mut m1, mut m2) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            m1 += k[i][j] * a[(r0 + i) * w + c0 + j];
            m2 += k[i][j] * b[(r0 + i) * w + c0 + j];
        }
    }
    let (mut v1, mut v2, mut cv) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let (x, y) = (a[(r0 + i) * w + c0 + j] - m1, b[(r0 + i) * w + c0 + j] - m2);
            v1 += k[i][j] * x * x;
            v2 += k[i][j] * y * y;
            cv += k[i][j] * x * y;
        }
    }
    [m1, m2, v1, v2, cv]
}

fn brute_ssim(a: &RealGrid, b: &RealGrid, range: f64) -> f64 {
    let k = gauss2d(11, 1.5);
    let (h, w) = a.dims();
    let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));
    let mut total = 0.0;
    let mut count = 0.0;
    for r in 0..=h - 11 {
        for c in 0..=w - 11 {
            let [m1, m2, v1, v2, cv] = window_stats(a.data(), b.data(), w, r, c, &k);
            total += (2.0 * m1 * m2 + c1) * (2.0 * cv + c2) / ((m1 * m1 + m2 * m2 + c1) * (v1 + v2 + c2));
            count += 1.0;
        }
    }
    total / count
}

/// Pixel-domain VIF following the published reference algorithm line by
/// line: at scale s a window of N = 2^(5-s)+1 taps with sigma N/5; from the
/// second scale on, both images are low-passed with that window (valid
/// region) and decimated by two before the statistics are taken.
fn brute_vif(gt: &RealGrid, recon: &RealGrid) -> f64 {
    let sigma_nsq = 2.0;
    let (mut h, mut w) = gt.dims();
    let mut a = gt.data().to_vec();
    let mut b = recon.data().to_vec();
    let (mut num, mut den) = (0.0, 0.0);
    for scale in 1..=4 {
        let n = (1usize << (5 - scale)) + 1;
        let k = gauss2d(n, n as f64 / 5.0);
        if scale > 1 {
            if (h + 1 - n).div_ceil(2) < n || (w + 1 - n).div_ceil(2) < n {
                break;
            }
            let mut fa = Vec::new();
            let mut fb = Vec::new();
            for r in (0..=h - n).step_by(2) {
                for c in (0..=w - n).step_by(2) {
                    let s = window_stats(&a, &b, w, r, c, &k);
                    fa.push(s[0]);
                    fb.push(s[1]);
                }
            }
            let (nh, nw) = ((h + 1 - n).div_ceil(2), (w + 1 - n).div_ceil(2));
            a = fa;
            b = fb;
            h = nh;
            w = nw;
        }
        for r in 0..=h - n {
            for c in 0..=w - n {
                let [_, _, v1, v2, cv] = window_stats(&a, &b, w, r, c, &k);
                let (mut s1, s2) = (v1.max(0.0), v2.max(0.0));
                let mut g = cv / (s1 + 1e-10);
                let mut sv = s2 - g * cv;
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
                sv = sv.max(1e-10);
                num += (1.0 + g * g * s1 / (sv + sigma_nsq)).log10();
                den += (1.0 + s1 / sigma_nsq).log10();
            }
        }
    }
    num / den
}

#[test]
fn ssim_matches_windowed_brute_force() {
    let a = noise_image(1, 64, 64);
    let b = RealGrid::from_fn(64, 64, |r, c| 0.7 * a.at(r, c) + 0.3 * noise_image(2, 64, 64).at(r, c));
    let got = ssim(&a, &b, 1.0).unwrap();
    assert!((got - brute_ssim(&a, &b, 1.0)).abs() < 1e-6);
    assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn vif_matches_reference_transcription() {
    for (h, w) in [(64, 64), (32, 32), (48, 40)] {
        let a = smooth_image(3, h, w).map(|v| 255.0 * v);
        let noise = noise_image(4, h, w);
        let b = RealGrid::from_fn(h, w, |r, c| 0.9 * a.at(r, c) + 20.0 * (noise.at(r, c) - 0.5));
        let got = vif(&a, &b).unwrap();
        let want = brute_vif(&a, &b);
        assert!((got - want).abs() < 1e-6, "{h}x{w}: {got} vs {want}");
        assert!((vif(&a, &a).unwrap() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn vif_is_asymmetric_and_drops_with_noise() {
    let a = smooth_image(5, 64, 64).map(|v| 255.0 * v);
    let blurred = RealGrid::from_fn(64, 64, |r, c| 0.5 * a.at(r, c) + 60.0);
    assert!((vif(&a, &blurred).unwrap() - vif(&blurred, &a).unwrap()).abs() > 1e-3);
    let n = noise_image(6, 64, 64);
    let noisy = RealGrid::from_fn(64, 64, |r, c| a.at(r, c) + 120.0 * (n.at(r, c) - 0.5));
    assert!(vif(&a, &noisy).unwrap() < vif(&a, &a).unwrap());
}

#[test]
fn symmetric_metrics_are_symmetric_and_repeatable() {
    let a = smooth_image(7, 64, 48);
    let b = noise_image(8, 64, 48).map(|v| 0.2 * v + 0.4);
    assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
    assert!((ssim(&a, &b, 1.0).unwrap() - ssim(&b, &a, 1.0).unwrap()).abs() < 1e-14);
    let r1 = evaluate(&[b.clone()], &[a.clone()], Normalization::MeanstdGt, EvaluationMode::Image).unwrap();
    let r2 = evaluate(&[b], &[a], Normalization::MeanstdGt, EvaluationMode::Image).unwrap();
    assert_eq!(serde_json::to_string(&r1).unwrap(), serde_json::to_string(&r2).unwrap());
}

#[test]
fn ms_ssim_of_identical_images_is_one() {
    let a = smooth_image(9, 128, 96);
    assert!((ms_ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-12);
    let b = a.map(|v| v * 0.9 + 0.02);
    let m = ms_ssim(&a, &b, 1.0).unwrap();
    assert!(m > 0.0 && m < 1.0);
}

#[test]
fn meanstd_gt_moves_only_the_ground_truth() {
    let gt = smooth_image(10, 40, 40);
    let recon = noise_image(11, 40, 40).map(|v| 3.0 * v - 1.0);
    let (g, r) = normalize(&gt, &recon, Normalization::MeanstdGt).unwrap();
    assert_eq!(r, recon);
    let moments = |x: &RealGrid| {
        let m = x.mean();
        (m, (x.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.data().len() as f64).sqrt())
    };
    let ((gm, gs), (rm, rs)) = (moments(&g), moments(&recon));
    assert!((gm - rm).abs() < 1e-10 && (gs - rs).abs() < 1e-10);
}

#[test]
fn normalization_choice_changes_scores() {
    let gt = smooth_image(12, 64, 64);
    let recon = RealGrid::from_fn(64, 64, |r, c| 2.0 * gt.at(r, c) + 0.3 + 0.05 * ((r * c) as f64).sin());
    let scores: Vec<f64> = [Normalization::None, Normalization::Minmax, Normalization::MeanstdBoth, Normalization::MeanstdGt]
        .into_iter()
        .map(|n| evaluate(&[recon.clone()], &[gt.clone()], n, EvaluationMode::Image).unwrap().psnr.mean)
        .collect();
    assert!(scores.windows(2).any(|p| (p[0] - p[1]).abs() > 1e-6), "{scores:?}");
}

#[test]
fn duplicating_a_slice_keeps_the_mean() {
    let gt = smooth_image(13, 48, 48);
    let recon = gt.map(|v| v + 0.01 * (v * 40.0).sin());
    let one = evaluate(&[recon.clone()], &[gt.clone()], Normalization::MeanstdGt, EvaluationMode::Image).unwrap();
    let two = evaluate(&[recon.clone(), recon], &[gt.clone(), gt], Normalization::MeanstdGt, EvaluationMode::Image).unwrap();
    assert!((one.psnr.mean - two.psnr.mean).abs() < 1e-12);
    assert!((one.ssim.mean - two.ssim.mean).abs() < 1e-12);
}

#[test]
fn volume_range_lifts_low_range_slices() {
    let gt_a = smooth_image(14, 48, 48).map(|v| 0.1 * v);
    let gt_b = smooth_image(15, 48, 48).map(|v| 10.0 * v);
    let rec_a = RealGrid::from_fn(48, 48, |r, c| gt_a.at(r, c) + 0.002 * ((r * 3 + c) as f64).sin());
    let rec_b = RealGrid::from_fn(48, 48, |r, c| gt_b.at(r, c) + 0.2 * ((r + 5 * c) as f64).cos());
    let gt = [gt_a, gt_b];
    let rec = [rec_a, rec_b];
    let img = evaluate(&rec, &gt, Normalization::None, EvaluationMode::Image).unwrap();
    let vol = evaluate(&rec, &gt, Normalization::None, EvaluationMode::Volume).unwrap();
    assert!(vol.psnr.per_image[0] > img.psnr.per_image[0]);
    let single = evaluate(&rec[..1], &gt[..1], Normalization::MeanstdGt, EvaluationMode::Image).unwrap();
    let single_vol = evaluate(&rec[..1], &gt[..1], Normalization::MeanstdGt, EvaluationMode::Volume).unwrap();
    assert_eq!(single.psnr, single_vol.psnr);
    assert_eq!(single.ssim, single_vol.ssim);
    assert_eq!(single.vif, single_vol.vif);
}
