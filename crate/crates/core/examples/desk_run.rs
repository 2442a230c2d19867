//! Fits a ConvDecoder to the shipped phantom and prints PSNR against the
//! zero-filled baseline.
//!
//! Usage: `desk_run [layers] [channels] [iterations] [acceleration] [sens 0|1] [lr x 1e4] [input divisor]`

use umri::decoders::DecoderConfig;
use umri::fitters::{reconstruct_detailed, FitConfig, LossMode};
use umri::metrics::{evaluate, EvaluationMode, Normalization};
use umri::mriops::zero_filled;
use umri::phantom::{desk_problem, REFERENCE_SEED};

fn main() -> umri::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let arg = |i: usize, d: usize| args.get(i).copied().unwrap_or(d);
    let (layers, channels, iterations, accel) = (arg(0, 5), arg(1, 32), arg(2, 2500), arg(3, 4));
    let sens = arg(4, 0) == 1;
    let lr = arg(5, 100) as f64 * 1e-4;
    let div = arg(6, 16);
    let p = desk_problem(REFERENCE_SEED, accel as u32)?;
    let gt = p.ground_truth();
    let score = |img| evaluate(&[img], &[gt.clone()], Normalization::MeanstdGt, EvaluationMode::Image).map(|r| r.psnr.mean);
    println!("zero-filled PSNR {:.2}", score(zero_filled(&p.measurement)?)?);
    let mode = if sens { LossMode::Sensmap } else { LossMode::Coilwise };
    let config = DecoderConfig::desk([128, 96], mode.out_channels(p.measurement.num_coils()), layers, channels);
    let mut config = config;
    config.input_shape = [channels, 128 / div, 96 / div];
    let mut fit = FitConfig::adam(mode, iterations);
    fit.optimizer = umri::fitters::Optimizer::Adam { lr };
    fit.record_loss_every = (iterations / 10).max(1);
    let r = reconstruct_detailed(&p.measurement, Some(&p.maps), &config, &fit)?;
    for (t, l) in &r.fit.loss_trace {
        println!("  iter {t:5} loss {l:.4e}");
    }
    println!(
        "decoder {layers}x{channels}: PSNR {:.2} in {:.1}s",
        score(r.image)?,
        r.fit.wall_seconds
    );
    Ok(())
}
