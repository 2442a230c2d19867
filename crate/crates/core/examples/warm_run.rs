//! Guided initialization on the shipped phantom: fits phantom A from random
//! weights, then phantom B both from random weights and from A's weights,
//! and reports how many iterations the warm fit needs to match the cold one.
//!
//! Usage: `warm_run [layers] [channels] [iterations] [seed A] [seed B] [A multiple]`

use umri::decoders::{DecoderConfig, DecoderState};
use umri::fitters::{fit, FitConfig, LossMode};
use umri::phantom::{desk_problem, REFERENCE_SEED};

fn main() -> umri::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let arg = |i: usize, d: u64| args.get(i).copied().unwrap_or(d);
    let (layers, channels, iterations) = (arg(0, 5) as usize, arg(1, 16) as usize, arg(2, 1000) as usize);
    let (a, b) = (desk_problem(arg(3, REFERENCE_SEED + 2), 4)?, desk_problem(arg(4, REFERENCE_SEED), 4)?);
    let mode = LossMode::Sensmap;
    let config = DecoderConfig::desk([128, 96], 2, layers, channels);
    let fc = FitConfig { record_loss_every: 1, ..FitConfig::adam(mode, iterations) };

    let mut on_a: DecoderState = DecoderState::init(&config)?;
    let fc_a = FitConfig { iterations: iterations * arg(5, 1) as usize, ..fc.clone() };
    fit(&mut on_a, &a.measurement, Some(&a.maps), &fc_a)?;
    let mut cold: DecoderState = DecoderState::init(&config)?;
    let cold_fit = fit(&mut cold, &b.measurement, Some(&b.maps), &fc)?;
    let target = cold_fit.final_loss();
    let warm_fit = fit(&mut on_a, &b.measurement, Some(&b.maps), &fc)?;
    if std::env::var_os("WARM_TRACE").is_some() {
        for (c, w) in cold_fit.loss_trace.iter().zip(&warm_fit.loss_trace).step_by(25) {
            println!("{:5} cold {:.4e} warm {:.4e}", c.0, c.1, w.1);
        }
    }
    match warm_fit.iterations_to_reach(target) {
        Some(t) => println!("cold final {target:.4e}; warm reaches it at {t} of {iterations} ({:.3})", t as f64 / iterations as f64),
        None => println!("cold final {target:.4e}; warm final {:.4e}, never reached", warm_fit.final_loss()),
    }
    Ok(())
}
