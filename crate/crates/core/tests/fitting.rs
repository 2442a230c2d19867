use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use umri::decoders::{Architecture, DecoderConfig, DecoderState, SizeSchedule};
use umri::fitters::{
    adam_step, average, ensemble_reconstruct, fit, loss_coilwise, loss_sensmap, loss_single_coil, member_seeds,
    reconstruct, reconstruct_detailed, AdamState, FitConfig, LossMode, Optimizer,
};
use umri::metrics::{evaluate, mse, EvaluationMode, Normalization};
use umri::mriops::{apply_mask, channels_to_complex, fft2c, forward_multicoil, CoilMeasurement, Mask, SensitivityMaps};
use umri::phantom::{make_problem, MaskSpec, PhantomSpec, Problem};
use umri::tensor::{ParamStore, Tensor};

fn small_problem(seed: u64, coils: usize, noise: f64) -> Problem {
    let spec = PhantomSpec { height: 32, width: 32, n_ellipses: 4, ..PhantomSpec::desk(seed) };
    let mask = MaskSpec { center_fraction: 0.16, ..MaskSpec::standard(32, 4, seed) };
    make_problem(&spec, coils, &mask, noise).unwrap()
}

fn small_decoder(mode: LossMode, coils: usize, seed: u64) -> DecoderConfig {
    DecoderConfig {
        arch: Architecture::ConvDecoder,
        n_layers: 3,
        channels: 8,
        input_shape: [8, 8, 8],
        output_shape: [32, 32],
        out_channels: mode.out_channels(coils),
        seed,
        schedule: SizeSchedule::Geometric,
    }
}

#[test]
fn adam_matches_hand_computed_trace() {
    let mut params = ParamStore::new();
    params.insert("w", 0, Tensor::new(&[1], vec![1.0f64]).unwrap()).unwrap();
    let mut state = AdamState::new();
    let expected = [0.900000001, 0.8004122297123382, 0.701586274504415];
    let mut losses = vec![0.5];
    for want in expected {
        let w = params.get("w").unwrap().tensor.data()[0];
        params.get_mut("w").unwrap().tensor.set_grad(vec![w]).unwrap();
        adam_step(&mut params, &mut state, 0.1).unwrap();
        let got = params.get("w").unwrap().tensor.data()[0];
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        losses.push(0.5 * got * got);
    }
    assert!(losses.windows(2).all(|p| p[1] < p[0]));
}

#[test]
fn single_coil_sensmap_loss_equals_single_coil_loss() {
    let p = small_problem(3, 1, 0.0);
    let y = p.measurement;
    let ones = SensitivityMaps::identity(32, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..5 {
        let mut state: DecoderState<f64> = DecoderState::init(&small_decoder(LossMode::SingleCoil, 1, seed)).unwrap();
        for prm in state.params_mut().iter_mut() {
            prm.tensor.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
        }
        let a = loss_single_coil(&state, &y).unwrap();
        let b = loss_sensmap(&state, &y, &ones).unwrap();
        assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn zero_output_costs_half_the_measurement_energy() {
    let p = small_problem(5, 3, 0.0);
    let mut state: DecoderState<f64> = DecoderState::init(&small_decoder(LossMode::Coilwise, 3, 1)).unwrap();
    for prm in state.params_mut().iter_mut().filter(|q| q.layer == 3) {
        prm.tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    assert!(state.forward().unwrap().data().iter().all(|&v| v == 0.0));
    let half = 0.5 * p.measurement.norm().powi(2);
    assert!((loss_coilwise(&state, &p.measurement).unwrap() - half).abs() < 1e-9 * half);
}

#[test]
fn decoder_generated_data_has_zero_loss() {
    let p = small_problem(6, 2, 0.0);
    let state: DecoderState<f64> = DecoderState::init(&small_decoder(LossMode::Coilwise, 2, 2)).unwrap();
    let images = channels_to_complex(&state.forward().unwrap()).unwrap();
    let coils = images
        .iter()
        .map(|g| apply_mask(&fft2c(g, false), p.measurement.mask()).unwrap())
        .collect();
    let y = CoilMeasurement::new(coils, p.measurement.mask().clone()).unwrap();
    assert!(loss_coilwise(&state, &y).unwrap() < 1e-20);
}

#[test]
fn one_iteration_fit_and_determinism() {
    let p = small_problem(7, 3, 0.01);
    let cfg = small_decoder(LossMode::Sensmap, 3, 9);
    let one = FitConfig::adam(LossMode::Sensmap, 1);
    let mut s: DecoderState = DecoderState::init(&cfg).unwrap();
    let r = fit(&mut s, &p.measurement, Some(&p.maps), &one).unwrap();
    assert!(!r.loss_trace.is_empty());
    assert_eq!(r.loss_trace.last().unwrap().0, 1);

    let cfg_fit = FitConfig::adam(LossMode::Sensmap, 30);
    let a = reconstruct_detailed(&p.measurement, Some(&p.maps), &cfg, &cfg_fit).unwrap();
    let b = reconstruct_detailed(&p.measurement, Some(&p.maps), &cfg, &cfg_fit).unwrap();
    assert_eq!(a.fit.loss_trace, b.fit.loss_trace);
    assert!(a.fit.params.same_values(&b.fit.params));
    assert_eq!(a.image, b.image);
}

#[test]
fn long_fit_lowers_the_loss() {
    let p = small_problem(8, 4, 0.01);
    let cfg = small_decoder(LossMode::Coilwise, 4, 3);
    let mut s: DecoderState = DecoderState::init(&cfg).unwrap();
    let fc = FitConfig { record_loss_every: 10, ..FitConfig::adam(LossMode::Coilwise, 2500) };
    let r = fit(&mut s, &p.measurement, None, &fc).unwrap();
    let at10 = r.loss_trace.iter().find(|(t, _)| *t == 10).unwrap().1;
    assert!(r.final_loss() < at10, "{} vs {at10}", r.final_loss());
    assert!(r.loss_trace.iter().all(|(_, l)| l.is_finite()));
}

#[test]
fn reconstruction_is_data_consistent() {
    let p = small_problem(10, 3, 0.02);
    for mode in [LossMode::Coilwise, LossMode::Sensmap] {
        let maps = (mode == LossMode::Sensmap).then_some(&p.maps);
        let r = reconstruct_detailed(&p.measurement, maps, &small_decoder(mode, 3, 4), &FitConfig::adam(mode, 20))
            .unwrap();
        for (img, y) in r.coil_images.iter().zip(p.measurement.coils()) {
            let k = apply_mask(&fft2c(img, false), p.measurement.mask()).unwrap();
            assert!(k.sub(y).unwrap().norm() < 1e-4 * y.norm(), "{mode:?}");
        }
    }
}

#[test]
fn full_sampling_is_near_exact() {
    let spec = PhantomSpec { height: 32, width: 32, n_ellipses: 4, ..PhantomSpec::desk(11) };
    let phantom = umri::phantom::make_phantom(&spec).unwrap();
    let maps = umri::phantom::make_sens_maps(3, 32, 32, &phantom.support).unwrap();
    let y = forward_multicoil(&phantom.image, &maps, &Mask::full(32)).unwrap();
    let gt = phantom.magnitude();
    for mode in [LossMode::Coilwise, LossMode::Sensmap] {
        let m = (mode == LossMode::Sensmap).then_some(&maps);
        let img = reconstruct(&y, m, &small_decoder(mode, 3, 1), &FitConfig::adam(mode, 5)).unwrap();
        let rep = evaluate(&[img], &[gt.clone()], Normalization::MeanstdGt, EvaluationMode::Image).unwrap();
        assert!(rep.psnr.mean >= 40.0, "{mode:?}: {}", rep.psnr.mean);
    }
}

#[test]
fn ensemble_of_one_is_plain_reconstruction() {
    let p = small_problem(12, 2, 0.01);
    let cfg = small_decoder(LossMode::Coilwise, 2, 42);
    let fc = FitConfig::adam(LossMode::Coilwise, 15);
    let e = ensemble_reconstruct(&p.measurement, None, &cfg, &fc, &[42]).unwrap();
    assert_eq!(e.image, reconstruct(&p.measurement, None, &cfg, &fc).unwrap());
}

#[test]
fn ensemble_average_never_loses_to_its_members() {
    let p = small_problem(13, 3, 0.03);
    let gt = p.ground_truth();
    let cfg = small_decoder(LossMode::Sensmap, 3, 0);
    let fc = FitConfig::adam(LossMode::Sensmap, 40);
    for k in [2, 5] {
        let e = ensemble_reconstruct(&p.measurement, Some(&p.maps), &cfg, &fc, &member_seeds(100, k)).unwrap();
        assert_eq!(e.members.len(), k);
        let member_mse: f64 = e.members.iter().map(|m| mse(m, &gt).unwrap()).sum::<f64>() / k as f64;
        assert!(mse(&e.image, &gt).unwrap() <= member_mse);
        assert_eq!(average(&e.members).unwrap(), e.image);
    }
}

#[test]
fn layerwise_gd_with_adam_stepsizes_tracks_adam() {
    let p = small_problem(14, 3, 0.01);
    let cfg = small_decoder(LossMode::Sensmap, 3, 6);
    let iters = 300;
    let adam_cfg = FitConfig { record_stepsizes: true, ..FitConfig::adam(LossMode::Sensmap, iters) };
    let mut s: DecoderState = DecoderState::init(&cfg).unwrap();
    let adam = fit(&mut s, &p.measurement, Some(&p.maps), &adam_cfg).unwrap();
    let schedule = adam.stepsizes.clone().unwrap();
    let gd_cfg = FitConfig {
        optimizer: Optimizer::GdLayerwise { schedule },
        ..FitConfig::adam(LossMode::Sensmap, iters)
    };
    let mut s: DecoderState = DecoderState::init(&cfg).unwrap();
    let gd = fit(&mut s, &p.measurement, Some(&p.maps), &gd_cfg).unwrap();
    assert!(gd.final_loss() <= 2.0 * adam.final_loss(), "{} vs {}", gd.final_loss(), adam.final_loss());
}

#[test]
fn divergence_names_the_iteration() {
    let p = small_problem(15, 2, 0.0);
    let cfg = small_decoder(LossMode::Coilwise, 2, 1);
    let layers: Vec<usize> = (1..=3).collect();
    let gd = FitConfig {
        optimizer: Optimizer::GdLayerwise { schedule: umri::fitters::StepSchedule::constant(&layers, 1e30) },
        ..FitConfig::adam(LossMode::Coilwise, 50)
    };
    let mut s: DecoderState = DecoderState::init(&cfg).unwrap();
    match fit(&mut s, &p.measurement, None, &gd) {
        Err(umri::Error::Divergence { iteration, .. }) => assert!(iteration < 50),
        other => panic!("expected divergence, got {other:?}"),
    }
}
