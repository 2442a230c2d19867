use nalgebra::{DMatrix, DVector};

use umri::decoders::{
    layer_probe, layer_specs, least_squares, load_params, save_params, Architecture, DecoderConfig, DecoderState,
    SizeSchedule,
};
use umri::mriops::RealGrid;
use umri::tensor::{Interpolation, Tape};

fn config(arch: Architecture) -> DecoderConfig {
    DecoderConfig {
        arch,
        n_layers: 4,
        channels: 6,
        input_shape: [6, 5, 3],
        output_shape: [40, 24],
        out_channels: 4,
        seed: 17,
        schedule: SizeSchedule::Geometric,
    }
}

#[test]
fn knee_parameter_count_closed_form() {
    let cfg = DecoderConfig::knee([640, 368], 30);
    assert_eq!((cfg.n_layers, cfg.channels), (8, 256));
    let hidden = 256 * 256 * 9 + 256 + 2 * 256;
    let last = 256 * 30 + 30;
    assert_eq!(cfg.num_params(), 7 * hidden + last);
    let state: DecoderState = DecoderState::init(&DecoderConfig { output_shape: [64, 32], input_shape: [256, 10, 5], ..cfg }).unwrap();
    assert_eq!(state.params().num_scalars(), 7 * hidden + last);
}

#[test]
fn same_seed_same_state_other_seed_other_input() {
    let cfg = config(Architecture::ConvDecoder);
    let a: DecoderState = DecoderState::init(&cfg).unwrap();
    let b: DecoderState = DecoderState::init(&cfg).unwrap();
    assert_eq!(a.z(), b.z());
    assert!(a.params().same_values(b.params()));
    assert_eq!(a.forward().unwrap(), b.forward().unwrap());
    let c: DecoderState = DecoderState::init(&cfg.clone().with_seed(18)).unwrap();
    assert_ne!(a.z(), c.z());
}

#[test]
fn shapes_follow_the_schedule() {
    for arch in [Architecture::ConvDecoder, Architecture::DeepDecoder] {
        let cfg = config(arch);
        let state: DecoderState<f64> = DecoderState::init(&cfg).unwrap();
        let mut tape = Tape::new();
        let g = state.record(&mut tape).unwrap();
        let sizes = cfg.size_schedule();
        assert_eq!(g.hidden.len(), sizes.len());
        for (v, &(h, w)) in g.hidden.iter().zip(&sizes) {
            assert_eq!(tape.value(*v).shape(), &[cfg.channels, h, w]);
        }
        assert_eq!(tape.value(g.output).shape(), &[4, 40, 24]);
        assert_eq!(*sizes.last().unwrap(), (40, 24));
    }
}

#[test]
fn families_differ_only_in_upsampling_and_kernel() {
    let conv = layer_specs(&config(Architecture::ConvDecoder));
    let deep = layer_specs(&config(Architecture::DeepDecoder));
    assert_eq!(conv.len(), deep.len());
    for (c, d) in conv.iter().zip(&deep) {
        assert_eq!((c.index, c.in_channels, c.out_channels, c.relu, c.batchnorm), (d.index, d.in_channels, d.out_channels, d.relu, d.batchnorm));
        match (c.upsample, d.upsample) {
            (Some((Interpolation::Nearest, a)), Some((Interpolation::Bilinear, b))) => {
                assert_eq!(a, b);
                assert_eq!((c.kernel, d.kernel), (3, 1));
            }
            (None, None) => assert_eq!((c.kernel, d.kernel), (1, 1)),
            other => panic!("unexpected pair {other:?}"),
        }
    }
    let last = conv.last().unwrap();
    assert!(last.upsample.is_none() && !last.relu && !last.batchnorm);
}

#[test]
fn zero_final_layer_gives_zero_output() {
    let mut s: DecoderState = DecoderState::init(&config(Architecture::DeepDecoder)).unwrap();
    for p in s.params_mut().iter_mut().filter(|p| p.layer == 4) {
        p.tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    assert!(s.forward().unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn saved_parameters_reload_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.umriw");
    let cfg = config(Architecture::ConvDecoder);
    let s: DecoderState = DecoderState::init(&cfg).unwrap();
    save_params(&s, &path).unwrap();
    let back: DecoderState = load_params(&cfg, &path).unwrap();
    assert_eq!(back.forward().unwrap().data(), s.forward().unwrap().data());
    let wrong = DecoderConfig { channels: 7, input_shape: [7, 5, 3], ..cfg };
    match load_params::<f32>(&wrong, &path) {
        Err(umri::Error::ConfigMismatch(msg)) => assert!(msg.contains("channels")),
        other => panic!("expected mismatch, got {other:?}"),
    }
}

#[test]
fn least_squares_matches_normal_equations() {
    let a = DMatrix::from_fn(64, 5, |r, c| ((r * 31 + c * 17) % 23) as f64 / 7.0 - 1.0 + if r == c { 2.0 } else { 0.0 });
    let b = DVector::from_fn(64, |r, _| ((r * 13) % 11) as f64 - 5.0);
    let x = least_squares(&a, &b).unwrap();
    let ata = a.transpose() * &a;
    let atb = a.transpose() * &b;
    let direct = ata.lu().solve(&atb).unwrap();
    assert!((x - direct).norm() < 1e-8);
}

#[test]
fn probe_recovers_a_target_in_the_channel_span() {
    let cfg = DecoderConfig {
        arch: Architecture::ConvDecoder,
        n_layers: 2,
        channels: 3,
        input_shape: [3, 8, 8],
        output_shape: [8, 8],
        out_channels: 2,
        seed: 3,
        schedule: SizeSchedule::Geometric,
    };
    let state: DecoderState<f64> = DecoderState::init(&cfg).unwrap();
    let mut tape = Tape::new();
    let g = state.record(&mut tape).unwrap();
    let act = tape.value(g.hidden[0]).data();
    let target = RealGrid::new(8, 8, (0..64).map(|i| 2.0 * act[i] - 0.5 * act[128 + i]).collect()).unwrap();
    let probe = layer_probe(&state, &target).unwrap();
    assert_eq!(probe.len(), 1);
    assert!(probe[0].residual_norm < 1e-8, "{}", probe[0].residual_norm);
    assert!((probe[0].coefficients[0] - 2.0).abs() < 1e-6);
}
