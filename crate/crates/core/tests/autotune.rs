use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use umri::autotune::{
    autotune, autotune_reconstructors, grid, holdout_error, holdout_split, full_scale_grid, score_reconstructor,
    HoldoutKind, HyperConfig, Reconstructor, TuneBase, TuneSettings,
};
use umri::decoders::{Architecture, DecoderConfig, DecoderState, SizeSchedule};
use umri::error::Result;
use umri::fitters::{reconstruct, LossMode};
use umri::metrics::mse;
use umri::mriops::{channels_to_complex, forward_multicoil, CoilMeasurement, ComplexGrid, Mask};
use umri::phantom::{make_problem, make_sens_maps, MaskSpec, PhantomSpec};

struct Oracle(Vec<ComplexGrid>);

impl Reconstructor for Oracle {
    fn coil_images(&self, _: &CoilMeasurement) -> Result<Vec<ComplexGrid>> {
        Ok(self.0.clone())
    }
}

struct Zero;

impl Reconstructor for Zero {
    fn coil_images(&self, y: &CoilMeasurement) -> Result<Vec<ComplexGrid>> {
        let (h, w) = y.dims();
        Ok(vec![ComplexGrid::zeros(h, w); y.num_coils()])
    }
}

/// Oracle output scaled by a constant, so each candidate has a known error.
struct Scaled(Vec<ComplexGrid>, f64, usize);

impl Reconstructor for Scaled {
    fn coil_images(&self, _: &CoilMeasurement) -> Result<Vec<ComplexGrid>> {
        Ok(self.0.iter().map(|c| c.scaled(Complex64::new(self.1, 0.0))).collect())
    }

    fn num_params(&self) -> usize {
        self.2
    }
}

fn noiseless(seed: u64) -> (umri::phantom::Problem, Vec<ComplexGrid>) {
    let spec = PhantomSpec { height: 32, width: 64, n_ellipses: 4, ..PhantomSpec::desk(seed) };
    let mask = MaskSpec { center_fraction: 0.16, ..MaskSpec::standard(64, 4, seed) };
    let p = make_problem(&spec, 3, &mask, 0.0).unwrap();
    let truth = p.maps.project(&p.phantom.image).unwrap();
    (p, truth)
}

fn mask_92_of_29() -> Mask {
    let width = 368;
    let center: Vec<usize> = (170..199).collect();
    let mut sampled: Vec<usize> = (0..63).map(|i| i * 2).collect();
    sampled.extend(&center);
    Mask::new(width, sampled, 170..199).unwrap()
}

#[test]
fn split_size_follows_the_rounding_rule() {
    let mask = mask_92_of_29();
    assert_eq!(mask.num_sampled(), 92);
    let y = CoilMeasurement::masked(vec![ComplexGrid::zeros(2, 368)], mask).unwrap();
    let s = holdout_split(&y, 0.1, HoldoutKind::Columns, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(s.columns.len(), 6);
    assert_eq!(s.entries.len(), 12);
}

#[test]
fn y_minus_agrees_with_y_off_the_hold_out() {
    let (p, _) = noiseless(1);
    let y = &p.measurement;
    let s = holdout_split(y, 0.2, HoldoutKind::Columns, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let (h, w) = y.dims();
    for (a, b) in s.y_minus.coils().iter().zip(y.coils()) {
        for r in 0..h {
            for c in 0..w {
                if s.columns.contains(&c) {
                    assert_eq!(a.at(r, c), Complex64::new(0.0, 0.0));
                } else {
                    assert_eq!(a.at(r, c), b.at(r, c));
                }
            }
        }
    }
}

#[test]
fn true_image_has_zero_hold_out_error_without_noise() {
    let (p, truth) = noiseless(3);
    for kind in [HoldoutKind::Columns, HoldoutKind::Samples] {
        for seed in 0..5 {
            let s = holdout_split(&p.measurement, 0.1, kind, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let e = holdout_error(&truth, &p.measurement, &s).unwrap();
            assert!(e < 1e-24 * p.measurement.norm().powi(2), "{kind:?}: {e}");
        }
    }
    let folds = score_reconstructor(&Oracle(truth), &p.measurement, 0.1, HoldoutKind::Columns, 2, 7).unwrap();
    assert!(folds.iter().all(|&e| e < 1e-20));
}

#[test]
fn zero_reconstruction_scores_the_held_out_energy() {
    let (p, _) = noiseless(4);
    let y = &p.measurement;
    let (h, _) = y.dims();
    for seed in 0..4 {
        let s = holdout_split(y, 0.25, HoldoutKind::Columns, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut energy = 0.0;
        for k in y.coils() {
            for &c in &s.columns {
                for r in 0..h {
                    energy += k.at(r, c).norm_sqr();
                }
            }
        }
        let want = energy / (s.columns.len() * h * y.num_coils()) as f64;
        let got = holdout_error(&Zero.coil_images(y).unwrap(), y, &s).unwrap();
        assert!((got - want).abs() <= 1e-12 * want, "{got} vs {want}");
    }
}

#[test]
fn scores_are_reproducible() {
    let (p, truth) = noiseless(5);
    let r = Scaled(truth, 0.8, 0);
    let a = score_reconstructor(&r, &p.measurement, 0.1, HoldoutKind::Columns, 2, 11).unwrap();
    let b = score_reconstructor(&r, &p.measurement, 0.1, HoldoutKind::Columns, 2, 11).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 2);
}

#[test]
fn selection_ignores_grid_order() {
    let (p, truth) = noiseless(6);
    let configs = grid(&[2, 3], &[4, 8]);
    let factors = [0.5, 0.9, 1.3, 0.7, 1.05, 0.2, 1.6, 0.95];
    let make = |order: &[usize]| {
        order
            .iter()
            .map(|&i| (configs[i], Scaled(truth.clone(), factors[i], 10 + i)))
            .collect::<Vec<_>>()
    };
    let settings = TuneSettings::default();
    let forward: Vec<usize> = (0..8).collect();
    let (best, rows) = autotune_reconstructors(&make(&forward), &p.measurement, &settings).unwrap();
    assert_eq!(rows[best].config, configs[4]);
    let reversed: Vec<usize> = (0..8).rev().collect();
    let (best_r, rows_r) = autotune_reconstructors(&make(&reversed), &p.measurement, &settings).unwrap();
    assert_eq!(rows_r[best_r].config, configs[4]);
    for row in &rows {
        let twin = rows_r.iter().find(|r| r.config == row.config).unwrap();
        assert_eq!(row.fold_errors, twin.fold_errors);
    }
}

#[test]
fn ties_go_to_the_smaller_model() {
    let (p, truth) = noiseless(7);
    let configs = grid(&[2], &[4, 8]);
    let candidates: Vec<_> = configs
        .iter()
        .zip([40, 30, 20, 20])
        .map(|(h, n)| (*h, Scaled(truth.clone(), 0.9, n)))
        .collect();
    let (best, _) = autotune_reconstructors(&candidates, &p.measurement, &TuneSettings::default()).unwrap();
    assert_eq!(best, 2);
}

#[test]
fn rejects_empty_and_duplicate_grids() {
    let (p, truth) = noiseless(8);
    let none: Vec<(HyperConfig, Oracle)> = Vec::new();
    assert!(autotune_reconstructors(&none, &p.measurement, &TuneSettings::default()).is_err());
    let h = HyperConfig { n_layers: 2, channels: 4, sens: true };
    let dup = vec![(h, Oracle(truth.clone())), (h, Oracle(truth))];
    assert!(autotune_reconstructors(&dup, &p.measurement, &TuneSettings::default()).is_err());
}

#[test]
fn full_scale_grid_has_eight_entries() {
    let g = full_scale_grid();
    assert_eq!(g.len(), 8);
    for h in &g {
        assert!([5, 8].contains(&h.n_layers) && [64, 256].contains(&h.channels));
    }
}

fn tiny_base(seed: u64) -> TuneBase {
    TuneBase {
        arch: Architecture::ConvDecoder,
        input_hw: [8, 16],
        output_shape: [32, 64],
        schedule: SizeSchedule::Geometric,
        iterations: 300,
        lr: 0.01,
        seed,
    }
}

#[test]
fn grid_of_one_returns_it() {
    let (p, _) = noiseless(9);
    let only = HyperConfig { n_layers: 2, channels: 2, sens: true };
    let base = TuneBase { iterations: 20, ..tiny_base(0) };
    let (chosen, rows) = autotune(&[only], &p.measurement, Some(&p.maps), &base, &TuneSettings::default()).unwrap();
    assert_eq!(chosen, only);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].fold_errors.len(), 2);
}

#[test]
fn planted_winner_is_selected() {
    let (h_img, w_img) = (32, 64);
    let generator = DecoderConfig {
        arch: Architecture::ConvDecoder,
        n_layers: 3,
        channels: 8,
        input_shape: [8, 8, 16],
        output_shape: [h_img, w_img],
        out_channels: 2,
        seed: 21,
        schedule: SizeSchedule::Geometric,
    };
    let state: DecoderState<f64> = DecoderState::init(&generator).unwrap();
    let out = state.forward().unwrap();
    let x = channels_to_complex(&out).unwrap().remove(0);
    let support = vec![true; h_img * w_img];
    let maps = make_sens_maps(4, h_img, w_img, &support).unwrap();
    let mask = umri::phantom::make_mask(&MaskSpec { center_fraction: 0.16, ..MaskSpec::standard(w_img, 4, 3) }).unwrap();
    let y = forward_multicoil(&x, &maps, &mask).unwrap();

    let capable = HyperConfig { n_layers: 3, channels: 8, sens: true };
    let crippled = HyperConfig { n_layers: 2, channels: 1, sens: true };
    let base = tiny_base(generator.seed);
    let settings = TuneSettings::default();
    let candidates = [crippled, capable];
    let (chosen, rows) = autotune(&candidates, &y, Some(&maps), &base, &settings).unwrap();
    assert_eq!(chosen, capable, "{rows:?}");
    let again = autotune(&candidates, &y, Some(&maps), &base, &settings).unwrap();
    assert_eq!(again.1, rows);

    let truth = x.abs();
    let full_error = |h: &HyperConfig| {
        let img = reconstruct(&y, Some(&maps), &base.decoder_config(h, 4), &base.fit_config(h)).unwrap();
        mse(&truth, &img).unwrap()
    };
    assert!(full_error(&capable) < full_error(&crippled));
    assert_eq!(TuneBase::loss_mode(&capable), LossMode::Sensmap);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hold_out_stays_on_sampled_outer_columns(
        seed in 0u64..1000,
        q in 0.05f64..0.6,
        samples in any::<bool>(),
    ) {
        let mask = umri::phantom::make_mask(&MaskSpec::standard(64, 4, seed)).unwrap();
        let y = CoilMeasurement::masked(vec![ComplexGrid::zeros(8, 64)], mask.clone()).unwrap();
        let kind = if samples { HoldoutKind::Samples } else { HoldoutKind::Columns };
        let outer = mask.outer_columns();
        let candidates = if samples { outer.len() * 8 } else { outer.len() };
        let n = (q * candidates as f64).round() as usize;
        match holdout_split(&y, q, kind, &mut ChaCha8Rng::seed_from_u64(seed)) {
            Ok(s) => {
                prop_assert!(n > 0 && n < candidates);
                let held = if samples { s.entries.len() } else { s.columns.len() };
                prop_assert_eq!(held, n);
                for &(r, c) in &s.entries {
                    prop_assert!(r < 8);
                    prop_assert!(!mask.center_band().contains(&c));
                    prop_assert!(mask.is_column_sampled(c));
                    prop_assert!(!s.y_minus.mask().keeps(r, c));
                }
            }
            Err(_) => prop_assert!(n == 0 || n >= candidates),
        }
    }
}

#[test]
fn sens_entries_without_maps_fail_cleanly() {
    let (p, _) = noiseless(10);
    let base = TuneBase { iterations: 5, ..tiny_base(0) };
    let h = HyperConfig { n_layers: 2, channels: 2, sens: true };
    assert!(autotune(&[h], &p.measurement, None, &base, &TuneSettings::default()).is_err());
}
