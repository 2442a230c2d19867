use std::path::PathBuf;

use proptest::prelude::*;
use serde::{Deserialize, Serialize};

use umri::mriops::{forward_multicoil, zero_filled, Mask};
use umri::phantom::{make_mask, make_phantom, make_sens_maps, MaskKind, MaskSpec, PhantomSpec, REFERENCE_SEED};
use umri::tv::tv_norm;

const BINS: usize = 20;

#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct Golden {
    seed: u64,
    height: usize,
    width: usize,
    support_area: usize,
    /// Counts of support pixels with magnitude in `[i/20, (i+1)/20)`, the
    /// last bin closed.
    histogram: Vec<usize>,
}

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/phantom_1234.json")
}

fn current() -> Golden {
    let spec = PhantomSpec::desk(REFERENCE_SEED);
    let p = make_phantom(&spec).unwrap();
    let mag = p.magnitude();
    let mut histogram = vec![0; BINS];
    for (v, &inside) in mag.data().iter().zip(&p.support) {
        if inside {
            histogram[((v * BINS as f64) as usize).min(BINS - 1)] += 1;
        }
    }
    Golden {
        seed: REFERENCE_SEED,
        height: spec.height,
        width: spec.width,
        support_area: p.support_area(),
        histogram,
    }
}

/// Set `UMRI_BLESS=1` to rewrite the golden file after an intended change.
#[test]
fn reference_phantom_matches_golden_file() {
    let now = current();
    if std::env::var_os("UMRI_BLESS").is_some() {
        std::fs::write(golden_path(), serde_json::to_string_pretty(&now).unwrap() + "\n").unwrap();
    }
    let text = std::fs::read_to_string(golden_path()).expect("golden file present");
    let want: Golden = serde_json::from_str(&text).unwrap();
    assert_eq!(now, want);
}

#[test]
fn texture_raises_total_variation() {
    let tv_at = |a: f64| {
        let p = make_phantom(&PhantomSpec { texture_amplitude: a, ..PhantomSpec::desk(3) }).unwrap();
        tv_norm(&p.image, 1e-8)
    };
    let (flat, desk, rough) = (tv_at(0.0), tv_at(PhantomSpec::desk(3).texture_amplitude), tv_at(0.9));
    assert!(flat < desk && desk < rough, "{flat} {desk} {rough}");
}

#[test]
fn coil_peaks_sit_in_distinct_places() {
    let p = make_phantom(&PhantomSpec::desk(REFERENCE_SEED)).unwrap();
    let maps = make_sens_maps(15, 128, 96, &p.support).unwrap();
    let peaks: Vec<usize> = maps
        .maps()
        .iter()
        .map(|m| {
            m.data()
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
                .unwrap()
                .0
        })
        .collect();
    for i in 0..peaks.len() {
        for j in i + 1..peaks.len() {
            assert_ne!(peaks[i], peaks[j], "coils {i} and {j}");
        }
    }
    let single = make_sens_maps(1, 128, 96, &p.support).unwrap();
    for (v, &inside) in single.maps()[0].data().iter().zip(&p.support) {
        if inside {
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn exact_recovery_from_full_sampling() {
    let p = make_phantom(&PhantomSpec::desk(21)).unwrap();
    let maps = make_sens_maps(15, 128, 96, &p.support).unwrap();
    let y = forward_multicoil(&p.image, &maps, &Mask::full(96)).unwrap();
    let zf = zero_filled(&y).unwrap();
    for ((a, b), &inside) in zf.data().iter().zip(p.magnitude().data()).zip(&p.support) {
        if inside {
            assert!((a - b).abs() < 1e-5);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn realized_acceleration_is_close_to_requested(
        width in 64usize..512,
        accel in prop::sample::select(vec![4u32, 8]),
        equispaced in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let mut spec = MaskSpec::standard(width, accel, seed);
        if equispaced {
            spec.kind = MaskKind::Equispaced;
        }
        let m = make_mask(&spec).unwrap();
        let realized = width as f64 / m.num_sampled() as f64;
        prop_assert!(realized >= 0.9 * accel as f64 && realized <= 1.1 * accel as f64);
        prop_assert_eq!(m.num_sampled(), spec.total_columns());
        prop_assert_eq!(m.center_band().len(), spec.center_columns());
        prop_assert_eq!(make_mask(&spec).unwrap(), m);
    }

    #[test]
    fn phantoms_are_deterministic_and_bounded(seed in any::<u64>()) {
        let spec = PhantomSpec { height: 32, width: 40, ..PhantomSpec::desk(seed) };
        let a = make_phantom(&spec).unwrap();
        prop_assert_eq!(&a, &make_phantom(&spec).unwrap());
        prop_assert!(a.magnitude().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
