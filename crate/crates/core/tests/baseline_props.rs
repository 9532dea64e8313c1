use cohwash_core::baselines::{asr_calibrate, asr_clean, fastica_fit, ica_round_trip, IcaConfig};
use cohwash_core::{Modality, Recording};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn noise(rng: &mut ChaCha8Rng, channels: usize, secs: usize) -> Vec<Vec<f64>> {
    (0..channels).map(|_| (0..secs * 200).map(|_| StandardNormal.sample(&mut *rng)).collect()).collect()
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn asr_never_amplifies_a_burst(seed in 0u64..1000, channel in 0usize..8, gain in 20.0f64..300.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = asr_calibrate(&Recording::new(Modality::Eeg, 200.0, noise(&mut rng, 8, 40)).unwrap(), 20.0).unwrap();
        let mut rows = noise(&mut rng, 8, 10);
        for v in &mut rows[channel][800..1000] {
            *v *= gain;
        }
        let dirty = Recording::new(Modality::Eeg, 200.0, rows).unwrap();
        let out = asr_clean(&dirty, &state).unwrap();
        let before = energy(&dirty.channel(channel)[800..1000]);
        let after = energy(&out.channel(channel)[800..1000]);
        prop_assert!(after < 0.1 * before, "burst energy {before} -> {after}");
        prop_assert!(out.rows().iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn asr_leaves_calibration_like_data_alone(seed in 0u64..1000, scale in 0.2f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = asr_calibrate(&Recording::new(Modality::Eeg, 200.0, noise(&mut rng, 6, 40)).unwrap(), 20.0).unwrap();
        let rows: Vec<Vec<f64>> = noise(&mut rng, 6, 10).into_iter().map(|r| r.into_iter().map(|v| v * scale).collect()).collect();
        let rec = Recording::new(Modality::Eeg, 200.0, rows).unwrap();
        let out = asr_clean(&rec, &state).unwrap();
        prop_assert_eq!(out.rows(), rec.rows());
    }

    #[test]
    fn ica_round_trip_reconstructs_any_mixture(seed in 0u64..1000, k in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = noise(&mut rng, k, 60);
        let mix: Vec<Vec<f64>> = (0..k).map(|_| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let rows = (0..k).map(|i| (0..src[0].len()).map(|t| (0..k).map(|j| mix[i][j] * src[j][t]).sum()).collect()).collect();
        let rec = Recording::new(Modality::Eeg, 200.0, rows).unwrap();
        let model = fastica_fit(&rec, &IcaConfig { max_iter: 50, ..IcaConfig::default() }).unwrap();
        let back = ica_round_trip(&rec, &model).unwrap();
        let scale = rec.rows().iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in back.rows().iter().flatten().zip(rec.rows().iter().flatten()) {
            prop_assert!((a - b).abs() < 1e-8 * scale.max(1.0));
        }
    }
}
