use cohwash_core::coherence::{self, naive, CoherenceConfig, CoherenceEngine};
use cohwash_core::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_frame(rng: &mut ChaCha8Rng, c: usize) -> Tensor {
    Tensor::new(&[c, 200], (0..c * 200).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.shape()[0]).map(|c| t.row(c).to_vec()).collect()
}

#[test]
fn production_matches_naive_loops() {
    let engine = CoherenceEngine::new(CoherenceConfig::default(), 200).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let (e, i) = (random_frame(&mut rng, 32), random_frame(&mut rng, 9));
        let fast = engine.score(&e, &i).unwrap();
        let slow = naive::coherence(&rows(&e), &rows(&i), 40);
        assert!((fast - slow).abs() < 1e-6, "{fast} vs {slow}");
    }
}

#[test]
fn identical_signals_score_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base = random_frame(&mut rng, 1);
    let e = Tensor::new(&[32, 200], base.data().repeat(32)).unwrap();
    let i = Tensor::new(&[9, 200], base.data().iter().map(|v| v * 4.0).collect::<Vec<_>>().repeat(9)).unwrap();
    let s = coherence::frame_coherence(&e, &i, &CoherenceConfig::default()).unwrap();
    assert!((s - 1.0).abs() < 1e-9, "{s}");
}

#[test]
fn swapping_eeg_channels_swaps_rows() {
    let engine = CoherenceEngine::new(CoherenceConfig::default(), 200).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (e, i) = (random_frame(&mut rng, 4), random_frame(&mut rng, 3));
    let mut r = rows(&e);
    r.swap(0, 2);
    let swapped = Tensor::from_rows(&r).unwrap();
    let a = engine.correlation(&e, &i).unwrap().values;
    let b = engine.correlation(&swapped, &i).unwrap().values;
    assert_eq!(a.row(0), b.row(2));
    assert_eq!(a.row(2), b.row(0));
    assert_eq!(a.row(1), b.row(1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn std_norm_affine_invariant(x in prop::collection::vec(-100.0f64..100.0, 3..60), a in 0.1f64..50.0, b in -20.0f64..20.0) {
        prop_assume!(x.iter().any(|v| (v - x[0]).abs() > 1e-3));
        let z = coherence::std_norm(&x);
        let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let zy = coherence::std_norm(&y);
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        let sd = (z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64).sqrt();
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!(sd <= 1.0 && sd >= 1.0 - 1e-6);
        for (p, q) in z.iter().zip(&zy) {
            prop_assert!((p - q).abs() < 1e-6);
        }
    }

    #[test]
    fn scores_are_bounded_and_scale_free(seed in any::<u64>(), gain in 0.01f64..100.0, ch in 0usize..4) {
        let engine = CoherenceEngine::new(CoherenceConfig::default(), 200).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (e, i) = (random_frame(&mut rng, 4), random_frame(&mut rng, 3));
        let m = engine.correlation(&e, &i).unwrap();
        prop_assert!(m.values.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let mut r = rows(&e);
        r[ch].iter_mut().for_each(|v| *v *= gain);
        let scaled = Tensor::from_rows(&r).unwrap();
        let d = (engine.score(&scaled, &i).unwrap() - coherence::coherence_score(&m)).abs();
        prop_assert!(d < 1e-9, "score moved by {}", d);
    }
}
