use proptest::prelude::*;

use super::*;
use crate::autodiff::Array2;
use crate::models::Checkpoint;
use crate::sampler::{sample_ring, MnistData, Rng};

fn rotate(samples: &Array2, angle: f64) -> Array2 {
    let (s, c) = angle.sin_cos();
    Array2::from_fn(samples.rows(), 2, |r, k| {
        let (x, y) = (samples.get(r, 0), samples.get(r, 1));
        if k == 0 {
            c * x - s * y
        } else {
            s * x + c * y
        }
    })
}

#[test]
fn all_samples_on_one_mode() {
    let spec = RingSpec::default();
    let samples = Array2::from_fn(500, 2, |_, k| if k == 0 { 1.0 } else { 0.0 });
    let r = mode_report(&samples, &spec, CoverageThresholds::default()).unwrap();
    assert_eq!(r.covered_modes, 1);
    assert_eq!(r.hq_fraction, 1.0);
    assert_eq!(r.per_mode_counts[0], 500);
    assert_eq!(r.per_mode_counts.iter().sum::<usize>(), 500);
}

#[test]
fn true_ring_covers_every_mode() {
    let spec = RingSpec::default();
    let samples = sample_ring(&spec, 10_000, &mut Rng::new(3));
    let r = mode_report(&samples, &spec, CoverageThresholds::default()).unwrap();
    assert_eq!(r.covered_modes, 8);
    // P(|N(0, σ²I₂)| <= 3σ) = 1 - exp(-4.5).
    let p = 1.0 - (-4.5f64).exp();
    let se = (p * (1.0 - p) / 10_000.0).sqrt();
    assert!((r.hq_fraction - p).abs() <= 3.0 * se, "{}", r.hq_fraction);
}

#[test]
fn uniform_square_is_low_quality() {
    let spec = RingSpec::default();
    let mut rng = Rng::new(4);
    let samples = Array2::from_fn(10_000, 2, |_, _| 4.0 * rng.uniform() - 2.0);
    let r = mode_report(&samples, &spec, CoverageThresholds::default()).unwrap();
    // Eight discs of radius 0.03 inside a 4x4 square.
    assert!(r.hq_fraction < 0.005, "{}", r.hq_fraction);
    assert_eq!(r.covered_modes, 0);
}

#[test]
fn mode_report_rejects_small_or_wide_input() {
    let spec = RingSpec::default();
    assert!(matches!(
        mode_report(&Array2::zeros(99, 2), &spec, CoverageThresholds::default()),
        Err(EvalError::TooFewSamples { need: 100, got: 99 })
    ));
    assert!(matches!(
        mode_report(&Array2::zeros(200, 3), &spec, CoverageThresholds::default()),
        Err(EvalError::Columns { expected: 2, got: 3 })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn coverage_invariant_under_mode_rotation(seed in any::<u64>(), turns in 0usize..8, n_kept in 1usize..=8) {
        let spec = RingSpec::default();
        let full = sample_ring(&spec, 2000, &mut Rng::new(seed));
        // Keep only samples near the first `n_kept` modes so coverage is nontrivial.
        let keep: Vec<usize> = (0..full.rows())
            .filter(|&r| {
                let a = full.get(r, 1).atan2(full.get(r, 0)).rem_euclid(std::f64::consts::TAU);
                ((a / (std::f64::consts::TAU / 8.0)).round() as usize % 8) < n_kept
            })
            .collect();
        prop_assume!(keep.len() >= MIN_MODE_SAMPLES);
        let samples = full.select_rows(&keep);
        let base = mode_report(&samples, &spec, CoverageThresholds::default()).unwrap();
        let angle = std::f64::consts::TAU * turns as f64 / 8.0;
        let rotated = mode_report(&rotate(&samples, angle), &spec, CoverageThresholds::default()).unwrap();
        prop_assert_eq!(base.covered_modes, rotated.covered_modes);
        prop_assert_eq!(base.covered_modes, n_kept);
        let mut a = base.per_mode_counts.clone();
        let mut b = rotated.per_mode_counts.clone();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn entropy_permutation_invariant(labels in prop::collection::vec(0u8..10, 1..300), shift in 1u8..10) {
        let a = class_report(&labels).unwrap();
        let b = class_report(&labels.iter().map(|l| (l + shift) % 10).collect::<Vec<_>>()).unwrap();
        prop_assert!((a.entropy - b.entropy).abs() < 1e-12);
        prop_assert!((a.l2_to_uniform - b.l2_to_uniform).abs() < 1e-12);
        prop_assert!(a.entropy <= 10f64.ln() + 1e-12);
    }
}

#[test]
fn uniform_classes_have_maximal_entropy() {
    let labels: Vec<u8> = (0..1000).map(|i| (i % 10) as u8).collect();
    let r = class_report(&labels).unwrap();
    assert!((r.entropy - 10f64.ln()).abs() < 1e-12);
    assert!(r.l2_to_uniform.abs() < 1e-12);
    assert_eq!(r.class_counts, [100; 10]);
}

#[test]
fn single_class_report() {
    let r = class_report(&[7; 50]).unwrap();
    assert_eq!(r.entropy, 0.0);
    assert!((r.l2_to_uniform - 0.9f64.sqrt()).abs() < 1e-12);
}

#[test]
fn small_class_report_matches_hand_value() {
    // (2, 1, 1) / 4: -(0.5 ln 0.5 + 2 * 0.25 ln 0.25) = 1.5 ln 2.
    let r = class_report(&[0, 0, 1, 2]).unwrap();
    assert!((r.entropy - 1.0397207708399179).abs() < 1e-15);
}

#[test]
fn class_report_errors() {
    assert!(matches!(class_report(&[]), Err(EvalError::TooFewSamples { .. })));
    assert!(matches!(class_report(&[1, 10]), Err(EvalError::BadLabel(10))));
}

#[test]
fn heatmap_of_origin_is_one_bright_cell() {
    let cfg = HeatmapConfig::default();
    let h = heatmap(&Array2::zeros(40, 2), &cfg).unwrap();
    let bright: Vec<usize> = (0..h.pixels.len()).filter(|&i| h.pixels[i] > 0).collect();
    assert_eq!(bright.len(), 1);
    assert_eq!(h.pixels[bright[0]], 255);
    // (0, 0) lies in column 32 and, counting from the top, row 31.
    assert_eq!(bright[0], 31 * 64 + 32);
    assert_eq!(h.dropped, 0);
}

#[test]
fn heatmap_cells_put_positive_y_on_top() {
    let cfg = HeatmapConfig::default();
    assert_eq!(Heatmap::cell(&cfg, -1.5, 1.5), Some((0, 0)));
    assert_eq!(Heatmap::cell(&cfg, 1.5, -1.5), Some((63, 63)));
    assert_eq!(Heatmap::cell(&cfg, 1.6, 0.0), None);
    assert_eq!(Heatmap::cell(&cfg, f64::NAN, 0.0), None);
}

#[test]
fn ring_heatmap_peaks_at_mode_means() {
    let spec = RingSpec::default();
    let cfg = HeatmapConfig::default();
    let h = heatmap(&sample_ring(&spec, 20_000, &mut Rng::new(9)), &cfg).unwrap();
    let mut cells: Vec<usize> = (0..h.counts.len()).collect();
    cells.sort_by_key(|&i| std::cmp::Reverse(h.counts[i]));
    let mut expected: Vec<(usize, usize)> = spec.mode_means().iter().map(|m| Heatmap::cell(&cfg, m[0], m[1]).unwrap()).collect();
    expected.sort_unstable();
    // Each mode's mass sits in the cell of its mean or a direct neighbour.
    for m in &expected {
        let near: u64 = (0..h.counts.len())
            .filter(|&i| (i / 64).abs_diff(m.0) <= 1 && (i % 64).abs_diff(m.1) <= 1)
            .map(|i| h.counts[i])
            .sum();
        assert!(near > 2000, "{m:?}: {near}");
    }
    let lit = h.pixels.iter().filter(|&&p| p > 0).count();
    assert!(lit <= 8 * 9, "{lit}");
}

#[test]
fn empty_heatmap_is_black_and_counts_drops() {
    let samples = Array2::from_rows(&[vec![5.0, 0.0], vec![0.0, -7.0]]).unwrap();
    let h = heatmap(&samples, &HeatmapConfig::default()).unwrap();
    assert!(h.pixels.iter().all(|&p| p == 0));
    assert_eq!(h.dropped, 2);
    let pgm = h.to_pgm();
    assert!(pgm.starts_with(b"P5\n64 64\n255\n"));
    assert_eq!(pgm.len(), 13 + 64 * 64);
}

#[test]
fn ipm_is_zero_on_the_diagonal() {
    for p in ipm_family() {
        assert_eq!(brute_force_ipm(&p, &p, 8).unwrap().value, 0.0);
    }
}

#[test]
fn distinct_points_are_antipodal() {
    let r = brute_force_ipm(&DiscreteDist::point(0), &DiscreteDist::point(1), 8).unwrap();
    assert!((r.value - 2.0).abs() < 1e-12);
    assert_eq!(r.argmax, vec![0, 4]);
}

#[test]
fn two_point_against_point_regression() {
    let p = DiscreteDist::uniform(vec![3, 5]).unwrap();
    let r = brute_force_ipm(&p, &DiscreteDist::point(3), 8).unwrap();
    assert!((r.value - 1.0).abs() < 1e-12, "{}", r.value);
    assert_eq!(r.atoms, vec![3, 5]);
    assert_eq!(r.argmax, vec![0, 4]);
}

#[test]
fn concentrated_p_inside_q_is_not_separated() {
    // With P = δ0 and Q on {0, 1}, the objective is q1 d (1 - 2 q0) <= 0 for q0 >= 1/2.
    let p = DiscreteDist::point(0);
    let q = DiscreteDist::new(vec![0, 1], vec![0.7, 0.3]).unwrap();
    assert_eq!(brute_force_ipm(&p, &q, 8).unwrap().value, 0.0);
    // Splitting each atom in two lets the critic separate them again.
    let split = brute_force_ipm(&p.split_atoms(), &q.split_atoms(), 8).unwrap();
    assert!((split.value - 0.09).abs() < 1e-12, "{}", split.value);
}

#[test]
fn separation_report_on_family() {
    let r = ipm_separation(&ipm_family(), 8, 0.05).unwrap();
    assert_eq!(r.pairs.len(), 100);
    assert!(r.diagonal_exact());
    let bad: Vec<(usize, usize)> = r.unseparated().iter().map(|v| (v.p, v.q)).collect();
    assert_eq!(bad, vec![(0, 2), (0, 3), (0, 6), (1, 2), (3, 2)]);
    for v in r.unseparated() {
        assert_eq!(v.value, 0.0);
        assert!(v.split_value.unwrap() > 0.05, "{v:?}");
    }
}

#[test]
fn ipm_budget_errors() {
    let p = DiscreteDist::uniform((0..7).collect()).unwrap();
    assert!(matches!(brute_force_ipm(&p, &p, 8), Err(EvalError::Budget(_))));
    let q = DiscreteDist::point(0);
    assert!(matches!(brute_force_ipm(&q, &q, 13), Err(EvalError::Budget(_))));
    assert!(matches!(brute_force_ipm(&q, &q, 1), Err(EvalError::Budget(_))));
    assert!(DiscreteDist::new(vec![0, 0], vec![0.5, 0.5]).is_err());
    assert!(DiscreteDist::new(vec![0, 1], vec![0.5, 0.6]).is_err());
}

#[test]
fn antipodal_two_by_two() {
    let r = antipodal_optimality_check(2, 2, 8, None).unwrap();
    assert!((r.value - 2.0).abs() < 1e-12);
    assert_eq!(r.argmax, vec![0, 0, 4, 4]);
    assert!(r.argmax_is_antipodal);
    assert_eq!(r.n_non_antipodal_maximizers, 0);
}

#[test]
fn antipodal_one_by_one() {
    let r = antipodal_optimality_check(1, 1, 8, None).unwrap();
    assert!((r.value - 2.0).abs() < 1e-12);
    assert!(r.argmax_is_antipodal);
}

#[test]
fn clipping_admits_non_antipodal_maximizers() {
    let r = antipodal_optimality_check(2, 2, 8, Some(1.0)).unwrap();
    assert!((r.value - 1.0).abs() < 1e-12);
    assert_eq!(r.argmax, vec![0, 0, 2, 2]);
    assert!(!r.argmax_is_antipodal);
    assert!(r.n_non_antipodal_maximizers > 0);
    assert!(r.n_maximizers > r.n_non_antipodal_maximizers);
}

#[test]
fn toy_distance_matches_closed_form() {
    let mut rng = Rng::new(11);
    for (s1, s2) in [(0.0, 1.0), (1.0, 1.0), (1.0, 2.0), (0.5, 3.0)] {
        let t = toy_distance_check(s1, s2, 1_000_000, &mut rng).unwrap();
        assert!((t.mc_estimate - t.analytic).abs() <= 3.0 * t.std_err, "{s1} {s2}: {t:?}");
        assert!(t.mean_match.abs() <= 3.0 * t.mean_match_std_err, "{t:?}");
    }
}

#[test]
fn toy_distance_needs_enough_samples() {
    assert!(matches!(
        toy_distance_check(0.0, 1.0, 9_999, &mut Rng::new(0)),
        Err(EvalError::TooFewSamples { .. })
    ));
}

/// Noisy copies of ten random prototypes in 16 dimensions.
fn prototype_data(n: usize, seed: u64) -> MnistData {
    let mut rng = Rng::new(seed);
    let protos: Vec<Vec<f64>> = (0..10).map(|_| (0..16).map(|_| rng.normal()).collect()).collect();
    let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
    let images = Array2::from_fn(n, 16, |r, c| protos[labels[r] as usize][c] + 0.3 * rng.normal());
    MnistData {
        images,
        labels,
        rows: 4,
        cols: 4,
    }
}

fn small_classifier_config() -> ClassifierConfig {
    ClassifierConfig {
        hidden: vec![32],
        lr: 1e-2,
        batch: 50,
        epochs: 3,
        holdout: 200,
        seed: 5,
    }
}

#[test]
fn classifier_separates_prototypes() {
    let data = prototype_data(1200, 1);
    let clf = train_classifier(&data, &small_classifier_config()).unwrap();
    assert!(clf.held_out_accuracy.unwrap() > 0.97, "{:?}", clf.held_out_accuracy);
    let labels = classify_digits(&clf, &data.images).unwrap();
    let right = labels.iter().zip(&data.labels).filter(|(a, b)| a == b).count();
    assert!(right as f64 / data.len() as f64 > 0.97);
}

#[test]
fn classifier_is_deterministic_and_round_trips() {
    let data = prototype_data(600, 2);
    let a = train_classifier(&data, &small_classifier_config()).unwrap();
    let b = train_classifier(&data, &small_classifier_config()).unwrap();
    assert_eq!(a, b);
    let back = Classifier::from_checkpoint(&Checkpoint::from_bytes(&a.to_checkpoint().to_bytes().unwrap()).unwrap()).unwrap();
    assert_eq!(back, a);
}

#[test]
fn untrained_classifier_refuses_to_label() {
    let clf = Classifier::untrained(16, &ClassifierConfig::default()).unwrap();
    assert!(matches!(classify_digits(&clf, &Array2::zeros(3, 16)), Err(EvalError::Contract(_))));
}
