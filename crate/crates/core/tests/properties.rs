use mosare::dataio::{apply_mask, drop_incomplete};
use mosare::evaluation::{auc, auc_binary, Summary};
use mosare::fusion::top_k_indices;
use mosare::{generate_synthetic, MaskStrategy, Modality, SyntheticSpec};
use ndarray::Array2;
use proptest::prelude::*;

fn labelled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (4usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(any::<bool>(), n).prop_filter("both classes", |v| {
                v.iter().any(|&b| b) && v.iter().any(|&b| !b)
            }),
        )
    })
}

proptest! {
    #[test]
    fn auc_ignores_monotone_transforms((scores, pos) in labelled_scores(), a in 0.1f64..3.0, b in -2.0f64..2.0) {
        let base = auc_binary(&scores, &pos).unwrap();
        let moved: Vec<f64> = scores.iter().map(|s| (a * s + b).tanh() + a * s).collect();
        prop_assert!((auc_binary(&moved, &pos).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn auc_ignores_sample_order((scores, pos) in labelled_scores(), rot in 0usize..40) {
        let base = auc_binary(&scores, &pos).unwrap();
        let k = rot % scores.len();
        let mut s = scores.clone();
        let mut p = pos.clone();
        s.rotate_left(k);
        p.rotate_left(k);
        prop_assert!((auc_binary(&s, &p).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn auc_of_negated_scores_is_complement((scores, pos) in labelled_scores()) {
        let base = auc_binary(&scores, &pos).unwrap();
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((auc_binary(&neg, &pos).unwrap() - (1.0 - base)).abs() < 1e-12);
    }

    #[test]
    fn multiclass_auc_stays_in_unit_interval(n in 6usize..30, seed in any::<u64>()) {
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let mut state = seed;
        let probs = Array2::from_shape_fn((n, 3), |_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        });
        let v = auc(probs.view(), &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn top_k_matches_full_sort(scores in prop::collection::vec(-3i32..3, 1..12), k in 1usize..12) {
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        let k = k.min(scores.len());
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        prop_assert_eq!(top_k_indices(&scores, k), order[..k].to_vec());
    }

    #[test]
    fn masking_keeps_one_modality_and_hits_the_fraction(
        fraction in 0.0f64..=0.5,
        seed in any::<u64>(),
        spread in any::<bool>(),
    ) {
        let ds = generate_synthetic(&SyntheticSpec {
            samples_per_class: 10,
            dim: 4,
            c: 2,
            n_h: 2,
            ..Default::default()
        }).unwrap();
        let strategy = if spread { MaskStrategy::Spread } else { MaskStrategy::Independent };
        let masked = apply_mask(&ds.records, fraction, seed, strategy).unwrap();
        let n = masked.len();
        let want = (fraction * n as f64).round() as usize;
        for m in Modality::ALL {
            let lost = masked.iter().filter(|r| !r.modality(m).present).count();
            prop_assert_eq!(lost, want);
            for r in masked.iter().filter(|r| !r.modality(m).present) {
                prop_assert!(r.modality(m).global.iter().all(|&v| v == 0.0));
                prop_assert!(r.modality(m).local.iter().all(|&v| v == 0.0));
            }
        }
        prop_assert!(masked.iter().all(|r| r.n_present() >= 1));
        prop_assert!(drop_incomplete(&masked).iter().all(|r| r.is_complete()));
        let again = apply_mask(&ds.records, fraction, seed, strategy).unwrap();
        prop_assert_eq!(masked, again);
    }

    #[test]
    fn summary_of_constant_folds_has_zero_spread(v in -1.0f64..1.0, k in 2usize..8) {
        let s = Summary::of(vec![v; k]);
        prop_assert!((s.mean - v).abs() < 1e-12);
        prop_assert!(s.std.abs() < 1e-12);
    }
}
