//! Randomized invariants of the data pipeline, optimizer helpers and metrics.

mod common;

use deepsleep::data::annotations::{encode_tals, parse_tal_record, read_annotations};
use deepsleep::data::balance::balanced_indices;
use deepsleep::data::batching::split_lanes;
use deepsleep::data::cache::{read_cache, write_cache};
use deepsleep::data::edf::{parse_edf, write_edf};
use deepsleep::data::{split_folds, stage_counts, Annotation, Stage};
use deepsleep::eval::{accuracy, confusion, kappa, per_class_and_mf1, ConfusionMatrix};
use deepsleep::hypnogram::render_text;
use deepsleep::nn::Gradients;
use deepsleep::train::clip_global_norm;
use deepsleep::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn stage() -> impl Strategy<Value = Stage> {
    (0..Stage::COUNT).prop_map(|i| Stage::from_index(i).unwrap())
}

/// Stage lists that contain every stage at least once.
fn complete_stages() -> impl Strategy<Value = Vec<Stage>> {
    prop::collection::vec(stage(), 0..200).prop_map(|mut v| {
        v.extend(Stage::ALL);
        v
    })
}

proptest! {
    #[test]
    fn oversampling_balances_and_keeps_originals(stages in complete_stages(), seed in any::<u64>()) {
        let idx = balanced_indices(&stages, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let counts = stage_counts(idx.iter().map(|&i| stages[i]));
        let max = *stage_counts(stages.iter().copied()).iter().max().unwrap();
        prop_assert!(counts.iter().all(|&c| c == max));
        prop_assert_eq!(&idx[..stages.len()], &(0..stages.len()).collect::<Vec<_>>()[..]);
        prop_assert!(idx.iter().all(|&i| i < stages.len()));
    }

    #[test]
    fn oversampling_names_a_missing_stage(stages in prop::collection::vec(stage(), 1..50)) {
        let present = stage_counts(stages.iter().copied());
        prop_assume!(present.contains(&0));
        let err = balanced_indices(&stages, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err().to_string();
        let missing = Stage::ALL.iter().find(|s| present[s.index()] == 0).unwrap();
        prop_assert!(err.contains(missing.name()), "{}", err);
    }

    #[test]
    fn clipping_bounds_norm_and_keeps_direction(
        sizes in prop::collection::vec(1usize..20, 1..6),
        log_norm in -1.0f64..6.0,
        seed in any::<u64>(),
        threshold in 0.5f64..20.0,
    ) {
        let mut rng = common::rng(seed);
        let mut grads = Gradients(sizes.iter().map(|&n| Some(common::random_tensor(&mut rng, &[n], 1.0))).collect());
        let scale = 10f64.powf(log_norm) / grads.global_norm();
        for g in grads.0.iter_mut().flatten() {
            g.scale_in_place(scale);
        }
        let before = grads.clone();
        let pre = clip_global_norm(&mut grads, threshold);
        let post = grads.global_norm();
        prop_assert!(post <= threshold + 1e-9);
        if pre <= threshold {
            prop_assert_eq!(&grads.0, &before.0);
        } else {
            let ratio = post / pre;
            for (a, b) in grads.0.iter().flatten().zip(before.0.iter().flatten()) {
                for (x, y) in a.data().iter().zip(b.data()) {
                    prop_assert!((x - y * ratio).abs() <= 1e-12 * y.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn edf_write_parse_is_byte_identical(seed in any::<u64>(), n_signals in 1usize..=8, n_records in 0usize..6) {
        let mut rng = common::rng(seed);
        let (file, injected) = common::random_edf_plus(&mut rng, n_signals, n_records);
        let bytes = write_edf(&file).unwrap();
        let parsed = parse_edf(&bytes).unwrap();
        prop_assert_eq!(&parsed, &file);
        prop_assert_eq!(write_edf(&parsed).unwrap(), bytes);
        prop_assert_eq!(read_annotations(&parsed).unwrap(), injected);
    }

    #[test]
    fn tal_round_trip(anns in prop::collection::vec(
        (-1e5f64..1e5, prop::option::of(0f64..1e4), "[ -~]{1,20}"),
        0..10,
    )) {
        let anns: Vec<Annotation> = anns
            .into_iter()
            .map(|(onset, duration, text)| Annotation { onset, duration, text })
            .collect();
        let mut bytes = encode_tals(&anns);
        bytes.extend([0, 0, 0]);
        prop_assert_eq!(parse_tal_record(&bytes, "test").unwrap(), anns);
    }

    #[test]
    fn metric_bounds(counts in prop::array::uniform5(prop::array::uniform5(0u64..500))) {
        let cm = ConfusionMatrix::from_counts(counts);
        prop_assume!(cm.total() > 0);
        let acc = accuracy(&cm).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
        let (per, mf1) = per_class_and_mf1(&cm);
        prop_assert!((0.0..=1.0).contains(&mf1));
        for m in per {
            prop_assert!((0.0..=1.0).contains(&m.f1));
            let lo = m.precision.min(m.recall);
            let hi = m.precision.max(m.recall);
            prop_assert!(m.f1 >= lo - 1e-12 && m.f1 <= hi + 1e-12);
        }
        if let Ok(k) = kappa(&cm) {
            prop_assert!(k <= acc + 1e-12);
            prop_assert!(k >= -1.0 - 1e-12);
        }
    }

    #[test]
    fn confusion_ignores_order(pairs in prop::collection::vec((stage(), stage()), 1..100), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let (t, p): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
        let a = confusion(&t, &p).unwrap();
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (t2, p2): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
        prop_assert_eq!(a, confusion(&t2, &p2).unwrap());
        prop_assert_eq!(a.total(), pairs.len() as u64);
    }

    #[test]
    fn folds_partition_subjects(n in 1usize..70, k in 1usize..70) {
        prop_assume!(k <= n);
        let folds = split_folds(n, k).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut seen = vec![0; n];
        for f in &folds {
            for &t in &f.test {
                seen[t] += 1;
                prop_assert!(!f.train.contains(&t));
            }
            prop_assert_eq!(f.train.len() + f.test.len(), n);
            prop_assert!(f.test.len() == n / k || f.test.len() == n / k + 1);
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn lanes_cover_the_sequence(len in 1usize..500, lanes in 1usize..20) {
        prop_assume!(lanes <= len);
        let spans = split_lanes(len, lanes).unwrap();
        prop_assert_eq!(spans.len(), lanes);
        prop_assert_eq!(spans[0].span.start, 0);
        prop_assert_eq!(spans[lanes - 1].span.end, len);
        for w in spans.windows(2) {
            prop_assert_eq!(w[0].span.end, w[1].span.start);
            prop_assert!(!w[0].span.is_empty());
        }
    }

    #[test]
    fn text_hypnogram_has_one_char_per_epoch(stages in prop::collection::vec(stage(), 0..300)) {
        prop_assert_eq!(render_text(&stages).chars().count(), stages.len());
    }
}

#[test]
fn cache_round_trip_preserves_subjects() {
    let subjects = common::tiny_subjects(3, 12, 9);
    let bytes = write_cache(&subjects).unwrap();
    assert_eq!(read_cache(&bytes).unwrap(), subjects);
    let mut extended = bytes.clone();
    extended.push(0);
    assert!(read_cache(&extended).is_err());
    assert!(read_cache(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn gradient_norm_of_nothing_is_zero() {
    let mut g = Gradients(vec![None, Some(Tensor::zeros([3]))]);
    assert_eq!(clip_global_norm(&mut g, 1.0), 0.0);
}
