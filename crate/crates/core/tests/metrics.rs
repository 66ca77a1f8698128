use msenc_core::encoder::EncoderParams;
use msenc_core::metrics::{build_report, challenge_score, median, r2_per_vertex, roi_scores};
use msenc_core::synth::{planted_prediction, synthesize, SynthSpec};
use msenc_core::{rng_from_seed, Error, LayerShape, Route};
use proptest::prelude::*;
use rand::Rng as _;

#[test]
fn perfect_and_mean_predictions() {
    let (n, v) = (6, 3);
    let mut rng = rng_from_seed(1);
    let target: Vec<f64> = (0..n * v).map(|_| rng.random_range(-1.0..1.0)).collect();
    let perfect = r2_per_vertex(&target, &target, n, v).unwrap();
    assert!(perfect.values.iter().all(|&r| r == 1.0));

    let mut means = vec![0.0; v];
    for row in target.chunks(v) {
        for j in 0..v {
            means[j] += row[j] / n as f64;
        }
    }
    let flat: Vec<f64> = (0..n).flat_map(|_| means.clone()).collect();
    let r2 = r2_per_vertex(&flat, &target, n, v).unwrap();
    assert!(r2.values.iter().all(|r| r.abs() < 1e-12));
}

#[test]
fn constant_vertex_is_undefined_and_skipped() {
    let target = [1.0, 5.0, 2.0, 5.0, 3.0, 5.0];
    let pred = [1.0, 4.0, 2.0, 4.0, 3.5, 4.0];
    let r2 = r2_per_vertex(&pred, &target, 3, 2).unwrap();
    assert_eq!(r2.undefined, vec![1]);
    assert!(r2.values[1].is_nan());
    assert_eq!(median(r2.values.iter().copied()), Some(r2.values[0]));
}

#[test]
fn challenge_two_vertex_case() {
    let s = challenge_score(&[0.5, 0.0], &[0.5, 0.5]).unwrap();
    assert_eq!(s.score, 0.5);
    assert_eq!(s.included, 2);
    let clipped = challenge_score(&[0.9, 0.2, 0.3], &[0.5, 0.4, 0.0]).unwrap();
    assert_eq!(clipped.score, 0.75);
    assert_eq!(clipped.excluded, 1);
    assert_eq!(challenge_score(&[0.1], &[0.0]).unwrap_err(), Error::AllVerticesExcluded);
}

#[test]
fn whole_brain_roi_equals_group_median() {
    let per_subject = vec![vec![0.1, 0.5, 0.3, 0.9], vec![0.2, 0.4, f64::NAN, 0.7]];
    let all = vec![("all".to_string(), vec![true; 4])];
    let halves = vec![
        ("front".to_string(), vec![true, true, false, false]),
        ("back".to_string(), vec![false, false, true, true]),
    ];
    let whole = roi_scores(&per_subject, &all).unwrap();
    let pooled = median(per_subject.iter().flatten().copied()).unwrap();
    assert_eq!(whole[0].median, Some(pooled));
    assert_eq!(whole[0].count, 7);
    let parts = roi_scores(&per_subject, &halves).unwrap();
    let (a, b) = (parts[0].median.unwrap(), parts[1].median.unwrap());
    assert!(a.min(b) <= pooled && pooled <= a.max(b));
}

#[test]
fn report_splits_by_subject() {
    let (v, subjects) = (2, [0, 1, 0, 1, 0, 1]);
    let target = [1.0, 2.0, 3.0, 1.0, 2.0, 0.0, 5.0, 3.0, 4.0, 4.0, 9.0, 1.0];
    let report = build_report(&target, &target, &subjects, 2, v, None, &[]).unwrap();
    assert_eq!(report.samples_per_subject, vec![3, 3]);
    assert_eq!(report.group_median, Some(1.0));
    assert!(report.challenge.is_none());
}

#[test]
fn group_route_equals_subject_route_without_subject_maps() {
    let spec = SynthSpec {
        num_subjects: 3,
        layer_shapes: vec![LayerShape::new(2, 2, 4), LayerShape::new(2, 1, 3)],
        latent_dim: 6,
        pca_dim: 4,
        activity_dim: 10,
        num_samples: 30,
        ..SynthSpec::desk()
    };
    let mut syn = synthesize(&spec).unwrap();
    let (d, k) = (spec.latent_dim, spec.pca_dim);
    let shared = syn.planted.encoder.clone();
    syn.planted.encoder = EncoderParams {
        subject_weight: vec![0.0; 3 * d * k],
        ..shared
    };
    let mut worst: f64 = 0.0;
    for i in 0..syn.data.len() {
        let a = planted_prediction(&syn, i, Route::Subject(syn.data.subjects[i])).unwrap();
        let b = planted_prediction(&syn, i, Route::Group).unwrap();
        worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(worst, f64::max);
    }
    assert!(worst <= 1e-6);
}

proptest! {
    #[test]
    fn r2_ignores_sample_order(seed in any::<u64>(), n in 2usize..20, v in 1usize..6, shift in 0usize..20) {
        let mut rng = rng_from_seed(seed);
        let target: Vec<f64> = (0..n * v).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pred: Vec<f64> = (0..n * v).map(|_| rng.random_range(-1.0..1.0)).collect();
        let base = r2_per_vertex(&pred, &target, n, v).unwrap();
        let rot = |m: &[f64]| {
            let mut rows: Vec<&[f64]> = m.chunks(v).collect();
            rows.rotate_left(shift % n);
            rows.reverse();
            rows.concat()
        };
        let moved = r2_per_vertex(&rot(&pred), &rot(&target), n, v).unwrap();
        for (a, b) in base.values.iter().zip(&moved.values) {
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
        }
    }
}
