//! Central finite-difference audit of every trainable block and of the
//! input features, in both modes.

use msenc_core::data::Batch;
use msenc_core::pca::{fit_pca, PcaMethod};
use msenc_core::{rng_from_seed, EncodingHead, LayerShape, Mode, Route};
use rand::Rng as _;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-6;
const DROPOUT: f64 = 0.3;
const DROPOUT_SEED: u64 = 99;

struct Problem {
    head: EncodingHead,
    batch: Batch,
    weights: Vec<f64>,
}

fn problem(seed: u64) -> Problem {
    let mut rng = rng_from_seed(seed);
    let shapes = [LayerShape::new(2, 2, 3), LayerShape::new(1, 3, 2)];
    let (d, s, v, k, n) = (4, 3, 6, 3, 5);
    let act: Vec<f64> = (0..30 * v).map(|_| rng.random_range(-1.0..1.0)).collect();
    let emb = fit_pca(&act, 30, v, k, PcaMethod::Auto).unwrap();
    let mut head = EncodingHead::init(&shapes, d, s, emb, &mut rng).unwrap();
    // Nonzero everywhere so no block sits at a trivial point.
    for p in head.trainable_mut() {
        for x in p.values.iter_mut() {
            *x += rng.random_range(-0.5..0.5);
        }
    }
    for p in &mut head.projections {
        for m in p.bn.running_mean.iter_mut() {
            *m = rng.random_range(-0.3..0.3);
        }
        for r in p.bn.running_var.iter_mut() {
            *r = rng.random_range(0.5..2.0);
        }
    }
    let layers = shapes
        .iter()
        .map(|sh| (0..n * sh.len()).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let routes = vec![
        Route::Subject(0),
        Route::Subject(2),
        Route::Group,
        Route::Subject(1),
        Route::Subject(2),
    ];
    let weights = (0..n * v).map(|_| rng.random_range(-1.0..1.0)).collect();
    Problem {
        head,
        batch: Batch { layers, routes },
        weights,
    }
}

fn objective(head: &EncodingHead, batch: &Batch, w: &[f64], mode: Mode) -> f64 {
    let mut rng = rng_from_seed(DROPOUT_SEED);
    let rate = if mode == Mode::Train { DROPOUT } else { 0.0 };
    let fwd = head.forward(batch, mode, rate, &mut rng).unwrap();
    fwd.predictions.iter().zip(w).map(|(p, w)| 0.5 * w * p * p).sum()
}

fn rel_err(numeric: &[f64], analytic: &[f64]) -> f64 {
    let diff: f64 = numeric
        .iter()
        .zip(analytic)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let other: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / scale.max(other).max(1e-300)
}

fn audit(mode: Mode, seed: u64) {
    let Problem {
        mut head,
        mut batch,
        weights,
    } = problem(seed);
    let mut rng = rng_from_seed(DROPOUT_SEED);
    let rate = if mode == Mode::Train { DROPOUT } else { 0.0 };
    let fwd = head.forward(&batch, mode, rate, &mut rng).unwrap();
    let dpred: Vec<f64> = fwd.predictions.iter().zip(&weights).map(|(p, w)| w * p).collect();
    let grads = head.backward(&batch, &fwd, &dpred, true).unwrap();
    let analytic: Vec<Vec<f64>> = grads.arrays().iter().map(|a| a.to_vec()).collect();
    let names: Vec<String> = head.trainable().iter().map(|p| p.name.clone()).collect();

    for (a, name) in names.iter().enumerate() {
        let len = analytic[a].len();
        let mut numeric = vec![0.0; len];
        for j in 0..len {
            let orig = head.trainable()[a].values[j];
            head.trainable_mut()[a].values[j] = orig + STEP;
            let up = objective(&head, &batch, &weights, mode);
            head.trainable_mut()[a].values[j] = orig - STEP;
            let down = objective(&head, &batch, &weights, mode);
            head.trainable_mut()[a].values[j] = orig;
            numeric[j] = (up - down) / (2.0 * STEP);
        }
        assert!(
            analytic[a].iter().any(|g| g.abs() > 1e-8),
            "{mode:?} {name}: gradient vanished"
        );
        let err = rel_err(&numeric, &analytic[a]);
        assert!(err <= TOL, "{mode:?} {name}: relative error {err:e}");
    }

    let inputs = grads.inputs.expect("input gradients requested");
    for l in 0..batch.layers.len() {
        let mut numeric = vec![0.0; batch.layers[l].len()];
        for j in 0..numeric.len() {
            let orig = batch.layers[l][j];
            batch.layers[l][j] = orig + STEP;
            let up = objective(&head, &batch, &weights, mode);
            batch.layers[l][j] = orig - STEP;
            let down = objective(&head, &batch, &weights, mode);
            batch.layers[l][j] = orig;
            numeric[j] = (up - down) / (2.0 * STEP);
        }
        let err = rel_err(&numeric, &inputs[l]);
        assert!(err <= TOL, "{mode:?} input layer {l}: relative error {err:e}");
    }
}

#[test]
fn train_mode_gradients_match_finite_differences() {
    for seed in 0..3 {
        audit(Mode::Train, seed);
    }
}

#[test]
fn eval_mode_gradients_match_finite_differences() {
    for seed in 0..3 {
        audit(Mode::Eval, seed);
    }
}

#[test]
fn group_routed_samples_give_no_subject_gradient() {
    let Problem { head, batch, weights } = problem(7);
    let mut only_group = batch.clone();
    only_group.routes = vec![Route::Group; batch.len()];
    let mut rng = rng_from_seed(0);
    let fwd = head.forward(&only_group, Mode::Train, 0.0, &mut rng).unwrap();
    let dpred: Vec<f64> = fwd.predictions.iter().zip(&weights).map(|(p, w)| w * p).collect();
    let grads = head.backward(&only_group, &fwd, &dpred, false).unwrap();
    assert!(grads.subject_weight.iter().all(|&g| g == 0.0));
    assert!(grads.inputs.is_none());
}
