use msenc_core::analysis::gmm::{cluster_pooling_maps, GmmOptions};
use msenc_core::rng_from_seed;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

fn blobs(centers: &[[f64; 2]], per: usize, sd: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    let noise = Normal::new(0.0, sd).unwrap();
    let mut out = Vec::new();
    for c in centers {
        for _ in 0..per {
            out.push(c[0] + noise.sample(&mut rng));
            out.push(c[1] + noise.sample(&mut rng));
        }
    }
    out
}

#[test]
fn log_likelihood_never_decreases() {
    for seed in 0..100 {
        let mut rng = rng_from_seed(seed + 1000);
        let (n, dim) = (60, 5);
        let maps: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let opts = GmmOptions {
            k: 4,
            seed,
            ..GmmOptions::default()
        };
        let fit = cluster_pooling_maps(&maps, n, dim, &opts).unwrap();
        let trace = &fit.model.log_likelihood_trace;
        assert!(!trace.is_empty());
        for w in trace.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-12 * w[0].abs().max(1.0),
                "seed {seed}: {} then {}",
                w[0],
                w[1]
            );
        }
    }
}

#[test]
fn recovers_two_blob_means() {
    let truth = [[-2.0, 1.0], [3.0, -1.5]];
    let maps = blobs(&truth, 2000, 0.3, 8);
    let opts = GmmOptions {
        k: 2,
        seed: 3,
        ..GmmOptions::default()
    };
    let fit = cluster_pooling_maps(&maps, 4000, 2, &opts).unwrap();
    assert!(fit.converged);
    let m = &fit.model.means;
    let found = [[m[0], m[1]], [m[2], m[3]]];
    for t in truth {
        let best = found
            .iter()
            .map(|f| (f[0] - t[0]).abs().max((f[1] - t[1]).abs()))
            .fold(f64::INFINITY, f64::min);
        assert!(best <= 0.05, "mean {t:?} missed by {best}");
    }
    assert!((fit.model.weights[0] - 0.5).abs() < 0.01);
}

#[test]
fn exemplars_belong_to_their_component() {
    let maps = blobs(&[[0.0, 0.0], [5.0, 5.0], [-5.0, 5.0]], 50, 0.2, 2);
    let opts = GmmOptions {
        k: 3,
        seed: 1,
        ..GmmOptions::default()
    };
    let fit = cluster_pooling_maps(&maps, 150, 2, &opts).unwrap();
    for (j, &row) in fit.exemplars.iter().enumerate() {
        assert_eq!(fit.assignments[row], j);
    }
    let mut blocks: Vec<usize> = fit.exemplars.iter().map(|r| r / 50).collect();
    blocks.sort();
    assert_eq!(blocks, vec![0, 1, 2]);
}

#[test]
fn variances_respect_floor() {
    // Identical rows would otherwise collapse to zero variance.
    let mut maps = vec![1.0; 20 * 3];
    maps.extend(vec![-1.0; 20 * 3]);
    let opts = GmmOptions {
        k: 2,
        ..GmmOptions::default()
    };
    let fit = cluster_pooling_maps(&maps, 40, 3, &opts).unwrap();
    assert!(fit.model.variances.iter().all(|&v| v >= opts.var_floor));
}

#[test]
fn same_seed_same_fit() {
    let maps = blobs(&[[0.0, 1.0], [2.0, 0.0]], 30, 0.5, 4);
    let opts = GmmOptions {
        k: 2,
        seed: 17,
        ..GmmOptions::default()
    };
    assert_eq!(
        cluster_pooling_maps(&maps, 60, 2, &opts).unwrap(),
        cluster_pooling_maps(&maps, 60, 2, &opts).unwrap()
    );
}
