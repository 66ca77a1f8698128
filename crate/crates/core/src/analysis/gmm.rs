//! Diagonal-covariance Gaussian mixture fit by EM, used to pick exemplar
//! spatial pooling maps.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::{rng_from_seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmOptions {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once the per-point log-likelihood improves by less than this.
    pub tol: f64,
    pub var_floor: f64,
    pub max_retries: usize,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self {
            k: 8,
            seed: 0,
            max_iter: 200,
            tol: 1e-6,
            var_floor: 1e-6,
            max_retries: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub k: usize,
    pub dim: usize,
    /// `k×dim`.
    pub means: Vec<f64>,
    /// `k×dim`, each at least the variance floor.
    pub variances: Vec<f64>,
    pub weights: Vec<f64>,
    /// Mean per-point log-likelihood before each M-step since the last
    /// reinitialization.
    pub log_likelihood_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Per component, the row with the highest responsibility.
    pub exemplars: Vec<usize>,
    /// Per row, the most responsible component.
    pub assignments: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub reinitializations: usize,
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_pp(data: &[f64], n: usize, dim: usize, k: usize, rng: &mut crate::Rng) -> Vec<f64> {
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centers = Vec::with_capacity(k * dim);
    centers.extend_from_slice(row(rng.random_range(0..n)));
    let mut best: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centers[..dim])).collect();
    for _ in 1..k {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &b) in best.iter().enumerate() {
                if target < b {
                    chosen = i;
                    break;
                }
                target -= b;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = row(pick).to_vec();
        for (i, b) in best.iter_mut().enumerate() {
            *b = b.min(sq_dist(row(i), &c));
        }
        centers.extend_from_slice(&c);
    }
    centers
}

/// E-step: responsibilities (`n×k`) and the mean per-point log-likelihood.
fn e_step(data: &[f64], n: usize, m: &GmmModel, resp: &mut [f64]) -> f64 {
    let (k, dim) = (m.k, m.dim);
    let norm: Vec<f64> = (0..k)
        .map(|j| {
            let log_det: f64 = m.variances[j * dim..(j + 1) * dim].iter().map(|v| libm::log(*v)).sum();
            libm::log(m.weights[j]) - 0.5 * (dim as f64 * LN_2PI + log_det)
        })
        .collect();
    let mut total = 0.0;
    for i in 0..n {
        let x = &data[i * dim..(i + 1) * dim];
        let r = &mut resp[i * k..(i + 1) * k];
        for j in 0..k {
            let mu = &m.means[j * dim..(j + 1) * dim];
            let var = &m.variances[j * dim..(j + 1) * dim];
            let mut q = 0.0;
            for t in 0..dim {
                let c = x[t] - mu[t];
                q += c * c / var[t];
            }
            r[j] = norm[j] - 0.5 * q;
        }
        let top = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = r.iter().map(|l| libm::exp(l - top)).sum();
        let ll = top + libm::log(sum);
        for l in r.iter_mut() {
            *l = libm::exp(*l - ll);
        }
        total += ll;
    }
    total / n as f64
}

/// Fits a diagonal GMM to the rows of an `n×dim` matrix (one pooling map per
/// row) and picks one exemplar row per component.
///
/// Means start from k-means++ seeding, variances from the per-dimension data
/// variance, weights uniform. A component whose total responsibility
/// collapses is moved to the row farthest from the other means and the
/// likelihood trace restarts.
pub fn cluster_pooling_maps(maps: &[f64], n: usize, dim: usize, opts: &GmmOptions) -> Result<GmmFit> {
    let k = opts.k;
    if maps.len() != n * dim {
        return Err(Error::ShapeMismatch {
            what: "pooling maps",
            expected: n * dim,
            actual: maps.len(),
        });
    }
    if k == 0 || k > n || dim == 0 {
        return Err(Error::InvalidConfig(alloc::format!(
            "need 1 <= k <= number of maps; got k={k}, n={n}"
        )));
    }
    let mut rng = rng_from_seed(opts.seed);
    let row = |i: usize| &maps[i * dim..(i + 1) * dim];

    let mut mean_all = vec![0.0; dim];
    for i in 0..n {
        for (m, x) in mean_all.iter_mut().zip(row(i)) {
            *m += x;
        }
    }
    mean_all.iter_mut().for_each(|m| *m /= n as f64);
    let mut var_all = vec![0.0; dim];
    for i in 0..n {
        for t in 0..dim {
            let c = row(i)[t] - mean_all[t];
            var_all[t] += c * c;
        }
    }
    var_all
        .iter_mut()
        .for_each(|v| *v = (*v / n as f64).max(opts.var_floor));

    let mut model = GmmModel {
        k,
        dim,
        means: kmeans_pp(maps, n, dim, k, &mut rng),
        variances: var_all.iter().copied().cycle().take(k * dim).collect(),
        weights: vec![1.0 / k as f64; k],
        log_likelihood_trace: Vec::new(),
    };
    let mut resp = vec![0.0; n * k];
    let mut converged = false;
    let mut iterations = 0;
    let mut reinitializations = 0;

    for _ in 0..opts.max_iter {
        iterations += 1;
        let ll = e_step(maps, n, &model, &mut resp);
        if let Some(&prev) = model.log_likelihood_trace.last() {
            model.log_likelihood_trace.push(ll);
            if ll - prev < opts.tol {
                converged = true;
                break;
            }
        } else {
            model.log_likelihood_trace.push(ll);
        }

        let nk: Vec<f64> = (0..k).map(|j| (0..n).map(|i| resp[i * k + j]).sum()).collect();
        if let Some(bad) = nk.iter().position(|&c| c < 1e-8) {
            if reinitializations >= opts.max_retries {
                return Err(Error::DegenerateComponent {
                    retries: reinitializations,
                });
            }
            reinitializations += 1;
            let far = (0..n)
                .max_by(|&a, &b| {
                    let da = (0..k)
                        .filter(|&j| j != bad)
                        .map(|j| sq_dist(row(a), &model.means[j * dim..(j + 1) * dim]))
                        .fold(f64::INFINITY, f64::min);
                    let db = (0..k)
                        .filter(|&j| j != bad)
                        .map(|j| sq_dist(row(b), &model.means[j * dim..(j + 1) * dim]))
                        .fold(f64::INFINITY, f64::min);
                    da.total_cmp(&db).then(b.cmp(&a))
                })
                .expect("n >= 1");
            model.means[bad * dim..(bad + 1) * dim].copy_from_slice(row(far));
            model.variances[bad * dim..(bad + 1) * dim].copy_from_slice(&var_all);
            model.weights.iter_mut().for_each(|w| *w = 1.0 / k as f64);
            model.log_likelihood_trace.clear();
            continue;
        }

        for j in 0..k {
            let mu = &mut model.means[j * dim..(j + 1) * dim];
            mu.iter_mut().for_each(|m| *m = 0.0);
            for i in 0..n {
                let r = resp[i * k + j];
                for (m, x) in mu.iter_mut().zip(row(i)) {
                    *m += r * x;
                }
            }
            mu.iter_mut().for_each(|m| *m /= nk[j]);
            let var = &mut model.variances[j * dim..(j + 1) * dim];
            var.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..n {
                let r = resp[i * k + j];
                let mean = &model.means[j * dim..(j + 1) * dim];
                for ((v, x), m) in var.iter_mut().zip(row(i)).zip(mean) {
                    *v += r * (x - m) * (x - m);
                }
            }
            var.iter_mut().for_each(|v| *v = (*v / nk[j]).max(opts.var_floor));
            model.weights[j] = nk[j] / n as f64;
        }
    }
    if !converged {
        // Responsibilities must describe the final parameters.
        let ll = e_step(maps, n, &model, &mut resp);
        model.log_likelihood_trace.push(ll);
    }

    let exemplars = (0..k)
        .map(|j| {
            (0..n)
                .max_by(|&a, &b| resp[a * k + j].total_cmp(&resp[b * k + j]).then(b.cmp(&a)))
                .expect("n >= 1")
        })
        .collect();
    let assignments = (0..n)
        .map(|i| {
            (0..k)
                .max_by(|&a, &b| resp[i * k + a].total_cmp(&resp[i * k + b]).then(b.cmp(&a)))
                .expect("k >= 1")
        })
        .collect();
    Ok(GmmFit {
        model,
        exemplars,
        assignments,
        iterations,
        converged,
        reinitializations,
    })
}
