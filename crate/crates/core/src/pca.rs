//! PCA activity embedding: a frozen affine decoder `x = basis · z + center`.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg;
use crate::{Error, Result};

/// How the principal axes are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PcaMethod {
    /// Covariance when `V ≤ N`, Gram matrix otherwise.
    #[default]
    Auto,
    /// Eigendecomposition of the `V×V` covariance.
    Covariance,
    /// Eigendecomposition of the `N×N` Gram matrix of centered rows.
    Gram,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaEmbedding {
    pub dim: usize,
    pub components: usize,
    /// `V×K`, row-major, orthonormal columns (zero columns past `rank`).
    pub basis: Vec<f64>,
    pub center: Vec<f64>,
    /// Nonincreasing, nonnegative; `singular_value² / (N - 1)`.
    pub explained_variance: Vec<f64>,
    /// Number of non-padded components.
    pub rank: usize,
    pub frozen: bool,
}

/// Fits a `k`-component embedding to the rows of an `n×v` activity matrix.
///
/// Components beyond the numerical rank of the centered data are set to zero
/// and counted out of [`PcaEmbedding::rank`]; callers decide whether to warn.
pub fn fit_pca(activity: &[f64], n: usize, v: usize, k: usize, method: PcaMethod) -> Result<PcaEmbedding> {
    if activity.len() != n * v {
        return Err(Error::ShapeMismatch {
            what: "PCA input",
            expected: n * v,
            actual: activity.len(),
        });
    }
    if k == 0 || k > n || k > v {
        return Err(Error::InvalidConfig(alloc::format!(
            "PCA needs 1 <= K <= min(N, V); got K={k}, N={n}, V={v}"
        )));
    }
    if activity.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput { what: "PCA input" });
    }
    let mut center = vec![0.0; v];
    for row in activity.chunks_exact(v) {
        for (c, x) in center.iter_mut().zip(row) {
            *c += x;
        }
    }
    center.iter_mut().for_each(|c| *c /= n as f64);
    let mut centered = activity.to_vec();
    for row in centered.chunks_exact_mut(v) {
        for (x, c) in row.iter_mut().zip(&center) {
            *x -= c;
        }
    }
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };

    let use_gram = match method {
        PcaMethod::Auto => v > n,
        PcaMethod::Covariance => false,
        PcaMethod::Gram => true,
    };

    let mut basis = vec![0.0; v * k];
    let mut variance = vec![0.0; k];
    if use_gram {
        let mut gram = vec![0.0; n * n];
        linalg::gemm_nt_acc(&centered, &centered, &mut gram, n, v, n);
        let (vals, vecs) = linalg::symmetric_eigen(&gram, n);
        for j in 0..k {
            let lambda = vals[j].max(0.0);
            variance[j] = lambda / denom;
            let sigma = libm::sqrt(lambda);
            if sigma == 0.0 {
                continue;
            }
            // v_j = Xcᵀ u_j / σ_j
            for i in 0..n {
                let u = vecs[i * n + j] / sigma;
                if u == 0.0 {
                    continue;
                }
                for r in 0..v {
                    basis[r * k + j] += centered[i * v + r] * u;
                }
            }
        }
    } else {
        let mut cov = vec![0.0; v * v];
        linalg::gemm_tn_acc(&centered, &centered, &mut cov, n, v, v);
        cov.iter_mut().for_each(|c| *c /= denom);
        let (vals, vecs) = linalg::symmetric_eigen(&cov, v);
        for j in 0..k {
            variance[j] = vals[j].max(0.0);
            for r in 0..v {
                basis[r * k + j] = vecs[r * v + j];
            }
        }
    }

    // Drop directions that carry no variance relative to the leading one.
    let top = variance.first().copied().unwrap_or(0.0);
    let tol = top * 1e-12 * (n.max(v) as f64);
    let rank = if top == 0.0 {
        0
    } else {
        variance[..k].iter().position(|&x| x <= tol).unwrap_or(k)
    };
    for j in rank..k {
        variance[j] = 0.0;
        for r in 0..v {
            basis[r * k + j] = 0.0;
        }
    }
    if use_gram {
        // Re-orthonormalize to clean up rounding from the Gram route.
        let mut sub = vec![0.0; v * rank];
        for r in 0..v {
            sub[r * rank..(r + 1) * rank].copy_from_slice(&basis[r * k..r * k + rank]);
        }
        linalg::orthonormalize_columns(&mut sub, v, rank);
        for r in 0..v {
            basis[r * k..r * k + rank].copy_from_slice(&sub[r * rank..(r + 1) * rank]);
        }
    }
    fix_signs(&mut basis, v, k);

    Ok(PcaEmbedding {
        dim: v,
        components: k,
        basis,
        center,
        explained_variance: variance,
        rank,
        frozen: true,
    })
}

/// Flips each column so its largest-magnitude entry (first on ties) is positive.
fn fix_signs(basis: &mut [f64], v: usize, k: usize) {
    for j in 0..k {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for r in 0..v {
            let x = basis[r * k + j];
            if x.abs() > best {
                best = x.abs();
                sign = if x < 0.0 { -1.0 } else { 1.0 };
            }
        }
        if sign < 0.0 {
            for r in 0..v {
                basis[r * k + j] = -basis[r * k + j];
            }
        }
    }
}

impl PcaEmbedding {
    /// `basis · z + center`.
    pub fn reconstruct(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.components {
            return Err(Error::ShapeMismatch {
                what: "embedding latent",
                expected: self.components,
                actual: z.len(),
            });
        }
        let mut out = self.center.clone();
        linalg::gemm_acc(&self.basis, z, &mut out, self.dim, self.components, 1);
        Ok(out)
    }

    /// `basisᵀ · (x - center)`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::ShapeMismatch {
                what: "embedding input",
                expected: self.dim,
                actual: x.len(),
            });
        }
        let centered: Vec<f64> = x.iter().zip(&self.center).map(|(a, c)| a - c).collect();
        let mut z = vec![0.0; self.components];
        linalg::gemm_acc(&centered, &self.basis, &mut z, 1, self.dim, self.components);
        Ok(z)
    }

    /// Batched reconstruction of `n` latents (`n×K` → `n×V`).
    pub(crate) fn reconstruct_batch(&self, z: &[f64], n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n * self.dim);
        for _ in 0..n {
            out.extend_from_slice(&self.center);
        }
        linalg::gemm_nt_acc(z, &self.basis, &mut out, n, self.components, self.dim);
        out
    }

    /// First `count` principal axes as a `count×V` array, one map per row.
    pub fn export_pc_maps(&self, count: usize) -> Result<Vec<f64>> {
        if count > self.components {
            return Err(Error::CountTooLarge {
                count,
                available: self.components,
            });
        }
        let mut maps = vec![0.0; count * self.dim];
        for j in 0..count {
            for r in 0..self.dim {
                maps[j * self.dim + r] = self.basis[r * self.components + j];
            }
        }
        Ok(maps)
    }

    /// Largest deviation of `basisᵀ·basis` from the identity over the
    /// non-padded columns.
    pub fn orthonormality_error(&self) -> f64 {
        let k = self.components;
        let mut worst = 0.0f64;
        for a in 0..self.rank {
            for b in 0..self.rank {
                let mut s = 0.0;
                for r in 0..self.dim {
                    s += self.basis[r * k + a] * self.basis[r * k + b];
                }
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((s - target).abs());
            }
        }
        worst
    }
}
