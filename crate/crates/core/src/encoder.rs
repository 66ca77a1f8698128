//! Shared plus subject-specific linear maps from the latent feature space to
//! the activity latent space.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg;
use crate::{Error, Result, Rng};

/// Which pathway produces a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Route {
    /// Shared path plus the given subject's map.
    Subject(usize),
    /// Shared path only (subject-agnostic prediction).
    Group,
}

/// `shared_weight` is `D×K`, `subject_weight` is `S×D×K`, all row-major.
/// There is a single shared bias and no per-subject bias.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub latent_dim: usize,
    pub output_dim: usize,
    pub shared_weight: Vec<f64>,
    pub shared_bias: Vec<f64>,
    pub subject_weight: Vec<f64>,
}

impl EncoderParams {
    pub fn zeros(latent_dim: usize, output_dim: usize, num_subjects: usize) -> Self {
        Self {
            latent_dim,
            output_dim,
            shared_weight: vec![0.0; latent_dim * output_dim],
            shared_bias: vec![0.0; output_dim],
            subject_weight: vec![0.0; num_subjects * latent_dim * output_dim],
        }
    }

    /// Shared weight from `N(0, 1/D)`, zero bias, zero subject maps.
    pub fn init(latent_dim: usize, output_dim: usize, num_subjects: usize, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(latent_dim, output_dim, num_subjects);
        let std = 1.0 / libm::sqrt(latent_dim as f64);
        for w in p.shared_weight.iter_mut() {
            *w = std * crate::std_normal(rng);
        }
        p
    }

    pub fn num_subjects(&self) -> usize {
        self.subject_weight.len() / self.block()
    }

    fn block(&self) -> usize {
        self.latent_dim * self.output_dim
    }

    pub fn subject_block(&self, subject: usize) -> &[f64] {
        let b = self.block();
        &self.subject_weight[subject * b..(subject + 1) * b]
    }

    pub fn subject_block_mut(&mut self, subject: usize) -> &mut [f64] {
        let b = self.block();
        &mut self.subject_weight[subject * b..(subject + 1) * b]
    }

    pub fn check_route(&self, route: Route) -> Result<()> {
        match route {
            Route::Subject(s) if s >= self.num_subjects() => Err(Error::SubjectOutOfRange {
                subject: s,
                num_subjects: self.num_subjects(),
            }),
            _ => Ok(()),
        }
    }

    /// Maps one latent vector to the activity latent space.
    pub fn encode(&self, latent: &[f64], route: Route) -> Result<Vec<f64>> {
        if latent.len() != self.latent_dim {
            return Err(Error::ShapeMismatch {
                what: "encoder input",
                expected: self.latent_dim,
                actual: latent.len(),
            });
        }
        self.check_route(route)?;
        let mut out = self.shared_bias.clone();
        linalg::gemm_acc(
            latent,
            &self.shared_weight,
            &mut out,
            1,
            self.latent_dim,
            self.output_dim,
        );
        if let Route::Subject(s) = route {
            linalg::gemm_acc(
                latent,
                self.subject_block(s),
                &mut out,
                1,
                self.latent_dim,
                self.output_dim,
            );
        }
        Ok(out)
    }

    /// Appends a zero-initialized subject slot and returns its index. A new
    /// subject therefore starts with the group prediction.
    pub fn add_subject(&mut self) -> usize {
        let idx = self.num_subjects();
        self.subject_weight.extend(core::iter::repeat_n(0.0, self.block()));
        idx
    }
}
