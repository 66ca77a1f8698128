//! In-memory sample container, activity-space embedding, and split
//! assignment.

use alloc::vec;
use alloc::vec::Vec;

use crate::encoder::Route;
use crate::projection::{FeatureStack, LayerShape};
use crate::{Error, Result};

/// Scatters a subject-space vector into the union vertex space. Vertices
/// outside `valid_mask` are zero.
pub fn embed_activity(raw: &[f64], valid_mask: &[bool]) -> Result<Vec<f64>> {
    let expected = valid_mask.iter().filter(|&&m| m).count();
    if raw.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            actual: raw.len(),
        });
    }
    let mut out = vec![0.0; valid_mask.len()];
    let mut src = raw.iter();
    for (o, &m) in out.iter_mut().zip(valid_mask) {
        if m {
            *o = *src.next().expect("counted above");
        }
    }
    Ok(out)
}

/// Inverse of [`embed_activity`]: keeps the mask-true entries in order.
pub fn gather_activity(values: &[f64], valid_mask: &[bool]) -> Result<Vec<f64>> {
    if values.len() != valid_mask.len() {
        return Err(Error::LengthMismatch {
            expected: valid_mask.len(),
            actual: values.len(),
        });
    }
    Ok(values
        .iter()
        .zip(valid_mask)
        .filter_map(|(&v, &m)| m.then_some(v))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SplitLabel {
    Train,
    Val,
    Test,
}

impl SplitLabel {
    pub const ALL: [SplitLabel; 3] = [SplitLabel::Train, SplitLabel::Val, SplitLabel::Test];

    pub fn name(self) -> &'static str {
        match self {
            SplitLabel::Train => "train",
            SplitLabel::Val => "val",
            SplitLabel::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub labels: Vec<SplitLabel>,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn indices(&self, label: SplitLabel) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == label).then_some(i))
            .collect()
    }
}

/// Default train/val/test proportions.
pub const DEFAULT_SPLIT_RATIOS: [f64; 3] = [0.85, 0.10, 0.05];

/// Largest-remainder apportionment of `n` items; ties go to the earlier
/// (train-side) bucket.
pub fn split_counts(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    validate_ratios(ratios)?;
    let quotas: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts = [0usize; 3];
    let mut rems = [0f64; 3];
    for i in 0..3 {
        // Nudge before flooring so 0.85 * 20 lands on 17, not 16.999...
        let q = quotas[i] + 1e-9;
        counts[i] = libm::floor(q) as usize;
        rems[i] = quotas[i] - counts[i] as f64;
    }
    let mut left = n - counts.iter().sum::<usize>().min(n);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let (ra, rb) = (rems[a], rems[b]);
        if (ra - rb).abs() <= 1e-9 {
            a.cmp(&b)
        } else {
            rb.total_cmp(&ra)
        }
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    Ok(counts)
}

fn validate_ratios(ratios: [f64; 3]) -> Result<()> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::RatioInvalid);
    }
    Ok(())
}

/// SplitMix64 finalizer; gives each (seed, key) pair an independent rank.
fn mix(seed: u64, key: u64) -> u64 {
    let mut z = seed ^ key.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Assigns every sample to train/val/test, stratified per subject.
///
/// Within each subject samples are ordered by a hash of `(seed, key)` and
/// the first block goes to train, the next to val, the rest to test. The
/// label of a sample therefore depends only on its key, its subject's
/// sample count, and the seed, not on where it sits in the input.
pub fn split_samples(
    subject_of_sample: &[usize],
    sample_keys: &[u64],
    num_subjects: usize,
    ratios: [f64; 3],
    seed: u64,
) -> Result<SplitAssignment> {
    validate_ratios(ratios)?;
    if sample_keys.len() != subject_of_sample.len() {
        return Err(Error::LengthMismatch {
            expected: subject_of_sample.len(),
            actual: sample_keys.len(),
        });
    }
    let mut labels = vec![SplitLabel::Train; subject_of_sample.len()];
    for s in 0..num_subjects {
        let mut members: Vec<usize> = subject_of_sample
            .iter()
            .enumerate()
            .filter_map(|(i, &subj)| (subj == s).then_some(i))
            .collect();
        members.sort_by_key(|&i| (mix(seed, sample_keys[i]), sample_keys[i]));
        let [n_train, n_val, _] = split_counts(members.len(), ratios)?;
        for (rank, &i) in members.iter().enumerate() {
            labels[i] = if rank < n_train {
                SplitLabel::Train
            } else if rank < n_train + n_val {
                SplitLabel::Val
            } else {
                SplitLabel::Test
            };
        }
    }
    if let Some(&s) = subject_of_sample.iter().find(|&&s| s >= num_subjects) {
        return Err(Error::SubjectOutOfRange {
            subject: s,
            num_subjects,
        });
    }
    Ok(SplitAssignment { labels, seed })
}

/// Features and activity targets for a set of samples, stored per layer as
/// contiguous `N×H×W×C` blocks plus an `N×V` activity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub layer_shapes: Vec<LayerShape>,
    pub features: Vec<Vec<f64>>,
    pub activity: Vec<f64>,
    pub activity_dim: usize,
    pub subjects: Vec<usize>,
    pub num_subjects: usize,
    /// `S×V`; `None` means every vertex is valid for every subject.
    pub subject_valid_mask: Option<Vec<bool>>,
}

impl SampleSet {
    pub fn new(
        layer_shapes: Vec<LayerShape>,
        features: Vec<Vec<f64>>,
        activity: Vec<f64>,
        activity_dim: usize,
        subjects: Vec<usize>,
        num_subjects: usize,
    ) -> Result<Self> {
        let n = subjects.len();
        if layer_shapes.is_empty() || features.len() != layer_shapes.len() {
            return Err(Error::ShapeMismatch {
                what: "feature layer count",
                expected: layer_shapes.len(),
                actual: features.len(),
            });
        }
        for (shape, f) in layer_shapes.iter().zip(&features) {
            if f.len() != n * shape.len() {
                return Err(Error::ShapeMismatch {
                    what: "feature block",
                    expected: n * shape.len(),
                    actual: f.len(),
                });
            }
        }
        if activity.len() != n * activity_dim {
            return Err(Error::ShapeMismatch {
                what: "activity block",
                expected: n * activity_dim,
                actual: activity.len(),
            });
        }
        if let Some(&s) = subjects.iter().find(|&&s| s >= num_subjects) {
            return Err(Error::SubjectOutOfRange {
                subject: s,
                num_subjects,
            });
        }
        Ok(Self {
            layer_shapes,
            features,
            activity,
            activity_dim,
            subjects,
            num_subjects,
            subject_valid_mask: None,
        })
    }

    pub fn with_valid_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.num_subjects * self.activity_dim {
            return Err(Error::ShapeMismatch {
                what: "subject valid mask",
                expected: self.num_subjects * self.activity_dim,
                actual: mask.len(),
            });
        }
        self.subject_valid_mask = Some(mask);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.activity[i * self.activity_dim..(i + 1) * self.activity_dim]
    }

    pub fn valid_mask(&self, subject: usize) -> Option<&[bool]> {
        self.subject_valid_mask
            .as_ref()
            .map(|m| &m[subject * self.activity_dim..(subject + 1) * self.activity_dim])
    }

    pub fn feature_stack(&self, i: usize) -> FeatureStack {
        let layers = self
            .layer_shapes
            .iter()
            .zip(&self.features)
            .map(|(s, f)| f[i * s.len()..(i + 1) * s.len()].to_vec())
            .collect();
        FeatureStack::new(self.layer_shapes.clone(), layers).expect("validated at construction")
    }

    /// Gathers the given samples into a batch routed to their own subjects.
    pub fn batch(&self, indices: &[usize]) -> Batch {
        self.batch_with(indices, |i| Route::Subject(self.subjects[i]))
    }

    /// Same as [`SampleSet::batch`] but every sample takes the group route.
    pub fn group_batch(&self, indices: &[usize]) -> Batch {
        self.batch_with(indices, |_| Route::Group)
    }

    fn batch_with(&self, indices: &[usize], route: impl Fn(usize) -> Route) -> Batch {
        let layers = self
            .layer_shapes
            .iter()
            .zip(&self.features)
            .map(|(s, f)| {
                let len = s.len();
                let mut out = Vec::with_capacity(indices.len() * len);
                for &i in indices {
                    out.extend_from_slice(&f[i * len..(i + 1) * len]);
                }
                out
            })
            .collect();
        Batch {
            layers,
            routes: indices.iter().map(|&i| route(i)).collect(),
        }
    }

    /// Targets of the given samples as an `n×V` block.
    pub fn targets(&self, indices: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(indices.len() * self.activity_dim);
        for &i in indices {
            out.extend_from_slice(self.target(i));
        }
        out
    }

    /// `n×V` loss mask from the subject valid masks (all true when absent).
    pub fn loss_mask(&self, indices: &[usize]) -> Vec<bool> {
        let mut out = Vec::with_capacity(indices.len() * self.activity_dim);
        for &i in indices {
            match self.valid_mask(self.subjects[i]) {
                Some(m) => out.extend_from_slice(m),
                None => out.extend(core::iter::repeat_n(true, self.activity_dim)),
            }
        }
        out
    }
}

/// A batch of samples for the head: per-layer feature blocks plus a route
/// for each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub layers: Vec<Vec<f64>>,
    pub routes: Vec<Route>,
}

impl Batch {
    pub fn from_stacks(stacks: &[FeatureStack], routes: Vec<Route>) -> Result<Self> {
        if stacks.len() != routes.len() {
            return Err(Error::LengthMismatch {
                expected: stacks.len(),
                actual: routes.len(),
            });
        }
        let Some(first) = stacks.first() else {
            return Ok(Self {
                layers: Vec::new(),
                routes,
            });
        };
        let mut layers: Vec<Vec<f64>> = vec![Vec::new(); first.shapes().len()];
        for stack in stacks {
            if stack.shapes() != first.shapes() {
                return Err(Error::InvalidConfig("feature stacks in a batch differ in shape".into()));
            }
            for (dst, src) in layers.iter_mut().zip(stack.layers()) {
                dst.extend_from_slice(src);
            }
        }
        Ok(Self { layers, routes })
    }

    pub fn len(&self) -> usize {
        self.routes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.routes.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embed_scatters_to_mask_positions() {
        assert_eq!(
            embed_activity(&[3.0, 5.0], &[true, false, true]).unwrap(),
            vec![3.0, 0.0, 5.0]
        );
        assert_eq!(embed_activity(&[], &[false; 4]).unwrap(), vec![0.0; 4]);
        assert_eq!(
            embed_activity(&[1.0], &[true, true]).unwrap_err(),
            Error::LengthMismatch { expected: 2, actual: 1 }
        );
    }

    #[test]
    fn paper_split_counts() {
        assert_eq!(split_counts(100, DEFAULT_SPLIT_RATIOS).unwrap(), [85, 10, 5]);
        assert_eq!(split_counts(20, DEFAULT_SPLIT_RATIOS).unwrap(), [17, 2, 1]);
        assert_eq!(split_counts(0, DEFAULT_SPLIT_RATIOS).unwrap(), [0, 0, 0]);
        assert_eq!(split_counts(1, DEFAULT_SPLIT_RATIOS).unwrap(), [1, 0, 0]);
    }

    #[test]
    fn invalid_ratios_are_rejected() {
        assert_eq!(split_counts(10, [0.5, 0.5, 0.5]).unwrap_err(), Error::RatioInvalid);
        assert_eq!(split_counts(10, [1.1, -0.1, 0.0]).unwrap_err(), Error::RatioInvalid);
    }

    #[test]
    fn split_is_stratified_and_deterministic() {
        let subjects: Vec<usize> = (0..200).map(|i| i % 2).collect();
        let keys: Vec<u64> = (0..200).collect();
        let a = split_samples(&subjects, &keys, 2, DEFAULT_SPLIT_RATIOS, 9).unwrap();
        let b = split_samples(&subjects, &keys, 2, DEFAULT_SPLIT_RATIOS, 9).unwrap();
        assert_eq!(a, b);
        for s in 0..2 {
            let count = |l| (0..200).filter(|&i| subjects[i] == s && a.labels[i] == l).count();
            assert_eq!(
                [
                    count(SplitLabel::Train),
                    count(SplitLabel::Val),
                    count(SplitLabel::Test)
                ],
                [85, 10, 5]
            );
        }
        let c = split_samples(&subjects, &keys, 2, DEFAULT_SPLIT_RATIOS, 10).unwrap();
        assert_ne!(a.labels, c.labels);
    }

    #[test]
    fn sample_set_validates_blocks() {
        let shapes = vec![LayerShape::new(1, 1, 2)];
        let err = SampleSet::new(shapes.clone(), vec![vec![0.0; 3]], vec![0.0; 2], 1, vec![0, 0], 1);
        assert!(matches!(err, Err(Error::ShapeMismatch { .. })));
        let err = SampleSet::new(shapes, vec![vec![0.0; 4]], vec![0.0; 2], 1, vec![0, 1], 1);
        assert!(matches!(err, Err(Error::SubjectOutOfRange { .. })));
    }
}
