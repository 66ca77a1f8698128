//! Coefficient of determination per vertex, medians, noise-normalized
//! score, and ROI aggregation.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Per-vertex R² with undefined (zero target variance) vertices set to NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexR2 {
    pub values: Vec<f64>,
    pub undefined: Vec<usize>,
}

/// `1 - SS_res / SS_tot` for each column of `n×v` predictions and targets.
pub fn r2_per_vertex(pred: &[f64], target: &[f64], n: usize, v: usize) -> Result<VertexR2> {
    if pred.len() != n * v || target.len() != n * v {
        return Err(Error::ShapeMismatch {
            what: "R² inputs",
            expected: n * v,
            actual: pred.len().min(target.len()),
        });
    }
    let mut mean = vec![0.0; v];
    let mut sq = vec![0.0; v];
    for row in target.chunks_exact(v.max(1)) {
        for j in 0..v {
            mean[j] += row[j];
            sq[j] += row[j] * row[j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n.max(1) as f64);
    let mut ss_res = vec![0.0; v];
    let mut ss_tot = vec![0.0; v];
    for i in 0..n {
        for j in 0..v {
            let t = target[i * v + j];
            let r = pred[i * v + j] - t;
            let c = t - mean[j];
            ss_res[j] += r * r;
            ss_tot[j] += c * c;
        }
    }
    let mut values = vec![f64::NAN; v];
    let mut undefined = Vec::new();
    for j in 0..v {
        if n < 2 || ss_tot[j] <= 1e-24 * sq[j].max(f64::MIN_POSITIVE) || ss_tot[j] == 0.0 {
            undefined.push(j);
        } else {
            values[j] = 1.0 - ss_res[j] / ss_tot[j];
        }
    }
    Ok(VertexR2 { values, undefined })
}

/// Median of the finite values (mean of the two middle values for even
/// counts). `None` when nothing finite remains.
pub fn median(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChallengeScore {
    pub score: f64,
    pub included: usize,
    /// Vertices skipped for a zero ceiling or undefined R².
    pub excluded: usize,
}

/// Mean of `r2 / ceiling` over vertices with a positive ceiling and a
/// defined R², each ratio clipped to at most 1.
pub fn challenge_score(r2: &[f64], noise_ceiling: &[f64]) -> Result<ChallengeScore> {
    if r2.len() != noise_ceiling.len() {
        return Err(Error::LengthMismatch {
            expected: r2.len(),
            actual: noise_ceiling.len(),
        });
    }
    if noise_ceiling.iter().any(|&c| c < 0.0 || c.is_nan()) {
        return Err(Error::InvalidConfig("noise ceilings must be nonnegative".into()));
    }
    let mut sum = 0.0;
    let mut included = 0;
    for (&r, &c) in r2.iter().zip(noise_ceiling) {
        if c > 0.0 && r.is_finite() {
            sum += (r / c).min(1.0);
            included += 1;
        }
    }
    if included == 0 {
        return Err(Error::AllVerticesExcluded);
    }
    Ok(ChallengeScore {
        score: sum / included as f64,
        included,
        excluded: r2.len() - included,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiScore {
    pub name: String,
    /// `None` for an empty ROI (no defined values inside the mask).
    pub median: Option<f64>,
    pub count: usize,
}

/// Median R² over every (subject, vertex) pair inside each mask.
/// `per_subject[s]` is subject `s`'s R² map.
pub fn roi_scores(per_subject: &[Vec<f64>], masks: &[(String, Vec<bool>)]) -> Result<Vec<RoiScore>> {
    let mut out = Vec::with_capacity(masks.len());
    for (name, mask) in masks {
        let mut pool = Vec::new();
        for r2 in per_subject {
            if r2.len() != mask.len() {
                return Err(Error::LengthMismatch {
                    expected: r2.len(),
                    actual: mask.len(),
                });
            }
            pool.extend(
                r2.iter()
                    .zip(mask)
                    .filter(|(x, &m)| m && x.is_finite())
                    .map(|(x, _)| *x),
            );
        }
        out.push(RoiScore {
            name: name.clone(),
            count: pool.len(),
            median: median(pool),
        });
    }
    Ok(out)
}

/// Scores for one prediction run, split by subject.
#[derive(Debug, Clone, PartialEq)]
pub struct R2Report {
    /// Per-subject R² maps (`S` rows of `V`; NaN where undefined).
    pub per_subject: Vec<Vec<f64>>,
    /// Median across subjects at each vertex (NaN where no subject is defined).
    pub per_vertex: Vec<f64>,
    pub per_subject_median: Vec<Option<f64>>,
    /// Median over all pooled (subject, vertex) values.
    pub group_median: Option<f64>,
    pub challenge: Option<ChallengeScore>,
    pub per_roi: Vec<RoiScore>,
    pub undefined_per_subject: Vec<usize>,
    pub samples_per_subject: Vec<usize>,
}

/// Builds an [`R2Report`] from `n×v` predictions and targets.
///
/// `noise_ceiling`, when given, is an `S×V` block; the challenge score
/// pools all subjects' normalized values.
pub fn build_report(
    pred: &[f64],
    target: &[f64],
    subjects: &[usize],
    num_subjects: usize,
    v: usize,
    noise_ceiling: Option<&[f64]>,
    roi_masks: &[(String, Vec<bool>)],
) -> Result<R2Report> {
    let n = subjects.len();
    if pred.len() != n * v || target.len() != n * v {
        return Err(Error::ShapeMismatch {
            what: "report inputs",
            expected: n * v,
            actual: pred.len().min(target.len()),
        });
    }
    let mut per_subject = Vec::with_capacity(num_subjects);
    let mut undefined_per_subject = Vec::with_capacity(num_subjects);
    let mut samples_per_subject = Vec::with_capacity(num_subjects);
    for s in 0..num_subjects {
        let rows: Vec<usize> = (0..n).filter(|&i| subjects[i] == s).collect();
        let mut p = Vec::with_capacity(rows.len() * v);
        let mut t = Vec::with_capacity(rows.len() * v);
        for &i in &rows {
            p.extend_from_slice(&pred[i * v..(i + 1) * v]);
            t.extend_from_slice(&target[i * v..(i + 1) * v]);
        }
        let r2 = r2_per_vertex(&p, &t, rows.len(), v)?;
        undefined_per_subject.push(r2.undefined.len());
        samples_per_subject.push(rows.len());
        per_subject.push(r2.values);
    }
    let per_vertex = (0..v)
        .map(|j| median(per_subject.iter().map(|r| r[j])).unwrap_or(f64::NAN))
        .collect();
    let per_subject_median = per_subject.iter().map(|r| median(r.iter().copied())).collect();
    let group_median = median(per_subject.iter().flatten().copied());
    let challenge = match noise_ceiling {
        Some(nc) => {
            if nc.len() != num_subjects * v {
                return Err(Error::ShapeMismatch {
                    what: "noise ceiling",
                    expected: num_subjects * v,
                    actual: nc.len(),
                });
            }
            let pooled: Vec<f64> = per_subject.iter().flatten().copied().collect();
            Some(challenge_score(&pooled, nc)?)
        }
        None => None,
    };
    let per_roi = roi_scores(&per_subject, roi_masks)?;
    Ok(R2Report {
        per_subject,
        per_vertex,
        per_subject_median,
        group_median,
        challenge,
        per_roi,
        undefined_per_subject,
        samples_per_subject,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_mean_predictions() {
        let t = [1.0, 2.0, 3.0, 5.0, 5.0, -1.0];
        let r = r2_per_vertex(&t, &t, 3, 2).unwrap();
        assert_eq!(r.values, vec![1.0, 1.0]);
        let mean = [3.0, 2.0, 3.0, 2.0, 3.0, 2.0];
        let r = r2_per_vertex(&mean, &t, 3, 2).unwrap();
        assert!(r.values.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn negated_zero_mean_target_scores_minus_three() {
        let t = [1.0, -1.0, 2.0, -2.0];
        let p: Vec<f64> = t.iter().map(|x| -x).collect();
        let r = r2_per_vertex(&p, &t, 4, 1).unwrap();
        assert!((r.values[0] + 3.0).abs() < 1e-15);
    }

    #[test]
    fn constant_target_is_undefined() {
        let t = [0.0, 1.0, 0.0, 2.0];
        let r = r2_per_vertex(&[0.5, 1.0, 0.0, 2.0], &t, 2, 2).unwrap();
        assert_eq!(r.undefined, vec![0]);
        assert!(r.values[0].is_nan());
        assert_eq!(r.values[1], 1.0);
    }

    #[test]
    fn challenge_score_cases() {
        let two = challenge_score(&[0.2, 0.4], &[0.4, 0.8]).unwrap();
        assert!((two.score - 0.5).abs() < 1e-15);
        assert_eq!(challenge_score(&[0.3, 0.6], &[0.3, 0.6]).unwrap().score, 1.0);
        assert_eq!(challenge_score(&[0.0, 0.0], &[0.3, 0.6]).unwrap().score, 0.0);
        assert_eq!(challenge_score(&[0.9], &[0.3]).unwrap().score, 1.0);
        let skip = challenge_score(&[0.2, 0.9], &[0.4, 0.0]).unwrap();
        assert_eq!((skip.included, skip.excluded), (1, 1));
        assert_eq!(challenge_score(&[0.1], &[0.0]).unwrap_err(), Error::AllVerticesExcluded);
    }

    #[test]
    fn roi_medians_by_enumeration() {
        // subject 0: [0.1, 0.5, 0.3, 0.9], subject 1: [0.2, 0.4, 0.6, 0.0]
        let per_subject = vec![vec![0.1, 0.5, 0.3, 0.9], vec![0.2, 0.4, 0.6, 0.0]];
        let masks = vec![
            ("a".into(), vec![true, true, false, false]),
            ("b".into(), vec![false, false, true, true]),
            ("empty".into(), vec![false; 4]),
        ];
        let scores = roi_scores(&per_subject, &masks).unwrap();
        // a pools {0.1, 0.5, 0.2, 0.4} -> (0.2 + 0.4) / 2
        assert!((scores[0].median.unwrap() - 0.3).abs() < 1e-15);
        // b pools {0.3, 0.9, 0.6, 0.0} -> (0.3 + 0.6) / 2
        assert!((scores[1].median.unwrap() - 0.45).abs() < 1e-15);
        assert_eq!(scores[2].median, None);
        assert_eq!(scores[2].count, 0);
    }

    #[test]
    fn whole_brain_roi_equals_group_median() {
        let pred = [1.0, 0.0, 2.0, 1.0, 3.0, 1.0, 0.0, 2.0];
        let target = [1.5, 0.5, 2.0, 0.0, 2.0, 1.0, 1.0, 3.0];
        let report = build_report(
            &pred,
            &target,
            &[0, 0, 1, 1],
            2,
            2,
            None,
            &[("all".into(), vec![true, true])],
        )
        .unwrap();
        assert_eq!(report.per_roi[0].median, report.group_median);
        assert!(report.challenge.is_none());
    }
}
