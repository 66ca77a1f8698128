//! JSON form of an R² report plus its per-vertex arrays.

use std::path::Path;

use msenc_core::metrics::R2Report;
use serde::{Deserialize, Serialize};

use crate::container::{self, ArrayEntry, Dtype, CONTAINER_VERSION};
use crate::error::Result;

pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChallengeJson {
    pub score: f64,
    pub included: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiJson {
    pub name: String,
    pub median: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportJson {
    pub version: u32,
    pub split: String,
    pub route: String,
    pub num_samples: usize,
    pub group_median: Option<f64>,
    pub per_subject_median: Vec<Option<f64>>,
    pub samples_per_subject: Vec<usize>,
    pub undefined_per_subject: Vec<usize>,
    pub challenge: Option<ChallengeJson>,
    pub per_roi: Vec<RoiJson>,
    /// `r2_per_subject` (`S×V`) and `r2_per_vertex` (`V`); NaN marks
    /// undefined vertices.
    pub arrays: Vec<ArrayEntry>,
}

pub fn write_report(dir: &Path, report: &R2Report, split: &str, route: &str) -> Result<ReportJson> {
    let s = report.per_subject.len();
    let v = report.per_vertex.len();
    let flat: Vec<f64> = report.per_subject.concat();
    let arrays = vec![
        ArrayEntry::new("r2_per_subject", "r2_per_subject.f32", vec![s, v], Dtype::F32),
        ArrayEntry::new("r2_per_vertex", "r2_per_vertex.f32", vec![v], Dtype::F32),
    ];
    container::write_atomic(&dir.join(&arrays[0].path), &container::encode_f32(&flat))?;
    container::write_atomic(&dir.join(&arrays[1].path), &container::encode_f32(&report.per_vertex))?;
    let json = ReportJson {
        version: CONTAINER_VERSION,
        split: split.into(),
        route: route.into(),
        num_samples: report.samples_per_subject.iter().sum(),
        group_median: report.group_median,
        per_subject_median: report.per_subject_median.clone(),
        samples_per_subject: report.samples_per_subject.clone(),
        undefined_per_subject: report.undefined_per_subject.clone(),
        challenge: report.challenge.map(|c| ChallengeJson {
            score: c.score,
            included: c.included,
            excluded: c.excluded,
        }),
        per_roi: report
            .per_roi
            .iter()
            .map(|r| RoiJson {
                name: r.name.clone(),
                median: r.median,
                count: r.count,
            })
            .collect(),
        arrays,
    };
    container::write_json(&dir.join(REPORT_FILE), &json)?;
    Ok(json)
}
