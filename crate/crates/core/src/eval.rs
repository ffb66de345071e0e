//! Box IoU, accuracy at IoU thresholds, and the unique/multiple split.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::proposal::ObjectProfileTable;
use crate::scene::Box3D;
use crate::{Error, Result};

pub const DEFAULT_THRESHOLDS: [f64; 2] = [0.25, 0.5];

/// Coordinate tolerance for [`Scoring::ExactBox`].
pub const EXACT_BOX_TOLERANCE: f64 = 1e-6;

/// Axis-aligned 3D IoU. Two zero-volume boxes score 1 when identical, else 0.
pub fn iou3d(a: &Box3D, b: &Box3D) -> f64 {
    let inter: f64 = (0..3)
        .map(|k| (a.max[k].min(b.max[k]) - a.min[k].max(b.min[k])).max(0.0))
        .product();
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Unique,
    Multiple,
}

/// `Unique` iff exactly one table row has the ground-truth category. An
/// absent category is `Multiple` and comes with a warning.
pub fn classify_split(opt: &ObjectProfileTable, gt_category: &str) -> (Split, Option<String>) {
    match opt.count_category(gt_category) {
        1 => (Split::Unique, None),
        0 => {
            let w = format!("category `{gt_category}` not present among scene proposals");
            log::warn!("{w}");
            (Split::Multiple, Some(w))
        }
        _ => (Split::Multiple, None),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingRecord {
    pub scene_id: String,
    pub query: String,
    pub predicted: Box3D,
    pub ground_truth: Box3D,
    pub split: Split,
    pub fallback: bool,
    pub judge_calls: usize,
    #[serde(with = "secs")]
    pub wall_time: Duration,
}

pub(crate) mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs_f64(f64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    /// Correct when IoU with the ground truth reaches the threshold.
    #[default]
    Iou,
    /// Correct when the predicted box equals the ground-truth box; used when
    /// the candidate boxes are given and the task is box selection.
    ExactBox,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SplitMetrics {
    pub count: usize,
    /// Keyed `Acc@<threshold>`.
    pub correct: BTreeMap<String, usize>,
    pub accuracy: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub scoring: Scoring,
    pub thresholds: Vec<f64>,
    pub overall: SplitMetrics,
    pub unique: SplitMetrics,
    pub multiple: SplitMetrics,
    pub mean_judge_calls: f64,
    pub fallbacks: usize,
}

impl MetricsReport {
    pub fn accuracy(&self, threshold: f64) -> Option<f64> {
        self.overall
            .accuracy
            .get(&threshold_key(threshold))
            .copied()
    }
}

pub fn threshold_key(t: f64) -> String {
    format!("Acc@{t}")
}

fn is_correct(r: &GroundingRecord, threshold: f64, scoring: Scoring) -> bool {
    match scoring {
        Scoring::Iou => iou3d(&r.predicted, &r.ground_truth) >= threshold,
        Scoring::ExactBox => (0..3).all(|k| {
            (r.predicted.min[k] - r.ground_truth.min[k]).abs() <= EXACT_BOX_TOLERANCE
                && (r.predicted.max[k] - r.ground_truth.max[k]).abs() <= EXACT_BOX_TOLERANCE
        }),
    }
}

pub fn evaluate(
    records: &[GroundingRecord],
    thresholds: &[f64],
    scoring: Scoring,
) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no records to evaluate".into()));
    }
    let tally = |filter: &dyn Fn(&GroundingRecord) -> bool| {
        let subset: Vec<&GroundingRecord> = records.iter().filter(|r| filter(r)).collect();
        let mut m = SplitMetrics {
            count: subset.len(),
            ..Default::default()
        };
        for &t in thresholds {
            let correct = subset.iter().filter(|r| is_correct(r, t, scoring)).count();
            let acc = if subset.is_empty() {
                0.0
            } else {
                correct as f64 / subset.len() as f64
            };
            m.correct.insert(threshold_key(t), correct);
            m.accuracy.insert(threshold_key(t), acc);
        }
        m
    };
    Ok(MetricsReport {
        scoring,
        thresholds: thresholds.to_vec(),
        overall: tally(&|_| true),
        unique: tally(&|r| r.split == Split::Unique),
        multiple: tally(&|r| r.split == Split::Multiple),
        mean_judge_calls: records.iter().map(|r| r.judge_calls as f64).sum::<f64>()
            / records.len() as f64,
        fallbacks: records.iter().filter(|r| r.fallback).count(),
    })
}
