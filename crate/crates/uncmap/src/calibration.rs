//! Expected calibration error of the drivable decision.
//!
//! The decision is binary (drivable vs not at a 0.5 threshold), confidence
//! is `max(p, 1 - p)` of the chosen probability plane, and the report bins
//! confidences into equal-width bins over [0, 1] with the standard
//! count-weighted |accuracy - confidence| aggregation.

use std::fmt::Write as _;

use ndarray::ArrayView2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::uncertainty::DrivableScoreMap;

/// Which per-pixel plane supplies the confidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceSource {
    /// The entropy-blended safety score.
    Safety,
    /// The raw grouped drivable probability.
    DrivableProbability,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    pub mean_confidence: f64,
    pub accuracy: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub bins: Vec<CalibrationBin>,
    pub ece: f64,
    pub total: usize,
}

impl CalibrationReport {
    /// Reliability-diagram data as CSV for external plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,mean_conf,accuracy,count\n");
        for b in &self.bins {
            let _ = writeln!(
                out,
                "{:.6},{:.6},{:.6},{:.6},{}",
                b.lo, b.hi, b.mean_confidence, b.accuracy, b.count
            );
        }
        out
    }
}

/// Calibration of a probability plane against boolean drivable truth.
pub fn calibration_from_plane(
    plane: ArrayView2<'_, f64>,
    truth: ArrayView2<'_, bool>,
    num_bins: usize,
) -> Result<CalibrationReport> {
    if num_bins < 1 {
        return Err(Error::config("need at least one calibration bin"));
    }
    if plane.dim() != truth.dim() {
        return Err(Error::data("confidence plane and truth shape mismatch"));
    }
    let mut count = vec![0usize; num_bins];
    let mut conf_sum = vec![0.0; num_bins];
    let mut correct = vec![0usize; num_bins];
    for ((i, j), &p) in plane.indexed_iter() {
        let decision = p >= 0.5;
        let confidence = p.max(1.0 - p);
        let bin = ((confidence * num_bins as f64) as usize).min(num_bins - 1);
        count[bin] += 1;
        conf_sum[bin] += confidence;
        if decision == truth[[i, j]] {
            correct[bin] += 1;
        }
    }
    let total: usize = count.iter().sum();
    let mut bins = Vec::with_capacity(num_bins);
    let mut ece = 0.0;
    for b in 0..num_bins {
        let lo = b as f64 / num_bins as f64;
        let hi = (b + 1) as f64 / num_bins as f64;
        let (mean_confidence, accuracy) = if count[b] > 0 {
            (conf_sum[b] / count[b] as f64, correct[b] as f64 / count[b] as f64)
        } else {
            (0.0, 0.0)
        };
        if count[b] > 0 {
            ece += (count[b] as f64 / total as f64) * (accuracy - mean_confidence).abs();
        }
        bins.push(CalibrationBin {
            lo,
            hi,
            mean_confidence,
            accuracy,
            count: count[b],
        });
    }
    Ok(CalibrationReport { bins, ece, total })
}

/// Calibration of a score map against boolean drivable truth, reading
/// confidence from the requested plane (the safety score by default).
pub fn expected_calibration_error(
    map: &DrivableScoreMap,
    truth: ArrayView2<'_, bool>,
    num_bins: usize,
    source: ConfidenceSource,
) -> Result<CalibrationReport> {
    let plane = match source {
        ConfidenceSource::Safety => map.safety.view(),
        ConfidenceSource::DrivableProbability => map.drivable.view(),
    };
    calibration_from_plane(plane, truth, num_bins)
}
