//! Behavior and profit metrics.
//!
//! Storage behavior is sparse and bi-directional, so plain regression error
//! says little about prediction quality. Scoring instead works on per-step
//! labels (1 discharge, -1 charge, 0 standby) with a time tolerance: an
//! actual event counts as detected if a same-sign prediction occurs within
//! a few steps. The per-step confusion assignment is
//!
//! ```text
//!     actual \ pred   -1    0    1
//!        -1           TP   FN   FP
//!         0           FP   TN   FP
//!         1           FP   FN   TP
//! ```
//!
//! with the tolerance extending the diagonal to nearby steps. The
//! magnitude-based variant additionally requires the matched prediction to
//! be within a percentage of the actual dispatch level. Matching is greedy
//! nearest-first one-to-one, scanning actual events left to right and
//! breaking distance ties toward the earlier prediction.

use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::storage::{objective_value, DispatchSchedule, StorageSpec};

/// Matching window on either side of an actual event.
pub const DEFAULT_TOLERANCE_STEPS: usize = 2;
/// Dead-band thresholds: a fraction of the power rating per experiment
/// scale.
pub const SYNTHETIC_THRESHOLD_MW: f64 = 0.05;
pub const REAL_THRESHOLD_MW: f64 = 0.2;
/// Relative magnitude tolerances for the stricter scoring mode.
pub const SYNTHETIC_MAGNITUDE_PCT: f64 = 0.2;
pub const REAL_MAGNITUDE_PCT: f64 = 0.4;

/// Per-step three-class labels; values restricted to {-1, 0, 1}.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSeq(Vec<i8>);

impl LabelSeq {
    pub fn new(labels: Vec<i8>) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|l| !(-1..=1).contains(*l)) {
            return Err(Error::InvalidArgument {
                what: "label sequence",
                reason: format!("label {bad} outside {{-1, 0, 1}}"),
            });
        }
        Ok(LabelSeq(labels))
    }

    pub fn labels(&self) -> &[i8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Three-way classification with a strict dead band: values at exactly the
/// threshold count as standby.
pub fn classify_events(y: &[f64], threshold: f64) -> Result<LabelSeq> {
    if !(threshold > 0.0) || !threshold.is_finite() {
        return Err(Error::InvalidArgument {
            what: "threshold",
            reason: format!("must be finite and > 0, got {threshold}"),
        });
    }
    Ok(LabelSeq(
        y.iter()
            .map(|v| {
                if *v > threshold {
                    1
                } else if *v < -threshold {
                    -1
                } else {
                    0
                }
            })
            .collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    #[serde(rename = "tp")]
    pub true_positive: usize,
    #[serde(rename = "tn")]
    pub true_negative: usize,
    #[serde(rename = "fp")]
    pub false_positive: usize,
    #[serde(rename = "fn")]
    pub false_negative: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.true_positive + self.true_negative + self.false_positive + self.false_negative
    }
}

/// For each actual event, the index of the matched prediction (if any), and
/// the set of consumed predictions. Nearest unmatched same-sign prediction
/// within the tolerance wins; ties go to the earlier index.
fn match_events(
    pred: &[i8],
    actual: &[i8],
    tolerance_steps: usize,
) -> (Vec<Option<usize>>, Vec<bool>) {
    let n = actual.len();
    let mut used = vec![false; n];
    let mut matched = vec![None; n];
    for i in 0..n {
        if actual[i] == 0 {
            continue;
        }
        'search: for d in 0..=tolerance_steps {
            let candidates = [i.checked_sub(d), Some(i + d)];
            for j in candidates.into_iter().flatten() {
                if j < n && !used[j] && pred[j] == actual[i] {
                    used[j] = true;
                    matched[i] = Some(j);
                    break 'search;
                }
            }
        }
    }
    (matched, used)
}

fn check_lengths(pred: usize, actual: usize) -> Result<()> {
    if pred != actual {
        return Err(Error::LengthMismatch {
            left_name: "predicted labels",
            left: pred,
            right_name: "actual labels",
            right: actual,
        });
    }
    Ok(())
}

/// Event-based confusion with time tolerance. Every step contributes
/// exactly one count: matched actual events are TP, unmatched ones are FN
/// (or FP when the same step holds an opposite-sign prediction), standby
/// steps are TN unless an unconsumed prediction sits on them.
pub fn event_confusion(
    pred: &LabelSeq,
    actual: &LabelSeq,
    tolerance_steps: usize,
) -> Result<ConfusionCounts> {
    check_lengths(pred.len(), actual.len())?;
    let (matched, used) = match_events(pred.labels(), actual.labels(), tolerance_steps);
    let mut c = ConfusionCounts::default();
    for s in 0..actual.len() {
        let (a, p) = (actual.labels()[s], pred.labels()[s]);
        if a != 0 {
            if matched[s].is_some() {
                c.true_positive += 1;
            } else if p != 0 && p != a {
                c.false_positive += 1;
            } else {
                c.false_negative += 1;
            }
        } else if p == 0 || used[s] {
            c.true_negative += 1;
        } else {
            c.false_positive += 1;
        }
    }
    Ok(c)
}

/// Magnitude-based confusion: the event matching runs unchanged, then each
/// matched pair must also satisfy |pred - actual| <= pct * |actual|. A pair
/// failing the magnitude test demotes the actual step to FN and releases
/// its prediction as an FP on that prediction's own step (when the two
/// coincide, the step scores FN alone).
pub fn magnitude_confusion(
    pred_y: &[f64],
    actual_y: &[f64],
    pct: f64,
    tolerance_steps: usize,
    threshold: f64,
) -> Result<ConfusionCounts> {
    check_lengths(pred_y.len(), actual_y.len())?;
    if !(pct > 0.0 && pct <= 1.0) {
        return Err(Error::InvalidArgument {
            what: "magnitude percentage",
            reason: format!("must lie in (0, 1], got {pct}"),
        });
    }
    let pred = classify_events(pred_y, threshold)?;
    let actual = classify_events(actual_y, threshold)?;
    let (matched, used) = match_events(pred.labels(), actual.labels(), tolerance_steps);
    let n = actual.len();
    let mut released = vec![false; n];
    let mut c = ConfusionCounts::default();
    for s in 0..n {
        let a = actual.labels()[s];
        if a == 0 {
            continue;
        }
        match matched[s] {
            Some(j) if (pred_y[j] - actual_y[s]).abs() <= pct * actual_y[s].abs() => {
                c.true_positive += 1;
            }
            Some(j) => {
                c.false_negative += 1;
                if j != s {
                    released[j] = true;
                }
            }
            None => {
                let p = pred.labels()[s];
                if p != 0 && p != a {
                    c.false_positive += 1;
                } else {
                    c.false_negative += 1;
                }
            }
        }
    }
    for s in 0..n {
        if actual.labels()[s] != 0 {
            continue;
        }
        if pred.labels()[s] == 0 || (used[s] && !released[s]) {
            c.true_negative += 1;
        } else {
            c.false_positive += 1;
        }
    }
    Ok(c)
}

/// Which scoring rule produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    Event,
    Magnitude,
}

/// The four ratio metrics with the counts and scoring context they came
/// from. `degenerate` flags any zero denominator (that metric reports 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: ScoringMode,
    pub threshold_mw: f64,
    pub tolerance_steps: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub magnitude_pct: Option<f64>,
    pub counts: ConfusionCounts,
    pub precision: f64,
    pub accuracy: f64,
    pub recall: f64,
    pub f1: f64,
    pub degenerate: bool,
}

impl MetricsReport {
    fn from_counts(
        counts: ConfusionCounts,
        mode: ScoringMode,
        threshold_mw: f64,
        tolerance_steps: usize,
        magnitude_pct: Option<f64>,
    ) -> Self {
        let tp = counts.true_positive as f64;
        let mut degenerate = false;
        let mut ratio = |num: f64, den: f64| {
            if den > 0.0 {
                num / den
            } else {
                degenerate = true;
                0.0
            }
        };
        let precision = ratio(tp, tp + counts.false_positive as f64);
        let accuracy = ratio(
            tp + counts.true_negative as f64,
            counts.total() as f64,
        );
        let recall = ratio(tp, tp + counts.false_negative as f64);
        let f1 = ratio(2.0 * precision * recall, precision + recall);
        MetricsReport {
            mode,
            threshold_mw,
            tolerance_steps,
            magnitude_pct,
            counts,
            precision,
            accuracy,
            recall,
            f1,
            degenerate,
        }
    }
}

/// Precision, accuracy, recall, and F1 from raw counts. The scoring context
/// defaults to event mode; use [`evaluate_events`] or
/// [`evaluate_magnitude`] to carry threshold and tolerance through.
pub fn prf_metrics(counts: ConfusionCounts) -> MetricsReport {
    MetricsReport::from_counts(counts, ScoringMode::Event, 0.0, 0, None)
}

/// Classifies both dispatch vectors and scores them in event mode.
pub fn evaluate_events(
    pred_y: &[f64],
    actual_y: &[f64],
    threshold: f64,
    tolerance_steps: usize,
) -> Result<MetricsReport> {
    let pred = classify_events(pred_y, threshold)?;
    let actual = classify_events(actual_y, threshold)?;
    let counts = event_confusion(&pred, &actual, tolerance_steps)?;
    Ok(MetricsReport::from_counts(
        counts,
        ScoringMode::Event,
        threshold,
        tolerance_steps,
        None,
    ))
}

/// Scores two dispatch vectors in magnitude mode.
pub fn evaluate_magnitude(
    pred_y: &[f64],
    actual_y: &[f64],
    pct: f64,
    tolerance_steps: usize,
    threshold: f64,
) -> Result<MetricsReport> {
    let counts = magnitude_confusion(pred_y, actual_y, pct, tolerance_steps, threshold)?;
    Ok(MetricsReport::from_counts(
        counts,
        ScoringMode::Magnitude,
        threshold,
        tolerance_steps,
        Some(pct),
    ))
}

/// Profit of a schedule under realized prices: reward for net output minus
/// the dispatch cost, per step times step length.
pub fn arbitrage_profit(
    realized_rtp: &[f64],
    schedule: &DispatchSchedule,
    spec: &StorageSpec,
) -> Result<f64> {
    objective_value(realized_rtp, schedule, spec)
}

/// Per-step profit contributions; their sum equals [`arbitrage_profit`].
pub fn profit_series(
    realized_rtp: &[f64],
    schedule: &DispatchSchedule,
    spec: &StorageSpec,
) -> Result<Vec<f64>> {
    if realized_rtp.len() != spec.horizon {
        return Err(Error::DimensionMismatch {
            what: "realized price",
            expected: spec.horizon,
            actual: realized_rtp.len(),
        });
    }
    if schedule.net_mw.len() != spec.horizon {
        return Err(Error::DimensionMismatch {
            what: "schedule",
            expected: spec.horizon,
            actual: schedule.net_mw.len(),
        });
    }
    Ok((0..spec.horizon)
        .map(|t| {
            let revenue = realized_rtp[t] * schedule.net_mw[t];
            let cost = spec
                .cost
                .eval(schedule.discharge_mw[t], schedule.charge_mw[t]);
            spec.step_hours * (revenue - cost)
        })
        .collect())
}

/// Writes `timestamp,step_profit,cumulative` rows for external plotting.
pub fn write_profit_csv(
    timestamps: &[NaiveDateTime],
    step_profits: &[f64],
    path: &Path,
) -> Result<()> {
    if timestamps.len() != step_profits.len() {
        return Err(Error::LengthMismatch {
            left_name: "timestamps",
            left: timestamps.len(),
            right_name: "step profits",
            right: step_profits.len(),
        });
    }
    let mut text = String::from("timestamp,step_profit,cumulative\n");
    let mut cumulative = 0.0;
    for (ts, profit) in timestamps.iter().zip(step_profits) {
        cumulative += profit;
        let _ = writeln!(
            text,
            "{},{},{}",
            ts.format("%Y-%m-%dT%H:%M:%S"),
            profit,
            cumulative
        );
    }
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Total charged and discharged energy of a net-dispatch series, in MWh.
pub fn dispatch_energy_totals(y: &[f64], step_hours: f64) -> (f64, f64) {
    let charge: f64 = y.iter().map(|v| (-v).max(0.0)).sum();
    let discharge: f64 = y.iter().map(|v| v.max(0.0)).sum();
    (charge * step_hours, discharge * step_hours)
}
