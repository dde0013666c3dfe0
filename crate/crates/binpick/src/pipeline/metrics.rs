//! Episode bookkeeping and the precision / recall / F-value metrics.

use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

use super::PipelineError;

/// A sensor view used during a trial.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ViewRef {
    pub face_index: usize,
    pub standoff: f64,
}

/// The candidate a trial decided to execute.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChosenCandidate {
    pub entry_index: usize,
    pub estimate_id: u32,
    pub quality: f64,
    /// Quality subset the candidate came from (0 = best).
    pub subset: usize,
    pub success_probability: f64,
    pub blue_cells: usize,
    pub adjusted_score: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PickOutcome {
    pub success: bool,
    pub contacted_neighbor: bool,
    /// Absent when the executed grasp resolved to no real object.
    pub target_id: Option<u32>,
}

/// Candidate funnel sizes for one trial (final scoring pass).
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct FunnelCounts {
    /// d x e expanded candidates.
    pub expanded: usize,
    /// Candidates surviving the reachability filter, over evaluated subsets.
    pub reachable: usize,
    /// Scored candidates at or above the accept threshold.
    pub accepted: usize,
}

/// Everything recorded about one picking trial.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub trial: usize,
    pub views: Vec<ViewRef>,
    /// Best adjusted score seen at each view (None when that view produced
    /// no scorable candidate); shows rescues by later views.
    pub view_best_scores: Vec<Option<f64>>,
    /// The discriminator's final verdict for the executed candidate.
    pub predicted_success: bool,
    pub chosen: Option<ChosenCandidate>,
    /// Absent when no candidate existed to execute.
    pub outcome: Option<PickOutcome>,
    pub funnel: FunnelCounts,
}

/// Confusion counts plus derived metrics. Records without an outcome are
/// skipped; zero-denominator metrics stay undefined (`None`).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub true_negative: usize,
    pub skipped: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f_value: Option<f64>,
}

/// Precision = TP/(TP+FP), recall = TP/(TP+FN), F = 2PR/(P+R), from
/// (predicted, outcome) pairs: a "positive" prediction is predicted
/// success, a "positive" outcome an actual successful pick.
pub fn compute_metrics(records: &[EpisodeRecord]) -> Metrics {
    let mut m = Metrics::default();
    for r in records {
        let Some(outcome) = &r.outcome else {
            m.skipped += 1;
            continue;
        };
        match (r.predicted_success, outcome.success) {
            (true, true) => m.true_positive += 1,
            (true, false) => m.false_positive += 1,
            (false, true) => m.false_negative += 1,
            (false, false) => m.true_negative += 1,
        }
    }
    m.finish();
    m
}

impl Metrics {
    /// Metrics straight from confusion counts.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let mut m = Metrics {
            true_positive: tp,
            false_positive: fp,
            false_negative: fn_,
            true_negative: tn,
            ..Default::default()
        };
        m.finish();
        m
    }

    fn finish(&mut self) {
        let (tp, fp, fn_) = (
            self.true_positive as f64,
            self.false_positive as f64,
            self.false_negative as f64,
        );
        self.precision = (self.true_positive + self.false_positive > 0)
            .then(|| tp / (tp + fp));
        self.recall = (self.true_positive + self.false_negative > 0).then(|| tp / (tp + fn_));
        self.f_value = match (self.precision, self.recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };
    }
}

/// Writes one JSON record per line.
pub fn write_records<W: Write>(mut w: W, records: &[EpisodeRecord]) -> Result<(), PipelineError> {
    for r in records {
        let line =
            serde_json::to_string(r).map_err(|e| PipelineError::BadRecord(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(r: R) -> Result<Vec<EpisodeRecord>, PipelineError> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| PipelineError::BadRecord(e.to_string()))?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn object1_experiment_counts() {
        // Confusion counts 40 / 10 / 1 / 5: P = 0.80, R = 40/41, and the
        // harmonic mean F = 0.8791, which rounds to the reported 0.88.
        let m = Metrics::from_counts(40, 10, 1, 5);
        assert!((m.precision.unwrap() - 0.80).abs() < 1e-3);
        assert!((m.recall.unwrap() - 0.9756).abs() < 1e-3);
        let p = m.precision.unwrap();
        let r = m.recall.unwrap();
        assert!((m.f_value.unwrap() - 2.0 * p * r / (p + r)).abs() < 1e-12);
        assert!((m.f_value.unwrap() - 0.8791).abs() < 1e-3);
        assert_eq!(format!("{:.2}", m.f_value.unwrap()), "0.88");
    }

    #[test]
    fn object2_experiment_counts() {
        // Confusion counts 46 / 4 / 0 / 1.
        let m = Metrics::from_counts(46, 4, 0, 1);
        assert!((m.precision.unwrap() - 0.92).abs() < 1e-12);
        assert!((m.recall.unwrap() - 1.0).abs() < 1e-12);
        assert!((m.f_value.unwrap() - 0.9583).abs() < 1e-3);
    }

    #[test]
    fn all_correct_is_perfect() {
        let m = Metrics::from_counts(7, 0, 0, 3);
        assert_eq!(m.precision, Some(1.0));
        assert_eq!(m.recall, Some(1.0));
        assert_eq!(m.f_value, Some(1.0));
    }

    #[test]
    fn zero_denominators_stay_undefined() {
        let m = Metrics::from_counts(0, 0, 0, 5);
        assert_eq!(m.precision, None);
        assert_eq!(m.recall, None);
        assert_eq!(m.f_value, None);
    }

    fn record(predicted: bool, success: Option<bool>) -> EpisodeRecord {
        EpisodeRecord {
            trial: 0,
            views: vec![],
            view_best_scores: vec![],
            predicted_success: predicted,
            chosen: None,
            outcome: success.map(|s| PickOutcome {
                success: s,
                contacted_neighbor: false,
                target_id: Some(0),
            }),
            funnel: FunnelCounts::default(),
        }
    }

    #[test]
    fn metrics_from_records_and_jsonl_roundtrip() {
        let records = vec![
            record(true, Some(true)),
            record(true, Some(false)),
            record(false, Some(true)),
            record(false, Some(false)),
            record(false, None),
        ];
        let m = compute_metrics(&records);
        assert_eq!(
            (m.true_positive, m.false_positive, m.false_negative, m.true_negative),
            (1, 1, 1, 1)
        );
        assert_eq!(m.skipped, 1);

        let mut buf = Vec::new();
        write_records(&mut buf, &records).unwrap();
        let back = read_records(&buf[..]).unwrap();
        assert_eq!(back.len(), records.len());
        assert_eq!(compute_metrics(&back), m);
    }
}
