//! Scoring of pairwise and decision predictions.
//!
//! Unknown predictions are never filtered out: they count as a miss for the
//! gold class and as nobody's false positive. Micro-averaged F1 is
//! `2 TP / (2 TP + FP + FN)` summed over classes, which equals accuracy when
//! nothing is Unknown.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::dataset::{DecisionGold, PairwiseGold};
use crate::inference::PosteriorReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairwisePrediction {
    Context1,
    Context2,
    Same,
    Unknown,
}

impl PairwisePrediction {
    fn class(self) -> Option<PairwiseGold> {
        match self {
            PairwisePrediction::Context1 => Some(PairwiseGold::Context1),
            PairwisePrediction::Context2 => Some(PairwiseGold::Context2),
            PairwisePrediction::Same => Some(PairwiseGold::Same),
            PairwisePrediction::Unknown => None,
        }
    }
}

impl From<PairwiseGold> for PairwisePrediction {
    fn from(g: PairwiseGold) -> Self {
        match g {
            PairwiseGold::Context1 => PairwisePrediction::Context1,
            PairwiseGold::Context2 => PairwisePrediction::Context2,
            PairwiseGold::Same => PairwisePrediction::Same,
        }
    }
}

impl fmt::Display for PairwisePrediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecisionMode {
    /// Correct when the gold outcome has the higher probability.
    Argmax,
    /// Support predicted when `P(O1) > tau_dec`.
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub support: usize,
    pub predicted: usize,
    pub true_positives: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    /// `None` when the class is neither gold nor predicted anywhere.
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub instances: usize,
    pub per_class: BTreeMap<String, ClassScore>,
    pub micro_avg_f1: f64,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub coverage: f64,
    pub unknown_rate: f64,
}

/// Pairwise call from the two conditions' posteriors.
pub fn classify_pairwise(
    report1: &PosteriorReport,
    report2: &PosteriorReport,
    eps_same: f64,
) -> PairwisePrediction {
    let (Some(p1), Some(p2)) = (report1.p_o1(), report2.p_o1()) else {
        return PairwisePrediction::Unknown;
    };
    if report1.abstained || report2.abstained {
        PairwisePrediction::Unknown
    } else if p1 - p2 > eps_same {
        PairwisePrediction::Context1
    } else if p2 - p1 > eps_same {
        PairwisePrediction::Context2
    } else {
        PairwisePrediction::Same
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn score<C: Copy + Eq + fmt::Display>(predicted: &[Option<C>], gold: &[C], classes: &[C]) -> MetricsReport {
    let n = gold.len();
    let mut per_class = BTreeMap::new();
    let (mut tp_sum, mut fp_sum, mut fn_sum) = (0, 0, 0);
    let mut recalls = Vec::new();
    for &c in classes {
        let support = gold.iter().filter(|&&g| g == c).count();
        let predicted_c = predicted.iter().filter(|&&p| p == Some(c)).count();
        let tp = predicted.iter().zip(gold).filter(|(&p, &g)| p == Some(c) && g == c).count();
        let (fp, fn_) = (predicted_c - tp, support - tp);
        tp_sum += tp;
        fp_sum += fp;
        fn_sum += fn_;
        let recall = ratio(tp, support);
        if let Some(r) = recall {
            recalls.push(r);
        }
        per_class.insert(
            c.to_string(),
            ClassScore {
                support,
                predicted: predicted_c,
                true_positives: tp,
                precision: ratio(tp, predicted_c),
                recall,
                f1: ratio(2 * tp, 2 * tp + fp + fn_),
            },
        );
    }
    let unknown = predicted.iter().filter(|p| p.is_none()).count();
    let unknown_rate = ratio(unknown, n).unwrap_or(0.0);
    MetricsReport {
        instances: n,
        per_class,
        micro_avg_f1: ratio(2 * tp_sum, 2 * tp_sum + fp_sum + fn_sum).unwrap_or(0.0),
        accuracy: ratio(tp_sum, n).unwrap_or(0.0),
        balanced_accuracy: if recalls.is_empty() {
            0.0
        } else {
            recalls.iter().sum::<f64>() / recalls.len() as f64
        },
        coverage: 1.0 - unknown_rate,
        unknown_rate,
    }
}

pub fn evaluate_pairwise(predictions: &[PairwisePrediction], golds: &[PairwiseGold]) -> Result<MetricsReport> {
    if predictions.len() != golds.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: golds.len(),
        });
    }
    let predicted: Vec<Option<PairwiseGold>> = predictions.iter().map(|p| p.class()).collect();
    Ok(score(&predicted, golds, &PairwiseGold::ALL))
}

/// Scores outcome choices. In threshold mode every report yields a call
/// (no probability means no support), so coverage counts reports that
/// carried a probability.
pub fn evaluate_decision(
    reports: &[PosteriorReport],
    golds: &[DecisionGold],
    tau_dec: f64,
    mode: DecisionMode,
) -> Result<MetricsReport> {
    if reports.len() != golds.len() {
        return Err(Error::LengthMismatch {
            left: reports.len(),
            right: golds.len(),
        });
    }
    let usable = |r: &PosteriorReport| r.p_o1().filter(|_| !r.abstained);
    let predicted: Vec<Option<DecisionGold>> = reports
        .iter()
        .map(|r| match (mode, usable(r)) {
            (DecisionMode::Argmax, Some(p)) if p > 0.5 => Some(DecisionGold::O1),
            (DecisionMode::Argmax, Some(p)) if p < 0.5 => Some(DecisionGold::O2),
            (DecisionMode::Argmax, _) => None,
            (DecisionMode::Threshold, Some(p)) if p > tau_dec => Some(DecisionGold::O1),
            (DecisionMode::Threshold, _) => Some(DecisionGold::O2),
        })
        .collect();
    let mut report = score(&predicted, golds, &DecisionGold::ALL);
    if mode == DecisionMode::Threshold {
        let unknown = reports.iter().filter(|r| usable(r).is_none()).count();
        report.unknown_rate = ratio(unknown, reports.len()).unwrap_or(0.0);
        report.coverage = 1.0 - report.unknown_rate;
    }
    Ok(report)
}
