//! Prediction-error and closed-loop metrics, and their CSV tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::predictor::{
    pairwise_disagreement, BehaviorLabel, EnsembleSet, FutureTrajectory, PredictorError,
    TrainingDataset,
};
use crate::scenario::EpisodeLog;

pub const FORMAT_HEADER: &str = "format_version=1";

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("trajectory lengths differ: {pred} predicted vs {truth} true")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("no {0} to aggregate")]
    Empty(&'static str),
    #[error("reference member error is zero, decrease rate undefined")]
    UndefinedRate,
    #[error("logs mix ensemble sizes {0} and {1}")]
    MixedEnsembleSize(usize, usize),
    #[error("prediction failed: {0}")]
    Predictor(String),
}

impl From<PredictorError> for MetricsError {
    fn from(e: PredictorError) -> Self {
        MetricsError::Predictor(e.to_string())
    }
}

fn check_lengths(pred: &FutureTrajectory, truth: &FutureTrajectory) -> Result<(), MetricsError> {
    let (p, t) = (pred.positions.len(), truth.positions.len());
    if p != t {
        return Err(MetricsError::LengthMismatch { pred: p, truth: t });
    }
    if p == 0 {
        return Err(MetricsError::EmptyTrajectory);
    }
    Ok(())
}

/// Average displacement error.
pub fn ade(pred: &FutureTrajectory, truth: &FutureTrajectory) -> Result<f64, MetricsError> {
    check_lengths(pred, truth)?;
    let sum: f64 = pred
        .positions
        .iter()
        .zip(&truth.positions)
        .map(|(a, b)| a.distance(*b))
        .sum();
    Ok(sum / pred.positions.len() as f64)
}

/// Final displacement error.
pub fn fde(pred: &FutureTrajectory, truth: &FutureTrajectory) -> Result<f64, MetricsError> {
    check_lengths(pred, truth)?;
    let n = pred.positions.len();
    Ok(pred.positions[n - 1].distance(truth.positions[n - 1]))
}

/// `1 - min(err) / err[0]` for ADE and FDE, member 0 being the reference.
/// Errors must already be averaged over the evaluation set.
pub fn decrease_rates(member_ade: &[f64], member_fde: &[f64]) -> Result<(f64, f64), MetricsError> {
    fn rate(errs: &[f64]) -> Result<f64, MetricsError> {
        let first = *errs.first().ok_or(MetricsError::Empty("members"))?;
        if first == 0.0 {
            return Err(MetricsError::UndefinedRate);
        }
        let min = errs.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(1.0 - min / first)
    }
    Ok((rate(member_ade)?, rate(member_fde)?))
}

/// Held-out prediction accuracy of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub member_ade: Vec<f64>,
    pub member_fde: Vec<f64>,
    pub d_ade: f64,
    pub d_fde: f64,
    /// Mean pairwise member ADE per label; absent for labels with no records.
    pub disagreement: BTreeMap<BehaviorLabel, f64>,
    pub records: usize,
}

/// Scores every member on every record of `dataset`.
pub fn evaluate_predictions(
    ensemble: &EnsembleSet,
    dataset: &TrainingDataset,
) -> Result<PredictionReport, MetricsError> {
    if dataset.is_empty() {
        return Err(MetricsError::Empty("evaluation records"));
    }
    let n = ensemble.len();
    let mut ade_sum = vec![0.0; n];
    let mut fde_sum = vec![0.0; n];
    let mut spread: BTreeMap<BehaviorLabel, (f64, usize)> = BTreeMap::new();
    let mut ws = crate::predictor::network::Workspace::new(&ensemble.members()[0].architecture());
    for r in &dataset.records {
        let history = r
            .case
            .agent_history(r.future.agent_id)
            .ok_or(PredictorError::UnknownAgent(r.future.agent_id))?;
        let preds = ensemble
            .members()
            .iter()
            .map(|m| m.predict_history(history, &mut ws))
            .collect::<Result<Vec<_>, _>>()?;
        for (i, p) in preds.iter().enumerate() {
            ade_sum[i] += ade(p, &r.future)?;
            fde_sum[i] += fde(p, &r.future)?;
        }
        let e = spread.entry(r.label).or_insert((0.0, 0));
        e.0 += pairwise_disagreement(&preds);
        e.1 += 1;
    }
    let count = dataset.len() as f64;
    let member_ade: Vec<f64> = ade_sum.iter().map(|s| s / count).collect();
    let member_fde: Vec<f64> = fde_sum.iter().map(|s| s / count).collect();
    let (d_ade, d_fde) = decrease_rates(&member_ade, &member_fde)?;
    Ok(PredictionReport {
        member_ade,
        member_fde,
        d_ade,
        d_fde,
        disagreement: spread
            .into_iter()
            .map(|(l, (s, c))| (l, s / c as f64))
            .collect(),
        records: dataset.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LabelStats {
    pub episodes: usize,
    pub safe: usize,
    pub p_safe: f64,
    pub p_ev: f64,
}

impl LabelStats {
    fn from_logs<'a>(logs: impl Iterator<Item = &'a EpisodeLog>) -> Self {
        let mut s = LabelStats::default();
        let mut speed = 0.0;
        for l in logs {
            s.episodes += 1;
            s.safe += usize::from(l.is_safe());
            speed += l.mean_planned_speed;
        }
        if s.episodes > 0 {
            s.p_safe = s.safe as f64 / s.episodes as f64;
            s.p_ev = speed / s.episodes as f64;
        }
        s
    }
}

/// Closed-loop results of one ensemble size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ensemble_size: usize,
    pub overall: LabelStats,
    pub per_label: BTreeMap<BehaviorLabel, LabelStats>,
    /// Labels with the most training records, top tenth (at least one).
    pub normal_labels: Vec<BehaviorLabel>,
    pub normal: LabelStats,
    pub training_counts: BTreeMap<BehaviorLabel, usize>,
    pub prediction: Option<PredictionReport>,
}

/// The top-tenth labels by training count; ties go to the head label.
pub fn normal_labels(training_counts: &BTreeMap<BehaviorLabel, usize>) -> Vec<BehaviorLabel> {
    let mut labels: Vec<_> = BehaviorLabel::ALL.to_vec();
    labels.sort_by_key(|l| {
        (
            std::cmp::Reverse(training_counts.get(l).copied().unwrap_or(0)),
            l.index(),
        )
    });
    let keep = (labels.len() as f64 * 0.1).ceil() as usize;
    labels.truncate(keep.max(1));
    labels
}

/// Safety and efficiency per case label and over all episodes.
pub fn aggregate(
    logs: &[EpisodeLog],
    training_counts: &BTreeMap<BehaviorLabel, usize>,
) -> Result<MetricsReport, MetricsError> {
    let first = logs.first().ok_or(MetricsError::Empty("episode logs"))?;
    if let Some(other) = logs.iter().find(|l| l.ensemble_size != first.ensemble_size) {
        return Err(MetricsError::MixedEnsembleSize(
            first.ensemble_size,
            other.ensemble_size,
        ));
    }
    let per_label = BehaviorLabel::ALL
        .iter()
        .map(|&label| {
            let stats = LabelStats::from_logs(logs.iter().filter(|l| l.case_label == Some(label)));
            (label, stats)
        })
        .collect();
    let normal_labels = normal_labels(training_counts);
    let normal = LabelStats::from_logs(
        logs.iter()
            .filter(|l| l.case_label.is_some_and(|c| normal_labels.contains(&c))),
    );
    Ok(MetricsReport {
        ensemble_size: first.ensemble_size,
        overall: LabelStats::from_logs(logs.iter()),
        per_label,
        normal_labels,
        normal,
        training_counts: training_counts.clone(),
        prediction: None,
    })
}

fn column_name(n: usize) -> String {
    if n == 1 {
        "n=1 (baseline)".to_string()
    } else {
        format!("n={n}")
    }
}

/// Table with one column per report: success rate, planned speed, planned
/// speed on normal cases, and the two decrease rates, all in percent or m/s.
pub fn summary_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::new();
    writeln!(out, "{FORMAT_HEADER}").unwrap();
    out.push_str("metric");
    for r in reports {
        write!(out, ",{}", column_name(r.ensemble_size)).unwrap();
    }
    out.push('\n');
    type Row = fn(&MetricsReport) -> Option<f64>;
    let rows: [(&str, Row); 5] = [
        ("p_safe_percent", |r| Some(100.0 * r.overall.p_safe)),
        ("p_ev_mps", |r| Some(r.overall.p_ev)),
        ("p_ev_normal_mps", |r| Some(r.normal.p_ev)),
        ("d_ade_percent", |r| {
            r.prediction.as_ref().map(|p| 100.0 * p.d_ade)
        }),
        ("d_fde_percent", |r| {
            r.prediction.as_ref().map(|p| 100.0 * p.d_fde)
        }),
    ];
    for (name, f) in rows {
        out.push_str(name);
        for r in reports {
            match f(r) {
                Some(v) => write!(out, ",{v:.4}").unwrap(),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

/// Per-label table: training count, episode count and success rate for each
/// report, head label first.
pub fn per_label_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::new();
    writeln!(out, "{FORMAT_HEADER}").unwrap();
    out.push_str("label,training_count");
    for r in reports {
        let n = r.ensemble_size;
        write!(out, ",episodes_n{n},p_safe_n{n}").unwrap();
    }
    out.push('\n');
    let counts = reports
        .first()
        .map(|r| r.training_counts.clone())
        .unwrap_or_default();
    for label in BehaviorLabel::ALL {
        write!(out, "{label},{}", counts.get(&label).copied().unwrap_or(0)).unwrap();
        for r in reports {
            let s = r.per_label.get(&label).copied().unwrap_or_default();
            if s.episodes == 0 {
                write!(out, ",0,").unwrap();
            } else {
                write!(out, ",{},{:.4}", s.episodes, s.p_safe).unwrap();
            }
        }
        out.push('\n');
    }
    out
}
