//! On-disk formats. Every file starts with a `format_version=1` line.
//!
//! - datasets: one JSON record per line;
//! - models: `key=value` text with comma-separated numbers;
//! - ensemble manifests: `key=value` text listing member files;
//! - episode logs: a JSON summary line, then one JSON line per step;
//! - histograms: `label,count` lines;
//! - metrics reports: one JSON document.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{MetricsReport, FORMAT_HEADER};
use crate::predictor::{
    BehaviorLabel, EnsembleSet, Normalizer, PredictorError, PredictorModel, TrainingDataset,
    TrainingRecord,
};
use crate::scenario::{EpisodeInit, EpisodeLog, Outcome, StepRecord};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Model {
        path: PathBuf,
        #[source]
        source: PredictorError,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PersistError + '_ {
    move |source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> PersistError {
    PersistError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Writes `contents`, creating parent directories.
pub fn write_text(path: &Path, contents: &str) -> Result<(), PersistError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

fn read_lines(path: &Path) -> Result<Vec<String>, PersistError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(io_err(path))
}

fn check_header(path: &Path, first: Option<&String>) -> Result<(), PersistError> {
    match first {
        Some(l) if l.trim() == FORMAT_HEADER => Ok(()),
        Some(l) => Err(parse_err(path, 1, format!("expected `{FORMAT_HEADER}`, found `{l}`"))),
        None => Err(parse_err(path, 1, "empty file")),
    }
}

pub fn write_dataset(path: &Path, dataset: &TrainingDataset) -> Result<(), PersistError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> io::Result<()> {
        writeln!(w, "{FORMAT_HEADER}")?;
        for r in &dataset.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    };
    write().map_err(io_err(path))
}

pub fn read_dataset(path: &Path) -> Result<TrainingDataset, PersistError> {
    let lines = read_lines(path)?;
    check_header(path, lines.first())?;
    let mut records = Vec::with_capacity(lines.len().saturating_sub(1));
    for (i, line) in lines.iter().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let r: TrainingRecord =
            serde_json::from_str(line).map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        r.case
            .validate()
            .map_err(|e| parse_err(path, i + 1, e))?;
        records.push(r);
    }
    Ok(TrainingDataset { records })
}

/// `label,count` lines, head label first.
pub fn histogram_text(counts: &BTreeMap<BehaviorLabel, usize>) -> String {
    let mut out = format!("{FORMAT_HEADER}\nlabel,count\n");
    for label in BehaviorLabel::ALL {
        if let Some(c) = counts.get(&label) {
            writeln!(out, "{label},{c}").unwrap();
        }
    }
    out
}

/// Parses the output of [`histogram_text`].
pub fn read_histogram(path: &Path) -> Result<BTreeMap<BehaviorLabel, usize>, PersistError> {
    let lines = read_lines(path)?;
    check_header(path, lines.first())?;
    let mut counts = BTreeMap::new();
    for (i, line) in lines.iter().enumerate().skip(1) {
        let line = line.trim();
        if line.is_empty() || line == "label,count" {
            continue;
        }
        let (name, count) = line
            .split_once(',')
            .ok_or_else(|| parse_err(path, i + 1, format!("expected `label,count`, found `{line}`")))?;
        let label = BehaviorLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == name)
            .ok_or_else(|| parse_err(path, i + 1, format!("unknown label `{name}`")))?;
        let count = count
            .parse()
            .map_err(|_| parse_err(path, i + 1, format!("bad count `{count}`")))?;
        counts.insert(label, count);
    }
    Ok(counts)
}

pub fn write_report(path: &Path, report: &MetricsReport) -> Result<(), PersistError> {
    let body = serde_json::to_string_pretty(report).expect("report serializes");
    write_text(path, &format!("{FORMAT_HEADER}\n{body}\n"))
}

pub fn read_report(path: &Path) -> Result<MetricsReport, PersistError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let (first, body) = text.split_once('\n').unwrap_or((&text, ""));
    check_header(path, Some(&first.to_string()))?;
    serde_json::from_str(body).map_err(|e| parse_err(path, e.line() + 1, e.to_string()))
}

fn join(values: &[f64]) -> String {
    let mut out = String::with_capacity(values.len() * 20);
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        // Shortest representation that parses back to the same bits.
        write!(out, "{v:?}").unwrap();
    }
    out
}

fn split<T: std::str::FromStr>(path: &Path, line: usize, text: &str) -> Result<Vec<T>, PersistError> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| parse_err(path, line, format!("bad number `{t}`")))
        })
        .collect()
}

pub fn model_text(model: &PredictorModel) -> Result<String, PredictorError> {
    let normalizer = model.normalizer.as_ref().ok_or(PredictorError::NotTrained)?;
    let layers: Vec<String> = model.layers.iter().map(usize::to_string).collect();
    let mut out = String::new();
    writeln!(out, "{FORMAT_HEADER}").unwrap();
    writeln!(out, "layers={}", layers.join(",")).unwrap();
    writeln!(out, "history_steps={}", model.history_steps).unwrap();
    writeln!(out, "horizon_steps={}", model.horizon_steps).unwrap();
    writeln!(out, "seed={}", model.seed).unwrap();
    writeln!(out, "final_loss={:?}", model.final_loss).unwrap();
    writeln!(out, "normalizer_mean={}", join(&normalizer.mean)).unwrap();
    writeln!(out, "normalizer_scale={}", join(&normalizer.scale)).unwrap();
    writeln!(out, "parameters={}", join(&model.parameters)).unwrap();
    Ok(out)
}

/// `key=value` lines after the header, with their line numbers.
fn key_values(path: &Path, lines: &[String]) -> Result<BTreeMap<String, (usize, String)>, PersistError> {
    check_header(path, lines.first())?;
    let mut map = BTreeMap::new();
    for (i, line) in lines.iter().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(path, i + 1, "expected key=value"))?;
        map.insert(k.trim().to_string(), (i + 1, v.trim().to_string()));
    }
    Ok(map)
}

fn field<'a>(
    path: &Path,
    map: &'a BTreeMap<String, (usize, String)>,
    key: &str,
) -> Result<(usize, &'a str), PersistError> {
    map.get(key)
        .map(|(l, v)| (*l, v.as_str()))
        .ok_or_else(|| parse_err(path, 0, format!("missing `{key}`")))
}

fn scalar<T: std::str::FromStr>(
    path: &Path,
    map: &BTreeMap<String, (usize, String)>,
    key: &str,
) -> Result<T, PersistError> {
    let (line, v) = field(path, map, key)?;
    v.parse()
        .map_err(|_| parse_err(path, line, format!("bad value for `{key}`: `{v}`")))
}

pub fn write_model(path: &Path, model: &PredictorModel) -> Result<(), PersistError> {
    let text = model_text(model).map_err(|source| PersistError::Model {
        path: path.to_path_buf(),
        source,
    })?;
    write_text(path, &text)
}

pub fn read_model(path: &Path) -> Result<PredictorModel, PersistError> {
    let lines = read_lines(path)?;
    let map = key_values(path, &lines)?;
    let vec_f64 = |key: &str| -> Result<Vec<f64>, PersistError> {
        let (line, v) = field(path, &map, key)?;
        split(path, line, v)
    };
    let (layers_line, layers_text) = field(path, &map, "layers")?;
    let layers: Vec<usize> = split(path, layers_line, layers_text)?;
    let model = PredictorModel {
        history_steps: scalar(path, &map, "history_steps")?,
        horizon_steps: scalar(path, &map, "horizon_steps")?,
        seed: scalar(path, &map, "seed")?,
        final_loss: scalar(path, &map, "final_loss")?,
        normalizer: Some(Normalizer {
            mean: vec_f64("normalizer_mean")?,
            scale: vec_f64("normalizer_scale")?,
        }),
        parameters: vec_f64("parameters")?,
        layers,
    };
    let arch = model.architecture();
    let bad = |message: String| parse_err(path, 0, message);
    if model.layers.len() < 2 {
        return Err(bad("fewer than two layers".into()));
    }
    if model.parameters.len() != arch.param_count() {
        return Err(bad(format!(
            "{} parameters, architecture needs {}",
            model.parameters.len(),
            arch.param_count()
        )));
    }
    let norm = model.normalizer.as_ref().unwrap();
    if norm.mean.len() != arch.input_len() || norm.scale.len() != arch.input_len() {
        return Err(bad("normalizer length does not match the input layer".into()));
    }
    if model.parameters.iter().any(|p| !p.is_finite()) {
        return Err(bad("non-finite parameter".into()));
    }
    Ok(model)
}

/// Member file name for index `i`.
pub fn member_file(i: usize) -> String {
    format!("member_{i:02}.model")
}

/// Writes the members and a manifest listing them into `dir`.
pub fn write_ensemble(dir: &Path, ensemble: &EnsembleSet) -> Result<(), PersistError> {
    let mut manifest = format!("{FORMAT_HEADER}\nmembers={}\n", ensemble.len());
    for (i, m) in ensemble.members().iter().enumerate() {
        let name = member_file(i);
        write_model(&dir.join(&name), m)?;
        writeln!(manifest, "member={name} seed={}", m.seed).unwrap();
    }
    write_text(&dir.join(MANIFEST_FILE), &manifest)
}

/// Reads the ensemble whose manifest is in `dir`.
pub fn read_ensemble(dir: &Path) -> Result<EnsembleSet, PersistError> {
    let path = dir.join(MANIFEST_FILE);
    let lines = read_lines(&path)?;
    check_header(&path, lines.first())?;
    let mut expected = None;
    let mut members = Vec::new();
    for (i, line) in lines.iter().enumerate().skip(1) {
        let line = line.trim();
        if let Some(n) = line.strip_prefix("members=") {
            expected = Some(
                n.parse::<usize>()
                    .map_err(|_| parse_err(&path, i + 1, format!("bad member count `{n}`")))?,
            );
        } else if let Some(rest) = line.strip_prefix("member=") {
            let name = rest.split_whitespace().next().unwrap_or("");
            members.push(read_model(&dir.join(name))?);
        } else if !line.is_empty() {
            return Err(parse_err(&path, i + 1, format!("unexpected line `{line}`")));
        }
    }
    if expected != Some(members.len()) {
        return Err(parse_err(
            &path,
            0,
            format!("manifest lists {} members, declares {expected:?}", members.len()),
        ));
    }
    EnsembleSet::new(members).map_err(|source| PersistError::Model { path, source })
}

/// First line of an episode log after the header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EpisodeSummary {
    seed: u64,
    ensemble_size: usize,
    init: EpisodeInit,
    outcome: Outcome,
    case_label: Option<BehaviorLabel>,
    mean_planned_speed: f64,
    mean_ego_speed: f64,
    min_clearance: Option<f64>,
    steps: usize,
}

pub fn write_episode_log(path: &Path, log: &EpisodeLog) -> Result<(), PersistError> {
    let summary = EpisodeSummary {
        seed: log.seed,
        ensemble_size: log.ensemble_size,
        init: log.init.clone(),
        outcome: log.outcome,
        case_label: log.case_label,
        mean_planned_speed: log.mean_planned_speed,
        mean_ego_speed: log.mean_ego_speed,
        min_clearance: log.min_clearance.is_finite().then_some(log.min_clearance),
        steps: log.steps.len(),
    };
    let mut out = format!("{FORMAT_HEADER}\n");
    out.push_str(&serde_json::to_string(&summary).expect("summary serializes"));
    out.push('\n');
    for s in &log.steps {
        out.push_str(&serde_json::to_string(s).expect("step serializes"));
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn read_episode_log(path: &Path) -> Result<EpisodeLog, PersistError> {
    let lines = read_lines(path)?;
    check_header(path, lines.first())?;
    let first = lines.get(1).ok_or_else(|| parse_err(path, 2, "missing summary"))?;
    let summary: EpisodeSummary =
        serde_json::from_str(first).map_err(|e| parse_err(path, 2, e.to_string()))?;
    let steps = lines[2..]
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<StepRecord>(l).map_err(|e| parse_err(path, i + 3, e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if steps.len() != summary.steps {
        return Err(parse_err(
            path,
            0,
            format!("{} steps, summary says {}", steps.len(), summary.steps),
        ));
    }
    Ok(EpisodeLog {
        seed: summary.seed,
        ensemble_size: summary.ensemble_size,
        init: summary.init,
        steps,
        outcome: summary.outcome,
        case_label: summary.case_label,
        mean_planned_speed: summary.mean_planned_speed,
        mean_ego_speed: summary.mean_ego_speed,
        min_clearance: summary.min_clearance.unwrap_or(f64::INFINITY),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{train_ensemble, TrainingConfig};
    use crate::scenario::{collect_dataset, ScenarioConfig};

    #[test]
    fn dataset_round_trip_and_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let data = collect_dataset(&ScenarioConfig::default(), 1, 4);
        write_dataset(&path, &data).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), data);

        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("{not json}\n");
        fs::write(&path, text).unwrap();
        match read_dataset(&path) {
            Err(PersistError::Parse { line, .. }) => assert_eq!(line, data.len() + 2),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn ensemble_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let data = collect_dataset(&ScenarioConfig::default(), 1, 4);
        let cfg = TrainingConfig {
            epochs: 1,
            hidden_layers: vec![8],
            ..Default::default()
        };
        let e = train_ensemble(&data, 10, 30, 2, 3, &cfg).unwrap();
        write_ensemble(dir.path(), &e).unwrap();
        assert_eq!(read_ensemble(dir.path()).unwrap(), e);
        fs::remove_file(dir.path().join(member_file(1))).unwrap();
        assert!(matches!(read_ensemble(dir.path()), Err(PersistError::Io { .. })));
    }

    #[test]
    fn missing_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        fs::write(&path, "{}\n").unwrap();
        assert!(matches!(read_dataset(&path), Err(PersistError::Parse { line: 1, .. })));
    }
}
