//! Experiment driver behind the `plan` binary: collect, train, eval,
//! report and sweep.
//!
//! A run directory looks like
//!
//! ```text
//! out/
//!   dataset.jsonl  heldout.jsonl  histogram.csv
//!   ensemble/      manifest.txt, member_NN.model, histogram.csv
//!   eval_n1/       report.json, episodes/ (optional)
//!   eval_n10/      ...
//!   summary.csv  per_label.csv  right_then_left.csv
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::metrics::{
    aggregate, evaluate_predictions, per_label_csv, summary_csv, MetricsError, MetricsReport,
    FORMAT_HEADER,
};
use crate::persist::{
    histogram_text, read_dataset, read_ensemble, read_histogram, read_report, write_dataset,
    write_ensemble, write_episode_log, write_report, write_text, PersistError,
};
use crate::predictor::{train_ensemble, BehaviorLabel, EnsembleSet, PredictorError};
use crate::scenario::{
    collect_dataset, right_then_left_episode, run_episode, run_episode_with,
    EpisodeLog, EpisodeOptions, PredictionSource, SimError,
};

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const HELDOUT_FILE: &str = "heldout.jsonl";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const ENSEMBLE_DIR: &str = "ensemble";
pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const PER_LABEL_FILE: &str = "per_label.csv";
pub const RIGHT_THEN_LEFT_FILE: &str = "right_then_left.csv";

/// Clearance below which a plan counts as hitting the agent, m.
pub const NEAR_MISS: f64 = 1.0;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("no evaluation run for n = {missing:?} under {root}")]
    MissingRuns { root: PathBuf, missing: Vec<usize> },
    #[error("ensemble in {dir} has {have} members, {want} requested")]
    TooFewMembers {
        dir: PathBuf,
        have: usize,
        want: usize,
    },
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

/// Directory holding the evaluation of ensemble size `n`.
pub fn eval_dir(root: &Path, n: usize) -> PathBuf {
    root.join(format!("eval_n{n}"))
}

pub struct Collected {
    pub records: usize,
    pub heldout_records: usize,
    pub counts: BTreeMap<BehaviorLabel, usize>,
}

/// Writes the training set, a held-out set and the training label
/// histogram into `out`.
pub fn cmd_collect(config: &ExperimentConfig, out: &Path) -> Result<Collected> {
    let e = &config.experiment;
    let train = collect_dataset(&config.scenario, e.collect_episodes, e.collect_seed);
    let heldout = collect_dataset(&config.scenario, e.heldout_episodes, e.heldout_seed);
    write_dataset(&out.join(DATASET_FILE), &train)?;
    write_dataset(&out.join(HELDOUT_FILE), &heldout)?;
    let counts = train.label_counts();
    write_text(&out.join(HISTOGRAM_FILE), &histogram_text(&counts))?;
    Ok(Collected {
        records: train.len(),
        heldout_records: heldout.len(),
        counts,
    })
}

/// Trains `n` members on the dataset at `dataset` and writes them, with a
/// manifest and the training histogram, into `out`.
pub fn cmd_train(
    config: &ExperimentConfig,
    dataset: &Path,
    n: usize,
    out: &Path,
) -> Result<EnsembleSet> {
    let data = read_dataset(dataset)?;
    let p = &config.predictor;
    let ensemble = train_ensemble(
        &data,
        p.history_steps,
        p.horizon_steps,
        n,
        config.experiment.train_seed,
        &p.training,
    )?;
    write_ensemble(out, &ensemble)?;
    write_text(&out.join(HISTOGRAM_FILE), &histogram_text(&data.label_counts()))?;
    Ok(ensemble)
}

/// Loads the ensemble in `dir` and keeps its first `n` members.
pub fn load_prefix(dir: &Path, n: usize) -> Result<EnsembleSet> {
    let full = read_ensemble(dir)?;
    if full.len() < n {
        return Err(ExperimentError::TooFewMembers {
            dir: dir.to_path_buf(),
            have: full.len(),
            want: n,
        });
    }
    Ok(full.prefix(n)?)
}

/// Closed-loop episodes with seeds `seed, seed + 1, ...`.
pub fn run_episodes(
    config: &ExperimentConfig,
    ensemble: &EnsembleSet,
    episodes: usize,
    seed: u64,
) -> Result<Vec<EpisodeLog>> {
    (0..episodes)
        .map(|i| {
            run_episode(
                &config.scenario,
                ensemble,
                &config.planner,
                seed.wrapping_add(i as u64),
            )
            .map_err(ExperimentError::from)
        })
        .collect()
}

/// Evaluates the first `n` members of the ensemble in `ensemble_dir` on
/// `episodes` paired episodes starting at `seed`, and on the held-out set
/// when one is given. Writes `report.json` (and episode logs if enabled)
/// into `out`.
pub fn cmd_eval(
    config: &ExperimentConfig,
    ensemble_dir: &Path,
    n: usize,
    heldout: Option<&Path>,
    episodes: usize,
    seed: u64,
    out: &Path,
) -> Result<MetricsReport> {
    let ensemble = load_prefix(ensemble_dir, n)?;
    let counts = read_histogram(&ensemble_dir.join(HISTOGRAM_FILE))?;
    let logs = run_episodes(config, &ensemble, episodes, seed)?;
    if config.experiment.episode_logs {
        for log in &logs {
            write_episode_log(&out.join("episodes").join(format!("{}.log", log.seed)), log)?;
        }
    }
    let mut report = aggregate(&logs, &counts)?;
    if let Some(path) = heldout {
        report.prediction = Some(evaluate_predictions(&ensemble, &read_dataset(path)?)?);
    }
    write_report(&out.join(REPORT_FILE), &report)?;
    Ok(report)
}

/// Reads `eval_n{n}/report.json` under `root` for every `n` and writes the
/// summary and per-label tables into `out`.
pub fn cmd_report(root: &Path, sizes: &[usize], out: &Path) -> Result<Vec<MetricsReport>> {
    let missing: Vec<usize> = sizes
        .iter()
        .copied()
        .filter(|&n| !eval_dir(root, n).join(REPORT_FILE).is_file())
        .collect();
    if !missing.is_empty() {
        return Err(ExperimentError::MissingRuns {
            root: root.to_path_buf(),
            missing,
        });
    }
    let reports = sizes
        .iter()
        .map(|&n| read_report(&eval_dir(root, n).join(REPORT_FILE)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    write_text(&out.join(SUMMARY_FILE), &summary_csv(&reports))?;
    write_text(&out.join(PER_LABEL_FILE), &per_label_csv(&reports))?;
    Ok(reports)
}

/// One repetition of the scripted right-then-left study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RightThenLeftRep {
    pub seed: u64,
    pub small_clearance: f64,
    pub large_clearance: f64,
}

impl RightThenLeftRep {
    /// The small ensemble's run comes within [`NEAR_MISS`] of the agent
    /// and the large ensemble's does not.
    pub fn large_ensemble_helps(&self) -> bool {
        self.small_clearance < NEAR_MISS && self.large_clearance >= NEAR_MISS
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RightThenLeftStudy {
    pub small: usize,
    pub large: usize,
    pub reps: Vec<RightThenLeftRep>,
}

impl RightThenLeftStudy {
    pub fn success_rate(&self) -> f64 {
        if self.reps.is_empty() {
            return 0.0;
        }
        let hits = self.reps.iter().filter(|r| r.large_ensemble_helps()).count();
        hits as f64 / self.reps.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "{FORMAT_HEADER}\nseed,clearance_n{},clearance_n{},large_ensemble_helps\n",
            self.small, self.large
        );
        for r in &self.reps {
            writeln!(
                out,
                "{},{:.4},{:.4},{}",
                r.seed,
                r.small_clearance,
                r.large_clearance,
                r.large_ensemble_helps()
            )
            .unwrap();
        }
        out
    }
}

/// Runs each scripted right-then-left episode with the first `small` and
/// the first `large` members and records the smallest gap between the ego
/// and the agent along the executed plans.
pub fn right_then_left_study(
    config: &ExperimentConfig,
    ensemble: &EnsembleSet,
    small: usize,
    large: usize,
) -> Result<RightThenLeftStudy> {
    let a = ensemble.prefix(small)?;
    let b = ensemble.prefix(large)?;
    let e = &config.experiment;
    let mut reps = Vec::with_capacity(e.right_then_left_reps);
    for i in 0..e.right_then_left_reps {
        let seed = e.right_then_left_seed.wrapping_add(i as u64);
        let init = right_then_left_episode(&config.scenario, &config.planner, seed)?;
        let mut clearance = [0.0; 2];
        for (c, members) in clearance.iter_mut().zip([&a, &b]) {
            let log = run_episode_with(
                &config.scenario,
                &init,
                PredictionSource::Ensemble(members),
                &config.planner,
                EpisodeOptions::default(),
            )?;
            *c = log.min_clearance;
        }
        reps.push(RightThenLeftRep {
            seed,
            small_clearance: clearance[0],
            large_clearance: clearance[1],
        });
    }
    Ok(RightThenLeftStudy { small, large, reps })
}

/// Everything a sweep produced.
pub struct Sweep {
    pub collected: Collected,
    pub reports: Vec<MetricsReport>,
    pub right_then_left: RightThenLeftStudy,
}

/// collect, train the largest ensemble once, evaluate every configured
/// size on the same episode seeds, report, and run the right-then-left
/// study with the smallest and largest sizes.
pub fn cmd_sweep(config: &ExperimentConfig, out: &Path) -> Result<Sweep> {
    let e = &config.experiment;
    let collected = cmd_collect(config, out)?;
    let ensemble_dir = out.join(ENSEMBLE_DIR);
    let ensemble = cmd_train(
        config,
        &out.join(DATASET_FILE),
        config.max_ensemble_size(),
        &ensemble_dir,
    )?;
    let heldout = (collected.heldout_records > 0).then(|| out.join(HELDOUT_FILE));
    for &n in &e.ensemble_sizes {
        cmd_eval(
            config,
            &ensemble_dir,
            n,
            heldout.as_deref(),
            e.eval_episodes,
            e.eval_seed,
            &eval_dir(out, n),
        )?;
    }
    let reports = cmd_report(out, &e.ensemble_sizes, out)?;
    let small = e.ensemble_sizes.iter().copied().min().unwrap_or(1);
    let right_then_left = right_then_left_study(config, &ensemble, small, ensemble.len())?;
    write_text(&out.join(RIGHT_THEN_LEFT_FILE), &right_then_left.to_csv())?;
    Ok(Sweep {
        collected,
        reports,
        right_then_left,
    })
}
