//! Trajectory predictor and the randomized ensemble that forms the
//! prediction set.
//!
//! Each member is the same small feed-forward network over agent-centric
//! history features. Members differ only in their seed, which drives both
//! the weight initialization and the mini-batch order; every member sees the
//! full dataset.

pub mod data;
pub mod features;
pub mod network;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use data::{
    AgentId, AgentState, BehaviorLabel, DrivingCase, FutureTrajectory, PredictedFutures,
    TrainingDataset, TrainingRecord,
};
pub use features::{extract_features, feature_len, Normalizer};
pub use network::Architecture;

use crate::geometry::Vec2;

#[derive(Debug, Error, PartialEq)]
pub enum PredictorError {
    #[error("agent {0} is not in the driving case")]
    UnknownAgent(AgentId),
    #[error("model has no normalizer; train it first")]
    NotTrained,
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("ensemble member {member}: {source}")]
    Member {
        member: usize,
        #[source]
        source: Box<PredictorError>,
    },
    #[error("ensemble needs at least one member")]
    EmptyEnsemble,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Optimizer and schedule for [`train_model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub hidden_layers: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            hidden_layers: vec![64, 64],
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 50,
        }
    }
}

/// One trained predictor `p_theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    pub layers: Vec<usize>,
    pub history_steps: usize,
    pub horizon_steps: usize,
    pub parameters: Vec<f64>,
    pub normalizer: Option<Normalizer>,
    pub seed: u64,
    pub final_loss: f64,
}

impl PredictorModel {
    /// A model with every parameter zero and an identity normalizer: it
    /// predicts each agent standing still.
    pub fn zeros(history_steps: usize, horizon_steps: usize, hidden: &[usize]) -> Self {
        let layers = layer_sizes(history_steps, horizon_steps, hidden);
        let arch = Architecture::new(layers.clone());
        Self {
            parameters: vec![0.0; arch.param_count()],
            normalizer: Some(Normalizer::identity(arch.input_len())),
            layers,
            history_steps,
            horizon_steps,
            seed: 0,
            final_loss: f64::NAN,
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::new(self.layers.clone())
    }

    /// Predicted future of one agent history (last entry current).
    pub fn predict_history(
        &self,
        history: &[data::AgentState],
        ws: &mut network::Workspace,
    ) -> Result<FutureTrajectory, PredictorError> {
        let normalizer = self.normalizer.as_ref().ok_or(PredictorError::NotTrained)?;
        if history.len() != self.history_steps + 1 {
            return Err(PredictorError::Shape(format!(
                "history has {} states, model expects {}",
                history.len(),
                self.history_steps + 1
            )));
        }
        let mut x = features::history_features(history);
        normalizer.apply(&mut x);
        network::forward(&self.architecture(), &self.parameters, &x, ws);
        let current = history[history.len() - 1];
        let out = ws.output();
        let mut positions = Vec::with_capacity(self.horizon_steps);
        let mut rel = Vec2::ZERO;
        for t in 0..self.horizon_steps {
            rel = rel + Vec2::new(out[2 * t], out[2 * t + 1]);
            positions.push(current.position + rel.rotate(current.heading));
        }
        Ok(FutureTrajectory {
            agent_id: current.agent_id,
            start_heading: current.heading,
            positions,
        })
    }
}

fn layer_sizes(history_steps: usize, horizon_steps: usize, hidden: &[usize]) -> Vec<usize> {
    let mut layers = vec![feature_len(history_steps)];
    layers.extend_from_slice(hidden);
    layers.push(2 * horizon_steps);
    layers
}

/// One future per surrounding agent in `case`, in case order.
pub fn predict(
    model: &PredictorModel,
    case: &DrivingCase,
) -> Result<Vec<FutureTrajectory>, PredictorError> {
    if model.normalizer.is_none() {
        return Err(PredictorError::NotTrained);
    }
    let mut ws = network::Workspace::new(&model.architecture());
    case.agent_histories
        .iter()
        .map(|h| model.predict_history(h, &mut ws))
        .collect()
}

/// The prediction set `P`: `n` members sharing architecture and normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSet {
    members: Vec<PredictorModel>,
}

impl EnsembleSet {
    pub fn new(members: Vec<PredictorModel>) -> Result<Self, PredictorError> {
        let first = members.first().ok_or(PredictorError::EmptyEnsemble)?;
        for m in &members[1..] {
            if m.layers != first.layers
                || m.history_steps != first.history_steps
                || m.horizon_steps != first.horizon_steps
                || m.normalizer != first.normalizer
            {
                return Err(PredictorError::Shape(
                    "ensemble members differ in architecture or normalizer".into(),
                ));
            }
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[PredictorModel] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn history_steps(&self) -> usize {
        self.members[0].history_steps
    }

    pub fn horizon_steps(&self) -> usize {
        self.members[0].horizon_steps
    }

    /// The first `n` members, used for nested sweeps over `n`.
    pub fn prefix(&self, n: usize) -> Result<EnsembleSet, PredictorError> {
        if n == 0 || n > self.members.len() {
            return Err(PredictorError::Shape(format!(
                "prefix {n} of an ensemble with {} members",
                self.members.len()
            )));
        }
        Ok(Self {
            members: self.members[..n].to_vec(),
        })
    }
}

/// Runs every member on `case`; member order is preserved.
pub fn predict_set(
    ensemble: &EnsembleSet,
    case: &DrivingCase,
) -> Result<PredictedFutures, PredictorError> {
    let members = ensemble
        .members
        .iter()
        .map(|m| predict(m, case))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PredictedFutures { members })
}

/// Inputs (raw features) and agent-frame targets for every record.
fn design_matrix(
    dataset: &TrainingDataset,
    history_steps: usize,
    horizon_steps: usize,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), PredictorError> {
    let mut inputs = Vec::with_capacity(dataset.len());
    let mut targets = Vec::with_capacity(dataset.len());
    for (i, r) in dataset.records.iter().enumerate() {
        let history = r
            .case
            .agent_history(r.future.agent_id)
            .ok_or(PredictorError::UnknownAgent(r.future.agent_id))?;
        if history.len() != history_steps + 1 || r.future.positions.len() != horizon_steps {
            return Err(PredictorError::Shape(format!(
                "record {i}: history {} / future {} vs expected {} / {}",
                history.len(),
                r.future.positions.len(),
                history_steps + 1,
                horizon_steps
            )));
        }
        inputs.push(features::history_features(history));
        targets.push(features::to_agent_frame(
            &history[history.len() - 1],
            &r.future.positions,
        ));
    }
    Ok((inputs, targets))
}

/// Dataset normalizer shared by all members.
pub fn fit_normalizer(
    dataset: &TrainingDataset,
    history_steps: usize,
) -> Result<Normalizer, PredictorError> {
    let mut rows = Vec::with_capacity(dataset.len());
    for r in &dataset.records {
        let history = r
            .case
            .agent_history(r.future.agent_id)
            .ok_or(PredictorError::UnknownAgent(r.future.agent_id))?;
        rows.push(features::history_features(history));
    }
    Ok(Normalizer::fit(
        rows.iter().map(Vec::as_slice),
        feature_len(history_steps),
    ))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(len: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            lr,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        let step = self.lr * c2.sqrt() / c1;
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= step * *m / (v.sqrt() + Self::EPS * c2.sqrt());
        }
    }
}

/// Trains one member with mini-batch Adam on the cumulative-position MSE.
/// `seed` drives both initialization and shuffling.
pub fn train_model(
    dataset: &TrainingDataset,
    history_steps: usize,
    horizon_steps: usize,
    seed: u64,
    config: &TrainingConfig,
) -> Result<PredictorModel, PredictorError> {
    let normalizer = fit_normalizer(dataset, history_steps)?;
    train_with_normalizer(
        dataset,
        history_steps,
        horizon_steps,
        seed,
        config,
        normalizer,
    )
}

fn train_with_normalizer(
    dataset: &TrainingDataset,
    history_steps: usize,
    horizon_steps: usize,
    seed: u64,
    config: &TrainingConfig,
    normalizer: Normalizer,
) -> Result<PredictorModel, PredictorError> {
    if dataset.is_empty() {
        return Err(PredictorError::EmptyDataset);
    }
    let (mut inputs, targets) = design_matrix(dataset, history_steps, horizon_steps)?;
    for x in &mut inputs {
        normalizer.apply(x);
    }
    let layers = layer_sizes(history_steps, horizon_steps, &config.hidden_layers);
    let arch = Architecture::new(layers.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = arch.init_params(&mut rng);
    let mut grad = vec![0.0; params.len()];
    let mut adam = Adam::new(params.len(), config.learning_rate);
    let mut ws = network::Workspace::new(&arch);
    let mut d_out = vec![0.0; arch.output_len()];
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let batch = config.batch_size.max(1);
    let mut final_loss = f64::NAN;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                network::forward(&arch, &params, &inputs[i], &mut ws);
                epoch_loss +=
                    network::cumulative_position_loss(ws.output(), &targets[i], &mut d_out);
                d_out.iter_mut().for_each(|g| *g *= scale);
                network::backward(&arch, &params, &d_out, &mut ws, &mut grad);
            }
            adam.update(&mut params, &grad);
        }
        let mean = epoch_loss / inputs.len() as f64;
        if !mean.is_finite() || params.iter().any(|p| !p.is_finite()) {
            return Err(PredictorError::Diverged { epoch, loss: mean });
        }
        final_loss = mean;
    }

    Ok(PredictorModel {
        layers,
        history_steps,
        horizon_steps,
        parameters: params,
        normalizer: Some(normalizer),
        seed,
        final_loss,
    })
}

/// Trains `n` members with seeds `base_seed + i`, all on the full dataset.
pub fn train_ensemble(
    dataset: &TrainingDataset,
    history_steps: usize,
    horizon_steps: usize,
    n: usize,
    base_seed: u64,
    config: &TrainingConfig,
) -> Result<EnsembleSet, PredictorError> {
    if n == 0 {
        return Err(PredictorError::EmptyEnsemble);
    }
    let normalizer = fit_normalizer(dataset, history_steps)?;
    let members = (0..n)
        .map(|i| {
            train_with_normalizer(
                dataset,
                history_steps,
                horizon_steps,
                base_seed + i as u64,
                config,
                normalizer.clone(),
            )
            .map_err(|e| PredictorError::Member {
                member: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    EnsembleSet::new(members)
}

/// Mean displacement between two members' predictions of the same agent.
pub fn pairwise_disagreement(futures: &[FutureTrajectory]) -> f64 {
    let n = futures.len();
    if n < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            let a = &futures[i].positions;
            let b = &futures[j].positions;
            let ade = a.iter().zip(b).map(|(p, q)| p.distance(*q)).sum::<f64>() / a.len() as f64;
            total += ade;
            pairs += 1;
        }
    }
    total / pairs as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn cv_record(
        speed: f64,
        heading: f64,
        h: usize,
        th: usize,
        dt: f64,
    ) -> TrainingRecord {
        let dir = Vec2::from_angle(heading);
        let state = |k: i64| AgentState {
            agent_id: AgentId(1),
            position: dir * (speed * k as f64 * dt),
            velocity: dir * speed,
            heading,
        };
        let history: Vec<AgentState> = (-(h as i64)..=0).map(state).collect();
        let ego: Vec<AgentState> = (0..=h)
            .map(|_| AgentState {
                agent_id: AgentId::EGO,
                position: Vec2::new(0.0, -30.0),
                velocity: Vec2::ZERO,
                heading: 0.0,
            })
            .collect();
        TrainingRecord {
            case: DrivingCase {
                timestamp: 0.0,
                dt,
                ego_history: ego,
                agent_histories: vec![history],
            },
            future: FutureTrajectory {
                agent_id: AgentId(1),
                start_heading: heading,
                positions: (1..=th as i64).map(|k| state(k).position).collect(),
            },
            label: BehaviorLabel::StraightThrough,
        }
    }

    #[test]
    fn zero_model_predicts_standing_still() {
        let model = PredictorModel::zeros(10, 30, &[8]);
        let rec = cv_record(5.0, 0.3, 10, 30, 0.1);
        let out = predict(&model, &rec.case).unwrap();
        assert_eq!(out.len(), 1);
        let current = rec.case.agent_histories[0][10].position;
        assert!(out[0].positions.iter().all(|p| *p == current));
    }

    #[test]
    fn untrained_model_is_rejected() {
        let mut model = PredictorModel::zeros(10, 30, &[8]);
        model.normalizer = None;
        let rec = cv_record(5.0, 0.0, 10, 30, 0.1);
        assert_eq!(predict(&model, &rec.case), Err(PredictorError::NotTrained));
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let err = train_model(
            &TrainingDataset::default(),
            10,
            30,
            1,
            &TrainingConfig::default(),
        );
        assert_eq!(err.unwrap_err(), PredictorError::EmptyDataset);
    }

    #[test]
    fn memorizes_a_single_record() {
        let rec = cv_record(6.0, 0.4, 10, 30, 0.1);
        let dataset = TrainingDataset {
            records: vec![rec.clone(); 32],
        };
        let cfg = TrainingConfig {
            epochs: 200,
            ..Default::default()
        };
        let model = train_model(&dataset, 10, 30, 7, &cfg).unwrap();
        assert!(model.final_loss < 1e-2, "loss {}", model.final_loss);
    }

    #[test]
    fn seeds_give_different_parameters() {
        let dataset = TrainingDataset {
            records: vec![cv_record(6.0, 0.0, 10, 30, 0.1); 4],
        };
        let cfg = TrainingConfig {
            epochs: 1,
            ..Default::default()
        };
        let a = train_model(&dataset, 10, 30, 1, &cfg).unwrap();
        let b = train_model(&dataset, 10, 30, 2, &cfg).unwrap();
        let dist: f64 = a
            .parameters
            .iter()
            .zip(&b.parameters)
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        assert!(dist > 0.0);
    }

    #[test]
    fn divergence_is_reported() {
        let dataset = TrainingDataset {
            records: vec![cv_record(6.0, 0.0, 10, 30, 0.1); 4],
        };
        let cfg = TrainingConfig {
            learning_rate: f64::NAN,
            epochs: 2,
            ..Default::default()
        };
        assert!(matches!(
            train_model(&dataset, 10, 30, 1, &cfg),
            Err(PredictorError::Diverged { epoch: 0, .. })
        ));
    }

    #[test]
    fn singleton_ensemble_matches_train_model() {
        let dataset = TrainingDataset {
            records: vec![
                cv_record(6.0, 0.0, 10, 30, 0.1),
                cv_record(3.0, 1.0, 10, 30, 0.1),
            ],
        };
        let cfg = TrainingConfig {
            epochs: 3,
            ..Default::default()
        };
        let single = train_model(&dataset, 10, 30, 11, &cfg).unwrap();
        let ens = train_ensemble(&dataset, 10, 30, 1, 11, &cfg).unwrap();
        assert_eq!(ens.members()[0], single);
        let case = &dataset.records[0].case;
        let set = predict_set(&ens, case).unwrap();
        assert_eq!(set.members[0], predict(&single, case).unwrap());
    }

    #[test]
    fn predict_set_with_no_agents() {
        let mut ens = Vec::new();
        for s in 0..3 {
            let mut m = PredictorModel::zeros(10, 30, &[4]);
            m.seed = s;
            ens.push(m);
        }
        let ens = EnsembleSet::new(ens).unwrap();
        let mut case = cv_record(1.0, 0.0, 10, 30, 0.1).case;
        case.agent_histories.clear();
        let set = predict_set(&ens, &case).unwrap();
        assert_eq!(set.member_count(), 3);
        assert_eq!(set.agent_count(), 0);
    }
}
