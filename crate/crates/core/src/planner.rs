//! Collision checking against predicted futures, worst-case cost over the
//! prediction set and min-max candidate selection.
//!
//! With a single ensemble member [`plan`] reduces to the ordinary lattice
//! planner, which is also provided separately as [`plan_baseline`].

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frenet::{
    cartesian_to_frenet, frenet_to_cartesian, CartesianState, FrenetError, FrenetPoint,
    ReferencePath,
};
use crate::geometry::OrientedBox;
use crate::lattice::{
    base_cost, generate_candidates, retarget_stop, sample_end_states, CandidateSettings,
    CandidateTrajectory, CostWeights, EndStateSample, LatticeError, SamplingGrid,
};
use crate::predictor::{
    predict, predict_set, DrivingCase, EnsembleSet, FutureTrajectory, PredictedFutures,
    PredictorError, PredictorModel,
};

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("ego cannot be localized: {0}")]
    Frenet(#[from] FrenetError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
}

/// A candidate cost: finite, or the collision penalty which orders above
/// every finite value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Cost {
    Finite(f64),
    Collision,
}

impl Cost {
    pub fn is_collision(self) -> bool {
        matches!(self, Cost::Collision)
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Cost::Finite(c) => Some(c),
            Cost::Collision => None,
        }
    }
}

impl Eq for Cost {}

impl PartialOrd for Cost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cost {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Cost::Finite(a), Cost::Finite(b)) => a.total_cmp(b),
            (Cost::Finite(_), Cost::Collision) => Ordering::Less,
            (Cost::Collision, Cost::Finite(_)) => Ordering::Greater,
            (Cost::Collision, Cost::Collision) => Ordering::Equal,
        }
    }
}

impl fmt::Display for Cost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cost::Finite(c) => write!(f, "{c}"),
            Cost::Collision => f.write_str("collision"),
        }
    }
}

/// Rectangle size of a vehicle plus a safety margin on every side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleFootprint {
    pub length: f64,
    pub width: f64,
    pub inflation_margin: f64,
}

impl Default for VehicleFootprint {
    fn default() -> Self {
        Self {
            length: 4.5,
            width: 2.0,
            inflation_margin: 0.2,
        }
    }
}

impl VehicleFootprint {
    /// Inflated box at a pose.
    pub fn at(&self, center: crate::Vec2, heading: f64) -> OrientedBox {
        OrientedBox::new(center, heading, self.length, self.width).inflated(self.inflation_margin)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.length > 0.0 && self.width > 0.0 && self.inflation_margin >= 0.0) {
            return Err(format!("invalid footprint {self:?}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub weights: CostWeights,
    /// Number of end states; must equal the grid's sample count.
    pub k: usize,
    pub grid: SamplingGrid,
    pub dt: f64,
    pub max_lateral_accel: f64,
    pub ego_footprint: VehicleFootprint,
    pub agent_footprint: VehicleFootprint,
    /// Deceleration of the emergency stop, m/s^2.
    pub fallback_decel: f64,
    /// Route-goal arclength for the time term; see [`CandidateSettings`].
    pub goal_s: Option<f64>,
    pub max_expected_time: f64,
    /// Route arclength of a stop line; see [`retarget_stop`].
    #[serde(skip)]
    pub stop_line: Option<f64>,
    /// Hardest deceleration accepted for stopping on the line, m/s^2.
    pub stop_decel: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            weights: CostWeights::default(),
            k: 10,
            grid: SamplingGrid::default(),
            dt: 0.1,
            max_lateral_accel: 8.0,
            ego_footprint: VehicleFootprint::default(),
            agent_footprint: VehicleFootprint::default(),
            fallback_decel: 4.0,
            goal_s: None,
            max_expected_time: 60.0,
            stop_line: None,
            stop_decel: 4.0,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.k != self.grid.sample_count() {
            return Err(format!(
                "k = {} but the sampling grid yields {} end states",
                self.k,
                self.grid.sample_count()
            ));
        }
        let w = &self.weights;
        if [w.k_j, w.k_t, w.k_p].iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err("cost weights must be finite and non-negative".into());
        }
        if !(self.dt > 0.0) || !(self.fallback_decel > 0.0) || !(self.stop_decel > 0.0) {
            return Err("dt and decelerations must be positive".into());
        }
        if self.grid.horizons.iter().any(|h| !(*h > 0.0)) {
            return Err("horizons must be positive".into());
        }
        self.ego_footprint.validate()?;
        self.agent_footprint.validate()
    }

    /// End states for `ego`: the grid, with the stop sample moved to the
    /// stop line when one is set.
    pub fn end_states(&self, ego: &FrenetPoint) -> Result<Vec<EndStateSample>, LatticeError> {
        let mut out = sample_end_states(ego, &self.grid)?;
        if let Some(line) = self.stop_line {
            retarget_stop(&mut out, ego, line, self.stop_decel, self.dt);
        }
        Ok(out)
    }

    pub fn candidate_settings(&self) -> CandidateSettings {
        CandidateSettings {
            dt: self.dt,
            max_lateral_accel: self.max_lateral_accel,
            goal_s: self.goal_s,
            max_expected_time: self.max_expected_time,
        }
    }
}

/// Constant-deceleration stop with no lateral motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FallbackStop {
    pub samples: Vec<FrenetPoint>,
    pub dt: f64,
    pub mean_speed: f64,
}

/// Emergency stop from `ego` over `duration` seconds.
pub fn fallback_stop(ego: &FrenetPoint, decel: f64, duration: f64, dt: f64) -> FallbackStop {
    let v0 = ego.s_dot.max(0.0);
    let steps = (duration / dt).round().max(1.0) as usize;
    let t_stop = if decel > 0.0 {
        v0 / decel
    } else {
        f64::INFINITY
    };
    let samples: Vec<FrenetPoint> = (0..=steps)
        .map(|i| {
            let t = (i as f64 * dt).min(t_stop);
            let moving = (i as f64 * dt) < t_stop;
            FrenetPoint {
                s: ego.s + v0 * t - 0.5 * decel * t * t,
                d: ego.d,
                s_dot: (v0 - decel * t).max(0.0),
                d_dot: 0.0,
                s_ddot: if moving { -decel } else { 0.0 },
                d_ddot: 0.0,
            }
        })
        .collect();
    let total = steps as f64 * dt;
    FallbackStop {
        mean_speed: (samples[steps].s - samples[0].s) / total,
        samples,
        dt,
    }
}

/// The selected motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Chosen {
    Candidate {
        index: usize,
        trajectory: CandidateTrajectory,
    },
    Fallback(FallbackStop),
}

impl Chosen {
    pub fn samples(&self) -> &[FrenetPoint] {
        match self {
            Chosen::Candidate { trajectory, .. } => &trajectory.samples,
            Chosen::Fallback(stop) => &stop.samples,
        }
    }

    pub fn dt(&self) -> f64 {
        match self {
            Chosen::Candidate { trajectory, .. } => trajectory.dt,
            Chosen::Fallback(stop) => stop.dt,
        }
    }

    pub fn mean_speed(&self) -> f64 {
        match self {
            Chosen::Candidate { trajectory, .. } => trajectory.mean_speed,
            Chosen::Fallback(stop) => stop.mean_speed,
        }
    }

    pub fn index(&self) -> Option<usize> {
        match self {
            Chosen::Candidate { index, .. } => Some(*index),
            Chosen::Fallback(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningResult {
    pub chosen: Chosen,
    pub chosen_cost: Cost,
    /// `per_candidate_costs[k][m]`: cost of feasible candidate `k` under member `m`.
    pub per_candidate_costs: Vec<Vec<Cost>>,
    /// First member attaining the worst case, per candidate.
    pub worst_member: Vec<usize>,
    pub all_collided: bool,
}

/// Inflated ego boxes at trajectory samples `1..`, i.e. times `dt, 2 dt, ...`.
fn ego_boxes(
    samples: &[FrenetPoint],
    footprint: &VehicleFootprint,
    path: &ReferencePath,
    steps: usize,
) -> Vec<OrientedBox> {
    let length = path.length();
    samples
        .iter()
        .skip(1)
        .take(steps)
        .map(|p| {
            let clamped = FrenetPoint {
                s: p.s.clamp(0.0, length),
                ..*p
            };
            let pose = frenet_to_cartesian(path, &clamped).expect("clamped s is in range");
            footprint.at(pose.position, pose.heading)
        })
        .collect()
}

fn collides_with(
    ego: &[OrientedBox],
    future: &FutureTrajectory,
    footprint: &VehicleFootprint,
) -> bool {
    ego.iter()
        .zip(&future.positions)
        .enumerate()
        .any(|(i, (e, p))| e.overlaps(&footprint.at(*p, future.heading_at(i))))
}

/// True if the ego footprint along `traj` overlaps any agent footprint at a
/// common time step, up to `min(duration, T_h)`.
pub fn check_collision(
    traj: &CandidateTrajectory,
    futures: &[FutureTrajectory],
    ego_fp: &VehicleFootprint,
    agent_fp: &VehicleFootprint,
    path: &ReferencePath,
) -> bool {
    let horizon = futures.iter().map(|f| f.positions.len()).max().unwrap_or(0);
    let steps = (traj.samples.len() - 1).min(horizon);
    let boxes = ego_boxes(&traj.samples, ego_fp, path, steps);
    futures.iter().any(|f| collides_with(&boxes, f, agent_fp))
}

/// Base cost plus the collision penalty for one member's predictions.
pub fn member_cost(
    traj: &CandidateTrajectory,
    member_futures: &[FutureTrajectory],
    weights: &CostWeights,
    ego_fp: &VehicleFootprint,
    agent_fp: &VehicleFootprint,
    path: &ReferencePath,
) -> Cost {
    if check_collision(traj, member_futures, ego_fp, agent_fp, path) {
        Cost::Collision
    } else {
        Cost::Finite(base_cost(traj, weights))
    }
}

/// Largest member cost and the first member attaining it.
pub fn worst_case_cost(
    traj: &CandidateTrajectory,
    predicted: &PredictedFutures,
    weights: &CostWeights,
    ego_fp: &VehicleFootprint,
    agent_fp: &VehicleFootprint,
    path: &ReferencePath,
) -> (Cost, usize) {
    let costs = member_costs(traj, predicted, weights, ego_fp, agent_fp, path);
    worst_of(&costs)
}

fn worst_of(costs: &[Cost]) -> (Cost, usize) {
    let mut best = (costs[0], 0);
    for (m, &c) in costs.iter().enumerate().skip(1) {
        if c > best.0 {
            best = (c, m);
        }
    }
    best
}

fn member_costs(
    traj: &CandidateTrajectory,
    predicted: &PredictedFutures,
    weights: &CostWeights,
    ego_fp: &VehicleFootprint,
    agent_fp: &VehicleFootprint,
    path: &ReferencePath,
) -> Vec<Cost> {
    let horizon = predicted
        .members
        .iter()
        .flatten()
        .map(|f| f.positions.len())
        .max()
        .unwrap_or(0);
    let steps = (traj.samples.len() - 1).min(horizon);
    let boxes = ego_boxes(&traj.samples, ego_fp, path, steps);
    let base = base_cost(traj, weights);
    predicted
        .members
        .iter()
        .map(|futures| {
            if futures.iter().any(|f| collides_with(&boxes, f, agent_fp)) {
                Cost::Collision
            } else {
                Cost::Finite(base)
            }
        })
        .collect()
}

/// Index minimizing `worst[k]`, ties broken by smaller `|b|` then index.
/// `None` when every entry is a collision or there are no candidates.
pub fn select_min_max(worst: &[Cost], end_offsets: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for k in 0..worst.len() {
        if worst[k].is_collision() {
            continue;
        }
        best = match best {
            None => Some(k),
            Some(j) => {
                let key_k = (worst[k], end_offsets[k].abs());
                let key_j = (worst[j], end_offsets[j].abs());
                if key_k.0 < key_j.0 || (key_k.0 == key_j.0 && key_k.1 < key_j.1) {
                    Some(k)
                } else {
                    Some(j)
                }
            }
        };
    }
    best
}

/// Ego Frenet state; the second derivatives come from differencing the
/// Frenet velocities of the last two ego history entries.
pub fn ego_frenet_state(
    case: &DrivingCase,
    path: &ReferencePath,
) -> Result<FrenetPoint, PlanError> {
    let at = |a: &crate::predictor::AgentState| CartesianState {
        position: a.position,
        velocity: a.velocity,
        acceleration: crate::Vec2::ZERO,
    };
    let mut current = cartesian_to_frenet(path, &at(case.ego()))?;
    let n = case.ego_history.len();
    if n >= 2 && case.dt > 0.0 {
        let prev = cartesian_to_frenet(path, &at(&case.ego_history[n - 2]))?;
        current.s_ddot = (current.s_dot - prev.s_dot) / case.dt;
        current.d_ddot = (current.d_dot - prev.d_dot) / case.dt;
    }
    Ok(current)
}

/// Lateral tracking error above which replanning restarts from the
/// measured state.
pub const STITCH_TOLERANCE: f64 = 0.5;

/// Replanning start state. The lateral state and the longitudinal
/// acceleration come from the previous plan's sample at the current time,
/// so small tracking errors are not fed back into every new plan; arclength
/// and speed are measured. Past `STITCH_TOLERANCE` of lateral error the
/// measured state is used as is.
pub fn stitch(measured: &FrenetPoint, planned: Option<&FrenetPoint>) -> FrenetPoint {
    match planned {
        Some(p) if (p.d - measured.d).abs() <= STITCH_TOLERANCE => FrenetPoint {
            s_ddot: p.s_ddot,
            d: p.d,
            d_dot: p.d_dot,
            d_ddot: p.d_ddot,
            ..*measured
        },
        _ => *measured,
    }
}

/// Min-max selection over given predictions.
pub fn plan_with_predictions(
    ego: &FrenetPoint,
    predicted: &PredictedFutures,
    path: &ReferencePath,
    config: &PlannerConfig,
) -> Result<PlanningResult, PlanError> {
    let end_states = config.end_states(ego)?;
    let candidates = generate_candidates(ego, &end_states, &config.candidate_settings())?;
    let per_candidate_costs: Vec<Vec<Cost>> = candidates
        .iter()
        .map(|c| {
            member_costs(
                c,
                predicted,
                &config.weights,
                &config.ego_footprint,
                &config.agent_footprint,
                path,
            )
        })
        .collect();
    let worst: Vec<(Cost, usize)> = per_candidate_costs.iter().map(|c| worst_of(c)).collect();
    let worst_costs: Vec<Cost> = worst.iter().map(|w| w.0).collect();
    let offsets: Vec<f64> = candidates.iter().map(|c| c.end_offset).collect();
    let (chosen, chosen_cost, all_collided) = match select_min_max(&worst_costs, &offsets) {
        Some(k) => (
            Chosen::Candidate {
                index: k,
                trajectory: candidates[k].clone(),
            },
            worst_costs[k],
            false,
        ),
        None => (
            Chosen::Fallback(stop_for(ego, config)),
            Cost::Collision,
            true,
        ),
    };
    Ok(PlanningResult {
        chosen,
        chosen_cost,
        worst_member: worst.iter().map(|w| w.1).collect(),
        per_candidate_costs,
        all_collided,
    })
}

fn stop_for(ego: &FrenetPoint, config: &PlannerConfig) -> FallbackStop {
    let horizons = &config.grid.horizons;
    let duration = horizons.get(horizons.len() / 2).copied().unwrap_or(3.0);
    fallback_stop(ego, config.fallback_decel, duration, config.dt)
}

/// Uncertainty-aware planner: predict once with every member, then pick the
/// candidate whose worst member cost is smallest.
pub fn plan(
    case: &DrivingCase,
    ensemble: &EnsembleSet,
    path: &ReferencePath,
    config: &PlannerConfig,
) -> Result<PlanningResult, PlanError> {
    let ego = ego_frenet_state(case, path)?;
    let predicted = predict_set(ensemble, case)?;
    plan_with_predictions(&ego, &predicted, path, config)
}

/// Ordinary lattice planner with one predictor: cheapest collision-free
/// candidate.
pub fn plan_baseline(
    case: &DrivingCase,
    model: &PredictorModel,
    path: &ReferencePath,
    config: &PlannerConfig,
) -> Result<PlanningResult, PlanError> {
    let ego = ego_frenet_state(case, path)?;
    let futures = predict(model, case)?;
    let end_states = config.end_states(&ego)?;
    let candidates = generate_candidates(&ego, &end_states, &config.candidate_settings())?;

    let mut costs = Vec::with_capacity(candidates.len());
    let mut best: Option<(usize, f64)> = None;
    for (k, c) in candidates.iter().enumerate() {
        let collides = check_collision(
            c,
            &futures,
            &config.ego_footprint,
            &config.agent_footprint,
            path,
        );
        if collides {
            costs.push(vec![Cost::Collision]);
            continue;
        }
        let cost = base_cost(c, &config.weights);
        costs.push(vec![Cost::Finite(cost)]);
        let better = match best {
            None => true,
            Some((j, bc)) => {
                cost < bc || (cost == bc && c.end_offset.abs() < candidates[j].end_offset.abs())
            }
        };
        if better {
            best = Some((k, cost));
        }
    }
    let (chosen, chosen_cost, all_collided) = match best {
        Some((k, cost)) => (
            Chosen::Candidate {
                index: k,
                trajectory: candidates[k].clone(),
            },
            Cost::Finite(cost),
            false,
        ),
        None => (
            Chosen::Fallback(stop_for(&ego, config)),
            Cost::Collision,
            true,
        ),
    };
    Ok(PlanningResult {
        chosen,
        chosen_cost,
        worst_member: vec![0; candidates.len()],
        per_candidate_costs: costs,
        all_collided,
    })
}
