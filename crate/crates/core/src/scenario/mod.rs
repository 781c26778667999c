//! Closed-loop unprotected-left-turn simulator with a long-tail mix of
//! scripted agent behaviours.
//!
//! [`collect_dataset`] drives the ego along its route at constant speed and
//! records every agent's history and ground-truth future. [`run_episode`]
//! closes the loop: at each step it builds a [`DrivingCase`], plans with the
//! ensemble, and tracks the chosen trajectory for one step.

pub mod behavior;
pub mod layout;
pub mod vehicle;

use std::collections::VecDeque;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use behavior::{build_script, Agent, AgentSpec, Approach};
pub use layout::Intersection;
pub use vehicle::{EgoVehicle, TrackingTarget, VehicleParams};

use crate::frenet::{frenet_to_cartesian, FrenetPoint, ReferencePath};
use crate::geometry::{OrientedBox, Vec2};
use crate::planner::{
    ego_frenet_state, plan_with_predictions, stitch, Chosen, PlanError, PlannerConfig,
    PlanningResult,
};
use crate::predictor::data::MAX_AGENTS;
use crate::predictor::{
    predict_set, AgentId, AgentState, BehaviorLabel, DrivingCase, EnsembleSet, FutureTrajectory,
    PredictedFutures, TrainingDataset, TrainingRecord,
};

/// Ground-truth vehicle size, m.
pub const VEHICLE_LENGTH: f64 = 4.5;
pub const VEHICLE_WIDTH: f64 = 2.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("planning failed at step {step}: {source}")]
    Plan {
        step: usize,
        #[source]
        source: PlanError,
    },
    #[error("invalid scenario config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub intersection: Intersection,
    pub min_agents: usize,
    pub max_agents: usize,
    /// Label probabilities in [`BehaviorLabel::ALL`] order, head first.
    pub label_weights: Vec<f64>,
    pub agent_speed: [f64; 2],
    pub spawn_distance: [f64; 2],
    /// Smallest gap between spawn distances on one approach, m.
    pub min_spawn_gap: f64,
    pub ego_speed: [f64; 2],
    /// Ego arclength on its route when planning starts.
    pub ego_start_s: f64,
    pub yield_hold: [f64; 2],
    pub swerve_length: [f64; 2],
    /// Closed-loop timeout, s.
    pub episode_length: f64,
    /// Length of a data-collection episode, s.
    pub collection_length: f64,
    /// Record every `record_stride`-th step during collection.
    pub record_stride: usize,
    /// Agents farther than this from the ego are left out of the case.
    pub neighbor_radius: f64,
    pub vehicle: VehicleParams,
    #[serde(skip)]
    pub history_steps: usize,
    #[serde(skip)]
    pub horizon_steps: usize,
    #[serde(skip)]
    pub dt: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            intersection: Intersection::default(),
            min_agents: 1,
            max_agents: 3,
            label_weights: vec![0.40, 0.25, 0.15, 0.08, 0.06, 0.03, 0.02, 0.01],
            agent_speed: [6.0, 9.0],
            spawn_distance: [15.0, 45.0],
            min_spawn_gap: 10.0,
            ego_speed: [6.0, 8.0],
            ego_start_s: 25.0,
            yield_hold: [2.0, 4.0],
            swerve_length: [30.0, 40.0],
            episode_length: 25.0,
            collection_length: 12.0,
            record_stride: 2,
            neighbor_radius: 50.0,
            vehicle: VehicleParams::default(),
            history_steps: 10,
            horizon_steps: 30,
            dt: 0.1,
        }
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<(), String> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
        return Err(format!("{name} range {r:?} is not [lo, hi]"));
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), String> {
        let w = &self.label_weights;
        if w.len() != BehaviorLabel::ALL.len() {
            return Err(format!(
                "expected {} label weights, got {}",
                BehaviorLabel::ALL.len(),
                w.len()
            ));
        }
        if w.iter().any(|&x| !(x > 0.0)) {
            return Err("label weights must be positive".into());
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err("label weights must sum to 1".into());
        }
        if w.windows(2).any(|p| p[1] > p[0]) {
            return Err("label weights must be sorted head to tail".into());
        }
        if self.min_agents > self.max_agents || self.max_agents > MAX_AGENTS {
            return Err(format!(
                "agent count range [{}, {}] must lie in [0, {MAX_AGENTS}]",
                self.min_agents, self.max_agents
            ));
        }
        for (name, r) in [
            ("agent_speed", self.agent_speed),
            ("spawn_distance", self.spawn_distance),
            ("ego_speed", self.ego_speed),
            ("yield_hold", self.yield_hold),
            ("swerve_length", self.swerve_length),
        ] {
            check_range(name, r)?;
        }
        if self.agent_speed[1] > crate::predictor::data::SPEED_CAP {
            return Err("agent speed above the speed cap".into());
        }
        if self.spawn_distance[0] < 10.0 {
            return Err("agents must spawn at least 10 m before the intersection".into());
        }
        if !(self.dt > 0.0) || self.record_stride == 0 || self.history_steps == 0 {
            return Err("dt, record_stride and history_steps must be positive".into());
        }
        Ok(())
    }

    fn steps(&self, seconds: f64) -> usize {
        (seconds / self.dt).round() as usize
    }
}

/// Initial conditions of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeInit {
    pub seed: u64,
    pub ego_speed: f64,
    pub ego_start_s: f64,
    pub agents: Vec<AgentSpec>,
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

/// Draws agent count, labels, approaches, spawn distances and speeds.
/// Deterministic in `seed`.
pub fn sample_episode(config: &ScenarioConfig, seed: u64) -> EpisodeInit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = WeightedIndex::new(&config.label_weights).expect("validated weights");
    let ego_speed = uniform(&mut rng, config.ego_speed);
    let count = rng.random_range(config.min_agents..=config.max_agents);
    let mut agents: Vec<AgentSpec> = Vec::with_capacity(count);
    for i in 0..count {
        let label = BehaviorLabel::ALL[labels.sample(&mut rng)];
        let allowed = Approach::allowed(label);
        let approach = allowed[rng.random_range(0..allowed.len())];
        let speed = uniform(&mut rng, config.agent_speed);
        let hold_time = uniform(&mut rng, config.yield_hold);
        let bump_length = uniform(&mut rng, config.swerve_length);
        let mut spawn_distance = uniform(&mut rng, config.spawn_distance);
        for _ in 0..20 {
            let clear = agents.iter().all(|a| {
                a.approach != approach
                    || (a.spawn_distance - spawn_distance).abs() >= config.min_spawn_gap
            });
            if clear {
                break;
            }
            spawn_distance = uniform(&mut rng, config.spawn_distance);
        }
        agents.push(AgentSpec {
            id: AgentId(i as u32 + 1),
            label,
            approach,
            spawn_distance,
            speed,
            hold_time,
            bump_length,
        });
    }
    EpisodeInit {
        seed,
        ego_speed,
        ego_start_s: config.ego_start_s,
        agents,
    }
}

/// Simulator state: the ego, the scripted agents and the collision flag.
#[derive(Debug, Clone)]
pub struct World {
    pub time: f64,
    pub ego: EgoVehicle,
    pub agents: Vec<Agent>,
    pub collided: bool,
    pub vehicle: VehicleParams,
}

pub fn vehicle_box(state: &AgentState) -> OrientedBox {
    OrientedBox::new(state.position, state.heading, VEHICLE_LENGTH, VEHICLE_WIDTH)
}

impl World {
    fn detect_collision(&self) -> bool {
        let ego = vehicle_box(&self.ego.state());
        self.agents
            .iter()
            .any(|a| ego.overlaps(&vehicle_box(&a.state())))
    }
}

/// Advances agents along their scripts and the ego along `target` by `dt`.
pub fn step_world(world: &World, target: &TrackingTarget, dt: f64) -> World {
    let mut next = world.clone();
    if dt <= 0.0 {
        return next;
    }
    vehicle::track(&mut next.ego, target, dt, &world.vehicle);
    for a in &mut next.agents {
        a.step(dt);
    }
    next.time += dt;
    next.collided = world.collided || next.detect_collision();
    next
}

/// Cartesian tracking reference for a chosen plan.
pub fn tracking_target(chosen: &Chosen, path: &ReferencePath) -> TrackingTarget {
    let length = path.length();
    let to_xy = |p: &FrenetPoint| {
        let q = FrenetPoint {
            s: p.s.clamp(0.0, length),
            ..*p
        };
        frenet_to_cartesian(path, &q).expect("clamped s").position
    };
    let samples = chosen.samples();
    let last = samples[samples.len() - 1];
    TrackingTarget {
        points: samples.iter().map(to_xy).collect(),
        speeds: samples.iter().map(|p| p.s_dot.hypot(p.d_dot)).collect(),
        dt: chosen.dt(),
        extension: (1..=10)
            .map(|k| to_xy(&FrenetPoint::at(last.s + k as f64, last.d)))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    /// The ego completed the turn without a collision.
    Safe,
    Collision,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub time: f64,
    pub ego: AgentState,
    pub agents: Vec<AgentState>,
    pub plan: PlanningResult,
    pub predictions: Option<PredictedFutures>,
    /// Label of the nearest agent in the case.
    pub case_label: Option<BehaviorLabel>,
}

/// Full record of one closed-loop episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub seed: u64,
    pub ensemble_size: usize,
    pub init: EpisodeInit,
    pub steps: Vec<StepRecord>,
    pub outcome: Outcome,
    /// Label of the agent that came closest to the ego.
    pub case_label: Option<BehaviorLabel>,
    /// Mean of the chosen trajectories' mean speeds over planning cycles.
    pub mean_planned_speed: f64,
    pub mean_ego_speed: f64,
    /// Smallest gap between the ego and any agent footprint, m.
    pub min_clearance: f64,
}

impl EpisodeLog {
    pub fn is_safe(&self) -> bool {
        self.outcome != Outcome::Collision
    }
}

/// Where predictions come from in a closed-loop run.
#[derive(Debug, Clone, Copy)]
pub enum PredictionSource<'a> {
    Ensemble(&'a EnsembleSet),
    /// No agents are ever predicted; a negative control.
    Blind,
    /// The agents' true scripted futures, as a single member.
    Oracle,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EpisodeOptions {
    pub record_predictions: bool,
}

struct Histories {
    len: usize,
    ego: VecDeque<AgentState>,
    agents: Vec<VecDeque<AgentState>>,
}

impl Histories {
    fn new(len: usize, agents: usize) -> Self {
        Self {
            len,
            ego: VecDeque::with_capacity(len + 1),
            agents: vec![VecDeque::with_capacity(len + 1); agents],
        }
    }

    fn push(&mut self, ego: AgentState, agents: &[Agent]) {
        push_bounded(&mut self.ego, ego, self.len);
        for (h, a) in self.agents.iter_mut().zip(agents) {
            push_bounded(h, a.state(), self.len);
        }
    }

    fn case(&self, time: f64, dt: f64, radius: f64) -> DrivingCase {
        let ego = *self.ego.back().unwrap();
        let mut near: Vec<(f64, usize)> = self
            .agents
            .iter()
            .enumerate()
            .map(|(i, h)| (h.back().unwrap().position.distance(ego.position), i))
            .filter(|&(d, _)| d <= radius)
            .collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        near.truncate(MAX_AGENTS);
        near.sort_by_key(|&(_, i)| i);
        DrivingCase {
            timestamp: time,
            dt,
            ego_history: self.ego.iter().copied().collect(),
            agent_histories: near
                .iter()
                .map(|&(_, i)| self.agents[i].iter().copied().collect())
                .collect(),
        }
    }
}

fn push_bounded(buf: &mut VecDeque<AgentState>, s: AgentState, len: usize) {
    if buf.len() == len {
        buf.pop_front();
    }
    buf.push_back(s);
}

fn ego_on_route(route: &ReferencePath, s: f64, speed: f64) -> AgentState {
    let heading = route.heading_at(s);
    AgentState {
        agent_id: AgentId::EGO,
        position: route.point_at(s),
        velocity: Vec2::from_angle(heading) * speed,
        heading,
    }
}

fn spawn_agents(init: &EpisodeInit, ix: &Intersection) -> Vec<Agent> {
    init.agents
        .iter()
        .map(|spec| Agent::new(spec.id, build_script(spec, ix)))
        .collect()
}

/// Closed-loop episode from sampled initial conditions.
pub fn run_episode(
    config: &ScenarioConfig,
    ensemble: &EnsembleSet,
    planner: &PlannerConfig,
    seed: u64,
) -> Result<EpisodeLog, SimError> {
    let init = sample_episode(config, seed);
    run_episode_with(
        config,
        &init,
        PredictionSource::Ensemble(ensemble),
        planner,
        EpisodeOptions::default(),
    )
}

/// Closed-loop episode from explicit initial conditions.
///
/// The world is first rolled forward `H` steps with the ego at constant
/// speed so that every history is full when planning starts.
pub fn run_episode_with(
    config: &ScenarioConfig,
    init: &EpisodeInit,
    source: PredictionSource<'_>,
    planner: &PlannerConfig,
    options: EpisodeOptions,
) -> Result<EpisodeLog, SimError> {
    config.validate().map_err(SimError::Config)?;
    let ix = &config.intersection;
    let route = ix
        .ego_route()
        .map_err(|e| SimError::Config(e.to_string()))?;
    let planner = PlannerConfig {
        goal_s: Some(route.length()),
        dt: config.dt,
        ..planner.clone()
    };
    let dt = config.dt;
    let h = config.history_steps;
    let blind = PredictedFutures {
        members: vec![Vec::new()],
    };

    let mut agents = spawn_agents(init, ix);
    let mut hist = Histories::new(h + 1, agents.len());
    let s0 = init.ego_start_s;
    for j in 0..=h {
        let s = s0 - init.ego_speed * (h - j) as f64 * dt;
        hist.push(ego_on_route(&route, s, init.ego_speed), &agents);
        if j < h {
            for a in &mut agents {
                a.step(dt);
            }
        }
    }
    let start = ego_on_route(&route, s0, init.ego_speed);
    let mut world = World {
        time: 0.0,
        ego: EgoVehicle::new(start.position, start.heading, init.ego_speed),
        agents,
        collided: false,
        vehicle: config.vehicle,
    };
    world.collided = world.detect_collision();

    let max_steps = config.steps(config.episode_length);
    let mut steps = Vec::with_capacity(max_steps);
    let mut closest = vec![f64::INFINITY; world.agents.len()];
    let mut outcome = Outcome::Timeout;
    let mut ego_speed_sum = 0.0;

    let mut carried: Option<FrenetPoint> = None;
    for step in 0..max_steps {
        let case = hist.case(world.time, dt, config.neighbor_radius);
        let measured =
            ego_frenet_state(&case, &route).map_err(|source| SimError::Plan { step, source })?;
        let ego_fp = stitch(&measured, carried.as_ref());
        let predicted = match source {
            PredictionSource::Ensemble(e) => predict_set(e, &case).map_err(|e| SimError::Plan {
                step,
                source: e.into(),
            })?,
            PredictionSource::Blind => blind.clone(),
            PredictionSource::Oracle => PredictedFutures {
                members: vec![true_futures(&case, &world.agents, dt, config.horizon_steps)],
            },
        };
        let mut step_planner = planner.clone();
        let horizon = planner.grid.horizons.iter().copied().fold(0.0, f64::max);
        let limit = ix.speed_limit_ahead(ego_fp.s, ego_fp.s_dot.max(0.0) * horizon);
        step_planner.grid.max_speed = planner.grid.max_speed.min(limit);
        step_planner.stop_line = Some(ix.ego_stop_arclength());
        let plan = plan_with_predictions(&ego_fp, &predicted, &route, &step_planner)
            .map_err(|source| SimError::Plan { step, source })?;
        let case_label = nearest_label(&case, &world.agents);
        let target = tracking_target(&plan.chosen, &route);
        carried = plan.chosen.samples().get(1).copied();

        let ego_state = world.ego.state();
        ego_speed_sum += world.ego.speed;
        steps.push(StepRecord {
            time: world.time,
            ego: ego_state,
            agents: world.agents.iter().map(Agent::state).collect(),
            plan,
            predictions: options.record_predictions.then_some(predicted),
            case_label,
        });

        world = step_world(&world, &target, dt);
        hist.push(world.ego.state(), &world.agents);
        let ego_box = vehicle_box(&world.ego.state());
        for (c, a) in closest.iter_mut().zip(&world.agents) {
            *c = c.min(ego_box.distance(&vehicle_box(&a.state())));
        }
        if world.collided {
            outcome = Outcome::Collision;
            break;
        }
        if world.ego.position.x < -ix.stop_line() {
            outcome = Outcome::Safe;
            break;
        }
    }

    let case_label = closest
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| world.agents[i].label());
    let n = steps.len().max(1) as f64;
    Ok(EpisodeLog {
        seed: init.seed,
        ensemble_size: match source {
            PredictionSource::Ensemble(e) => e.len(),
            PredictionSource::Blind => 0,
            PredictionSource::Oracle => 1,
        },
        init: init.clone(),
        mean_planned_speed: steps
            .iter()
            .map(|s| s.plan.chosen.mean_speed())
            .sum::<f64>()
            / n,
        mean_ego_speed: ego_speed_sum / n,
        min_clearance: closest.iter().copied().fold(f64::INFINITY, f64::min),
        steps,
        outcome,
        case_label,
    })
}

/// Ground-truth futures of the agents in `case`, in case order.
fn true_futures(
    case: &DrivingCase,
    agents: &[Agent],
    dt: f64,
    horizon: usize,
) -> Vec<FutureTrajectory> {
    case.agent_histories
        .iter()
        .filter_map(|h| agents.iter().find(|a| a.id == h[h.len() - 1].agent_id))
        .map(|a| {
            let mut a = a.clone();
            let start_heading = a.state().heading;
            let positions = (0..horizon)
                .map(|_| {
                    a.step(dt);
                    a.state().position
                })
                .collect();
            FutureTrajectory {
                agent_id: a.id,
                start_heading,
                positions,
            }
        })
        .collect()
}

fn nearest_label(case: &DrivingCase, agents: &[Agent]) -> Option<BehaviorLabel> {
    let ego = case.ego().position;
    case.agent_histories
        .iter()
        .map(|h| h[h.len() - 1])
        .min_by(|a, b| {
            a.position
                .distance(ego)
                .total_cmp(&b.position.distance(ego))
        })
        .and_then(|s| agents.iter().find(|a| a.id == s.agent_id))
        .map(Agent::label)
}

/// Runs `num_episodes` scripted episodes (ego at constant speed, no
/// planner) and records one training example per agent every
/// `record_stride` steps. Episode `i` uses seed `seed + i`.
pub fn collect_dataset(config: &ScenarioConfig, num_episodes: usize, seed: u64) -> TrainingDataset {
    let mut records = Vec::new();
    let route = config
        .intersection
        .ego_route()
        .expect("default route is valid");
    let h = config.history_steps;
    let th = config.horizon_steps;
    let total = config.steps(config.collection_length);
    for i in 0..num_episodes {
        let init = sample_episode(config, seed.wrapping_add(i as u64));
        let mut agents = spawn_agents(&init, &config.intersection);
        let mut ego_track = Vec::with_capacity(total + 1);
        let mut agent_tracks: Vec<Vec<AgentState>> =
            vec![Vec::with_capacity(total + 1); agents.len()];
        for k in 0..=total {
            let s = init.ego_start_s + init.ego_speed * (k as f64 - h as f64) * config.dt;
            ego_track.push(ego_on_route(&route, s, init.ego_speed));
            for (track, a) in agent_tracks.iter_mut().zip(&agents) {
                track.push(a.state());
            }
            for a in &mut agents {
                a.step(config.dt);
            }
        }
        let mut t = h;
        while t + th <= total {
            for (track, a) in agent_tracks.iter().zip(&agents) {
                let current = track[t];
                records.push(TrainingRecord {
                    case: DrivingCase {
                        timestamp: (t - h) as f64 * config.dt,
                        dt: config.dt,
                        ego_history: ego_track[t - h..=t].to_vec(),
                        agent_histories: vec![track[t - h..=t].to_vec()],
                    },
                    future: FutureTrajectory {
                        agent_id: a.id,
                        start_heading: current.heading,
                        positions: track[t + 1..=t + th].iter().map(|s| s.position).collect(),
                    },
                    label: a.label(),
                });
            }
            t += config.record_stride;
        }
    }
    TrainingDataset { records }
}

/// Time from spawn and `y` at which an agent following `spec` first
/// reaches the ego lane centre line `x = h` south of the intersection.
fn lane_crossing(spec: &AgentSpec, config: &ScenarioConfig) -> Option<(f64, f64)> {
    let h = config.intersection.half_lane();
    let mut agent = Agent::new(spec.id, build_script(spec, &config.intersection));
    let mut prev = agent.state().position;
    for k in 1..config.steps(30.0) {
        agent.step(config.dt);
        let p = agent.state().position;
        if prev.x < h && p.x >= h && p.y < -config.intersection.edge() {
            return Some((k as f64 * config.dt, p.y));
        }
        prev = p;
    }
    None
}

/// Time at which the unobstructed ego first reaches `y`, from planning start.
fn ego_arrival(
    config: &ScenarioConfig,
    init: &EpisodeInit,
    planner: &PlannerConfig,
    y: f64,
) -> Result<f64, SimError> {
    let free = run_episode_with(
        config,
        init,
        PredictionSource::Blind,
        planner,
        EpisodeOptions::default(),
    )?;
    free.steps
        .iter()
        .find(|s| s.ego.position.y >= y)
        .map(|s| s.time)
        .ok_or_else(|| SimError::Config("ego never reaches the crossing".into()))
}

/// A single right-then-left agent timed so that it crosses the ego lane
/// when an unobstructed ego would arrive there, offset by up to half a
/// second depending on `seed`.
///
/// The agent's spawn distance is searched first. If the agent is late even
/// from the nearest spawn point, the ego start is moved back instead.
pub fn right_then_left_episode(
    config: &ScenarioConfig,
    planner: &PlannerConfig,
    seed: u64,
) -> Result<EpisodeInit, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ego_speed = uniform(&mut rng, config.ego_speed);
    let agent_speed = uniform(&mut rng, config.agent_speed);
    let offset = rng.random_range(-0.5..0.5);
    let mut spec = AgentSpec {
        id: AgentId(1),
        label: BehaviorLabel::RightThenLeft,
        approach: Approach::West,
        spawn_distance: config.spawn_distance[0],
        speed: agent_speed,
        hold_time: 0.0,
        bump_length: 0.0,
    };
    let mut init = EpisodeInit {
        seed,
        ego_speed,
        ego_start_s: config.ego_start_s,
        agents: Vec::new(),
    };
    let cross_y = lane_crossing(&spec, config)
        .ok_or_else(|| SimError::Config("right-then-left agent never crosses".into()))?
        .1;
    // Agents spawn `H` steps before planning starts.
    let lead = config.history_steps as f64 * config.dt;
    let crossing = |spec: &AgentSpec| lane_crossing(spec, config).map_or(f64::INFINITY, |c| c.0);
    let earliest = crossing(&spec) - lead - offset;
    if ego_arrival(config, &init, planner, cross_y)? < earliest {
        let (mut lo, mut hi) = (0.0, config.ego_start_s);
        for _ in 0..30 {
            init.ego_start_s = 0.5 * (lo + hi);
            if ego_arrival(config, &init, planner, cross_y)? < earliest {
                hi = init.ego_start_s;
            } else {
                lo = init.ego_start_s;
            }
        }
        init.ego_start_s = lo;
    } else {
        let wanted = ego_arrival(config, &init, planner, cross_y)? + lead + offset;
        let (mut lo, mut hi) = (config.spawn_distance[0], config.spawn_distance[0] + 80.0);
        for _ in 0..40 {
            spec.spawn_distance = 0.5 * (lo + hi);
            if crossing(&spec) < wanted {
                lo = spec.spawn_distance;
            } else {
                hi = spec.spawn_distance;
            }
        }
    }
    init.agents.push(spec);
    Ok(init)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ScenarioConfig::default().validate().unwrap();
        let mut c = ScenarioConfig::default();
        c.label_weights.swap(0, 1);
        assert!(c.validate().is_err());
        c = ScenarioConfig::default();
        c.label_weights[0] = 0.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let c = ScenarioConfig::default();
        assert_eq!(sample_episode(&c, 5), sample_episode(&c, 5));
        assert_ne!(sample_episode(&c, 5), sample_episode(&c, 6));
    }

    #[test]
    fn zero_agent_draw() {
        let c = ScenarioConfig {
            min_agents: 0,
            max_agents: 0,
            ..Default::default()
        };
        assert!(sample_episode(&c, 1).agents.is_empty());
    }

    #[test]
    fn empty_world_collects_nothing() {
        let c = ScenarioConfig {
            min_agents: 0,
            max_agents: 0,
            ..Default::default()
        };
        assert!(collect_dataset(&c, 1, 1).is_empty());
    }

    #[test]
    fn records_have_full_shapes() {
        let c = ScenarioConfig::default();
        let d = collect_dataset(&c, 3, 11);
        assert!(!d.is_empty());
        for r in &d.records {
            assert_eq!(r.case.ego_history.len(), 11);
            assert_eq!(r.case.agent_histories[0].len(), 11);
            assert_eq!(r.future.positions.len(), 30);
            r.case.validate().unwrap();
            assert!(r.future.max_step() <= 30.0 * 0.1 + 1e-9);
        }
    }

    #[test]
    fn no_agents_episode_completes_the_turn() {
        let c = ScenarioConfig {
            min_agents: 0,
            max_agents: 0,
            ..Default::default()
        };
        let init = sample_episode(&c, 3);
        let log = run_episode_with(
            &c,
            &init,
            PredictionSource::Blind,
            &PlannerConfig::default(),
            EpisodeOptions::default(),
        )
        .unwrap();
        assert_eq!(log.outcome, Outcome::Safe);
        assert_eq!(log.case_label, None);
        assert!(log.steps.iter().all(|s| !s.plan.all_collided));
    }
}
