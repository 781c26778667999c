//! Driving-case data: agent snapshots, histories, futures and labelled records.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;

/// Scenario speed cap, m/s.
pub const SPEED_CAP: f64 = 30.0;
/// Largest number of surrounding agents in one case.
pub const MAX_AGENTS: usize = 8;

/// Identifier of an agent within an episode. The ego is always `AgentId::EGO`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u32);

impl AgentId {
    pub const EGO: AgentId = AgentId(0);
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "agent#{}", self.0)
    }
}

/// Pose and velocity of one agent at one timestep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub agent_id: AgentId,
    pub position: Vec2,
    pub velocity: Vec2,
    pub heading: f64,
}

impl AgentState {
    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }
}

/// Ego and surrounding-agent histories over the last `H + 1` steps,
/// oldest first; the last entry of each history is the current state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrivingCase {
    pub timestamp: f64,
    pub dt: f64,
    pub ego_history: Vec<AgentState>,
    pub agent_histories: Vec<Vec<AgentState>>,
}

impl DrivingCase {
    /// Number of history steps `H` (histories hold `H + 1` states).
    pub fn history_steps(&self) -> usize {
        self.ego_history.len().saturating_sub(1)
    }

    pub fn ego(&self) -> &AgentState {
        self.ego_history.last().expect("empty ego history")
    }

    pub fn agent_ids(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.agent_histories.iter().map(|h| h[h.len() - 1].agent_id)
    }

    pub fn agent_history(&self, id: AgentId) -> Option<&[AgentState]> {
        self.agent_histories
            .iter()
            .find(|h| h.last().is_some_and(|s| s.agent_id == id))
            .map(Vec::as_slice)
    }

    /// Checks the shape invariants: equal history lengths, agent count and
    /// the speed cap.
    pub fn validate(&self) -> Result<(), String> {
        let len = self.ego_history.len();
        if len == 0 {
            return Err("empty ego history".into());
        }
        if self.agent_histories.len() > MAX_AGENTS {
            return Err(format!(
                "{} surrounding agents, at most {MAX_AGENTS}",
                self.agent_histories.len()
            ));
        }
        for h in &self.agent_histories {
            if h.len() != len {
                return Err(format!("history length {} != ego {}", h.len(), len));
            }
        }
        let all = self
            .ego_history
            .iter()
            .chain(self.agent_histories.iter().flatten());
        if all.clone().any(|s| s.speed() > SPEED_CAP + 1e-9) {
            return Err("agent exceeds speed cap".into());
        }
        Ok(())
    }
}

/// Future positions of one agent at `t + dt, ..., t + T_h dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FutureTrajectory {
    pub agent_id: AgentId,
    /// Heading at the current time, used for boxes while the agent is still.
    pub start_heading: f64,
    pub positions: Vec<Vec2>,
}

impl FutureTrajectory {
    /// Heading at step `i` from consecutive displacements, falling back to
    /// the nearest earlier moving step and finally to `start_heading`.
    pub fn heading_at(&self, i: usize) -> f64 {
        let p = &self.positions;
        let mut j = i.min(p.len().saturating_sub(1));
        loop {
            let disp = if j == 0 {
                if p.len() > 1 {
                    p[1] - p[0]
                } else {
                    Vec2::ZERO
                }
            } else {
                p[j] - p[j - 1]
            };
            if disp.norm() > 1e-3 {
                return disp.angle();
            }
            if j == 0 {
                return self.start_heading;
            }
            j -= 1;
        }
    }

    /// Largest step-to-step displacement.
    pub fn max_step(&self) -> f64 {
        self.positions
            .windows(2)
            .map(|w| w[0].distance(w[1]))
            .fold(0.0, f64::max)
    }
}

/// Per-member, per-agent predicted futures for one case: `members[m][a]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictedFutures {
    pub members: Vec<Vec<FutureTrajectory>>,
}

impl PredictedFutures {
    pub fn member_count(&self) -> usize {
        self.members.len()
    }

    pub fn agent_count(&self) -> usize {
        self.members.first().map_or(0, Vec::len)
    }
}

/// Behaviour taxonomy of surrounding agents, listed head to tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BehaviorLabel {
    StraightThrough,
    RightTurn,
    LeftTurn,
    DecelerateYield,
    AccelerateRush,
    StopMidIntersection,
    Swerve,
    RightThenLeft,
}

impl BehaviorLabel {
    pub const ALL: [BehaviorLabel; 8] = [
        BehaviorLabel::StraightThrough,
        BehaviorLabel::RightTurn,
        BehaviorLabel::LeftTurn,
        BehaviorLabel::DecelerateYield,
        BehaviorLabel::AccelerateRush,
        BehaviorLabel::StopMidIntersection,
        BehaviorLabel::Swerve,
        BehaviorLabel::RightThenLeft,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BehaviorLabel::StraightThrough => "straight-through",
            BehaviorLabel::RightTurn => "right-turn",
            BehaviorLabel::LeftTurn => "left-turn",
            BehaviorLabel::DecelerateYield => "decelerate-yield",
            BehaviorLabel::AccelerateRush => "accelerate-rush",
            BehaviorLabel::StopMidIntersection => "stop-mid-intersection",
            BehaviorLabel::Swerve => "swerve",
            BehaviorLabel::RightThenLeft => "right-then-left",
        }
    }
}

impl fmt::Display for BehaviorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BehaviorLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BehaviorLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown behaviour label `{s}`"))
    }
}

/// One training example: the history of a single surrounding agent (plus
/// the ego) and that agent's ground-truth future.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub case: DrivingCase,
    pub future: FutureTrajectory,
    pub label: BehaviorLabel,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingDataset {
    pub records: Vec<TrainingRecord>,
}

impl TrainingDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record count per label, every label present (possibly zero).
    pub fn label_counts(&self) -> BTreeMap<BehaviorLabel, usize> {
        let mut counts: BTreeMap<_, _> = BehaviorLabel::ALL.iter().map(|&l| (l, 0)).collect();
        for r in &self.records {
            *counts.get_mut(&r.label).unwrap() += 1;
        }
        counts
    }

    /// Records in `label`.
    pub fn with_label(&self, label: BehaviorLabel) -> impl Iterator<Item = &TrainingRecord> {
        self.records.iter().filter(move |r| r.label == label)
    }
}
