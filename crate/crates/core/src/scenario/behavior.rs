//! Scripted surrounding-agent behaviours.
//!
//! Every behaviour is a path plus a longitudinal speed profile. Paths are
//! built for an agent arriving from the north (southbound) and rotated for
//! the western approach.

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::layout::{Intersection, PathBuilder};
use crate::frenet::{build_reference_path, ReferencePath};
use crate::geometry::Vec2;
use crate::predictor::{AgentId, AgentState, BehaviorLabel};

/// Lateral acceleration allowed in turns, m/s^2.
pub const TURN_LATERAL_ACCEL: f64 = 3.0;
/// Deceleration used to plan braking for turns and stops, m/s^2.
pub const PLAN_DECEL: f64 = 3.0;
/// Hard bound on agent acceleration magnitude, m/s^2.
pub const MAX_ACCEL: f64 = 4.0;
pub const CRUISE_ACCEL: f64 = 2.0;
pub const RUSH_SPEED: f64 = 13.0;
pub const RUSH_ACCEL: f64 = 2.5;
pub const RIGHT_TURN_RADIUS: f64 = 5.0;
pub const SWERVE_AMPLITUDE: f64 = 2.0;
/// Where a stop-mid-intersection agent halts, measured along its approach
/// axis from the intersection centre.
pub const MID_STOP_OFFSET: f64 = 1.5;
pub const MID_STOP_HOLD: f64 = 3.0;
/// Straight run between the two turns of right-then-left.
pub const RIGHT_THEN_LEFT_GAP: f64 = 2.0;
const AGENT_HALF_LENGTH: f64 = 2.25;
const EXIT_LENGTH: f64 = 400.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Approach {
    /// Southbound, from the north arm.
    North,
    /// Eastbound, from the west arm.
    West,
}

impl Approach {
    /// Approaches on which `label` can occur.
    pub fn allowed(label: BehaviorLabel) -> &'static [Approach] {
        match label {
            BehaviorLabel::Swerve => &[Approach::North],
            BehaviorLabel::RightThenLeft => &[Approach::West],
            _ => &[Approach::North, Approach::West],
        }
    }

    fn rotation(self) -> f64 {
        match self {
            Approach::North => 0.0,
            Approach::West => FRAC_PI_2,
        }
    }
}

/// Initial condition and behaviour parameters of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: AgentId,
    pub label: BehaviorLabel,
    pub approach: Approach,
    /// Distance from the intersection edge at spawn, m.
    pub spawn_distance: f64,
    pub speed: f64,
    /// Stop duration for decelerate-yield, s.
    pub hold_time: f64,
    /// Length of the swerve bump, m.
    pub bump_length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedZone {
    pub start: f64,
    pub end: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopPoint {
    pub s: f64,
    pub hold: f64,
}

/// A behaviour script: path, speed zones and stops.
#[derive(Debug, Clone)]
pub struct AgentScript {
    pub label: BehaviorLabel,
    pub path: ReferencePath,
    pub initial_speed: f64,
    pub cruise_speed: f64,
    pub accel: f64,
    pub zones: Vec<SpeedZone>,
    pub stops: Vec<StopPoint>,
}

/// Moves a stop forward when it cannot be reached at the planning
/// deceleration from the spawn speed.
fn reachable_stop(s: f64, speed: f64) -> f64 {
    s.max(speed * speed / (2.0 * PLAN_DECEL) + 1.0)
}

fn turn_limit(radius: f64) -> f64 {
    (TURN_LATERAL_ACCEL * radius).sqrt()
}

/// Builds the script of `spec` on `ix`.
pub fn build_script(spec: &AgentSpec, ix: &Intersection) -> AgentScript {
    let h = ix.half_lane();
    let e = ix.edge();
    let d = spec.spawn_distance;
    let start_y = e + d;
    let mut b = PathBuilder::new(Vec2::new(-h, start_y), -FRAC_PI_2);
    let mut zones = Vec::new();
    let mut stops = Vec::new();
    let mut cruise = spec.speed;
    let mut accel = CRUISE_ACCEL;
    let through = 2.0 * e + EXIT_LENGTH;

    match spec.label {
        BehaviorLabel::StraightThrough => {
            b.straight(d + through);
        }
        BehaviorLabel::RightTurn => {
            let r = RIGHT_TURN_RADIUS;
            let run = start_y - (h + r);
            b.straight(run).arc(r, -FRAC_PI_2).straight(EXIT_LENGTH);
            zones.push(SpeedZone {
                start: run,
                end: run + r * FRAC_PI_2,
                limit: turn_limit(r),
            });
        }
        BehaviorLabel::LeftTurn => {
            let r = ix.ego_turn_radius();
            b.straight(d).arc(r, FRAC_PI_2).straight(EXIT_LENGTH);
            zones.push(SpeedZone {
                start: d,
                end: d + r * FRAC_PI_2,
                limit: turn_limit(r),
            });
        }
        BehaviorLabel::DecelerateYield => {
            b.straight(d + through);
            stops.push(StopPoint {
                s: reachable_stop(start_y - (ix.stop_line() + AGENT_HALF_LENGTH), spec.speed),
                hold: spec.hold_time,
            });
        }
        BehaviorLabel::AccelerateRush => {
            b.straight(d + through);
            cruise = RUSH_SPEED.max(spec.speed);
            accel = RUSH_ACCEL;
        }
        BehaviorLabel::StopMidIntersection => {
            b.straight(d + through);
            stops.push(StopPoint {
                s: reachable_stop(start_y - MID_STOP_OFFSET, spec.speed),
                hold: MID_STOP_HOLD,
            });
        }
        BehaviorLabel::Swerve => {
            b.straight(start_y)
                .bump(spec.bump_length, SWERVE_AMPLITUDE)
                .straight(EXIT_LENGTH);
        }
        BehaviorLabel::RightThenLeft => {
            let r = RIGHT_TURN_RADIUS;
            let run = start_y - (h + r);
            let arc = r * FRAC_PI_2;
            b.straight(run)
                .arc(r, -FRAC_PI_2)
                .straight(RIGHT_THEN_LEFT_GAP)
                .arc(r, FRAC_PI_2)
                .straight(EXIT_LENGTH);
            zones.push(SpeedZone {
                start: run,
                end: run + 2.0 * arc + RIGHT_THEN_LEFT_GAP,
                limit: turn_limit(r),
            });
        }
    }

    let rot = spec.approach.rotation();
    let points: Vec<Vec2> = b.finish().into_iter().map(|p| p.rotate(rot)).collect();
    AgentScript {
        label: spec.label,
        path: build_reference_path(&points).expect("generated paths have distinct points"),
        initial_speed: spec.speed.min(cruise),
        cruise_speed: cruise,
        accel,
        zones,
        stops,
    }
}

/// Longitudinal progress of an agent along its script.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentMotion {
    pub s: f64,
    pub v: f64,
    pub next_stop: usize,
    /// Remaining hold time while stopped at a stop point.
    pub hold_left: f64,
}

/// A scripted agent in the world.
#[derive(Debug, Clone)]
pub struct Agent {
    pub id: AgentId,
    pub script: Arc<AgentScript>,
    pub motion: AgentMotion,
}

impl Agent {
    pub fn new(id: AgentId, script: AgentScript) -> Self {
        let v = script.initial_speed;
        Self {
            id,
            script: Arc::new(script),
            motion: AgentMotion {
                s: 0.0,
                v,
                next_stop: 0,
                hold_left: 0.0,
            },
        }
    }

    pub fn label(&self) -> BehaviorLabel {
        self.script.label
    }

    /// Position and heading at arclength `s`, extrapolated past the path end.
    fn pose_at(&self, s: f64) -> (Vec2, f64) {
        let path = &self.script.path;
        let length = path.length();
        let heading = path.heading_at(s);
        if s <= length {
            (path.point_at(s), heading)
        } else {
            (
                path.point_at(length) + Vec2::from_angle(heading) * (s - length),
                heading,
            )
        }
    }

    pub fn state(&self) -> AgentState {
        let (position, heading) = self.pose_at(self.motion.s);
        AgentState {
            agent_id: self.id,
            position,
            velocity: Vec2::from_angle(heading) * self.motion.v,
            heading,
        }
    }

    /// Speed the profile asks for at the current arclength.
    fn desired_speed(&self, dt: f64) -> f64 {
        let m = &self.motion;
        let mut desired = self.script.cruise_speed;
        for z in &self.script.zones {
            if m.s >= z.start && m.s <= z.end {
                desired = desired.min(z.limit);
            } else if z.start > m.s {
                let brake = (z.limit * z.limit + 2.0 * PLAN_DECEL * (z.start - m.s)).sqrt();
                desired = desired.min(brake);
            }
        }
        if let Some(stop) = self.script.stops.get(m.next_stop) {
            // Largest end-of-step speed that still leaves room to stop at
            // PLAN_DECEL: v1^2 = 2a (gap - (v0 + v1) dt / 2).
            let a = PLAN_DECEL;
            let room = stop.s - m.s - 0.5 * m.v * dt;
            let v1 = if room > 0.0 {
                0.5 * (-a * dt + (a * a * dt * dt + 8.0 * a * room).sqrt())
            } else {
                0.0
            };
            desired = desired.min(v1);
        }
        desired
    }

    /// Advances the agent by `dt` seconds.
    pub fn step(&mut self, dt: f64) {
        if dt <= 0.0 {
            return;
        }
        if self.motion.hold_left > 0.0 {
            self.motion.hold_left -= dt;
            if self.motion.hold_left <= 1e-9 {
                self.motion.hold_left = 0.0;
                self.motion.next_stop += 1;
            }
            return;
        }
        let desired = self.desired_speed(dt);
        let accel = ((desired - self.motion.v) / dt).clamp(-MAX_ACCEL, self.script.accel);
        let v0 = self.motion.v;
        let v1 = (v0 + accel * dt).max(0.0);
        let mut s1 = self.motion.s + 0.5 * (v0 + v1) * dt;
        let mut v1 = v1;
        if let Some(stop) = self.script.stops.get(self.motion.next_stop) {
            let arrived = s1 >= stop.s - 1e-6 || (v1 == 0.0 && stop.s - s1 < 0.5);
            if arrived {
                s1 = s1.min(stop.s);
                v1 = 0.0;
                self.motion.hold_left = stop.hold;
                if stop.hold <= 0.0 {
                    self.motion.next_stop += 1;
                }
            }
        }
        self.motion.s = s1;
        self.motion.v = v1;
    }
}
