//! Ego vehicle: kinematic bicycle referenced at the centre of gravity,
//! tracked with pure pursuit and a proportional speed loop.

use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;
use crate::predictor::{AgentId, AgentState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    pub wheelbase: f64,
    /// Distance from the centre of gravity to the rear axle.
    pub rear_to_cg: f64,
    pub max_steer: f64,
    pub min_accel: f64,
    pub max_accel: f64,
    pub speed_gain: f64,
    pub min_lookahead: f64,
    pub lookahead_gain: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase: 2.7,
            rear_to_cg: 1.35,
            max_steer: 0.6,
            min_accel: -6.0,
            max_accel: 4.0,
            speed_gain: 2.0,
            min_lookahead: 2.0,
            lookahead_gain: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoVehicle {
    pub position: Vec2,
    /// Yaw of the body, radians.
    pub yaw: f64,
    pub speed: f64,
    /// Body slip of the last step; the velocity points along `yaw + slip`.
    pub slip: f64,
}

impl EgoVehicle {
    pub fn new(position: Vec2, yaw: f64, speed: f64) -> Self {
        Self {
            position,
            yaw,
            speed,
            slip: 0.0,
        }
    }

    pub fn state(&self) -> AgentState {
        AgentState {
            agent_id: AgentId::EGO,
            position: self.position,
            velocity: Vec2::from_angle(self.yaw + self.slip) * self.speed,
            heading: self.yaw,
        }
    }

    /// Integrates the bicycle model over `dt` with steering `steer` and
    /// longitudinal acceleration `accel`.
    pub fn advance(&mut self, steer: f64, accel: f64, dt: f64, params: &VehicleParams) {
        if dt <= 0.0 {
            return;
        }
        let steer = steer.clamp(-params.max_steer, params.max_steer);
        let slip = (params.rear_to_cg / params.wheelbase * steer.tan()).atan();
        let v = self.speed;
        self.position = self.position + Vec2::from_angle(self.yaw + slip) * (v * dt);
        self.yaw += v / params.rear_to_cg * slip.sin() * dt;
        self.speed = (v + accel * dt).max(0.0);
        self.slip = slip;
    }
}

/// Cartesian reference for one tracking step: points at the planning time
/// step plus the planned speed profile.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingTarget {
    pub points: Vec<Vec2>,
    pub speeds: Vec<f64>,
    pub dt: f64,
    /// Extra points past the end of `points`, for lookahead only.
    pub extension: Vec<Vec2>,
}

/// Pure-pursuit steering angle towards `target`.
pub fn pure_pursuit(ego: &EgoVehicle, target: &TrackingTarget, params: &VehicleParams) -> f64 {
    let forward = Vec2::from_angle(ego.yaw);
    let rear = ego.position - forward * params.rear_to_cg;
    let lookahead = params.min_lookahead.max(params.lookahead_gain * ego.speed);
    let goal = target
        .points
        .iter()
        .chain(&target.extension)
        .find(|p| {
            let rel = **p - rear;
            rel.dot(forward) > 0.0 && rel.norm() >= lookahead
        })
        .or_else(|| target.extension.last())
        .or_else(|| target.points.last());
    let Some(goal) = goal else {
        return 0.0;
    };
    let rel = *goal - rear;
    let distance = rel.norm();
    if distance < 1e-6 {
        return 0.0;
    }
    let alpha = rel.angle() - ego.yaw;
    (2.0 * params.wheelbase * alpha.sin() / distance)
        .atan()
        .clamp(-params.max_steer, params.max_steer)
}

/// Feed-forward from the planned speed change over the first step plus a
/// proportional correction.
pub fn speed_command(ego: &EgoVehicle, target: &TrackingTarget, params: &VehicleParams) -> f64 {
    let (v0, v1) = match target.speeds.as_slice() {
        [] => return params.min_accel.max(-ego.speed / target.dt.max(1e-9)),
        [v] => (*v, *v),
        [v0, v1, ..] => (*v0, *v1),
    };
    let feed_forward = (v1 - v0) / target.dt;
    (feed_forward + params.speed_gain * (v0 - ego.speed)).clamp(params.min_accel, params.max_accel)
}

/// One controller + plant step.
pub fn track(ego: &mut EgoVehicle, target: &TrackingTarget, dt: f64, params: &VehicleParams) {
    let steer = pure_pursuit(ego, target, params);
    let accel = speed_command(ego, target, params);
    ego.advance(steer, accel, dt, params);
}
