//! Intersection geometry and path construction.
//!
//! Two perpendicular two-lane roads cross at the origin with right-hand
//! traffic. The ego comes from the south in the northbound lane and turns
//! left to leave westbound. Oncoming agents arrive from the north
//! (southbound) or from the west (eastbound).

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::frenet::{build_reference_path, FrenetError, ReferencePath};
use crate::geometry::Vec2;

/// Spacing of generated path points, m.
const POINT_SPACING: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Intersection {
    pub lane_width: f64,
    /// Distance of the stop lines beyond the intersection edge.
    pub stop_line_offset: f64,
    /// Length of each road arm kept in the ego route.
    pub arm_length: f64,
    /// Lateral acceleration the ego route allows in the turn, m/s^2.
    pub turn_lateral_accel: f64,
    /// Deceleration assumed when slowing for the turn, m/s^2.
    pub approach_decel: f64,
}

impl Default for Intersection {
    fn default() -> Self {
        Self {
            lane_width: 3.75,
            stop_line_offset: 2.0,
            arm_length: 60.0,
            turn_lateral_accel: 4.0,
            approach_decel: 1.5,
        }
    }
}

impl Intersection {
    /// Offset of a lane centre from the road centre line.
    pub fn half_lane(&self) -> f64 {
        0.5 * self.lane_width
    }

    /// Half size of the square where the roads overlap.
    pub fn edge(&self) -> f64 {
        self.lane_width
    }

    pub fn stop_line(&self) -> f64 {
        self.edge() + self.stop_line_offset
    }

    /// Ego left-turn radius, from the northbound to the westbound lane.
    pub fn ego_turn_radius(&self) -> f64 {
        self.edge() + self.half_lane()
    }

    /// Ego route: north along `x = h`, left arc, west along `y = h`.
    pub fn ego_route_points(&self) -> Vec<Vec2> {
        let h = self.half_lane();
        let e = self.edge();
        let mut b = PathBuilder::new(Vec2::new(h, -self.arm_length), FRAC_PI_2);
        b.straight(self.arm_length - e);
        b.arc(self.ego_turn_radius(), FRAC_PI_2);
        b.straight(self.arm_length - e);
        b.finish()
    }

    pub fn ego_route(&self) -> Result<ReferencePath, FrenetError> {
        build_reference_path(&self.ego_route_points())
    }

    /// Arclength range of the ego turn.
    pub fn turn_span(&self) -> (f64, f64) {
        let start = self.arm_length - self.edge();
        (start, start + self.ego_turn_radius() * FRAC_PI_2)
    }

    /// Route speed limit at ego arclength `s`: the turn speed inside the
    /// turn, and before it the speed from which the turn speed is reachable
    /// at the approach deceleration.
    pub fn route_speed_limit(&self, s: f64) -> f64 {
        let v_turn = (self.turn_lateral_accel * self.ego_turn_radius()).sqrt();
        let (start, end) = self.turn_span();
        if s < start {
            (v_turn * v_turn + 2.0 * self.approach_decel * (start - s)).sqrt()
        } else if s <= end {
            v_turn
        } else {
            f64::INFINITY
        }
    }

    /// Lowest route speed limit over `[s, s + distance]`.
    pub fn speed_limit_ahead(&self, s: f64, distance: f64) -> f64 {
        let (_, end) = self.turn_span();
        self.route_speed_limit((s + distance.max(0.0)).min(end).max(s))
    }

    /// Ego arclength with the vehicle front on the entry stop line.
    pub fn ego_stop_arclength(&self) -> f64 {
        self.arm_length - self.stop_line() - 0.5 * super::VEHICLE_LENGTH
    }

    /// Arclength on the ego route where the ego crosses the exit stop line.
    pub fn exit_arclength(&self) -> f64 {
        (self.arm_length - self.edge()) + self.ego_turn_radius() * FRAC_PI_2 + self.stop_line_offset
    }
}

/// Accumulates a polyline from straight and circular pieces.
#[derive(Debug, Clone)]
pub struct PathBuilder {
    points: Vec<Vec2>,
    position: Vec2,
    heading: f64,
}

impl PathBuilder {
    pub fn new(start: Vec2, heading: f64) -> Self {
        Self {
            points: vec![start],
            position: start,
            heading,
        }
    }

    pub fn position(&self) -> Vec2 {
        self.position
    }

    pub fn heading(&self) -> f64 {
        self.heading
    }

    pub fn straight(&mut self, length: f64) -> &mut Self {
        if length <= 0.0 {
            return self;
        }
        let n = (length / POINT_SPACING).ceil() as usize;
        let dir = Vec2::from_angle(self.heading);
        let start = self.position;
        for i in 1..=n {
            self.points
                .push(start + dir * (length * i as f64 / n as f64));
        }
        self.position = start + dir * length;
        self
    }

    /// Circular arc of `radius`, turning by `angle` (positive = left).
    pub fn arc(&mut self, radius: f64, angle: f64) -> &mut Self {
        let n = ((radius * angle.abs()) / POINT_SPACING).ceil().max(1.0) as usize;
        let side = angle.signum();
        let center = self.position + Vec2::from_angle(self.heading).perp() * (radius * side);
        let start_dir = self.position - center;
        for i in 1..=n {
            let a = angle * i as f64 / n as f64;
            self.points.push(center + start_dir.rotate(a));
        }
        self.position = center + start_dir.rotate(angle);
        self.heading += angle;
        self
    }

    /// Straight run of `length` with a one-period cosine bump of height
    /// `amplitude` to the left.
    pub fn bump(&mut self, length: f64, amplitude: f64) -> &mut Self {
        let n = (length / POINT_SPACING).ceil() as usize;
        let dir = Vec2::from_angle(self.heading);
        let left = dir.perp();
        let start = self.position;
        for i in 1..=n {
            let u = length * i as f64 / n as f64;
            let lateral = 0.5 * amplitude * (1.0 - (std::f64::consts::TAU * u / length).cos());
            self.points.push(start + dir * u + left * lateral);
        }
        self.position = start + dir * length;
        self
    }

    pub fn finish(self) -> Vec<Vec2> {
        self.points
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ego_route_shape() {
        let x = Intersection::default();
        let pts = x.ego_route_points();
        let first = pts[0];
        let last = *pts.last().unwrap();
        assert!((first.x - 1.875).abs() < 1e-12 && (first.y + 60.0).abs() < 1e-12);
        assert!((last.x + 60.0).abs() < 1e-9 && (last.y - 1.875).abs() < 1e-9);
        let route = x.ego_route().unwrap();
        let expected = 2.0 * 56.25 + 5.625 * FRAC_PI_2;
        assert!((route.length() - expected).abs() < 1e-2);
        let exit = route.point_at(x.exit_arclength());
        assert!((exit.x + 5.75).abs() < 1e-2, "{exit:?}");
    }

    #[test]
    fn arc_ends_where_expected() {
        let mut b = PathBuilder::new(Vec2::ZERO, 0.0);
        b.arc(5.0, -FRAC_PI_2);
        assert!((b.position() - Vec2::new(5.0, -5.0)).norm() < 1e-12);
        assert!((b.heading() + FRAC_PI_2).abs() < 1e-12);
    }
}
