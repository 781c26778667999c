//! Reference paths and conversion between Cartesian and Frenet coordinates.
//!
//! The path is a polyline resampled to at most 1 m spacing. Each waypoint
//! carries a unit normal (the normalized average of its neighbouring segment
//! normals) and the frame inside a segment interpolates linearly between the
//! two end normals. A point `p` therefore has coordinates `(s, d)` with
//!
//! ```text
//! p = c(s) + d * n(s) / |n(s)|
//! ```
//!
//! which sweeps the outside of corners continuously and makes the
//! Cartesian -> Frenet -> Cartesian round trip exact up to rounding.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::geometry::{wrap_angle, Vec2};

/// Maximum spacing between resampled waypoints, meters.
pub const MAX_WAYPOINT_SPACING: f64 = 1.0;
/// Half width of the band around the path in which projection is defined.
pub const CORRIDOR_HALF_WIDTH: f64 = 20.0;

#[derive(Debug, Error, PartialEq)]
pub enum FrenetError {
    #[error("reference path needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("consecutive reference points {0} and {1} coincide")]
    DuplicatePoint(usize, usize),
    #[error("point is {distance:.2} m from the path, beyond the {CORRIDOR_HALF_WIDTH} m corridor")]
    OutOfCorridor { distance: f64 },
    #[error("arclength {s} outside path range [0, {length}]")]
    OutOfRange { s: f64, length: f64 },
    #[error("non-finite input")]
    NonFinite,
    #[error("reading path file {path}: {message}")]
    File { path: String, message: String },
}

/// A point with first and second time derivatives in the path frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct FrenetPoint {
    pub s: f64,
    pub d: f64,
    pub s_dot: f64,
    pub d_dot: f64,
    pub s_ddot: f64,
    pub d_ddot: f64,
}

impl FrenetPoint {
    pub fn at(s: f64, d: f64) -> Self {
        Self {
            s,
            d,
            ..Default::default()
        }
    }
}

/// Planar pose with velocity, as produced by [`frenet_to_cartesian`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartesianPose {
    pub position: Vec2,
    pub heading: f64,
    pub velocity: Vec2,
}

/// Kinematic input to [`cartesian_to_frenet`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CartesianState {
    pub position: Vec2,
    pub velocity: Vec2,
    pub acceleration: Vec2,
}

impl CartesianState {
    pub fn at(position: Vec2) -> Self {
        Self {
            position,
            ..Default::default()
        }
    }
}

/// Immutable resampled polyline with arclength, headings and frame normals.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePath {
    waypoints: Vec<Vec2>,
    cumulative_arclength: Vec<f64>,
    headings: Vec<f64>,
    normals: Vec<Vec2>,
}

impl ReferencePath {
    pub fn waypoints(&self) -> &[Vec2] {
        &self.waypoints
    }

    pub fn cumulative_arclength(&self) -> &[f64] {
        &self.cumulative_arclength
    }

    pub fn headings(&self) -> &[f64] {
        &self.headings
    }

    pub fn length(&self) -> f64 {
        *self.cumulative_arclength.last().unwrap()
    }

    /// Reads a path from whitespace-separated `x y` lines. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, FrenetError> {
        let path = path.as_ref();
        let file_err = |message: String| FrenetError::File {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
        let points = parse_points(&text).map_err(file_err)?;
        build_reference_path(&points)
    }

    /// Segment index containing arclength `s` (last segment for `s == length`).
    fn segment_at(&self, s: f64) -> usize {
        let cum = &self.cumulative_arclength;
        let idx = cum.partition_point(|&c| c <= s);
        idx.saturating_sub(1).min(cum.len() - 2)
    }

    /// Position, unit tangent and unit normal of the frame at arclength `s`.
    fn frame_at(&self, s: f64) -> (Vec2, Vec2, Vec2) {
        let i = self.segment_at(s);
        let seg_len = self.cumulative_arclength[i + 1] - self.cumulative_arclength[i];
        let t = ((s - self.cumulative_arclength[i]) / seg_len).clamp(0.0, 1.0);
        let origin = self.waypoints[i].lerp(self.waypoints[i + 1], t);
        let normal = self.normals[i].lerp(self.normals[i + 1], t).normalized();
        let tangent = Vec2::new(normal.y, -normal.x);
        (origin, tangent, normal)
    }

    /// Heading of the path frame at arclength `s`.
    pub fn heading_at(&self, s: f64) -> f64 {
        let (_, tangent, _) = self.frame_at(s.clamp(0.0, self.length()));
        tangent.angle()
    }

    /// Point on the centre line at arclength `s` (clamped to the path).
    pub fn point_at(&self, s: f64) -> Vec2 {
        self.frame_at(s.clamp(0.0, self.length())).0
    }

    /// Solutions of `p = c(t) + lambda * n(t)` on segment `i`, as `(s, d)`.
    fn project_on_segment(&self, i: usize, p: Vec2, out: &mut Vec<(f64, f64)>) {
        let a = self.waypoints[i];
        let e = self.waypoints[i + 1] - a;
        let na = self.normals[i];
        let dn = self.normals[i + 1] - na;
        let q = p - a;
        // cross(q - t e, na + t dn) = 0, a quadratic in t.
        let c0 = q.cross(na);
        let c1 = q.cross(dn) - e.cross(na);
        let c2 = -e.cross(dn);
        let mut roots = [f64::NAN; 2];
        if c2.abs() < 1e-12 * (c1.abs() + c0.abs()).max(1e-300) || c2 == 0.0 {
            if c1 != 0.0 {
                roots[0] = -c0 / c1;
            }
        } else {
            let disc = c1 * c1 - 4.0 * c2 * c0;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                // Numerically stable pair.
                let qq = -0.5 * (c1 + c1.signum() * sq);
                if qq != 0.0 {
                    roots[0] = qq / c2;
                    roots[1] = c0 / qq;
                } else {
                    roots[0] = 0.0;
                }
            }
        }
        let seg_len = self.cumulative_arclength[i + 1] - self.cumulative_arclength[i];
        let first = i == 0;
        let last = i + 2 == self.waypoints.len();
        for t in roots {
            if !t.is_finite() {
                continue;
            }
            // Points beyond the path ends clamp onto the end waypoints.
            let lo = if first { f64::NEG_INFINITY } else { -1e-9 };
            let hi = if last { f64::INFINITY } else { 1.0 + 1e-9 };
            if t < lo || t > hi {
                continue;
            }
            let t = t.clamp(0.0, 1.0);
            let n = na + dn * t;
            let n_len = n.norm();
            let d = (q - e * t).dot(n) / n_len;
            out.push((self.cumulative_arclength[i] + t * seg_len, d));
        }
    }

    /// Nearest frame coordinates `(s, d, segment)` by minimal `|d|`.
    ///
    /// With a `hint`, segments near it are tried first; the full scan runs
    /// only when the local window has no solution inside the corridor.
    fn locate(&self, p: Vec2, hint: Option<usize>) -> Option<(f64, f64, usize)> {
        let segments = self.waypoints.len() - 1;
        let mut buf = Vec::with_capacity(4);
        let mut best: Option<(f64, f64, usize)> = None;
        let mut scan = |range: std::ops::Range<usize>, best: &mut Option<(f64, f64, usize)>| {
            for i in range {
                buf.clear();
                self.project_on_segment(i, p, &mut buf);
                for &(s, d) in &buf {
                    if best.is_none_or(|(_, bd, _)| d.abs() < bd.abs()) {
                        *best = Some((s, d, i));
                    }
                }
            }
        };
        if let Some(h) = hint {
            const WINDOW: usize = 8;
            let lo = h.saturating_sub(WINDOW);
            let hi = (h + WINDOW + 1).min(segments);
            scan(lo..hi, &mut best);
            if let Some((_, d, i)) = best {
                let interior = (i > lo || lo == 0) && (i + 1 < hi || hi == segments);
                if interior && d.abs() <= CORRIDOR_HALF_WIDTH {
                    return best;
                }
            }
            best = None;
        }
        scan(0..segments, &mut best);
        best
    }
}

fn parse_points(text: &str) -> Result<Vec<Vec2>, String> {
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace().map(str::parse::<f64>);
        match (fields.next(), fields.next(), fields.next()) {
            (Some(Ok(x)), Some(Ok(y)), None) => points.push(Vec2::new(x, y)),
            _ => return Err(format!("line {}: expected `x y`", lineno + 1)),
        }
    }
    Ok(points)
}

/// Resamples `raw_points` to at most 1 m spacing and computes arclength,
/// headings and frame normals.
pub fn build_reference_path(raw_points: &[Vec2]) -> Result<ReferencePath, FrenetError> {
    if raw_points.len() < 2 {
        return Err(FrenetError::TooFewPoints(raw_points.len()));
    }
    if raw_points.iter().any(|p| !p.is_finite()) {
        return Err(FrenetError::NonFinite);
    }
    let mut waypoints = vec![raw_points[0]];
    for (i, pair) in raw_points.windows(2).enumerate() {
        let (a, b) = (pair[0], pair[1]);
        let len = a.distance(b);
        if len < 1e-9 {
            return Err(FrenetError::DuplicatePoint(i, i + 1));
        }
        let pieces = (len / MAX_WAYPOINT_SPACING - 1e-9).ceil().max(1.0) as usize;
        for k in 1..=pieces {
            waypoints.push(a.lerp(b, k as f64 / pieces as f64));
        }
    }

    let mut cumulative_arclength = Vec::with_capacity(waypoints.len());
    cumulative_arclength.push(0.0);
    for pair in waypoints.windows(2) {
        let last = *cumulative_arclength.last().unwrap();
        cumulative_arclength.push(last + pair[0].distance(pair[1]));
    }

    let segment_dirs: Vec<Vec2> = waypoints
        .windows(2)
        .map(|w| (w[1] - w[0]).normalized())
        .collect();
    let mut headings = Vec::with_capacity(waypoints.len());
    let mut normals = Vec::with_capacity(waypoints.len());
    for i in 0..waypoints.len() {
        let n = if i == 0 {
            segment_dirs[0].perp()
        } else if i == segment_dirs.len() {
            segment_dirs[i - 1].perp()
        } else {
            let avg = segment_dirs[i - 1].perp() + segment_dirs[i].perp();
            if avg.norm() < 1e-9 {
                segment_dirs[i].perp()
            } else {
                avg.normalized()
            }
        };
        normals.push(n);
        let raw = segment_dirs[i.min(segment_dirs.len() - 1)].angle();
        // Unwrap so successive headings differ by less than pi.
        let h = match headings.last() {
            Some(&prev) => prev + wrap_angle(raw - prev),
            None => raw,
        };
        headings.push(h);
    }

    Ok(ReferencePath {
        waypoints,
        cumulative_arclength,
        headings,
        normals,
    })
}

/// Projects a Cartesian state onto the path frame.
pub fn cartesian_to_frenet(
    path: &ReferencePath,
    state: &CartesianState,
) -> Result<FrenetPoint, FrenetError> {
    cartesian_to_frenet_from(path, state, None).map(|(fp, _)| fp)
}

/// As [`cartesian_to_frenet`], warm-started from a previous segment index.
/// Returns the segment of the match for the next call.
pub fn cartesian_to_frenet_from(
    path: &ReferencePath,
    state: &CartesianState,
    hint: Option<usize>,
) -> Result<(FrenetPoint, usize), FrenetError> {
    if !state.position.is_finite() || !state.velocity.is_finite() || !state.acceleration.is_finite()
    {
        return Err(FrenetError::NonFinite);
    }
    let (s, d, segment) = path
        .locate(state.position, hint)
        .ok_or(FrenetError::OutOfCorridor {
            distance: f64::INFINITY,
        })?;
    if d.abs() > CORRIDOR_HALF_WIDTH {
        return Err(FrenetError::OutOfCorridor { distance: d.abs() });
    }
    let (_, tangent, normal) = path.frame_at(s);
    Ok((
        FrenetPoint {
            s,
            d,
            s_dot: state.velocity.dot(tangent),
            d_dot: state.velocity.dot(normal),
            s_ddot: state.acceleration.dot(tangent),
            d_ddot: state.acceleration.dot(normal),
        },
        segment,
    ))
}

/// Maps a Frenet point back to a Cartesian pose. The heading combines the
/// path tangent with the lateral motion direction.
pub fn frenet_to_cartesian(
    path: &ReferencePath,
    fp: &FrenetPoint,
) -> Result<CartesianPose, FrenetError> {
    let length = path.length();
    if !fp.s.is_finite() || !fp.d.is_finite() {
        return Err(FrenetError::NonFinite);
    }
    if fp.s < -1e-9 || fp.s > length + 1e-9 {
        return Err(FrenetError::OutOfRange { s: fp.s, length });
    }
    let (origin, tangent, normal) = path.frame_at(fp.s.clamp(0.0, length));
    let velocity = tangent * fp.s_dot + normal * fp.d_dot;
    let path_heading = tangent.angle();
    let heading = if fp.s_dot.abs() > 1e-6 {
        path_heading + fp.d_dot.atan2(fp.s_dot.abs()) * fp.s_dot.signum()
    } else {
        path_heading
    };
    Ok(CartesianPose {
        position: origin + normal * fp.d,
        heading: wrap_angle(heading),
        velocity,
    })
}
