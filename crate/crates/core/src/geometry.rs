//! Planar vectors and oriented-rectangle overlap tests.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// A 2-D vector or point in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Unit vector pointing along `angle` (radians, counter-clockwise from +x).
    pub fn from_angle(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self { x: c, y: s }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3-D cross product.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Rotates counter-clockwise by `angle` radians.
    pub fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2 {
            x: c * self.x - s * self.y,
            y: s * self.x + c * self.y,
        }
    }

    /// Left-hand normal (rotation by +90 degrees).
    pub fn perp(self) -> Vec2 {
        Vec2 {
            x: -self.y,
            y: self.x,
        }
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        Vec2 {
            x: self.x / n,
            y: self.y / n,
        }
    }

    pub fn lerp(self, other: Vec2, t: f64) -> Vec2 {
        self + (other - self) * t
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut a = angle % two_pi;
    if a <= -std::f64::consts::PI {
        a += two_pi;
    } else if a > std::f64::consts::PI {
        a -= two_pi;
    }
    a
}

/// A rectangle with arbitrary orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub center: Vec2,
    pub heading: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl OrientedBox {
    pub fn new(center: Vec2, heading: f64, length: f64, width: f64) -> Self {
        Self {
            center,
            heading,
            half_length: 0.5 * length,
            half_width: 0.5 * width,
        }
    }

    /// Grows every side outward by `margin`.
    pub fn inflated(self, margin: f64) -> Self {
        Self {
            half_length: self.half_length + margin,
            half_width: self.half_width + margin,
            ..self
        }
    }

    fn axes(&self) -> [Vec2; 2] {
        let u = Vec2::from_angle(self.heading);
        [u, u.perp()]
    }

    pub fn corners(&self) -> [Vec2; 4] {
        let [u, v] = self.axes();
        let a = u * self.half_length;
        let b = v * self.half_width;
        [
            self.center + a + b,
            self.center + a - b,
            self.center - a - b,
            self.center - a + b,
        ]
    }

    /// Half extent of the box projected onto the unit `axis`.
    fn projected_radius(&self, axis: Vec2) -> f64 {
        let [u, v] = self.axes();
        self.half_length * u.dot(axis).abs() + self.half_width * v.dot(axis).abs()
    }

    /// Separating-axis test. Boxes that only touch along an edge do not overlap.
    pub fn overlaps(&self, other: &OrientedBox) -> bool {
        let offset = other.center - self.center;
        // Bounding-circle early out.
        let reach =
            self.half_length.hypot(self.half_width) + other.half_length.hypot(other.half_width);
        if offset.norm_squared() >= reach * reach {
            return false;
        }
        let [a0, a1] = self.axes();
        let [b0, b1] = other.axes();
        for axis in [a0, a1, b0, b1] {
            let distance = offset.dot(axis).abs();
            if distance >= self.projected_radius(axis) + other.projected_radius(axis) {
                return false;
            }
        }
        true
    }

    /// Euclidean gap between two boxes; zero when they overlap.
    pub fn distance(&self, other: &OrientedBox) -> f64 {
        if self.overlaps(other) {
            return 0.0;
        }
        let a = self.corners();
        let b = other.corners();
        let mut best = f64::INFINITY;
        for i in 0..4 {
            let (p0, p1) = (a[i], a[(i + 1) % 4]);
            let (q0, q1) = (b[i], b[(i + 1) % 4]);
            for &q in &b {
                best = best.min(point_segment_distance(q, p0, p1));
            }
            for &p in &a {
                best = best.min(point_segment_distance(p, q0, q1));
            }
        }
        best
    }
}

/// Distance from `p` to the closed segment `[a, b]`.
pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    p.distance(a + ab * t)
}
