//! Agent-centric history features.
//!
//! Everything is expressed in the frame of the agent's current pose (origin
//! at its position, x along its heading), so rotating or translating a whole
//! case leaves the features unchanged.

use serde::{Deserialize, Serialize};

use super::data::{AgentState, DrivingCase};
use super::PredictorError;
use crate::geometry::Vec2;

/// Feature length for `history_steps` past steps: relative positions and
/// velocities for all `H + 1` states plus the current speed.
pub fn feature_len(history_steps: usize) -> usize {
    4 * (history_steps + 1) + 1
}

/// Raw (unnormalized) features of `history`, whose last entry is current.
pub fn history_features(history: &[AgentState]) -> Vec<f64> {
    let current = history[history.len() - 1];
    let heading = current.heading;
    let mut out = Vec::with_capacity(4 * history.len() + 1);
    // j = 0 is the current state, j = H the oldest.
    for state in history.iter().rev() {
        let rel = (state.position - current.position).rotate(-heading);
        out.push(rel.x);
        out.push(rel.y);
    }
    for state in history.iter().rev() {
        let v = state.velocity.rotate(-heading);
        out.push(v.x);
        out.push(v.y);
    }
    out.push(current.speed());
    out
}

/// Raw features of `agent_id` in `case`.
pub fn extract_features(
    case: &DrivingCase,
    agent_id: crate::predictor::AgentId,
) -> Result<Vec<f64>, PredictorError> {
    let history = case
        .agent_history(agent_id)
        .ok_or(PredictorError::UnknownAgent(agent_id))?;
    Ok(history_features(history))
}

/// Maps world-frame future positions into the agent frame.
pub fn to_agent_frame(current: &AgentState, positions: &[Vec2]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * positions.len());
    for p in positions {
        let rel = (*p - current.position).rotate(-current.heading);
        out.push(rel.x);
        out.push(rel.y);
    }
    out
}

/// Per-feature affine normalization `(x - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    pub fn identity(len: usize) -> Self {
        Self {
            mean: vec![0.0; len],
            scale: vec![1.0; len],
        }
    }

    /// Mean and standard deviation over `rows`; near-constant features keep
    /// unit scale.
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]>, len: usize) -> Self {
        let mut sum = vec![0.0; len];
        let mut sum_sq = vec![0.0; len];
        let mut count = 0usize;
        for row in rows {
            for (k, &x) in row.iter().enumerate() {
                sum[k] += x;
                sum_sq[k] += x * x;
            }
            count += 1;
        }
        if count == 0 {
            return Self::identity(len);
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let scale = sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| {
                let var = (sq / n - m * m).max(0.0);
                let sd = var.sqrt();
                if sd < 1e-6 {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, raw: &mut [f64]) {
        for ((x, m), s) in raw.iter_mut().zip(&self.mean).zip(&self.scale) {
            *x = (*x - m) / s;
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::AgentId;

    fn cv_history(velocity: Vec2, heading: f64, h: usize, dt: f64) -> Vec<AgentState> {
        (0..=h)
            .map(|k| {
                let t = (k as f64 - h as f64) * dt;
                AgentState {
                    agent_id: AgentId(1),
                    position: Vec2::new(10.0, -3.0) + velocity * t,
                    velocity,
                    heading,
                }
            })
            .collect()
    }

    #[test]
    fn stationary_agent_is_all_zero() {
        let h = cv_history(Vec2::ZERO, 0.7, 10, 0.1);
        let f = history_features(&h);
        assert_eq!(f.len(), feature_len(10));
        assert!(f.iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn constant_velocity_offsets() {
        let f = history_features(&cv_history(Vec2::new(5.0, 0.0), 0.0, 10, 0.1));
        for j in 1..=10 {
            assert!((f[2 * j] + 5.0 * 0.1 * j as f64).abs() < 1e-12);
            assert!(f[2 * j + 1].abs() < 1e-12);
        }
        assert!((f[feature_len(10) - 1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_invariant() {
        let a = history_features(&cv_history(Vec2::new(5.0, 0.0), 0.0, 10, 0.1));
        let b = history_features(&cv_history(
            Vec2::new(0.0, 5.0),
            std::f64::consts::FRAC_PI_2,
            10,
            0.1,
        ));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn normalizer_fit_and_apply() {
        let rows = [vec![1.0, 5.0], vec![3.0, 5.0]];
        let n = Normalizer::fit(rows.iter().map(Vec::as_slice), 2);
        assert_eq!(n.mean, vec![2.0, 5.0]);
        assert_eq!(n.scale, vec![1.0, 1.0]);
        let mut x = vec![3.0, 6.0];
        n.apply(&mut x);
        assert_eq!(x, vec![1.0, 1.0]);
    }
}
