//! End-state sampling, quintic candidate trajectories and the base cost.
//!
//! A candidate pairs a lateral quintic `d(t)` with a longitudinal quintic
//! `s(t)`, both fitted from the ego Frenet state to a sampled end state.
//! Its base cost is
//!
//! ```text
//! C = k_j * J_t + k_t * T + k_p * b^2
//! ```
//!
//! with `J_t` the time integral of squared jerk (both axes), `T` the
//! expected time of the candidate and `b` its final lateral offset.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frenet::FrenetPoint;

#[derive(Debug, Error, PartialEq)]
pub enum LatticeError {
    #[error("quintic duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("sampling grid is empty: {0}")]
    EmptyGrid(&'static str),
    #[error("horizon {horizon} s is not a multiple of the time step {dt} s")]
    HorizonNotMultiple { horizon: f64, dt: f64 },
    #[error("time step must be positive, got {0}")]
    BadTimeStep(f64),
}

/// Position, velocity and acceleration along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoundaryState {
    pub position: f64,
    pub velocity: f64,
    pub acceleration: f64,
}

impl BoundaryState {
    pub const fn new(position: f64, velocity: f64, acceleration: f64) -> Self {
        Self {
            position,
            velocity,
            acceleration,
        }
    }
}

/// `c0 + c1 t + ... + c5 t^5` on `[0, duration]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuinticPolynomial {
    pub coefficients: [f64; 6],
    pub duration: f64,
}

impl QuinticPolynomial {
    pub fn value(&self, t: f64) -> f64 {
        let c = &self.coefficients;
        c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * (c[4] + t * c[5]))))
    }

    pub fn first_derivative(&self, t: f64) -> f64 {
        let c = &self.coefficients;
        c[1] + t * (2.0 * c[2] + t * (3.0 * c[3] + t * (4.0 * c[4] + t * 5.0 * c[5])))
    }

    pub fn second_derivative(&self, t: f64) -> f64 {
        let c = &self.coefficients;
        2.0 * c[2] + t * (6.0 * c[3] + t * (12.0 * c[4] + t * 20.0 * c[5]))
    }

    pub fn third_derivative(&self, t: f64) -> f64 {
        let c = &self.coefficients;
        6.0 * c[3] + t * (24.0 * c[4] + t * 60.0 * c[5])
    }

    pub fn state_at(&self, t: f64) -> BoundaryState {
        BoundaryState::new(
            self.value(t),
            self.first_derivative(t),
            self.second_derivative(t),
        )
    }
}

/// Fits the unique quintic matching position, velocity and acceleration at
/// both ends of `[0, duration]`.
pub fn fit_quintic(
    start: BoundaryState,
    end: BoundaryState,
    duration: f64,
) -> Result<QuinticPolynomial, LatticeError> {
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(LatticeError::NonPositiveDuration(duration));
    }
    let t = duration;
    let (t2, t3) = (t * t, t * t * t);
    let (t4, t5) = (t3 * t, t3 * t2);
    let (x0, v0, a0) = (start.position, start.velocity, start.acceleration);
    let (x1, v1, a1) = (end.position, end.velocity, end.acceleration);
    let h = x1 - x0;
    let c3 = (20.0 * h - (8.0 * v1 + 12.0 * v0) * t - (3.0 * a0 - a1) * t2) / (2.0 * t3);
    let c4 = (-30.0 * h + (14.0 * v1 + 16.0 * v0) * t + (3.0 * a0 - 2.0 * a1) * t2) / (2.0 * t4);
    let c5 = (12.0 * h - 6.0 * (v1 + v0) * t + (a1 - a0) * t2) / (2.0 * t5);
    Ok(QuinticPolynomial {
        coefficients: [x0, v0, 0.5 * a0, c3, c4, c5],
        duration,
    })
}

/// Sampled end state `tau_k` of one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndStateSample {
    pub d_end: f64,
    pub s_end: f64,
    pub v_end: f64,
    pub t_end: f64,
}

/// Shape of the end-state lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingGrid {
    /// Absolute lateral end offsets from the reference path, meters.
    pub lateral_offsets: Vec<f64>,
    /// End speeds relative to the current longitudinal speed, m/s.
    pub speed_deltas: Vec<f64>,
    /// Candidate durations, seconds.
    pub horizons: Vec<f64>,
    /// Adds one braking-to-rest sample on the path centre.
    pub stop_sample: bool,
    /// Upper clamp on sampled end speeds.
    pub max_speed: f64,
}

impl Default for SamplingGrid {
    fn default() -> Self {
        Self {
            lateral_offsets: vec![-1.0, 0.0, 1.0],
            speed_deltas: vec![-2.0, 0.0, 2.0],
            horizons: vec![3.0],
            stop_sample: true,
            max_speed: 10.0,
        }
    }
}

impl SamplingGrid {
    /// Number of end states the grid produces.
    pub fn sample_count(&self) -> usize {
        self.lateral_offsets.len() * self.speed_deltas.len() * self.horizons.len()
            + if self.stop_sample && !self.horizons.is_empty() {
                1
            } else {
                0
            }
    }
}

/// Enumerates end states in grid order: horizon, then speed, then lateral
/// offset; the stop sample (if any) comes last.
pub fn sample_end_states(
    ego: &FrenetPoint,
    grid: &SamplingGrid,
) -> Result<Vec<EndStateSample>, LatticeError> {
    if grid.horizons.is_empty() {
        return Err(LatticeError::EmptyGrid("no horizons"));
    }
    if (grid.lateral_offsets.is_empty() || grid.speed_deltas.is_empty()) && !grid.stop_sample {
        return Err(LatticeError::EmptyGrid("no lateral offsets or speeds"));
    }
    let v0 = ego.s_dot.max(0.0);
    let mut out = Vec::with_capacity(grid.sample_count());
    for &t_end in &grid.horizons {
        for &dv in &grid.speed_deltas {
            let v_end = (v0 + dv).clamp(0.0, grid.max_speed.max(0.0));
            let s_end = ego.s + 0.5 * (v0 + v_end) * t_end;
            for &d_end in &grid.lateral_offsets {
                out.push(EndStateSample {
                    d_end,
                    s_end,
                    v_end,
                    t_end,
                });
            }
        }
    }
    if grid.stop_sample {
        let t_end = grid.horizons[grid.horizons.len() / 2];
        let stop = EndStateSample {
            d_end: 0.0,
            s_end: ego.s + 0.5 * v0 * t_end,
            v_end: 0.0,
            t_end,
        };
        out.push(stop);
    }
    Ok(out)
}

/// Moves the stop sample (`v_end == 0`) onto the stop line at arclength
/// `line` while the default stop would end past it and the line is
/// reachable at `max_decel`. The duration is the constant-deceleration time
/// rounded up to a multiple of `dt`, which keeps the quintic from reversing.
pub fn retarget_stop(
    samples: &mut [EndStateSample],
    ego: &FrenetPoint,
    line: f64,
    max_decel: f64,
    dt: f64,
) {
    let v0 = ego.s_dot.max(0.0);
    let gap = line - ego.s;
    for stop in samples.iter_mut().filter(|e| e.v_end == 0.0) {
        if gap > 0.0 && line < stop.s_end && v0 * v0 <= 2.0 * max_decel * gap && dt > 0.0 {
            stop.s_end = line;
            stop.t_end = ((2.0 * gap / v0) / dt - 1e-9).ceil().max(1.0) * dt;
        }
    }
}

/// Numerical settings for turning end states into candidates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateSettings {
    pub dt: f64,
    /// Candidates whose |d''| exceeds this anywhere are dropped.
    pub max_lateral_accel: f64,
    /// Arclength of the route goal. When set, the time term of the cost is
    /// the time to reach the goal (candidate duration plus the remainder at
    /// the end speed) instead of the bare duration.
    pub goal_s: Option<f64>,
    /// Cap on the expected time, used for end states at rest.
    pub max_expected_time: f64,
}

impl Default for CandidateSettings {
    fn default() -> Self {
        Self {
            dt: 0.1,
            max_lateral_accel: 8.0,
            goal_s: None,
            max_expected_time: 60.0,
        }
    }
}

/// A time-parameterized ego trajectory in the Frenet frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTrajectory {
    pub lateral_poly: QuinticPolynomial,
    pub longitudinal_poly: QuinticPolynomial,
    /// Frenet samples at `t = i * dt`, `i = 0..=duration/dt`.
    pub samples: Vec<FrenetPoint>,
    pub dt: f64,
    /// Time integral of squared lateral plus longitudinal jerk.
    pub jerk_integral: f64,
    /// Candidate duration `T_end`, seconds.
    pub duration: f64,
    /// Time term fed to the cost, seconds.
    pub expected_time: f64,
    /// Lateral offset of the end state, `b`.
    pub end_offset: f64,
    /// `(s(T_end) - s(0)) / T_end`.
    pub mean_speed: f64,
}

/// Cost weights `k_j`, `k_t`, `k_p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    pub k_j: f64,
    pub k_t: f64,
    pub k_p: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            k_j: 0.1,
            k_t: 0.1,
            k_p: 1.0,
        }
    }
}

pub(crate) fn step_count(duration: f64, dt: f64) -> Result<usize, LatticeError> {
    if !(dt > 0.0) {
        return Err(LatticeError::BadTimeStep(dt));
    }
    let steps = (duration / dt).round();
    if steps < 1.0 || (steps * dt - duration).abs() > 1e-9 * duration.max(1.0) {
        return Err(LatticeError::HorizonNotMultiple {
            horizon: duration,
            dt,
        });
    }
    Ok(steps as usize)
}

/// Integral of squared jerk over the sample grid by composite Simpson
/// weights (3/8 rule on the last three intervals for odd counts).
fn jerk_integral(lat: &QuinticPolynomial, lon: &QuinticPolynomial, steps: usize, dt: f64) -> f64 {
    let f = |i: usize| {
        let t = i as f64 * dt;
        let jl = lat.third_derivative(t);
        let js = lon.third_derivative(t);
        jl * jl + js * js
    };
    if steps == 1 {
        return 0.5 * dt * (f(0) + f(1));
    }
    let simpson_end = if steps.is_multiple_of(2) { steps } else { steps - 3 };
    let mut total = 0.0;
    for i in (0..simpson_end).step_by(2) {
        total += dt / 3.0 * (f(i) + 4.0 * f(i + 1) + f(i + 2));
    }
    if simpson_end < steps {
        let i = simpson_end;
        total += 3.0 * dt / 8.0 * (f(i) + 3.0 * f(i + 1) + 3.0 * f(i + 2) + f(i + 3));
    }
    total
}

fn expected_time(end: &EndStateSample, settings: &CandidateSettings) -> f64 {
    match settings.goal_s {
        None => end.t_end,
        Some(goal) => {
            let remaining = (goal - end.s_end).max(0.0);
            let t = if remaining == 0.0 {
                end.t_end
            } else if end.v_end > 1e-6 {
                end.t_end + remaining / end.v_end
            } else {
                f64::INFINITY
            };
            t.min(settings.max_expected_time)
        }
    }
}

/// Builds one candidate without feasibility filtering.
pub fn build_candidate(
    ego: &FrenetPoint,
    end: &EndStateSample,
    settings: &CandidateSettings,
) -> Result<CandidateTrajectory, LatticeError> {
    let steps = step_count(end.t_end, settings.dt)?;
    let lateral = fit_quintic(
        BoundaryState::new(ego.d, ego.d_dot, ego.d_ddot),
        BoundaryState::new(end.d_end, 0.0, 0.0),
        end.t_end,
    )?;
    let longitudinal = fit_quintic(
        BoundaryState::new(ego.s, ego.s_dot, ego.s_ddot),
        BoundaryState::new(end.s_end, end.v_end, 0.0),
        end.t_end,
    )?;
    let samples = (0..=steps)
        .map(|i| {
            let t = i as f64 * settings.dt;
            FrenetPoint {
                s: longitudinal.value(t),
                d: lateral.value(t),
                s_dot: longitudinal.first_derivative(t),
                d_dot: lateral.first_derivative(t),
                s_ddot: longitudinal.second_derivative(t),
                d_ddot: lateral.second_derivative(t),
            }
        })
        .collect::<Vec<_>>();
    let s_first = samples[0].s;
    let s_last = samples[steps].s;
    Ok(CandidateTrajectory {
        jerk_integral: jerk_integral(&lateral, &longitudinal, steps, settings.dt),
        lateral_poly: lateral,
        longitudinal_poly: longitudinal,
        samples,
        dt: settings.dt,
        duration: end.t_end,
        expected_time: expected_time(end, settings),
        end_offset: end.d_end,
        mean_speed: (s_last - s_first) / end.t_end,
    })
}

impl CandidateTrajectory {
    /// Lateral acceleration within limit and no reverse motion.
    pub fn is_feasible(&self, max_lateral_accel: f64) -> bool {
        self.samples
            .iter()
            .all(|p| p.d_ddot.abs() <= max_lateral_accel && p.s_dot >= -1e-9)
    }
}

/// One candidate per end state, dropping infeasible ones. An empty result is
/// left to the planner's fallback.
pub fn generate_candidates(
    ego: &FrenetPoint,
    end_states: &[EndStateSample],
    settings: &CandidateSettings,
) -> Result<Vec<CandidateTrajectory>, LatticeError> {
    let mut out = Vec::with_capacity(end_states.len());
    for end in end_states {
        let candidate = build_candidate(ego, end, settings)?;
        if candidate.is_feasible(settings.max_lateral_accel) {
            out.push(candidate);
        }
    }
    Ok(out)
}

/// `k_j J_t + k_t T + k_p b^2`.
pub fn base_cost(traj: &CandidateTrajectory, weights: &CostWeights) -> f64 {
    weights.k_j * traj.jerk_integral
        + weights.k_t * traj.expected_time
        + weights.k_p * traj.end_offset * traj.end_offset
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ego(v: f64) -> FrenetPoint {
        FrenetPoint {
            s: 5.0,
            s_dot: v,
            ..Default::default()
        }
    }

    #[test]
    fn rest_to_rest_identity() {
        let q = fit_quintic(BoundaryState::default(), BoundaryState::default(), 1.0).unwrap();
        assert_eq!(q.coefficients, [0.0; 6]);
    }

    #[test]
    fn constant_velocity_is_linear() {
        let q = fit_quintic(
            BoundaryState::new(0.0, 1.0, 0.0),
            BoundaryState::new(1.0, 1.0, 0.0),
            1.0,
        )
        .unwrap();
        assert_eq!(q.coefficients, [0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn unit_step_boundaries() {
        let q = fit_quintic(
            BoundaryState::default(),
            BoundaryState::new(1.0, 0.0, 0.0),
            1.0,
        )
        .unwrap();
        assert!((q.value(1.0) - 1.0).abs() < 1e-9);
        assert!(q.first_derivative(1.0).abs() < 1e-9);
        assert!(q.second_derivative(1.0).abs() < 1e-9);
        // Minimum-jerk profile 10t^3 - 15t^4 + 6t^5.
        assert_eq!(&q.coefficients[3..], &[10.0, -15.0, 6.0]);
    }

    #[test]
    fn rejects_non_positive_duration() {
        let z = BoundaryState::default();
        assert_eq!(
            fit_quintic(z, z, 0.0),
            Err(LatticeError::NonPositiveDuration(0.0))
        );
        assert!(fit_quintic(z, z, -1.0).is_err());
    }

    #[test]
    fn default_grid_has_ten_samples() {
        let grid = SamplingGrid::default();
        let ends = sample_end_states(&ego(8.0), &grid).unwrap();
        assert_eq!(ends.len(), 10);
        assert_eq!(grid.sample_count(), 10);
        let stop = ends.last().unwrap();
        assert_eq!(stop.v_end, 0.0);
        assert_eq!(stop.s_end, 5.0 + 12.0);
    }

    #[test]
    fn singleton_grid_extrapolates() {
        let grid = SamplingGrid {
            lateral_offsets: vec![0.0],
            speed_deltas: vec![0.0],
            horizons: vec![3.0],
            stop_sample: false,
            max_speed: 10.0,
        };
        let ends = sample_end_states(&ego(4.0), &grid).unwrap();
        assert_eq!(
            ends,
            vec![EndStateSample {
                d_end: 0.0,
                s_end: 17.0,
                v_end: 4.0,
                t_end: 3.0
            }]
        );
    }

    #[test]
    fn empty_grid_is_an_error() {
        let grid = SamplingGrid {
            horizons: vec![],
            ..Default::default()
        };
        assert!(sample_end_states(&ego(1.0), &grid).is_err());
        let grid = SamplingGrid {
            lateral_offsets: vec![],
            stop_sample: false,
            ..Default::default()
        };
        assert!(sample_end_states(&ego(1.0), &grid).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let grid = SamplingGrid::default();
        assert_eq!(
            sample_end_states(&ego(6.3), &grid).unwrap(),
            sample_end_states(&ego(6.3), &grid).unwrap()
        );
    }

    #[test]
    fn constant_speed_candidate_has_no_jerk() {
        let end = EndStateSample {
            d_end: 0.0,
            s_end: 5.0 + 24.0,
            v_end: 8.0,
            t_end: 3.0,
        };
        let c = build_candidate(&ego(8.0), &end, &CandidateSettings::default()).unwrap();
        assert!(c.jerk_integral < 1e-9);
        assert_eq!(c.samples.len(), 31);
        assert!((c.mean_speed - 8.0).abs() < 1e-9);
    }

    #[test]
    fn lateral_shift_jerk_matches_closed_form() {
        // Minimum-jerk shift h over T: integral of jerk^2 = 720 h^2 / T^5.
        let end = EndStateSample {
            d_end: 1.0,
            s_end: 5.0,
            v_end: 0.0,
            t_end: 2.0,
        };
        let c = build_candidate(&ego(0.0), &end, &CandidateSettings::default()).unwrap();
        let analytic = 720.0 / 32.0;
        assert!(
            ((c.jerk_integral - analytic) / analytic).abs() < 0.01,
            "{} vs {analytic}",
            c.jerk_integral
        );
    }

    #[test]
    fn base_cost_examples() {
        let end = EndStateSample {
            d_end: 0.0,
            s_end: 5.0 + 24.0,
            v_end: 8.0,
            t_end: 3.0,
        };
        let w = CostWeights::default();
        let mut c = build_candidate(&ego(8.0), &end, &CandidateSettings::default()).unwrap();
        c.jerk_integral = 0.0;
        assert!((base_cost(&c, &w) - 0.3).abs() < 1e-12);
        c.end_offset = 1.0;
        assert!((base_cost(&c, &w) - 1.3).abs() < 1e-12);
    }

    #[test]
    fn ten_feasible_candidates() {
        let ends = sample_end_states(&ego(8.0), &SamplingGrid::default()).unwrap();
        let cands = generate_candidates(&ego(8.0), &ends, &CandidateSettings::default()).unwrap();
        assert_eq!(cands.len(), 10);
        for c in &cands {
            assert_eq!(c.samples.len(), (c.duration / c.dt).round() as usize + 1);
        }
    }

    #[test]
    fn infeasible_candidates_are_dropped() {
        // A 20 m lateral jump in 3 s peaks near 12.8 m/s^2.
        let end = EndStateSample {
            d_end: 20.0,
            s_end: 29.0,
            v_end: 8.0,
            t_end: 3.0,
        };
        let out = generate_candidates(&ego(8.0), &[end], &CandidateSettings::default()).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn goal_time_rewards_speed() {
        let settings = CandidateSettings {
            goal_s: Some(100.0),
            ..Default::default()
        };
        let ends = sample_end_states(&ego(6.0), &SamplingGrid::default()).unwrap();
        let cands = generate_candidates(&ego(6.0), &ends, &settings).unwrap();
        let slow = cands
            .iter()
            .find(|c| c.end_offset == 0.0 && c.mean_speed < 6.0)
            .unwrap();
        let fast = cands
            .iter()
            .find(|c| c.end_offset == 0.0 && c.mean_speed > 6.0)
            .unwrap();
        assert!(fast.expected_time < slow.expected_time);
        let stop = cands.last().unwrap();
        assert_eq!(stop.expected_time, settings.max_expected_time);
    }

    #[test]
    fn horizon_must_align_with_dt() {
        let end = EndStateSample {
            d_end: 0.0,
            s_end: 10.0,
            v_end: 1.0,
            t_end: 0.25,
        };
        assert!(matches!(
            build_candidate(&ego(1.0), &end, &CandidateSettings::default()),
            Err(LatticeError::HorizonNotMultiple { .. })
        ));
    }

    proptest::proptest! {
        #[test]
        fn quintic_matches_linear_solve(
            x0 in -50.0..50.0f64, v0 in -10.0..10.0f64, a0 in -5.0..5.0f64,
            x1 in -50.0..50.0f64, v1 in -10.0..10.0f64, a1 in -5.0..5.0f64,
            t in 0.5..8.0f64,
        ) {
            // Rows: p(0), p'(0), p''(0), p(T), p'(T), p''(T).
            let row = |k: usize, at: f64| -> [f64; 6] {
                let mut r = [0.0; 6];
                for (i, c) in r.iter_mut().enumerate().skip(k) {
                    let falling: f64 = (0..k).map(|j| (i - j) as f64).product();
                    *c = falling * at.powi((i - k) as i32);
                }
                r
            };
            let rows = [row(0, 0.0), row(1, 0.0), row(2, 0.0), row(0, t), row(1, t), row(2, t)];
            let m = nalgebra::SMatrix::<f64, 6, 6>::from_fn(|i, j| rows[i][j]);
            let rhs = nalgebra::SVector::<f64, 6>::from([x0, v0, a0, x1, v1, a1]);
            let want = m.lu().solve(&rhs).unwrap();
            let q = fit_quintic(
                BoundaryState::new(x0, v0, a0),
                BoundaryState::new(x1, v1, a1),
                t,
            )
            .unwrap();
            for i in 0..6 {
                let scale = 1.0 + want[i].abs();
                proptest::prop_assert!((q.coefficients[i] - want[i]).abs() <= 1e-9 * scale);
            }
        }
    }
}
