//! Acceptance run: one line per criterion and a closing summary. Failing
//! criteria make the run fail only with `ACCEPTANCE_STRICT=1`.
//!
//! Criteria 6 to 9 and 11 share one full sweep at the default
//! configuration; criterion 10 repeats that sweep and compares the tables.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ltplan::config::ExperimentConfig;
use ltplan::experiment::{cmd_sweep, Sweep, PER_LABEL_FILE, SUMMARY_FILE};
use ltplan::frenet::{
    build_reference_path, cartesian_to_frenet, frenet_to_cartesian, CartesianState, FrenetPoint,
    ReferencePath,
};
use ltplan::geometry::point_segment_distance;
use ltplan::lattice::{base_cost, fit_quintic, generate_candidates, BoundaryState};
use ltplan::planner::{
    check_collision, plan, plan_baseline, plan_with_predictions, Chosen, Cost, PlannerConfig,
};
use ltplan::predictor::network::{batch_loss_and_gradient, Architecture};
use ltplan::predictor::{
    AgentId, AgentState, BehaviorLabel, DrivingCase, EnsembleSet, FutureTrajectory, Normalizer,
    PredictedFutures, PredictorModel,
};
use ltplan::Vec2;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// Polynomials as ascending coefficient vectors.

fn poly_eval(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * t + a)
}

fn poly_deriv(c: &[f64]) -> Vec<f64> {
    c.iter()
        .enumerate()
        .skip(1)
        .map(|(i, &a)| i as f64 * a)
        .collect()
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (i, x) in a.iter().enumerate() {
        out[i] += x;
    }
    for (i, y) in b.iter().enumerate() {
        out[i] += y;
    }
    out
}

/// Exact integral of the squared third derivative over [0, t].
fn jerk_energy(c: &[f64], t: f64) -> f64 {
    let j = poly_deriv(&poly_deriv(&poly_deriv(c)));
    let sq = poly_mul(&j, &j);
    sq.iter()
        .enumerate()
        .map(|(i, a)| a * t.powi(i as i32 + 1) / (i as f64 + 1.0))
        .sum()
}

fn straight_path() -> ReferencePath {
    build_reference_path(&[Vec2::new(0.0, 0.0), Vec2::new(300.0, 0.0)]).unwrap()
}

fn random_model(rng: &mut ChaCha8Rng) -> PredictorModel {
    let mut m = PredictorModel::zeros(10, 30, &[64, 64]);
    let arch = m.architecture();
    m.parameters = arch
        .init_params(rng)
        .into_iter()
        .map(|p| 0.3 * p)
        .collect();
    m.normalizer = Some(Normalizer::identity(arch.input_len()));
    m
}

fn constant_velocity_history(
    id: AgentId,
    end: Vec2,
    heading: f64,
    speed: f64,
    dt: f64,
) -> Vec<AgentState> {
    let v = Vec2::from_angle(heading) * speed;
    (0..=10)
        .map(|j| AgentState {
            agent_id: id,
            position: end - v * ((10 - j) as f64 * dt),
            velocity: v,
            heading,
        })
        .collect()
}

fn random_case(rng: &mut ChaCha8Rng) -> DrivingCase {
    let dt = 0.1;
    let speed = rng.random_range(0.5..10.0);
    let ego_end = Vec2::new(rng.random_range(40.0..150.0), rng.random_range(-0.8..0.8));
    let ego_history = constant_velocity_history(AgentId::EGO, ego_end, 0.0, speed, dt);
    let agents = rng.random_range(0..=3);
    let agent_histories = (0..agents)
        .map(|i| {
            let at = ego_end
                + Vec2::new(rng.random_range(5.0..50.0), rng.random_range(-6.0..6.0));
            constant_velocity_history(
                AgentId(i + 1),
                at,
                rng.random_range(-PI..PI),
                rng.random_range(0.0..8.0),
                dt,
            )
        })
        .collect();
    DrivingCase {
        timestamp: 0.0,
        dt,
        ego_history,
        agent_histories,
    }
}

fn criterion_1() -> Outcome {
    let path = straight_path();
    let config = PlannerConfig {
        goal_s: Some(path.length()),
        ..PlannerConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut fallbacks, mut cycles) = (0, 0);
    let mut model = random_model(&mut rng);
    for i in 0..1_000 {
        if i % 100 == 0 {
            model = random_model(&mut rng);
        }
        let case = random_case(&mut rng);
        let ensemble = EnsembleSet::new(vec![model.clone()]).unwrap();
        let a = plan(&case, &ensemble, &path, &config).unwrap();
        let b = plan_baseline(&case, &model, &path, &config).unwrap();
        if format!("{a:?}") != format!("{b:?}") {
            return outcome(false, format!("cycle {i}: results differ"));
        }
        fallbacks += usize::from(a.all_collided);
        cycles += 1;
    }
    outcome(
        true,
        format!("{cycles} cycles bit-identical ({fallbacks} fallbacks)"),
    )
}

fn worse(a: Cost, b: Cost) -> bool {
    match (a, b) {
        (Cost::Collision, Cost::Collision) => false,
        (Cost::Collision, _) => true,
        (_, Cost::Collision) => false,
        (Cost::Finite(x), Cost::Finite(y)) => x > y,
    }
}

fn criterion_2() -> Outcome {
    let path = straight_path();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut collided = 0;
    for i in 0..1_000 {
        let config = PlannerConfig {
            goal_s: if rng.random_bool(0.5) {
                Some(path.length())
            } else {
                None
            },
            ..PlannerConfig::default()
        };
        let ego = FrenetPoint {
            s: rng.random_range(20.0..100.0),
            d: rng.random_range(-1.0..1.0),
            s_dot: rng.random_range(0.0..10.0),
            ..Default::default()
        };
        let n = rng.random_range(1..=10);
        let members: Vec<Vec<FutureTrajectory>> = (0..n)
            .map(|_| {
                (0..rng.random_range(0..=2))
                    .map(|a| {
                        let start = Vec2::new(
                            ego.s + rng.random_range(5.0..60.0),
                            rng.random_range(-6.0..6.0),
                        );
                        let v = Vec2::from_angle(rng.random_range(-PI..PI))
                            * rng.random_range(0.0..8.0);
                        FutureTrajectory {
                            agent_id: AgentId(a + 1),
                            start_heading: v.angle(),
                            positions: (1..=30).map(|t| start + v * (0.1 * t as f64)).collect(),
                        }
                    })
                    .collect()
            })
            .collect();
        let predicted = PredictedFutures {
            members: members.clone(),
        };
        let result = plan_with_predictions(&ego, &predicted, &path, &config).unwrap();

        // Brute force: max over members, then min over candidates.
        let ends = config.end_states(&ego).unwrap();
        let candidates = generate_candidates(&ego, &ends, &config.candidate_settings()).unwrap();
        let mut best: Option<(usize, Cost)> = None;
        for (k, c) in candidates.iter().enumerate() {
            let mut worst = None;
            for m in &members {
                let cost = if check_collision(
                    c,
                    m,
                    &config.ego_footprint,
                    &config.agent_footprint,
                    &path,
                ) {
                    Cost::Collision
                } else {
                    Cost::Finite(base_cost(c, &config.weights))
                };
                if worst.is_none_or(|w| worse(cost, w)) {
                    worst = Some(cost);
                }
            }
            let worst = worst.unwrap();
            if worst == Cost::Collision {
                continue;
            }
            let better = match best {
                None => true,
                Some((j, b)) => {
                    worse(b, worst)
                        || (b == worst
                            && c.end_offset.abs() < candidates[j].end_offset.abs())
                }
            };
            if better {
                best = Some((k, worst));
            }
        }
        let ok = match (best, &result.chosen, result.chosen_cost) {
            (None, Chosen::Fallback(_), Cost::Collision) => {
                collided += 1;
                true
            }
            (Some((k, Cost::Finite(c))), Chosen::Candidate { index, .. }, Cost::Finite(r)) => {
                *index == k && (c - r).abs() <= 1e-12
            }
            _ => false,
        };
        if !ok {
            return outcome(false, format!("instance {i}: brute force {best:?}"));
        }
    }
    outcome(
        true,
        format!("1000 instances match brute force ({collided} all-collision)"),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut max_err: f64 = 0.0;
    let mut fits = Vec::new();
    for _ in 0..10_000 {
        let start = BoundaryState::new(
            rng.random_range(-50.0..50.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(-5.0..5.0),
        );
        let end = BoundaryState::new(
            rng.random_range(-50.0..50.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(-5.0..5.0),
        );
        let t = rng.random_range(0.5..8.0);
        let q = fit_quintic(start, end, t).unwrap();
        let c = q.coefficients.to_vec();
        let d1 = poly_deriv(&c);
        let d2 = poly_deriv(&d1);
        let errs = [
            poly_eval(&c, 0.0) - start.position,
            poly_eval(&d1, 0.0) - start.velocity,
            poly_eval(&d2, 0.0) - start.acceleration,
            poly_eval(&c, t) - end.position,
            poly_eval(&d1, t) - end.velocity,
            poly_eval(&d2, t) - end.acceleration,
        ];
        max_err = errs.iter().fold(max_err, |m, e| m.max(e.abs()));
        if fits.len() < 10 {
            fits.push((c, t));
        }
    }
    if max_err > 1e-9 {
        return outcome(false, format!("boundary error {max_err:.2e}"));
    }
    // t^3 (T - t)^3 (a + b t) leaves all six boundary values unchanged.
    let mut worst_margin = f64::INFINITY;
    for i in 0..1_000 {
        let (c, t) = &fits[i % fits.len()];
        let bump = poly_mul(
            &poly_mul(&[0.0, 0.0, 0.0, 1.0], &{
                let u = [*t, -1.0];
                poly_mul(&poly_mul(&u, &u), &u)
            }),
            &[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
        );
        let scale = 10f64.powf(rng.random_range(-4.0..0.0)) / t.powi(6);
        let bump: Vec<f64> = bump.iter().map(|b| b * scale).collect();
        let p7 = poly_add(c, &bump);
        let (jq, j7) = (jerk_energy(c, *t), jerk_energy(&p7, *t));
        worst_margin = worst_margin.min(j7 - jq);
        if j7 < jq - 1e-9 * jq.abs().max(1.0) {
            return outcome(false, format!("perturbation {i}: {j7} < {jq}"));
        }
    }
    outcome(
        true,
        format!(
            "boundary error {max_err:.1e}; quintic jerk never above degree-7 (min margin {worst_margin:.1e})"
        ),
    )
}

fn criterion_4() -> Outcome {
    let arch = Architecture::new(vec![45, 64, 64, 60]);
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let params = arch.init_params(&mut rng);
        let x: Vec<f64> = (0..45).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..60).map(|_| rng.random_range(-5.0..5.0)).collect();
        let (inputs, targets) = (vec![x], vec![y]);
        let (_, grad) = batch_loss_and_gradient(&arch, &params, &inputs, &targets);
        for _ in 0..20 {
            let i = rng.random_range(0..params.len());
            let h = 1e-6;
            let mut p = params.clone();
            p[i] += h;
            let (up, _) = batch_loss_and_gradient(&arch, &p, &inputs, &targets);
            p[i] -= 2.0 * h;
            let (down, _) = batch_loss_and_gradient(&arch, &p, &inputs, &targets);
            let numeric = (up - down) / (2.0 * h);
            let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-4);
            worst = worst.max(rel);
        }
    }
    outcome(
        worst < 1e-4,
        format!("max relative error {worst:.2e} over 200 coordinates"),
    )
}

fn distance_to(points: &[Vec2], p: Vec2) -> f64 {
    points
        .windows(2)
        .map(|w| point_segment_distance(p, w[0], w[1]))
        .fold(f64::INFINITY, f64::min)
}

fn criterion_5() -> Outcome {
    let arc: Vec<Vec2> = (0..=90)
        .map(|deg| {
            let a = (deg as f64).to_radians();
            Vec2::new(30.0 * a.sin(), 30.0 * (1.0 - a.cos()))
        })
        .collect();
    let paths = [
        ("straight", vec![Vec2::new(0.0, 0.0), Vec2::new(100.0, 0.0)]),
        (
            "L-shaped",
            vec![Vec2::new(0.0, 0.0), Vec2::new(50.0, 0.0), Vec2::new(50.0, 50.0)],
        ),
        ("arc", arc),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut report = Vec::new();
    let mut pass = true;
    for (name, raw) in &paths {
        let path = build_reference_path(raw).unwrap();
        let (lo, hi) = raw.iter().fold(
            (Vec2::new(f64::MAX, f64::MAX), Vec2::new(f64::MIN, f64::MIN)),
            |(lo, hi), p| {
                (
                    Vec2::new(lo.x.min(p.x), lo.y.min(p.y)),
                    Vec2::new(hi.x.max(p.x), hi.y.max(p.y)),
                )
            },
        );
        let mut worst: f64 = 0.0;
        let mut n = 0;
        while n < 1_000 {
            let p = Vec2::new(
                rng.random_range(lo.x - 20.0..hi.x + 20.0),
                rng.random_range(lo.y - 20.0..hi.y + 20.0),
            );
            // Interior corridor points: within 20 m and projecting inside
            // the path rather than beyond an end.
            if distance_to(raw, p) > 20.0
                || raw
                    .first()
                    .zip(raw.last())
                    .is_some_and(|(a, b)| p.distance(*a) < 1e-9 || p.distance(*b) < 1e-9)
            {
                continue;
            }
            let Ok(fp) = cartesian_to_frenet(&path, &CartesianState::at(p)) else {
                continue;
            };
            if fp.s <= 1e-9 || fp.s >= path.length() - 1e-9 {
                continue;
            }
            let back = frenet_to_cartesian(&path, &fp).unwrap().position;
            worst = worst.max(back.distance(p));
            n += 1;
        }
        pass &= worst < 1e-2;
        report.push(format!("{name} {worst:.1e} m"));
    }
    outcome(pass, format!("max round-trip error: {}", report.join(", ")))
}

fn sweep_lines(sweep: &Sweep) -> BTreeMap<usize, (f64, f64, f64, f64, f64)> {
    sweep
        .reports
        .iter()
        .map(|r| {
            let (d_ade, d_fde) = r
                .prediction
                .as_ref()
                .map_or((f64::NAN, f64::NAN), |p| (p.d_ade, p.d_fde));
            (
                r.ensemble_size,
                (r.overall.p_safe, r.overall.p_ev, r.normal.p_ev, d_ade, d_fde),
            )
        })
        .collect()
}

fn nondecreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] >= w[0])
}

fn fmt_list(v: &[f64], scale: f64, digits: usize) -> String {
    v.iter()
        .map(|x| format!("{:.*}", digits, x * scale))
        .collect::<Vec<_>>()
        .join(" / ")
}

fn criterion_6(sweep: &Sweep) -> Outcome {
    let rows = sweep_lines(sweep);
    let p: Vec<f64> = [1, 2, 5, 10].iter().map(|n| rows[n].0).collect();
    let episodes = sweep.reports[0].overall.episodes;
    let gap = p[3] - p[0];
    outcome(
        episodes >= 500 && nondecreasing(&p) && gap >= 0.01,
        format!(
            "P_safe % over n=1/2/5/10 on {episodes} paired episodes: {} (gap {:+.2} pp)",
            fmt_list(&p, 100.0, 2),
            100.0 * gap
        ),
    )
}

fn criterion_7(sweep: &Sweep) -> Outcome {
    let rows = sweep_lines(sweep);
    let p: Vec<f64> = [1, 2, 5, 10].iter().map(|n| rows[n].1).collect();
    let ratio = rows[&10].2 / rows[&1].2;
    let nonincreasing = p.windows(2).all(|w| w[1] <= w[0]);
    outcome(
        nonincreasing && ratio >= 0.95,
        format!(
            "P_ev m/s over n=1/2/5/10: {}; normal-case ratio n=10/n=1 {ratio:.3}",
            fmt_list(&p, 1.0, 3)
        ),
    )
}

fn criterion_8(sweep: &Sweep) -> Outcome {
    let rows = sweep_lines(sweep);
    let ade: Vec<f64> = [2, 5, 10].iter().map(|n| rows[n].3).collect();
    let fde: Vec<f64> = [2, 5, 10].iter().map(|n| rows[n].4).collect();
    let base_zero = rows[&1].3 == 0.0 && rows[&1].4 == 0.0;
    let positive = ade.iter().chain(&fde).all(|&d| d > 0.0);
    outcome(
        base_zero && positive && nondecreasing(&ade) && nondecreasing(&fde),
        format!(
            "n=1: {:.4}/{:.4}; D_ADE % n=2/5/10: {}; D_FDE %: {}",
            rows[&1].3,
            rows[&1].4,
            fmt_list(&ade, 100.0, 2),
            fmt_list(&fde, 100.0, 2)
        ),
    )
}

fn criterion_9(sweep: &Sweep) -> Outcome {
    let report = sweep.reports.iter().find(|r| r.ensemble_size == 10).unwrap();
    let spread = &report.prediction.as_ref().unwrap().disagreement;
    let counts = &report.training_counts;
    let by_count = |rev: bool| {
        let mut labels: Vec<BehaviorLabel> = counts
            .iter()
            .filter(|(_, &c)| c > 0)
            .map(|(&l, _)| l)
            .collect();
        labels.sort_by_key(|l| counts[l]);
        if rev {
            labels.reverse();
        }
        labels[0]
    };
    let (rare, common) = (by_count(false), by_count(true));
    match (spread.get(&rare), spread.get(&common)) {
        (Some(&r), Some(&c)) => outcome(
            r > c,
            format!("pairwise member ADE: rarest {rare} {r:.3} m vs most common {common} {c:.3} m"),
        ),
        _ => outcome(false, format!("no held-out records for {rare} or {common}")),
    }
}

fn tables(dir: &std::path::Path) -> (String, String) {
    (
        std::fs::read_to_string(dir.join(SUMMARY_FILE)).unwrap(),
        std::fs::read_to_string(dir.join(PER_LABEL_FILE)).unwrap(),
    )
}

fn criterion_10(first: &std::path::Path) -> Outcome {
    let again = tempfile::tempdir().unwrap();
    cmd_sweep(&ExperimentConfig::default(), again.path()).unwrap();
    let same = tables(first) == tables(again.path());
    outcome(
        same,
        format!(
            "second full collect/train/eval/report run: summary and per-label CSVs {}",
            if same { "byte-identical" } else { "differ" }
        ),
    )
}

fn criterion_11(sweep: &Sweep) -> Outcome {
    let counts = &sweep.collected.counts;
    let total: usize = counts.values().sum();
    let share = counts
        .get(&BehaviorLabel::RightThenLeft)
        .copied()
        .unwrap_or(0) as f64
        / total.max(1) as f64;
    let study = &sweep.right_then_left;
    let rate = study.success_rate();
    outcome(
        share < 0.02 && study.reps.len() >= 50 && rate >= 0.6,
        format!(
            "right-then-left share {:.2}% of records; n={} clear where n={} is not in {:.0}% of {} runs",
            100.0 * share,
            study.large,
            study.small,
            100.0 * rate,
            study.reps.len()
        ),
    )
}

fn main() {
    let mut out = std::io::stdout();
    let mut failures = Vec::new();
    let mut report = |id: usize, name: &str, started: Instant, o: Outcome| {
        writeln!(
            out,
            "criterion {id:>2} [{name}]: {} ({}) [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            started.elapsed().as_secs_f64()
        )
        .unwrap();
        out.flush().unwrap();
        if !o.pass {
            failures.push(id);
        }
    };

    let t = Instant::now();
    report(1, "baseline equivalence", t, criterion_1());
    let t = Instant::now();
    report(2, "min-max oracle", t, criterion_2());
    let t = Instant::now();
    report(3, "quintic correctness", t, criterion_3());
    let t = Instant::now();
    report(4, "gradient check", t, criterion_4());
    let t = Instant::now();
    report(5, "frenet round trip", t, criterion_5());

    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let sweep = cmd_sweep(&ExperimentConfig::default(), dir.path()).unwrap();
    report(6, "safety trend", t, criterion_6(&sweep));
    let t = Instant::now();
    report(7, "efficiency trend", t, criterion_7(&sweep));
    report(8, "prediction error decrease", t, criterion_8(&sweep));
    report(9, "long-tail disagreement", t, criterion_9(&sweep));
    report(11, "right-then-left case", t, criterion_11(&sweep));
    let t = Instant::now();
    report(10, "determinism", t, criterion_10(dir.path()));

    if failures.is_empty() {
        println!("all 11 criteria pass");
        return;
    }
    failures.sort_unstable();
    println!("{} of 11 criteria fail: {failures:?}", failures.len());
    if std::env::var_os("ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
        std::process::exit(1);
    }
}
