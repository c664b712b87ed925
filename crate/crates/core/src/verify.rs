//! Randomized verification suites for the collision bound and the scale
//! projection. Every suite is deterministic for a given seed.

use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::chance::{
    hyperplane_probability, mc_collision_probability, min_distance_bound, xi_from_pcoll, LinearRow,
    MonteCarloEstimate, PositionBelief,
};
use crate::qp::{oracle, project_scale_derivative, ProjectionProblem, SolveStatus};
use crate::vrb::Vec2;
use crate::ChanceError;

#[derive(Debug, Clone, PartialEq)]
pub struct BoundSuite {
    pub p_coll_bound: f64,
    /// Random pair instances for the halfspace-versus-ball comparison.
    pub instances: usize,
    /// Isotropic instances with the mean distance at the bound.
    pub calibration: usize,
    pub samples: usize,
    pub radius: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for BoundSuite {
    fn default() -> Self {
        Self {
            p_coll_bound: 1.5e-3,
            instances: 200,
            calibration: 20,
            samples: 100_000,
            radius: 0.25,
            epsilon: 0.1,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceKind {
    /// Arbitrary means and covariances; the halfspace bound must dominate.
    Random,
    /// Isotropic covariance, means at the minimum distance bound.
    Calibration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InstanceResult {
    pub kind: InstanceKind,
    pub mean_distance: f64,
    /// Halfspace probability for random instances, `p_coll_bound` for
    /// calibration instances.
    pub reference: f64,
    pub mc_probability: f64,
    pub mc_std_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub p_coll_bound: f64,
    pub xi: f64,
    pub samples: usize,
    pub results: Vec<InstanceResult>,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> usize {
        self.results.iter().filter(|r| !r.passed).count()
    }

    /// Largest Monte Carlo collision probability among calibration instances.
    pub fn max_calibration_probability(&self) -> f64 {
        self.results
            .iter()
            .filter(|r| r.kind == InstanceKind::Calibration)
            .map(|r| r.mc_probability)
            .fold(0.0, f64::max)
    }
}

struct PairInstance {
    kind: InstanceKind,
    i: PositionBelief,
    j: PositionBelief,
}

fn random_covariance(rng: &mut ChaCha8Rng, max_variance: f64) -> Matrix2<f64> {
    let a = rng.random_range(0.0..max_variance);
    let b = rng.random_range(0.0..max_variance);
    let rho: f64 = rng.random_range(-0.95..0.95);
    let xy = rho * (a * b).sqrt();
    Matrix2::new(a, xy, xy, b)
}

fn unit(rng: &mut ChaCha8Rng) -> Vec2 {
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    Vec2::new(angle.cos(), angle.sin())
}

fn instances(suite: &BoundSuite, xi: f64) -> Result<Vec<PairInstance>, ChanceError> {
    let mut rng = ChaCha8Rng::seed_from_u64(suite.seed);
    let mut out = Vec::with_capacity(suite.instances + suite.calibration);
    for _ in 0..suite.instances {
        let distance = rng.random_range(0.2..3.0);
        let dir = unit(&mut rng);
        let origin = Vec2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        out.push(PairInstance {
            kind: InstanceKind::Random,
            i: PositionBelief::new(origin, random_covariance(&mut rng, 0.1))?,
            j: PositionBelief::new(origin + dir * distance, random_covariance(&mut rng, 0.1))?,
        });
    }
    for _ in 0..suite.calibration {
        let variance = rng.random_range(1e-3..0.05);
        let sigma = Matrix2::from_diagonal_element(variance);
        let distance = min_distance_bound(
            suite.radius,
            suite.radius,
            suite.epsilon,
            xi,
            2.0 * variance,
        );
        let dir = unit(&mut rng);
        out.push(PairInstance {
            kind: InstanceKind::Calibration,
            i: PositionBelief::new(Vec2::zeros(), sigma)?,
            j: PositionBelief::new(dir * distance, sigma)?,
        });
    }
    Ok(out)
}

/// Compares the halfspace bound against Monte Carlo on random pairs, then
/// checks that pairs placed exactly at the minimum distance bound collide
/// with probability at most `p_coll_bound` (both within three standard
/// errors).
pub fn verify_bound(suite: &BoundSuite) -> Result<BoundReport, ChanceError> {
    let xi = xi_from_pcoll(suite.p_coll_bound)?;
    let pairs = instances(suite, xi)?;
    let (r, eps, n) = (suite.radius, suite.epsilon, suite.samples);
    let nominal_se = (suite.p_coll_bound * (1.0 - suite.p_coll_bound) / n.max(1) as f64).sqrt();
    let results = pairs
        .par_iter()
        .enumerate()
        .map(|(k, p)| {
            let seed = suite
                .seed
                .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                .wrapping_add(k as u64);
            let MonteCarloEstimate {
                probability,
                std_error,
                ..
            } = mc_collision_probability(&p.i, &p.j, r, r, eps, n, seed);
            let (reference, passed) = match p.kind {
                InstanceKind::Random => {
                    let h = hyperplane_probability(&p.i, &p.j, r, r, eps)?;
                    (h, h >= probability - 3.0 * std_error)
                }
                InstanceKind::Calibration => (
                    suite.p_coll_bound,
                    probability <= suite.p_coll_bound + 3.0 * nominal_se,
                ),
            };
            Ok(InstanceResult {
                kind: p.kind,
                mean_distance: (p.j.mean - p.i.mean).norm(),
                reference,
                mc_probability: probability,
                mc_std_error: std_error,
                passed,
            })
        })
        .collect::<Result<Vec<_>, ChanceError>>()?;
    Ok(BoundReport {
        p_coll_bound: suite.p_coll_bound,
        xi,
        samples: n,
        results,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QpMismatch {
    pub problem: usize,
    pub objective_gap: f64,
    pub violation: f64,
    pub status: SolveStatus,
    pub oracle_feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QpReport {
    pub problems: usize,
    pub infeasible: usize,
    pub max_objective_gap: f64,
    pub max_violation: f64,
    pub mismatches: Vec<QpMismatch>,
}

impl QpReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Random projection problem: two variables, up to `max_rows` rows.
pub fn random_problem(rng: &mut ChaCha8Rng, max_rows: usize) -> ProjectionProblem {
    let mut v = |r: f64| Vec2::new(rng.random_range(-r..r), rng.random_range(-r..r));
    let target = v(3.0);
    let current_scale = v(3.0);
    let count = rng.random_range(0..=max_rows);
    let rows = (0..count)
        .map(|_| loop {
            let a = Vec2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            if a.norm() > 1e-3 {
                break LinearRow {
                    a,
                    b: rng.random_range(-3.0..3.0),
                };
            }
        })
        .collect();
    ProjectionProblem {
        target,
        current_scale,
        rows,
    }
}

/// Largest row violation of `current_scale + delta`, in distance units.
pub fn max_violation(problem: &ProjectionProblem, delta: &Vec2) -> f64 {
    let s = problem.current_scale + delta;
    problem
        .rows
        .iter()
        .map(|r| -r.slack(&s) / r.a.norm())
        .fold(0.0, f64::max)
}

/// Solves `count` random problems with the active-set method and with
/// exhaustive active-subset enumeration and compares objective and
/// feasibility.
pub fn verify_qp(count: usize, seed: u64) -> QpReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = QpReport {
        problems: count,
        infeasible: 0,
        max_objective_gap: 0.0,
        max_violation: 0.0,
        mismatches: Vec::new(),
    };
    for k in 0..count {
        let problem = random_problem(&mut rng, 6);
        let reference = oracle::enumerate(&problem);
        let Ok(sol) = project_scale_derivative(&problem) else {
            report.mismatches.push(QpMismatch {
                problem: k,
                objective_gap: f64::INFINITY,
                violation: f64::INFINITY,
                status: SolveStatus::InfeasibleFallback,
                oracle_feasible: reference.is_some(),
            });
            continue;
        };
        let (gap, violation, ok) = match (&reference, sol.status) {
            (Some(best), SolveStatus::Optimal) => {
                let gap = (oracle::objective(&problem.target, &sol.delta) - best.objective).abs();
                let violation = max_violation(&problem, &sol.delta);
                (
                    gap,
                    violation,
                    gap <= 1e-8 * (1.0 + best.objective) && violation <= 1e-9,
                )
            }
            (None, SolveStatus::InfeasibleFallback) => {
                report.infeasible += 1;
                (0.0, 0.0, sol.delta == Vec2::zeros())
            }
            _ => (f64::INFINITY, f64::INFINITY, false),
        };
        report.max_objective_gap = report.max_objective_gap.max(gap);
        report.max_violation = report.max_violation.max(violation);
        if !ok {
            report.mismatches.push(QpMismatch {
                problem: k,
                objective_gap: gap,
                violation,
                status: sol.status,
                oracle_feasible: reference.is_some(),
            });
        }
    }
    report
}
