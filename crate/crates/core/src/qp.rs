//! Least-distance projection of the scale derivative onto the linearized
//! collision constraints.
//!
//! Solves
//!
//! ```text
//! min_d  1/2 ||target - d||^2   s.t.  A (s + d) >= b
//! ```
//!
//! with a dual active-set method (Goldfarb-Idnani specialised to an identity
//! Hessian). The dual method starts from the unconstrained optimum and adds
//! the most violated row each iteration, so it needs no feasible starting
//! point and detects an empty feasible set directly.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::chance::LinearRow;
use crate::error::QpError;
use crate::vrb::Vec2;

pub const MAX_ITERATIONS: usize = 50;
/// Multiplier below which an active row is dropped.
pub const MULTIPLIER_TOLERANCE: f64 = 1e-10;
/// Rows violated by less than this are treated as satisfied.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionProblem {
    pub target: Vec2,
    pub current_scale: Vec2,
    pub rows: Vec<LinearRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    /// Rows have an empty intersection; the step is frozen at zero.
    InfeasibleFallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSetSolution {
    pub delta: Vec2,
    /// Indices of active rows, in activation order.
    pub active_rows: Vec<usize>,
    /// Multipliers matching `active_rows`.
    pub multipliers: Vec<f64>,
    pub iterations: usize,
    pub status: SolveStatus,
}

impl ActiveSetSolution {
    pub fn is_constrained(&self) -> bool {
        !self.active_rows.is_empty()
    }
}

/// Row expressed in the step variable: `normal^T d >= offset`.
#[derive(Debug, Clone, Copy)]
struct StepRow {
    normal: Vec2,
    offset: f64,
}

pub fn project_scale_derivative(problem: &ProjectionProblem) -> Result<ActiveSetSolution, QpError> {
    let finite = |v: &Vec2| v.x.is_finite() && v.y.is_finite();
    if !finite(&problem.target)
        || !finite(&problem.current_scale)
        || !problem.rows.iter().all(|r| finite(&r.a) && r.b.is_finite())
    {
        return Err(QpError::NonFinite);
    }
    let rows: Vec<StepRow> = problem
        .rows
        .iter()
        .map(|r| StepRow {
            normal: r.a,
            offset: r.b - r.a.dot(&problem.current_scale),
        })
        .collect();

    let mut x = problem.target;
    let mut active: Vec<usize> = Vec::new();
    let mut multipliers: Vec<f64> = Vec::new();

    for iteration in 1..=MAX_ITERATIONS {
        let Some(p) = most_violated(&rows, &x, &active) else {
            return Ok(ActiveSetSolution {
                delta: x,
                active_rows: active,
                multipliers,
                iterations: iteration - 1,
                status: SolveStatus::Optimal,
            });
        };
        let np = rows[p].normal;
        let mut u_new = 0.0;

        // Inner loop: move towards satisfying row p, dropping rows whose
        // multipliers would turn negative.
        loop {
            let (z, r) = step_directions(&rows, &active, &np);
            let z_norm2 = z.norm_squared();

            let mut partial: Option<(f64, usize)> = None;
            for (k, (&rk, &uk)) in r.iter().zip(&multipliers).enumerate() {
                if rk > 0.0 {
                    let t = uk / rk;
                    if partial.is_none_or(|(best, _)| t < best) {
                        partial = Some((t, k));
                    }
                }
            }
            let full = if z_norm2 > f64::EPSILON * np.norm_squared() {
                Some(-(np.dot(&x) - rows[p].offset) / z.dot(&np))
            } else {
                None
            };

            let t = match (partial, full) {
                (None, None) => return Ok(infeasible(iteration)),
                (Some((tp, _)), Some(tf)) => tp.min(tf),
                (Some((tp, _)), None) => tp,
                (None, Some(tf)) => tf,
            };

            for (uk, rk) in multipliers.iter_mut().zip(&r) {
                *uk -= t * rk;
            }
            u_new += t;

            if let Some(tf) = full {
                x += t * z;
                if t >= tf {
                    active.push(p);
                    multipliers.push(u_new);
                    break;
                }
            }
            // Partial step: the blocking row leaves the active set.
            let (_, k) = partial.expect("partial step without blocking row");
            active.remove(k);
            multipliers.remove(k);
        }
        clamp_multipliers(&mut multipliers);
    }
    Err(QpError::SolverStall(MAX_ITERATIONS))
}

fn infeasible(iterations: usize) -> ActiveSetSolution {
    ActiveSetSolution {
        delta: Vec2::zeros(),
        active_rows: Vec::new(),
        multipliers: Vec::new(),
        iterations,
        status: SolveStatus::InfeasibleFallback,
    }
}

fn clamp_multipliers(multipliers: &mut [f64]) {
    for u in multipliers.iter_mut() {
        if *u < MULTIPLIER_TOLERANCE {
            *u = 0.0;
        }
    }
}

/// Most violated inactive row; lowest index wins ties.
fn most_violated(rows: &[StepRow], x: &Vec2, active: &[usize]) -> Option<usize> {
    let mut worst: Option<(usize, f64)> = None;
    for (j, row) in rows.iter().enumerate() {
        if active.contains(&j) {
            continue;
        }
        let scale = row.normal.norm().max(1.0);
        let slack = (row.normal.dot(x) - row.offset) / scale;
        if slack < -FEASIBILITY_TOLERANCE && worst.is_none_or(|(_, w)| slack < w) {
            worst = Some((j, slack));
        }
    }
    worst.map(|(j, _)| j)
}

/// Primal direction `z` (component of `np` orthogonal to the active normals)
/// and dual direction `r` (coefficients of `np` in the active normals).
fn step_directions(rows: &[StepRow], active: &[usize], np: &Vec2) -> (Vec2, Vec<f64>) {
    match active {
        [] => (*np, Vec::new()),
        [k] => {
            let n1 = rows[*k].normal;
            let r = n1.dot(np) / n1.norm_squared();
            (np - r * n1, vec![r])
        }
        [k1, k2] => {
            let n = Matrix2::from_columns(&[rows[*k1].normal, rows[*k2].normal]);
            // Two independent active normals span the plane.
            let r = n.lu().solve(np).unwrap_or_else(Vec2::zeros);
            (Vec2::zeros(), vec![r.x, r.y])
        }
        _ => unreachable!("at most two independent rows are active in two dimensions"),
    }
}

/// Brute-force reference solver: enumerates every subset of rows as the
/// active set, solves the equality-constrained projection for each, and
/// keeps the best feasible point. Exponential in the row count; meant for
/// verification only.
pub mod oracle {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    pub const FEASIBILITY: f64 = 1e-9;

    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct OracleSolution {
        pub delta: Vec2,
        pub objective: f64,
    }

    pub fn objective(target: &Vec2, delta: &Vec2) -> f64 {
        0.5 * (target - delta).norm_squared()
    }

    /// `None` when no subset yields a feasible point.
    pub fn enumerate(problem: &ProjectionProblem) -> Option<OracleSolution> {
        let m = problem.rows.len();
        let offsets: Vec<f64> = problem
            .rows
            .iter()
            .map(|r| r.b - r.a.dot(&problem.current_scale))
            .collect();
        let mut best: Option<OracleSolution> = None;
        for mask in 0u32..(1u32 << m) {
            let subset: Vec<usize> = (0..m).filter(|j| mask & (1 << j) != 0).collect();
            let Some(delta) = project_onto_affine(problem, &offsets, &subset) else {
                continue;
            };
            let feasible = problem
                .rows
                .iter()
                .zip(&offsets)
                .all(|(r, off)| r.a.dot(&delta) - off >= -FEASIBILITY * r.a.norm().max(1.0));
            if !feasible {
                continue;
            }
            let value = objective(&problem.target, &delta);
            if best.is_none_or(|b| value < b.objective) {
                best = Some(OracleSolution {
                    delta,
                    objective: value,
                });
            }
        }
        best
    }

    /// Closest point to the target on `{d : a_j^T d = offset_j, j in subset}`.
    fn project_onto_affine(
        problem: &ProjectionProblem,
        offsets: &[f64],
        subset: &[usize],
    ) -> Option<Vec2> {
        if subset.is_empty() {
            return Some(problem.target);
        }
        let k = subset.len();
        let a = DMatrix::from_fn(k, 2, |i, c| problem.rows[subset[i]].a[c]);
        let rhs = DVector::from_fn(k, |i, _| offsets[subset[i]]);
        let t = DVector::from_column_slice(problem.target.as_slice());
        // d = t + A^T (A A^T)^+ (rhs - A t)
        let residual = &rhs - &a * &t;
        let gram = &a * a.transpose();
        let gram_pinv = gram.pseudo_inverse(1e-12).ok()?;
        let d = &t + a.transpose() * (gram_pinv * residual);
        let consistent = (&a * &d - &rhs).amax() <= 1e-9 * rhs.amax().max(1.0);
        consistent.then(|| Vec2::new(d[0], d[1]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(x: f64, y: f64) -> Vec2 {
        Vec2::new(x, y)
    }

    fn row(ax: f64, ay: f64, b: f64) -> LinearRow {
        LinearRow { a: v(ax, ay), b }
    }

    #[test]
    fn interior_target_is_returned() {
        let sol = project_scale_derivative(&ProjectionProblem {
            target: v(0.2, -0.1),
            current_scale: v(1.0, 1.0),
            rows: vec![row(1.0, 0.0, 0.45), row(0.0, 1.0, 0.3)],
        })
        .unwrap();
        assert_eq!(sol.delta, v(0.2, -0.1));
        assert!(sol.active_rows.is_empty());
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn single_halfspace_projection() {
        let sol = project_scale_derivative(&ProjectionProblem {
            target: v(-1.0, 0.0),
            current_scale: v(1.0, 1.0),
            rows: vec![row(1.0, 0.0, 0.45)],
        })
        .unwrap();
        assert_relative_eq!(sol.delta, v(-0.55, 0.0), epsilon = 1e-15);
        assert_eq!(sol.active_rows, vec![0]);
        assert_relative_eq!(sol.multipliers[0], 0.45, epsilon = 1e-15);
    }

    #[test]
    fn orthogonal_rows_give_vertex() {
        let problem = ProjectionProblem {
            target: v(-2.0, -3.0),
            current_scale: v(1.0, 1.0),
            rows: vec![row(1.0, 0.0, 0.5), row(0.0, 2.0, 0.6)],
        };
        let sol = project_scale_derivative(&problem).unwrap();
        assert_relative_eq!(sol.delta, v(-0.5, -0.7), epsilon = 1e-14);
        let mut active = sol.active_rows.clone();
        active.sort();
        assert_eq!(active, vec![0, 1]);
        let brute = oracle::enumerate(&problem).unwrap();
        assert_relative_eq!(brute.delta, sol.delta, epsilon = 1e-12);
    }

    #[test]
    fn two_rows_match_oracle() {
        let problem = ProjectionProblem {
            target: v(0.0, -4.0),
            current_scale: v(0.0, 0.0),
            rows: vec![row(1.0, 1.0, 1.0), row(0.0, 1.0, -0.5)],
        };
        let sol = project_scale_derivative(&problem).unwrap();
        let brute = oracle::enumerate(&problem).unwrap();
        assert_relative_eq!(sol.delta, brute.delta, epsilon = 1e-12);
        assert!(sol.multipliers.iter().all(|&u| u >= 0.0));
    }

    #[test]
    fn equal_violation_prefers_lowest_index() {
        let problem = ProjectionProblem {
            target: v(0.0, 0.0),
            current_scale: v(0.0, 0.0),
            rows: vec![row(0.0, 1.0, 1.0), row(0.0, 1.0, 1.0)],
        };
        let sol = project_scale_derivative(&problem).unwrap();
        assert_eq!(sol.active_rows, vec![0]);
        assert_relative_eq!(sol.delta, v(0.0, 1.0));
    }

    #[test]
    fn contradictory_rows_freeze() {
        let sol = project_scale_derivative(&ProjectionProblem {
            target: v(0.3, 0.3),
            current_scale: v(1.0, 1.0),
            rows: vec![row(1.0, 0.0, 2.0), row(-1.0, 0.0, 0.0)],
        })
        .unwrap();
        assert_eq!(sol.status, SolveStatus::InfeasibleFallback);
        assert_eq!(sol.delta, Vec2::zeros());
    }

    #[test]
    fn parallel_dependent_rows_are_handled() {
        let problem = ProjectionProblem {
            target: v(-1.0, -1.0),
            current_scale: v(1.0, 1.0),
            rows: vec![row(1.0, 1.0, 1.0), row(2.0, 2.0, 3.0), row(1.0, 0.0, 0.2)],
        };
        let sol = project_scale_derivative(&problem).unwrap();
        let brute = oracle::enumerate(&problem).unwrap();
        assert_relative_eq!(sol.delta, brute.delta, epsilon = 1e-12);
    }

    #[test]
    fn non_finite_input_rejected() {
        let err = project_scale_derivative(&ProjectionProblem {
            target: v(f64::NAN, 0.0),
            current_scale: v(1.0, 1.0),
            rows: vec![],
        })
        .unwrap_err();
        assert_eq!(err, QpError::NonFinite);
    }
}
