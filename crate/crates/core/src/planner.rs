//! Per-robot formation planner.
//!
//! Each tick runs tracking, consensus, constraint satisfaction, reference
//! generation and the Euler parameter update on the robot's own copy of the
//! formation parameters. Robots only share their parameters and beliefs.

use std::collections::BTreeMap;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::chance::{
    assemble_constraints, xi_from_pcoll, LinearRow, PositionBelief, ScaleConstraintSet,
};
use crate::error::PlannerError;
use crate::obstacles::ObstacleMap;
use crate::qp::{project_scale_derivative, ActiveSetSolution, ProjectionProblem, SolveStatus};
use crate::vrb::{
    jacobian, pseudo_inverse, transform_point, BaseConfiguration, FormationParams, JacobianMatrix,
    Vec2, Vec5, DEFAULT_SCALE_MIN,
};

/// Neighbor data older than this many ticks is dropped from the consensus sum.
pub const MAX_STALE_TICKS: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Consensus stiffness, 1/s.
    pub lambda_stiffness: f64,
    /// m/s.
    pub v_max: f64,
    /// s, at most 1.
    pub dt: f64,
    /// m.
    pub epsilon: f64,
    pub p_coll_bound: f64,
    /// Repulsive field strength, m^3/s.
    pub apf_strength: f64,
    /// Activation distance of the repulsive field, m.
    pub apf_range: f64,
    /// m.
    pub robot_radius: f64,
    pub scale_min: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            lambda_stiffness: 1.0,
            v_max: 1.0,
            dt: 0.05,
            epsilon: 0.1,
            p_coll_bound: 1.5e-3,
            apf_strength: 0.5,
            apf_range: 2.0,
            robot_radius: 0.25,
            scale_min: DEFAULT_SCALE_MIN,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        let bad = |what: &str| Err(PlannerError::InvalidConfig(what.to_string()));
        let positive = |v: f64| v > 0.0 && v.is_finite();
        let nonneg = |v: f64| v >= 0.0 && v.is_finite();
        if !positive(self.lambda_stiffness) {
            return bad("lambda_stiffness must be positive");
        }
        if !positive(self.v_max) {
            return bad("v_max must be positive");
        }
        if !(positive(self.dt) && self.dt <= 1.0) {
            return bad("dt must lie in (0, 1]");
        }
        if !nonneg(self.epsilon) {
            return bad("epsilon must be non-negative");
        }
        if !nonneg(self.apf_strength) {
            return bad("apf_strength must be non-negative");
        }
        if !positive(self.apf_range) {
            return bad("apf_range must be positive");
        }
        if !nonneg(self.robot_radius) {
            return bad("robot_radius must be non-negative");
        }
        if !positive(self.scale_min) {
            return bad("scale_min must be positive");
        }
        xi_from_pcoll(self.p_coll_bound)?;
        Ok(())
    }

    pub fn xi(&self) -> Result<f64, PlannerError> {
        Ok(xi_from_pcoll(self.p_coll_bound)?)
    }
}

/// Shape information every planner needs about the whole formation.
#[derive(Debug, Clone, PartialEq)]
pub struct FormationContext {
    pub base: BaseConfiguration,
    pub radii: Vec<f64>,
}

impl FormationContext {
    pub fn uniform(base: BaseConfiguration, radius: f64) -> Self {
        let radii = vec![radius; base.len()];
        Self { base, radii }
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerState {
    pub eta: FormationParams,
    pub base_point: Vec2,
    pub self_index: usize,
    pub last_reference: Vec2,
}

impl PlannerState {
    pub fn new(eta: FormationParams, base_point: Vec2, self_index: usize) -> Self {
        Self {
            eta,
            base_point,
            self_index,
            last_reference: transform_point(&eta, &base_point),
        }
    }

    pub fn jacobian(&self) -> JacobianMatrix {
        jacobian(&self.eta, &self.base_point)
    }
}

/// Neighbor parameters and beliefs as seen by one robot at one tick.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NeighborSnapshot {
    pub params: BTreeMap<usize, FormationParams>,
    pub beliefs: BTreeMap<usize, PositionBelief>,
    pub stamp: u64,
}

/// `J^+ v_des`.
pub fn tracking_derivative(state: &PlannerState, v_des: &Vec2) -> Result<Vec5, PlannerError> {
    Ok(pseudo_inverse(&state.jacobian())? * v_des)
}

/// `-lambda * sum_j (eta_i - eta_j)` over `neighbors`.
pub fn consensus_term(
    state: &PlannerState,
    snapshot: &NeighborSnapshot,
    lambda: f64,
    neighbors: &[usize],
) -> Result<Vec5, PlannerError> {
    let own = state.eta.as_vector();
    let mut sum = Vec5::zeros();
    for &j in neighbors.iter().filter(|&&j| j != state.self_index) {
        let other = snapshot
            .params
            .get(&j)
            .ok_or(PlannerError::StaleSnapshot(j))?;
        sum += own - other.as_vector();
    }
    Ok(-lambda * sum)
}

/// Obstacle clearance inflated by the robot radius and its own uncertainty.
pub fn inflated_clearance(cfg: &PlannerConfig, xi: f64, sigma_self: &Matrix2<f64>) -> f64 {
    let (_, lambda_max) = crate::chance::symmetric_eigenvalues(sigma_self);
    cfg.epsilon + cfg.robot_radius + xi * lambda_max.max(0.0).sqrt()
}

/// Repulsive velocity `-grad U` at the desired position `p_des`.
pub fn apf_repulsion(
    p_des: &Vec2,
    obstacles: &ObstacleMap,
    cfg: &PlannerConfig,
    xi: f64,
    sigma_self: &Matrix2<f64>,
) -> Result<Vec2, PlannerError> {
    let Some(nearest) = obstacles.nearest(p_des) else {
        return Ok(Vec2::zeros());
    };
    let rho = nearest.distance - inflated_clearance(cfg, xi, sigma_self);
    if rho <= 0.0 {
        return Err(PlannerError::InsideInflatedObstacle { rho });
    }
    if rho > cfg.apf_range {
        return Ok(Vec2::zeros());
    }
    let gradient = nearest
        .direction_from(p_des)
        .expect("positive clearance implies a nonzero obstacle distance");
    let magnitude = cfg.apf_strength * (1.0 / rho - 1.0 / cfg.apf_range) / (rho * rho);
    Ok(magnitude * gradient)
}

/// `J * operator_deta + v_rep`.
pub fn compose_desired_velocity(state: &PlannerState, operator_deta: &Vec5, v_rep: &Vec2) -> Vec2 {
    state.jacobian() * operator_deta + v_rep
}

/// Scales `deta` so the reference speed `||J deta||` does not exceed `v_max`.
pub fn velocity_cap(j: &JacobianMatrix, deta: &Vec5, v_max: f64) -> Vec5 {
    deta * cap_factor(j, deta, v_max)
}

fn cap_factor(j: &JacobianMatrix, deta: &Vec5, v_max: f64) -> f64 {
    let speed = (j * deta).norm();
    if speed >= v_max && speed > 0.0 {
        v_max / speed
    } else {
        1.0
    }
}

/// Everything one planning tick produced.
#[derive(Debug, Clone, PartialEq)]
pub struct TickOutcome {
    pub state: PlannerState,
    pub reference: Vec2,
    /// Applied parameter derivative (projected and capped).
    pub deta: Vec5,
    /// `||J deta||` at the pre-update parameters.
    pub reference_speed: f64,
    pub beta: f64,
    pub constraints: ScaleConstraintSet,
    pub solution: ActiveSetSolution,
    /// Inflated clearance `rho` when the desired position was inside an
    /// inflated obstacle.
    pub safety_violation: Option<f64>,
}

impl TickOutcome {
    /// Neighbors whose pair row is active in the projection.
    pub fn active_neighbors(&self) -> Vec<usize> {
        self.solution
            .active_rows
            .iter()
            .filter_map(|&k| self.constraints.rows.get(k).map(|r| r.neighbor))
            .collect()
    }

    pub fn constraint_active(&self) -> bool {
        !self.active_neighbors().is_empty()
    }
}

/// One full planning step for a single robot.
///
/// `beliefs` holds one entry per robot (own belief at `state.self_index`);
/// `neighbors` lists the robots included in the consensus sum.
#[allow(clippy::too_many_arguments)]
pub fn planner_tick(
    state: &PlannerState,
    snapshot: &NeighborSnapshot,
    neighbors: &[usize],
    operator_deta: &Vec5,
    obstacles: &ObstacleMap,
    beliefs: &[PositionBelief],
    ctx: &FormationContext,
    cfg: &PlannerConfig,
) -> Result<TickOutcome, PlannerError> {
    let i = state.self_index;
    let xi = cfg.xi()?;
    let own_sigma = beliefs
        .get(i)
        .map(|b| b.covariance)
        .ok_or(PlannerError::InvalidConfig(format!(
            "no belief for robot {i}"
        )))?;

    // Local planner: operator command plus obstacle repulsion.
    let p_des = transform_point(&state.eta, &state.base_point);
    let (v_rep, safety_violation) = match apf_repulsion(&p_des, obstacles, cfg, xi, &own_sigma) {
        Ok(v) => (v, None),
        Err(PlannerError::InsideInflatedObstacle { rho }) => {
            let escape = obstacles
                .nearest(&p_des)
                .and_then(|n| n.direction_from(&p_des))
                .unwrap_or_else(Vec2::zeros);
            (escape * cfg.v_max, Some(rho))
        }
        Err(e) => return Err(e),
    };
    let v_des = compose_desired_velocity(state, operator_deta, &v_rep);

    // Tracking and consensus.
    let mut deta = tracking_derivative(state, &v_des)?
        + consensus_term(state, snapshot, cfg.lambda_stiffness, neighbors)?;

    // Constraint satisfaction on the scale sub-vector only.
    let scale = state.eta.scale;
    let constraints =
        assemble_constraints(&scale, beliefs, &ctx.base, &ctx.radii, cfg.epsilon, xi, i)?;
    let mut rows = constraints.linear_rows();
    rows.push(LinearRow {
        a: Vec2::new(1.0, 0.0),
        b: scale_floor(cfg),
    });
    rows.push(LinearRow {
        a: Vec2::new(0.0, 1.0),
        b: scale_floor(cfg),
    });
    let solution = project_scale_derivative(&ProjectionProblem {
        target: Vec2::new(deta[1], deta[2]),
        current_scale: scale,
        rows,
    })?;
    let projected = match solution.status {
        SolveStatus::Optimal => solution.delta,
        SolveStatus::InfeasibleFallback => Vec2::zeros(),
    };
    deta[1] = projected.x;
    deta[2] = projected.y;

    let j = state.jacobian();
    let beta = cap_factor(&j, &deta, cfg.v_max);
    let deta = deta * beta;
    let reference_speed = (j * deta).norm();

    // Euler update and reference generation.
    let eta = FormationParams::from_vector(&(state.eta.as_vector() + cfg.dt * deta));
    let reference = transform_point(&eta, &state.base_point);
    Ok(TickOutcome {
        state: PlannerState {
            eta,
            base_point: state.base_point,
            self_index: i,
            last_reference: reference,
        },
        reference,
        deta,
        reference_speed,
        beta,
        constraints,
        solution,
        safety_violation,
    })
}

/// Scale rows keep each component a little above the configured floor so the
/// Euler step never reaches it.
fn scale_floor(cfg: &PlannerConfig) -> f64 {
    2.0 * cfg.scale_min
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct CachedNeighbor {
    params: FormationParams,
    belief: PositionBelief,
    stamp: u64,
}

/// Planner instance owned by one robot: its state plus the latest data heard
/// from each neighbor.
#[derive(Debug, Clone, PartialEq)]
pub struct Planner {
    pub state: PlannerState,
    cache: BTreeMap<usize, CachedNeighbor>,
}

impl Planner {
    pub fn new(state: PlannerState) -> Self {
        Self {
            state,
            cache: BTreeMap::new(),
        }
    }

    /// Stores a neighbor message; older stamps never replace newer ones.
    pub fn receive(
        &mut self,
        from: usize,
        params: FormationParams,
        belief: PositionBelief,
        stamp: u64,
    ) {
        if from == self.state.self_index {
            return;
        }
        let newer = self.cache.get(&from).is_none_or(|c| stamp >= c.stamp);
        if newer {
            self.cache.insert(
                from,
                CachedNeighbor {
                    params,
                    belief,
                    stamp,
                },
            );
        }
    }

    /// Neighbors heard from within [`MAX_STALE_TICKS`] of `tick`.
    pub fn live_neighbors(&self, tick: u64) -> Vec<usize> {
        self.cache
            .iter()
            .filter(|(_, c)| tick.saturating_sub(c.stamp) <= MAX_STALE_TICKS)
            .map(|(&j, _)| j)
            .collect()
    }

    pub fn snapshot(&self, tick: u64) -> NeighborSnapshot {
        let live = self.live_neighbors(tick);
        NeighborSnapshot {
            params: live.iter().map(|j| (*j, self.cache[j].params)).collect(),
            beliefs: live.iter().map(|j| (*j, self.cache[j].belief)).collect(),
            stamp: tick,
        }
    }

    /// Per-robot beliefs for constraint assembly. Pair constraints always
    /// cover every robot; a neighbor never heard from borrows this robot's
    /// covariance.
    fn belief_table(&self, own: &PositionBelief, ctx: &FormationContext) -> Vec<PositionBelief> {
        (0..ctx.len())
            .map(|j| {
                if j == self.state.self_index {
                    *own
                } else if let Some(c) = self.cache.get(&j) {
                    c.belief
                } else {
                    PositionBelief {
                        mean: transform_point(&self.state.eta, &ctx.base.point(j)),
                        covariance: own.covariance,
                    }
                }
            })
            .collect()
    }

    pub fn tick(
        &mut self,
        tick: u64,
        own_belief: &PositionBelief,
        operator_deta: &Vec5,
        obstacles: &ObstacleMap,
        ctx: &FormationContext,
        cfg: &PlannerConfig,
    ) -> Result<TickOutcome, PlannerError> {
        let snapshot = self.snapshot(tick);
        let neighbors: Vec<usize> = snapshot.params.keys().copied().collect();
        let beliefs = self.belief_table(own_belief, ctx);
        let outcome = planner_tick(
            &self.state,
            &snapshot,
            &neighbors,
            operator_deta,
            obstacles,
            &beliefs,
            ctx,
            cfg,
        )?;
        self.state = outcome.state;
        Ok(outcome)
    }
}
