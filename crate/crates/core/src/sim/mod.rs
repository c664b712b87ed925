//! Deterministic lockstep simulator.
//!
//! Each tick moves every robot toward its last reference, resamples the
//! position beliefs, exchanges parameters over the message bus, runs all
//! planners (in parallel) and records metrics. Randomness comes from
//! independent ChaCha streams keyed by `(seed, tick, robot, purpose)`, so the
//! result does not depend on thread scheduling.

pub mod corridor;
pub mod metrics;
pub mod scenario;
pub mod stream;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::chance::{covariance_factor, min_distance_bound, symmetric_eigenvalues, PositionBelief};
use crate::error::SimError;
use crate::planner::{FormationContext, Planner, PlannerState, TickOutcome};
use crate::qp::SolveStatus;
use crate::vrb::{FormationParams, Vec2, Vec5};

pub use corridor::CorridorReport;
pub use metrics::{
    local_maxima, write_jsonl, MetricsLog, PairRow, RobotRow, TickRow, PAIRS_CSV, ROBOTS_CSV,
    TICKS_CSV,
};
pub use scenario::{
    corridor_config, corridor_layout, corridor_required_width, corridor_scenario, BusPolicy,
    CommandScript, CorridorLayout, CovarianceSchedule, Scenario, CORRIDOR_DURATION_TICKS,
    CORRIDOR_WIDTH_M,
};
pub use stream::{PairState, RobotState, StateSnapshot, PROTOCOL_VERSION};

const NOISE_STREAM: u64 = 1;
const BUS_STREAM: u64 = 2;

fn stream_rng(seed: u64, tick: u64, robot: usize, purpose: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&tick.to_le_bytes());
    key[16..24].copy_from_slice(&(robot as u64).to_le_bytes());
    key[24..].copy_from_slice(&purpose.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Ground truth of one robot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotTruth {
    pub position: Vec2,
    pub radius: f64,
    pub belief: PositionBelief,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Message {
    from: usize,
    to: usize,
    deliver_at: u64,
    stamp: u64,
    params: FormationParams,
    belief: PositionBelief,
}

/// Everything recorded for one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub tick: TickRow,
    pub robots: Vec<RobotRow>,
    pub pairs: Vec<PairRow>,
}

#[derive(Debug, Clone)]
pub struct World {
    scenario: Scenario,
    ctx: FormationContext,
    xi: f64,
    tick: u64,
    robots: Vec<RobotTruth>,
    planners: Vec<Planner>,
    references: Vec<Vec2>,
    in_flight: Vec<Message>,
}

impl World {
    pub fn new(scenario: Scenario) -> Result<Self, SimError> {
        scenario.validate()?;
        let xi = scenario
            .config
            .xi()
            .map_err(|e| crate::error::ScenarioError::Invalid(e.to_string()))?;
        let ctx = FormationContext {
            base: scenario.base.clone(),
            radii: scenario.radii.clone(),
        };
        let planners: Vec<Planner> = (0..scenario.len())
            .map(|i| Planner::new(PlannerState::new(scenario.initial[i], ctx.base.point(i), i)))
            .collect();
        let references: Vec<Vec2> = planners.iter().map(|p| p.state.last_reference).collect();
        let robots = references
            .iter()
            .zip(&scenario.radii)
            .map(|(p, r)| RobotTruth {
                position: *p,
                radius: *r,
                belief: PositionBelief::certain(*p),
            })
            .collect();
        Ok(Self {
            scenario,
            ctx,
            xi,
            tick: 0,
            robots,
            planners,
            references,
            in_flight: Vec::new(),
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    /// Index of the next tick to run.
    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn robots(&self) -> &[RobotTruth] {
        &self.robots
    }

    pub fn references(&self) -> &[Vec2] {
        &self.references
    }

    pub fn planners(&self) -> &[Planner] {
        &self.planners
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    /// Advances the world by one tick with `operator_deta` as every robot's
    /// operator command.
    pub fn step(&mut self, operator_deta: &Vec5) -> Result<TickRecord, SimError> {
        let k = self.tick;
        let cfg = self.scenario.config;
        if !operator_deta.iter().all(|v| v.is_finite()) {
            return Err(SimError::Diverged {
                tick: k,
                what: "operator command".into(),
            });
        }

        // First-order tracking of the previous reference.
        let max_step = cfg.v_max * cfg.dt;
        for (robot, reference) in self.robots.iter_mut().zip(&self.references) {
            let offset = reference - robot.position;
            let dist = offset.norm();
            if dist <= max_step {
                robot.position = *reference;
            } else {
                robot.position += offset * (max_step / dist);
            }
        }

        // Belief resampling.
        for (i, robot) in self.robots.iter_mut().enumerate() {
            let sigma = self.scenario.covariance[i].at(k);
            let mut rng = stream_rng(self.scenario.seed, k, i, NOISE_STREAM);
            let z = Vec2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
            robot.belief = PositionBelief {
                mean: robot.position + covariance_factor(&sigma) * z,
                covariance: sigma,
            };
        }

        // Exchange of the parameters computed last tick and the fresh beliefs.
        let n = self.robots.len();
        let bus = self.scenario.bus;
        for from in 0..n {
            let mut rng = stream_rng(self.scenario.seed, k, from, BUS_STREAM);
            for to in (0..n).filter(|&to| to != from) {
                let dropped =
                    bus.drop_probability > 0.0 && rng.random::<f64>() < bus.drop_probability;
                if !dropped {
                    self.in_flight.push(Message {
                        from,
                        to,
                        deliver_at: k + bus.delay_ticks,
                        stamp: k,
                        params: self.planners[from].state.eta,
                        belief: self.robots[from].belief,
                    });
                }
            }
        }
        let (due, pending): (Vec<Message>, Vec<Message>) =
            self.in_flight.drain(..).partition(|m| m.deliver_at <= k);
        self.in_flight = pending;
        for m in due {
            self.planners[m.to].receive(m.from, m.params, m.belief, m.stamp);
        }

        // Planning.
        let robots = &self.robots;
        let ctx = &self.ctx;
        let obstacles = &self.scenario.obstacles;
        let outcomes: Vec<TickOutcome> = self
            .planners
            .par_iter_mut()
            .enumerate()
            .map(|(i, planner)| {
                let mut own_cfg = cfg;
                own_cfg.robot_radius = robots[i].radius;
                planner
                    .tick(
                        k,
                        &robots[i].belief,
                        operator_deta,
                        obstacles,
                        ctx,
                        &own_cfg,
                    )
                    .map_err(|source| SimError::Planner {
                        tick: k,
                        robot: i,
                        source,
                    })
            })
            .collect::<Result<_, _>>()?;

        for (i, out) in outcomes.iter().enumerate() {
            let finite = out.state.eta.as_vector().iter().all(|v| v.is_finite())
                && out.reference.iter().all(|v| v.is_finite())
                && self.robots[i].belief.mean.iter().all(|v| v.is_finite());
            if !finite {
                return Err(SimError::Diverged {
                    tick: k,
                    what: format!("robot {i} state is not finite"),
                });
            }
            self.references[i] = out.reference;
        }

        let record = self.record(k, &outcomes);
        self.tick += 1;
        Ok(record)
    }

    fn record(&self, k: u64, outcomes: &[TickOutcome]) -> TickRecord {
        let cfg = &self.scenario.config;
        let n = self.robots.len();
        let active: Vec<Vec<usize>> = outcomes.iter().map(|o| o.active_neighbors()).collect();

        let robots: Vec<RobotRow> = outcomes
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let truth = &self.robots[i];
                let eta = o.state.eta;
                let cov = truth.belief.covariance;
                RobotRow {
                    tick: k,
                    robot: i,
                    phi_rad: eta.phi,
                    scale_x: eta.scale.x,
                    scale_y: eta.scale.y,
                    translation_x_m: eta.translation.x,
                    translation_y_m: eta.translation.y,
                    reference_x_m: o.reference.x,
                    reference_y_m: o.reference.y,
                    true_x_m: truth.position.x,
                    true_y_m: truth.position.y,
                    mean_x_m: truth.belief.mean.x,
                    mean_y_m: truth.belief.mean.y,
                    cov_xx_m2: cov.m11,
                    cov_xy_m2: cov.m12,
                    cov_yy_m2: cov.m22,
                    reference_speed_m_per_s: o.reference_speed,
                    beta: o.beta,
                    constraint_active: !active[i].is_empty(),
                    qp_fallback: o.solution.status == SolveStatus::InfeasibleFallback,
                    safety_violation: o.safety_violation.is_some(),
                }
            })
            .collect();

        let mut pairs = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                let (a, b) = (&self.robots[i], &self.robots[j]);
                let (_, lambda) =
                    symmetric_eigenvalues(&(a.belief.covariance + b.belief.covariance));
                pairs.push(PairRow {
                    tick: k,
                    i,
                    j,
                    true_distance_m: (b.position - a.position).norm(),
                    mean_distance_m: (b.belief.mean - a.belief.mean).norm(),
                    reference_distance_m: (self.references[j] - self.references[i]).norm(),
                    bound_m: min_distance_bound(a.radius, b.radius, cfg.epsilon, self.xi, lambda),
                    active_i: active[i].contains(&j),
                    active_j: active[j].contains(&i),
                });
            }
        }

        let centroid = self
            .robots
            .iter()
            .fold(Vec2::zeros(), |acc, r| acc + r.position)
            / n.max(1) as f64;
        let min_of = |f: fn(&PairRow) -> f64| {
            pairs
                .iter()
                .map(f)
                .min_by(f64::total_cmp)
                .unwrap_or(f64::INFINITY)
        };
        let tick = TickRow {
            tick: k,
            time_s: k as f64 * cfg.dt,
            centroid_x_m: centroid.x,
            centroid_y_m: centroid.y,
            min_true_distance_m: min_of(|p| p.true_distance_m),
            min_mean_distance_m: min_of(|p| p.mean_distance_m),
            min_distance_margin_m: min_of(|p| p.true_distance_m - p.bound_m),
            max_reference_speed_m_per_s: outcomes
                .iter()
                .map(|o| o.reference_speed)
                .fold(0.0, f64::max),
            active_robots: robots.iter().filter(|r| r.constraint_active).count(),
            safety_violations: robots.iter().filter(|r| r.safety_violation).count(),
            collisions: pairs
                .iter()
                .filter(|p| p.true_distance_m < self.robots[p.i].radius + self.robots[p.j].radius)
                .count(),
        };
        TickRecord {
            tick,
            robots,
            pairs,
        }
    }

    /// Wire snapshot of a recorded tick.
    pub fn snapshot(&self, record: &TickRecord) -> StateSnapshot {
        StateSnapshot {
            v: PROTOCOL_VERSION,
            kind: "state".to_string(),
            tick: record.tick.tick,
            time_s: record.tick.time_s,
            robots: record
                .robots
                .iter()
                .map(|r| RobotState {
                    id: r.robot,
                    position: [r.true_x_m, r.true_y_m],
                    reference: [r.reference_x_m, r.reference_y_m],
                    mean: [r.mean_x_m, r.mean_y_m],
                    covariance: [r.cov_xx_m2, r.cov_xy_m2, r.cov_yy_m2],
                    radius: self.robots[r.robot].radius,
                    eta: [
                        r.phi_rad,
                        r.scale_x,
                        r.scale_y,
                        r.translation_x_m,
                        r.translation_y_m,
                    ],
                    constraint_active: r.constraint_active,
                })
                .collect(),
            pairs: record
                .pairs
                .iter()
                .map(|p| PairState {
                    i: p.i,
                    j: p.j,
                    distance: p.mean_distance_m,
                    bound: p.bound_m,
                    active: p.active_i || p.active_j,
                })
                .collect(),
            obstacles: None,
        }
    }
}

/// Runs a scenario to completion, calling `on_tick` after every tick.
pub fn run_with<F>(scenario: &Scenario, mut on_tick: F) -> Result<MetricsLog, SimError>
where
    F: FnMut(&World, &TickRecord),
{
    let mut world = World::new(scenario.clone())?;
    let mut log = MetricsLog::default();
    for k in 0..scenario.duration_ticks {
        let record = world.step(&scenario.commands.at(k))?;
        on_tick(&world, &record);
        log.ticks.push(record.tick);
        log.robots.extend(record.robots);
        log.pairs.extend(record.pairs);
    }
    Ok(log)
}

pub fn run_scenario(scenario: &Scenario) -> Result<MetricsLog, SimError> {
    run_with(scenario, |_, _| {})
}
