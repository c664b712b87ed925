//! Scenario definitions and the TOML scenario file format.
//!
//! Keys in the file carry their unit as a suffix (`_m`, `_s`, `_m2`, ...).

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::chance::{min_distance_bound, symmetric_eigenvalues};
use crate::error::ScenarioError;
use crate::obstacles::{Circle, ObstacleMap, Segment};
use crate::planner::PlannerConfig;
use crate::vrb::{recenter_base, BaseConfiguration, FormationParams, Vec2, Vec5};

/// Piecewise-linear covariance schedule. Before the first knot and after the
/// last one the schedule is constant.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSchedule {
    knots: Vec<(u64, Matrix2<f64>)>,
}

impl CovarianceSchedule {
    pub fn constant(sigma: Matrix2<f64>) -> Self {
        Self {
            knots: vec![(0, sigma)],
        }
    }

    pub fn zero() -> Self {
        Self::constant(Matrix2::zeros())
    }

    /// Knots must have strictly increasing ticks and PSD covariances.
    pub fn piecewise(knots: Vec<(u64, Matrix2<f64>)>) -> Result<Self, ScenarioError> {
        if knots.is_empty() {
            return Err(ScenarioError::Invalid(
                "covariance schedule has no knots".into(),
            ));
        }
        if knots.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(ScenarioError::Invalid(
                "covariance knots must have strictly increasing ticks".into(),
            ));
        }
        for (_, sigma) in &knots {
            crate::chance::PositionBelief::new(Vec2::zeros(), *sigma)?;
        }
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[(u64, Matrix2<f64>)] {
        &self.knots
    }

    pub fn at(&self, tick: u64) -> Matrix2<f64> {
        let first = self.knots[0];
        if tick <= first.0 {
            return first.1;
        }
        for w in self.knots.windows(2) {
            let ((t0, a), (t1, b)) = (w[0], w[1]);
            if tick <= t1 {
                let u = (tick - t0) as f64 / (t1 - t0) as f64;
                return a + (b - a) * u;
            }
        }
        self.knots[self.knots.len() - 1].1
    }
}

/// Operator command as a step function of the tick.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CommandScript {
    segments: Vec<(u64, Vec5)>,
}

impl CommandScript {
    pub fn constant(deta: Vec5) -> Self {
        Self {
            segments: vec![(0, deta)],
        }
    }

    pub fn new(mut segments: Vec<(u64, Vec5)>) -> Self {
        segments.sort_by_key(|(from, _)| *from);
        Self { segments }
    }

    pub fn segments(&self) -> &[(u64, Vec5)] {
        &self.segments
    }

    /// Command of the latest segment starting at or before `tick`; zero before
    /// the first segment.
    pub fn at(&self, tick: u64) -> Vec5 {
        self.segments
            .iter()
            .rev()
            .find(|(from, _)| *from <= tick)
            .map(|(_, d)| *d)
            .unwrap_or_else(Vec5::zeros)
    }
}

/// Message bus behavior. The default is lossless lockstep exchange.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BusPolicy {
    #[serde(default)]
    pub drop_probability: f64,
    #[serde(default)]
    pub delay_ticks: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub base: BaseConfiguration,
    pub radii: Vec<f64>,
    pub initial: Vec<FormationParams>,
    pub config: PlannerConfig,
    pub obstacles: ObstacleMap,
    pub covariance: Vec<CovarianceSchedule>,
    pub commands: CommandScript,
    pub duration_ticks: u64,
    pub seed: u64,
    pub bus: BusPolicy,
}

impl Scenario {
    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let n = self.base.len();
        if self.radii.len() != n || self.initial.len() != n || self.covariance.len() != n {
            return Err(ScenarioError::Invalid(format!(
                "expected {n} radii, initial parameters and covariance schedules"
            )));
        }
        if self.radii.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(ScenarioError::Invalid(
                "radii must be finite and non-negative".into(),
            ));
        }
        self.config
            .validate()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        for eta in &self.initial {
            FormationParams::with_scale_min(
                eta.phi,
                eta.scale,
                eta.translation,
                self.config.scale_min,
            )?;
        }
        self.obstacles.validate().map_err(ScenarioError::Invalid)?;
        if self
            .commands
            .segments()
            .iter()
            .any(|(_, d)| !d.iter().all(|v| v.is_finite()))
        {
            return Err(ScenarioError::Invalid(
                "operator commands must be finite".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.bus.drop_probability) {
            return Err(ScenarioError::Invalid(
                "drop_probability must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile =
            toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        file.into_scenario()
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&ScenarioFile::from_scenario(self))
            .expect("scenario file types always serialize")
    }
}

/// Minimum corridor width the formation can pass through.
///
/// Two robots side by side need the pair bound between them plus the
/// inflated obstacle clearance on each side; a single robot only needs the
/// clearance.
pub fn corridor_required_width(n_robots: usize, cfg: &PlannerConfig, sigma: &Matrix2<f64>) -> f64 {
    let xi = cfg.xi().unwrap_or(0.0);
    let (_, lambda) = symmetric_eigenvalues(sigma);
    let clearance = cfg.robot_radius + cfg.epsilon + xi * lambda.max(0.0).sqrt();
    if n_robots < 2 {
        2.0 * clearance
    } else {
        let pair = min_distance_bound(
            cfg.robot_radius,
            cfg.robot_radius,
            cfg.epsilon,
            xi,
            2.0 * lambda.max(0.0),
        );
        pair + 2.0 * clearance
    }
}

/// Corridor geometry: walls at `y = +-width / 2` between `x = start` and
/// `x = start + length`, preceded by 45 degree funnel walls that flare out by
/// `flare` on each side. The formation starts at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorridorLayout {
    pub width: f64,
    pub start: f64,
    pub length: f64,
    pub flare: f64,
}

impl CorridorLayout {
    pub fn exit(&self) -> f64 {
        self.start + self.length
    }

    pub fn walls(&self) -> Vec<Segment> {
        let half = 0.5 * self.width;
        [1.0, -1.0]
            .into_iter()
            .flat_map(|side: f64| {
                let mouth = Vec2::new(self.start - self.flare, side * (half + self.flare));
                let entry = Vec2::new(self.start, side * half);
                let exit = Vec2::new(self.exit(), side * half);
                [
                    Segment {
                        start: mouth,
                        end: entry,
                    },
                    Segment {
                        start: entry,
                        end: exit,
                    },
                ]
            })
            .collect()
    }
}

pub const CORRIDOR_FLARE_M: f64 = 2.0;
pub const CORRIDOR_START_M: f64 = 5.0;
pub const CORRIDOR_LENGTH_M: f64 = 6.0;
pub const CORRIDOR_SPEED_M_PER_S: f64 = 1.0;
pub const CORRIDOR_HALF_SIDE_M: f64 = 1.0;
pub const CORRIDOR_DURATION_TICKS: u64 = 1600;
/// Narrow enough that the square has to shrink, wide enough to pass.
pub const CORRIDOR_WIDTH_M: f64 = 2.2;

/// Planner settings of the reference corridor run: stiffer consensus than the
/// default and a short-range, weak repulsive field, so that the robots agree
/// on the compression before the field pushes them into the pair bound.
pub fn corridor_config() -> PlannerConfig {
    PlannerConfig {
        lambda_stiffness: 4.0,
        apf_strength: 0.05,
        apf_range: 0.5,
        ..PlannerConfig::default()
    }
}

/// Noiseless corridor run: square base (regular polygon for other robot
/// counts), constant eastward translation command, walls parallel to x.
pub fn corridor_scenario(
    width: f64,
    n_robots: usize,
    cfg: &PlannerConfig,
) -> Result<Scenario, ScenarioError> {
    if n_robots == 0 {
        return Err(ScenarioError::Invalid(
            "corridor needs at least one robot".into(),
        ));
    }
    cfg.validate()
        .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    let required = corridor_required_width(n_robots, cfg, &Matrix2::zeros());
    if !(width > required) {
        return Err(ScenarioError::Infeasible { width, required });
    }
    let layout = corridor_layout(width);
    let points = formation_points(n_robots, CORRIDOR_HALF_SIDE_M);
    let base = recenter_base(&points)?;
    Ok(Scenario {
        name: format!("corridor-{n_robots}x{width}"),
        radii: vec![cfg.robot_radius; n_robots],
        initial: vec![FormationParams::identity(); n_robots],
        config: *cfg,
        obstacles: ObstacleMap {
            circles: vec![],
            segments: layout.walls(),
        },
        covariance: vec![CovarianceSchedule::zero(); n_robots],
        commands: CommandScript::constant(Vec5::from([0.0, 0.0, 0.0, CORRIDOR_SPEED_M_PER_S, 0.0])),
        duration_ticks: CORRIDOR_DURATION_TICKS,
        seed: 7,
        bus: BusPolicy::default(),
        base,
    })
}

pub fn corridor_layout(width: f64) -> CorridorLayout {
    CorridorLayout {
        width,
        start: CORRIDOR_START_M,
        length: CORRIDOR_LENGTH_M,
        flare: CORRIDOR_FLARE_M,
    }
}

/// Square for four robots, a single point for one, otherwise a regular
/// polygon with circumradius `half_side * sqrt(2)`.
fn formation_points(n: usize, half_side: f64) -> Vec<Vec2> {
    match n {
        1 => vec![Vec2::zeros()],
        4 => vec![
            Vec2::new(-half_side, -half_side),
            Vec2::new(half_side, -half_side),
            Vec2::new(-half_side, half_side),
            Vec2::new(half_side, half_side),
        ],
        _ => {
            let radius = half_side * 2f64.sqrt();
            (0..n)
                .map(|k| {
                    let a = 2.0 * PI * k as f64 / n as f64 + 0.25 * PI;
                    Vec2::new(radius * a.cos(), radius * a.sin())
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default = "default_name")]
    name: String,
    duration_ticks: u64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    planner: PlannerFile,
    #[serde(default)]
    formation: FormationFile,
    robots: Vec<RobotFile>,
    #[serde(default)]
    obstacles: ObstaclesFile,
    #[serde(default)]
    commands: Vec<CommandFile>,
    #[serde(default)]
    bus: BusPolicy,
}

fn default_name() -> String {
    "scenario".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PlannerFile {
    lambda_per_s: f64,
    v_max_m_per_s: f64,
    dt_s: f64,
    epsilon_m: f64,
    p_coll_bound: f64,
    apf_strength_m3_per_s: f64,
    apf_range_m: f64,
    scale_min: f64,
}

impl Default for PlannerFile {
    fn default() -> Self {
        let c = PlannerConfig::default();
        Self {
            lambda_per_s: c.lambda_stiffness,
            v_max_m_per_s: c.v_max,
            dt_s: c.dt,
            epsilon_m: c.epsilon,
            p_coll_bound: c.p_coll_bound,
            apf_strength_m3_per_s: c.apf_strength,
            apf_range_m: c.apf_range,
            scale_min: c.scale_min,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FormationFile {
    #[serde(default)]
    phi_rad: f64,
    #[serde(default = "unit_scale")]
    scale: [f64; 2],
    #[serde(default)]
    translation_m: [f64; 2],
}

fn unit_scale() -> [f64; 2] {
    [1.0, 1.0]
}

impl Default for FormationFile {
    fn default() -> Self {
        Self {
            phi_rad: 0.0,
            scale: unit_scale(),
            translation_m: [0.0, 0.0],
        }
    }
}

impl FormationFile {
    fn params(&self) -> FormationParams {
        FormationParams {
            phi: self.phi_rad,
            scale: Vec2::from(self.scale),
            translation: Vec2::from(self.translation_m),
        }
    }

    fn from_params(p: &FormationParams) -> Self {
        Self {
            phi_rad: p.phi,
            scale: [p.scale.x, p.scale.y],
            translation_m: [p.translation.x, p.translation.y],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RobotFile {
    base_m: [f64; 2],
    radius_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initial: Option<FormationFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    covariance: Vec<CovarianceKnotFile>,
}

/// `sigma_m2 = [xx, xy, yy]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CovarianceKnotFile {
    tick: u64,
    sigma_m2: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObstaclesFile {
    #[serde(default)]
    circles: Vec<CircleFile>,
    #[serde(default)]
    segments: Vec<SegmentFile>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CircleFile {
    center_m: [f64; 2],
    radius_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentFile {
    start_m: [f64; 2],
    end_m: [f64; 2],
}

/// `deta = [rad/s, 1/s, 1/s, m/s, m/s]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CommandFile {
    from_tick: u64,
    deta: [f64; 5],
}

impl ScenarioFile {
    fn into_scenario(self) -> Result<Scenario, ScenarioError> {
        if self.robots.is_empty() {
            return Err(ScenarioError::Invalid("scenario has no robots".into()));
        }
        let p = &self.planner;
        let first_radius = self.robots[0].radius_m;
        let config = PlannerConfig {
            lambda_stiffness: p.lambda_per_s,
            v_max: p.v_max_m_per_s,
            dt: p.dt_s,
            epsilon: p.epsilon_m,
            p_coll_bound: p.p_coll_bound,
            apf_strength: p.apf_strength_m3_per_s,
            apf_range: p.apf_range_m,
            robot_radius: first_radius,
            scale_min: p.scale_min,
        };
        let points: Vec<Vec2> = self.robots.iter().map(|r| Vec2::from(r.base_m)).collect();
        let base = recenter_base(&points)?;
        let shared = self.formation.params();
        let initial = self
            .robots
            .iter()
            .map(|r| r.initial.map_or(shared, |f| f.params()))
            .collect();
        let covariance = self
            .robots
            .iter()
            .map(|r| {
                if r.covariance.is_empty() {
                    Ok(CovarianceSchedule::zero())
                } else {
                    CovarianceSchedule::piecewise(
                        r.covariance
                            .iter()
                            .map(|k| {
                                let [xx, xy, yy] = k.sigma_m2;
                                (k.tick, Matrix2::new(xx, xy, xy, yy))
                            })
                            .collect(),
                    )
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let obstacles = ObstacleMap {
            circles: self
                .obstacles
                .circles
                .iter()
                .map(|c| Circle {
                    center: Vec2::from(c.center_m),
                    radius: c.radius_m,
                })
                .collect(),
            segments: self
                .obstacles
                .segments
                .iter()
                .map(|s| Segment {
                    start: Vec2::from(s.start_m),
                    end: Vec2::from(s.end_m),
                })
                .collect(),
        };
        let commands = CommandScript::new(
            self.commands
                .iter()
                .map(|c| (c.from_tick, Vec5::from(c.deta)))
                .collect(),
        );
        let scenario = Scenario {
            name: self.name,
            base,
            radii: self.robots.iter().map(|r| r.radius_m).collect(),
            initial,
            config,
            obstacles,
            covariance,
            commands,
            duration_ticks: self.duration_ticks,
            seed: self.seed,
            bus: self.bus,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    fn from_scenario(s: &Scenario) -> Self {
        let c = &s.config;
        Self {
            name: s.name.clone(),
            duration_ticks: s.duration_ticks,
            seed: s.seed,
            planner: PlannerFile {
                lambda_per_s: c.lambda_stiffness,
                v_max_m_per_s: c.v_max,
                dt_s: c.dt,
                epsilon_m: c.epsilon,
                p_coll_bound: c.p_coll_bound,
                apf_strength_m3_per_s: c.apf_strength,
                apf_range_m: c.apf_range,
                scale_min: c.scale_min,
            },
            formation: FormationFile::default(),
            robots: (0..s.len())
                .map(|i| RobotFile {
                    base_m: s.base.point(i).into(),
                    radius_m: s.radii[i],
                    initial: Some(FormationFile::from_params(&s.initial[i])),
                    covariance: s.covariance[i]
                        .knots()
                        .iter()
                        .map(|(tick, m)| CovarianceKnotFile {
                            tick: *tick,
                            sigma_m2: [m.m11, m.m12, m.m22],
                        })
                        .collect(),
                })
                .collect(),
            obstacles: ObstaclesFile {
                circles: s
                    .obstacles
                    .circles
                    .iter()
                    .map(|c| CircleFile {
                        center_m: c.center.into(),
                        radius_m: c.radius,
                    })
                    .collect(),
                segments: s
                    .obstacles
                    .segments
                    .iter()
                    .map(|g| SegmentFile {
                        start_m: g.start.into(),
                        end_m: g.end.into(),
                    })
                    .collect(),
            },
            commands: s
                .commands
                .segments()
                .iter()
                .map(|(from, d)| CommandFile {
                    from_tick: *from,
                    deta: (*d).into(),
                })
                .collect(),
            bus: s.bus,
        }
    }
}
