use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("base configuration is empty")]
    EmptyConfiguration,
    #[error("non-finite value in geometric input")]
    NonFinite,
    #[error("base points {first} and {second} coincide after recentering")]
    DuplicatePoints { first: usize, second: usize },
    #[error("scale {scale:?} not above floor {floor}")]
    ScaleBelowFloor { scale: [f64; 2], floor: f64 },
    #[error("jacobian gram matrix is singular (condition {condition:e})")]
    DegenerateJacobian { condition: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChanceError {
    #[error("collision probability bound {0} outside (0, 0.5]")]
    ProbabilityDomain(f64),
    #[error("robots {0} and {1} share a base point")]
    DegeneratePair(usize, usize),
    #[error("covariance is not symmetric positive semi-definite")]
    InvalidCovariance,
    #[error("linearization quadratic has no real root")]
    NoRealRoot,
    #[error("linearization quadratic is degenerate (leading coefficient {0:e})")]
    DegenerateLinearization(f64),
    #[error("mean distance vector is zero; hyperplane normal undefined")]
    UndefinedNormal,
    #[error("inputs have inconsistent lengths")]
    LengthMismatch,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("active-set solver did not converge within {0} iterations")]
    SolverStall(usize),
    #[error("non-finite value in projection problem")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlannerError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Chance(#[from] ChanceError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("snapshot has no entry for robot {0}")]
    StaleSnapshot(usize),
    #[error("desired position is inside an inflated obstacle (rho = {rho})")]
    InsideInflatedObstacle { rho: f64 },
    #[error("invalid planner configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("failed to read scenario {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("corridor of width {width} m cannot fit the formation (needs more than {required} m)")]
    Infeasible { width: f64, required: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Chance(#[from] ChanceError),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("simulation diverged at tick {tick}: {what}")]
    Diverged { tick: u64, what: String },
    #[error("planner for robot {robot} failed at tick {tick}: {source}")]
    Planner {
        tick: u64,
        robot: usize,
        #[source]
        source: PlannerError,
    },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}
