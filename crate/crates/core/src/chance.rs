//! Chance-constrained inter-robot collision avoidance.
//!
//! The collision probability of a pair is upper bounded by a halfspace
//! integral, which turns into a minimum-distance inequality
//! `||mean_j - mean_i|| >= r_i + r_j + eps + xi * sqrt(lambda_max(Sigma_i + Sigma_j))`.
//! Written in terms of the formation scale this becomes the rotation-invariant
//! quadratic `s^T Gamma s >= gamma`, which each robot linearizes around its
//! current scale to obtain one halfspace per neighbor.

use nalgebra::{Matrix2, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::ChanceError;
use crate::normal;
use crate::vrb::{BaseConfiguration, Vec2};

const SYMMETRY_TOLERANCE: f64 = 1e-12;
const MIN_LEADING_COEFFICIENT: f64 = 1e-15;
const MIN_GAMMA_ENTRY: f64 = 1e-12;

/// Gaussian position estimate of one robot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionBelief {
    pub mean: Vec2,
    pub covariance: Matrix2<f64>,
}

impl PositionBelief {
    pub fn new(mean: Vec2, covariance: Matrix2<f64>) -> Result<Self, ChanceError> {
        check_covariance(&covariance)?;
        Ok(Self { mean, covariance })
    }

    /// Exact position, zero covariance.
    pub fn certain(mean: Vec2) -> Self {
        Self {
            mean,
            covariance: Matrix2::zeros(),
        }
    }

    pub fn max_eigenvalue(&self) -> f64 {
        symmetric_eigenvalues(&self.covariance).1
    }
}

/// Eigenvalues `(min, max)` of a symmetric 2x2 matrix, closed form.
pub fn symmetric_eigenvalues(m: &Matrix2<f64>) -> (f64, f64) {
    let mean = 0.5 * (m.m11 + m.m22);
    let half_diff = 0.5 * (m.m11 - m.m22);
    let radius = half_diff.hypot(m.m12);
    (mean - radius, mean + radius)
}

fn check_covariance(m: &Matrix2<f64>) -> Result<(), ChanceError> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(ChanceError::InvalidCovariance);
    }
    let scale = m.abs().max().max(1.0);
    if (m.m12 - m.m21).abs() > SYMMETRY_TOLERANCE * scale {
        return Err(ChanceError::InvalidCovariance);
    }
    let (min, _) = symmetric_eigenvalues(m);
    if min < -SYMMETRY_TOLERANCE * scale {
        return Err(ChanceError::InvalidCovariance);
    }
    Ok(())
}

/// Confidence multiplier for a per-pair collision probability bound.
///
/// The `+-xi sigma` interval has coverage `1 - 2 p`, i.e. `xi = Q(1 - p)`.
pub fn xi_from_pcoll(p_coll_bound: f64) -> Result<f64, ChanceError> {
    if !(p_coll_bound > 0.0 && p_coll_bound <= 0.5) {
        return Err(ChanceError::ProbabilityDomain(p_coll_bound));
    }
    Ok(normal::quantile(1.0 - p_coll_bound).max(0.0))
}

/// Lower bound on the mean inter-robot distance.
pub fn min_distance_bound(r_i: f64, r_j: f64, epsilon: f64, xi: f64, lambda_max: f64) -> f64 {
    r_i + r_j + epsilon + xi * lambda_max.max(0.0).sqrt()
}

/// `s^T Gamma s >= gamma` for one robot pair, `Gamma` diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairConstraintQuadratic {
    /// Diagonal of `Gamma_ij = diag(c_j - c_i)^2`.
    pub gamma_diagonal: Vec2,
    pub gamma_scalar: f64,
    pub pair: (usize, usize),
}

impl PairConstraintQuadratic {
    pub fn gamma_matrix(&self) -> Matrix2<f64> {
        Matrix2::from_diagonal(&self.gamma_diagonal)
    }

    /// `s^T Gamma s`.
    pub fn evaluate(&self, s: &Vec2) -> f64 {
        self.gamma_diagonal.dot(&s.component_mul(s))
    }

    pub fn is_satisfied(&self, s: &Vec2) -> bool {
        self.evaluate(s) >= self.gamma_scalar
    }
}

/// Builds the quadratic scale constraint for robots `i` and `j`.
#[allow(clippy::too_many_arguments)]
pub fn pair_quadratic(
    pair: (usize, usize),
    c_i: &Vec2,
    c_j: &Vec2,
    r_i: f64,
    r_j: f64,
    epsilon: f64,
    xi: f64,
    sigma_pair: &Matrix2<f64>,
) -> Result<PairConstraintQuadratic, ChanceError> {
    let delta = c_j - c_i;
    let gamma_diagonal = delta.component_mul(&delta);
    if gamma_diagonal.x < MIN_GAMMA_ENTRY && gamma_diagonal.y < MIN_GAMMA_ENTRY {
        return Err(ChanceError::DegeneratePair(pair.0, pair.1));
    }
    check_covariance(sigma_pair)?;
    let (_, lambda_max) = symmetric_eigenvalues(sigma_pair);
    let bound = min_distance_bound(r_i, r_j, epsilon, xi, lambda_max);
    Ok(PairConstraintQuadratic {
        gamma_diagonal,
        gamma_scalar: bound * bound,
        pair,
    })
}

/// One linear inequality `a^T s >= b` on the scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearRow {
    pub a: Vec2,
    pub b: f64,
}

impl LinearRow {
    pub fn slack(&self, s: &Vec2) -> f64 {
        self.a.dot(s) - self.b
    }
}

/// Result of linearizing a pair quadratic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linearization {
    pub row: LinearRow,
    /// Step length along `-Gamma s` from `s` to the quadratic boundary.
    pub alpha: f64,
}

/// Linearizes `s^T Gamma s >= gamma` around `s`.
///
/// `alpha` is the smaller root of
/// `(s^T G^3 s) alpha^2 - 2 (s^T G^2 s) alpha + (s^T G s - gamma) = 0`, so that
/// `s - alpha G s` lies on the quadratic boundary; the row passes through that
/// point with normal `G s`.
pub fn linearize(quad: &PairConstraintQuadratic, s: &Vec2) -> Result<Linearization, ChanceError> {
    let g = quad.gamma_diagonal;
    let s2 = s.component_mul(s);
    let sgs = g.dot(&s2);
    let sg2s = g.component_mul(&g).dot(&s2);
    let sg3s = g.component_mul(&g).component_mul(&g).dot(&s2);

    let lead = sg3s;
    if lead <= MIN_LEADING_COEFFICIENT {
        return Err(ChanceError::DegenerateLinearization(lead));
    }
    let constant = sgs - quad.gamma_scalar;
    let disc = 4.0 * sg2s * sg2s - 4.0 * lead * constant;
    if disc < 0.0 {
        return Err(ChanceError::NoRealRoot);
    }
    // Smaller root via the product of roots; avoids cancellation near the
    // boundary where `constant` is small.
    let larger = (2.0 * sg2s + disc.sqrt()) / (2.0 * lead);
    let alpha = constant / (lead * larger);

    Ok(Linearization {
        row: LinearRow {
            a: g.component_mul(s),
            b: sgs - alpha * sg2s,
        },
        alpha,
    })
}

/// Tangent row at the radial projection `s*` of `s` onto the quadratic
/// boundary: `a = Gamma s*`, `b = s*^T Gamma s*`.
pub fn radial_tangent(quad: &PairConstraintQuadratic, s: &Vec2) -> Result<LinearRow, ChanceError> {
    let sgs = quad.evaluate(s);
    if sgs <= MIN_LEADING_COEFFICIENT {
        return Err(ChanceError::DegenerateLinearization(sgs));
    }
    if quad.gamma_scalar <= 0.0 {
        return Ok(LinearRow {
            a: quad.gamma_diagonal.component_mul(s),
            b: 0.0,
        });
    }
    let projected = s * (quad.gamma_scalar / sgs).sqrt();
    Ok(LinearRow {
        a: quad.gamma_diagonal.component_mul(&projected),
        b: quad.evaluate(&projected),
    })
}

/// Row of a [`ScaleConstraintSet`], tagged with the neighbor it protects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRow {
    pub neighbor: usize,
    pub row: LinearRow,
    pub radial_fallback: bool,
}

/// Stacked halfspaces `A s >= b` for one robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleConstraintSet {
    pub rows: Vec<ConstraintRow>,
    pub linearization_point: Vec2,
}

impl ScaleConstraintSet {
    pub fn linear_rows(&self) -> Vec<LinearRow> {
        self.rows.iter().map(|r| r.row).collect()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Linearized constraints of robot `self_index` against every other robot.
///
/// Pairs whose linearization quadratic has no real root fall back to
/// [`radial_tangent`].
#[allow(clippy::too_many_arguments)]
pub fn assemble_constraints(
    s: &Vec2,
    beliefs: &[PositionBelief],
    base: &BaseConfiguration,
    radii: &[f64],
    epsilon: f64,
    xi: f64,
    self_index: usize,
) -> Result<ScaleConstraintSet, ChanceError> {
    let n = base.len();
    if beliefs.len() != n || radii.len() != n || self_index >= n {
        return Err(ChanceError::LengthMismatch);
    }
    let own = &beliefs[self_index];
    let c_i = base.point(self_index);
    let mut rows = Vec::with_capacity(n.saturating_sub(1));
    for j in (0..n).filter(|&j| j != self_index) {
        let sigma_pair = own.covariance + beliefs[j].covariance;
        let quad = pair_quadratic(
            (self_index, j),
            &c_i,
            &base.point(j),
            radii[self_index],
            radii[j],
            epsilon,
            xi,
            &sigma_pair,
        )?;
        let (row, radial_fallback) = match linearize(&quad, s) {
            Ok(lin) => (lin.row, false),
            Err(ChanceError::NoRealRoot) => (radial_tangent(&quad, s)?, true),
            Err(e) => return Err(e),
        };
        rows.push(ConstraintRow {
            neighbor: j,
            row,
            radial_fallback,
        });
    }
    Ok(ScaleConstraintSet {
        rows,
        linearization_point: *s,
    })
}

/// Monte-Carlo estimate of a probability with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub probability: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Fraction of sampled relative positions that fall within
/// `r_i + r_j + epsilon`. Deterministic for a fixed seed.
pub fn mc_collision_probability(
    belief_i: &PositionBelief,
    belief_j: &PositionBelief,
    r_i: f64,
    r_j: f64,
    epsilon: f64,
    samples: usize,
    rng_seed: u64,
) -> MonteCarloEstimate {
    let mean = belief_j.mean - belief_i.mean;
    let factor = covariance_factor(&(belief_i.covariance + belief_j.covariance));
    let radius = r_i + r_j + epsilon;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let hits = (0..samples)
        .filter(|_| {
            let z = Vec2::new(
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            );
            (mean + factor * z).norm() <= radius
        })
        .count();
    let n = samples.max(1) as f64;
    let p = hits as f64 / n;
    MonteCarloEstimate {
        probability: p,
        std_error: (p * (1.0 - p) / n).sqrt(),
        samples,
    }
}

/// `L` with `L L^T = sigma` for a symmetric PSD matrix, via eigendecomposition
/// so singular covariances are handled.
pub fn covariance_factor(sigma: &Matrix2<f64>) -> Matrix2<f64> {
    let eig = SymmetricEigen::new(*sigma);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    eig.eigenvectors * Matrix2::from_diagonal(&roots)
}

/// Halfspace upper bound on the collision probability:
/// `Phi((d - rho) / sigma)` with `rho` the mean distance and `sigma^2` the
/// variance of the relative position along the mean direction.
pub fn hyperplane_probability(
    belief_i: &PositionBelief,
    belief_j: &PositionBelief,
    r_i: f64,
    r_j: f64,
    epsilon: f64,
) -> Result<f64, ChanceError> {
    let mean = belief_j.mean - belief_i.mean;
    let rho = mean.norm();
    if rho == 0.0 || !rho.is_finite() {
        return Err(ChanceError::UndefinedNormal);
    }
    let normal_dir = mean / rho;
    let sigma_pair = belief_i.covariance + belief_j.covariance;
    let variance = normal_dir.dot(&(sigma_pair * normal_dir)).max(0.0);
    let d = r_i + r_j + epsilon;
    if variance == 0.0 {
        return Ok(if rho <= d { 1.0 } else { 0.0 });
    }
    Ok(normal::cdf((d - rho) / variance.sqrt()))
}
