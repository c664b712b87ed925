use nalgebra::Matrix2;
use proptest::prelude::*;
use vrb_formation::chance::{
    hyperplane_probability, linearize, mc_collision_probability, min_distance_bound,
    pair_quadratic, radial_tangent, symmetric_eigenvalues, PairConstraintQuadratic, PositionBelief,
};
use vrb_formation::vrb::{transform_point, FormationParams, Vec2};
use vrb_formation::ChanceError;

fn covariance() -> impl Strategy<Value = Matrix2<f64>> {
    (0.0..0.05f64, 0.0..0.05f64, -1.0..1.0f64).prop_map(|(a, b, rho)| {
        let xy = rho * (a * b).sqrt();
        Matrix2::new(a, xy, xy, b)
    })
}

fn base_offset() -> impl Strategy<Value = Vec2> {
    (-3.0..3.0f64, -3.0..3.0f64)
        .prop_filter("distinct base points", |(x, y)| {
            x.abs() > 0.05 || y.abs() > 0.05
        })
        .prop_map(|(x, y)| Vec2::new(x, y))
}

fn quadratic() -> impl Strategy<Value = PairConstraintQuadratic> {
    (
        base_offset(),
        0.05..0.5f64,
        0.05..0.5f64,
        0.0..0.2f64,
        covariance(),
    )
        .prop_map(|(d, ri, rj, eps, sigma)| {
            pair_quadratic((0, 1), &Vec2::zeros(), &d, ri, rj, eps, 3.0, &sigma).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn linearization_is_inner_on_segment_to_boundary(
        quad in quadratic(),
        s in (0.01..4.0f64, 0.01..4.0f64),
        ts in prop::collection::vec(0.0..=1.0f64, 16),
    ) {
        let s = Vec2::new(s.0, s.1);
        prop_assume!(quad.is_satisfied(&s));
        let tol = 1e-9 * quad.gamma_scalar.max(1.0);
        let (row, boundary) = match linearize(&quad, &s) {
            Ok(lin) => (lin.row, s - lin.alpha * quad.gamma_diagonal.component_mul(&s)),
            Err(ChanceError::NoRealRoot) => {
                // The ray along -Gamma s misses the boundary; the tangent at
                // the radial projection is used instead.
                let row = radial_tangent(&quad, &s).unwrap();
                (row, s * (quad.gamma_scalar / quad.evaluate(&s)).sqrt())
            }
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        prop_assert!((quad.evaluate(&boundary) - quad.gamma_scalar).abs() < tol);
        prop_assert!(row.slack(&boundary).abs() < tol);
        for t in ts {
            let x = s + (boundary - s) * t;
            if row.slack(&x) >= 0.0 {
                prop_assert!(quad.evaluate(&x) >= quad.gamma_scalar - tol);
            }
        }
    }

    #[test]
    fn pair_quadratic_ignores_rotation(
        d in base_offset(),
        sigma in covariance(),
        phi in -10.0..10.0f64,
        s in (0.1..3.0f64, 0.1..3.0f64),
    ) {
        let plain = pair_quadratic((0, 1), &Vec2::zeros(), &d, 0.25, 0.25, 0.1, 3.0, &sigma).unwrap();
        // Rotating the formation moves the mean difference but not the base offset.
        let eta = FormationParams { phi, scale: Vec2::new(s.0, s.1), translation: Vec2::zeros() };
        let rotated_mean = transform_point(&eta, &d) - transform_point(&eta, &Vec2::zeros());
        let eta0 = FormationParams { phi: 0.0, ..eta };
        let plain_mean = transform_point(&eta0, &d);
        prop_assert!((rotated_mean.norm() - plain_mean.norm()).abs() < 1e-9);
        let realized = rotated_mean.norm_squared();
        prop_assert!((realized - plain.evaluate(&eta.scale)).abs() < 1e-9 * (1.0 + realized));
    }

    #[test]
    fn feasible_scale_implies_mean_distance_bound(
        d in base_offset(),
        sigma in covariance(),
        phi in -10.0..10.0f64,
        s in (0.01..4.0f64, 0.01..4.0f64),
        t in (-5.0..5.0f64, -5.0..5.0f64),
    ) {
        let quad = pair_quadratic((0, 1), &Vec2::zeros(), &d, 0.25, 0.3, 0.1, 3.0, &sigma).unwrap();
        let eta = FormationParams {
            phi,
            scale: Vec2::new(s.0, s.1),
            translation: Vec2::new(t.0, t.1),
        };
        let distance = (transform_point(&eta, &d) - transform_point(&eta, &Vec2::zeros())).norm();
        // ||R S (c_j - c_i)||^2 = s^T Gamma s exactly.
        prop_assert!((distance * distance - quad.evaluate(&eta.scale)).abs() < 1e-9 * (1.0 + distance * distance));
        let (_, lambda) = symmetric_eigenvalues(&sigma);
        let bound = min_distance_bound(0.25, 0.3, 0.1, 3.0, lambda);
        if quad.evaluate(&eta.scale) >= quad.gamma_scalar {
            prop_assert!(distance >= bound - 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hyperplane_bounds_ball_probability(
        mean in (-1.5..1.5f64, -1.5..1.5f64),
        sigma_i in covariance(),
        sigma_j in covariance(),
        radii in (0.05..0.3f64, 0.05..0.3f64),
        seed in any::<u64>(),
    ) {
        let mean = Vec2::new(mean.0, mean.1);
        prop_assume!(mean.norm() > 1e-3);
        let bi = PositionBelief::new(Vec2::zeros(), sigma_i).unwrap();
        let bj = PositionBelief::new(mean, sigma_j).unwrap();
        let bound = hyperplane_probability(&bi, &bj, radii.0, radii.1, 0.1).unwrap();
        let mc = mc_collision_probability(&bi, &bj, radii.0, radii.1, 0.1, 20_000, seed);
        prop_assert!(bound >= mc.probability - 3.0 * mc.std_error - 1e-12,
            "bound {bound} mc {} +- {}", mc.probability, mc.std_error);
    }
}
