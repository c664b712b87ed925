use proptest::prelude::*;
use vrb_formation::vrb::{
    jacobian, pseudo_inverse, recenter_base, transform_point, FormationParams, JacobianMatrix,
    Vec2, Vec5,
};

fn params() -> impl Strategy<Value = FormationParams> {
    (
        -10.0..10.0f64,
        0.01..10.0f64,
        0.01..10.0f64,
        -10.0..10.0f64,
        -10.0..10.0f64,
    )
        .prop_map(|(phi, sx, sy, tx, ty)| FormationParams {
            phi,
            scale: Vec2::new(sx, sy),
            translation: Vec2::new(tx, ty),
        })
}

fn point() -> impl Strategy<Value = Vec2> {
    (-10.0..10.0f64, -10.0..10.0f64).prop_map(|(x, y)| Vec2::new(x, y))
}

fn finite_difference(eta: &FormationParams, c: &Vec2) -> JacobianMatrix {
    let h = 1e-6;
    let base = eta.as_vector();
    let mut fd = JacobianMatrix::zeros();
    for k in 0..5 {
        let mut plus = base;
        let mut minus = base;
        plus[k] += h;
        minus[k] -= h;
        let d = (transform_point(&FormationParams::from_vector(&plus), c)
            - transform_point(&FormationParams::from_vector(&minus), c))
            / (2.0 * h);
        fd.set_column(k, &d);
    }
    fd
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn jacobian_matches_finite_differences(eta in params(), c in point()) {
        let analytic = jacobian(&eta, &c);
        let fd = finite_difference(&eta, &c);
        let scale = analytic.abs().max().max(1.0);
        let err = (analytic - fd).abs().max() / scale;
        prop_assert!(err < 1e-5, "relative error {err:e}");
    }

    #[test]
    fn moore_penrose_conditions(eta in params(), c in point()) {
        let j = jacobian(&eta, &c);
        let jp = pseudo_inverse(&j).unwrap();
        let tol = 1e-8;
        prop_assert!((j * jp * j - j).abs().max() < tol * j.abs().max().max(1.0));
        prop_assert!((jp * j * jp - jp).abs().max() < tol * jp.abs().max().max(1.0));
        let jjp = j * jp;
        prop_assert!((jjp - jjp.transpose()).abs().max() < tol);
        let jpj = jp * j;
        prop_assert!((jpj - jpj.transpose()).abs().max() < tol);
    }

    #[test]
    fn transform_is_linear_in_base_point(eta in params(), a in point(), b in point(), k in -5.0..5.0f64) {
        let lhs = transform_point(&eta, &(a * k + b)) - eta.translation;
        let rhs = (transform_point(&eta, &a) - eta.translation) * k
            + (transform_point(&eta, &b) - eta.translation);
        prop_assert!((lhs - rhs).norm() < 1e-9 * (1.0 + rhs.norm()));
    }

    #[test]
    fn transform_is_linear_in_scale_and_translation(
        eta in params(),
        c in point(),
        d in (-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64),
    ) {
        let step = Vec5::from([0.0, d.0, d.1, d.2, d.3]);
        let moved = FormationParams::from_vector(&(eta.as_vector() + step));
        let j = jacobian(&eta, &c);
        let expected = transform_point(&eta, &c) + j * step;
        prop_assert!((transform_point(&moved, &c) - expected).norm() < 1e-9 * (1.0 + expected.norm()));
    }

    #[test]
    fn recenter_is_idempotent(points in prop::collection::vec(point(), 1..8)) {
        let Ok(once) = recenter_base(&points) else {
            return Ok(());
        };
        let twice = recenter_base(once.points()).unwrap();
        for (a, b) in once.points().iter().zip(twice.points()) {
            prop_assert!((a - b).norm() < 1e-12);
        }
        let centroid: Vec2 = twice.points().iter().sum::<Vec2>() / twice.len() as f64;
        prop_assert!(centroid.norm() < 1e-12);
    }
}
