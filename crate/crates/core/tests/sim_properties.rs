use nalgebra::Matrix2;
use proptest::prelude::*;
use proptest::test_runner::RngSeed;
use vrb_formation::obstacles::{Circle, ObstacleMap};
use vrb_formation::planner::PlannerConfig;
use vrb_formation::sim::{
    run_scenario, BusPolicy, CommandScript, CovarianceSchedule, Scenario, PAIRS_CSV, ROBOTS_CSV,
    TICKS_CSV,
};
use vrb_formation::vrb::{recenter_base, FormationParams, Vec2, Vec5};

fn base_points() -> impl Strategy<Value = Vec<Vec2>> {
    prop::collection::vec((-2.0..2.0f64, -2.0..2.0f64), 2..6)
        .prop_map(|pts| {
            pts.into_iter()
                .map(|(x, y)| Vec2::new(x, y))
                .collect::<Vec<_>>()
        })
        .prop_filter("base points at least 1 m apart", |pts| {
            pts.iter()
                .enumerate()
                .all(|(i, a)| pts[i + 1..].iter().all(|b| (a - b).norm() >= 1.0))
        })
}

fn command() -> impl Strategy<Value = Vec5> {
    (
        -0.5..0.5f64,
        -0.5..0.5f64,
        -0.5..0.5f64,
        -1.0..1.0f64,
        -1.0..1.0f64,
    )
        .prop_map(|(a, b, c, d, e)| Vec5::from([a, b, c, d, e]))
}

fn script() -> impl Strategy<Value = CommandScript> {
    prop::collection::vec((0u64..150, command()), 1..4).prop_map(CommandScript::new)
}

fn obstacles() -> impl Strategy<Value = ObstacleMap> {
    prop::collection::vec((-6.0..6.0f64, -6.0..6.0f64, 0.2..1.0f64), 0..3).prop_map(|cs| {
        ObstacleMap {
            circles: cs
                .into_iter()
                .filter(|(x, y, r)| Vec2::new(*x, *y).norm() > r + 4.0)
                .map(|(x, y, r)| Circle {
                    center: Vec2::new(x, y),
                    radius: r,
                })
                .collect(),
            segments: vec![],
        }
    })
}

fn scenario(
    points: &[Vec2],
    commands: CommandScript,
    obstacles: ObstacleMap,
    seed: u64,
) -> Scenario {
    let n = points.len();
    Scenario {
        name: "random".into(),
        base: recenter_base(points).unwrap(),
        radii: vec![0.25; n],
        initial: vec![FormationParams::identity(); n],
        config: PlannerConfig::default(),
        obstacles,
        covariance: vec![CovarianceSchedule::zero(); n],
        commands,
        duration_ticks: 200,
        seed,
        bus: BusPolicy::default(),
    }
}

fn fixed(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        rng_seed: RngSeed::Fixed(0x5eed),
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(fixed(24))]

    #[test]
    fn noiseless_runs_never_collide(
        points in base_points(),
        commands in script(),
        obstacles in obstacles(),
    ) {
        let log = run_scenario(&scenario(&points, commands, obstacles, 1)).unwrap();
        prop_assert_eq!(log.ticks.len(), 200);
        for t in &log.ticks {
            prop_assert_eq!(t.collisions, 0, "tick {} min distance {}", t.tick, t.min_true_distance_m);
        }
    }

    #[test]
    fn logs_are_a_function_of_scenario_and_seed(
        points in base_points(),
        commands in script(),
        seed in any::<u64>(),
    ) {
        let mut s = scenario(&points, commands, ObstacleMap::default(), seed);
        s.covariance = vec![CovarianceSchedule::constant(Matrix2::new(0.01, 0.002, 0.002, 0.02)); points.len()];
        s.bus = BusPolicy { drop_probability: 0.2, delay_ticks: 1 };
        s.duration_ticks = 60;
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for dir in &dirs {
            run_scenario(&s).unwrap().write_csv(dir.path()).unwrap();
        }
        for name in [TICKS_CSV, ROBOTS_CSV, PAIRS_CSV] {
            let a = std::fs::read(dirs[0].path().join(name)).unwrap();
            let b = std::fs::read(dirs[1].path().join(name)).unwrap();
            prop_assert!(a == b, "{name} differs");
        }
    }
}

/// A static square at the pair bound: the fraction of ticks in which two
/// sampled belief means fall within `r_i + r_j + epsilon` stays within the
/// configured collision probability.
#[test]
fn static_formation_at_bound_respects_collision_probability() {
    let cfg = PlannerConfig::default();
    let sigma: f64 = 0.01;
    let xi = cfg.xi().unwrap();
    let bound = 0.25 + 0.25 + cfg.epsilon + xi * (2.0 * sigma).sqrt();
    let side = 2.0;
    let s = bound / side;
    let points = [
        Vec2::new(-1.0, -1.0),
        Vec2::new(1.0, -1.0),
        Vec2::new(-1.0, 1.0),
        Vec2::new(1.0, 1.0),
    ];
    let eta = FormationParams::new(0.0, Vec2::new(s, s), Vec2::zeros()).unwrap();
    let d = 0.25 + 0.25 + cfg.epsilon;
    let (mut hits, mut trials) = (0usize, 0usize);
    for seed in 0..500u64 {
        let mut sc = scenario(
            &points,
            CommandScript::default(),
            ObstacleMap::default(),
            seed,
        );
        sc.initial = vec![eta; 4];
        sc.covariance =
            vec![CovarianceSchedule::constant(Matrix2::from_diagonal_element(sigma)); 4];
        sc.duration_ticks = 40;
        let log = run_scenario(&sc).unwrap();
        for p in log
            .pairs
            .iter()
            .filter(|p| (p.bound_m - p.reference_distance_m).abs() < 1e-9)
        {
            trials += 1;
            if p.mean_distance_m <= d {
                hits += 1;
            }
        }
    }
    assert!(
        trials >= 500 * 40 * 4,
        "only {trials} pair samples at the bound"
    );
    let p_hat = hits as f64 / trials as f64;
    let stderr = (cfg.p_coll_bound * (1.0 - cfg.p_coll_bound) / trials as f64).sqrt();
    assert!(
        p_hat <= cfg.p_coll_bound + 3.0 * stderr,
        "empirical {p_hat} over {trials} samples"
    );
}
