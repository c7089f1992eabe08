mod common;

use cabin_rps::gridfilter::{predict, update, Belief, GridFilter, LikelihoodModel, MotionModel, StateGrid, UpdateStatus};
use cabin_rps::ranging::RangeObservation;
use cabin_rps::scene::{Anchor, GridSpec, Point3};
use proptest::prelude::*;

fn small_grid(x0: f64, y0: f64, res: f64, nx: usize, ny: usize) -> StateGrid {
    let spec = GridSpec {
        origin: Point3::new(x0, y0, 0.0),
        resolution: res,
        nx,
        ny,
        heights: vec![1.0],
    };
    StateGrid::from_spec(&spec, 1.0)
}

fn anchors() -> Vec<Anchor> {
    vec![
        Anchor { id: 1, position: Point3::new(-5.0, 0.0, 1.0) },
        Anchor { id: 2, position: Point3::new(0.0, -5.0, 1.0) },
        Anchor { id: 3, position: Point3::new(4.0, 6.0, 2.0) },
    ]
}

fn belief_from(raw: &[f64]) -> Belief {
    let total: f64 = raw.iter().sum();
    Belief { p: raw.iter().map(|v| v / total).collect() }
}

fn grid_and_prior() -> impl Strategy<Value = (StateGrid, Belief)> {
    (1usize..=20, 1usize..=20, 0.05..0.5f64).prop_flat_map(|(nx, ny, res)| {
        prop::collection::vec(0.01..1.0f64, nx * ny)
            .prop_map(move |raw| (small_grid(-1.0, -1.0, res, nx, ny), belief_from(&raw)))
    })
}

fn observations() -> impl Strategy<Value = Vec<RangeObservation>> {
    prop::collection::vec((1u8..=3, prop::option::weighted(0.8, 0.0..12.0f64)), 0..6)
        .prop_map(|v| v.into_iter().map(|(anchor_id, range)| RangeObservation { anchor_id, range }).collect())
}

fn likelihood() -> impl Strategy<Value = LikelihoodModel> {
    (0.05..1.0f64, 0.0..0.5f64, 5.0..40.0f64).prop_map(|(sigma_l, w_robust, dmax)| LikelihoodModel { sigma_l, w_robust, dmax })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn update_matches_brute_force((grid, prior) in grid_and_prior(), obs in observations(), lm in likelihood()) {
        let anchors = anchors();
        let out = update(&prior, &obs, &anchors, &grid, &lm).unwrap();
        let cached = GridFilter::new(grid.clone(), anchors.clone(), MotionModel::Identity, lm.clone())
            .unwrap()
            .update(&prior, &obs)
            .unwrap();
        prop_assert_eq!(&out, &cached);
        if obs.iter().all(|o| o.range.is_none()) {
            prop_assert_eq!(out.status, UpdateStatus::NoUpdate);
            prop_assert_eq!(&out.belief, &prior);
        } else {
            prop_assert_eq!(out.status, UpdateStatus::Updated);
            let expected = common::brute_force_update(&prior, &obs, &anchors, &grid, &lm);
            prop_assert_eq!(&out.belief.p, &expected);
        }
    }

    #[test]
    fn mass_is_conserved_every_step(
        (grid, _prior) in grid_and_prior(),
        epochs in prop::collection::vec(observations(), 1..8),
        lm in likelihood(),
        std in 0.05..1.0f64,
        cap in 0.0..1.5f64,
    ) {
        let filter = GridFilter::new(grid, anchors(), MotionModel::Gaussian { std, cap }, lm).unwrap();
        for step in filter.run(&epochs).unwrap() {
            prop_assert!((step.belief.mass() - 1.0).abs() < 1e-9);
            prop_assert!(step.belief.p.iter().all(|p| *p >= 0.0));
            prop_assert_eq!(step.max_mass, step.belief.p[step.belief.argmax()]);
        }
    }

    #[test]
    fn predict_matches_direct_convolution((grid, prior) in grid_and_prior(), std in 0.05..1.0f64, cap in 0.0..1.5f64) {
        let got = predict(&prior, &MotionModel::Gaussian { std, cap }, &grid).unwrap();
        let expected = common::brute_force_predict(&prior, &grid, std, cap);
        for (g, e) in got.p.iter().zip(&expected) {
            prop_assert!((g - e).abs() <= 1e-12, "{} vs {}", g, e);
        }
        prop_assert!((got.mass() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn argmax_ignores_likelihood_scale((grid, prior) in grid_and_prior(), obs in observations(), lm in likelihood(), c in 0.01..100.0f64) {
        let anchors = anchors();
        let out = update(&prior, &obs, &anchors, &grid, &lm).unwrap();
        // every factor multiplied by the same constant
        let weights: Vec<f64> = grid.cells.iter().zip(&prior.p).map(|(cell, &p)| {
            obs.iter().filter_map(|o| o.range.map(|r| (o.anchor_id, r))).fold(p, |acc, (id, r)| {
                let a = anchors.iter().find(|a| a.id == id).unwrap();
                acc * c * lm.factor(r, a.position.distance(cell))
            })
        }).collect();
        let scaled = belief_from(&weights);
        let best = out.belief.p[out.belief.argmax()];
        // ties may resolve either way; the scaled winner must be a maximum
        prop_assert!(out.belief.p[scaled.argmax()] >= best * (1.0 - 1e-9));
        for (x, y) in out.belief.p.iter().zip(&scaled.p) {
            prop_assert!((x - y).abs() <= 1e-9 * x.max(*y) + 1e-300);
        }
    }

    #[test]
    fn identity_motion_keeps_the_prior((grid, prior) in grid_and_prior()) {
        prop_assert_eq!(predict(&prior, &MotionModel::Identity, &grid).unwrap(), prior);
    }
}

#[test]
fn noiseless_two_anchor_fix_lands_within_half_diagonal() {
    let res = 0.1;
    let grid = small_grid(-1.0, -1.0, res, 20, 20);
    let anchors = vec![
        Anchor { id: 1, position: Point3::new(-5.0, 0.0, 1.0) },
        Anchor { id: 2, position: Point3::new(0.0, -5.0, 1.0) },
    ];
    let lm = LikelihoodModel { sigma_l: 0.05, w_robust: 0.0, dmax: 30.0 };
    let filter = GridFilter::new(grid, anchors.clone(), MotionModel::Identity, lm).unwrap();
    for &(x, y) in &[(0.0, 0.0), (0.33, -0.41), (-0.87, 0.72), (0.95, 0.95), (-0.12, 0.5)] {
        let truth = Point3::new(x, y, 1.0);
        let obs: Vec<RangeObservation> = anchors
            .iter()
            .map(|a| RangeObservation { anchor_id: a.id, range: Some(a.position.distance(&truth)) })
            .collect();
        let est = filter.run(&[obs]).unwrap().pop().unwrap();
        let err = est.estimate.distance(&truth);
        assert!(err <= res / 2f64.sqrt() + 1e-12, "truth ({x}, {y}) estimate {} error {err}", est.estimate);
    }
}

#[test]
fn unknown_anchor_is_rejected_and_keeps_prediction() {
    let grid = small_grid(-1.0, -1.0, 0.1, 5, 5);
    let filter = GridFilter::new(grid, anchors(), MotionModel::Identity, LikelihoodModel::default()).unwrap();
    let prior = filter.init();
    let step = filter.step(&prior, &[RangeObservation { anchor_id: 9, range: Some(1.0) }]).unwrap();
    assert_eq!(step.status, UpdateStatus::Rejected);
    assert_eq!(step.belief, prior);
}
