use cabin_rps::scene::{build_a320_scene, SceneConfig};
use cabin_rps::visibility::{visibility_map, VisibilityParams};
use cabin_rps_web::{belief_layer, residual_histogram, visibility_layer};

#[test]
fn visibility_layer_covers_the_grid() {
    let high = visibility_layer(1, 1.12, 0.0).unwrap();
    assert_eq!(high.values().len(), high.nx() * high.ny());
    assert!(high.values().iter().all(|v| *v == 1.0), "all LOS above the seats");
    let low = visibility_layer(1, 0.70, 6.0).unwrap();
    assert!(low.est_x().is_nan());
    // same states as the full map for that anchor
    let scene = build_a320_scene(&SceneConfig::default()).unwrap();
    let params = VisibilityParams { olos_nlos_threshold: Some(6.0), ..Default::default() };
    let map = visibility_map(&scene, 0.70, &params).unwrap();
    let expected: Vec<f64> = map.states[0].iter().map(|s| s.code() as f64).collect();
    assert_eq!(low.values(), expected);
}

#[test]
fn threshold_only_turns_olos_into_nlos() {
    let off = visibility_layer(3, 0.70, 0.0).unwrap().values();
    let on = visibility_layer(3, 0.70, 6.0).unwrap().values();
    let changed: Vec<_> = off.iter().zip(&on).filter(|(a, b)| a != b).collect();
    assert!(!changed.is_empty());
    assert!(changed.iter().all(|(a, b)| **a == 2.0 && **b == 3.0));
}

#[test]
fn bad_inputs_are_errors() {
    assert!(visibility_layer(9, 1.12, 0.0).is_err());
    assert!(visibility_layer(1, 0.9, 0.0).is_err());
    assert!(residual_histogram(0, 5.0, 10, 1).is_err());
    assert!(belief_layer(0.0, 50.0, 1.12, 1).is_err());
}

#[test]
fn residuals_center_on_zero_for_los() {
    let h = residual_histogram(1, 5.0, 20_000, 7).unwrap();
    let counts = h.counts();
    let total: u32 = counts.iter().sum();
    assert_eq!(total + h.failures(), 20_000);
    let peak = counts.iter().enumerate().max_by_key(|(_, c)| **c).unwrap().0;
    let center = h.lo() + (peak as f64 + 0.5) * h.width();
    assert!(center.abs() < 0.15, "peak at {center}");
    // NLOS errors are positive biases
    let n = residual_histogram(3, 5.0, 20_000, 7).unwrap();
    let below: u32 = n.counts()[..50].iter().sum();
    assert!(below <= n.outliers());
}

#[test]
fn belief_is_a_distribution_near_the_tag() {
    let b = belief_layer(0.0, 20.0, 1.12, 3).unwrap();
    let mass: f64 = b.values().iter().sum();
    assert!((mass - 1.0).abs() < 1e-9);
    assert!(b.valid() > 0);
    let err = (b.est_x() - 0.0).hypot(b.est_y() - 20.0);
    assert!(err < 1.0, "estimate ({}, {})", b.est_x(), b.est_y());
    assert_eq!(belief_layer(0.0, 20.0, 1.12, 3).unwrap(), b);
}
