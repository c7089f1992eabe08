//! Stochastic two-way-ranging measurements conditioned on visibility.
//!
//! A measurement attempt at true distance `d` fails when a uniform draw
//! `p <= d / dmax`. A surviving measurement is an outlier with probability
//! `p_out` (error uniform over `[-d, dmax - d]`); otherwise its error follows
//! the visibility state: `N(0, sigma_r^2)` for LOS, `N(0, 2 sigma_r^2)` for
//! OLOS and a log-normal bias for NLOS.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{Point3, Scene};
use crate::visibility::VisibilityState;

#[derive(Debug, Error, PartialEq)]
pub enum RangingError {
    #[error("invalid ranging parameters: {0}")]
    Params(String),
    #[error("cannot sample a ranging error for a non-receivable link")]
    NotReceivable,
    #[error("true distance must be finite and non-negative, got {0}")]
    NegativeDistance(f64),
    #[error("expected {expected} visibility states (one per anchor), got {got}")]
    StateCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RangingParams {
    /// Standard deviation of the LOS noise (m).
    pub sigma_r: f64,
    /// Empirical maximum range (m).
    pub dmax: f64,
    /// Location of the NLOS log-normal (mean of the underlying normal).
    pub ln_location: f64,
    /// Scale of the NLOS log-normal (variance of the underlying normal).
    pub ln_scale: f64,
    /// Outlier probability of a received measurement.
    pub p_out: f64,
}

impl Default for RangingParams {
    fn default() -> Self {
        Self {
            sigma_r: 0.10,
            dmax: 30.0,
            ln_location: -1.0,
            ln_scale: 0.5,
            p_out: 0.02,
        }
    }
}

impl RangingParams {
    pub fn validate(&self) -> Result<(), RangingError> {
        let fail = |m: &str| Err(RangingError::Params(m.to_string()));
        if !(self.sigma_r.is_finite() && self.sigma_r > 0.0) {
            return fail("sigma_r must be positive");
        }
        if !(self.dmax.is_finite() && self.dmax > 0.0) {
            return fail("dmax must be positive");
        }
        if !(self.ln_scale.is_finite() && self.ln_scale > 0.0) {
            return fail("ln_scale must be positive");
        }
        if !self.ln_location.is_finite() {
            return fail("ln_location must be finite");
        }
        if !(0.0..1.0).contains(&self.p_out) {
            return fail("p_out must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Identifies one independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub scenario: u8,
    pub epoch: u64,
    pub tag: u64,
    pub anchor: u8,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl StreamKey {
    fn digest(&self) -> u64 {
        let mut h = splitmix64(self.scenario as u64);
        for word in [self.epoch, self.tag, self.anchor as u64] {
            h = splitmix64(h ^ word);
        }
        h
    }
}

/// Counter-based random stream: the draws depend only on `(seed, key)`, never
/// on which thread or in which order streams are consumed.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, key: StreamKey) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(key.digest());
        Self { rng }
    }

    /// Stream for ad-hoc use (tests, demos) keyed by a single integer.
    pub fn from_seed(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

pub fn true_distance(xa: &Point3, xref: &Point3) -> f64 {
    xa.distance(xref)
}

/// One draw of the state-dependent ranging error.
pub fn sample_error(
    state: VisibilityState,
    params: &RangingParams,
    rng: &mut RngStream,
) -> Result<f64, RangingError> {
    let r = rng.rng();
    Ok(match state {
        VisibilityState::Los => Normal::new(0.0, params.sigma_r)
            .map_err(|e| RangingError::Params(e.to_string()))?
            .sample(r),
        VisibilityState::Olos => Normal::new(0.0, std::f64::consts::SQRT_2 * params.sigma_r)
            .map_err(|e| RangingError::Params(e.to_string()))?
            .sample(r),
        VisibilityState::Nlos => LogNormal::new(params.ln_location, params.ln_scale.sqrt())
            .map_err(|e| RangingError::Params(e.to_string()))?
            .sample(r),
        VisibilityState::NotReceivable => return Err(RangingError::NotReceivable),
    })
}

/// Result of one ranging attempt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RangeOutcome {
    Failure,
    Measured { value: f64, outlier: bool },
}

impl RangeOutcome {
    pub fn value(&self) -> Option<f64> {
        match *self {
            RangeOutcome::Failure => None,
            RangeOutcome::Measured { value, .. } => Some(value),
        }
    }
}

/// One ranging attempt at true distance `d`.
///
/// Gate order: not receivable, distance-dependent failure, outlier, state
/// noise. Each gate consumes its draws whether or not later gates run, so the
/// stream layout does not depend on the outcome.
pub fn sample_range(
    d: f64,
    state: VisibilityState,
    params: &RangingParams,
    rng: &mut RngStream,
) -> Result<RangeOutcome, RangingError> {
    if !(d.is_finite() && d >= 0.0) {
        return Err(RangingError::NegativeDistance(d));
    }
    if state == VisibilityState::NotReceivable {
        return Ok(RangeOutcome::Failure);
    }
    let p = rng.uniform();
    if p <= d / params.dmax {
        return Ok(RangeOutcome::Failure);
    }
    let q = rng.uniform();
    if q < params.p_out {
        let eps = Uniform::new_inclusive(-d, params.dmax - d)
            .map_err(|e| RangingError::Params(e.to_string()))?
            .sample(rng.rng());
        return Ok(RangeOutcome::Measured {
            value: d + eps,
            outlier: true,
        });
    }
    let eps = sample_error(state, params, rng)?;
    // a round-trip time is never negative
    Ok(RangeOutcome::Measured {
        value: (d + eps).max(0.0),
        outlier: false,
    })
}

/// One simulated measurement between an anchor and a tag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeSample {
    pub anchor_id: u8,
    pub epoch: u64,
    pub tag_id: u64,
    pub true_distance: f64,
    pub state: VisibilityState,
    /// `None` marks a measurement failure.
    pub value: Option<f64>,
    pub outlier: bool,
}

impl RangeSample {
    pub fn residual(&self) -> Option<f64> {
        self.value.map(|v| v - self.true_distance)
    }

    pub fn observation(&self) -> RangeObservation {
        RangeObservation {
            anchor_id: self.anchor_id,
            range: self.value,
        }
    }
}

/// What the positioning stage sees of a measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeObservation {
    pub anchor_id: u8,
    pub range: Option<f64>,
}

/// Identifies the epoch being sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochKey {
    pub seed: u64,
    pub scenario: u8,
    pub epoch: u64,
    pub tag_id: u64,
}

/// One attempt per anchor of the scene; `states` is in scene anchor order.
pub fn sample_epoch(
    scene: &Scene,
    tag: Point3,
    states: &[VisibilityState],
    params: &RangingParams,
    key: EpochKey,
) -> Result<Vec<RangeSample>, RangingError> {
    if states.len() != scene.anchors.len() {
        return Err(RangingError::StateCount {
            expected: scene.anchors.len(),
            got: states.len(),
        });
    }
    scene
        .anchors
        .iter()
        .zip(states)
        .map(|(anchor, &state)| {
            let mut rng = RngStream::new(
                key.seed,
                StreamKey {
                    scenario: key.scenario,
                    epoch: key.epoch,
                    tag: key.tag_id,
                    anchor: anchor.id,
                },
            );
            let d = true_distance(&anchor.position, &tag);
            let outcome = sample_range(d, state, params, &mut rng)?;
            let (value, outlier) = match outcome {
                RangeOutcome::Failure => (None, false),
                RangeOutcome::Measured { value, outlier } => (Some(value), outlier),
            };
            Ok(RangeSample {
                anchor_id: anchor.id,
                epoch: key.epoch,
                tag_id: key.tag_id,
                true_distance: d,
                state,
                value,
                outlier,
            })
        })
        .collect()
}

/// Fixed-width histogram; values outside `[lo, hi]` are clipped into the edge
/// bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        assert!(hi > lo && bins > 0, "empty histogram range");
        Self {
            lo,
            hi,
            counts: vec![0; bins],
        }
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn add(&mut self, value: f64) {
        let v = value.clamp(self.lo, self.hi);
        let n = self.counts.len();
        let idx = (((v - self.lo) / self.bin_width()) as usize).min(n - 1);
        self.counts[idx] += 1;
    }

    pub fn edges(&self, bin: usize) -> (f64, f64) {
        let w = self.bin_width();
        (self.lo + bin as f64 * w, self.lo + (bin + 1) as f64 * w)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Residual clip range used for exported histograms (m).
pub const RESIDUAL_CLIP: (f64, f64) = (-5.0, 15.0);

/// Measurement bookkeeping over a batch of samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RangingCounts {
    pub total: u64,
    pub valid: u64,
    pub outliers: u64,
    /// Valid, non-outlier measurements with a residual inside the clip range.
    pub depicted: u64,
    /// Attempts per visibility code 0..=3.
    pub per_state: [u64; 4],
}

impl RangingCounts {
    pub fn add(&mut self, s: &RangeSample) {
        self.total += 1;
        self.per_state[s.state.code() as usize] += 1;
        if let Some(r) = s.residual() {
            self.valid += 1;
            if s.outlier {
                self.outliers += 1;
            } else if (RESIDUAL_CLIP.0..=RESIDUAL_CLIP.1).contains(&r) {
                self.depicted += 1;
            }
        }
    }

    pub fn valid_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.valid as f64 / self.total as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{build_a320_scene, SceneConfig};

    fn moments(xs: &[f64]) -> (f64, f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let skew = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n / var.powf(1.5);
        (mean, var, skew)
    }

    fn draws(state: VisibilityState, n: usize, seed: u64) -> Vec<f64> {
        let params = RangingParams::default();
        let mut rng = RngStream::from_seed(seed);
        (0..n).map(|_| sample_error(state, &params, &mut rng).unwrap()).collect()
    }

    #[test]
    fn distance_examples() {
        assert_eq!(true_distance(&Point3::new(0.0, 0.0, 0.0), &Point3::new(3.0, 4.0, 0.0)), 5.0);
        let p = Point3::new(1.0, 2.0, 3.0);
        assert_eq!(true_distance(&p, &p), 0.0);
        let a1 = Point3::new(-1.36, 11.11, 1.50);
        let a2 = Point3::new(1.37, 13.77, 1.50);
        // sqrt(2.73^2 + 2.66^2)
        assert!((true_distance(&a1, &a2) - 3.811_626_949).abs() < 1e-8);
    }

    #[test]
    fn los_moments() {
        let xs = draws(VisibilityState::Los, 1_000_000, 1);
        let (mean, var, _) = moments(&xs);
        let s = RangingParams::default().sigma_r;
        assert!(mean.abs() < 4.0 * s / 1000.0, "mean {mean}");
        assert!((var / (s * s) - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn olos_variance_doubles() {
        let xs = draws(VisibilityState::Olos, 1_000_000, 2);
        let (_, var, _) = moments(&xs);
        let s = RangingParams::default().sigma_r;
        assert!((var / (2.0 * s * s) - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn nlos_positive_and_right_skewed() {
        let xs = draws(VisibilityState::Nlos, 100_000, 3);
        assert!(xs.iter().all(|&x| x > 0.0));
        let (_, _, skew) = moments(&xs);
        assert!(skew > 0.0);
        let mut sorted = xs.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        assert!((median - (-1.0_f64).exp()).abs() < 0.01, "median {median}");
    }

    #[test]
    fn not_receivable_has_no_error_model() {
        let mut rng = RngStream::from_seed(0);
        assert_eq!(
            sample_error(VisibilityState::NotReceivable, &RangingParams::default(), &mut rng),
            Err(RangingError::NotReceivable)
        );
        assert_eq!(
            sample_range(3.0, VisibilityState::NotReceivable, &RangingParams::default(), &mut rng),
            Ok(RangeOutcome::Failure)
        );
    }

    #[test]
    fn beyond_dmax_always_fails() {
        let params = RangingParams::default();
        let mut rng = RngStream::from_seed(4);
        for d in [params.dmax, params.dmax + 0.1, 50.0] {
            for _ in 0..10_000 {
                assert_eq!(
                    sample_range(d, VisibilityState::Los, &params, &mut rng).unwrap(),
                    RangeOutcome::Failure
                );
            }
        }
    }

    #[test]
    fn negative_distance_rejected() {
        let mut rng = RngStream::from_seed(0);
        assert_eq!(
            sample_range(-1.0, VisibilityState::Los, &RangingParams::default(), &mut rng),
            Err(RangingError::NegativeDistance(-1.0))
        );
    }

    #[test]
    fn outliers_stay_in_measurable_domain() {
        let params = RangingParams {
            p_out: 0.9,
            ..Default::default()
        };
        let mut rng = RngStream::from_seed(5);
        let mut seen = 0;
        for i in 0..50_000 {
            let d = (i % 290) as f64 * 0.1;
            if let RangeOutcome::Measured { value, outlier: true } =
                sample_range(d, VisibilityState::Nlos, &params, &mut rng).unwrap()
            {
                assert!((0.0..=params.dmax).contains(&value), "{value}");
                seen += 1;
            }
        }
        assert!(seen > 10_000);
    }

    #[test]
    fn success_rate_follows_distance() {
        let params = RangingParams::default();
        let mut rng = RngStream::from_seed(6);
        let (mut ok, mut total) = (0u64, 0u64);
        while ok < 100_000 {
            total += 1;
            if sample_range(5.0, VisibilityState::Los, &params, &mut rng)
                .unwrap()
                .value()
                .is_some()
            {
                ok += 1;
            }
        }
        let rate = ok as f64 / total as f64;
        let expected = 1.0 - 5.0 / params.dmax;
        assert!((rate - expected).abs() < 0.01, "{rate} vs {expected}");
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let key = StreamKey {
            scenario: 1,
            epoch: 7,
            tag: 3,
            anchor: 2,
        };
        let a: Vec<f64> = {
            let mut r = RngStream::new(42, key);
            (0..16).map(|_| r.uniform()).collect()
        };
        let b: Vec<f64> = {
            let mut r = RngStream::new(42, key);
            (0..16).map(|_| r.uniform()).collect()
        };
        assert_eq!(a, b);
        let other = StreamKey { anchor: 3, ..key };
        let mut r = RngStream::new(42, other);
        assert_ne!(a[0], r.uniform());
    }

    #[test]
    fn epoch_has_one_sample_per_anchor() {
        let scene = build_a320_scene(&SceneConfig::default()).unwrap();
        let tag = Point3::new(0.0, 15.0, 1.12);
        let key = EpochKey {
            seed: 1,
            scenario: 1,
            epoch: 0,
            tag_id: 0,
        };
        let los = vec![VisibilityState::Los; 8];
        let samples = sample_epoch(&scene, tag, &los, &RangingParams::default(), key).unwrap();
        assert_eq!(samples.len(), 8);
        let none = vec![VisibilityState::NotReceivable; 8];
        let samples = sample_epoch(&scene, tag, &none, &RangingParams::default(), key).unwrap();
        assert!(samples.iter().all(|s| s.value.is_none()));
        assert!(matches!(
            sample_epoch(&scene, tag, &los[..3], &RangingParams::default(), key),
            Err(RangingError::StateCount { expected: 8, got: 3 })
        ));
    }

    #[test]
    fn histogram_clips_into_edge_bins() {
        let mut h = Histogram::new(RESIDUAL_CLIP.0, RESIDUAL_CLIP.1, 20);
        for v in [-100.0, -5.0, 0.2, 14.99, 15.0, 99.0] {
            h.add(v);
        }
        assert_eq!(h.total(), 6);
        assert_eq!(h.counts[0], 2);
        assert_eq!(h.counts[5], 1);
        assert_eq!(h.counts[19], 3);
        assert_eq!(h.edges(0), (-5.0, -4.0));
    }
}
