//! Grid-based recursive Bayes filter (histogram / point-mass filter).
//!
//! The state space is a fixed 2D grid of cell centers at the tag height. Each
//! epoch runs predict (motion kernel), update (range likelihoods) and takes the
//! argmax cell as the position estimate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ranging::RangeObservation;
use crate::scene::{Anchor, GridSpec, Point3};

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("state grid has no cells")]
    EmptyGrid,
    #[error("belief has {belief} cells but the grid has {grid}")]
    ShapeMismatch { belief: usize, grid: usize },
    #[error("observation references unknown anchor {0}")]
    UnknownAnchor(u8),
    #[error("invalid filter parameters: {0}")]
    Params(String),
    #[error("no epochs to filter")]
    NoEpochs,
}

/// Cell centers of the filter's state space at a fixed height.
#[derive(Debug, Clone, PartialEq)]
pub struct StateGrid {
    pub nx: usize,
    pub ny: usize,
    pub resolution: f64,
    pub height: f64,
    pub cells: Vec<Point3>,
}

impl StateGrid {
    pub fn from_spec(spec: &GridSpec, height: f64) -> Self {
        Self {
            nx: spec.nx,
            ny: spec.ny,
            resolution: spec.resolution,
            height,
            cells: (0..spec.len()).map(|i| spec.cell_center(i, height)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Probability mass per grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    pub p: Vec<f64>,
}

impl Belief {
    pub fn mass(&self) -> f64 {
        self.p.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// Non-negative and summing to one within `1e-9`.
    pub fn is_valid(&self) -> bool {
        self.p.iter().all(|&v| v >= 0.0 && v.is_finite()) && (self.mass() - 1.0).abs() <= 1e-9
    }

    /// Index of the largest mass; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.p.iter().enumerate() {
            if v > self.p[best] {
                best = i;
            }
        }
        best
    }

    pub fn delta(len: usize, cell: usize) -> Self {
        let mut p = vec![0.0; len];
        p[cell] = 1.0;
        Self { p }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MotionModel {
    /// Static tag: the prediction is the prior.
    #[default]
    Identity,
    /// Truncated Gaussian displacement per epoch, applied separably along
    /// `x` and `y`; each axis is cut at `cap` meters and renormalized at the
    /// grid border so no mass leaves the grid.
    Gaussian { std: f64, cap: f64 },
}

impl MotionModel {
    /// Unnormalized 1D weights for offsets `-k..=k` cells.
    fn kernel(&self, resolution: f64) -> Result<Option<Vec<f64>>, FilterError> {
        match *self {
            MotionModel::Identity => Ok(None),
            MotionModel::Gaussian { std, cap } => {
                if !(std.is_finite() && std > 0.0 && cap.is_finite() && cap >= 0.0) {
                    return Err(FilterError::Params(format!(
                        "motion std {std} / cap {cap} out of range"
                    )));
                }
                let k = (cap / resolution + 1e-9).floor() as i64;
                Ok(Some(
                    (-k..=k)
                        .map(|o| {
                            let d = o as f64 * resolution / std;
                            (-0.5 * d * d).exp()
                        })
                        .collect(),
                ))
            }
        }
    }
}

pub fn init_uniform(grid: &StateGrid) -> Result<Belief, FilterError> {
    if grid.is_empty() {
        return Err(FilterError::EmptyGrid);
    }
    let m = grid.len();
    Ok(Belief {
        p: vec![1.0 / m as f64; m],
    })
}

fn check_shape(b: &Belief, grid: &StateGrid) -> Result<(), FilterError> {
    if b.len() != grid.len() || grid.nx * grid.ny != grid.len() {
        return Err(FilterError::ShapeMismatch {
            belief: b.len(),
            grid: grid.len(),
        });
    }
    Ok(())
}

/// Per-position offset range `lo..=hi` and kernel mass inside the grid for a
/// line of `n` cells; mass that would leave the grid is renormalized away.
fn border_norms(n: usize, w: &[f64]) -> Vec<(usize, usize, f64)> {
    let k = w.len() / 2;
    (0..n)
        .map(|i| {
            // kernel indices [lo, hi] stay inside the line
            let lo = k.saturating_sub(i);
            let hi = (w.len() - 1).min(k + n - 1 - i);
            (lo, hi, w[lo..=hi].iter().sum())
        })
        .collect()
}

/// Spreads each row along `x`.
fn spread_x(input: &[f64], nx: usize, w: &[f64]) -> Vec<f64> {
    let k = w.len() / 2;
    let norms = border_norms(nx, w);
    let mut out = vec![0.0; input.len()];
    for (src, dst) in input.chunks_exact(nx).zip(out.chunks_exact_mut(nx)) {
        for (i, &(lo, hi, norm)) in norms.iter().enumerate() {
            let mass = src[i];
            if mass == 0.0 {
                continue;
            }
            let scaled = mass / norm;
            let first = i + lo - k;
            for (d, &wk) in dst[first..=i + hi - k].iter_mut().zip(&w[lo..=hi]) {
                *d += scaled * wk;
            }
        }
    }
    out
}

/// Spreads whole rows along `y`.
fn spread_y(input: &[f64], nx: usize, ny: usize, w: &[f64]) -> Vec<f64> {
    let k = w.len() / 2;
    let norms = border_norms(ny, w);
    let mut out = vec![0.0; input.len()];
    for (iy, &(lo, hi, norm)) in norms.iter().enumerate() {
        let src = &input[iy * nx..(iy + 1) * nx];
        for (j, &wk) in w.iter().enumerate().take(hi + 1).skip(lo) {
            let c = wk / norm;
            let ty = iy + j - k;
            for (d, &m) in out[ty * nx..(ty + 1) * nx].iter_mut().zip(src) {
                *d += c * m;
            }
        }
    }
    out
}

/// Prediction step: convolves the belief with the motion kernel.
pub fn predict(b: &Belief, mm: &MotionModel, grid: &StateGrid) -> Result<Belief, FilterError> {
    check_shape(b, grid)?;
    let Some(w) = mm.kernel(grid.resolution)? else {
        return Ok(b.clone());
    };
    let along_x = spread_x(&b.p, grid.nx, &w);
    Ok(Belief {
        p: spread_y(&along_x, grid.nx, grid.ny, &w),
    })
}

/// Range likelihood: Gaussian around the predicted distance mixed with a
/// uniform floor over `[0, dmax]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LikelihoodModel {
    pub sigma_l: f64,
    pub w_robust: f64,
    pub dmax: f64,
}

impl Default for LikelihoodModel {
    fn default() -> Self {
        Self {
            sigma_l: 0.3,
            w_robust: 0.05,
            dmax: 30.0,
        }
    }
}

impl LikelihoodModel {
    pub fn validate(&self) -> Result<(), FilterError> {
        if !(self.sigma_l.is_finite() && self.sigma_l > 0.0) {
            return Err(FilterError::Params("sigma_l must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.w_robust) {
            return Err(FilterError::Params("w_robust must lie in [0, 1)".into()));
        }
        if !(self.dmax.is_finite() && self.dmax > 0.0) {
            return Err(FilterError::Params("dmax must be positive".into()));
        }
        Ok(())
    }

    /// Likelihood of measuring `range` from a cell at `distance` to the anchor.
    #[inline]
    pub fn factor(&self, range: f64, distance: f64) -> f64 {
        let z = (range - distance) / self.sigma_l;
        let gauss = (-0.5 * z * z).exp() / (self.sigma_l * (2.0 * std::f64::consts::PI).sqrt());
        (1.0 - self.w_robust) * gauss + self.w_robust / self.dmax
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateStatus {
    Updated,
    /// No valid measurement: the prediction is kept.
    NoUpdate,
    /// The posterior vanished everywhere: the prediction is kept.
    Diverged,
    /// The epoch referenced an unknown anchor: the prediction is kept.
    Rejected,
}

impl UpdateStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            UpdateStatus::Updated => "updated",
            UpdateStatus::NoUpdate => "no_update",
            UpdateStatus::Diverged => "diverged",
            UpdateStatus::Rejected => "rejected",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutcome {
    pub belief: Belief,
    pub status: UpdateStatus,
}

fn resolve(
    observations: &[RangeObservation],
    anchors: &[Anchor],
) -> Result<Vec<(usize, f64)>, FilterError> {
    observations
        .iter()
        .filter_map(|o| o.range.map(|r| (o.anchor_id, r)))
        .map(|(id, r)| {
            anchors
                .iter()
                .position(|a| a.id == id)
                .map(|k| (k, r))
                .ok_or(FilterError::UnknownAnchor(id))
        })
        .collect()
}

fn normalize(prior: &Belief, mut weights: Vec<f64>) -> UpdateOutcome {
    let eta: f64 = weights.iter().sum();
    if !(eta > 0.0 && eta.is_finite()) {
        return UpdateOutcome {
            belief: prior.clone(),
            status: UpdateStatus::Diverged,
        };
    }
    for w in &mut weights {
        *w /= eta;
    }
    UpdateOutcome {
        belief: Belief { p: weights },
        status: UpdateStatus::Updated,
    }
}

/// Measurement update. Failures contribute no factor; the posterior of each
/// cell is its prior times the likelihood factors in observation order,
/// normalized by their sum over cells.
pub fn update(
    b_pred: &Belief,
    observations: &[RangeObservation],
    anchors: &[Anchor],
    grid: &StateGrid,
    lm: &LikelihoodModel,
) -> Result<UpdateOutcome, FilterError> {
    check_shape(b_pred, grid)?;
    lm.validate()?;
    let valid = resolve(observations, anchors)?;
    if valid.is_empty() {
        return Ok(UpdateOutcome {
            belief: b_pred.clone(),
            status: UpdateStatus::NoUpdate,
        });
    }
    let weights: Vec<f64> = grid
        .cells
        .par_iter()
        .zip(b_pred.p.par_iter())
        .map(|(cell, &prior)| {
            valid.iter().fold(prior, |acc, &(k, r)| {
                acc * lm.factor(r, anchors[k].position.distance(cell))
            })
        })
        .collect();
    Ok(normalize(b_pred, weights))
}

/// Center of the argmax cell at the grid height.
pub fn estimate(b: &Belief, grid: &StateGrid) -> Point3 {
    grid.cells[b.argmax()]
}

/// Filter bound to one anchor layout with cached anchor-cell distances.
#[derive(Debug, Clone)]
pub struct GridFilter {
    pub grid: StateGrid,
    pub anchors: Vec<Anchor>,
    pub motion: MotionModel,
    pub likelihood: LikelihoodModel,
    distances: Vec<Vec<f64>>,
}

impl GridFilter {
    pub fn new(
        grid: StateGrid,
        anchors: Vec<Anchor>,
        motion: MotionModel,
        likelihood: LikelihoodModel,
    ) -> Result<Self, FilterError> {
        if grid.is_empty() {
            return Err(FilterError::EmptyGrid);
        }
        likelihood.validate()?;
        motion.kernel(grid.resolution)?;
        let distances = anchors
            .iter()
            .map(|a| grid.cells.iter().map(|c| a.position.distance(c)).collect())
            .collect();
        Ok(Self {
            grid,
            anchors,
            motion,
            likelihood,
            distances,
        })
    }

    pub fn init(&self) -> Belief {
        init_uniform(&self.grid).expect("grid checked non-empty")
    }

    pub fn predict(&self, b: &Belief) -> Result<Belief, FilterError> {
        predict(b, &self.motion, &self.grid)
    }

    /// Same arithmetic as [`update`], reading distances from the cache.
    pub fn update(&self, b_pred: &Belief, observations: &[RangeObservation]) -> Result<UpdateOutcome, FilterError> {
        check_shape(b_pred, &self.grid)?;
        let valid = resolve(observations, &self.anchors)?;
        if valid.is_empty() {
            return Ok(UpdateOutcome {
                belief: b_pred.clone(),
                status: UpdateStatus::NoUpdate,
            });
        }
        let lm = &self.likelihood;
        let weights: Vec<f64> = (0..self.grid.len())
            .map(|m| {
                valid.iter().fold(b_pred.p[m], |acc, &(k, r)| {
                    acc * lm.factor(r, self.distances[k][m])
                })
            })
            .collect();
        Ok(normalize(b_pred, weights))
    }

    /// One predict-update-estimate cycle. Errors in the update are reported
    /// through the status and leave the prediction in place.
    pub fn step(&self, prior: &Belief, observations: &[RangeObservation]) -> Result<EpochEstimate, FilterError> {
        let predicted = self.predict(prior)?;
        let (belief, status) = match self.update(&predicted, observations) {
            Ok(out) => (out.belief, out.status),
            Err(FilterError::UnknownAnchor(_)) => (predicted, UpdateStatus::Rejected),
            Err(e) => return Err(e),
        };
        let cell = belief.argmax();
        Ok(EpochEstimate {
            estimate: self.grid.cells[cell],
            max_mass: belief.p[cell],
            status,
            belief,
        })
    }

    /// Runs the whole epoch sequence from a uniform prior.
    pub fn run(&self, epochs: &[Vec<RangeObservation>]) -> Result<Vec<EpochEstimate>, FilterError> {
        if epochs.is_empty() {
            return Err(FilterError::NoEpochs);
        }
        let mut belief = self.init();
        let mut out = Vec::with_capacity(epochs.len());
        for obs in epochs {
            let step = self.step(&belief, obs)?;
            belief = step.belief.clone();
            out.push(step);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochEstimate {
    pub estimate: Point3,
    pub max_mass: f64,
    pub status: UpdateStatus,
    pub belief: Belief,
}

/// Sequential predict, update and estimate over `epochs`.
pub fn run_filter(
    grid: &StateGrid,
    mm: &MotionModel,
    lm: &LikelihoodModel,
    anchors: &[Anchor],
    epochs: &[Vec<RangeObservation>],
) -> Result<Vec<EpochEstimate>, FilterError> {
    GridFilter::new(grid.clone(), anchors.to_vec(), mm.clone(), lm.clone())?.run(epochs)
}
