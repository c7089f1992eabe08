//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Three operations, all on the default cabin: the visibility of one anchor
//! over the grid, a histogram of simulated range residuals for one
//! visibility state, and the filter belief after one epoch of measurements
//! at a chosen tag position.

use cabin_rps::gridfilter::{GridFilter, LikelihoodModel, MotionModel, StateGrid};
use cabin_rps::ranging::{sample_epoch, sample_range, EpochKey, Histogram, RangeOutcome, RangingParams, RngStream, RESIDUAL_CLIP};
use cabin_rps::scene::{build_a320_scene, Point3, Scene, SceneConfig};
use cabin_rps::visibility::{classify, VisibilityParams, VisibilityState};
use wasm_bindgen::prelude::*;

fn scene() -> Result<Scene, String> {
    build_a320_scene(&SceneConfig::default()).map_err(|e| e.to_string())
}

/// Values over the receiver grid, row-major with `x` varying fastest.
#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    nx: usize,
    ny: usize,
    origin_x: f64,
    origin_y: f64,
    resolution: f64,
    values: Vec<f64>,
    est_x: f64,
    est_y: f64,
    valid: u32,
}

#[wasm_bindgen]
impl Layer {
    #[wasm_bindgen(getter)]
    pub fn nx(&self) -> usize {
        self.nx
    }
    #[wasm_bindgen(getter)]
    pub fn ny(&self) -> usize {
        self.ny
    }
    #[wasm_bindgen(getter)]
    pub fn origin_x(&self) -> f64 {
        self.origin_x
    }
    #[wasm_bindgen(getter)]
    pub fn origin_y(&self) -> f64 {
        self.origin_y
    }
    #[wasm_bindgen(getter)]
    pub fn resolution(&self) -> f64 {
        self.resolution
    }
    #[wasm_bindgen(getter)]
    pub fn values(&self) -> Vec<f64> {
        self.values.clone()
    }
    /// Filter estimate; NaN for visibility layers.
    #[wasm_bindgen(getter)]
    pub fn est_x(&self) -> f64 {
        self.est_x
    }
    #[wasm_bindgen(getter)]
    pub fn est_y(&self) -> f64 {
        self.est_y
    }
    /// Anchors that returned a measurement (belief layers only).
    #[wasm_bindgen(getter)]
    pub fn valid(&self) -> u32 {
        self.valid
    }
}

impl Layer {
    fn over(scene: &Scene, values: Vec<f64>) -> Self {
        let g = &scene.grid;
        Layer {
            nx: g.nx,
            ny: g.ny,
            origin_x: g.origin.x,
            origin_y: g.origin.y,
            resolution: g.resolution,
            values,
            est_x: f64::NAN,
            est_y: f64::NAN,
            valid: 0,
        }
    }
}

#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualHistogram {
    lo: f64,
    width: f64,
    counts: Vec<u32>,
    failures: u32,
    outliers: u32,
}

#[wasm_bindgen]
impl ResidualHistogram {
    #[wasm_bindgen(getter)]
    pub fn lo(&self) -> f64 {
        self.lo
    }
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> f64 {
        self.width
    }
    #[wasm_bindgen(getter)]
    pub fn counts(&self) -> Vec<u32> {
        self.counts.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn failures(&self) -> u32 {
        self.failures
    }
    #[wasm_bindgen(getter)]
    pub fn outliers(&self) -> u32 {
        self.outliers
    }
}

/// Visibility codes (0 not receivable, 1 LOS, 2 OLOS, 3 NLOS) of one anchor
/// at every grid cell. `threshold <= 0` disables the OLOS to NLOS demotion.
pub fn visibility_layer(anchor_id: u8, height: f64, threshold: f64) -> Result<Layer, String> {
    let scene = scene()?;
    if !scene.grid.has_height(height) {
        return Err(format!("height {height} is not a grid height {:?}", scene.grid.heights));
    }
    let anchor = *scene.anchor(anchor_id).ok_or(format!("no anchor {anchor_id}"))?;
    let params = VisibilityParams {
        olos_nlos_threshold: (threshold > 0.0).then_some(threshold),
        ..Default::default()
    };
    let codes = (0..scene.grid.len())
        .map(|cell| {
            classify(&scene, &anchor, scene.grid.cell_center(cell, height), &params)
                .map(|s| s.code() as f64)
                .map_err(|e| e.to_string())
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Layer::over(&scene, codes))
}

/// Residuals of `draws` ranging attempts at true distance `distance` in
/// visibility state `state_code`, in 0.1 m bins.
pub fn residual_histogram(state_code: u8, distance: f64, draws: u32, seed: u64) -> Result<ResidualHistogram, String> {
    let state = VisibilityState::from_code(state_code)
        .filter(|s| s.is_receivable())
        .ok_or(format!("state code {state_code} is not 1, 2 or 3"))?;
    let params = RangingParams::default();
    let bins = ((RESIDUAL_CLIP.1 - RESIDUAL_CLIP.0) / 0.1).round() as usize;
    let mut hist = Histogram::new(RESIDUAL_CLIP.0, RESIDUAL_CLIP.1, bins);
    let mut rng = RngStream::from_seed(seed);
    let (mut failures, mut outliers) = (0, 0);
    for _ in 0..draws {
        match sample_range(distance, state, &params, &mut rng).map_err(|e| e.to_string())? {
            RangeOutcome::Failure => failures += 1,
            RangeOutcome::Measured { value, outlier } => {
                outliers += outlier as u32;
                hist.add(value - distance);
            }
        }
    }
    Ok(ResidualHistogram {
        lo: RESIDUAL_CLIP.0,
        width: hist.bin_width(),
        counts: hist.counts.iter().map(|&c| c as u32).collect(),
        failures,
        outliers,
    })
}

/// Posterior over the grid after one epoch of simulated ranging from a tag
/// at `(x, y, height)`, starting from a uniform prior.
pub fn belief_layer(x: f64, y: f64, height: f64, seed: u64) -> Result<Layer, String> {
    let scene = scene()?;
    if !scene.grid.has_height(height) {
        return Err(format!("height {height} is not a grid height {:?}", scene.grid.heights));
    }
    let tag = Point3::new(x, y, height);
    let params = VisibilityParams {
        olos_nlos_threshold: (height < 1.0).then_some(6.0),
        ..Default::default()
    };
    let states = scene
        .anchors
        .iter()
        .map(|a| classify(&scene, a, tag, &params))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let key = EpochKey {
        seed,
        scenario: if height < 1.0 { 2 } else { 1 },
        epoch: 0,
        tag_id: 0,
    };
    let samples = sample_epoch(&scene, tag, &states, &RangingParams::default(), key).map_err(|e| e.to_string())?;
    let filter = GridFilter::new(
        StateGrid::from_spec(&scene.grid, height),
        scene.anchors.clone(),
        MotionModel::Identity,
        LikelihoodModel::default(),
    )
    .map_err(|e| e.to_string())?;
    let obs: Vec<_> = samples.iter().map(|s| s.observation()).collect();
    let step = filter.step(&filter.init(), &obs).map_err(|e| e.to_string())?;
    let mut layer = Layer::over(&scene, step.belief.p);
    layer.est_x = step.estimate.x;
    layer.est_y = step.estimate.y;
    layer.valid = samples.iter().filter(|s| s.value.is_some()).count() as u32;
    Ok(layer)
}

#[wasm_bindgen(js_name = visibilityLayer)]
pub fn js_visibility_layer(anchor_id: u8, height: f64, threshold: f64) -> Result<Layer, JsError> {
    visibility_layer(anchor_id, height, threshold).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = residualHistogram)]
pub fn js_residual_histogram(state_code: u8, distance: f64, draws: u32, seed: u32) -> Result<ResidualHistogram, JsError> {
    residual_histogram(state_code, distance, draws, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = beliefLayer)]
pub fn js_belief_layer(x: f64, y: f64, height: f64, seed: u32) -> Result<Layer, JsError> {
    belief_layer(x, y, height, seed.into()).map_err(|e| JsError::new(&e))
}
