//! End-to-end scenario runs: visibility, ranging, localization, evaluation.
//!
//! Each stage reads its inputs from and writes its outputs to one output
//! directory, so stages can be rerun separately. Output files depend only on
//! the configuration (including the seed), never on the thread count.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::boarding::{self, BoardingError, BoardingRun};
use crate::config::{ScenarioConfig, ScenarioId};
use crate::dataio::{
    self, round3, BoardingRecord, DataError, DynRangeRecord, EcdfRecord, EpochRecord, HistogramRecord,
    RangeRecord, StatRecord, TrajectoryRecord,
};
use crate::gridfilter::{FilterError, GridFilter, StateGrid};
use crate::metrics::{self, ErrorStats, MetricsError};
use crate::ranging::{
    self, EpochKey, Histogram, RangeObservation, RangeSample, RangingCounts, RangingError, RngStream, StreamKey,
    RESIDUAL_CLIP,
};
use crate::scene::{build_a320_scene, Material, ObstacleId, Point3, Scene, SceneError};
use crate::visibility::{self, VisibilityError, VisibilityMap, VisibilityState};

pub const VISIBILITY_CSV: &str = "visibility.csv";
pub const ANCHORS_TXT: &str = "anchors.txt";
pub const SCENE_TXT: &str = "scene.txt";
pub const CONFIG_TOML: &str = "config.toml";
pub const MANIFEST_TOML: &str = "manifest.toml";
pub const BOARDING_CSV: &str = "boarding.csv";
pub const RANGES_CSV: &str = "ranges.csv";
pub const RANGES_DYN_CSV: &str = "ranges_dyn.csv";
pub const EPOCHS_CSV: &str = "epochs.csv";
pub const RESIDUALS_CSV: &str = "residuals.csv";
pub const RANGING_SUMMARY_CSV: &str = "ranging_summary.csv";
pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const STATS_CSV: &str = "stats.csv";
pub const ECDF_CSV: &str = "ecdf.csv";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Visibility(#[from] VisibilityError),
    #[error(transparent)]
    Ranging(#[from] RangingError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Boarding(#[from] BoardingError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("stage `{stage}` needs {path}; run the earlier stage first")]
    MissingInput { stage: &'static str, path: PathBuf },
    #[error("{path}: {msg}")]
    Inconsistent { path: PathBuf, msg: String },
    #[error("cannot create output directory {path}: {source}")]
    OutDir {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("thread pool: {0}")]
    Threads(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Worker threads; `None` uses the rayon default.
    pub threads: Option<usize>,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            threads: None,
        }
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = Some(threads);
        self
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

/// Runs `f` on a pool of the requested size. On error the files in
/// `outputs` are removed so no partial stage output survives.
fn stage<T: Send>(
    opts: &RunOptions,
    outputs: &[&str],
    f: impl FnOnce() -> Result<T, PipelineError> + Send,
) -> Result<T, PipelineError> {
    std::fs::create_dir_all(&opts.out_dir).map_err(|source| PipelineError::OutDir {
        path: opts.out_dir.clone(),
        source,
    })?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = opts.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| PipelineError::Threads(e.to_string()))?;
    let result = pool.install(f);
    if result.is_err() {
        for name in outputs {
            let _ = std::fs::remove_file(opts.path(name));
        }
    }
    result
}

fn require(opts: &RunOptions, stage: &'static str, name: &str) -> Result<PathBuf, PipelineError> {
    let path = opts.path(name);
    if path.is_file() {
        Ok(path)
    } else {
        Err(PipelineError::MissingInput { stage, path })
    }
}

fn write_run_info(cfg: &ScenarioConfig, scene: &Scene, opts: &RunOptions) -> Result<(), PipelineError> {
    dataio::write_text(&opts.path(CONFIG_TOML), &cfg.to_toml())?;
    dataio::write_text(&opts.path(MANIFEST_TOML), &manifest(cfg))?;
    dataio::write_text(&opts.path(SCENE_TXT), &scene.export_boxes())?;
    dataio::write_anchors(&scene.anchors, &opts.path(ANCHORS_TXT))?;
    Ok(())
}

/// Seed, configuration digest and crate version of a run.
pub fn manifest(cfg: &ScenarioConfig) -> String {
    format!(
        "[run]\nscenario = \"{}\"\nseed = {}\nconfig_sha256 = \"{}\"\ncrate = \"{}\"\nversion = \"{}\"\n",
        cfg.id(),
        cfg.scenario.seed,
        cfg.digest(),
        env!("CARGO_PKG_NAME"),
        env!("CARGO_PKG_VERSION"),
    )
}

/// Computes and writes the visibility map of the empty cabin at the
/// scenario's tag height, along with the scene, anchors, resolved
/// configuration and run manifest.
pub fn cmd_visibility(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<VisibilityMap, PipelineError> {
    let outputs = [VISIBILITY_CSV, CONFIG_TOML, MANIFEST_TOML, SCENE_TXT, ANCHORS_TXT];
    stage(opts, &outputs, || {
        let scene = build_a320_scene(&cfg.scene)?;
        write_run_info(cfg, &scene, opts)?;
        let map = visibility::visibility_map(&scene, cfg.height(), &cfg.visibility)?;
        dataio::write_visibility_csv(&map, &opts.path(VISIBILITY_CSV), cfg.scenario.receivable_column)?;
        Ok(map)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RangingReport {
    pub positions: usize,
    pub counts: RangingCounts,
    pub histogram: Histogram,
}

/// One tag position at one epoch with its samples.
struct TagEpoch {
    epoch: u64,
    tag_id: u64,
    position: Point3,
    samples: Vec<RangeSample>,
}

/// Samples reference positions and ranges. Static scenarios draw uniform
/// positions and take visibility from `visibility.csv`; the boarding
/// scenario simulates the boarding and classifies every epoch with the
/// passengers in place.
pub fn cmd_ranges(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<RangingReport, PipelineError> {
    let outputs = [
        RANGES_CSV,
        RANGES_DYN_CSV,
        EPOCHS_CSV,
        RESIDUALS_CSV,
        RANGING_SUMMARY_CSV,
        BOARDING_CSV,
    ];
    stage(opts, &outputs, || {
        let scene = build_a320_scene(&cfg.scene)?;
        let tag_epochs = if cfg.id().is_static() {
            let vis_path = require(opts, "ranges", VISIBILITY_CSV)?;
            let lookup = load_visibility(&scene, cfg.height(), &vis_path)?;
            static_epochs(cfg, &scene, &lookup)?
        } else {
            let run = boarding::simulate_boarding(&scene, &cfg.boarding, cfg.scenario.seed)?;
            write_boarding(&run, &opts.path(BOARDING_CSV))?;
            boarding_epochs(cfg, &scene, &run)?
        };
        write_ranging_outputs(cfg, opts, &tag_epochs)
    })
}

/// Per-cell anchor states from a visibility file, in scene anchor order.
fn load_visibility(scene: &Scene, height: f64, path: &Path) -> Result<Vec<Vec<VisibilityState>>, PipelineError> {
    let records = dataio::read_visibility_csv(path)?;
    let grid = &scene.grid;
    let n_anchor = scene.anchors.len();
    let inconsistent = |msg: String| PipelineError::Inconsistent {
        path: path.to_path_buf(),
        msg,
    };
    if records.len() != grid.len() * n_anchor {
        return Err(inconsistent(format!(
            "{} records for {} cells and {} anchors",
            records.len(),
            grid.len(),
            n_anchor
        )));
    }
    let mut states = vec![vec![VisibilityState::NotReceivable; n_anchor]; grid.len()];
    let mut seen = vec![vec![false; n_anchor]; grid.len()];
    for r in &records {
        if (r.height - round3(height)).abs() > 1e-9 {
            return Err(inconsistent(format!("height {} differs from the scenario's {height}", r.height)));
        }
        let cell = grid
            .cell_of(r.x, r.y)
            .ok_or_else(|| inconsistent(format!("({}, {}) lies outside the grid", r.x, r.y)))?;
        let k = scene
            .anchors
            .iter()
            .position(|a| a.id == r.anchor_id)
            .ok_or_else(|| inconsistent(format!("unknown anchor {}", r.anchor_id)))?;
        if std::mem::replace(&mut seen[cell][k], true) {
            return Err(inconsistent(format!("duplicate record for cell {cell}, anchor {}", r.anchor_id)));
        }
        states[cell][k] = r.state();
    }
    Ok(states)
}

/// Uniform positions over the grid at millimeter precision, skipping points
/// inside opaque obstacles.
pub fn sample_positions(scene: &Scene, n: usize, height: f64, seed: u64, scenario: ScenarioId) -> Vec<Point3> {
    let mut rng = RngStream::new(
        seed,
        StreamKey {
            scenario: scenario.code(),
            epoch: u64::MAX,
            tag: 0,
            anchor: 0,
        },
    );
    let (x0, x1) = scene.grid.x_extent();
    let (y0, y1) = scene.grid.y_extent();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = Point3::new(
            round3(x0 + rng.uniform() * (x1 - x0)),
            round3(y0 + rng.uniform() * (y1 - y0)),
            height,
        );
        let blocked = scene
            .obstacles
            .iter()
            .any(|o| o.kind == Material::Opaque && o.aabb.contains(&p));
        if !blocked && scene.grid.cell_of(p.x, p.y).is_some() {
            out.push(p);
        }
    }
    out
}

fn static_epochs(
    cfg: &ScenarioConfig,
    scene: &Scene,
    lookup: &[Vec<VisibilityState>],
) -> Result<Vec<TagEpoch>, PipelineError> {
    let positions = sample_positions(scene, cfg.scenario.positions, cfg.height(), cfg.scenario.seed, cfg.id());
    positions
        .par_iter()
        .enumerate()
        .map(|(i, &p)| {
            let cell = scene.grid.cell_of(p.x, p.y).expect("sampled inside the grid");
            let key = EpochKey {
                seed: cfg.scenario.seed,
                scenario: cfg.id().code(),
                epoch: 0,
                tag_id: i as u64,
            };
            let samples = ranging::sample_epoch(scene, p, &lookup[cell], &cfg.ranging, key)?;
            Ok(TagEpoch {
                epoch: 0,
                tag_id: i as u64,
                position: p,
                samples,
            })
        })
        .collect()
}

fn write_boarding(run: &BoardingRun, path: &Path) -> Result<(), PipelineError> {
    let mut records: Vec<BoardingRecord> = run
        .trajectories
        .iter()
        .flat_map(|t| {
            t.points.iter().map(move |p| BoardingRecord {
                epoch: p.epoch,
                pax_id: t.pax_id,
                x: round3(p.position.x),
                y: round3(p.position.y),
                state: p.state,
            })
        })
        .collect();
    records.sort_by_key(|r| (r.epoch, r.pax_id));
    dataio::write_records(path, &records)?;
    Ok(())
}

/// Every passenger inside the cabin carries a tag, sampled once per epoch.
/// Visibility is classified against the cabin with all passengers present
/// except the carrier's own body.
fn boarding_epochs(cfg: &ScenarioConfig, scene: &Scene, run: &BoardingRun) -> Result<Vec<TagEpoch>, PipelineError> {
    let per_epoch: Vec<Vec<TagEpoch>> = (0..run.total_epochs)
        .into_par_iter()
        .map(|epoch| {
            let present = run.present_at(epoch);
            let bodies: Vec<Point3> = present
                .iter()
                .map(|(_, p)| Point3::new(p.position.x, p.position.y, 0.0))
                .collect();
            let first_pax = scene.obstacles.len() as u32;
            let crowded = scene.add_pax_obstacles(&bodies);
            debug_assert!(crowded.obstacles[first_pax as usize].id == ObstacleId(first_pax));
            present
                .iter()
                .enumerate()
                .map(|(j, (pax_id, point))| {
                    let tag = Point3::new(round3(point.position.x), round3(point.position.y), point.position.z);
                    let own = [ObstacleId(first_pax + j as u32)];
                    let states = crowded
                        .anchors
                        .iter()
                        .map(|a| visibility::classify_excluding(&crowded, a, tag, &cfg.visibility, &own))
                        .collect::<Result<Vec<_>, _>>()?;
                    let key = EpochKey {
                        seed: cfg.scenario.seed,
                        scenario: cfg.id().code(),
                        epoch,
                        tag_id: *pax_id as u64,
                    };
                    let samples = ranging::sample_epoch(&crowded, tag, &states, &cfg.ranging, key)?;
                    Ok(TagEpoch {
                        epoch,
                        tag_id: *pax_id as u64,
                        position: tag,
                        samples,
                    })
                })
                .collect::<Result<Vec<_>, PipelineError>>()
        })
        .collect::<Result<_, _>>()?;
    Ok(per_epoch.into_iter().flatten().collect())
}

fn write_ranging_outputs(
    cfg: &ScenarioConfig,
    opts: &RunOptions,
    tag_epochs: &[TagEpoch],
) -> Result<RangingReport, PipelineError> {
    let bins = ((RESIDUAL_CLIP.1 - RESIDUAL_CLIP.0) / cfg.scenario.residual_bin).round().max(1.0) as usize;
    let mut histogram = Histogram::new(RESIDUAL_CLIP.0, RESIDUAL_CLIP.1, bins);
    let mut counts = RangingCounts::default();
    let mut ranges = Vec::new();
    let mut dyn_ranges = Vec::new();
    let mut epochs = Vec::with_capacity(tag_epochs.len());
    for te in tag_epochs {
        let (x, y, h) = (round3(te.position.x), round3(te.position.y), round3(te.position.z));
        let mut valid = 0;
        for s in &te.samples {
            counts.add(s);
            let Some(value) = s.value else { continue };
            valid += 1;
            if let Some(r) = s.residual() {
                histogram.add(r);
            }
            let range = round3(value);
            ranges.push(RangeRecord {
                ref_pos_x: x,
                ref_pos_y: y,
                height: h,
                anchor_id: s.anchor_id,
                range,
            });
            dyn_ranges.push(DynRangeRecord {
                epoch: te.epoch,
                tag_id: te.tag_id,
                ref_pos_x: x,
                ref_pos_y: y,
                height: h,
                anchor_id: s.anchor_id,
                range,
            });
        }
        epochs.push(EpochRecord {
            epoch: te.epoch,
            tag_id: te.tag_id,
            ref_pos_x: x,
            ref_pos_y: y,
            height: h,
            attempted: te.samples.len() as u32,
            valid,
        });
    }
    dataio::write_records(&opts.path(RANGES_CSV), &ranges)?;
    dataio::write_records(&opts.path(RANGES_DYN_CSV), &dyn_ranges)?;
    dataio::write_records(&opts.path(EPOCHS_CSV), &epochs)?;
    let hist_rows: Vec<HistogramRecord> = (0..histogram.counts.len())
        .map(|b| {
            let (lo, hi) = histogram.edges(b);
            HistogramRecord {
                bin_lo: lo,
                bin_hi: hi,
                count: histogram.counts[b],
            }
        })
        .collect();
    dataio::write_records(&opts.path(RESIDUALS_CSV), &hist_rows)?;
    let scenario = cfg.id().to_string();
    let mut summary = vec![
        ("positions", epochs.len() as f64),
        ("attempted", counts.total as f64),
        ("valid", counts.valid as f64),
        ("valid_fraction", counts.valid_fraction()),
        ("outliers", counts.outliers as f64),
        ("depicted", counts.depicted as f64),
    ];
    for state in VisibilityState::ALL {
        summary.push((state_metric(state), counts.per_state[state.code() as usize] as f64));
    }
    let rows: Vec<StatRecord> = summary
        .into_iter()
        .map(|(metric, value)| StatRecord {
            scenario: scenario.clone(),
            metric: metric.to_string(),
            value,
        })
        .collect();
    dataio::write_records(&opts.path(RANGING_SUMMARY_CSV), &rows)?;
    Ok(RangingReport {
        positions: epochs.len(),
        counts,
        histogram,
    })
}

fn state_metric(state: VisibilityState) -> &'static str {
    match state {
        VisibilityState::NotReceivable => "attempted_not_receivable",
        VisibilityState::Los => "attempted_los",
        VisibilityState::Olos => "attempted_olos",
        VisibilityState::Nlos => "attempted_nlos",
    }
}

/// Runs the grid filter on the sampled ranges and writes one estimate per
/// tag and epoch. Static positions are localized independently from a
/// uniform prior; boarding tags are tracked over their epochs.
pub fn cmd_localize(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<Vec<TrajectoryRecord>, PipelineError> {
    stage(opts, &[TRAJECTORY_CSV], || {
        let epochs_path = require(opts, "localize", EPOCHS_CSV)?;
        let ranges_path = require(opts, "localize", RANGES_DYN_CSV)?;
        let anchors_path = require(opts, "localize", ANCHORS_TXT)?;
        let anchors = dataio::read_anchors(&anchors_path)?;
        let epochs: Vec<EpochRecord> = dataio::read_records(&epochs_path)?;
        let ranges: Vec<DynRangeRecord> = dataio::read_records(&ranges_path)?;

        let mut obs: BTreeMap<(u64, u64), Vec<RangeObservation>> = BTreeMap::new();
        for r in &ranges {
            obs.entry((r.tag_id, r.epoch)).or_default().push(RangeObservation {
                anchor_id: r.anchor_id,
                range: Some(r.range),
            });
        }
        let mut tracks: BTreeMap<u64, Vec<&EpochRecord>> = BTreeMap::new();
        for e in &epochs {
            tracks.entry(e.tag_id).or_default().push(e);
        }
        for t in tracks.values_mut() {
            t.sort_by_key(|e| e.epoch);
        }

        let scene = build_a320_scene(&cfg.scene)?;
        let grid = StateGrid::from_spec(&scene.grid, cfg.height());
        let filter = GridFilter::new(grid, anchors, cfg.filter.motion.clone(), cfg.filter.likelihood.clone())?;
        let empty = Vec::new();
        let tracks: Vec<(u64, Vec<&EpochRecord>)> = tracks.into_iter().collect();
        let per_tag: Vec<Vec<TrajectoryRecord>> = tracks
            .par_iter()
            .map(|(tag_id, track)| {
                let mut belief = filter.init();
                let mut out = Vec::with_capacity(track.len());
                for e in track {
                    let o = obs.get(&(*tag_id, e.epoch)).unwrap_or(&empty);
                    let step = filter.step(&belief, o)?;
                    let reference = Point3::new(e.ref_pos_x, e.ref_pos_y, e.height);
                    out.push(TrajectoryRecord {
                        epoch: e.epoch,
                        tag_id: *tag_id,
                        est_x: round3(step.estimate.x),
                        est_y: round3(step.estimate.y),
                        ref_x: e.ref_pos_x,
                        ref_y: e.ref_pos_y,
                        error: metrics::position_error(&step.estimate, &reference),
                        status: step.status.as_str().to_string(),
                    });
                    belief = step.belief;
                }
                Ok(out)
            })
            .collect::<Result<_, PipelineError>>()?;
        let records: Vec<TrajectoryRecord> = per_tag.into_iter().flatten().collect();
        dataio::write_records(&opts.path(TRAJECTORY_CSV), &records)?;
        Ok(records)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub stats: ErrorStats,
    pub attempted: u64,
    pub valid: u64,
}

impl Evaluation {
    pub fn valid_fraction(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            self.valid as f64 / self.attempted as f64
        }
    }
}

/// Error statistics and ECDF of the estimates in `trajectory.csv`.
pub fn cmd_evaluate(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<Evaluation, PipelineError> {
    stage(opts, &[STATS_CSV, ECDF_CSV], || {
        let traj_path = require(opts, "evaluate", TRAJECTORY_CSV)?;
        let records: Vec<TrajectoryRecord> = dataio::read_records(&traj_path)?;
        let errors: Vec<f64> = records
            .iter()
            .map(|r| (r.est_x - r.ref_x).hypot(r.est_y - r.ref_y))
            .collect();
        let stats = metrics::summarize(&errors)?;
        // measurement counts are optional: a hand-made trajectory has none
        let (attempted, valid) = match dataio::read_records::<EpochRecord>(&opts.path(EPOCHS_CSV)) {
            Ok(epochs) => epochs
                .iter()
                .fold((0u64, 0u64), |(a, v), e| (a + e.attempted as u64, v + e.valid as u64)),
            Err(DataError::Io { .. }) => (0, 0),
            Err(e) => return Err(e.into()),
        };
        let eval = Evaluation {
            stats,
            attempted,
            valid,
        };
        let scenario = cfg.id().to_string();
        let mut rows: Vec<StatRecord> = eval
            .stats
            .rows()
            .into_iter()
            .map(|(metric, value)| StatRecord {
                scenario: scenario.clone(),
                metric: metric.to_string(),
                value,
            })
            .collect();
        if attempted > 0 {
            for (metric, value) in [
                ("attempted", attempted as f64),
                ("valid", valid as f64),
                ("valid_fraction", eval.valid_fraction()),
            ] {
                rows.push(StatRecord {
                    scenario: scenario.clone(),
                    metric: metric.to_string(),
                    value,
                });
            }
        }
        dataio::write_records(&opts.path(STATS_CSV), &rows)?;
        let ecdf: Vec<EcdfRecord> = metrics::ecdf(&errors)
            .into_iter()
            .map(|(value, fraction)| EcdfRecord { value, fraction })
            .collect();
        dataio::write_records(&opts.path(ECDF_CSV), &ecdf)?;
        Ok(eval)
    })
}

#[derive(Debug, Clone)]
pub struct FullReport {
    pub visibility: VisibilityMap,
    pub ranging: RangingReport,
    pub evaluation: Evaluation,
}

/// All stages in order.
pub fn cmd_full(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<FullReport, PipelineError> {
    let visibility = cmd_visibility(cfg, opts)?;
    let ranging = cmd_ranges(cfg, opts)?;
    cmd_localize(cfg, opts)?;
    let evaluation = cmd_evaluate(cfg, opts)?;
    Ok(FullReport {
        visibility,
        ranging,
        evaluation,
    })
}

/// Output files written by a full run of `id`.
pub fn output_files(id: ScenarioId) -> Vec<&'static str> {
    let mut files = vec![
        VISIBILITY_CSV,
        ANCHORS_TXT,
        SCENE_TXT,
        CONFIG_TOML,
        MANIFEST_TOML,
        RANGES_CSV,
        RANGES_DYN_CSV,
        EPOCHS_CSV,
        RESIDUALS_CSV,
        RANGING_SUMMARY_CSV,
        TRAJECTORY_CSV,
        STATS_CSV,
        ECDF_CSV,
    ];
    if id == ScenarioId::III {
        files.push(BOARDING_CSV);
    }
    files
}
