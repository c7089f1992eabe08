//! Per-cell radio visibility between anchors and receiver positions.
//!
//! The direct path decides LOS/OLOS. When it is blocked by opaque material the
//! image method searches for a path with at most `max_reflections` bounces off
//! reflective box faces; if one exists the pair is NLOS, otherwise the signal
//! is not receivable.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{Anchor, Axis, GridSpec, ObstacleId, PathClass, Point3, Scene};

#[derive(Debug, Error, PartialEq)]
pub enum VisibilityError {
    #[error("receiver position {0} lies outside the scene bounds")]
    OutOfBounds(Point3),
    #[error("height {0} m is not a prediction plane of the grid")]
    UnknownHeight(f64),
    #[error("invalid visibility parameters: {0}")]
    Params(String),
}

/// Visibility class with the dataset's integer codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum VisibilityState {
    NotReceivable = 0,
    Los = 1,
    Olos = 2,
    Nlos = 3,
}

impl VisibilityState {
    pub const ALL: [VisibilityState; 4] = [
        VisibilityState::NotReceivable,
        VisibilityState::Los,
        VisibilityState::Olos,
        VisibilityState::Nlos,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn is_receivable(self) -> bool {
        self != VisibilityState::NotReceivable
    }

    pub fn label(self) -> &'static str {
        match self {
            VisibilityState::NotReceivable => "not_receivable",
            VisibilityState::Los => "LOS",
            VisibilityState::Olos => "OLOS",
            VisibilityState::Nlos => "NLOS",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisibilityParams {
    pub max_reflections: u32,
    /// OLOS paths longer than this are demoted to NLOS. Disabled when `None`
    /// (written as `false` in configuration files).
    #[serde(with = "threshold_repr")]
    pub olos_nlos_threshold: Option<f64>,
    /// Longest reflected path still considered receivable.
    pub max_path_length: f64,
}

mod threshold_repr {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Meters(f64),
        Enabled(bool),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(m) => Repr::Meters(*m),
            None => Repr::Enabled(false),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Meters(m) => Ok(Some(m)),
            Repr::Enabled(false) => Ok(None),
            Repr::Enabled(true) => Err(serde::de::Error::custom(
                "olos_nlos_threshold must be a distance in meters or false",
            )),
        }
    }
}

impl Default for VisibilityParams {
    fn default() -> Self {
        Self {
            max_reflections: 2,
            olos_nlos_threshold: None,
            max_path_length: 30.0,
        }
    }
}

impl VisibilityParams {
    pub fn validate(&self) -> Result<(), VisibilityError> {
        if let Some(t) = self.olos_nlos_threshold {
            if !(t.is_finite() && t > 0.0) {
                return Err(VisibilityError::Params(format!(
                    "olos_nlos_threshold must be positive, got {t}"
                )));
            }
        }
        if !(self.max_path_length > 0.0) {
            return Err(VisibilityError::Params(
                "max_path_length must be positive".into(),
            ));
        }
        Ok(())
    }
}

pub fn classify(
    scene: &Scene,
    anchor: &Anchor,
    p: Point3,
    params: &VisibilityParams,
) -> Result<VisibilityState, VisibilityError> {
    classify_excluding(scene, anchor, p, params, &[])
}

/// Same as [`classify`] with some obstacles made invisible, e.g. the body of
/// the passenger carrying the tag.
pub fn classify_excluding(
    scene: &Scene,
    anchor: &Anchor,
    p: Point3,
    params: &VisibilityParams,
    exclude: &[ObstacleId],
) -> Result<VisibilityState, VisibilityError> {
    if !p.is_finite() || !scene.bounds.contains(&p) {
        return Err(VisibilityError::OutOfBounds(p));
    }
    let a = anchor.position;
    if a == p {
        return Ok(VisibilityState::Los);
    }
    Ok(match scene.path_class(a, p, exclude) {
        PathClass::Clear => VisibilityState::Los,
        PathClass::TransmissiveOnly => match params.olos_nlos_threshold {
            Some(t) if a.distance(&p) > t => VisibilityState::Nlos,
            _ => VisibilityState::Olos,
        },
        PathClass::OpaqueBlocked => {
            if reflected_path_excluding(scene, a, p, params, exclude).is_some() {
                VisibilityState::Nlos
            } else {
                VisibilityState::NotReceivable
            }
        }
    })
}

/// One planar face of a reflective box.
#[derive(Debug, Clone, Copy)]
struct Face {
    owner: ObstacleId,
    axis: Axis,
    coord: f64,
    /// +1 if the outward normal points along +axis.
    normal: f64,
    lo: [f64; 2],
    hi: [f64; 2],
}

impl Face {
    fn others(&self) -> [Axis; 2] {
        match self.axis {
            Axis::X => [Axis::Y, Axis::Z],
            Axis::Y => [Axis::X, Axis::Z],
            Axis::Z => [Axis::X, Axis::Y],
        }
    }

    fn side(&self, p: &Point3) -> f64 {
        (p.axis(self.axis) - self.coord) * self.normal
    }

    fn mirror(&self, p: &Point3) -> Point3 {
        p.with_axis(self.axis, 2.0 * self.coord - p.axis(self.axis))
    }

    fn covers(&self, q: &Point3) -> bool {
        const EPS: f64 = 1e-9;
        self.others()
            .iter()
            .enumerate()
            .all(|(i, &ax)| q.axis(ax) >= self.lo[i] - EPS && q.axis(ax) <= self.hi[i] + EPS)
    }

    fn same_plane(&self, other: &Face) -> bool {
        self.axis == other.axis && self.coord == other.coord && self.normal == other.normal
    }
}

fn reflective_faces(scene: &Scene) -> Vec<Face> {
    let mut faces = Vec::new();
    for o in scene.obstacles.iter().filter(|o| o.reflective) {
        for axis in Axis::ALL {
            let face = |coord: f64, normal: f64| {
                let mut f = Face {
                    owner: o.id,
                    axis,
                    coord,
                    normal,
                    lo: [0.0; 2],
                    hi: [0.0; 2],
                };
                for (i, ax) in f.others().into_iter().enumerate() {
                    f.lo[i] = o.aabb.min.axis(ax);
                    f.hi[i] = o.aabb.max.axis(ax);
                }
                f
            };
            faces.push(face(o.aabb.min.axis(axis), -1.0));
            faces.push(face(o.aabb.max.axis(axis), 1.0));
        }
    }
    faces
}

/// A reflected path: the ordered reflection points between the endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectedPath {
    pub bounces: Vec<Point3>,
    pub length: f64,
}

/// True iff a path from `a` to `b` with `1..=max_reflections` specular
/// bounces off reflective faces exists whose legs cross no opaque obstacle
/// and whose length stays within `max_path_length`.
pub fn reflected_path_exists(scene: &Scene, a: Point3, b: Point3, params: &VisibilityParams) -> bool {
    reflected_path_excluding(scene, a, b, params, &[]).is_some()
}

/// First valid reflected path, searching by increasing bounce count.
pub fn reflected_path_excluding(
    scene: &Scene,
    a: Point3,
    b: Point3,
    params: &VisibilityParams,
    exclude: &[ObstacleId],
) -> Option<ReflectedPath> {
    if params.max_reflections == 0 || a == b {
        return None;
    }
    let faces = reflective_faces(scene);
    let mut seq = Vec::with_capacity(params.max_reflections as usize);
    let mut images = vec![a];
    for depth in 1..=params.max_reflections as usize {
        if let Some(path) = search(scene, &faces, a, b, params, exclude, depth, &mut seq, &mut images) {
            return Some(path);
        }
    }
    None
}

#[allow(clippy::too_many_arguments)]
fn search(
    scene: &Scene,
    faces: &[Face],
    a: Point3,
    b: Point3,
    params: &VisibilityParams,
    exclude: &[ObstacleId],
    depth: usize,
    seq: &mut Vec<usize>,
    images: &mut Vec<Point3>,
) -> Option<ReflectedPath> {
    if seq.len() == depth {
        return trace(scene, faces, a, b, params, exclude, seq, images);
    }
    let source = *images.last().expect("images start with the source");
    for (i, face) in faces.iter().enumerate() {
        if let Some(&prev) = seq.last() {
            if faces[prev].same_plane(face) {
                continue;
            }
        }
        // the virtual source must see the outward side of the next mirror
        if face.side(&source) <= 0.0 {
            continue;
        }
        seq.push(i);
        images.push(face.mirror(&source));
        let found = search(scene, faces, a, b, params, exclude, depth, seq, images);
        seq.pop();
        images.pop();
        if found.is_some() {
            return found;
        }
    }
    None
}

#[allow(clippy::too_many_arguments)]
fn trace(
    scene: &Scene,
    faces: &[Face],
    a: Point3,
    b: Point3,
    params: &VisibilityParams,
    exclude: &[ObstacleId],
    seq: &[usize],
    images: &[Point3],
) -> Option<ReflectedPath> {
    // walk back from the receiver towards successive images
    let k = seq.len();
    let mut bounces = vec![Point3::default(); k];
    let mut target = b;
    for j in (0..k).rev() {
        let face = &faces[seq[j]];
        let image = images[j + 1];
        let st = face.side(&target);
        let si = face.side(&image);
        if st <= 0.0 || si >= 0.0 {
            return None;
        }
        let t = st / (st - si);
        let q = target + (image - target) * t;
        let q = q.with_axis(face.axis, face.coord);
        if !face.covers(&q) {
            return None;
        }
        bounces[j] = q;
        target = q;
    }

    let mut points = Vec::with_capacity(k + 2);
    points.push(a);
    points.extend_from_slice(&bounces);
    points.push(b);

    for j in 0..k {
        let face = &faces[seq[j]];
        if face.side(&points[j]) <= 0.0 || face.side(&points[j + 2]) <= 0.0 {
            return None;
        }
    }
    let length: f64 = points.windows(2).map(|w| w[0].distance(&w[1])).sum();
    if length > params.max_path_length {
        return None;
    }
    let mut skip: Vec<ObstacleId> = Vec::with_capacity(exclude.len() + 2);
    for leg in 0..=k {
        skip.clear();
        skip.extend_from_slice(exclude);
        if leg > 0 {
            skip.push(faces[seq[leg - 1]].owner);
        }
        if leg < k {
            skip.push(faces[seq[leg]].owner);
        }
        let (p0, p1) = (points[leg], points[leg + 1]);
        if p0 == p1 || scene.opaque_blocked(p0, p1, &skip) {
            return None;
        }
    }
    Some(ReflectedPath { bounces, length })
}

/// Visibility of every grid cell at one prediction height, per anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityMap {
    pub grid: GridSpec,
    pub height: f64,
    pub anchor_ids: Vec<u8>,
    /// `states[k][cell]` for anchor `anchor_ids[k]`.
    pub states: Vec<Vec<VisibilityState>>,
}

impl VisibilityMap {
    pub fn state(&self, anchor_id: u8, cell: usize) -> Option<VisibilityState> {
        let k = self.anchor_ids.iter().position(|&id| id == anchor_id)?;
        self.states[k].get(cell).copied()
    }

    /// States of all anchors at one cell, in `anchor_ids` order.
    pub fn cell_states(&self, cell: usize) -> Vec<VisibilityState> {
        self.states.iter().map(|s| s[cell]).collect()
    }

    pub fn count(&self, state: VisibilityState) -> usize {
        self.states
            .iter()
            .map(|s| s.iter().filter(|&&v| v == state).count())
            .sum()
    }

    pub fn total(&self) -> usize {
        self.states.iter().map(Vec::len).sum()
    }

    /// Fraction of (anchor, cell) pairs in `state`.
    pub fn fraction(&self, state: VisibilityState) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.count(state) as f64 / total as f64
        }
    }

    /// Debug rendering of one anchor: one text line per grid row (front row
    /// first), one digit per cell.
    pub fn render_text(&self, anchor_id: u8) -> Option<String> {
        let k = self.anchor_ids.iter().position(|&id| id == anchor_id)?;
        let mut out = String::with_capacity(self.grid.len() + self.grid.ny);
        for iy in 0..self.grid.ny {
            for ix in 0..self.grid.nx {
                let _ = write!(out, "{}", self.states[k][iy * self.grid.nx + ix].code());
            }
            out.push('\n');
        }
        Some(out)
    }
}

/// Classifies every cell center of the grid at `height` against every anchor.
pub fn visibility_map(
    scene: &Scene,
    height: f64,
    params: &VisibilityParams,
) -> Result<VisibilityMap, VisibilityError> {
    params.validate()?;
    if !scene.grid.has_height(height) {
        return Err(VisibilityError::UnknownHeight(height));
    }
    let grid = &scene.grid;
    let states = scene
        .anchors
        .iter()
        .map(|anchor| {
            (0..grid.len())
                .into_par_iter()
                .map(|cell| classify(scene, anchor, grid.cell_center(cell, height), params))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(VisibilityMap {
        grid: grid.clone(),
        height,
        anchor_ids: scene.anchors.iter().map(|a| a.id).collect(),
        states,
    })
}
