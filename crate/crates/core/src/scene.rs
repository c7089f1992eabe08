//! Box-world model of a single-aisle cabin.
//!
//! The cabin frame has `x` across the aisle, `y` along the fuselage (front at
//! low `y`) and `z` up from the cabin floor, all in meters. Every obstacle is an
//! axis-aligned box tagged with a material class.

use std::fmt::{self, Write as _};
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("invalid scene configuration: {0}")]
    Config(String),
    #[error("degenerate segment: both endpoints are {0}")]
    DegenerateSegment(Point3),
    #[error("non-finite coordinate in {0}")]
    NonFinite(Point3),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        (*self - *other).norm()
    }

    pub fn axis(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.x,
            Axis::Y => self.y,
            Axis::Z => self.z,
        }
    }

    pub fn with_axis(mut self, axis: Axis, value: f64) -> Self {
        match axis {
            Axis::X => self.x = value,
            Axis::Y => self.y = value,
            Axis::Z => self.z = value,
        }
        self
    }
}

impl fmt::Display for Point3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.3}, {:.3}, {:.3})", self.x, self.y, self.z)
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, rhs: Point3) -> Point3 {
        Point3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, rhs: Point3) -> Point3 {
        Point3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];
}

/// Closed axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn new(min: Point3, max: Point3) -> Result<Self, SceneError> {
        if !min.is_finite() {
            return Err(SceneError::NonFinite(min));
        }
        if !max.is_finite() {
            return Err(SceneError::NonFinite(max));
        }
        if Axis::ALL.iter().any(|&a| min.axis(a) >= max.axis(a)) {
            return Err(SceneError::Config(format!(
                "box corners {min} / {max} are not strictly ordered"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, p: &Point3) -> bool {
        Axis::ALL
            .iter()
            .all(|&a| p.axis(a) >= self.min.axis(a) && p.axis(a) <= self.max.axis(a))
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        self.contains(&other.min) && self.contains(&other.max)
    }

    /// Parameter interval `[t_in, t_out]` within `[0, 1]` over which the closed
    /// segment `a + t (b - a)` lies inside the closed box.
    pub fn segment_interval(&self, a: &Point3, b: &Point3) -> Option<(f64, f64)> {
        let mut t_in = 0.0_f64;
        let mut t_out = 1.0_f64;
        for axis in Axis::ALL {
            let origin = a.axis(axis);
            let dir = b.axis(axis) - origin;
            let lo = self.min.axis(axis);
            let hi = self.max.axis(axis);
            if dir == 0.0 {
                if origin < lo || origin > hi {
                    return None;
                }
                continue;
            }
            let mut t0 = (lo - origin) / dir;
            let mut t1 = (hi - origin) / dir;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            t_in = t_in.max(t0);
            t_out = t_out.min(t1);
            if t_in > t_out {
                return None;
            }
        }
        Some((t_in, t_out))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObstacleId(pub u32);

impl fmt::Display for ObstacleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Radio material class of an obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Material {
    /// The direct path penetrates it (seats, bodies).
    Transmissive,
    /// The direct path is blocked (shell, monuments).
    Opaque,
}

/// What an obstacle represents; used for export and for PAX bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObstacleRole {
    Shell,
    Monument,
    SeatCushion,
    Backrest,
    Pax,
}

impl ObstacleRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            ObstacleRole::Shell => "shell",
            ObstacleRole::Monument => "monument",
            ObstacleRole::SeatCushion => "cushion",
            ObstacleRole::Backrest => "backrest",
            ObstacleRole::Pax => "pax",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    pub id: ObstacleId,
    pub aabb: Aabb,
    pub kind: Material,
    pub reflective: bool,
    pub role: ObstacleRole,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub id: u8,
    pub position: Point3,
}

/// Anchor positions of the reference installation (meters, cabin frame).
pub const DEFAULT_ANCHORS: [(u8, [f64; 3]); 8] = [
    (1, [-1.36, 11.11, 1.50]),
    (2, [1.37, 13.77, 1.50]),
    (3, [-1.33, 16.55, 1.50]),
    (4, [1.33, 19.28, 1.50]),
    (5, [-1.36, 21.99, 1.50]),
    (6, [1.33, 24.69, 1.50]),
    (7, [-1.32, 27.41, 1.50]),
    (8, [1.35, 30.06, 1.50]),
];

/// Receiver grid. `origin` is the lower `(x, y)` corner of cell 0; cell
/// centers sit half a resolution inside. Cells are indexed row-major with `x`
/// varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Point3,
    pub resolution: f64,
    pub nx: usize,
    pub ny: usize,
    pub heights: Vec<f64>,
}

impl GridSpec {
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_xy(&self, index: usize) -> (f64, f64) {
        let ix = index % self.nx;
        let iy = index / self.nx;
        (
            self.origin.x + (ix as f64 + 0.5) * self.resolution,
            self.origin.y + (iy as f64 + 0.5) * self.resolution,
        )
    }

    pub fn cell_center(&self, index: usize, height: f64) -> Point3 {
        let (x, y) = self.cell_xy(index);
        Point3::new(x, y, height)
    }

    /// Index of the cell containing `(x, y)`, if any.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<usize> {
        let fx = ((x - self.origin.x) / self.resolution).floor();
        let fy = ((y - self.origin.y) / self.resolution).floor();
        if fx < 0.0 || fy < 0.0 {
            return None;
        }
        let (ix, iy) = (fx as usize, fy as usize);
        (ix < self.nx && iy < self.ny).then(|| iy * self.nx + ix)
    }

    pub fn has_height(&self, height: f64) -> bool {
        self.heights.iter().any(|h| (h - height).abs() < 1e-9)
    }

    pub fn x_extent(&self) -> (f64, f64) {
        (self.origin.x, self.origin.x + self.nx as f64 * self.resolution)
    }

    pub fn y_extent(&self) -> (f64, f64) {
        (self.origin.y, self.origin.y + self.ny as f64 * self.resolution)
    }
}

/// A passenger seat. `position` is where a seated passenger's body is centered
/// (floor level).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Seat {
    pub row: u32,
    pub letter: char,
    pub position: Point3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub bounds: Aabb,
    pub obstacles: Vec<Obstacle>,
    pub anchors: Vec<Anchor>,
    pub grid: GridSpec,
    pub seats: Vec<Seat>,
    /// Aisle centerline `x`.
    pub aisle_x: f64,
    /// Aisle `y` at which boarding passengers enter.
    pub door_y: f64,
    pub pax_box: [f64; 3],
}

/// One obstacle hit by a segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub id: ObstacleId,
    pub kind: Material,
    pub t_enter: f64,
}

/// Material summary of a direct path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathClass {
    Clear,
    TransmissiveOnly,
    OpaqueBlocked,
}

impl Scene {
    pub fn anchor(&self, id: u8) -> Option<&Anchor> {
        self.anchors.iter().find(|a| a.id == id)
    }

    pub fn obstacle(&self, id: ObstacleId) -> Option<&Obstacle> {
        self.obstacles.iter().find(|o| o.id == id)
    }

    fn next_obstacle_id(&self) -> u32 {
        self.obstacles.iter().map(|o| o.id.0 + 1).max().unwrap_or(0)
    }

    /// Every obstacle touched by the closed segment `a..b`, ordered by entry
    /// parameter (ties by id).
    pub fn segment_crossings(&self, a: Point3, b: Point3) -> Result<Vec<Crossing>, SceneError> {
        check_segment(a, b)?;
        let mut hits: Vec<Crossing> = self
            .obstacles
            .iter()
            .filter_map(|o| {
                o.aabb.segment_interval(&a, &b).map(|(t_enter, _)| Crossing {
                    id: o.id,
                    kind: o.kind,
                    t_enter,
                })
            })
            .collect();
        hits.sort_by(|l, r| l.t_enter.total_cmp(&r.t_enter).then(l.id.cmp(&r.id)));
        Ok(hits)
    }

    /// Material class of the direct path, ignoring the obstacles in `exclude`.
    /// Stops at the first opaque hit.
    pub fn path_class(&self, a: Point3, b: Point3, exclude: &[ObstacleId]) -> PathClass {
        let mut class = PathClass::Clear;
        for o in &self.obstacles {
            if exclude.contains(&o.id) || o.aabb.segment_interval(&a, &b).is_none() {
                continue;
            }
            match o.kind {
                Material::Opaque => return PathClass::OpaqueBlocked,
                Material::Transmissive => class = PathClass::TransmissiveOnly,
            }
        }
        class
    }

    /// True if the segment touches any opaque obstacle not in `exclude`.
    pub fn opaque_blocked(&self, a: Point3, b: Point3, exclude: &[ObstacleId]) -> bool {
        self.obstacles.iter().any(|o| {
            o.kind == Material::Opaque
                && !exclude.contains(&o.id)
                && o.aabb.segment_interval(&a, &b).is_some()
        })
    }

    /// Box of a standing or seated passenger centered at `p` (floor level).
    pub fn pax_aabb(&self, p: &Point3) -> Aabb {
        let [w, d, h] = self.pax_box;
        let min = Point3::new(
            (p.x - w / 2.0).max(self.bounds.min.x),
            (p.y - d / 2.0).max(self.bounds.min.y),
            self.bounds.min.z.max(0.0),
        );
        let max = Point3::new(
            (p.x + w / 2.0).min(self.bounds.max.x),
            (p.y + d / 2.0).min(self.bounds.max.y),
            h.min(self.bounds.max.z),
        );
        Aabb { min, max }
    }

    /// New scene with one transmissive body box per passenger position. The
    /// new obstacles get consecutive ids in input order.
    pub fn add_pax_obstacles(&self, pax_positions: &[Point3]) -> Scene {
        let mut scene = self.clone();
        let first = self.next_obstacle_id();
        scene
            .obstacles
            .extend(pax_positions.iter().enumerate().map(|(i, p)| Obstacle {
                id: ObstacleId(first + i as u32),
                aabb: self.pax_aabb(p),
                kind: Material::Transmissive,
                reflective: false,
                role: ObstacleRole::Pax,
            }));
        scene
    }

    /// Plain-text box list, one obstacle per line:
    /// `id role kind reflective min_x min_y min_z max_x max_y max_z`.
    pub fn export_boxes(&self) -> String {
        let mut out = String::from("# id role kind reflective min_x min_y min_z max_x max_y max_z\n");
        for o in &self.obstacles {
            let kind = match o.kind {
                Material::Transmissive => "transmissive",
                Material::Opaque => "opaque",
            };
            let _ = writeln!(
                out,
                "{} {} {} {} {:.3} {:.3} {:.3} {:.3} {:.3} {:.3}",
                o.id.0,
                o.role.as_str(),
                kind,
                u8::from(o.reflective),
                o.aabb.min.x,
                o.aabb.min.y,
                o.aabb.min.z,
                o.aabb.max.x,
                o.aabb.max.y,
                o.aabb.max.z
            );
        }
        out
    }
}

fn check_segment(a: Point3, b: Point3) -> Result<(), SceneError> {
    if !a.is_finite() {
        return Err(SceneError::NonFinite(a));
    }
    if !b.is_finite() {
        return Err(SceneError::NonFinite(b));
    }
    if a == b {
        return Err(SceneError::DegenerateSegment(a));
    }
    Ok(())
}

/// Dimensions of the procedural cabin. Defaults follow public A320 interior
/// figures (3-3 single aisle, 31 in pitch); the exact CAD dimensions are not
/// available, so every value here is an assumption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub rows: u32,
    pub first_row_y: f64,
    pub seat_pitch: f64,
    pub seat_width: f64,
    pub seats_per_side: u32,
    pub aisle_width: f64,
    /// Half of the inner shell width.
    pub cabin_half_width: f64,
    pub cabin_front_y: f64,
    pub cabin_rear_y: f64,
    pub ceiling_height: f64,
    pub shell_thickness: f64,
    pub cushion_depth: f64,
    pub cushion_bottom: f64,
    pub cushion_top: f64,
    pub backrest_thickness: f64,
    pub backrest_top: f64,
    /// Depth (along `y`) of the galley/lavatory block at the front.
    pub front_monument_depth: f64,
    /// Depth of the rear galley.
    pub rear_monument_depth: f64,
    pub door_y: f64,
    pub grid_y_min: f64,
    pub grid_y_max: f64,
    pub grid_resolution: f64,
    pub heights: Vec<f64>,
    /// Passenger body box `[width, depth, height]`.
    pub pax_box: [f64; 3],
    /// Replaces the default anchor table when non-empty: `[id, x, y, z]`.
    pub anchors: Vec<[f64; 4]>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            rows: 26,
            first_row_y: 9.30,
            seat_pitch: 0.79,
            seat_width: 0.50,
            seats_per_side: 3,
            aisle_width: 0.50,
            cabin_half_width: 1.85,
            cabin_front_y: 4.0,
            cabin_rear_y: 34.0,
            ceiling_height: 2.20,
            shell_thickness: 0.05,
            cushion_depth: 0.45,
            cushion_bottom: 0.25,
            cushion_top: 0.48,
            backrest_thickness: 0.30,
            backrest_top: 1.10,
            front_monument_depth: 2.0,
            rear_monument_depth: 2.5,
            door_y: 7.0,
            grid_y_min: 6.5,
            grid_y_max: 30.5,
            grid_resolution: 0.10,
            heights: vec![0.70, 1.12],
            pax_box: [0.5, 0.5, 1.8],
            anchors: Vec::new(),
        }
    }
}

impl SceneConfig {
    fn validate(&self) -> Result<(), SceneError> {
        let positive = [
            ("seat_pitch", self.seat_pitch),
            ("seat_width", self.seat_width),
            ("aisle_width", self.aisle_width),
            ("cabin_half_width", self.cabin_half_width),
            ("ceiling_height", self.ceiling_height),
            ("shell_thickness", self.shell_thickness),
            ("cushion_depth", self.cushion_depth),
            ("backrest_thickness", self.backrest_thickness),
            ("grid_resolution", self.grid_resolution),
            ("front_monument_depth", self.front_monument_depth),
            ("rear_monument_depth", self.rear_monument_depth),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SceneError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.pax_box.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(SceneError::Config("pax_box dimensions must be positive".into()));
        }
        if self.cabin_rear_y <= self.cabin_front_y {
            return Err(SceneError::Config("cabin_rear_y must exceed cabin_front_y".into()));
        }
        if !(self.cushion_bottom < self.cushion_top && self.cushion_top < self.backrest_top) {
            return Err(SceneError::Config(
                "expected cushion_bottom < cushion_top < backrest_top".into(),
            ));
        }
        if self.backrest_top >= self.ceiling_height {
            return Err(SceneError::Config("backrest must be below the ceiling".into()));
        }
        let block = self.seats_per_side as f64 * self.seat_width;
        if self.aisle_width / 2.0 + block > self.cabin_half_width {
            return Err(SceneError::Config("seat blocks do not fit inside the shell".into()));
        }
        let rows_end = self.first_row_y
            + self.rows.saturating_sub(1) as f64 * self.seat_pitch
            + self.cushion_depth
            + self.backrest_thickness;
        let front_end = self.cabin_front_y + self.front_monument_depth;
        let rear_start = self.cabin_rear_y - self.rear_monument_depth;
        if self.rows > 0 && (self.first_row_y < front_end || rows_end > rear_start) {
            return Err(SceneError::Config(
                "seat rows overlap the cabin monuments".into(),
            ));
        }
        if self.grid_y_min < front_end || self.grid_y_max > rear_start || self.grid_y_max <= self.grid_y_min {
            return Err(SceneError::Config(
                "grid must lie between the monuments".into(),
            ));
        }
        if !(front_end..=rear_start).contains(&self.door_y) {
            return Err(SceneError::Config("door_y must be between the monuments".into()));
        }
        if self.heights.is_empty()
            || self
                .heights
                .iter()
                .any(|h| !(h.is_finite() && *h > 0.0 && *h < self.ceiling_height))
        {
            return Err(SceneError::Config(
                "heights must be non-empty and within (0, ceiling)".into(),
            ));
        }
        Ok(())
    }
}

/// Builds the simplified cabin: reflective opaque shell, opaque front and rear
/// monuments, a transmissive cushion and backrest per seat, and the anchors.
pub fn build_a320_scene(config: &SceneConfig) -> Result<Scene, SceneError> {
    config.validate()?;
    let c = config;
    let hw = c.cabin_half_width;
    let th = c.shell_thickness;
    let bounds = Aabb::new(
        Point3::new(-hw - th, c.cabin_front_y - th, -th),
        Point3::new(hw + th, c.cabin_rear_y + th, c.ceiling_height + th),
    )?;

    let mut obstacles = Vec::new();
    let mut push = |aabb: Aabb, kind: Material, reflective: bool, role: ObstacleRole| {
        let id = ObstacleId(obstacles.len() as u32);
        obstacles.push(Obstacle {
            id,
            aabb,
            kind,
            reflective,
            role,
        });
    };

    let (bmin, bmax) = (bounds.min, bounds.max);
    let shell = [
        // floor, ceiling
        (Point3::new(bmin.x, bmin.y, bmin.z), Point3::new(bmax.x, bmax.y, 0.0)),
        (Point3::new(bmin.x, bmin.y, c.ceiling_height), Point3::new(bmax.x, bmax.y, bmax.z)),
        // left, right side walls
        (Point3::new(bmin.x, bmin.y, 0.0), Point3::new(-hw, bmax.y, c.ceiling_height)),
        (Point3::new(hw, bmin.y, 0.0), Point3::new(bmax.x, bmax.y, c.ceiling_height)),
        // front, rear bulkheads
        (Point3::new(-hw, bmin.y, 0.0), Point3::new(hw, c.cabin_front_y, c.ceiling_height)),
        (Point3::new(-hw, c.cabin_rear_y, 0.0), Point3::new(hw, bmax.y, c.ceiling_height)),
    ];
    for (min, max) in shell {
        push(Aabb::new(min, max)?, Material::Opaque, true, ObstacleRole::Shell);
    }

    let ha = c.aisle_width / 2.0;
    let front_end = c.cabin_front_y + c.front_monument_depth;
    // galley (left) and lavatory (right) either side of the door area
    for (x0, x1) in [(-hw, -ha), (ha, hw)] {
        push(
            Aabb::new(
                Point3::new(x0, c.cabin_front_y, 0.0),
                Point3::new(x1, front_end, c.ceiling_height),
            )?,
            Material::Opaque,
            false,
            ObstacleRole::Monument,
        );
    }
    push(
        Aabb::new(
            Point3::new(-hw, c.cabin_rear_y - c.rear_monument_depth, 0.0),
            Point3::new(hw, c.cabin_rear_y, c.ceiling_height),
        )?,
        Material::Opaque,
        false,
        ObstacleRole::Monument,
    );

    let mut seats = Vec::new();
    let letters_left = ['A', 'B', 'C'];
    let letters_right = ['D', 'E', 'F'];
    for row in 0..c.rows {
        let y0 = c.first_row_y + row as f64 * c.seat_pitch;
        let y_back = y0 + c.cushion_depth;
        for side in [-1.0_f64, 1.0] {
            for k in 0..c.seats_per_side {
                // k = 0 is the aisle seat
                let inner = ha + k as f64 * c.seat_width;
                let outer = inner + c.seat_width;
                let (x0, x1) = if side < 0.0 { (-outer, -inner) } else { (inner, outer) };
                push(
                    Aabb::new(
                        Point3::new(x0, y0, c.cushion_bottom),
                        Point3::new(x1, y_back, c.cushion_top),
                    )?,
                    Material::Transmissive,
                    false,
                    ObstacleRole::SeatCushion,
                );
                push(
                    Aabb::new(
                        Point3::new(x0, y_back, c.cushion_bottom),
                        Point3::new(x1, y_back + c.backrest_thickness, c.backrest_top),
                    )?,
                    Material::Transmissive,
                    false,
                    ObstacleRole::Backrest,
                );
                let idx = (c.seats_per_side - 1 - k) as usize;
                let letter = if side < 0.0 {
                    letters_left.get(idx).copied().unwrap_or('?')
                } else {
                    letters_right
                        .get(k as usize)
                        .copied()
                        .unwrap_or('?')
                };
                seats.push(Seat {
                    row: row + 1,
                    letter,
                    position: Point3::new((x0 + x1) / 2.0, y0 + c.cushion_depth / 2.0, 0.0),
                });
            }
        }
    }
    seats.sort_by(|l, r| l.row.cmp(&r.row).then(l.letter.cmp(&r.letter)));

    let anchors: Vec<Anchor> = if c.anchors.is_empty() {
        DEFAULT_ANCHORS
            .iter()
            .map(|&(id, [x, y, z])| Anchor {
                id,
                position: Point3::new(x, y, z),
            })
            .collect()
    } else {
        c.anchors
            .iter()
            .map(|&[id, x, y, z]| {
                if !(1.0..=255.0).contains(&id) || id.fract() != 0.0 {
                    return Err(SceneError::Config(format!("invalid anchor id {id}")));
                }
                Ok(Anchor {
                    id: id as u8,
                    position: Point3::new(x, y, z),
                })
            })
            .collect::<Result<_, _>>()?
    };
    let mut ids: Vec<u8> = anchors.iter().map(|a| a.id).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != anchors.len() {
        return Err(SceneError::Config("anchor ids must be unique".into()));
    }
    let interior = Aabb::new(
        Point3::new(-hw, c.cabin_front_y, 0.0),
        Point3::new(hw, c.cabin_rear_y, c.ceiling_height),
    )?;
    if let Some(a) = anchors.iter().find(|a| !interior.contains(&a.position)) {
        return Err(SceneError::Config(format!(
            "anchor {} at {} lies outside the cabin",
            a.id, a.position
        )));
    }

    let res = c.grid_resolution;
    let nx = ((2.0 * (hw - th.max(res))) / res + 1e-9).floor() as usize;
    let ny = ((c.grid_y_max - c.grid_y_min) / res).round() as usize;
    let grid = GridSpec {
        origin: Point3::new(-(nx as f64) * res / 2.0, c.grid_y_min, 0.0),
        resolution: res,
        nx,
        ny,
        heights: c.heights.clone(),
    };

    Ok(Scene {
        bounds,
        obstacles,
        anchors,
        grid,
        seats,
        aisle_x: 0.0,
        door_y: c.door_y,
        pax_box: c.pax_box,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box_scene(kind: Material) -> Scene {
        let mut scene = build_a320_scene(&SceneConfig {
            rows: 0,
            ..Default::default()
        })
        .unwrap();
        scene.obstacles.clear();
        scene.obstacles.push(Obstacle {
            id: ObstacleId(0),
            aabb: Aabb::new(Point3::new(-0.5, 9.5, 0.5), Point3::new(0.5, 10.5, 1.5)).unwrap(),
            kind,
            reflective: false,
            role: ObstacleRole::Monument,
        });
        scene
    }

    #[test]
    fn default_anchors_match_reference_table() {
        let scene = build_a320_scene(&SceneConfig::default()).unwrap();
        assert_eq!(scene.anchors.len(), 8);
        assert_eq!(scene.anchors[0].id, 1);
        assert_eq!(scene.anchors[0].position, Point3::new(-1.36, 11.11, 1.50));
        assert_eq!(scene.anchors[7].position, Point3::new(1.35, 30.06, 1.50));
        assert!(scene.anchors.iter().all(|a| a.position.z == 1.50));
    }

    #[test]
    fn zero_rows_leaves_shell_and_monuments_only() {
        let scene = build_a320_scene(&SceneConfig {
            rows: 0,
            ..Default::default()
        })
        .unwrap();
        assert!(scene.seats.is_empty());
        assert!(scene
            .obstacles
            .iter()
            .all(|o| matches!(o.role, ObstacleRole::Shell | ObstacleRole::Monument)));
        assert_eq!(scene.anchors.len(), 8);
    }

    #[test]
    fn seat_boxes_strictly_inside_shell() {
        let scene = build_a320_scene(&SceneConfig::default()).unwrap();
        let c = SceneConfig::default();
        let inner = Aabb::new(
            Point3::new(-c.cabin_half_width, c.cabin_front_y, 0.0),
            Point3::new(c.cabin_half_width, c.cabin_rear_y, c.ceiling_height),
        )
        .unwrap();
        let seat_boxes: Vec<_> = scene
            .obstacles
            .iter()
            .filter(|o| matches!(o.role, ObstacleRole::SeatCushion | ObstacleRole::Backrest))
            .collect();
        assert_eq!(seat_boxes.len(), 26 * 6 * 2);
        for o in seat_boxes {
            for axis in Axis::ALL {
                assert!(o.aabb.min.axis(axis) > inner.min.axis(axis));
                assert!(o.aabb.max.axis(axis) < inner.max.axis(axis));
            }
            assert!(o.kind == Material::Transmissive);
        }
        assert_eq!(scene.seats.len(), 156);
    }

    #[test]
    fn shell_is_opaque_and_reflective() {
        let scene = build_a320_scene(&SceneConfig::default()).unwrap();
        let shell: Vec<_> = scene
            .obstacles
            .iter()
            .filter(|o| o.role == ObstacleRole::Shell)
            .collect();
        assert_eq!(shell.len(), 6);
        assert!(shell.iter().all(|o| o.reflective && o.kind == Material::Opaque));
        assert!(scene.obstacles.iter().all(|o| scene.bounds.contains_box(&o.aabb)));
    }

    #[test]
    fn invalid_config_rejected() {
        for cfg in [
            SceneConfig {
                seat_pitch: 0.0,
                ..Default::default()
            },
            SceneConfig {
                aisle_width: -1.0,
                ..Default::default()
            },
            SceneConfig {
                rows: 60,
                ..Default::default()
            },
            SceneConfig {
                anchors: vec![[1.0, 0.0, 10.0, 1.5], [1.0, 0.5, 12.0, 1.5]],
                ..Default::default()
            },
        ] {
            assert!(matches!(build_a320_scene(&cfg), Err(SceneError::Config(_))));
        }
    }

    #[test]
    fn segment_outside_all_boxes_is_empty() {
        let scene = unit_box_scene(Material::Opaque);
        let hits = scene
            .segment_crossings(Point3::new(-1.0, 5.0, 1.0), Point3::new(1.0, 6.0, 1.0))
            .unwrap();
        assert!(hits.is_empty());
    }

    #[test]
    fn segment_through_centered_box() {
        let scene = unit_box_scene(Material::Transmissive);
        let hits = scene
            .segment_crossings(Point3::new(0.0, 8.0, 1.0), Point3::new(0.0, 12.0, 1.0))
            .unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].id, ObstacleId(0));
        assert_eq!(hits[0].kind, Material::Transmissive);
        assert!((hits[0].t_enter - 0.375).abs() < 1e-12);
    }

    #[test]
    fn touching_a_face_counts() {
        let scene = unit_box_scene(Material::Opaque);
        // ends exactly on the face y = 9.5
        let hits = scene
            .segment_crossings(Point3::new(0.0, 8.0, 1.0), Point3::new(0.0, 9.5, 1.0))
            .unwrap();
        assert_eq!(hits.len(), 1);
    }

    #[test]
    fn degenerate_segment_is_an_error() {
        let scene = unit_box_scene(Material::Opaque);
        let p = Point3::new(0.0, 1.0, 1.0);
        assert_eq!(
            scene.segment_crossings(p, p),
            Err(SceneError::DegenerateSegment(p))
        );
    }

    #[test]
    fn crossings_ordered_by_entry() {
        let mut scene = unit_box_scene(Material::Opaque);
        scene.obstacles.push(Obstacle {
            id: ObstacleId(1),
            aabb: Aabb::new(Point3::new(-0.5, 7.0, 0.5), Point3::new(0.5, 8.0, 1.5)).unwrap(),
            kind: Material::Transmissive,
            reflective: false,
            role: ObstacleRole::Monument,
        });
        let hits = scene
            .segment_crossings(Point3::new(0.0, 6.0, 1.0), Point3::new(0.0, 12.0, 1.0))
            .unwrap();
        let ids: Vec<_> = hits.iter().map(|h| h.id.0).collect();
        assert_eq!(ids, vec![1, 0]);
        let back = scene
            .segment_crossings(Point3::new(0.0, 12.0, 1.0), Point3::new(0.0, 6.0, 1.0))
            .unwrap();
        assert_eq!(back.iter().map(|h| h.id.0).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn add_pax_is_pure_and_counts() {
        let scene = build_a320_scene(&SceneConfig::default()).unwrap();
        assert_eq!(scene.add_pax_obstacles(&[]), scene);
        let one = scene.add_pax_obstacles(&[Point3::new(0.0, 15.0, 0.0)]);
        assert_eq!(one.obstacles.len(), scene.obstacles.len() + 1);
        let last = one.obstacles.last().unwrap();
        assert_eq!(last.kind, Material::Transmissive);
        assert_eq!(last.role, ObstacleRole::Pax);
        assert!(one.bounds.contains_box(&last.aabb));
        assert_eq!(one, scene.add_pax_obstacles(&[Point3::new(0.0, 15.0, 0.0)]));
    }

    #[test]
    fn full_cabin_of_pax_inside_bounds() {
        let scene = build_a320_scene(&SceneConfig::default()).unwrap();
        let positions: Vec<_> = scene.seats.iter().take(148).map(|s| s.position).collect();
        let full = scene.add_pax_obstacles(&positions);
        let pax: Vec<_> = full
            .obstacles
            .iter()
            .filter(|o| o.role == ObstacleRole::Pax)
            .collect();
        assert_eq!(pax.len(), 148);
        assert!(pax.iter().all(|o| full.bounds.contains_box(&o.aabb)));
    }

    #[test]
    fn grid_cells_are_regular() {
        let scene = build_a320_scene(&SceneConfig::default()).unwrap();
        let g = &scene.grid;
        assert_eq!(g.nx, 35);
        assert_eq!(g.ny, 240);
        let (x0, y0) = g.cell_xy(0);
        let (x1, _) = g.cell_xy(1);
        let (_, y1) = g.cell_xy(g.nx);
        assert!((x1 - x0 - g.resolution).abs() < 1e-12);
        assert!((y1 - y0 - g.resolution).abs() < 1e-12);
        for i in [0, 17, g.len() - 1] {
            let (x, y) = g.cell_xy(i);
            assert_eq!(g.cell_of(x, y), Some(i));
        }
        let (lo, hi) = g.x_extent();
        assert!(lo > -1.85 && hi < 1.85);
    }

    #[test]
    fn export_lists_every_obstacle() {
        let scene = build_a320_scene(&SceneConfig {
            rows: 1,
            ..Default::default()
        })
        .unwrap();
        let text = scene.export_boxes();
        assert_eq!(text.lines().count(), scene.obstacles.len() + 1);
        assert!(text.lines().nth(1).unwrap().starts_with("0 shell opaque 1 "));
    }
}
