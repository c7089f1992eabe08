//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use cabin_rps::gridfilter::{Belief, LikelihoodModel, StateGrid};
use cabin_rps::ranging::RangeObservation;
use cabin_rps::scene::{build_a320_scene, Aabb, Anchor, Material, Obstacle, ObstacleId, ObstacleRole, Point3, Scene, SceneConfig};

pub fn default_scene() -> Scene {
    build_a320_scene(&SceneConfig::default()).unwrap()
}

/// Default cabin extent and anchors without any obstacle.
pub fn empty_scene() -> Scene {
    let mut s = default_scene();
    s.obstacles.clear();
    s
}

pub fn boxed(id: u32, min: [f64; 3], max: [f64; 3], kind: Material, reflective: bool) -> Obstacle {
    Obstacle {
        id: ObstacleId(id),
        aabb: Aabb::new(Point3::new(min[0], min[1], min[2]), Point3::new(max[0], max[1], max[2])).unwrap(),
        kind,
        reflective,
        role: ObstacleRole::Monument,
    }
}

fn inside(min: [f64; 3], max: [f64; 3], p: [f64; 3]) -> bool {
    (0..3).all(|i| p[i] >= min[i] && p[i] <= max[i])
}

fn arr(p: Point3) -> [f64; 3] {
    [p.x, p.y, p.z]
}

/// Point-marching oracle for segment/box intersection.
///
/// `inner`: boxes containing at least one of `n + 1` equally spaced points
/// of the segment. `outer`: boxes that contain a marched point once inflated
/// by the march spacing, which any box touched by the segment must do.
/// A correct intersection routine returns a set between the two.
pub struct MarchResult {
    pub inner: BTreeSet<u32>,
    pub outer: BTreeSet<u32>,
    /// First marched parameter inside each inner box.
    pub first_t: Vec<(u32, f64)>,
}

pub fn march(scene: &Scene, a: Point3, b: Point3, n: usize) -> MarchResult {
    let (pa, pb) = (arr(a), arr(b));
    let len = a.distance(&b);
    let pad = len / n as f64;
    let seg_lo: Vec<f64> = (0..3).map(|i| pa[i].min(pb[i])).collect();
    let seg_hi: Vec<f64> = (0..3).map(|i| pa[i].max(pb[i])).collect();
    let mut inner = BTreeSet::new();
    let mut outer = BTreeSet::new();
    let mut first_t = Vec::new();
    for o in &scene.obstacles {
        let min = arr(o.aabb.min);
        let max = arr(o.aabb.max);
        let fat_min = [min[0] - pad, min[1] - pad, min[2] - pad];
        let fat_max = [max[0] + pad, max[1] + pad, max[2] + pad];
        // cheap rejection: the segment's bounding box misses the fat box
        if (0..3).any(|i| seg_hi[i] < fat_min[i] || seg_lo[i] > fat_max[i]) {
            continue;
        }
        let mut hit_inner = None;
        let mut hit_outer = false;
        for k in 0..=n {
            let t = k as f64 / n as f64;
            let p = [
                pa[0] + t * (pb[0] - pa[0]),
                pa[1] + t * (pb[1] - pa[1]),
                pa[2] + t * (pb[2] - pa[2]),
            ];
            if hit_inner.is_none() && inside(min, max, p) {
                hit_inner = Some(t);
            }
            if inside(fat_min, fat_max, p) {
                hit_outer = true;
            }
            if hit_inner.is_some() && hit_outer {
                break;
            }
        }
        if let Some(t) = hit_inner {
            inner.insert(o.id.0);
            first_t.push((o.id.0, t));
        }
        if hit_outer {
            outer.insert(o.id.0);
        }
    }
    MarchResult { inner, outer, first_t }
}

/// Per-cell posterior written out directly: prior times every likelihood
/// factor, then normalized.
pub fn brute_force_update(
    prior: &Belief,
    observations: &[RangeObservation],
    anchors: &[Anchor],
    grid: &StateGrid,
    lm: &LikelihoodModel,
) -> Vec<f64> {
    let norm_const = lm.sigma_l * (2.0 * std::f64::consts::PI).sqrt();
    let mut w: Vec<f64> = Vec::with_capacity(grid.len());
    for (m, cell) in grid.cells.iter().enumerate() {
        let mut v = prior.p[m];
        for o in observations {
            let Some(r) = o.range else { continue };
            let a = anchors.iter().find(|a| a.id == o.anchor_id).unwrap();
            let d = ((a.position.x - cell.x).powi(2) + (a.position.y - cell.y).powi(2) + (a.position.z - cell.z).powi(2)).sqrt();
            let z = (r - d) / lm.sigma_l;
            let gauss = (-0.5 * z * z).exp() / norm_const;
            v *= (1.0 - lm.w_robust) * gauss + lm.w_robust / lm.dmax;
        }
        w.push(v);
    }
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

/// Direct 2D evaluation of the truncated separable Gaussian motion model:
/// each source cell spreads to every target within the cap on both axes with
/// weight g(dx) g(dy), normalized over the targets that exist.
pub fn brute_force_predict(prior: &Belief, grid: &StateGrid, std: f64, cap: f64) -> Vec<f64> {
    let k = (cap / grid.resolution + 1e-9).floor() as i64;
    let g = |o: i64| (-0.5 * (o as f64 * grid.resolution / std).powi(2)).exp();
    let (nx, ny) = (grid.nx as i64, grid.ny as i64);
    let mut out = vec![0.0; grid.len()];
    for sy in 0..ny {
        for sx in 0..nx {
            let mass = prior.p[(sy * nx + sx) as usize];
            let mut targets = Vec::new();
            let mut total = 0.0;
            for dy in -k..=k {
                for dx in -k..=k {
                    let (tx, ty) = (sx + dx, sy + dy);
                    if tx < 0 || ty < 0 || tx >= nx || ty >= ny {
                        continue;
                    }
                    let w = g(dx) * g(dy);
                    total += w;
                    targets.push(((ty * nx + tx) as usize, w));
                }
            }
            for (t, w) in targets {
                out[t] += mass * w / total;
            }
        }
    }
    out
}

/// Outcome of comparing `segment_crossings` with the marching oracle.
#[derive(Debug, Default)]
pub struct SegmentCheck {
    pub segments: usize,
    pub unambiguous: usize,
    pub failures: Vec<String>,
}

/// Random segments inside the cabin bounds, a quarter of them axis-parallel.
pub fn check_segments(scene: &Scene, count: usize, seed: u64, n_march: usize) -> SegmentCheck {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (scene.bounds.min, scene.bounds.max);
    let point = |rng: &mut rand_chacha::ChaCha8Rng| {
        Point3::new(
            rng.random_range(lo.x..hi.x),
            rng.random_range(lo.y..hi.y),
            rng.random_range(lo.z..hi.z),
        )
    };
    let mut out = SegmentCheck::default();
    while out.segments < count {
        let a = point(&mut rng);
        let mut b = point(&mut rng);
        if out.segments % 4 == 3 {
            // keep two coordinates of `a`
            match out.segments % 3 {
                0 => b = Point3::new(b.x, a.y, a.z),
                1 => b = Point3::new(a.x, b.y, a.z),
                _ => b = Point3::new(a.x, a.y, b.z),
            }
        }
        if a == b {
            continue;
        }
        out.segments += 1;
        let hits = scene.segment_crossings(a, b).unwrap();
        let got: BTreeSet<u32> = hits.iter().map(|c| c.id.0).collect();
        let mut oracle = march(scene, a, b, n_march);
        if oracle.inner != oracle.outer {
            // near-grazing: refine before judging
            oracle = march(scene, a, b, n_march * 20);
        }
        let tag = format!("segment {a} -> {b}");
        if !oracle.inner.is_subset(&got) {
            out.failures.push(format!("{tag}: missed {:?}", oracle.inner.difference(&got).collect::<Vec<_>>()));
        }
        if !got.is_subset(&oracle.outer) {
            out.failures.push(format!("{tag}: spurious {:?}", got.difference(&oracle.outer).collect::<Vec<_>>()));
        }
        if oracle.inner == oracle.outer {
            out.unambiguous += 1;
            if got != oracle.inner {
                out.failures.push(format!("{tag}: unambiguous mismatch"));
            }
        }
        if hits.windows(2).any(|w| w[0].t_enter > w[1].t_enter) {
            out.failures.push(format!("{tag}: crossings not ordered"));
        }
        let step = 1.0 / n_march as f64; // coarsest spacing used
        for (id, t) in &oracle.first_t {
            if let Some(c) = hits.iter().find(|c| c.id.0 == *id) {
                if c.t_enter > t + 1e-12 || c.t_enter < t - step - 1e-12 {
                    out.failures.push(format!("{tag}: box {id} entered at {} but first marched inside at {t}", c.t_enter));
                }
            }
        }
    }
    out
}

/// Hand-built single-reflection fixtures: (scene, a, b, bounce point,
/// unfolded length). Each places an opaque blocker between `a` and `b` and
/// leaves exactly one reflective surface that can route around it.
pub fn reflection_fixtures() -> Vec<(&'static str, Scene, Point3, Point3, Point3, f64)> {
    let mut out = Vec::new();

    // side wall: pillar on the left half, reflective wall at x = 1.85
    let mut s = empty_scene();
    s.obstacles.push(boxed(0, [-2.0, 14.0, 0.0], [0.5, 16.0, 2.2], Material::Opaque, false));
    s.obstacles.push(boxed(1, [1.85, 3.9, 0.0], [2.0, 34.1, 2.2], Material::Opaque, true));
    let (a, b) = (Point3::new(-0.5, 12.0, 1.0), Point3::new(-0.5, 18.0, 1.0));
    // image of a: (2 * 1.85 + 0.5, 12, 1) = (4.2, 12, 1)
    let img = Point3::new(4.2, 12.0, 1.0);
    out.push(("side wall", s, a, b, Point3::new(1.85, 15.0, 1.0), img.distance(&b)));

    // ceiling: wall from the floor to 1.8 m, reflective ceiling at z = 2.2
    let mut s = empty_scene();
    s.obstacles.push(boxed(0, [-1.85, 14.9, 0.0], [1.85, 15.1, 1.8], Material::Opaque, false));
    s.obstacles.push(boxed(1, [-2.0, 3.9, 2.2], [2.0, 34.1, 2.3], Material::Opaque, true));
    let (a, b) = (Point3::new(0.0, 12.0, 1.0), Point3::new(0.0, 18.0, 1.0));
    let img = Point3::new(0.0, 12.0, 3.4);
    out.push(("ceiling", s, a, b, Point3::new(0.0, 15.0, 2.2), img.distance(&b)));

    // floor: curtain from 0.5 m up to the ceiling, reflective floor at z = 0
    let mut s = empty_scene();
    s.obstacles.push(boxed(0, [-1.85, 14.9, 0.5], [1.85, 15.1, 2.2], Material::Opaque, false));
    s.obstacles.push(boxed(1, [-2.0, 3.9, -0.1], [2.0, 34.1, 0.0], Material::Opaque, true));
    let (a, b) = (Point3::new(0.0, 12.0, 1.0), Point3::new(0.0, 18.0, 1.0));
    let img = Point3::new(0.0, 12.0, -1.0);
    out.push(("floor", s, a, b, Point3::new(0.0, 15.0, 0.0), img.distance(&b)));

    // asymmetric heights off the side wall: a at 1.5 m, b at 0.7 m
    let mut s = empty_scene();
    s.obstacles.push(boxed(0, [-2.0, 19.5, 0.0], [1.5, 20.5, 2.2], Material::Opaque, false));
    s.obstacles.push(boxed(1, [-2.0, 3.9, 0.0], [-1.85, 34.1, 2.2], Material::Opaque, true));
    s.obstacles.push(boxed(2, [1.85, 3.9, 0.0], [2.0, 34.1, 2.2], Material::Opaque, true));
    let (a, b) = (Point3::new(1.0, 16.0, 1.5), Point3::new(1.0, 24.0, 0.7));
    // right wall: image (2.7, 16, 1.5); the path meets x = 1.85 at
    // t = 0.85 / 1.7 = 0.5 -> (1.85, 20, 1.1)
    let img = Point3::new(2.7, 16.0, 1.5);
    out.push(("asymmetric", s, a, b, Point3::new(1.85, 20.0, 1.1), img.distance(&b)));

    out
}

/// SHA-256 of each named file in `dir`, hex encoded.
pub fn file_digests(dir: &std::path::Path, files: &[&str]) -> Vec<(String, String)> {
    use sha2::{Digest, Sha256};
    files
        .iter()
        .map(|name| {
            let bytes = std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
            let hex: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
            (name.to_string(), hex)
        })
        .collect()
}

/// Scenario configuration small enough for a quick end-to-end run.
pub fn reduced_config(id: cabin_rps::config::ScenarioId) -> cabin_rps::config::ScenarioConfig {
    let mut cfg = cabin_rps::config::ScenarioConfig::defaults(id);
    cfg.scenario.positions = 60;
    cfg.boarding.n_pax = 10;
    cfg
}
