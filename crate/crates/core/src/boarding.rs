//! Rule-based boarding simulation producing reference trajectories.
//!
//! One epoch is one second. Passengers arrive at the front door, walk single
//! file along the aisle centerline (at most one passenger per aisle cell),
//! stop at their row to stow luggage while blocking the aisle, then sit down.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ranging::{RngStream, StreamKey};
use crate::scene::{Point3, Scene, Seat};

#[derive(Debug, Error, PartialEq)]
pub enum BoardingError {
    #[error("{requested} passengers requested but the cabin has {seats} seats")]
    TooManyPax { requested: usize, seats: usize },
    #[error("invalid boarding configuration: {0}")]
    Config(String),
    #[error("boarding did not finish within {0} epochs")]
    Timeout(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoardingPolicy {
    BackToFront,
    Random,
    BlockWise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoardingConfig {
    pub n_pax: usize,
    pub policy: BoardingPolicy,
    /// Aisle walking speed (m per epoch).
    pub walk_speed: f64,
    /// Luggage stowing time bounds (epochs).
    pub stow_min: f64,
    pub stow_max: f64,
    /// Aisle cell length; two passengers never share a cell.
    pub aisle_cell: f64,
    /// Bounds of the time between consecutive arrivals at the door (epochs).
    pub arrival_min: f64,
    pub arrival_max: f64,
    /// Extra epochs per already seated passenger who has to step out so that
    /// an arriving passenger can reach a window or middle seat.
    pub seat_interference: f64,
    /// Number of row blocks for the block-wise policy.
    pub blocks: u32,
    /// Height of the carried tag (m).
    pub tag_height: f64,
    pub max_epochs: u64,
}

impl Default for BoardingConfig {
    fn default() -> Self {
        Self {
            n_pax: 148,
            policy: BoardingPolicy::Random,
            walk_speed: 0.8,
            stow_min: 5.0,
            stow_max: 20.0,
            aisle_cell: 0.5,
            arrival_min: 3.0,
            arrival_max: 5.0,
            seat_interference: 0.0,
            blocks: 3,
            tag_height: 1.12,
            max_epochs: 20_000,
        }
    }
}

impl BoardingConfig {
    fn validate(&self) -> Result<(), BoardingError> {
        let bad = |m: &str| Err(BoardingError::Config(m.to_string()));
        if !(self.walk_speed.is_finite() && self.walk_speed > 0.0) {
            return bad("walk_speed must be positive");
        }
        if !(self.aisle_cell.is_finite() && self.aisle_cell > 0.0) {
            return bad("aisle_cell must be positive");
        }
        if !(self.stow_min >= 0.0 && self.stow_max >= self.stow_min && self.stow_max.is_finite()) {
            return bad("expected 0 <= stow_min <= stow_max");
        }
        if !(self.arrival_min > 0.0 && self.arrival_max >= self.arrival_min && self.arrival_max.is_finite()) {
            return bad("expected 0 < arrival_min <= arrival_max");
        }
        if !(self.seat_interference.is_finite() && self.seat_interference >= 0.0) {
            return bad("seat_interference must be non-negative");
        }
        if self.blocks == 0 {
            return bad("blocks must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PaxState {
    Queued,
    Walking,
    Stowing,
    Seated,
}

impl PaxState {
    pub fn as_str(&self) -> &'static str {
        match self {
            PaxState::Queued => "queued",
            PaxState::Walking => "walking",
            PaxState::Stowing => "stowing",
            PaxState::Seated => "seated",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "queued" => Some(PaxState::Queued),
            "walking" => Some(PaxState::Walking),
            "stowing" => Some(PaxState::Stowing),
            "seated" => Some(PaxState::Seated),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaxAgent {
    pub id: u32,
    pub seat: Seat,
    pub walk_speed: f64,
    pub stow_duration: u32,
    /// Epoch at which the passenger reaches the door.
    pub arrival: u64,
    pub state: PaxState,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub epoch: u64,
    /// Tag position (tag height above the floor).
    pub position: Point3,
    pub state: PaxState,
}

/// Positions of one passenger from entering the cabin until the end of the
/// run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub pax_id: u32,
    pub seat: Seat,
    pub enter_epoch: u64,
    pub seated_epoch: u64,
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn at(&self, epoch: u64) -> Option<&TrajectoryPoint> {
        epoch
            .checked_sub(self.enter_epoch)
            .and_then(|i| self.points.get(i as usize))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoardingRun {
    pub trajectories: Vec<Trajectory>,
    /// Number of simulated epochs; the last one has every passenger seated.
    pub total_epochs: u64,
}

impl BoardingRun {
    /// Tag positions of the passengers inside the cabin at `epoch`, with
    /// their ids. Epochs past the horizon report the final state.
    pub fn present_at(&self, epoch: u64) -> Vec<(u32, TrajectoryPoint)> {
        let epoch = epoch.min(self.total_epochs.saturating_sub(1));
        self.trajectories
            .iter()
            .filter_map(|t| t.at(epoch).map(|p| (t.pax_id, *p)))
            .collect()
    }

    pub fn position_count(&self) -> usize {
        self.trajectories.iter().map(|t| t.points.len()).sum()
    }
}

/// Body (floor-level) positions of every passenger inside the cabin at
/// `epoch`, ready for [`Scene::add_pax_obstacles`].
pub fn epochs_to_scene_updates(run: &BoardingRun, epoch: u64) -> Vec<Point3> {
    run.present_at(epoch)
        .into_iter()
        .map(|(_, p)| Point3::new(p.position.x, p.position.y, 0.0))
        .collect()
}

fn boarding_rng(seed: u64) -> RngStream {
    RngStream::new(
        seed,
        StreamKey {
            scenario: 3,
            epoch: u64::MAX,
            tag: u64::MAX,
            anchor: 0,
        },
    )
}

/// Assigns seats, boarding order, stow times and arrivals.
fn make_agents(scene: &Scene, cfg: &BoardingConfig, rng: &mut RngStream) -> Vec<PaxAgent> {
    let mut seats = scene.seats.clone();
    seats.shuffle(rng.rng());
    seats.truncate(cfg.n_pax);
    let rows = scene.seats.iter().map(|s| s.row).max().unwrap_or(1);
    match cfg.policy {
        BoardingPolicy::Random => {}
        BoardingPolicy::BackToFront => seats.sort_by_key(|s| std::cmp::Reverse(s.row)),
        BoardingPolicy::BlockWise => {
            let per_block = rows.div_ceil(cfg.blocks).max(1);
            seats.sort_by_key(|s| std::cmp::Reverse((s.row - 1) / per_block));
        }
    }
    let mut arrival = 0.0_f64;
    seats
        .into_iter()
        .enumerate()
        .map(|(i, seat)| {
            let u_stow = rng.uniform();
            let u_gap = rng.uniform();
            if i > 0 {
                arrival += cfg.arrival_min + u_gap * (cfg.arrival_max - cfg.arrival_min);
            }
            PaxAgent {
                id: i as u32,
                seat,
                walk_speed: cfg.walk_speed,
                stow_duration: (cfg.stow_min + u_stow * (cfg.stow_max - cfg.stow_min)).round() as u32,
                arrival: arrival.ceil() as u64,
                state: PaxState::Queued,
            }
        })
        .collect()
}

pub fn simulate_boarding(scene: &Scene, cfg: &BoardingConfig, seed: u64) -> Result<BoardingRun, BoardingError> {
    cfg.validate()?;
    if cfg.n_pax > scene.seats.len() {
        return Err(BoardingError::TooManyPax {
            requested: cfg.n_pax,
            seats: scene.seats.len(),
        });
    }
    let mut rng = boarding_rng(seed);
    let mut agents = make_agents(scene, cfg, &mut rng);
    let n = agents.len();
    let door = scene.door_y;
    let aisle_x = scene.aisle_x;

    // per agent: aisle y, remaining stow epochs
    let mut y = vec![door; n];
    let mut stow_left = vec![0u32; n];
    let mut trajectories: Vec<Option<Trajectory>> = vec![None; n];
    // indices of agents in the aisle, in entry order (front-most first)
    let mut aisle: Vec<usize> = Vec::new();
    let mut next_in_queue = 0usize;
    let mut seated = 0usize;
    let mut seated_seats: Vec<Seat> = Vec::new();
    let mut epoch = 0u64;

    while seated < n || n == 0 {
        if n == 0 {
            return Ok(BoardingRun {
                trajectories: Vec::new(),
                total_epochs: 0,
            });
        }
        if epoch >= cfg.max_epochs {
            return Err(BoardingError::Timeout(cfg.max_epochs));
        }

        let mut leader_y: Option<f64> = None;
        let mut still_in_aisle = Vec::with_capacity(aisle.len());
        for &i in &aisle {
            let agent = &mut agents[i];
            match agent.state {
                PaxState::Stowing => {
                    stow_left[i] = stow_left[i].saturating_sub(1);
                    if stow_left[i] == 0 {
                        agent.state = PaxState::Seated;
                        seated_seats.push(agent.seat);
                        seated += 1;
                        continue;
                    }
                }
                PaxState::Walking => {
                    let target = agent.seat.position.y;
                    let mut next = (y[i] + agent.walk_speed).min(target);
                    if let Some(ly) = leader_y {
                        next = next.min(ly - cfg.aisle_cell);
                    }
                    if next > y[i] {
                        y[i] = next;
                    }
                    if y[i] >= target {
                        y[i] = target;
                        let seat = agent.seat;
                        let blockers = seated_seats
                            .iter()
                            .filter(|s| {
                                s.row == seat.row
                                    && s.position.x.signum() == seat.position.x.signum()
                                    && s.position.x.abs() < seat.position.x.abs()
                            })
                            .count();
                        agent.stow_duration += (blockers as f64 * cfg.seat_interference).round() as u32;
                        if agent.stow_duration == 0 {
                            agent.state = PaxState::Seated;
                            seated_seats.push(agent.seat);
                            seated += 1;
                            continue;
                        }
                        agent.state = PaxState::Stowing;
                        stow_left[i] = agent.stow_duration;
                    }
                }
                PaxState::Queued | PaxState::Seated => unreachable!("only walking or stowing agents are in the aisle"),
            }
            leader_y = Some(y[i]);
            still_in_aisle.push(i);
        }
        aisle = still_in_aisle;

        if next_in_queue < n && agents[next_in_queue].arrival <= epoch {
            let entry_free = aisle.last().is_none_or(|&j| y[j] - door >= cfg.aisle_cell);
            if entry_free {
                let i = next_in_queue;
                agents[i].state = PaxState::Walking;
                y[i] = door;
                aisle.push(i);
                trajectories[i] = Some(Trajectory {
                    pax_id: agents[i].id,
                    seat: agents[i].seat,
                    enter_epoch: epoch,
                    seated_epoch: u64::MAX,
                    points: Vec::new(),
                });
                next_in_queue += 1;
            }
        }

        for (i, agent) in agents.iter().enumerate() {
            let Some(traj) = trajectories[i].as_mut() else {
                continue;
            };
            let (px, py) = match agent.state {
                PaxState::Seated => {
                    if traj.seated_epoch == u64::MAX {
                        traj.seated_epoch = epoch;
                    }
                    (agent.seat.position.x, agent.seat.position.y)
                }
                _ => (aisle_x, y[i]),
            };
            traj.points.push(TrajectoryPoint {
                epoch,
                position: Point3::new(px, py, cfg.tag_height),
                state: agent.state,
            });
        }
        epoch += 1;
    }

    Ok(BoardingRun {
        trajectories: trajectories
            .into_iter()
            .map(|t| t.expect("every agent boarded"))
            .collect(),
        total_epochs: epoch,
    })
}
