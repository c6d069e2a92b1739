//! Robot disc collisions, spawning and the random-walk data collector.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::geometry::{Segment, Vec2};
use super::room::WorldModel;
use super::sensor::{cast_scan, LidarScan, Pose, SensorSpec};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const DEFAULT_ROBOT_RADIUS: f64 = 0.15;

/// True when a disc of `radius` at `p` touches a wall or a non-goal pole,
/// or its center is outside the room.
pub fn disc_collides(world: &WorldModel, p: Vec2, radius: f64) -> bool {
    !world.bounds.contains(p) || world.clearance(p, false) < radius
}

/// Swept-disc test along the straight path `from -> to`. The goal pole is
/// not an obstacle.
pub fn check_path_collision(world: &WorldModel, from: Pose, to: Vec2, robot_radius: f64) -> bool {
    first_collision_param(world, from.position(), to, robot_radius).is_some()
}

/// Smallest path parameter `t` in [0, 1] at which the swept disc first
/// touches an obstacle, or `None` for a clear path. A target outside the
/// room counts as a collision at the latest at `t = 1`.
pub fn first_collision_param(world: &WorldModel, from: Vec2, to: Vec2, radius: f64) -> Option<f64> {
    let path = Segment::new(from, to);
    let mut first: Option<f64> = None;
    let mut note = |t: f64| {
        first = Some(first.map_or(t, |f: f64| f.min(t)));
    };
    for wall in &world.walls {
        if wall.distance_to_segment(&path) < radius {
            note(first_contact(&path, radius, |p| wall.distance_to_point(p)));
        }
    }
    for (i, pole) in world.poles.iter().enumerate() {
        if Some(i) == world.goal_pole_index {
            continue;
        }
        if pole.distance_to_segment(&path) < radius {
            note(first_contact(&path, radius, |p| pole.distance_to_point(p)));
        }
    }
    if !world.bounds.contains(to) {
        note(1.0);
    }
    first
}

/// First parameter where `dist(path(t)) < radius`, for a distance function
/// that is convex along the path (distance to a convex set).
fn first_contact(path: &Segment, radius: f64, dist: impl Fn(Vec2) -> f64) -> f64 {
    let f = |t: f64| dist(path.point_at(t));
    if f(0.0) < radius {
        return 0.0;
    }
    // minimum of the convex profile
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..100 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if f(m1) <= f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let t_min = 0.5 * (lo + hi);
    // decreasing on [0, t_min]: bisect for the boundary crossing
    let (mut a, mut b) = (0.0_f64, t_min);
    for _ in 0..60 {
        let m = 0.5 * (a + b);
        if f(m) < radius {
            b = m;
        } else {
            a = m;
        }
    }
    b
}

/// Uniform pose whose robot disc is clear of every obstacle (goal pole included).
pub fn sample_spawn_pose(world: &WorldModel, rng: &mut Rng, radius: f64, max_attempts: usize) -> Result<Pose> {
    let b = world.bounds;
    for _ in 0..max_attempts {
        let p = Vec2::new(
            b.min.x + rng.random::<f64>() * b.width(),
            b.min.y + rng.random::<f64>() * b.height(),
        );
        let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        if !world.is_inside_obstacle(p) && world.clearance(p, true) >= radius {
            return Ok(Pose::new(p.x, p.y, heading));
        }
    }
    Err(Error::Generation(format!(
        "no collision-free spawn pose after {max_attempts} attempts"
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WalkConfig {
    pub max_steps: usize,
    /// Scan rate in Hz.
    pub step_rate: f64,
    /// Forward speed in m/s.
    pub speed: f64,
    /// Per-step heading perturbation is uniform in [-max_turn, max_turn].
    pub max_turn: f64,
    pub robot_radius: f64,
    pub spawn_attempts: usize,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self {
            max_steps: 100,
            step_rate: 5.0,
            speed: 0.5,
            max_turn: 0.35,
            robot_radius: DEFAULT_ROBOT_RADIUS,
            spawn_attempts: 10_000,
        }
    }
}

/// Random walk from a random spawn pose: constant forward speed, uniformly
/// perturbed heading, one scan per pose. Stops after `max_steps` poses or at
/// the first pose whose disc collides; that pose is kept as the last sample.
pub fn random_walk_trajectory(
    world: &WorldModel,
    spec: &SensorSpec,
    rng: &mut Rng,
    cfg: &WalkConfig,
) -> Result<Vec<(Pose, LidarScan)>> {
    if cfg.max_steps == 0 {
        return Err(Error::Config("max_steps must be at least 1".into()));
    }
    if !(cfg.step_rate > 0.0) {
        return Err(Error::Config("step_rate must be positive".into()));
    }
    let mut pose = sample_spawn_pose(world, rng, cfg.robot_radius, cfg.spawn_attempts)?;
    let step = cfg.speed / cfg.step_rate;
    let mut out = Vec::with_capacity(cfg.max_steps);
    loop {
        let scan = cast_scan(world, pose, spec, rng)?;
        out.push((pose, scan));
        if out.len() >= cfg.max_steps || disc_collides(world, pose.position(), cfg.robot_radius) {
            break;
        }
        let heading = pose.heading + rng.random_range(-cfg.max_turn..=cfg.max_turn);
        let next = pose.position() + Vec2::from_angle(heading) * step;
        let next_pose = Pose::new(next.x, next.y, heading);
        if world.is_inside_obstacle(next) {
            // the disc already touched something on the previous pose check
            break;
        }
        pose = next_pose;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::world::room::Obstacle;

    #[test]
    fn zero_length_path_on_free_pose() {
        let w = WorldModel::rectangle(4.0, 4.0);
        let from = Pose::new(2.0, 2.0, 0.0);
        assert!(!check_path_collision(&w, from, from.position(), 0.15));
        let near_wall = Pose::new(0.1, 2.0, 0.0);
        assert!(check_path_collision(&w, near_wall, near_wall.position(), 0.15));
    }

    #[test]
    fn path_through_wall() {
        let w = WorldModel::rectangle(4.0, 4.0);
        assert!(check_path_collision(&w, Pose::new(3.5, 2.0, 0.0), Vec2::new(5.0, 2.0), 0.15));
        let t = first_collision_param(&w, Vec2::new(2.0, 2.0), Vec2::new(6.0, 2.0), 0.15).unwrap();
        // disc touches x = 4 when its center reaches 3.85
        assert!((t - (1.85 / 4.0)).abs() < 1e-9);
    }

    #[test]
    fn goal_pole_is_not_an_obstacle() {
        let mut w = WorldModel::rectangle(6.0, 6.0);
        w.poles.push(Obstacle::Circle {
            center: Vec2::new(3.0, 3.0),
            diameter: 0.2,
        });
        w.goal_pole_index = Some(0);
        assert!(!check_path_collision(&w, Pose::new(2.0, 3.0, 0.0), Vec2::new(4.0, 3.0), 0.15));
        w.goal_pole_index = None;
        let t = first_collision_param(&w, Vec2::new(2.0, 3.0), Vec2::new(4.0, 3.0), 0.15).unwrap();
        assert!((t - 0.375).abs() < 1e-9);
    }

    #[test]
    fn single_step_walk() {
        let w = WorldModel::rectangle(4.0, 4.0);
        let cfg = WalkConfig {
            max_steps: 1,
            ..Default::default()
        };
        let traj = random_walk_trajectory(&w, &SensorSpec::default(), &mut seeded(1), &cfg).unwrap();
        assert_eq!(traj.len(), 1);
    }

    #[test]
    fn walk_stops_at_collision() {
        let w = WorldModel::rectangle(4.0, 4.0);
        let cfg = WalkConfig {
            max_steps: 10_000,
            max_turn: 0.0,
            ..Default::default()
        };
        let traj = random_walk_trajectory(&w, &SensorSpec::default(), &mut seeded(4), &cfg).unwrap();
        assert!(traj.len() < 10_000);
        let last = traj.last().unwrap().0;
        assert!(disc_collides(&w, last.position(), cfg.robot_radius));
    }
}
