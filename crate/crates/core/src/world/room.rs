//! Procedural rooms: the single-pole "simple" room used for navigation and
//! the cluttered "main" room with partial interior walls.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::geometry::{Aabb, Segment, Vec2};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Obstacle {
    Circle { center: Vec2, diameter: f64 },
    Square { center: Vec2, side: f64 },
}

impl Obstacle {
    pub fn center(&self) -> Vec2 {
        match *self {
            Obstacle::Circle { center, .. } | Obstacle::Square { center, .. } => center,
        }
    }

    /// Diameter for circles, side length for squares.
    pub fn size(&self) -> f64 {
        match *self {
            Obstacle::Circle { diameter, .. } => diameter,
            Obstacle::Square { side, .. } => side,
        }
    }

    /// Radius of the smallest enclosing circle.
    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Obstacle::Circle { diameter, .. } => 0.5 * diameter,
            Obstacle::Square { side, .. } => side * std::f64::consts::FRAC_1_SQRT_2,
        }
    }

    pub fn distance_to_point(&self, p: Vec2) -> f64 {
        match *self {
            Obstacle::Circle { center, diameter } => (p.distance(center) - 0.5 * diameter).max(0.0),
            Obstacle::Square { center, side } => Aabb::centered(center, side).distance_to_point(p),
        }
    }

    pub fn distance_to_segment(&self, s: &Segment) -> f64 {
        match *self {
            Obstacle::Circle { center, diameter } => {
                (s.distance_to_point(center) - 0.5 * diameter).max(0.0)
            }
            Obstacle::Square { center, side } => Aabb::centered(center, side).distance_to_segment(s),
        }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        match *self {
            Obstacle::Circle { center, diameter } => p.distance(center) < 0.5 * diameter,
            Obstacle::Square { center, side } => Aabb::centered(center, side).contains_strictly(p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModel {
    pub walls: Vec<Segment>,
    pub poles: Vec<Obstacle>,
    pub bounds: Aabb,
    pub goal_pole_index: Option<usize>,
}

impl WorldModel {
    /// Plain rectangular room with its four boundary walls.
    pub fn rectangle(width: f64, height: f64) -> Self {
        let bounds = Aabb::new(Vec2::new(0.0, 0.0), Vec2::new(width, height));
        Self {
            walls: bounds.edges().to_vec(),
            poles: Vec::new(),
            bounds,
            goal_pole_index: None,
        }
    }

    pub fn area(&self) -> f64 {
        self.bounds.area()
    }

    pub fn goal_pole(&self) -> Option<&Obstacle> {
        self.goal_pole_index.and_then(|i| self.poles.get(i))
    }

    /// Clearance from `p` to the nearest wall or pole, optionally ignoring the goal pole.
    pub fn clearance(&self, p: Vec2, include_goal: bool) -> f64 {
        let walls = self.walls.iter().map(|w| w.distance_to_point(p));
        let poles = self
            .poles
            .iter()
            .enumerate()
            .filter(|(i, _)| include_goal || Some(*i) != self.goal_pole_index)
            .map(|(_, o)| o.distance_to_point(p));
        walls.chain(poles).fold(f64::INFINITY, f64::min)
    }

    /// True when `p` lies inside a pole or outside the room.
    pub fn is_inside_obstacle(&self, p: Vec2) -> bool {
        !self.bounds.contains_strictly(p) || self.poles.iter().any(|o| o.contains(p))
    }

    /// Checks the structural invariants: poles strictly inside the room,
    /// clear of every wall and of each other, and density within `max_density`.
    pub fn validate(&self, max_density: Option<f64>) -> Result<()> {
        for (i, pole) in self.poles.iter().enumerate() {
            let c = pole.center();
            let r = pole.bounding_radius();
            let inside = c.x - r > self.bounds.min.x
                && c.x + r < self.bounds.max.x
                && c.y - r > self.bounds.min.y
                && c.y + r < self.bounds.max.y;
            if !inside {
                return Err(Error::Geometry(format!("pole {i} leaves the room")));
            }
            if self.walls.iter().any(|w| pole.distance_to_segment(w) <= 0.0) {
                return Err(Error::Geometry(format!("pole {i} overlaps a wall")));
            }
            for (j, other) in self.poles.iter().enumerate().skip(i + 1) {
                if c.distance(other.center()) <= r + other.bounding_radius() {
                    return Err(Error::Geometry(format!("poles {i} and {j} overlap")));
                }
            }
        }
        if let Some(d) = max_density {
            let limit = (d * self.area()).floor() as usize;
            if self.poles.len() > limit {
                return Err(Error::Geometry(format!(
                    "{} poles exceed density limit {limit}",
                    self.poles.len()
                )));
            }
        }
        Ok(())
    }

    /// Rotates every primitive about the origin. Square poles stay axis
    /// aligned, so this is exact only for multiples of a quarter turn when
    /// squares are present.
    pub fn rotated(&self, theta: f64) -> Self {
        let poles = self
            .poles
            .iter()
            .map(|o| match *o {
                Obstacle::Circle { center, diameter } => Obstacle::Circle {
                    center: center.rotated(theta),
                    diameter,
                },
                Obstacle::Square { center, side } => Obstacle::Square {
                    center: center.rotated(theta),
                    side,
                },
            })
            .collect();
        let corners = self.bounds.corners().map(|c| c.rotated(theta));
        let min = corners.iter().fold(Vec2::new(f64::INFINITY, f64::INFINITY), |m, c| {
            Vec2::new(m.x.min(c.x), m.y.min(c.y))
        });
        let max = corners
            .iter()
            .fold(Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY), |m, c| {
                Vec2::new(m.x.max(c.x), m.y.max(c.y))
            });
        Self {
            walls: self.walls.iter().map(|w| w.rotated(theta)).collect(),
            poles,
            bounds: Aabb::new(min, max),
            goal_pole_index: self.goal_pole_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimpleRoomConfig {
    pub side_min: f64,
    pub side_max: f64,
    pub pole_diameter: f64,
    /// Minimum distance from the pole center to every wall.
    pub wall_clearance: f64,
    pub max_attempts: usize,
}

impl Default for SimpleRoomConfig {
    fn default() -> Self {
        Self {
            side_min: 4.0,
            side_max: 8.0,
            pole_diameter: 0.2,
            wall_clearance: 0.5,
            max_attempts: 1000,
        }
    }
}

pub fn generate_simple_room(rng: &mut Rng, cfg: &SimpleRoomConfig) -> Result<WorldModel> {
    if !(cfg.side_min > 0.0 && cfg.side_min <= cfg.side_max) {
        return Err(Error::Config(format!(
            "side interval [{}, {}] is empty or non-positive",
            cfg.side_min, cfg.side_max
        )));
    }
    let width = rng.random_range(cfg.side_min..=cfg.side_max);
    let height = rng.random_range(cfg.side_min..=cfg.side_max);
    let mut world = WorldModel::rectangle(width, height);
    let r = 0.5 * cfg.pole_diameter;
    let margin = cfg.wall_clearance.max(0.0);
    for _ in 0..cfg.max_attempts {
        let c = Vec2::new(rng.random::<f64>() * width, rng.random::<f64>() * height);
        let wall_gap = world.walls.iter().map(|w| w.distance_to_point(c)).fold(f64::INFINITY, f64::min);
        if wall_gap >= margin && wall_gap > r {
            world.poles.push(Obstacle::Circle {
                center: c,
                diameter: cfg.pole_diameter,
            });
            world.goal_pole_index = Some(0);
            return Ok(world);
        }
    }
    Err(Error::Generation(format!(
        "no pole position with clearance {} in a {width:.2} x {height:.2} room after {} attempts",
        cfg.wall_clearance, cfg.max_attempts
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MainRoomConfig {
    pub side_min: f64,
    pub side_max: f64,
    pub interior_walls_min: usize,
    pub interior_walls_max: usize,
    pub door_width_min: f64,
    pub door_width_max: f64,
    /// Upper bound on poles per square meter of room area.
    pub max_pole_density: f64,
    /// Fraction of the density limit below which the pole count is never drawn.
    pub min_density_fraction: f64,
    pub pole_size_min: f64,
    pub pole_size_max: f64,
    /// Probability of placing a pole near a corner or an existing pole.
    pub cluster_probability: f64,
    pub cluster_radius: f64,
    /// Required gap between a pole and any wall or other pole.
    pub pole_gap: f64,
    pub max_attempts: usize,
}

impl Default for MainRoomConfig {
    fn default() -> Self {
        Self {
            side_min: 5.0,
            side_max: 10.0,
            interior_walls_min: 1,
            interior_walls_max: 3,
            door_width_min: 0.8,
            door_width_max: 1.2,
            max_pole_density: 0.25,
            min_density_fraction: 0.5,
            pole_size_min: 0.1,
            pole_size_max: 0.4,
            cluster_probability: 0.5,
            cluster_radius: 1.0,
            pole_gap: 0.05,
            max_attempts: 1000,
        }
    }
}

impl MainRoomConfig {
    /// No interior walls and no poles.
    pub fn empty() -> Self {
        Self {
            interior_walls_min: 0,
            interior_walls_max: 0,
            max_pole_density: 0.0,
            min_density_fraction: 0.0,
            ..Self::default()
        }
    }
}

pub fn generate_main_room(rng: &mut Rng, cfg: &MainRoomConfig) -> Result<WorldModel> {
    if !(cfg.side_min > 0.0 && cfg.side_min <= cfg.side_max)
        || cfg.interior_walls_min > cfg.interior_walls_max
        || !(cfg.pole_size_min > 0.0 && cfg.pole_size_min <= cfg.pole_size_max)
        || cfg.max_pole_density < 0.0
    {
        return Err(Error::Config("inconsistent main room config".into()));
    }
    let width = rng.random_range(cfg.side_min..=cfg.side_max);
    let height = rng.random_range(cfg.side_min..=cfg.side_max);
    let mut world = WorldModel::rectangle(width, height);

    let n_walls = rng.random_range(cfg.interior_walls_min..=cfg.interior_walls_max);
    for _ in 0..n_walls {
        add_partial_wall(rng, cfg, &mut world);
    }

    let limit = (cfg.max_pole_density * world.area()).floor() as usize;
    let lower = ((cfg.min_density_fraction * limit as f64).ceil() as usize).min(limit);
    let n_poles = rng.random_range(lower..=limit);
    for _ in 0..n_poles {
        let pole = place_pole(rng, cfg, &world)?;
        world.poles.push(pole);
    }
    Ok(world)
}

/// Full-span wall parallel to one room axis with a single door gap.
fn add_partial_wall(rng: &mut Rng, cfg: &MainRoomConfig, world: &mut WorldModel) {
    let b = world.bounds;
    let vertical = rng.random_bool(0.5);
    let (span, across) = if vertical {
        (b.height(), b.width())
    } else {
        (b.width(), b.height())
    };
    let pos = rng.random_range(1.0..(across - 1.0).max(1.0 + 1e-9));
    let door = rng.random_range(cfg.door_width_min..=cfg.door_width_max).min(span);
    let door_start = rng.random::<f64>() * (span - door);
    let pieces = [(0.0, door_start), (door_start + door, span)];
    for (s, e) in pieces {
        if e - s < 1e-6 {
            continue;
        }
        let seg = if vertical {
            Segment::new(Vec2::new(b.min.x + pos, b.min.y + s), Vec2::new(b.min.x + pos, b.min.y + e))
        } else {
            Segment::new(Vec2::new(b.min.x + s, b.min.y + pos), Vec2::new(b.min.x + e, b.min.y + pos))
        };
        world.walls.push(seg);
    }
}

fn place_pole(rng: &mut Rng, cfg: &MainRoomConfig, world: &WorldModel) -> Result<Obstacle> {
    let b = world.bounds;
    for _ in 0..cfg.max_attempts {
        let size = rng.random_range(cfg.pole_size_min..=cfg.pole_size_max);
        let round = rng.random_bool(0.5);
        let center = if rng.random_bool(cfg.cluster_probability) {
            let corners = b.corners();
            let n_anchor = corners.len() + world.poles.len();
            let k = rng.random_range(0..n_anchor);
            let anchor = if k < corners.len() {
                corners[k]
            } else {
                world.poles[k - corners.len()].center()
            };
            let rho = cfg.cluster_radius * rng.random::<f64>().sqrt();
            let phi = rng.random::<f64>() * std::f64::consts::TAU;
            anchor + Vec2::from_angle(phi) * rho
        } else {
            Vec2::new(
                b.min.x + rng.random::<f64>() * b.width(),
                b.min.y + rng.random::<f64>() * b.height(),
            )
        };
        let pole = if round {
            Obstacle::Circle { center, diameter: size }
        } else {
            Obstacle::Square { center, side: size }
        };
        let r = pole.bounding_radius();
        let inside = center.x - r - cfg.pole_gap > b.min.x
            && center.x + r + cfg.pole_gap < b.max.x
            && center.y - r - cfg.pole_gap > b.min.y
            && center.y + r + cfg.pole_gap < b.max.y;
        if !inside {
            continue;
        }
        if world.walls.iter().any(|w| pole.distance_to_segment(w) <= cfg.pole_gap) {
            continue;
        }
        if world
            .poles
            .iter()
            .any(|o| o.center().distance(center) <= r + o.bounding_radius() + cfg.pole_gap)
        {
            continue;
        }
        return Ok(pole);
    }
    Err(Error::Generation(format!(
        "could not place pole {} after {} attempts",
        world.poles.len(),
        cfg.max_attempts
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn simple_room_defaults() {
        let w = generate_simple_room(&mut seeded(3), &SimpleRoomConfig::default()).unwrap();
        assert_eq!(w.walls.len(), 4);
        assert_eq!(w.poles.len(), 1);
        assert_eq!(w.goal_pole_index, Some(0));
        assert!((4.0..=8.0).contains(&w.bounds.width()));
        assert!((4.0..=8.0).contains(&w.bounds.height()));
        assert_eq!(w.poles[0].size(), 0.2);
        assert!(matches!(w.poles[0], Obstacle::Circle { .. }));
    }

    #[test]
    fn simple_room_is_deterministic() {
        let cfg = SimpleRoomConfig::default();
        let a = generate_simple_room(&mut seeded(11), &cfg).unwrap();
        let b = generate_simple_room(&mut seeded(11), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_clearance_is_an_error() {
        let cfg = SimpleRoomConfig {
            wall_clearance: 5.0,
            max_attempts: 50,
            ..Default::default()
        };
        assert!(matches!(
            generate_simple_room(&mut seeded(1), &cfg),
            Err(Error::Generation(_))
        ));
    }

    #[test]
    fn empty_main_config_gives_plain_rectangle() {
        let w = generate_main_room(&mut seeded(5), &MainRoomConfig::empty()).unwrap();
        assert_eq!(w.walls.len(), 4);
        assert!(w.poles.is_empty());
        assert_eq!(w.goal_pole_index, None);
    }

    #[test]
    fn main_room_respects_density() {
        for seed in 0..50 {
            let w = generate_main_room(&mut seeded(seed), &MainRoomConfig::default()).unwrap();
            assert!(w.poles.len() <= (0.25 * w.area()).floor() as usize);
            assert!(w.walls.len() > 4);
            w.validate(Some(0.25)).unwrap();
        }
    }
}
