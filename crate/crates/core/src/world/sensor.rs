use rand::seq::index;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::geometry::{ray_aabb, ray_circle, ray_segment, wrap_angle, Aabb, Vec2};
use super::room::{Obstacle, WorldModel};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorSpec {
    pub beam_count: usize,
    /// Meters; beams without a return inside this distance are invalid.
    pub max_range: f64,
    /// Angular coverage in radians, starting at the forward axis.
    pub angle_span: f64,
    pub noise_sigma: f64,
    pub invalid_fraction: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self {
            beam_count: 720,
            max_range: 25.0,
            angle_span: std::f64::consts::TAU,
            noise_sigma: 0.02,
            invalid_fraction: 0.02,
        }
    }
}

impl SensorSpec {
    pub fn noise_free(mut self) -> Self {
        self.noise_sigma = 0.0;
        self.invalid_fraction = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_count == 0 {
            return Err(Error::Config("beam_count must be at least 1".into()));
        }
        if !(self.max_range > 0.0) {
            return Err(Error::Config("max_range must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.invalid_fraction) {
            return Err(Error::Config("invalid_fraction must lie in [0, 1]".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be non-negative".into()));
        }
        Ok(())
    }

    /// Sensor-frame angle of beam `i`.
    pub fn beam_angle(&self, i: usize) -> f64 {
        i as f64 * self.angle_span / self.beam_count as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Radians in (-pi, pi].
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: wrap_angle(heading),
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// World coordinates of a point given in the robot frame.
    pub fn to_world(&self, local: Vec2) -> Vec2 {
        self.position() + local.rotated(self.heading)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarScan {
    /// Meters; invalid beams hold `f64::NAN`.
    pub ranges: Vec<f64>,
    pub valid: Vec<bool>,
    pub sensor: SensorSpec,
}

impl LidarScan {
    pub fn beam_count(&self) -> usize {
        self.ranges.len()
    }

    pub fn angle(&self, i: usize) -> f64 {
        self.sensor.beam_angle(i)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Builds a scan from ranges where NaN marks an invalid beam.
    pub fn from_ranges(ranges: Vec<f64>, sensor: SensorSpec) -> Self {
        let valid = ranges.iter().map(|r| r.is_finite()).collect();
        let ranges = ranges
            .into_iter()
            .map(|r| if r.is_finite() { r } else { f64::NAN })
            .collect();
        Self { ranges, valid, sensor }
    }
}

/// Distance along the ray to the nearest primitive, if any.
pub fn nearest_hit(world: &WorldModel, origin: Vec2, dir: Vec2) -> Option<f64> {
    let walls = world.walls.iter().filter_map(|w| ray_segment(origin, dir, w));
    let poles = world.poles.iter().filter_map(|o| match *o {
        Obstacle::Circle { center, diameter } => ray_circle(origin, dir, center, 0.5 * diameter),
        Obstacle::Square { center, side } => ray_aabb(origin, dir, &Aabb::centered(center, side)),
    });
    walls.chain(poles).min_by(f64::total_cmp)
}

pub fn cast_scan(world: &WorldModel, pose: Pose, spec: &SensorSpec, rng: &mut Rng) -> Result<LidarScan> {
    spec.validate()?;
    let origin = pose.position();
    if world.is_inside_obstacle(origin) {
        return Err(Error::Geometry(format!(
            "sensor at ({:.3}, {:.3}) is inside an obstacle or outside the room",
            pose.x, pose.y
        )));
    }
    let noise = (spec.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, spec.noise_sigma).expect("sigma checked positive"));

    let n = spec.beam_count;
    let mut ranges = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for i in 0..n {
        let dir = Vec2::from_angle(pose.heading + spec.beam_angle(i));
        match nearest_hit(world, origin, dir).filter(|d| *d <= spec.max_range) {
            Some(d) => {
                let d = match &noise {
                    Some(nd) => (d + nd.sample(rng)).max(0.0),
                    None => d,
                };
                ranges.push(d);
                valid.push(true);
            }
            None => {
                ranges.push(f64::NAN);
                valid.push(false);
            }
        }
    }

    let n_invalid = (spec.invalid_fraction * n as f64).round() as usize;
    if n_invalid > 0 {
        for i in index::sample(rng, n, n_invalid.min(n)) {
            ranges[i] = f64::NAN;
            valid[i] = false;
        }
    }
    Ok(LidarScan {
        ranges,
        valid,
        sensor: spec.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn clean(beams: usize) -> SensorSpec {
        SensorSpec {
            beam_count: beams,
            ..SensorSpec::default().noise_free()
        }
    }

    #[test]
    fn square_room_center_forward_beam() {
        let w = WorldModel::rectangle(4.0, 4.0);
        let s = cast_scan(&w, Pose::new(2.0, 2.0, 0.0), &clean(4), &mut seeded(0)).unwrap();
        assert!(s.ranges.iter().all(|r| (r - 2.0).abs() < 1e-12));
    }

    #[test]
    fn pole_ahead() {
        let mut w = WorldModel::rectangle(6.0, 6.0);
        w.poles.push(Obstacle::Circle {
            center: Vec2::new(4.0, 3.0),
            diameter: 0.2,
        });
        let s = cast_scan(&w, Pose::new(3.0, 3.0, 0.0), &clean(360), &mut seeded(0)).unwrap();
        assert!((s.ranges[0] - 0.9).abs() < 1e-9);
    }

    #[test]
    fn full_invalidation() {
        let w = WorldModel::rectangle(4.0, 4.0);
        let spec = SensorSpec {
            invalid_fraction: 1.0,
            ..clean(100)
        };
        let s = cast_scan(&w, Pose::new(2.0, 2.0, 0.3), &spec, &mut seeded(2)).unwrap();
        assert_eq!(s.valid_count(), 0);
        assert!(s.ranges.iter().all(|r| r.is_nan()));
    }

    #[test]
    fn invalid_fraction_count_is_exact() {
        let w = WorldModel::rectangle(4.0, 4.0);
        let spec = SensorSpec {
            invalid_fraction: 0.1,
            ..clean(200)
        };
        let s = cast_scan(&w, Pose::new(2.0, 2.0, 0.0), &spec, &mut seeded(2)).unwrap();
        assert_eq!(s.valid_count(), 180);
    }

    #[test]
    fn out_of_range_beams_are_invalid() {
        let w = WorldModel::rectangle(40.0, 4.0);
        let spec = SensorSpec {
            max_range: 10.0,
            ..clean(4)
        };
        let s = cast_scan(&w, Pose::new(2.0, 2.0, 0.0), &spec, &mut seeded(0)).unwrap();
        assert!(!s.valid[0]);
        assert!(s.valid[1] && s.valid[2] && s.valid[3]);
    }

    #[test]
    fn pose_inside_pole_is_rejected() {
        let mut w = WorldModel::rectangle(4.0, 4.0);
        w.poles.push(Obstacle::Square {
            center: Vec2::new(1.0, 1.0),
            side: 0.4,
        });
        assert!(matches!(
            cast_scan(&w, Pose::new(1.05, 0.95, 0.0), &clean(8), &mut seeded(0)),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn noise_never_negative() {
        let w = WorldModel::rectangle(4.0, 4.0);
        let spec = SensorSpec {
            noise_sigma: 5.0,
            invalid_fraction: 0.0,
            beam_count: 500,
            ..Default::default()
        };
        let s = cast_scan(&w, Pose::new(0.01, 0.01, 0.0), &spec, &mut seeded(9)).unwrap();
        assert!(s.ranges.iter().all(|r| *r >= 0.0));
    }
}
