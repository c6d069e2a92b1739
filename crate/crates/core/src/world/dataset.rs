//! Trajectory datasets: many rooms, several random walks per room.

use serde::{Deserialize, Serialize};

use super::motion::{random_walk_trajectory, WalkConfig};
use super::room::{generate_main_room, generate_simple_room, MainRoomConfig, SimpleRoomConfig, WorldModel};
use super::sensor::{LidarScan, Pose, SensorSpec};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, derived};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Environment {
    Simple,
    Main,
}

impl std::str::FromStr for Environment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(Environment::Simple),
            "main" => Ok(Environment::Main),
            other => Err(Error::Config(format!("unknown environment '{other}' (expected simple|main)"))),
        }
    }
}

impl std::fmt::Display for Environment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Environment::Simple => "simple",
            Environment::Main => "main",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetJob {
    pub environment: Environment,
    pub rooms: usize,
    pub trajectories_per_room: usize,
    pub seed: u64,
    #[serde(default)]
    pub sensor: SensorSpec,
    #[serde(default)]
    pub walk: WalkConfig,
    #[serde(default)]
    pub simple_room: SimpleRoomConfig,
    #[serde(default)]
    pub main_room: MainRoomConfig,
}

impl DatasetJob {
    /// 250 rooms x 10 trajectories.
    pub fn simple_full(seed: u64) -> Self {
        Self::new(Environment::Simple, 250, 10, seed)
    }

    /// 100 rooms x 250 trajectories.
    pub fn main_full(seed: u64) -> Self {
        Self::new(Environment::Main, 100, 250, seed)
    }

    /// 50 rooms x 4 trajectories of at most 25 scans.
    pub fn desk(environment: Environment, seed: u64) -> Self {
        let mut job = Self::new(environment, 50, 4, seed);
        job.walk.max_steps = 25;
        job
    }

    pub fn new(environment: Environment, rooms: usize, trajectories_per_room: usize, seed: u64) -> Self {
        Self {
            environment,
            rooms,
            trajectories_per_room,
            seed,
            sensor: SensorSpec::default(),
            walk: WalkConfig::default(),
            simple_room: SimpleRoomConfig::default(),
            main_room: MainRoomConfig::default(),
        }
    }

    pub fn generate_room(&self, room: usize) -> Result<WorldModel> {
        let mut rng = derived(self.seed, room as u64);
        match self.environment {
            Environment::Simple => generate_simple_room(&mut rng, &self.simple_room),
            Environment::Main => generate_main_room(&mut rng, &self.main_room),
        }
    }

    pub fn run(&self) -> Result<Dataset> {
        self.sensor.validate()?;
        if self.rooms == 0 || self.trajectories_per_room == 0 {
            return Err(Error::Config("rooms and trajectories_per_room must be positive".into()));
        }
        let beams = self.sensor.beam_count;
        let mut ds = Dataset {
            sensor: self.sensor.clone(),
            job: Some(self.clone()),
            trajectory_lengths: Vec::new(),
            ranges: Vec::new(),
            poses: Vec::new(),
        };
        for room in 0..self.rooms {
            let world = self.generate_room(room)?;
            let room_seed = derive_seed(self.seed, room as u64);
            for traj in 0..self.trajectories_per_room {
                let mut rng = derived(room_seed, 1 + traj as u64);
                let samples = random_walk_trajectory(&world, &self.sensor, &mut rng, &self.walk)?;
                ds.trajectory_lengths.push(samples.len() as u32);
                for (pose, scan) in samples {
                    debug_assert_eq!(scan.ranges.len(), beams);
                    ds.push(pose, &scan);
                }
            }
        }
        Ok(ds)
    }
}

/// Flat scan store as written to disk: f32 ranges with NaN for invalid beams.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sensor: SensorSpec,
    pub job: Option<DatasetJob>,
    /// Scans per trajectory, in storage order.
    pub trajectory_lengths: Vec<u32>,
    pub ranges: Vec<f32>,
    pub poses: Vec<[f32; 3]>,
}

impl Dataset {
    pub fn empty(sensor: SensorSpec) -> Self {
        Self {
            sensor,
            job: None,
            trajectory_lengths: Vec::new(),
            ranges: Vec::new(),
            poses: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn beam_count(&self) -> usize {
        self.sensor.beam_count
    }

    pub fn push(&mut self, pose: Pose, scan: &LidarScan) {
        self.ranges.extend(
            scan.ranges
                .iter()
                .zip(&scan.valid)
                .map(|(r, v)| if *v { *r as f32 } else { f32::NAN }),
        );
        self.poses.push([pose.x as f32, pose.y as f32, pose.heading as f32]);
    }

    pub fn raw_ranges(&self, i: usize) -> &[f32] {
        let b = self.beam_count();
        &self.ranges[i * b..(i + 1) * b]
    }

    pub fn scan(&self, i: usize) -> LidarScan {
        LidarScan::from_ranges(
            self.raw_ranges(i).iter().map(|r| *r as f64).collect(),
            self.sensor.clone(),
        )
    }

    pub fn pose(&self, i: usize) -> Pose {
        let [x, y, h] = self.poses[i];
        Pose {
            x: x as f64,
            y: y as f64,
            heading: h as f64,
        }
    }

    /// Room index of every scan, derived from the trajectory layout.
    pub fn room_of_scans(&self) -> Vec<usize> {
        let per_room = self.job.as_ref().map_or(1, |j| j.trajectories_per_room.max(1));
        self.trajectory_lengths
            .iter()
            .enumerate()
            .flat_map(|(t, len)| std::iter::repeat_n(t / per_room, *len as usize))
            .collect()
    }

    /// Splits scan indices by room: rooms `>= first_held_out_room` go to the
    /// held-out set.
    pub fn split_by_room(&self, first_held_out_room: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut held = Vec::new();
        for (i, room) in self.room_of_scans().into_iter().enumerate() {
            if room >= first_held_out_room {
                held.push(i);
            } else {
                train.push(i);
            }
        }
        (train, held)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_profile_sizes() {
        let s = DatasetJob::simple_full(0);
        assert_eq!((s.rooms, s.trajectories_per_room), (250, 10));
        let m = DatasetJob::main_full(0);
        assert_eq!((m.rooms, m.trajectories_per_room), (100, 250));
        assert_eq!(s.walk.step_rate, 5.0);
    }

    #[test]
    fn small_job_layout() {
        let mut job = DatasetJob::new(Environment::Simple, 3, 2, 17);
        job.walk.max_steps = 5;
        job.sensor.beam_count = 90;
        let ds = job.run().unwrap();
        assert_eq!(ds.trajectory_lengths.len(), 6);
        let total: u32 = ds.trajectory_lengths.iter().sum();
        assert_eq!(total as usize, ds.len());
        assert_eq!(ds.ranges.len(), ds.len() * 90);
        let rooms = ds.room_of_scans();
        assert_eq!(*rooms.last().unwrap(), 2);
        let (train, held) = ds.split_by_room(2);
        assert_eq!(train.len() + held.len(), ds.len());
        let again = job.run().unwrap();
        assert_eq!(again.poses, ds.poses);
        let bits = |d: &Dataset| d.ranges.iter().map(|r| r.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&again), bits(&ds));
    }
}
