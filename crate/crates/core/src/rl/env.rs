//! Navigation task in the simple room: the agent proposes relative target
//! positions and is teleported along straight, collision-checked paths.

use serde::{Deserialize, Serialize};

use crate::autoencoders::{scan_input, Vae};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::Rng;
use crate::world::motion::{first_collision_param, sample_spawn_pose, DEFAULT_ROBOT_RADIUS};
use crate::world::{cast_scan, generate_simple_room, LidarScan, Pose, Segment, SensorSpec, SimpleRoomConfig, Vec2, WorldModel};

/// Relative target position in the robot frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub dx: f64,
    pub dy: f64,
}

impl Action {
    pub fn new(dx: f64, dy: f64) -> Self {
        Self { dx, dy }
    }

    /// NaN components become 0.
    pub fn clamped(self, bound: f64) -> Self {
        let c = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(-bound, bound) };
        Self::new(c(self.dx), c(self.dy))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NavConfig {
    pub room: SimpleRoomConfig,
    pub sensor: SensorSpec,
    pub robot_radius: f64,
    /// Largest pole-center-to-path distance that counts as reaching the goal.
    pub goal_threshold: f64,
    pub max_steps: usize,
    pub action_bound: f64,
    pub r_goal: f64,
    pub r_collision: f64,
    pub spawn_attempts: usize,
}

impl Default for NavConfig {
    fn default() -> Self {
        Self {
            room: SimpleRoomConfig::default(),
            sensor: SensorSpec::default(),
            robot_radius: DEFAULT_ROBOT_RADIUS,
            goal_threshold: 0.1,
            max_steps: 20,
            action_bound: 2.0,
            r_goal: 1.0,
            r_collision: -1.0,
            spawn_attempts: 10_000,
        }
    }
}

impl NavConfig {
    pub fn validate(&self) -> Result<()> {
        self.sensor.validate()?;
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        if !(self.action_bound > 0.0) || !(self.goal_threshold >= 0.0) || !(self.robot_radius >= 0.0) {
            return Err(Error::Config("action bound, goal threshold and robot radius must be non-negative".into()));
        }
        Ok(())
    }
}

/// Maps a scan to the agent's state vector.
pub trait Observer {
    fn state_dim(&self) -> usize;
    fn observe(&self, scan: &LidarScan) -> Result<Vec<f32>>;
}

impl<O: Observer + ?Sized> Observer for &O {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }

    fn observe(&self, scan: &LidarScan) -> Result<Vec<f32>> {
        (**self).observe(scan)
    }
}

/// Encoder mean of a (frozen) autoencoder.
impl Observer for Vae<f32> {
    fn state_dim(&self) -> usize {
        self.latent_dim()
    }

    fn observe(&self, scan: &LidarScan) -> Result<Vec<f32>> {
        let mut shape = vec![1];
        shape.extend(self.config.input_shape());
        let x = Tensor::from_vec(&shape, scan_input(scan, &self.config)?)?;
        Ok(self.encode_mean(&x)?.into_data())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepEvent {
    Goal,
    Collision,
    Moved,
    /// Moved, and the proposal budget is used up.
    Timeout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub state: Vec<f32>,
    pub reward: f64,
    pub done: bool,
    pub event: StepEvent,
}

pub struct NavEnv<O> {
    pub cfg: NavConfig,
    observer: O,
    world: Option<WorldModel>,
    pose: Pose,
    steps: usize,
    done: bool,
}

impl<O: Observer> NavEnv<O> {
    pub fn new(cfg: NavConfig, observer: O) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            observer,
            world: None,
            pose: Pose::default(),
            steps: 0,
            done: true,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.observer.state_dim()
    }

    pub fn observer(&self) -> &O {
        &self.observer
    }

    pub fn world(&self) -> Option<&WorldModel> {
        self.world.as_ref()
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Fresh room and spawn pose.
    pub fn reset(&mut self, rng: &mut Rng) -> Result<Vec<f32>> {
        let world = generate_simple_room(rng, &self.cfg.room)?;
        let pose = sample_spawn_pose(&world, rng, self.cfg.robot_radius, self.cfg.spawn_attempts)?;
        self.reset_to(world, pose, rng)
    }

    /// Starts an episode in a given room and pose.
    pub fn reset_to(&mut self, world: WorldModel, pose: Pose, rng: &mut Rng) -> Result<Vec<f32>> {
        if world.goal_pole().is_none() {
            return Err(Error::Config("navigation room has no goal pole".into()));
        }
        self.world = Some(world);
        self.pose = pose;
        self.steps = 0;
        self.done = false;
        self.observe(rng)
    }

    fn observe(&self, rng: &mut Rng) -> Result<Vec<f32>> {
        let world = self.world.as_ref().ok_or_else(|| Error::State("no active room".into()))?;
        let scan = cast_scan(world, self.pose, &self.cfg.sensor, rng)?;
        self.observer.observe(&scan)
    }

    /// Goal pole center in the robot frame. Used by scripted test policies.
    pub fn goal_relative(&self) -> Option<Vec2> {
        let goal = self.world.as_ref()?.goal_pole()?.center();
        Some((goal - self.pose.position()).rotated(-self.pose.heading))
    }

    pub fn step(&mut self, action: Action, rng: &mut Rng) -> Result<StepResult> {
        if self.done {
            return Err(Error::State("step on a finished episode; call reset first".into()));
        }
        let world = self.world.as_ref().ok_or_else(|| Error::State("no active room".into()))?;
        let a = action.clamped(self.cfg.action_bound);
        let from = self.pose.position();
        let to = self.pose.to_world(Vec2::new(a.dx, a.dy));
        let path = Segment::new(from, to);
        let goal = world.goal_pole().map(|g| g.center()).expect("checked at reset");
        let hit = first_collision_param(world, from, to, self.cfg.robot_radius);
        // the goal counts when the path passes it before any contact
        let t_goal = path.closest_param(goal);
        let reached = path.distance_to_point(goal) <= self.cfg.goal_threshold && hit.is_none_or(|t| t_goal <= t);
        self.steps += 1;
        let (reward, event) = if reached {
            (self.cfg.r_goal, StepEvent::Goal)
        } else if hit.is_some() {
            (self.cfg.r_collision, StepEvent::Collision)
        } else {
            let d = to - from;
            let heading = if d.norm() > 0.0 { d.y.atan2(d.x) } else { self.pose.heading };
            self.pose = Pose::new(to.x, to.y, heading);
            if self.steps >= self.cfg.max_steps {
                (0.0, StepEvent::Timeout)
            } else {
                (0.0, StepEvent::Moved)
            }
        };
        self.done = event != StepEvent::Moved;
        let state = self.observe(rng)?;
        Ok(StepResult {
            state,
            reward,
            done: self.done,
            event,
        })
    }
}
