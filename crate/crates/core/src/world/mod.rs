//! Kinematic 2D world: procedural rooms, exact ray casting for a noisy
//! planar lidar, and random-walk data collection.

pub mod dataset;
pub mod geometry;
pub mod motion;
pub mod room;
pub mod sensor;

pub use dataset::{Dataset, DatasetJob, Environment};
pub use geometry::{Aabb, Segment, Vec2};
pub use motion::{
    check_path_collision, disc_collides, first_collision_param, random_walk_trajectory, sample_spawn_pose,
    WalkConfig, DEFAULT_ROBOT_RADIUS,
};
pub use room::{generate_main_room, generate_simple_room, MainRoomConfig, Obstacle, SimpleRoomConfig, WorldModel};
pub use sensor::{cast_scan, LidarScan, Pose, SensorSpec};
