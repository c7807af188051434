//! Synthetic advanced-emergency-braking loop.
//!
//! A procedural camera renders the stopped lead vehicle at the true
//! distance, the perception model estimates the distance, a scripted
//! constant-deceleration law brakes, and point-mass kinematics close the loop.

mod dataset;
mod episode;
mod render;
mod vehicle;

pub use dataset::{generate_dataset, Dataset, DatasetConfig, DistanceSampling};
pub use episode::{
    run_episode, AlarmPolicy, EpisodeConfig, EpisodeRecord, EpisodeSampler, Outcome, StepRecord,
};
pub use render::{render_scene, SceneParams, BACKGROUND, MAX_RENDER_DISTANCE, OBSTACLE_SCALE_M, WINDOW_SCALE_M};
pub use vehicle::{controller, step_vehicle, ControllerConfig, VehicleState};
