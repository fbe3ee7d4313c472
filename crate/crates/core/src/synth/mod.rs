//! Synthetic interchange scenes and a rosette-pattern LiDAR simulator.

mod geometry;
mod rosette;
mod scene;

pub use geometry::Primitive;
pub use rosette::{
    flyover_scan, fov_coverage, rosette_directions, rosette_scan, Beam, RosetteConfig, SensorPose,
};
pub use scene::{
    build_scene, generate_scene, BridgeSpec, CarSpec, Ground, PoleSpec, RoadSpec, Scene, SceneSpec,
    TerrainSpec, DEFAULT_DENSITY,
};
