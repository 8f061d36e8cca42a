//! Keypoint admittance control over learned master-slave graphs.

pub mod controller;
pub mod scene;

pub use controller::{
    adapt_to_scene, compose_body_wrench, constraint_force, export_point_clouds, reproduce, sample_pose_target,
    ActiveConstraint, Controller, KacParams, ReproductionLog, Residual, StepRecord, Stiffness, Verdict,
};
pub use scene::{load_scene, save_scene, SimBody, SimScene};
