//! Kinematic scene of rigid bodies with index-corresponding point clouds.

use std::path::Path;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{centroid, Point};
use crate::trajdata::{read_json, write_json, ObjectKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimBody {
    pub id: String,
    pub category: String,
    pub kind: ObjectKind,
    pub canonical_points: Vec<Point>,
    /// Instance shape in body coordinates, centred on the origin.
    pub shape: Vec<Point>,
    pub rotation: Matrix3<f64>,
    pub translation: Point,
    #[serde(default)]
    pub velocity: Point,
    #[serde(default)]
    pub angular_velocity: Point,
    /// Hand holding this body, if any.
    #[serde(default)]
    pub controlled_by: Option<String>,
    /// For hands: the body they are rigidly attached to.
    #[serde(default)]
    pub attached_to: Option<String>,
}

impl SimBody {
    /// Builds a body whose world points at the initial pose equal `points`;
    /// the shape is re-centred so the body origin is the cloud centroid.
    pub fn from_world_points(
        id: &str,
        category: &str,
        kind: ObjectKind,
        canonical_points: Vec<Point>,
        points: &[Point],
        rotation: Rotation3<f64>,
    ) -> SimBody {
        let c = centroid(points);
        let shape = points.iter().map(|p| rotation.inverse() * (p - c)).collect();
        SimBody {
            id: id.to_string(),
            category: category.to_string(),
            kind,
            canonical_points,
            shape,
            rotation: *rotation.matrix(),
            translation: c,
            velocity: Point::zeros(),
            angular_velocity: Point::zeros(),
            controlled_by: None,
            attached_to: None,
        }
    }

    pub fn points(&self) -> Vec<Point> {
        self.shape.iter().map(|p| self.rotation * p + self.translation).collect()
    }

    pub fn point(&self, i: usize) -> Point {
        self.rotation * self.shape[i] + self.translation
    }

    /// World velocity of a body-attached point.
    pub fn point_velocity(&self, p: &Point) -> Point {
        self.velocity + self.angular_velocity.cross(&(p - self.translation))
    }

    /// RMS radius of the shape about its centroid.
    pub fn radius(&self) -> f64 {
        (self.shape.iter().map(|p| p.norm_squared()).sum::<f64>() / self.shape.len().max(1) as f64).sqrt()
    }

    /// Applies an incremental rotation about the body origin.
    pub fn rotate(&mut self, delta: &UnitQuaternion<f64>) {
        let mut q = delta * UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation));
        q.renormalize();
        self.rotation = *q.to_rotation_matrix().matrix();
    }

    fn validate(&self) -> Result<()> {
        if self.shape.len() != self.canonical_points.len() {
            return Err(Error::Schema(format!(
                "body {}: {} instance points for {} canonical points",
                self.id,
                self.shape.len(),
                self.canonical_points.len()
            )));
        }
        let r = self.rotation;
        if (r.transpose() * r - Matrix3::identity()).amax() > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::Data(format!("body {}: rotation not orthonormal", self.id)));
        }
        let finite = self
            .shape
            .iter()
            .chain(&self.canonical_points)
            .chain([&self.translation, &self.velocity, &self.angular_velocity])
            .all(|p| p.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Data(format!("body {}: non-finite state", self.id)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimScene {
    pub task_name: String,
    pub dt: f64,
    pub bodies: Vec<SimBody>,
}

impl SimScene {
    pub fn body(&self, id: &str) -> Option<&SimBody> {
        self.bodies.iter().find(|b| b.id == id)
    }

    pub fn body_mut(&mut self, id: &str) -> Option<&mut SimBody> {
        self.bodies.iter_mut().find(|b| b.id == id)
    }

    pub fn body_by_category(&self, category: &str) -> Option<&SimBody> {
        self.bodies.iter().find(|b| b.category == category && !b.kind.is_hand())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("scene dt must be > 0, got {}", self.dt)));
        }
        for b in &self.bodies {
            b.validate()?;
            if let Some(h) = &b.attached_to {
                if self.body(h).is_none() {
                    return Err(Error::Schema(format!("hand {} attached to unknown body {h}", b.id)));
                }
            }
        }
        Ok(())
    }
}

pub fn load_scene(path: &Path) -> Result<SimScene> {
    let scene: SimScene = read_json(path)?;
    scene.validate()?;
    Ok(scene)
}

pub fn save_scene(scene: &SimScene, path: &Path) -> Result<()> {
    scene.validate()?;
    write_json(path, scene)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn body() -> SimBody {
        let pts: Vec<Point> = (0..6).map(|i| Point::new(i as f64 * 0.01, (i % 2) as f64 * 0.02, 0.1)).collect();
        SimBody::from_world_points("b", "c", ObjectKind::RigidObject, pts.clone(), &pts, Rotation3::from_euler_angles(0.1, 0.2, 0.3))
    }

    #[test]
    fn world_points_round_trip() {
        let b = body();
        let pts: Vec<Point> = (0..6).map(|i| Point::new(i as f64 * 0.01, (i % 2) as f64 * 0.02, 0.1)).collect();
        for (p, q) in b.points().iter().zip(&pts) {
            assert!((p - q).norm() < 1e-12);
        }
    }

    #[test]
    fn many_small_rotations_stay_orthonormal() {
        let mut b = body();
        let delta = UnitQuaternion::from_scaled_axis(Vector3::new(1e-3, -2e-3, 0.5e-3));
        for _ in 0..100_000 {
            b.rotate(&delta);
        }
        let r = b.rotation;
        assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-6);
    }

    #[test]
    fn bad_dt_is_rejected() {
        let s = SimScene { task_name: "t".into(), dt: 0.0, bodies: vec![body()] };
        assert!(s.validate().is_err());
    }
}
