//! Candidate local frames on master objects.
//!
//! A frame is defined in the category's canonical space by an anchor point and
//! its nearest canonical neighbours. On any instance (a demo frame, a virtual
//! object, a novel scene body) it is rebuilt by registering the canonical
//! neighbourhood onto the instance's corresponding points.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{centroid, farthest_point_sampling, principal_axes, rigid_fit, Point};

pub const DEFAULT_NEIGHBORS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalFrame {
    pub master_id: String,
    pub anchor_index: usize,
    pub neighbor_indices: Vec<usize>,
    /// Orthonormal basis in canonical space, columns are the x, y, z axes.
    pub basis: Matrix3<f64>,
    /// Canonical anchor position.
    pub origin: Point,
    /// Canonical coordinates of the anchor followed by its neighbours.
    pub neighborhood: Vec<Point>,
    /// RMS distance of the canonical cloud to its centroid; instance scale is
    /// measured relative to it.
    pub canonical_extent: f64,
}

/// A local frame realized on a concrete point cloud.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FramePose {
    pub rotation: Matrix3<f64>,
    pub origin: Point,
    pub scale: f64,
}

impl FramePose {
    pub fn to_local(&self, p: &Point) -> Point {
        self.rotation.transpose() * (p - self.origin) / self.scale
    }

    pub fn to_world(&self, local: &Point) -> Point {
        self.origin + self.rotation * local * self.scale
    }

    pub fn dir_to_world(&self, local: &Point) -> Point {
        self.rotation * local
    }
}

fn rms_extent(points: &[Point]) -> f64 {
    let c = centroid(points);
    (points.iter().map(|p| (p - c).norm_squared()).sum::<f64>() / points.len().max(1) as f64).sqrt()
}

fn orient(axis: Point, reference: &Point) -> Point {
    let d = axis.dot(reference);
    if d.abs() > 1e-12 * reference.norm().max(1e-300) {
        return if d < 0.0 { -axis } else { axis };
    }
    // reference orthogonal to the axis: make the dominant component positive
    let (imax, _) = axis.iamax_full();
    if axis[imax] < 0.0 {
        -axis
    } else {
        axis
    }
}

impl LocalFrame {
    /// Builds the frame at `anchor` from canonical points; `None` when the
    /// neighbourhood is collinear.
    pub fn from_canonical(
        master_id: &str,
        canonical: &[Point],
        anchor: usize,
        k: usize,
        allowed: &[bool],
    ) -> Option<LocalFrame> {
        let mut others: Vec<(f64, usize)> = canonical
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != anchor && allowed[*i])
            .map(|(i, p)| ((p - canonical[anchor]).norm(), i))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let neighbor_indices: Vec<usize> = others.iter().take(k).map(|(_, i)| *i).collect();
        if neighbor_indices.len() < 2 {
            return None;
        }
        let mut neighborhood = vec![canonical[anchor]];
        neighborhood.extend(neighbor_indices.iter().map(|&i| canonical[i]));
        let (_, values, vectors) = principal_axes(&neighborhood);
        if values[0] <= 0.0 || values[1] < 1e-8 * values[0] {
            return None;
        }
        let reference = canonical[anchor] - centroid(canonical);
        let x = orient(vectors.column(0).into_owned(), &reference);
        let z = orient(vectors.column(2).into_owned(), &reference);
        let y = z.cross(&x);
        let basis = Matrix3::from_columns(&[x, y, z]);
        Some(LocalFrame {
            master_id: master_id.to_string(),
            anchor_index: anchor,
            neighbor_indices,
            basis,
            origin: canonical[anchor],
            neighborhood,
            canonical_extent: rms_extent(canonical),
        })
    }

    fn neighborhood_indices(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.anchor_index).chain(self.neighbor_indices.iter().copied())
    }

    /// Realizes the frame on an instance cloud that is index-aligned with the
    /// canonical points.
    pub fn pose_on(&self, instance: &[Point]) -> Result<FramePose> {
        let mut observed = Vec::with_capacity(self.neighborhood.len());
        for i in self.neighborhood_indices() {
            observed.push(*instance.get(i).ok_or_else(|| {
                Error::Degenerate(format!(
                    "frame on {} needs point {i}, instance has {}",
                    self.master_id,
                    instance.len()
                ))
            })?);
        }
        let fit = rigid_fit(&self.neighborhood, &observed).map_err(|e| {
            Error::Degenerate(format!(
                "frame {}@{} not reconstructible: {e}",
                self.master_id, self.anchor_index
            ))
        })?;
        let scale = if self.canonical_extent > 0.0 {
            rms_extent(instance) / self.canonical_extent
        } else {
            1.0
        };
        Ok(FramePose {
            rotation: fit.rotation.matrix() * self.basis,
            origin: observed[0],
            scale,
        })
    }
}

/// Samples `n_frames` anchors by farthest-point sampling on the canonical cloud
/// and builds a frame at each; collinear neighbourhoods are skipped.
pub fn candidate_local_frames(
    master_id: &str,
    canonical: &[Point],
    n_frames: usize,
    k: usize,
    allowed: Option<&[bool]>,
) -> Result<Vec<LocalFrame>> {
    let all = vec![true; canonical.len()];
    let allowed = allowed.unwrap_or(&all);
    if canonical.len() < 4 {
        return Err(Error::Precondition(format!(
            "master {master_id} has {} canonical points, need >= 4",
            canonical.len()
        )));
    }
    let anchors = farthest_point_sampling(canonical, n_frames, allowed);
    let frames: Vec<LocalFrame> = anchors
        .into_iter()
        .filter_map(|a| LocalFrame::from_canonical(master_id, canonical, a, k, allowed))
        .collect();
    if frames.is_empty() {
        return Err(Error::Degenerate(format!(
            "no non-degenerate local frame on {master_id}"
        )));
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit, Vector3};

    fn cloud() -> Vec<Point> {
        (0..40)
            .map(|i| {
                let f = i as f64;
                Point::new(0.05 * (0.7 * f).sin(), 0.04 * (1.3 * f).cos(), 0.03 * (0.37 * f).sin())
            })
            .collect()
    }

    #[test]
    fn planar_square_frames_have_plane_normal() {
        let mut pts = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                pts.push(Point::new(i as f64 * 0.01, j as f64 * 0.013, 0.0));
            }
        }
        let frames = candidate_local_frames("sq", &pts, 5, 8, None).unwrap();
        for f in frames {
            assert!(f.basis.column(2).dot(&Vector3::z()).abs() > 0.999);
            let btb = f.basis.transpose() * f.basis;
            assert!((btb - Matrix3::identity()).amax() < 1e-9);
        }
    }

    #[test]
    fn single_frame_anchors_farthest_point() {
        let pts = cloud();
        let frames = candidate_local_frames("c", &pts, 1, 8, None).unwrap();
        assert_eq!(frames.len(), 1);
        let c = centroid(&pts);
        let far = (0..pts.len())
            .max_by(|&a, &b| (pts[a] - c).norm().total_cmp(&(pts[b] - c).norm()))
            .unwrap();
        assert_eq!(frames[0].anchor_index, far);
    }

    #[test]
    fn frames_rotate_with_the_cloud() {
        let pts = cloud();
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::new(0.3, -1.0, 0.5)), 1.1);
        let t = Vector3::new(0.4, 0.1, -0.2);
        let moved: Vec<Point> = pts.iter().map(|p| r * p + t).collect();
        let a = candidate_local_frames("c", &pts, 6, 8, None).unwrap();
        let b = candidate_local_frames("c", &moved, 6, 8, None).unwrap();
        assert_eq!(a.len(), b.len());
        for (fa, fb) in a.iter().zip(&b) {
            assert_eq!(fa.anchor_index, fb.anchor_index);
            assert!((r.matrix() * fa.basis - fb.basis).amax() < 1e-6);
        }
    }

    #[test]
    fn collinear_cloud_is_degenerate() {
        let pts: Vec<Point> = (0..10).map(|i| Point::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(
            candidate_local_frames("l", &pts, 3, 8, None),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn pose_on_transformed_instance() {
        let pts = cloud();
        let frame = candidate_local_frames("c", &pts, 1, 8, None).unwrap().remove(0);
        let r = Rotation3::from_axis_angle(&Vector3::y_axis(), -0.6);
        let t = Vector3::new(1.0, 2.0, 3.0);
        let inst: Vec<Point> = pts.iter().map(|p| r * (p * 1.2) + t).collect();
        let pose = frame.pose_on(&inst).unwrap();
        assert!((pose.scale - 1.2).abs() < 1e-9);
        assert!((pose.rotation - r.matrix() * frame.basis).amax() < 1e-9);
        let local = Point::new(0.01, -0.02, 0.03);
        let back = pose.to_local(&pose.to_world(&local));
        assert!((back - local).norm() < 1e-12);
    }
}
