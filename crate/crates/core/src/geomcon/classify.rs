//! Constraint classification over final slave positions and keypoint
//! selection for a master/slave pair.

use std::collections::BTreeSet;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::frames::{candidate_local_frames, FramePose, LocalFrame, DEFAULT_NEIGHBORS};
use super::manifold::{fit_manifold_curve, fit_manifold_surface, CurveModel, SurfaceModel};
use crate::error::{Error, Result};
use crate::math::{principal_axes, Point};
use crate::trajdata::{DemonstrationSet, ObjectTrack};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ConstraintKind {
    #[serde(rename = "p2p")]
    PointToPoint,
    #[serde(rename = "p2l")]
    PointToLine,
    #[serde(rename = "p2P")]
    PointToPlane,
    #[serde(rename = "p2c")]
    PointToCurve,
    #[serde(rename = "p2S")]
    PointToSurface,
    #[serde(rename = "pose")]
    Pose,
}

impl ConstraintKind {
    pub fn priority(self) -> u8 {
        match self {
            ConstraintKind::PointToPoint => 1,
            ConstraintKind::PointToLine => 2,
            ConstraintKind::PointToPlane => 3,
            ConstraintKind::PointToCurve => 4,
            ConstraintKind::PointToSurface => 5,
            ConstraintKind::Pose => 6,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ConstraintKind::PointToPoint => "p2p",
            ConstraintKind::PointToLine => "p2l",
            ConstraintKind::PointToPlane => "p2P",
            ConstraintKind::PointToCurve => "p2c",
            ConstraintKind::PointToSurface => "p2S",
            ConstraintKind::Pose => "pose",
        }
    }

    pub fn from_tag(tag: &str) -> Option<ConstraintKind> {
        [
            ConstraintKind::PointToPoint,
            ConstraintKind::PointToLine,
            ConstraintKind::PointToPlane,
            ConstraintKind::PointToCurve,
            ConstraintKind::PointToSurface,
            ConstraintKind::Pose,
        ]
        .into_iter()
        .find(|k| k.tag() == tag)
    }
}

/// Target distribution of a slave pose expressed in a master frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseTarget {
    pub mean_translation: Point,
    pub translation_cov: Matrix3<f64>,
    /// Chordal mean of the relative rotations.
    pub mean_rotation: Matrix3<f64>,
    /// RMS geodesic deviation from the mean rotation, radians.
    pub rotation_std: f64,
    pub rotation_max_dev: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConstraintParams {
    Point { target: Point },
    Line { point: Point, direction: Point },
    Plane { point: Point, normal: Point },
    Curve { model: CurveModel },
    Surface { model: SurfaceModel },
    Pose { target: PoseTarget },
}

impl ConstraintParams {
    /// Closest point of the constraint manifold to `local`, in frame
    /// coordinates. Pose targets attract the frame origin to the mean
    /// translation.
    pub fn attractor(&self, local: &Point) -> Point {
        match self {
            ConstraintParams::Point { target } => *target,
            ConstraintParams::Line { point, direction } => {
                point + direction * (local - point).dot(direction)
            }
            ConstraintParams::Plane { point, normal } => local - normal * (local - point).dot(normal),
            ConstraintParams::Curve { model } => model.nearest(local).1,
            ConstraintParams::Surface { model } => model.nearest(local).1,
            ConstraintParams::Pose { target } => target.mean_translation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometricConstraint {
    pub kind: ConstraintKind,
    pub slave_id: String,
    pub keypoint_index: usize,
    pub frame: LocalFrame,
    pub params: ConstraintParams,
    pub residual_scale: f64,
    pub priority: u8,
}

impl GeometricConstraint {
    /// Distance of a local-frame point to the constraint manifold.
    pub fn residual(&self, local: &Point) -> f64 {
        (self.params.attractor(local) - local).norm()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstraintTolerances {
    pub eps_abs: f64,
    pub rho: f64,
    pub eps_lin: f64,
    pub eps_fit: f64,
    pub max_degree: usize,
    pub d_min: f64,
    pub budget: usize,
    pub n_frames: usize,
    pub n_neighbors: usize,
}

impl Default for ConstraintTolerances {
    fn default() -> Self {
        ConstraintTolerances {
            eps_abs: 0.01,
            rho: 0.25,
            eps_lin: 0.01,
            eps_fit: 0.01,
            max_degree: 4,
            d_min: 0.03,
            budget: 3,
            n_frames: 12,
            n_neighbors: DEFAULT_NEIGHBORS,
        }
    }
}

impl ConstraintTolerances {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("eps_abs", self.eps_abs),
            ("rho", self.rho),
            ("eps_lin", self.eps_lin),
            ("eps_fit", self.eps_fit),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config("geomcon", format!("{name} must be > 0, got {v}")));
            }
        }
        if self.rho >= 1.0 {
            return Err(Error::config("geomcon", format!("rho must be < 1, got {}", self.rho)));
        }
        // keeps the ladder nested: a p2p set always passes the line/plane tests
        if self.eps_abs > self.eps_lin {
            return Err(Error::config("geomcon", "eps_abs must not exceed eps_lin"));
        }
        if self.d_min < 0.0 || !self.d_min.is_finite() {
            return Err(Error::config("geomcon", "d_min must be >= 0"));
        }
        if self.max_degree < 1 || self.budget < 1 || self.n_frames < 1 || self.n_neighbors < 3 {
            return Err(Error::config(
                "geomcon",
                "max_degree, budget, n_frames must be >= 1 and n_neighbors >= 3",
            ));
        }
        Ok(())
    }
}

/// Kind, parameters and residual scale of a classified point set.
#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub kind: ConstraintKind,
    pub params: ConstraintParams,
    pub residual_scale: f64,
}

/// Walks the constraint ladder on the spread of `final_positions`.
///
/// Line and plane residuals are the RMS spread along the worst orthogonal
/// principal direction (`√λ2` and `√λ3`), so a set passing the point test
/// also passes both whenever `eps_abs <= eps_lin`. The curved kinds need a
/// fitted degree of at least two and a cross-validated error below both
/// `eps_fit` and `rho` times the spread they model.
pub fn classify_constraint(
    final_positions: &[Point],
    tol: &ConstraintTolerances,
) -> Result<Option<Classification>> {
    let n = final_positions.len();
    if n < 3 {
        return Err(Error::Precondition(format!(
            "classification needs >= 3 samples, got {n}"
        )));
    }
    let (mean, values, vectors) = principal_axes(final_positions);
    let s = values.map(f64::sqrt);
    if s[0] < tol.eps_abs {
        return Ok(Some(Classification {
            kind: ConstraintKind::PointToPoint,
            params: ConstraintParams::Point { target: mean },
            residual_scale: (values[0] + values[1] + values[2]).sqrt(),
        }));
    }
    let e1: Point = vectors.column(0).into_owned();
    let e3: Point = vectors.column(2).into_owned();
    let line_residual = s[1];
    if s[1] < tol.rho * s[0] && line_residual < tol.eps_lin {
        return Ok(Some(Classification {
            kind: ConstraintKind::PointToLine,
            params: ConstraintParams::Line {
                point: mean,
                direction: canonical_sign(e1),
            },
            residual_scale: (values[1] + values[2]).sqrt(),
        }));
    }
    if n >= 5 {
        if let Ok(fit) = fit_manifold_curve(final_positions, tol.max_degree) {
            if fit.model.degree >= 2 && fit.cv_error < tol.eps_fit && fit.cv_error < tol.rho * s[0] {
                return Ok(Some(Classification {
                    kind: ConstraintKind::PointToCurve,
                    residual_scale: fit.residual,
                    params: ConstraintParams::Curve { model: fit.model },
                }));
            }
        }
    }
    let plane_residual = s[2];
    if s[2] < tol.rho * s[1] && plane_residual < tol.eps_lin {
        return Ok(Some(Classification {
            kind: ConstraintKind::PointToPlane,
            params: ConstraintParams::Plane {
                point: mean,
                normal: canonical_sign(e3),
            },
            residual_scale: s[2],
        }));
    }
    if n >= 6 {
        if let Ok(fit) = fit_manifold_surface(final_positions, tol.max_degree) {
            if fit.model.degree >= 2 && fit.cv_error < tol.eps_fit && fit.cv_error < tol.rho * s[1] {
                return Ok(Some(Classification {
                    kind: ConstraintKind::PointToSurface,
                    residual_scale: fit.residual,
                    params: ConstraintParams::Surface { model: fit.model },
                }));
            }
        }
    }
    Ok(None)
}

fn canonical_sign(v: Point) -> Point {
    let (imax, _) = v.iamax_full();
    if v[imax] < 0.0 {
        -v
    } else {
        v
    }
}

/// Slave trajectories expressed in one local frame.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedSamples {
    /// `[demo][keypoint][t]`
    pub trajectories: Vec<Vec<Vec<Point>>>,
    /// `[keypoint][demo]`
    pub final_positions: Vec<Vec<Point>>,
}

/// Frame poses of `frame` on every time step of a master track.
pub fn frame_poses(frame: &LocalFrame, master: &ObjectTrack) -> Result<Vec<FramePose>> {
    (0..master.n_frames())
        .map(|t| frame.pose_on(&master.frame(t)))
        .collect()
}

/// Expresses every slave point in the frame rebuilt on the master at each
/// time step of each demo.
pub fn align_to_frame(
    masters: &[&ObjectTrack],
    slaves: &[&ObjectTrack],
    frame: &LocalFrame,
) -> Result<AlignedSamples> {
    if masters.len() != slaves.len() {
        return Err(Error::InvalidArgument(format!(
            "{} master tracks for {} slave tracks",
            masters.len(),
            slaves.len()
        )));
    }
    let n_kp = slaves.first().map_or(0, |s| s.n_points());
    let mut trajectories = Vec::with_capacity(slaves.len());
    for (master, slave) in masters.iter().zip(slaves) {
        let poses = frame_poses(frame, master)?;
        let demo: Vec<Vec<Point>> = slave
            .points
            .iter()
            .map(|traj| traj.iter().zip(&poses).map(|(p, pose)| pose.to_local(p)).collect())
            .collect();
        trajectories.push(demo);
    }
    let final_positions = (0..n_kp)
        .map(|k| {
            trajectories
                .iter()
                .map(|d| *d[k].last().expect("non-empty track"))
                .collect()
        })
        .collect();
    Ok(AlignedSamples {
        trajectories,
        final_positions,
    })
}

/// Constraints selected for one master/slave pair together with the aligned
/// trajectories of each selected keypoint (`[demo][t]`).
#[derive(Clone, Debug, Default)]
pub struct PairConstraints {
    pub constraints: Vec<GeometricConstraint>,
    pub trajectories: Vec<Vec<Vec<Point>>>,
}

/// Exclusion masks for a pair: master points unusable as frame anchors or
/// neighbours, slave points unusable as keypoints.
#[derive(Clone, Debug, Default)]
pub struct PairMasks<'a> {
    pub master: Option<&'a BTreeSet<usize>>,
    pub slave: Option<&'a BTreeSet<usize>>,
}

struct Candidate {
    class: Classification,
    frame_pos: usize,
    keypoint: usize,
}

/// Searches every candidate frame on the master for constraints on every
/// slave point and keeps up to `budget` well separated keypoints. An empty
/// result means no invariance was found.
pub fn extract_pair_constraints(
    master_id: &str,
    slave_id: &str,
    set: &DemonstrationSet,
    tol: &ConstraintTolerances,
    masks: PairMasks<'_>,
) -> Result<PairConstraints> {
    if set.demos.len() < 2 {
        return Err(Error::Precondition("constraint extraction needs >= 2 demos".into()));
    }
    let masters = set.tracks_of(master_id)?;
    let slaves = set.tracks_of(slave_id)?;
    let canonical = &masters[0].canonical_points;
    let allowed: Vec<bool> = (0..canonical.len())
        .map(|i| masks.master.is_none_or(|m| !m.contains(&i)))
        .collect();
    let frames = candidate_local_frames(master_id, canonical, tol.n_frames, tol.n_neighbors, Some(&allowed))?;
    let n_kp = slaves[0].n_points();
    let slave_ok = |k: usize| masks.slave.is_none_or(|m| !m.contains(&k));

    let mut best: Vec<Option<Candidate>> = (0..n_kp).map(|_| None).collect();
    let mut aligned = Vec::with_capacity(frames.len());
    for (fi, frame) in frames.iter().enumerate() {
        let samples = align_to_frame(&masters, &slaves, frame)?;
        for (k, finals) in samples.final_positions.iter().enumerate() {
            if !slave_ok(k) || finals.len() < 3 {
                continue;
            }
            let Some(class) = classify_constraint(finals, tol)? else {
                continue;
            };
            let better = match &best[k] {
                None => true,
                Some(cur) => {
                    let key = |c: &Classification, f: &LocalFrame| (c.kind.priority(), c.residual_scale, f.anchor_index);
                    let a = key(&class, frame);
                    let b = key(&cur.class, &frames[cur.frame_pos]);
                    a.0 < b.0 || (a.0 == b.0 && (a.1 < b.1 || (a.1 == b.1 && a.2 < b.2)))
                }
            };
            if better {
                best[k] = Some(Candidate { class, frame_pos: fi, keypoint: k });
            }
        }
        aligned.push(samples);
    }

    let mut ranked: Vec<Candidate> = best.into_iter().flatten().collect();
    ranked.sort_by(|a, b| {
        a.class
            .kind
            .priority()
            .cmp(&b.class.kind.priority())
            .then(a.class.residual_scale.total_cmp(&b.class.residual_scale))
            .then(frames[a.frame_pos].anchor_index.cmp(&frames[b.frame_pos].anchor_index))
            .then(a.keypoint.cmp(&b.keypoint))
    });
    let slave_canonical = &slaves[0].canonical_points;
    let mut out = PairConstraints::default();
    let mut chosen: Vec<usize> = Vec::new();
    for cand in ranked {
        if out.constraints.len() >= tol.budget {
            break;
        }
        let p = slave_canonical[cand.keypoint];
        if chosen.iter().any(|&c| (slave_canonical[c] - p).norm() < tol.d_min) {
            continue;
        }
        chosen.push(cand.keypoint);
        let frame = frames[cand.frame_pos].clone();
        out.trajectories.push(
            aligned[cand.frame_pos]
                .trajectories
                .iter()
                .map(|d| d[cand.keypoint].clone())
                .collect(),
        );
        out.constraints.push(GeometricConstraint {
            kind: cand.class.kind,
            slave_id: slave_id.to_string(),
            keypoint_index: cand.keypoint,
            frame,
            priority: cand.class.kind.priority(),
            params: cand.class.params,
            residual_scale: cand.class.residual_scale,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn noisy(rng: &mut ChaCha8Rng, sigma: f64) -> Point {
        let n = Normal::new(0.0, sigma).unwrap();
        Point::new(n.sample(rng), n.sample(rng), n.sample(rng))
    }

    #[test]
    fn identical_points_are_p2p_with_zero_scale() {
        let pts = vec![Point::new(0.1, 0.2, 0.3); 5];
        let c = classify_constraint(&pts, &ConstraintTolerances::default()).unwrap().unwrap();
        assert_eq!(c.kind, ConstraintKind::PointToPoint);
        assert_eq!(c.residual_scale, 0.0);
    }

    #[test]
    fn fewer_than_three_samples_error() {
        let pts = vec![Point::zeros(); 2];
        assert!(classify_constraint(&pts, &ConstraintTolerances::default()).is_err());
    }

    #[test]
    fn noisy_line_is_p2l_with_accurate_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dir = Vector3::new(1.0, 2.0, -0.5).normalize();
        let pts: Vec<Point> = (0..10)
            .map(|_| Point::new(0.2, 0.0, 0.1) + dir * rng.random_range(-0.1..0.1) + noisy(&mut rng, 0.001))
            .collect();
        let c = classify_constraint(&pts, &ConstraintTolerances::default()).unwrap().unwrap();
        assert_eq!(c.kind, ConstraintKind::PointToLine);
        let ConstraintParams::Line { direction, .. } = c.params else { panic!() };
        assert!(direction.dot(&dir).abs() > 2f64.to_radians().cos());
    }

    #[test]
    fn noisy_arc_is_p2c_with_small_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth: Vec<Point> = (0..20)
            .map(|_| {
                let a: f64 = rng.random_range(-60f64.to_radians()..60f64.to_radians());
                Point::new(0.1 * a.sin(), 0.1 * a.cos(), 0.0)
            })
            .collect();
        let pts: Vec<Point> = truth.iter().map(|p| p + noisy(&mut rng, 0.001)).collect();
        let c = classify_constraint(&pts, &ConstraintTolerances::default()).unwrap().unwrap();
        assert_eq!(c.kind, ConstraintKind::PointToCurve);
        let ConstraintParams::Curve { model } = &c.params else { panic!() };
        let worst = pts.iter().map(|p| model.distance(p)).fold(0.0, f64::max);
        assert!(worst < 0.005, "{worst}");
    }

    #[test]
    fn scattered_disc_is_p2p_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Point> = (0..7)
            .map(|_| {
                let r = 0.05 * rng.random::<f64>().sqrt();
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                Point::new(r * a.cos(), r * a.sin(), 0.02) + noisy(&mut rng, 0.0005)
            })
            .collect();
        let c = classify_constraint(&pts, &ConstraintTolerances::default()).unwrap();
        if let Some(c) = c {
            assert_ne!(c.kind, ConstraintKind::PointToPoint);
        }
    }

    #[test]
    fn classification_is_invariant_under_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::new(0.2, 1.0, -0.4)), 2.0);
        let t = Vector3::new(0.3, -0.1, 0.7);
        for _ in 0..20 {
            let pts: Vec<Point> = (0..8)
                .map(|_| Point::new(rng.random_range(-0.1..0.1), rng.random_range(-0.03..0.03), 0.0) + noisy(&mut rng, 0.001))
                .collect();
            let moved: Vec<Point> = pts.iter().map(|p| r * p + t).collect();
            let tol = ConstraintTolerances::default();
            let a = classify_constraint(&pts, &tol).unwrap().map(|c| c.kind);
            let b = classify_constraint(&moved, &tol).unwrap().map(|c| c.kind);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn kind_tags_round_trip() {
        for tag in ["p2p", "p2l", "p2P", "p2c", "p2S", "pose"] {
            let k = ConstraintKind::from_tag(tag).unwrap();
            assert_eq!(k.tag(), tag);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{tag}\""));
        }
    }

    #[test]
    fn bad_tolerances_name_module() {
        let tol = ConstraintTolerances { rho: 1.5, ..Default::default() };
        let err = tol.validate().unwrap_err().to_string();
        assert!(err.contains("geomcon"));
    }
}
