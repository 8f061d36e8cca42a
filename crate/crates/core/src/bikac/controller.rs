//! Keypoint admittance controller over an instantiated master-slave graph.
//!
//! Every constraint drives its slave keypoint with a spring-damper towards
//! an attractor given in its master's local frame. The attractor follows the
//! adapted VMP during the phase and blends onto the constraint manifold over
//! the last 10% of phase. Forces on one body are composed into a wrench and
//! integrated with semi-implicit Euler.

use std::collections::{BTreeMap, BTreeSet};

use log::{debug, warn};
use nalgebra::{Matrix3, Rotation3, UnitQuaternion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::scene::{SimBody, SimScene};
use crate::error::{Error, Result};
use crate::geomcon::{ConstraintKind, ConstraintParams, FramePose, GeometricConstraint, LocalFrame, PoseTarget};
use crate::hmsr::{HmsrGraph, NodeKind};
use crate::math::{project_to_so3, rotation_vector, sorted_eigen, Point};
use crate::saliency::VIRTUAL_PREFIX;
use crate::vmp::{pose_to_vec, vec_to_pose, Vmp};

/// Phase after which the attractor blends from the VMP onto the manifold.
pub const BLEND_START: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stiffness {
    pub p2p: f64,
    pub p2l: f64,
    #[serde(rename = "p2P")]
    pub p2plane: f64,
    pub p2c: f64,
    #[serde(rename = "p2S")]
    pub p2surface: f64,
    pub pose: f64,
}

impl Default for Stiffness {
    fn default() -> Self {
        Stiffness { p2p: 200.0, p2l: 200.0, p2plane: 200.0, p2c: 200.0, p2surface: 200.0, pose: 200.0 }
    }
}

impl Stiffness {
    pub fn of(&self, kind: ConstraintKind) -> f64 {
        match kind {
            ConstraintKind::PointToPoint => self.p2p,
            ConstraintKind::PointToLine => self.p2l,
            ConstraintKind::PointToPlane => self.p2plane,
            ConstraintKind::PointToCurve => self.p2c,
            ConstraintKind::PointToSurface => self.p2surface,
            ConstraintKind::Pose => self.pose,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KacParams {
    pub stiffness: Stiffness,
    /// Damping per keypoint, N·s/m; critical damping `2√(k·m)` when unset.
    pub damping: Option<f64>,
    pub mass: f64,
    /// Scales the rotational stiffness of pose constraints.
    pub torque_scale: f64,
    /// Stiffness factor for constraints below a body's top priority.
    pub secondary_gain: f64,
    pub max_speed: f64,
    pub phase_rate: f64,
    pub stall_error: f64,
    pub dt: f64,
    /// Convergence tolerances and hold time.
    pub pos_tol: f64,
    pub rot_tol_deg: f64,
    pub hold_time: f64,
    /// Pose targets are drawn within this many standard deviations.
    pub target_spread: f64,
    pub seed: u64,
    /// Keep every n-th step in the log.
    pub record_every: usize,
}

impl Default for KacParams {
    fn default() -> Self {
        KacParams {
            stiffness: Stiffness::default(),
            damping: None,
            mass: 1.0,
            torque_scale: 1.0,
            secondary_gain: 0.02,
            max_speed: 0.5,
            phase_rate: 0.25,
            stall_error: 0.03,
            dt: 0.01,
            pos_tol: 0.005,
            rot_tol_deg: 3.0,
            hold_time: 0.5,
            target_spread: 1.0,
            seed: 0,
            record_every: 1,
        }
    }
}

impl KacParams {
    pub fn damping_for(&self, kind: ConstraintKind) -> f64 {
        self.damping_at(self.stiffness.of(kind))
    }

    /// Damping for a spring of stiffness `k`; critical unless set explicitly.
    pub fn damping_at(&self, k: f64) -> f64 {
        self.damping.unwrap_or_else(|| 2.0 * (k * self.mass).sqrt())
    }

    /// Effective stiffness of a constraint given whether it has its body's
    /// top priority.
    pub fn stiffness_for(&self, kind: ConstraintKind, top: bool) -> f64 {
        self.stiffness.of(kind) * if top { 1.0 } else { self.secondary_gain }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.stiffness;
        for (name, v) in [
            ("stiffness.p2p", s.p2p),
            ("stiffness.p2l", s.p2l),
            ("stiffness.p2P", s.p2plane),
            ("stiffness.p2c", s.p2c),
            ("stiffness.p2S", s.p2surface),
            ("stiffness.pose", s.pose),
            ("mass", self.mass),
            ("torque_scale", self.torque_scale),
            ("max_speed", self.max_speed),
            ("phase_rate", self.phase_rate),
            ("stall_error", self.stall_error),
            ("pos_tol", self.pos_tol),
            ("rot_tol_deg", self.rot_tol_deg),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config("bikac", format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.secondary_gain > 0.0 && self.secondary_gain <= 1.0) {
            return Err(Error::config("bikac", format!("secondary_gain must be in (0, 1], got {}", self.secondary_gain)));
        }
        if let Some(d) = self.damping {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::config("bikac", format!("damping must be > 0, got {d}")));
            }
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("bikac", format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.hold_time >= 0.0) || !(self.target_spread >= 0.0) || self.record_every < 1 {
            return Err(Error::config("bikac", "hold_time, target_spread must be >= 0 and record_every >= 1"));
        }
        Ok(())
    }
}

/// Source of a master frame: a live scene body or a frozen initial copy.
#[derive(Clone, Debug)]
pub enum MasterSource {
    Body(String),
    Frozen(Vec<Point>),
}

/// A learned constraint bound to scene bodies.
#[derive(Clone, Debug)]
pub struct ActiveConstraint {
    pub master: String,
    pub slave: String,
    pub source: MasterSource,
    /// Scene body driven by the constraint.
    pub body: String,
    pub constraint: GeometricConstraint,
    pub vmp: Vmp,
    /// Pose constraints: frozen frame pose of the virtual master and the
    /// sampled target in that frame.
    pub pose_goal: Option<(Point, Rotation3<f64>)>,
}

/// Force on a keypoint and the attractor it was pulled towards.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KeypointForce {
    pub force: Point,
    pub attractor: Point,
}

fn scene_body_for<'a>(graph: &HmsrGraph, scene: &'a SimScene, node: &str) -> Result<&'a SimBody> {
    if let Some(b) = scene.body(node) {
        return Ok(b);
    }
    let category = graph
        .meta
        .as_ref()
        .and_then(|m| m.categories.get(node))
        .ok_or_else(|| Error::Schema(format!("graph has no category for node {node}")))?;
    scene
        .body_by_category(category)
        .ok_or_else(|| Error::Schema(format!("scene lacks category {category} (node {node})")))
}

fn real_node(graph: &HmsrGraph, id: &str) -> String {
    match graph.node(id) {
        Some(n) if n.kind == NodeKind::Virtual => id.strip_prefix(VIRTUAL_PREFIX).unwrap_or(id).to_string(),
        _ => id.to_string(),
    }
}

fn frame_pose(frame: &LocalFrame, points: &[Point]) -> Result<FramePose> {
    frame.pose_on(points)
}

/// Draws a pose target within `spread` standard deviations of the mean.
pub fn sample_pose_target(target: &PoseTarget, spread: f64, rng: &mut ChaCha8Rng) -> (Point, Rotation3<f64>) {
    let (values, vectors) = sorted_eigen(&target.translation_cov);
    let mut t = target.mean_translation;
    for (i, v) in values.iter().enumerate() {
        let z: f64 = StandardNormal.sample(rng);
        t += vectors.column(i) * (z.clamp(-1.0, 1.0) * spread * v.sqrt());
    }
    let axis = Point::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    );
    let z: f64 = StandardNormal.sample(rng);
    let angle = z.clamp(-1.0, 1.0) * spread * target.rotation_std;
    let perturb = if axis.norm() > 0.0 {
        Rotation3::new(axis.normalize() * angle)
    } else {
        Rotation3::identity()
    };
    (t, project_to_so3(&target.mean_rotation) * perturb)
}

/// Binds every non-hand edge of the graph to scene bodies and adapts each
/// VMP from the current keypoint (or frame) state to its goal.
pub fn adapt_to_scene(graph: &HmsrGraph, scene: &SimScene, params: &KacParams) -> Result<Vec<ActiveConstraint>> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut out = Vec::new();
    let order = graph.topological_order()?;
    let rank: BTreeMap<&str, usize> = order.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut edges: Vec<_> = graph.edges.iter().collect();
    edges.sort_by_key(|e| (rank[e.slave.as_str()], rank[e.master.as_str()]));
    for node in &graph.nodes {
        if node.kind != NodeKind::Hand {
            scene_body_for(graph, scene, &real_node(graph, &node.id))?;
        }
    }
    for edge in edges {
        if graph.node(&edge.slave).is_some_and(|n| n.kind == NodeKind::Hand) {
            continue;
        }
        let master_is_virtual = graph.node(&edge.master).is_some_and(|n| n.kind == NodeKind::Virtual);
        let master_body = scene_body_for(graph, scene, &real_node(graph, &edge.master))?;
        let slave_body = scene_body_for(graph, scene, &edge.slave)?;
        let source = if master_is_virtual {
            MasterSource::Frozen(master_body.points())
        } else {
            MasterSource::Body(master_body.id.clone())
        };
        let master_points = master_body.points();
        for (c, vmp) in edge.constraints.iter().zip(&edge.vmps) {
            let pose = frame_pose(&c.frame, &master_points)?;
            let (vmp, pose_goal) = match &c.params {
                ConstraintParams::Pose { target } => {
                    let slave_pose = frame_pose(&c.frame, &slave_body.points())?;
                    let t0 = pose.to_local(&slave_pose.origin);
                    let r0 = Rotation3::from_matrix_unchecked(pose.rotation.transpose() * slave_pose.rotation);
                    let identity = Rotation3::identity();
                    let (gt, gr) = sample_pose_target(target, params.target_spread, &mut rng);
                    let start = pose_to_vec(&t0, &r0, &identity);
                    let goal = pose_to_vec(&gt, &gr, &identity);
                    (vmp.adapt(&start, &goal, &[])?, Some((gt, gr)))
                }
                p => {
                    let x = pose.to_local(&slave_body.point(c.keypoint_index));
                    let g = Point::new(vmp.goal[0], vmp.goal[1], vmp.goal[2]);
                    let goal = p.attractor(&g);
                    (vmp.adapt(&[x.x, x.y, x.z], &[goal.x, goal.y, goal.z], &[])?, None)
                }
            };
            out.push(ActiveConstraint {
                master: edge.master.clone(),
                slave: edge.slave.clone(),
                source: source.clone(),
                body: slave_body.id.clone(),
                constraint: c.clone(),
                vmp,
                pose_goal,
            });
        }
    }
    Ok(out)
}

/// Spring-damper force on a keypoint. `local` is the keypoint in the master
/// frame; the attractor follows the VMP until `BLEND_START` and then blends
/// linearly onto the manifold attractor.
pub fn constraint_force(
    constraint: &GeometricConstraint,
    vmp: Option<&Vmp>,
    master: &FramePose,
    keypoint: &Point,
    velocity: &Point,
    phase: f64,
    k: f64,
    d: f64,
) -> KeypointForce {
    let local = master.to_local(keypoint);
    let manifold = constraint.params.attractor(&local);
    let target_local = match vmp {
        Some(v) => {
            let s = v.evaluate(phase).value;
            let via = Point::new(s[0], s[1], s[2]);
            let beta = ((phase - BLEND_START) / (1.0 - BLEND_START)).clamp(0.0, 1.0);
            via * (1.0 - beta) + manifold * beta
        }
        None => manifold,
    };
    let attractor = master.to_world(&target_local);
    KeypointForce {
        force: (attractor - keypoint) * k - velocity * d,
        attractor,
    }
}

/// Net force and torque about `centre` of point forces.
pub fn compose_body_wrench(centre: &Point, forces: &[(Point, Point)]) -> (Point, Point) {
    forces.iter().fold((Point::zeros(), Point::zeros()), |(f, t), (r, fi)| {
        (f + fi, t + (r - centre).cross(fi))
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyPose {
    pub rotation: Matrix3<f64>,
    pub translation: Point,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wrench {
    pub force: Point,
    pub torque: Point,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub distance: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub angle: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub poses: BTreeMap<String, BodyPose>,
    pub phases: BTreeMap<String, f64>,
    /// In the order of `ReproductionLog::constraints`.
    pub residuals: Vec<Residual>,
    pub wrenches: BTreeMap<String, Wrench>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintInfo {
    pub master: String,
    pub slave: String,
    pub body: String,
    pub kind: ConstraintKind,
    pub keypoint_index: usize,
    /// Whether the constraint is among its body's top-priority ones.
    pub top_priority: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub final_residual: Residual,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReproductionLog {
    pub constraints: Vec<ConstraintInfo>,
    pub steps: Vec<StepRecord>,
    pub verdicts: Vec<Verdict>,
    pub converged: bool,
    pub n_steps: usize,
    pub sim_time: f64,
    pub final_scene: SimScene,
}

/// Stepping state of one reproduction.
pub struct Controller {
    pub scene: SimScene,
    pub actives: Vec<ActiveConstraint>,
    pub params: KacParams,
    pub phases: BTreeMap<String, f64>,
    /// Driven bodies, masters before slaves.
    pub order: Vec<String>,
    /// Hand id to (body, rotation offset, translation offset).
    attachments: BTreeMap<String, (String, Matrix3<f64>, Point)>,
    top_priority: Vec<bool>,
    /// Integration sub-steps per control step.
    pub substeps: usize,
    pub step_index: usize,
}

/// Largest `h * rate` allowed for any spring or damper rate of a body.
const MAX_RATE_STEP: f64 = 0.5;

/// Sub-steps per control step that keep explicit integration of every
/// body's translational and rotational spring-damper rates stable.
fn stable_substeps(scene: &SimScene, actives: &[ActiveConstraint], p: &KacParams) -> usize {
    let mut worst = 0.0f64;
    for body in &scene.bodies {
        let mine: Vec<&ActiveConstraint> = actives.iter().filter(|a| a.body == body.id).collect();
        if mine.is_empty() {
            continue;
        }
        let l2 = body.radius().powi(2).max(1e-6);
        let inertia = p.mass * l2;
        let (mut kt, mut dt, mut kr, mut dr) = (0.0, 0.0, 0.0, 0.0);
        for a in mine {
            let k = p.stiffness.of(a.constraint.kind);
            let d = p.damping_for(a.constraint.kind);
            let r2 = match a.pose_goal {
                Some(_) => {
                    kr += p.torque_scale * k * l2;
                    dr += d * l2;
                    frame_pose(&a.constraint.frame, &body.points())
                        .map(|f| (f.origin - body.translation).norm_squared())
                        .unwrap_or(l2)
                }
                None => (body.point(a.constraint.keypoint_index) - body.translation).norm_squared(),
            };
            kt += k;
            dt += d;
            kr += k * r2;
            dr += d * r2;
        }
        for rate in [dt / p.mass, (kt / p.mass).sqrt(), dr / inertia, (kr / inertia).sqrt()] {
            worst = worst.max(rate);
        }
    }
    ((worst * p.dt / MAX_RATE_STEP).ceil() as usize).max(1)
}

impl Controller {
    pub fn new(graph: &HmsrGraph, scene: &SimScene, params: &KacParams) -> Result<Controller> {
        params.validate()?;
        scene.validate()?;
        let mut scene = scene.clone();
        scene.dt = params.dt;
        let actives = adapt_to_scene(graph, &scene, params)?;
        let mut order: Vec<String> = Vec::new();
        for a in &actives {
            if !order.contains(&a.body) {
                order.push(a.body.clone());
            }
        }
        let mut attachments = BTreeMap::new();
        for b in &scene.bodies {
            if let Some(target) = &b.attached_to {
                let o = scene.body(target).expect("validated scene");
                attachments.insert(
                    b.id.clone(),
                    (
                        target.clone(),
                        o.rotation.transpose() * b.rotation,
                        o.rotation.transpose() * (b.translation - o.translation),
                    ),
                );
            }
        }
        let mut best: BTreeMap<&str, u8> = BTreeMap::new();
        for a in &actives {
            let e = best.entry(a.body.as_str()).or_insert(u8::MAX);
            *e = (*e).min(a.constraint.priority);
        }
        let top_priority = actives.iter().map(|a| best[a.body.as_str()] == a.constraint.priority).collect();
        let phases = order.iter().map(|b| (b.clone(), 0.0)).collect();
        let substeps = stable_substeps(&scene, &actives, params);
        debug!("{substeps} integration sub-steps per control step");
        Ok(Controller {
            scene,
            actives,
            params: params.clone(),
            phases,
            order,
            attachments,
            top_priority,
            substeps,
            step_index: 0,
        })
    }

    fn master_pose(&self, a: &ActiveConstraint) -> Result<FramePose> {
        match &a.source {
            MasterSource::Frozen(points) => frame_pose(&a.constraint.frame, points),
            MasterSource::Body(id) => frame_pose(&a.constraint.frame, &self.scene.body(id).expect("bound body").points()),
        }
    }

    /// Residual of an active constraint against its final manifold or pose
    /// target, recomputed from the current scene.
    pub fn residual(&self, a: &ActiveConstraint) -> Result<Residual> {
        let master = self.master_pose(a)?;
        let body = self.scene.body(&a.body).expect("bound body");
        match &a.pose_goal {
            Some((t, r)) => {
                let slave = frame_pose(&a.constraint.frame, &body.points())?;
                let target_origin = master.to_world(t);
                let target_rot = master.rotation * r.matrix();
                let err = rotation_vector(&(target_rot * slave.rotation.transpose()));
                Ok(Residual {
                    distance: (target_origin - slave.origin).norm(),
                    angle: Some(err.norm()),
                })
            }
            None => {
                let p = body.point(a.constraint.keypoint_index);
                let local = master.to_local(&p);
                let attr = master.to_world(&a.constraint.params.attractor(&local));
                Ok(Residual { distance: (attr - p).norm(), angle: None })
            }
        }
    }

    pub fn residuals(&self) -> Result<Vec<Residual>> {
        self.actives.iter().map(|a| self.residual(a)).collect()
    }

    fn satisfied(&self, r: &Residual) -> bool {
        r.distance < self.params.pos_tol && r.angle.is_none_or(|a| a < self.params.rot_tol_deg.to_radians())
    }

    /// Advances the scene by one control step; returns the wrench applied
    /// per body in its last sub-step.
    pub fn step(&mut self) -> Result<BTreeMap<String, Wrench>> {
        if !(self.params.dt > 0.0) {
            return Err(Error::Simulation {
                step: self.step_index,
                reason: format!("dt must be > 0, got {}", self.params.dt),
            });
        }
        let h = self.params.dt / self.substeps as f64;
        let mut wrenches = BTreeMap::new();
        for _ in 0..self.substeps {
            wrenches = self.substep(h)?;
        }
        self.step_index += 1;
        Ok(wrenches)
    }

    fn substep(&mut self, h: f64) -> Result<BTreeMap<String, Wrench>> {
        let p = self.params.clone();
        let mut wrenches = BTreeMap::new();
        for body_id in self.order.clone() {
            let phase = self.phases[&body_id];
            let body = self.scene.body(&body_id).expect("bound body").clone();
            let centre = body.translation;
            let mut point_forces: Vec<(Point, Point)> = Vec::new();
            let mut extra_torque = Point::zeros();
            // only top-priority tracking can stall the phase
            let mut tracking = 0.0f64;
            let points = body.points();
            for (a, &top) in self.actives.iter().zip(&self.top_priority).filter(|(a, _)| a.body == body_id) {
                let master = self.master_pose(a)?;
                let kind = a.constraint.kind;
                let k = p.stiffness_for(kind, top);
                let d = p.damping_at(k);
                let track = |e: f64, tracking: f64| if top { tracking.max(e) } else { tracking };
                match &a.pose_goal {
                    Some((gt, gr)) => {
                        let s = a.vmp.evaluate(phase).value;
                        let (vt, vr) = vec_to_pose(&s, &Rotation3::identity());
                        let beta = ((phase - BLEND_START) / (1.0 - BLEND_START)).clamp(0.0, 1.0);
                        let t_local = vt * (1.0 - beta) + gt * beta;
                        let r_local = vr.slerp(gr, beta);
                        let slave = frame_pose(&a.constraint.frame, &points)?;
                        let target = master.to_world(&t_local);
                        let v = body.point_velocity(&slave.origin);
                        point_forces.push((slave.origin, (target - slave.origin) * k - v * d));
                        tracking = track((target - slave.origin).norm(), tracking);
                        let l2 = body.radius().powi(2).max(1e-6);
                        let err = rotation_vector(&(master.rotation * r_local.matrix() * slave.rotation.transpose()));
                        extra_torque += err * (p.torque_scale * k * l2) - body.angular_velocity * (d * l2);
                    }
                    None => {
                        let x = points[a.constraint.keypoint_index];
                        let v = body.point_velocity(&x);
                        let f = constraint_force(&a.constraint, Some(&a.vmp), &master, &x, &v, phase, k, d);
                        tracking = track((f.attractor - x).norm(), tracking);
                        point_forces.push((x, f.force));
                    }
                }
            }
            let (force, torque) = compose_body_wrench(&centre, &point_forces);
            let torque = torque + extra_torque;
            self.integrate(&body_id, &force, &torque, h)?;
            if tracking <= p.stall_error {
                let x = self.phases.get_mut(&body_id).expect("phase per body");
                *x = (*x + p.phase_rate * h).min(1.0);
            }
            wrenches.insert(body_id, Wrench { force, torque });
        }
        self.follow_attachments();
        Ok(wrenches)
    }

    fn integrate(&mut self, body_id: &str, force: &Point, torque: &Point, h: f64) -> Result<()> {
        let p = &self.params;
        let step = self.step_index;
        let body = self.scene.body_mut(body_id).expect("bound body");
        let inertia = p.mass * body.radius().powi(2).max(1e-6);
        body.velocity += force * (h / p.mass);
        let speed = body.velocity.norm();
        if speed > p.max_speed {
            body.velocity *= p.max_speed / speed;
        }
        body.translation += body.velocity * h;
        body.angular_velocity += torque * (h / inertia);
        let delta = UnitQuaternion::from_scaled_axis(body.angular_velocity * h);
        body.rotate(&delta);
        let finite = body.translation.iter().chain(body.velocity.iter()).chain(body.angular_velocity.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Simulation { step, reason: format!("non-finite state on body {body_id}") });
        }
        Ok(())
    }

    fn follow_attachments(&mut self) {
        for (hand, (obj, r_off, t_off)) in &self.attachments {
            let (r, t, v, w) = {
                let o = self.scene.body(obj).expect("validated scene");
                (o.rotation, o.translation, o.velocity, o.angular_velocity)
            };
            let h = self.scene.body_mut(hand).expect("validated scene");
            h.rotation = r * r_off;
            h.translation = t + r * t_off;
            h.velocity = v + w.cross(&(r * t_off));
            h.angular_velocity = w;
        }
    }

    fn record(&self, wrenches: BTreeMap<String, Wrench>, residuals: Vec<Residual>) -> StepRecord {
        StepRecord {
            step: self.step_index,
            time: self.step_index as f64 * self.params.dt,
            poses: self
                .scene
                .bodies
                .iter()
                .map(|b| (b.id.clone(), BodyPose { rotation: b.rotation, translation: b.translation }))
                .collect(),
            phases: self.phases.clone(),
            residuals,
            wrenches,
        }
    }
}

/// Runs the controller until every top-priority constraint has been within
/// tolerance for `hold_time` with all phases complete, or until `horizon`.
pub fn reproduce(graph: &HmsrGraph, scene: &SimScene, params: &KacParams, horizon: f64) -> Result<ReproductionLog> {
    let mut ctl = Controller::new(graph, scene, params)?;
    let constraints: Vec<ConstraintInfo> = ctl
        .actives
        .iter()
        .zip(&ctl.top_priority)
        .map(|(a, &top)| ConstraintInfo {
            master: a.master.clone(),
            slave: a.slave.clone(),
            body: a.body.clone(),
            kind: a.constraint.kind,
            keypoint_index: a.constraint.keypoint_index,
            top_priority: top,
        })
        .collect();
    let max_steps = (horizon / params.dt).ceil().max(0.0) as usize;
    let hold_steps = (params.hold_time / params.dt).round() as usize;
    let mut steps = Vec::new();
    let mut held = 0usize;
    let mut converged = ctl.actives.is_empty();
    let mut residuals = ctl.residuals()?;
    steps.push(ctl.record(BTreeMap::new(), residuals.clone()));
    while !converged && ctl.step_index < max_steps {
        let wrenches = ctl.step()?;
        residuals = ctl.residuals()?;
        if ctl.step_index % params.record_every == 0 {
            steps.push(ctl.record(wrenches, residuals.clone()));
        }
        let done = ctl.phases.values().all(|x| *x >= 1.0)
            && residuals.iter().zip(&ctl.top_priority).all(|(r, &top)| !top || ctl.satisfied(r));
        held = if done { held + 1 } else { 0 };
        if held > hold_steps {
            converged = true;
        }
    }
    if !converged {
        warn!("reproduction did not converge within {horizon} s");
    }
    debug!("reproduction finished after {} steps", ctl.step_index);
    let verdicts = residuals
        .iter()
        .map(|r| Verdict { final_residual: r.clone(), success: ctl.satisfied(r) })
        .collect();
    let used: BTreeSet<&str> = ctl.actives.iter().map(|a| a.body.as_str()).collect();
    debug!("driven bodies: {used:?}");
    Ok(ReproductionLog {
        constraints,
        steps,
        verdicts,
        converged,
        n_steps: ctl.step_index,
        sim_time: ctl.step_index as f64 * params.dt,
        final_scene: ctl.scene,
    })
}

/// World-frame point clouds of every body at every logged step.
pub fn export_point_clouds(log: &ReproductionLog) -> Vec<BTreeMap<String, Vec<Point>>> {
    log.steps
        .iter()
        .map(|s| {
            log.final_scene
                .bodies
                .iter()
                .filter_map(|b| {
                    let pose = s.poses.get(&b.id)?;
                    Some((b.id.clone(), b.shape.iter().map(|p| pose.rotation * p + pose.translation).collect()))
                })
                .collect()
        })
        .collect()
}
