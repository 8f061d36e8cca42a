//! Seeded synthetic demonstration sets with ground-truth task structure.
//!
//! Every scenario is a script of rigid bodies moving along eased pose
//! segments. Hands approach their grasp pose and then ride rigidly on the
//! grasped object. Each demo draws from its own RNG stream, so the first `k`
//! demos of a set do not depend on `n_demos`.

pub mod shapes;

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use nalgebra::{Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bikac::{SimBody, SimScene};
use crate::error::{Error, Result};
use crate::geomcon::ConstraintKind;
use crate::hmsr::CoordinationStrategy;
use crate::math::Point;
use crate::trajdata::{Demonstration, DemonstrationSet, ObjectKind, ObjectTrack};

use shapes::{Shape, HAND_CONTACT};

/// Fraction of the demo at which hands start approaching.
const APPROACH_START: f64 = 0.05;
/// Fraction of the demo at which hands reach their grasp pose.
pub const APPROACH_END: f64 = 0.25;
/// Gap between the contact fingertip and the grasped surface.
const FINGER_GAP: f64 = 0.005;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Pour,
    PlaceOn,
    PlaceArbitrary,
    UncoordinatedPair,
    SymmetricTransport,
    Unimanual,
}

impl Task {
    pub const ALL: [Task; 6] = [
        Task::Pour,
        Task::PlaceOn,
        Task::PlaceArbitrary,
        Task::UncoordinatedPair,
        Task::SymmetricTransport,
        Task::Unimanual,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Pour => "pour",
            Task::PlaceOn => "place_on",
            Task::PlaceArbitrary => "place_arbitrary",
            Task::UncoordinatedPair => "uncoordinated_pair",
            Task::SymmetricTransport => "symmetric_transport",
            Task::Unimanual => "unimanual",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Task> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown task tag {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub task: Task,
    pub n_demos: usize,
    pub seed: u64,
    /// Translation jitter of initial poses (m); yaw jitter is 10 deg per 5 cm.
    pub pose_jitter: f64,
    /// Relative amplitude of the isotropic per-demo object scale.
    pub shape_jitter: f64,
    pub noise_sigma: f64,
    #[serde(rename = "T")]
    pub n_frames: usize,
    pub dt: f64,
    /// Maximum stand height under the plate's start pose in `place_on`.
    pub plate_lift: f64,
    /// First demo index whose plate starts on a stand.
    pub lift_from_demo: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            task: Task::Pour,
            n_demos: 7,
            seed: 0,
            pose_jitter: 0.05,
            shape_jitter: 0.1,
            noise_sigma: 0.001,
            n_frames: 60,
            dt: 0.1,
            plate_lift: 0.12,
            lift_from_demo: 3,
        }
    }
}

impl ScenarioConfig {
    pub fn new(task: Task, n_demos: usize, seed: u64) -> ScenarioConfig {
        ScenarioConfig { task, n_demos, seed, ..ScenarioConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::config("synthgen", reason));
        if self.n_demos < 2 {
            return bad(format!("n_demos must be >= 2, got {}", self.n_demos));
        }
        for (name, v) in [
            ("pose_jitter", self.pose_jitter),
            ("shape_jitter", self.shape_jitter),
            ("noise_sigma", self.noise_sigma),
            ("plate_lift", self.plate_lift),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        if self.shape_jitter >= 0.5 {
            return bad(format!("shape_jitter must be < 0.5, got {}", self.shape_jitter));
        }
        if self.n_frames < 20 {
            return bad(format!("T must be >= 20, got {}", self.n_frames));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        Ok(())
    }

    fn plate_lifted(&self, demo: usize) -> bool {
        self.task == Task::PlaceOn && self.plate_lift > 0.0 && demo >= self.lift_from_demo
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtEdge {
    pub master: String,
    pub slave: String,
    /// Expected kinds, highest priority first.
    pub kinds: Vec<ConstraintKind>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtGrasp {
    pub hand_id: String,
    pub object_id: String,
    /// Inclusive frame interval, identical in every demo.
    pub interval: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub task: Task,
    pub edges: Vec<GtEdge>,
    pub statics: Vec<String>,
    pub virtuals: Vec<String>,
    pub grasps: Vec<GtGrasp>,
    pub coordination: CoordinationStrategy,
    /// Expected (master, slave) resolution of every interacting mover pair.
    pub resolved_pairs: Vec<(String, String)>,
    /// Named keypoint indices per object.
    pub keypoints: BTreeMap<String, BTreeMap<String, usize>>,
}

impl GroundTruth {
    pub fn edge(&self, master: &str, slave: &str) -> Option<&GtEdge> {
        self.edges.iter().find(|e| e.master == master && e.slave == slave)
    }

    pub fn keypoint(&self, object: &str, name: &str) -> Option<usize> {
        self.keypoints.get(object)?.get(name).copied()
    }
}

#[derive(Clone, Copy, Debug)]
struct Pose {
    r: Rotation3<f64>,
    t: Vector3<f64>,
}

impl Pose {
    fn new(r: Rotation3<f64>, t: Vector3<f64>) -> Pose {
        Pose { r, t }
    }

    fn apply(&self, p: &Point) -> Point {
        self.r * p + self.t
    }

    fn compose(&self, other: &Pose) -> Pose {
        Pose { r: self.r * other.r, t: self.r * other.t + self.t }
    }

    fn lerp(&self, other: &Pose, u: f64) -> Pose {
        let a = UnitQuaternion::from_rotation_matrix(&self.r);
        let b = UnitQuaternion::from_rotation_matrix(&other.r);
        Pose { r: a.slerp(&b, u).to_rotation_matrix(), t: self.t + (other.t - self.t) * u }
    }
}

fn rz(a: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), a)
}

fn ry(a: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::y_axis(), a)
}

fn rx(a: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::x_axis(), a)
}

/// Quintic smoothstep on [0, 1].
fn ease(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
}

#[derive(Clone, Debug)]
struct Segment {
    to: Pose,
    s0: f64,
    s1: f64,
    /// Height of the sinusoidal bump added to the path.
    lift: f64,
}

#[derive(Clone, Debug)]
struct Grasp {
    object: String,
    /// Hand pose in object body coordinates.
    offset: Pose,
}

#[derive(Clone, Debug)]
struct Body {
    id: String,
    category: String,
    kind: ObjectKind,
    canonical: Vec<Point>,
    scale: f64,
    initial: Pose,
    segments: Vec<Segment>,
    grasp: Option<Grasp>,
}

impl Body {
    fn object(id: &str, shape: &Shape, category: &str, scale: f64, initial: Pose) -> Body {
        Body {
            id: id.to_string(),
            category: category.to_string(),
            kind: ObjectKind::RigidObject,
            canonical: shape.points.clone(),
            scale,
            initial,
            segments: Vec::new(),
            grasp: None,
        }
    }

    fn hand(id: &str, kind: ObjectKind, rest: Pose) -> Body {
        Body {
            id: id.to_string(),
            category: "hand".to_string(),
            kind,
            canonical: shapes::hand(),
            scale: 1.0,
            initial: rest,
            segments: Vec::new(),
            grasp: None,
        }
    }

    fn move_to(mut self, to: Pose, s0: f64, s1: f64, lift: f64) -> Body {
        self.segments.push(Segment { to, s0, s1, lift });
        self
    }

    fn local(&self, i: usize) -> Point {
        self.canonical[i] * self.scale
    }

    fn scripted_pose(&self, s: f64) -> Pose {
        let mut cur = self.initial;
        for seg in &self.segments {
            if s >= seg.s1 {
                cur = seg.to;
            } else if s > seg.s0 {
                let u = (s - seg.s0) / (seg.s1 - seg.s0);
                let mut p = cur.lerp(&seg.to, ease(u));
                p.t.z += seg.lift * (PI * u).sin();
                return p;
            } else {
                break;
            }
        }
        cur
    }
}

/// Scripted bodies of one demo; hands are listed after all objects.
struct Episode {
    bodies: Vec<Body>,
}

impl Episode {
    fn body(&self, id: &str) -> &Body {
        self.bodies.iter().find(|b| b.id == id).expect("scripted body")
    }

    fn pose(&self, b: &Body, s: f64) -> Pose {
        match &b.grasp {
            None => b.scripted_pose(s),
            Some(g) => {
                let obj = self.body(&g.object);
                let held = |s| self.pose(obj, s).compose(&g.offset);
                if s >= APPROACH_END {
                    held(s)
                } else if s <= APPROACH_START {
                    b.initial
                } else {
                    let u = (s - APPROACH_START) / (APPROACH_END - APPROACH_START);
                    b.initial.lerp(&held(APPROACH_END), ease(u))
                }
            }
        }
    }

    fn points(&self, b: &Body, s: f64) -> Vec<Point> {
        let pose = self.pose(b, s);
        (0..b.canonical.len()).map(|i| pose.apply(&b.local(i))).collect()
    }
}

/// Hand pose in object coordinates that puts the contact fingertip just
/// outside `point` with the palm facing along `-normal`.
fn grasp_offset(point: Point, normal: Point) -> Pose {
    let n = normal.normalize();
    let a = if n.z.abs() > 0.9 { Vector3::new(-1.0, 0.0, 0.0) } else { Vector3::new(0.0, 0.0, -1.0) };
    let x = (a - n * a.dot(&n)).normalize();
    let y = n.cross(&x);
    let r = Rotation3::from_matrix_unchecked(nalgebra::Matrix3::from_columns(&[x, y, n]));
    let tip = shapes::hand()[HAND_CONTACT];
    Pose::new(r, point + n * FINGER_GAP - r * tip)
}

fn attach(mut hand: Body, object: &Body, index: usize, normal: Point) -> Body {
    hand.grasp = Some(Grasp { object: object.id.clone(), offset: grasp_offset(object.local(index), normal) });
    hand
}

fn attach_default(hand: Body, object: &Body, shape: &Shape) -> Body {
    let (i, n) = shape.grasp.expect("graspable shape");
    attach(hand, object, i, n)
}

struct Sampler<'a> {
    cfg: &'a ScenarioConfig,
    rng: ChaCha8Rng,
    /// Overrides the training scale draw for novel scenes.
    novel_scale: Option<f64>,
}

impl Sampler<'_> {
    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi > lo {
            self.rng.random_range(lo..hi)
        } else {
            lo
        }
    }

    fn sym(&mut self, half: f64) -> f64 {
        self.uniform(-half, half)
    }

    fn scale(&mut self) -> f64 {
        match self.novel_scale {
            Some(amp) => {
                let sign = if self.rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let m = self.uniform(0.5, 1.0);
                1.0 + sign * amp * m
            }
            None => {
                let j = self.cfg.shape_jitter;
                1.0 + self.sym(j)
            }
        }
    }

    /// Jittered resting pose around `(x, y, z)` with base yaw `yaw`.
    fn rest(&mut self, x: f64, y: f64, z: f64, yaw: f64, amount: f64) -> Pose {
        let pj = self.cfg.pose_jitter * amount;
        let dx = self.sym(pj);
        let dy = self.sym(pj);
        let dyaw = self.sym(10f64.to_radians() * pj / 0.05);
        Pose::new(rz(yaw + dyaw), Vector3::new(x + dx, y + dy, z))
    }
}

fn hand_rest(x: f64, y: f64) -> Pose {
    Pose::new(Rotation3::identity(), Vector3::new(x, y, 0.3))
}

fn edge(master: &str, slave: &str, kinds: &[ConstraintKind]) -> GtEdge {
    GtEdge { master: master.into(), slave: slave.into(), kinds: kinds.to_vec() }
}

fn names(ids: &[&str]) -> Vec<String> {
    ids.iter().map(|s| s.to_string()).collect()
}

use ConstraintKind::{PointToPlane as P2P_PLANE, PointToPoint as P2P, Pose as POSE};

fn pour(sm: &mut Sampler<'_>) -> Episode {
    let table = shapes::table();
    let cup = shapes::cup();
    let kettle = shapes::kettle();
    let table_b = Body::object("table", &table, "table", 1.0, Pose::new(Rotation3::identity(), Vector3::zeros()));
    let cup_start = sm.rest(0.0, -0.22, 0.0, 0.0, 1.0);
    let cup_scale = sm.scale();
    let cup_end = Pose::new(
        cup_start.r,
        Vector3::new(sm.sym(0.15), sm.sym(0.15), sm.uniform(0.0, 0.2)),
    );
    let cup_b = Body::object("cup", &cup, "cup", cup_scale, cup_start).move_to(cup_end, 0.3, 0.55, 0.0);

    let kettle_start = sm.rest(0.05, 0.3, 0.0, -FRAC_PI_2, 1.0);
    let kettle_scale = sm.scale();
    let tilt = sm.uniform(35f64.to_radians(), 75f64.to_radians());
    // only the spout tip is invariant: tilt and approach yaw both vary
    let approach = sm.sym(40f64.to_radians());
    let r = cup_end.r * rz(-FRAC_PI_2 + approach) * ry(tilt);
    let rim = cup_end.apply(&cup_b.local(cup.index("rim")));
    let spout = kettle.points[kettle.index("spout")] * kettle_scale;
    let kettle_end = Pose::new(r, rim - r * spout);
    let kettle_b =
        Body::object("kettle", &kettle, "kettle", kettle_scale, kettle_start).move_to(kettle_end, 0.6, 0.9, 0.08);

    let rh = attach_default(Body::hand("rh", ObjectKind::HandRight, hand_rest(-0.35, -0.45)), &cup_b, &cup);
    let lh = attach_default(Body::hand("lh", ObjectKind::HandLeft, hand_rest(-0.35, 0.45)), &kettle_b, &kettle);
    Episode { bodies: vec![table_b, cup_b, kettle_b, lh, rh] }
}

fn place(sm: &mut Sampler<'_>, demo: usize, arbitrary: bool) -> Episode {
    let table = shapes::table();
    let plate = shapes::plate();
    let spoon = shapes::spoon();
    let table_b = Body::object("table", &table, "table", 1.0, Pose::new(Rotation3::identity(), Vector3::zeros()));
    let mut plate_start = sm.rest(-0.25, -0.15, 0.0, 0.0, 1.0);
    if sm.cfg.plate_lifted(demo) {
        plate_start.t.z = sm.uniform(0.04, sm.cfg.plate_lift.max(0.04));
    }
    let plate_scale = sm.scale();
    let plate_end = Pose::new(plate_start.r, Vector3::new(0.05 + sm.sym(0.05), -0.05 + sm.sym(0.05), 0.0));
    let plate_b = Body::object("plate", &plate, "plate", plate_scale, plate_start).move_to(plate_end, 0.3, 0.55, 0.0);

    let spoon_start = sm.rest(0.15, 0.15, 0.0, FRAC_PI_2, 1.0);
    let spoon_scale = sm.scale();
    let yaw = sm.sym(PI / 4.0);
    let r = plate_end.r * rz(PI + yaw);
    let mut target = plate_end.apply(&plate_b.local(plate.index("center")));
    if arbitrary {
        let rad = 0.05 * sm.uniform(0.0, 1.0).sqrt();
        let ang = sm.uniform(0.0, 2.0 * PI);
        target += plate_end.r * Vector3::new(rad * ang.cos(), rad * ang.sin(), 0.0);
    }
    target += plate_end.r * Vector3::new(0.0, 0.0, 0.004);
    let tip = spoon.points[spoon.index("tip")] * spoon_scale;
    let spoon_end = Pose::new(r, target - r * tip);
    let spoon_b = Body::object("spoon", &spoon, "spoon", spoon_scale, spoon_start).move_to(spoon_end, 0.6, 0.9, 0.1);

    let lh = attach_default(Body::hand("lh", ObjectKind::HandLeft, hand_rest(-0.5, -0.35)), &plate_b, &plate);
    let rh = attach_default(Body::hand("rh", ObjectKind::HandRight, hand_rest(0.45, 0.4)), &spoon_b, &spoon);
    Episode { bodies: vec![table_b, plate_b, spoon_b, lh, rh] }
}

/// Raised, tilted mat pose: large independent jitter so that nothing placed
/// on it keeps a plane in common with another mat or the table.
fn mat_pose(sm: &mut Sampler<'_>, x: f64, y: f64, tilt: f64) -> Pose {
    let base = sm.rest(x, y, 0.0, 0.0, 2.0);
    let z = sm.uniform(0.0, 0.12);
    let roll = sm.sym(tilt);
    let pitch = sm.sym(tilt);
    Pose::new(base.r * rx(roll) * ry(pitch), Vector3::new(base.t.x, base.t.y, z))
}

/// Spoon lying on `mat` with its tip at the mat centre and the handle along
/// the mat's -y axis within +-30 deg.
fn spoon_on_mat(sm: &mut Sampler<'_>, mat: &Body, mat_pose: &Pose, spoon_scale: f64) -> Pose {
    let spoon = shapes::spoon();
    let r = mat_pose.r * rz(FRAC_PI_2 + sm.sym(PI / 6.0));
    let centre = mat_pose.apply(&mat.local(shapes::mat().index("center")));
    let target = centre + mat_pose.r * Vector3::new(0.0, 0.0, 0.004);
    Pose::new(r, target - r * (spoon.points[spoon.index("tip")] * spoon_scale))
}

fn uncoordinated_pair(sm: &mut Sampler<'_>) -> Episode {
    let mat = shapes::mat();
    let spoon = shapes::spoon();
    let banana = shapes::banana();
    let ma = mat_pose(sm, 0.3, 0.05, 25f64.to_radians());
    let mat_a = Body::object("mat_a", &mat, "mat", sm.scale(), ma);
    let mb = mat_pose(sm, -0.3, 0.05, 25f64.to_radians());
    let mat_b = Body::object("mat_b", &mat, "mat", sm.scale(), mb);

    let spoon_scale = sm.scale();
    let spoon_start = sm.rest(0.15, -0.3, 0.0, 0.0, 1.0);
    let spoon_end = spoon_on_mat(sm, &mat_a, &ma, spoon_scale);
    let spoon_b = Body::object("spoon", &spoon, "spoon", spoon_scale, spoon_start).move_to(spoon_end, 0.3, 0.6, 0.1);

    let banana_scale = sm.scale();
    let banana_start = sm.rest(-0.15, -0.3, 0.0, 0.0, 1.0);
    let r = mb.r * rz(sm.sym(PI / 4.0));
    let centre = mb.apply(&mat_b.local(mat.index("center")));
    let mid = banana.points[banana.index("middle")] * banana_scale;
    let target = centre + mb.r * Vector3::new(0.0, 0.0, 0.035 * banana_scale);
    let banana_end = Pose::new(r, target - r * mid);
    let banana_b =
        Body::object("banana", &banana, "banana", banana_scale, banana_start).move_to(banana_end, 0.5, 0.85, 0.1);

    let rh = attach_default(Body::hand("rh", ObjectKind::HandRight, hand_rest(0.5, -0.5)), &spoon_b, &spoon);
    let lh = attach_default(Body::hand("lh", ObjectKind::HandLeft, hand_rest(-0.5, -0.5)), &banana_b, &banana);
    Episode { bodies: vec![mat_a, mat_b, spoon_b, banana_b, lh, rh] }
}

fn symmetric_transport(sm: &mut Sampler<'_>) -> Episode {
    let mat = shapes::mat();
    let tray = shapes::tray();
    let mp = mat_pose(sm, 0.0, 0.2, 20f64.to_radians());
    let mat_b = Body::object("mat", &mat, "mat", sm.scale(), mp);
    let tray_start = sm.rest(0.0, -0.2, 0.0, 0.0, 1.0);
    let tray_end = mp.compose(&Pose::new(Rotation3::identity(), Vector3::new(0.0, 0.0, 0.1)));
    let tray_b = Body::object("tray", &tray, "tray", sm.scale(), tray_start).move_to(tray_end, 0.3, 0.9, 0.1);
    let lh = attach(
        Body::hand("lh", ObjectKind::HandLeft, hand_rest(-0.5, -0.4)),
        &tray_b,
        tray.index("left"),
        Point::new(-1.0, 0.0, 0.0),
    );
    let rh = attach(
        Body::hand("rh", ObjectKind::HandRight, hand_rest(0.5, -0.4)),
        &tray_b,
        tray.index("right"),
        Point::new(1.0, 0.0, 0.0),
    );
    Episode { bodies: vec![mat_b, tray_b, lh, rh] }
}

fn unimanual(sm: &mut Sampler<'_>) -> Episode {
    let mat = shapes::mat();
    let spoon = shapes::spoon();
    let mp = mat_pose(sm, 0.2, 0.15, 20f64.to_radians());
    let mat_b = Body::object("mat", &mat, "mat", sm.scale(), mp);
    let spoon_scale = sm.scale();
    let spoon_start = sm.rest(-0.1, -0.2, 0.0, 0.0, 1.0);
    let spoon_end = spoon_on_mat(sm, &mat_b, &mp, spoon_scale);
    let spoon_b = Body::object("spoon", &spoon, "spoon", spoon_scale, spoon_start).move_to(spoon_end, 0.3, 0.9, 0.1);
    let rh = attach_default(Body::hand("rh", ObjectKind::HandRight, hand_rest(0.5, -0.4)), &spoon_b, &spoon);
    let lh = Body::hand("lh", ObjectKind::HandLeft, hand_rest(-0.5, -0.4));
    Episode { bodies: vec![mat_b, spoon_b, lh, rh] }
}

fn episode(cfg: &ScenarioConfig, rng: ChaCha8Rng, demo: usize, novel_scale: Option<f64>) -> Episode {
    let mut sm = Sampler { cfg, rng, novel_scale };
    match cfg.task {
        Task::Pour => pour(&mut sm),
        Task::PlaceOn => place(&mut sm, demo, false),
        Task::PlaceArbitrary => place(&mut sm, demo, true),
        Task::UncoordinatedPair => uncoordinated_pair(&mut sm),
        Task::SymmetricTransport => symmetric_transport(&mut sm),
        Task::Unimanual => unimanual(&mut sm),
    }
}

fn demo_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn frame_of(cfg: &ScenarioConfig, s: f64) -> usize {
    (s * (cfg.n_frames - 1) as f64).ceil() as usize
}

fn ground_truth(cfg: &ScenarioConfig) -> GroundTruth {
    let last = cfg.n_frames - 1;
    let grasp = |hand: &str, object: &str| GtGrasp {
        hand_id: hand.into(),
        object_id: object.into(),
        interval: [frame_of(cfg, APPROACH_END), last],
    };
    let mut keypoints: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let mut key = |object: &str, shape: &Shape, name: &str| {
        keypoints.entry(object.into()).or_default().insert(name.into(), shape.index(name));
    };
    let gt = |edges, statics: &[&str], virtuals: &[&str], grasps, coordination, resolved_pairs| GroundTruth {
        task: cfg.task,
        edges,
        statics: names(statics),
        virtuals: names(virtuals),
        grasps,
        coordination,
        resolved_pairs,
        keypoints: BTreeMap::new(),
    };
    let mut out = match cfg.task {
        Task::Pour => {
            key("cup", &shapes::cup(), "rim");
            key("kettle", &shapes::kettle(), "spout");
            gt(
                vec![
                    edge("vcup", "cup", &[POSE]),
                    edge("cup", "kettle", &[P2P]),
                    edge("cup", "rh", &[P2P]),
                    edge("kettle", "lh", &[P2P]),
                ],
                &["table"],
                &["vcup"],
                vec![grasp("lh", "kettle"), grasp("rh", "cup")],
                CoordinationStrategy::LooselyCoupled,
                vec![("cup".into(), "kettle".into())],
            )
        }
        Task::PlaceOn | Task::PlaceArbitrary => {
            key("plate", &shapes::plate(), "center");
            key("spoon", &shapes::spoon(), "tip");
            let spoon_kind = if cfg.task == Task::PlaceOn { P2P } else { P2P_PLANE };
            let lifted = (0..cfg.n_demos).any(|d| cfg.plate_lifted(d));
            let mut edges = vec![edge("table", "plate", &[P2P_PLANE])];
            let mut virtuals = vec!["vspoon"];
            if !lifted {
                edges.push(edge("vplate", "plate", &[P2P_PLANE]));
                virtuals.insert(0, "vplate");
            }
            edges.extend([
                edge("plate", "spoon", &[spoon_kind]),
                edge("table", "spoon", &[P2P_PLANE]),
                edge("vspoon", "spoon", &[P2P_PLANE]),
                edge("plate", "lh", &[P2P]),
                edge("spoon", "rh", &[P2P]),
            ]);
            gt(
                edges,
                &["table"],
                &virtuals,
                vec![grasp("lh", "plate"), grasp("rh", "spoon")],
                CoordinationStrategy::LooselyCoupled,
                vec![("plate".into(), "spoon".into())],
            )
        }
        Task::UncoordinatedPair => {
            key("spoon", &shapes::spoon(), "tip");
            key("banana", &shapes::banana(), "middle");
            gt(
                vec![
                    edge("mat_a", "spoon", &[P2P]),
                    edge("mat_b", "banana", &[P2P]),
                    edge("spoon", "rh", &[P2P]),
                    edge("banana", "lh", &[P2P]),
                ],
                &["mat_a", "mat_b"],
                &[],
                vec![grasp("lh", "banana"), grasp("rh", "spoon")],
                CoordinationStrategy::UncoordinatedBimanual,
                vec![],
            )
        }
        Task::SymmetricTransport => {
            key("tray", &shapes::tray(), "left");
            key("tray", &shapes::tray(), "right");
            gt(
                vec![edge("mat", "tray", &[P2P]), edge("tray", "lh", &[P2P]), edge("tray", "rh", &[P2P])],
                &["mat"],
                &[],
                vec![grasp("lh", "tray"), grasp("rh", "tray")],
                CoordinationStrategy::TightlyCoupledSymmetric,
                vec![],
            )
        }
        Task::Unimanual => {
            key("spoon", &shapes::spoon(), "tip");
            gt(
                vec![edge("mat", "spoon", &[P2P]), edge("spoon", "rh", &[P2P])],
                &["mat"],
                &[],
                vec![grasp("rh", "spoon")],
                CoordinationStrategy::UncoordinatedUnimanual,
                vec![],
            )
        }
    };
    out.keypoints = keypoints;
    out
}

/// Generates the demonstration set and its ground truth.
pub fn generate(cfg: &ScenarioConfig) -> Result<(DemonstrationSet, GroundTruth)> {
    cfg.validate()?;
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Internal(e.to_string()))?;
    let mut demos = Vec::with_capacity(cfg.n_demos);
    for d in 0..cfg.n_demos {
        let mut rng = demo_rng(cfg.seed, d as u64);
        let ep = episode(cfg, rng.clone(), d, None);
        // noise uses a stream disjoint from the scripted draws
        rng.set_stream(d as u64 + (1 << 32));
        let mut tracks = Vec::with_capacity(ep.bodies.len());
        for b in &ep.bodies {
            let mut points = vec![Vec::with_capacity(cfg.n_frames); b.canonical.len()];
            for t in 0..cfg.n_frames {
                let s = t as f64 / (cfg.n_frames - 1) as f64;
                for (i, p) in ep.points(b, s).into_iter().enumerate() {
                    let jitter = if cfg.noise_sigma > 0.0 {
                        Point::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))
                    } else {
                        Point::zeros()
                    };
                    points[i].push(p + jitter);
                }
            }
            tracks.push(ObjectTrack {
                object_id: b.id.clone(),
                category: b.category.clone(),
                kind: b.kind,
                canonical_points: b.canonical.clone(),
                points,
            });
        }
        demos.push(Demonstration { demo_id: format!("demo_{d:03}"), dt: cfg.dt, tracks });
    }
    let mut set = DemonstrationSet { task_name: cfg.task.as_str().to_string(), demos, categories: Vec::new() };
    set.categories = DemonstrationSet::derive_categories(&set.demos);
    set.validate()?;
    Ok((set, ground_truth(cfg)))
}

/// Samples a fresh instance of the task's start state with hands already on
/// their grasp poses. Object scales are `1 +- shape_jitter * U(0.5, 1)`.
pub fn generate_novel_scene(cfg: &ScenarioConfig, seed: u64) -> Result<SimScene> {
    cfg.validate()?;
    let ep = episode(cfg, demo_rng(seed, u64::MAX), 0, Some(cfg.shape_jitter));
    let mut bodies = Vec::with_capacity(ep.bodies.len());
    for b in &ep.bodies {
        let pose = ep.pose(b, APPROACH_END);
        let mut body =
            SimBody::from_world_points(&b.id, &b.category, b.kind, b.canonical.clone(), &ep.points(b, APPROACH_END), pose.r);
        body.attached_to = b.grasp.as_ref().map(|g| g.object.clone());
        bodies.push(body);
    }
    for b in &ep.bodies {
        if let Some(g) = &b.grasp {
            let obj = bodies.iter_mut().find(|o| o.id == g.object).expect("grasped body");
            // the first hand listed controls a jointly held object
            if obj.controlled_by.is_none() {
                obj.controlled_by = Some(b.id.clone());
            }
        }
    }
    let scene = SimScene { task_name: cfg.task.as_str().to_string(), dt: 0.01, bodies };
    scene.validate()?;
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::mean_covariance;
    use crate::saliency::{detect_grasps, GraspDetectorConfig};

    fn cfg(task: Task) -> ScenarioConfig {
        ScenarioConfig::new(task, 7, 42)
    }

    #[test]
    fn generation_is_deterministic() {
        let a = serde_json::to_string(&generate(&cfg(Task::Pour)).unwrap()).unwrap();
        let b = serde_json::to_string(&generate(&cfg(Task::Pour)).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fewer_demos_are_a_prefix() {
        let (big, _) = generate(&cfg(Task::PlaceOn)).unwrap();
        let mut c = cfg(Task::PlaceOn);
        c.n_demos = 3;
        let (small, _) = generate(&c).unwrap();
        assert_eq!(small.demos[..], big.demos[..3]);
    }

    #[test]
    fn unknown_task_tag_is_rejected() {
        assert!("juggle".parse::<Task>().is_err());
        assert_eq!("place_on".parse::<Task>().unwrap(), Task::PlaceOn);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = cfg(Task::Pour);
        c.n_demos = 1;
        assert!(generate(&c).is_err());
        let mut c = cfg(Task::Pour);
        c.noise_sigma = -1.0;
        assert!(generate(&c).is_err());
    }

    #[test]
    fn arbitrary_spoon_tips_lie_in_the_plate_plane() {
        let mut c = cfg(Task::PlaceArbitrary);
        c.noise_sigma = 0.0;
        let (set, gt) = generate(&c).unwrap();
        let tip = gt.keypoint("spoon", "tip").unwrap();
        let center = gt.keypoint("plate", "center").unwrap();
        for demo in &set.demos {
            let plate = demo.track("plate").unwrap();
            let spoon = demo.track("spoon").unwrap();
            let t = demo.n_frames() - 1;
            // plate normal from its flat top points
            let top: Vec<Point> = (0..37).map(|i| plate.points[i][t]).collect();
            let (_, cov) = mean_covariance(&top);
            let eig = crate::math::sorted_eigen(&cov);
            let n = eig.1.column(2).into_owned();
            let d = (spoon.points[tip][t] - plate.points[center][t]).dot(&n).abs();
            assert!((d - 0.004).abs() < 1e-9, "off-plane distance {d}");
        }
    }

    #[test]
    fn pour_spout_meets_rim_exactly_without_noise() {
        let mut c = cfg(Task::Pour);
        c.noise_sigma = 0.0;
        let (set, gt) = generate(&c).unwrap();
        for demo in &set.demos {
            let t = demo.n_frames() - 1;
            let rim = demo.track("cup").unwrap().points[gt.keypoint("cup", "rim").unwrap()][t];
            let spout = demo.track("kettle").unwrap().points[gt.keypoint("kettle", "spout").unwrap()][t];
            assert!((rim - spout).norm() < 1e-12);
        }
    }

    #[test]
    fn symmetric_hands_keep_their_distance() {
        let mut c = cfg(Task::SymmetricTransport);
        c.noise_sigma = 0.0;
        let (set, gt) = generate(&c).unwrap();
        let [t0, t1] = gt.grasps[0].interval;
        for demo in &set.demos {
            let l = demo.track("lh").unwrap();
            let r = demo.track("rh").unwrap();
            let d0 = (l.points[0][t0] - r.points[0][t0]).norm();
            for t in t0..=t1 {
                assert!(((l.points[0][t] - r.points[0][t]).norm() - d0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scripted_grasps_are_detected_firm() {
        let (set, gt) = generate(&cfg(Task::Pour)).unwrap();
        let gcfg = GraspDetectorConfig::default();
        for g in &gt.grasps {
            for demo in &set.demos {
                let ev = detect_grasps(demo, &g.hand_id, &g.object_id, &gcfg).unwrap();
                assert!(ev.iter().any(|e| e.firm), "{} on {}", g.hand_id, g.object_id);
            }
        }
    }

    #[test]
    fn novel_scenes_are_seeded_and_rescaled() {
        let mut c = cfg(Task::Pour);
        c.shape_jitter = 0.3;
        let a = generate_novel_scene(&c, 5).unwrap();
        assert_eq!(a, generate_novel_scene(&c, 5).unwrap());
        for b in a.bodies.iter().filter(|b| b.category == "cup" || b.category == "kettle") {
            let c = crate::math::centroid(&b.canonical_points);
            let canon = (b.canonical_points.iter().map(|p| (p - c).norm_squared()).sum::<f64>()
                / b.canonical_points.len() as f64)
                .sqrt();
            let ratio = b.radius() / canon;
            assert!((ratio - 1.0).abs() >= 0.1, "{} scale {ratio}", b.id);
        }
        let hand = a.body("rh").unwrap();
        assert_eq!(hand.attached_to.as_deref(), Some("cup"));
        assert_eq!(a.body("cup").unwrap().controlled_by.as_deref(), Some("rh"));
    }

    #[test]
    fn pose_jitter_leaves_canonical_points_alone() {
        let mut c = cfg(Task::Unimanual);
        c.shape_jitter = 0.0;
        let s = generate_novel_scene(&c, 1).unwrap();
        assert_eq!(s.body("spoon").unwrap().canonical_points, shapes::spoon().points);
    }

    #[test]
    fn ground_truth_masters_are_statics_or_virtuals_at_the_top() {
        for task in Task::ALL {
            let gt = ground_truth(&cfg(task));
            let slaves: Vec<&str> = gt.edges.iter().map(|e| e.slave.as_str()).collect();
            for e in &gt.edges {
                if !slaves.contains(&e.master.as_str()) {
                    assert!(gt.statics.contains(&e.master) || gt.virtuals.contains(&e.master), "{task}: {}", e.master);
                }
            }
            for g in &gt.grasps {
                assert!(gt.edges.iter().any(|e| e.slave == g.object_id), "{task}");
            }
        }
    }
}
