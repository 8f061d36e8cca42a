#![allow(dead_code)]

use bikvil::bikac::{SimBody, SimScene};
use bikvil::geomcon::{candidate_local_frames, ConstraintKind, ConstraintParams, GeometricConstraint};
use bikvil::hmsr::{GraphEdge, GraphNode, HmsrGraph, NodeKind};
use bikvil::trajdata::ObjectKind;
use bikvil::vmp::Vmp;
use bikvil::Point;
use nalgebra::Rotation3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

pub const MASTER: &str = "base";
pub const SLAVE: &str = "puck";

/// Static 5x5 grid, non-planar so its local frames are well conditioned.
pub fn master_points() -> Vec<Point> {
    (0..25)
        .map(|i| Point::new(0.05 * (i % 5) as f64, 0.05 * (i / 5) as f64, 0.01 * ((i * 7) % 3) as f64))
        .collect()
}

/// Cube corners plus face centres around index 0 at the centroid.
pub fn slave_points(centre: Point) -> Vec<Point> {
    let mut p = vec![centre];
    for i in 0..8 {
        let s = |b: usize| if i & b == 0 { -0.02 } else { 0.02 };
        p.push(centre + Point::new(s(1), s(2), s(4)));
    }
    for axis in 0..3 {
        for sign in [-0.02, 0.02] {
            let mut d = Point::zeros();
            d[axis] = sign;
            p.push(centre + d);
        }
    }
    p
}

/// A graph with one p2p constraint pulling the puck centre to `target`,
/// the puck starting at `start`, plus the matching scene.
pub fn single_p2p(start: Point, target: Point) -> (HmsrGraph, SimScene) {
    let base = master_points();
    let frame = candidate_local_frames(MASTER, &base, 1, 8, None).unwrap().remove(0);
    let pose = frame.pose_on(&base).unwrap();
    let (a, b) = (pose.to_local(&start), pose.to_local(&target));
    let demo: Vec<Vec<f64>> = (0..50)
        .map(|i| {
            let p = a + (b - a) * (i as f64 / 49.0);
            vec![p.x, p.y, p.z]
        })
        .collect();
    let vmp = Vmp::fit(&[demo], 20).unwrap();
    let constraint = GeometricConstraint {
        kind: ConstraintKind::PointToPoint,
        slave_id: SLAVE.into(),
        keypoint_index: 0,
        frame,
        params: ConstraintParams::Point { target: b },
        residual_scale: 0.0,
        priority: ConstraintKind::PointToPoint.priority(),
    };
    let graph = HmsrGraph {
        nodes: vec![
            GraphNode { id: MASTER.into(), kind: NodeKind::Static, level: 0 },
            GraphNode { id: SLAVE.into(), kind: NodeKind::Moving, level: 1 },
        ],
        edges: vec![GraphEdge { master: MASTER.into(), slave: SLAVE.into(), constraints: vec![constraint], vmps: vec![vmp] }],
        coordination: None,
        meta: None,
    };
    let puck = slave_points(start);
    let scene = SimScene {
        task_name: "single".into(),
        dt: 0.01,
        bodies: vec![
            SimBody::from_world_points(MASTER, "grid", ObjectKind::RigidObject, base.clone(), &base, Rotation3::identity()),
            SimBody::from_world_points(SLAVE, "cube", ObjectKind::RigidObject, puck.clone(), &puck, Rotation3::identity()),
        ],
    };
    (graph, scene)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Isotropic Gaussian noise of standard deviation `sigma`.
pub fn noise(rng: &mut ChaCha8Rng, sigma: f64) -> Point {
    let n = Normal::new(0.0, sigma).unwrap();
    Point::new(n.sample(rng), n.sample(rng), n.sample(rng))
}

/// Uniformly distributed random rotation.
pub fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation3<f64> {
    let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
    q.to_rotation_matrix()
}
