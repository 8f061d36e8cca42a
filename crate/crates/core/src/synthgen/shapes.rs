//! Canonical point sets of the synthetic object categories.
//!
//! Shapes are structured samples in body coordinates (meters, z up, resting
//! on z = 0). Named indices mark the points the scenario scripts refer to.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use crate::math::Point;

/// Canonical points plus the named points used by the scripts.
#[derive(Clone, Debug)]
pub struct Shape {
    pub points: Vec<Point>,
    /// Grasp point and its outward surface normal.
    pub grasp: Option<(usize, Point)>,
    pub named: Vec<(&'static str, usize)>,
}

impl Shape {
    pub fn index(&self, name: &str) -> usize {
        self.named
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, i)| *i)
            .unwrap_or_else(|| panic!("shape has no point named {name}"))
    }
}

fn ring(out: &mut Vec<Point>, n: usize, radius: f64, z: f64, phase: f64) {
    for k in 0..n {
        let a = phase + TAU * k as f64 / n as f64;
        out.push(Point::new(radius * a.cos(), radius * a.sin(), z));
    }
}

pub const CUP_RADIUS: f64 = 0.04;
pub const CUP_HEIGHT: f64 = 0.1;

/// Cylinder of four 12-point rings plus the bottom centre.
pub fn cup() -> Shape {
    let mut p = Vec::new();
    for z in [0.0, CUP_HEIGHT / 3.0, 2.0 * CUP_HEIGHT / 3.0, CUP_HEIGHT] {
        ring(&mut p, 12, CUP_RADIUS, z, 0.0);
    }
    p.push(Point::zeros());
    // ring points at +y (k = 3) and -y (k = 9)
    let rim = 36 + 3;
    let grasp = 24 + 9;
    Shape {
        points: p,
        grasp: Some((grasp, Point::new(0.0, -1.0, 0.0))),
        named: vec![("rim", rim), ("grasp", grasp)],
    }
}

/// Ellipsoidal body with a straight spout along +x and a handle on -x.
pub fn kettle() -> Shape {
    let mut p = Vec::new();
    let n_body = 40;
    let golden = PI * (3.0 - 5f64.sqrt());
    for k in 0..n_body {
        let z = 1.0 - 2.0 * (k as f64 + 0.5) / n_body as f64;
        let r = (1.0 - z * z).sqrt();
        let a = golden * k as f64;
        p.push(Point::new(0.08 * r * a.cos(), 0.08 * r * a.sin(), 0.07 + 0.07 * z));
    }
    let spout_from = Point::new(0.07, 0.0, 0.09);
    let spout_to = Point::new(0.16, 0.0, 0.15);
    for k in 0..6 {
        let s = (k + 1) as f64 / 6.0;
        let off = if k % 2 == 0 { 0.006 } else { -0.006 };
        let q = spout_from + (spout_to - spout_from) * s;
        p.push(if k == 5 { q } else { q + Point::new(0.0, off, 0.0) });
    }
    let spout = p.len() - 1;
    let handle_start = p.len();
    for k in 0..8 {
        let a = -FRAC_PI_2 + PI * k as f64 / 7.0;
        p.push(Point::new(-0.08 - 0.04 * a.cos(), 0.004 * (k % 2) as f64, 0.09 + 0.04 * a.sin()));
    }
    let grasp = handle_start + 3;
    Shape {
        points: p,
        grasp: Some((grasp, Point::new(-1.0, 0.0, 0.0))),
        named: vec![("spout", spout), ("grasp", grasp)],
    }
}

pub const PLATE_TOP: f64 = 0.01;

/// Flat disc with a raised rim; index 0 is the top centre.
pub fn plate() -> Shape {
    let mut p = vec![Point::new(0.0, 0.0, PLATE_TOP)];
    ring(&mut p, 8, 0.03, PLATE_TOP, 0.1);
    ring(&mut p, 12, 0.06, PLATE_TOP, 0.2);
    ring(&mut p, 16, 0.09, PLATE_TOP, 0.0);
    let rim_start = p.len();
    ring(&mut p, 16, 0.11, 0.02, 0.0);
    ring(&mut p, 8, 0.05, 0.0, 0.3);
    // rim point at -x
    let grasp = rim_start + 8;
    Shape {
        points: p,
        grasp: Some((grasp, Point::new(-1.0, 0.0, 0.0))),
        named: vec![("center", 0), ("grasp", grasp)],
    }
}

/// Handle along +x ending in an elliptic bowl; the tip is the bowl front.
pub fn spoon() -> Shape {
    let mut p = Vec::new();
    for k in 0..7 {
        let x = 0.02 * k as f64;
        p.push(Point::new(x, 0.006, 0.002 * (k % 2) as f64));
        p.push(Point::new(x, -0.006, 0.002 * ((k + 1) % 2) as f64));
    }
    for k in 0..10 {
        let a = TAU * k as f64 / 10.0;
        p.push(Point::new(0.165 + 0.03 * a.cos(), 0.02 * a.sin(), -0.002));
    }
    p.push(Point::new(0.165, 0.0, -0.004));
    // bowl ring point at angle 0 is the front
    let tip = 14;
    Shape {
        points: p,
        grasp: Some((0, Point::new(0.0, 0.0, 1.0))),
        named: vec![("tip", tip), ("grasp", 0)],
    }
}

/// Curved tube: ten stations of three points each along a quarter arc.
pub fn banana() -> Shape {
    let mut p = Vec::new();
    for k in 0..10 {
        let a = -PI / 4.0 + (PI / 2.0) * k as f64 / 9.0;
        let c = Point::new(0.12 * a.sin(), 0.12 * (1.0 - a.cos()), 0.015);
        let normal = Point::new(a.sin(), -a.cos(), 0.0);
        for j in 0..3 {
            let b = TAU * j as f64 / 3.0 + 0.3 * k as f64;
            p.push(c + normal * (0.015 * b.cos()) + Point::z() * (0.015 * b.sin()));
        }
    }
    // middle station, upper point
    let mid = 15;
    Shape {
        points: p,
        grasp: Some((3, Point::new(0.0, 0.0, 1.0))),
        named: vec![("middle", mid), ("grasp", 3)],
    }
}

fn grid(nx: usize, ny: usize, sx: f64, sy: f64, z: f64) -> Vec<Point> {
    let mut p = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            p.push(Point::new(
                -sx / 2.0 + sx * i as f64 / (nx - 1) as f64,
                -sy / 2.0 + sy * j as f64 / (ny - 1) as f64,
                z,
            ));
        }
    }
    p
}

/// Sparse table-top grid 3 cm below the resting plane, so hands holding
/// objects on the table stay out of contact range.
pub fn table() -> Shape {
    Shape { points: grid(9, 5, 1.0, 0.6, -0.03), grasp: None, named: vec![] }
}

/// 7x5 grid mat; index 17 is the centre.
pub fn mat() -> Shape {
    Shape { points: grid(7, 5, 0.3, 0.2, 0.0), grasp: None, named: vec![("center", 17)] }
}

/// Flat tray with a raised perimeter; grasped at the ends of the x axis.
pub fn tray() -> Shape {
    let mut p = grid(5, 4, 0.4, 0.25, 0.0);
    let left = p.len();
    p.push(Point::new(-0.2, 0.0, 0.03));
    let right = p.len();
    p.push(Point::new(0.2, 0.0, 0.03));
    for k in 0..5 {
        let x = -0.16 + 0.08 * k as f64;
        p.push(Point::new(x, 0.125, 0.03));
        p.push(Point::new(x, -0.125, 0.03));
    }
    Shape {
        points: p,
        grasp: Some((right, Point::new(1.0, 0.0, 0.0))),
        named: vec![("left", left), ("right", right)],
    }
}

/// 21 hand keypoints: wrist, then four joints per finger from thumb to
/// pinky. The middle fingertip (index 12) is the contact point.
pub fn hand() -> Vec<Point> {
    let mut p = vec![Point::zeros()];
    p.extend([
        Point::new(0.03, 0.035, -0.01),
        Point::new(0.05, 0.05, -0.015),
        Point::new(0.065, 0.06, -0.02),
        Point::new(0.08, 0.065, -0.025),
    ]);
    for y in [0.025, 0.0, -0.02, -0.038] {
        p.extend([
            Point::new(0.085, y, 0.0),
            Point::new(0.115, y, -0.01),
            Point::new(0.13, y, -0.025),
            Point::new(0.135, y, -0.04),
        ]);
    }
    p
}

pub const HAND_CONTACT: usize = 12;

pub fn by_category(category: &str) -> Option<Shape> {
    Some(match category {
        "cup" => cup(),
        "kettle" => kettle(),
        "plate" => plate(),
        "spoon" => spoon(),
        "banana" => banana(),
        "table" => table(),
        "mat" => mat(),
        "tray" => tray(),
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajdata::HAND_POINTS;

    #[test]
    fn hand_has_21_points() {
        assert_eq!(hand().len(), HAND_POINTS);
    }

    #[test]
    fn named_points_are_where_expected() {
        let c = cup();
        assert!((c.points[c.index("rim")] - Point::new(0.0, CUP_RADIUS, CUP_HEIGHT)).norm() < 1e-12);
        let s = spoon();
        assert!((s.points[s.index("tip")] - Point::new(0.195, 0.0, -0.002)).norm() < 1e-12);
        let m = mat();
        assert!(m.points[m.index("center")].norm() < 1e-12);
        let k = kettle();
        assert_eq!(k.points[k.index("spout")], Point::new(0.16, 0.0, 0.15));
    }

    #[test]
    fn every_category_has_enough_points() {
        for c in ["cup", "kettle", "plate", "spoon", "banana", "table", "mat", "tray"] {
            assert!(by_category(c).unwrap().points.len() >= 20, "{c}");
        }
    }
}
