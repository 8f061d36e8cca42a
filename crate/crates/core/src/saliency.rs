//! Motion saliency, virtual objects, contacts and grasps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Point;
use crate::trajdata::{Demonstration, DemonstrationSet, ObjectKind, ObjectTrack};

pub const VIRTUAL_PREFIX: &str = "v";

/// Hand keypoint indices used by the grasp detector.
pub const WRIST: usize = 0;
pub const INDEX_MCP: usize = 5;
pub const MIDDLE_MCP: usize = 9;
pub const PINKY_MCP: usize = 17;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionLabel {
    Static,
    Moving,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSaliency {
    pub mean_point_speed: f64,
    pub label: MotionLabel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyReport {
    /// Mean over demos of the first-frame bounding-box diagonal.
    pub scene_scale: f64,
    /// Speed below which an object counts as static, m/s.
    pub speed_threshold: f64,
    pub objects: BTreeMap<String, ObjectSaliency>,
}

impl SaliencyReport {
    pub fn is_static(&self, id: &str) -> bool {
        self.objects.get(id).is_some_and(|o| o.label == MotionLabel::Static)
    }

    pub fn moving(&self) -> Vec<String> {
        self.objects
            .iter()
            .filter(|(_, o)| o.label == MotionLabel::Moving)
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn statics(&self) -> Vec<String> {
        self.objects
            .iter()
            .filter(|(_, o)| o.label == MotionLabel::Static)
            .map(|(id, _)| id.clone())
            .collect()
    }
}

fn first_frame_diagonal(demo: &Demonstration) -> f64 {
    let mut lo = Point::repeat(f64::INFINITY);
    let mut hi = Point::repeat(f64::NEG_INFINITY);
    for track in &demo.tracks {
        for series in &track.points {
            lo = lo.inf(&series[0]);
            hi = hi.sup(&series[0]);
        }
    }
    (hi - lo).norm()
}

fn mean_speed(track: &ObjectTrack, dt: f64) -> f64 {
    let t = track.n_frames();
    let mut sum = 0.0;
    for series in &track.points {
        for w in series.windows(2) {
            sum += (w[1] - w[0]).norm();
        }
    }
    sum / (dt * (t - 1) as f64 * track.n_points() as f64)
}

/// Labels every non-hand, non-virtual object as static or moving by its mean
/// point speed relative to `rel_thresh * scene_scale / duration`.
pub fn motion_saliency(set: &DemonstrationSet, rel_thresh: f64) -> Result<SaliencyReport> {
    if !(rel_thresh > 0.0) {
        return Err(Error::config("saliency", format!("rel_thresh must be > 0, got {rel_thresh}")));
    }
    let mut scale = 0.0;
    let mut duration = 0.0;
    for demo in &set.demos {
        if demo.n_frames() < 2 {
            return Err(Error::Precondition(format!(
                "demo {} has {} frames, saliency needs >= 2",
                demo.demo_id,
                demo.n_frames()
            )));
        }
        scale += first_frame_diagonal(demo);
        duration += demo.duration();
    }
    let n = set.demos.len().max(1) as f64;
    let scene_scale = scale / n;
    let speed_threshold = rel_thresh * scene_scale / (duration / n);
    let mut objects = BTreeMap::new();
    for id in set.object_ids() {
        let kind = set.kind_of(&id).expect("listed object");
        if kind.is_hand() || kind == ObjectKind::Virtual {
            continue;
        }
        let mut speed = 0.0;
        for demo in &set.demos {
            let track = demo.track(&id).expect("validated set");
            speed += mean_speed(track, demo.dt);
        }
        let mean_point_speed = speed / n;
        let label = if mean_point_speed < speed_threshold {
            MotionLabel::Static
        } else {
            MotionLabel::Moving
        };
        objects.insert(id, ObjectSaliency { mean_point_speed, label });
    }
    Ok(SaliencyReport {
        scene_scale,
        speed_threshold,
        objects,
    })
}

pub fn virtual_id(object_id: &str) -> String {
    format!("{VIRTUAL_PREFIX}{object_id}")
}

/// Adds a time-constant copy of each moving object's first-frame cloud.
pub fn create_virtual_objects(set: &DemonstrationSet, report: &SaliencyReport) -> DemonstrationSet {
    let mut out = set.clone();
    let moving = report.moving();
    for demo in &mut out.demos {
        let t = demo.n_frames();
        let mut extra = Vec::new();
        for id in &moving {
            let Some(track) = demo.track(id) else { continue };
            extra.push(ObjectTrack {
                object_id: virtual_id(id),
                category: track.category.clone(),
                kind: ObjectKind::Virtual,
                canonical_points: track.canonical_points.clone(),
                points: track.points.iter().map(|s| vec![s[0]; t]).collect(),
            });
        }
        demo.tracks.extend(extra);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraspDetectorConfig {
    #[serde(rename = "Q")]
    pub q: usize,
    pub contact_dist: f64,
    pub firm_rate_thresh: f64,
    pub min_duration: usize,
}

impl Default for GraspDetectorConfig {
    fn default() -> Self {
        GraspDetectorConfig {
            q: 50,
            contact_dist: 0.02,
            firm_rate_thresh: 0.005,
            min_duration: 5,
        }
    }
}

impl GraspDetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q < 4 {
            return Err(Error::config("saliency", format!("Q must be >= 4, got {}", self.q)));
        }
        if !(self.contact_dist > 0.0) || !(self.firm_rate_thresh > 0.0) {
            return Err(Error::config("saliency", "contact_dist and firm_rate_thresh must be > 0"));
        }
        if self.min_duration < 2 {
            return Err(Error::config("saliency", "min_duration must be >= 2 frames"));
        }
        Ok(())
    }
}

fn min_distance(a: &[Point], b: &[Point]) -> f64 {
    let mut best = f64::INFINITY;
    for p in a {
        for q in b {
            best = best.min((p - q).norm_squared());
        }
    }
    best.sqrt()
}

/// Maximal inclusive frame intervals in which the two tracks come closer
/// than `contact_dist`, keeping those of at least `min_duration` frames.
pub fn detect_contacts(
    demo: &Demonstration,
    a: &str,
    b: &str,
    cfg: &GraspDetectorConfig,
) -> Result<Vec<(usize, usize)>> {
    let ta = demo
        .track(a)
        .ok_or_else(|| Error::Precondition(format!("demo {}: no track {a}", demo.demo_id)))?;
    let tb = demo
        .track(b)
        .ok_or_else(|| Error::Precondition(format!("demo {}: no track {b}", demo.demo_id)))?;
    let touching: Vec<bool> = (0..demo.n_frames())
        .map(|t| min_distance(&ta.frame(t), &tb.frame(t)) < cfg.contact_dist)
        .collect();
    let mut out = Vec::new();
    let mut start = None;
    for (t, &c) in touching.iter().chain(std::iter::once(&false)).enumerate() {
        match (c, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                if t - s >= cfg.min_duration {
                    out.push((s, t - 1));
                }
                start = None;
            }
            _ => {}
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspEvent {
    pub hand_id: String,
    pub object_id: String,
    /// Inclusive frame interval.
    pub interval: [usize; 2],
    pub mean_change_rate: f64,
    pub firm: bool,
}

/// Orthonormal hand frame: origin at the wrist, x towards the middle-finger
/// MCP, z normal to the wrist/index-MCP/pinky-MCP plane.
pub fn hand_frame(hand: &[Point]) -> (Point, nalgebra::Matrix3<f64>) {
    let o = hand[WRIST];
    let x = (hand[MIDDLE_MCP] - o).normalize();
    let n = (hand[INDEX_MCP] - o).cross(&(hand[PINKY_MCP] - o));
    let z = (n - x * n.dot(&x)).normalize();
    let y = z.cross(&x);
    (o, nalgebra::Matrix3::from_columns(&[x, y, z]))
}

/// Frames spanned by one change-rate difference; longer baselines damp the
/// per-frame measurement noise.
pub const RATE_BASELINE: usize = 5;

/// `|x(t + k) - x(t)| / (k dt)` for every admissible `t`, with `k` the
/// baseline clamped to the series length. Empty for fewer than two samples.
pub fn baseline_rates(x: &[f64], dt: f64) -> Vec<f64> {
    if x.len() < 2 {
        return Vec::new();
    }
    let k = RATE_BASELINE.min(x.len() - 1);
    (0..x.len() - k).map(|t| ((x[t + k] - x[t]) / (k as f64 * dt)).abs()).collect()
}

fn mean_baseline_rate(x: &[f64], dt: f64) -> Option<f64> {
    let r = baseline_rates(x, dt);
    (!r.is_empty()).then(|| r.iter().sum::<f64>() / r.len() as f64)
}

/// Grasp events of `hand` on `object` within each contact interval. The
/// change rate is the mean over frames and the `Q` object points nearest the
/// hand of the baseline change rate of their distance to the hand-frame
/// origin.
pub fn detect_grasps(
    demo: &Demonstration,
    hand: &str,
    object: &str,
    cfg: &GraspDetectorConfig,
) -> Result<Vec<GraspEvent>> {
    let hand_track = demo
        .track(hand)
        .filter(|t| t.kind.is_hand())
        .ok_or_else(|| Error::Precondition(format!("demo {}: no hand track {hand}", demo.demo_id)))?;
    let obj = demo
        .track(object)
        .ok_or_else(|| Error::Precondition(format!("demo {}: no track {object}", demo.demo_id)))?;
    let mut events = Vec::new();
    for (s, e) in detect_contacts(demo, hand, object, cfg)? {
        let hand0 = hand_track.frame(s);
        let centre = crate::math::centroid(&hand0);
        let mut order: Vec<(f64, usize)> = obj
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| ((p[s] - centre).norm(), i))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let chosen: Vec<usize> = order.iter().take(cfg.q.min(obj.n_points())).map(|x| x.1).collect();
        let series: Vec<Vec<f64>> = (s..=e)
            .map(|t| {
                let (o, _) = hand_frame(&hand_track.frame(t));
                chosen.iter().map(|&i| (obj.points[i][t] - o).norm()).collect()
            })
            .collect();
        let mut sum = 0.0;
        let mut count = 0usize;
        for k in 0..chosen.len() {
            let d: Vec<f64> = series.iter().map(|row| row[k]).collect();
            if let Some(r) = mean_baseline_rate(&d, demo.dt) {
                sum += r;
                count += 1;
            }
        }
        let mean_change_rate = if count > 0 { sum / count as f64 } else { 0.0 };
        events.push(GraspEvent {
            hand_id: hand.to_string(),
            object_id: object.to_string(),
            interval: [s, e],
            mean_change_rate,
            firm: mean_change_rate < cfg.firm_rate_thresh,
        });
    }
    Ok(events)
}

/// For each hand, the real object it firmly grasps in a strict majority of
/// demos (most such demos wins, ties by id).
pub fn grasp_assignments(
    set: &DemonstrationSet,
    cfg: &GraspDetectorConfig,
) -> Result<BTreeMap<String, String>> {
    let ids = set.object_ids();
    let hands: Vec<&String> = ids.iter().filter(|id| set.kind_of(id).is_some_and(|k| k.is_hand())).collect();
    let objects: Vec<&String> = ids
        .iter()
        .filter(|id| set.kind_of(id) == Some(ObjectKind::RigidObject))
        .collect();
    let mut out = BTreeMap::new();
    for hand in hands {
        let mut best: Option<(usize, &String)> = None;
        for obj in &objects {
            let mut votes = 0;
            for demo in &set.demos {
                if detect_grasps(demo, hand, obj, cfg)?.iter().any(|g| g.firm) {
                    votes += 1;
                }
            }
            if 2 * votes > set.demos.len() && best.is_none_or(|(v, _)| votes > v) {
                best = Some((votes, obj));
            }
        }
        if let Some((_, obj)) = best {
            out.insert(hand.clone(), obj.clone());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Vector3};

    fn blob(center: Point, n: usize, r: f64) -> Vec<Point> {
        (0..n)
            .map(|i| {
                let f = i as f64;
                center + Point::new((1.3 * f).sin(), (0.7 * f).cos(), (2.1 * f).sin()) * r
            })
            .collect()
    }

    fn track(id: &str, kind: ObjectKind, frames: Vec<Vec<Point>>) -> ObjectTrack {
        let n = frames[0].len();
        ObjectTrack {
            object_id: id.into(),
            category: id.into(),
            kind,
            canonical_points: frames[0].clone(),
            points: (0..n).map(|i| frames.iter().map(|f| f[i]).collect()).collect(),
        }
    }

    fn demo(tracks: Vec<ObjectTrack>) -> Demonstration {
        Demonstration {
            demo_id: "d".into(),
            dt: 0.1,
            tracks,
        }
    }

    fn set_of(demos: Vec<Demonstration>) -> DemonstrationSet {
        DemonstrationSet {
            task_name: "t".into(),
            categories: DemonstrationSet::derive_categories(&demos),
            demos,
        }
    }

    #[test]
    fn static_table_moving_cup() {
        let t = 30;
        let table: Vec<Vec<Point>> = vec![blob(Point::zeros(), 20, 0.3); t];
        let cup: Vec<Vec<Point>> = (0..t)
            .map(|k| blob(Point::new(0.3 * k as f64 / (t - 1) as f64, 0.0, 0.2), 20, 0.04))
            .collect();
        let s = set_of(vec![demo(vec![
            track("table", ObjectKind::RigidObject, table),
            track("cup", ObjectKind::RigidObject, cup),
        ])]);
        let r = motion_saliency(&s, 0.05).unwrap();
        assert!(r.is_static("table"));
        assert!(!r.is_static("cup"));
        let v = create_virtual_objects(&s, &r);
        let vc = v.demos[0].track("vcup").unwrap();
        assert_eq!(vc.kind, ObjectKind::Virtual);
        for series in &vc.points {
            assert!(series.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn motionless_scene_is_all_static_and_gets_no_virtuals() {
        let f = vec![blob(Point::zeros(), 10, 0.1); 5];
        let s = set_of(vec![demo(vec![
            track("a", ObjectKind::RigidObject, f.clone()),
            track("b", ObjectKind::RigidObject, f.iter().map(|x| x.iter().map(|p| p * 2.0).collect()).collect()),
        ])]);
        let r = motion_saliency(&s, 0.05).unwrap();
        assert!(r.moving().is_empty());
        assert_eq!(create_virtual_objects(&s, &r), s);
    }

    #[test]
    fn distant_objects_never_touch() {
        let a = vec![blob(Point::zeros(), 10, 0.05); 20];
        let b = vec![blob(Point::new(1.0, 0.0, 0.0), 10, 0.05); 20];
        let d = demo(vec![
            track("a", ObjectKind::RigidObject, a),
            track("b", ObjectKind::RigidObject, b),
        ]);
        assert!(detect_contacts(&d, "a", "b", &GraspDetectorConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn single_frame_touch_is_ignored() {
        let a = vec![blob(Point::zeros(), 10, 0.05); 20];
        let b: Vec<Vec<Point>> = (0..20)
            .map(|t| blob(Point::new(if t == 7 { 0.0 } else { 1.0 }, 0.0, 0.0), 10, 0.05))
            .collect();
        let d = demo(vec![
            track("a", ObjectKind::RigidObject, a),
            track("b", ObjectKind::RigidObject, b),
        ]);
        assert!(detect_contacts(&d, "a", "b", &GraspDetectorConfig::default()).unwrap().is_empty());
    }

    fn hand_cloud(center: Point) -> Vec<Point> {
        blob(center, 21, 0.03)
    }

    #[test]
    fn rigid_attachment_is_firm_and_spinning_is_not() {
        let t = 20;
        let obj0 = blob(Point::zeros(), 30, 0.05);
        let motion = |k: usize| {
            let r = Rotation3::from_axis_angle(&Vector3::z_axis(), 0.05 * k as f64);
            (r, Point::new(0.01 * k as f64, 0.0, 0.0))
        };
        let hand_off = Point::new(0.0, 0.0, 0.07);
        let hand: Vec<Vec<Point>> = (0..t)
            .map(|k| {
                let (r, tr) = motion(k);
                hand_cloud(hand_off).iter().map(|p| r * p + tr).collect()
            })
            .collect();
        let attached: Vec<Vec<Point>> = (0..t)
            .map(|k| {
                let (r, tr) = motion(k);
                obj0.iter().map(|p| r * p + tr).collect()
            })
            .collect();
        let d = demo(vec![
            track("rh", ObjectKind::HandRight, hand.clone()),
            track("o", ObjectKind::RigidObject, attached),
        ]);
        let g = detect_grasps(&d, "rh", "o", &GraspDetectorConfig::default()).unwrap();
        assert_eq!(g.len(), 1);
        assert!(g[0].firm && g[0].mean_change_rate < 1e-9);

        // object spins about an off-centre axis while the hand stays put
        let still_hand = vec![hand_cloud(hand_off); t];
        let spinning: Vec<Vec<Point>> = (0..t)
            .map(|k| {
                let r = Rotation3::from_axis_angle(&Vector3::x_axis(), 0.3 * k as f64);
                obj0.iter().map(|p| r * (p - Point::new(0.0, 0.02, 0.0)) + Point::new(0.0, 0.02, 0.0)).collect()
            })
            .collect();
        let d = demo(vec![
            track("rh", ObjectKind::HandRight, still_hand),
            track("o", ObjectKind::RigidObject, spinning),
        ]);
        let cfg = GraspDetectorConfig { contact_dist: 0.1, ..Default::default() };
        let g = detect_grasps(&d, "rh", "o", &cfg).unwrap();
        assert!(!g.is_empty());
        assert!(g.iter().all(|e| !e.firm && e.mean_change_rate > 10.0 * cfg.firm_rate_thresh));
    }

    #[test]
    fn missing_hand_is_precondition_error() {
        let d = demo(vec![track("o", ObjectKind::RigidObject, vec![blob(Point::zeros(), 5, 0.1); 3])]);
        assert!(matches!(
            detect_grasps(&d, "lh", "o", &GraspDetectorConfig::default()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn hand_frame_is_orthonormal() {
        let (_, b) = hand_frame(&blob(Point::new(0.1, 0.2, 0.3), 21, 0.05));
        assert!((b.transpose() * b - nalgebra::Matrix3::identity()).amax() < 1e-12);
        assert!((b.determinant() - 1.0).abs() < 1e-12);
    }
}
