//! Demonstration data model and trajectory preprocessing.
//!
//! A demonstration set is a directory holding `manifest.json` and one
//! `<demo_id>.json` per demonstration. Every object track stores `N` candidate
//! points over `T` frames in the camera frame (meters), plus the `N` canonical
//! points of its category. Point index `i` is the same physical surface point in
//! every frame and every demonstration of a category.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{median, rigid_fit, Point};

pub const HAND_POINTS: usize = 21;
pub const MIN_RIGID_POINTS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    RigidObject,
    HandLeft,
    HandRight,
    Virtual,
}

impl ObjectKind {
    pub fn is_hand(self) -> bool {
        matches!(self, ObjectKind::HandLeft | ObjectKind::HandRight)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectTrack {
    pub object_id: String,
    pub category: String,
    pub kind: ObjectKind,
    pub canonical_points: Vec<Point>,
    /// `points[i][t]`: point `i` at frame `t`.
    pub points: Vec<Vec<Point>>,
}

impl ObjectTrack {
    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    pub fn n_frames(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    /// Point cloud at frame `t`.
    pub fn frame(&self, t: usize) -> Vec<Point> {
        self.points.iter().map(|p| p[t]).collect()
    }

    pub fn last_frame(&self) -> Vec<Point> {
        self.frame(self.n_frames() - 1)
    }

    fn validate(&self, demo_id: &str) -> Result<()> {
        let n = self.points.len();
        let min = if self.kind.is_hand() { HAND_POINTS } else { MIN_RIGID_POINTS };
        if self.kind.is_hand() && n != HAND_POINTS {
            return Err(Error::Schema(format!(
                "demo {demo_id} object {}: hand tracks need exactly {HAND_POINTS} points, got {n}",
                self.object_id
            )));
        }
        if n < min {
            return Err(Error::Schema(format!(
                "demo {demo_id} object {}: {n} points, need at least {min}",
                self.object_id
            )));
        }
        if self.canonical_points.len() != n {
            return Err(Error::Schema(format!(
                "demo {demo_id} object {}: {} canonical points for {n} tracked points",
                self.object_id,
                self.canonical_points.len()
            )));
        }
        let t = self.n_frames();
        for (i, series) in self.points.iter().enumerate() {
            if series.len() != t {
                return Err(Error::Schema(format!(
                    "demo {demo_id} object {}: point {i} has {} frames, expected {t}",
                    self.object_id,
                    series.len()
                )));
            }
            if let Some(f) = series.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
                return Err(Error::Data(format!(
                    "demo {demo_id} object {}: non-finite value at point {i}, frame {f}",
                    self.object_id
                )));
            }
        }
        if let Some(i) = self
            .canonical_points
            .iter()
            .position(|p| !p.iter().all(|v| v.is_finite()))
        {
            return Err(Error::Data(format!(
                "demo {demo_id} object {}: non-finite canonical point {i}",
                self.object_id
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub demo_id: String,
    pub dt: f64,
    #[serde(rename = "objects")]
    pub tracks: Vec<ObjectTrack>,
}

impl Demonstration {
    pub fn n_frames(&self) -> usize {
        self.tracks.first().map_or(0, ObjectTrack::n_frames)
    }

    pub fn duration(&self) -> f64 {
        (self.n_frames().saturating_sub(1)) as f64 * self.dt
    }

    pub fn track(&self, object_id: &str) -> Option<&ObjectTrack> {
        self.tracks.iter().find(|t| t.object_id == object_id)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Data(format!("demo {}: dt must be > 0", self.demo_id)));
        }
        if !self.tracks.iter().any(|t| !t.kind.is_hand()) {
            return Err(Error::Schema(format!(
                "demo {}: needs at least one non-hand track",
                self.demo_id
            )));
        }
        let t = self.n_frames();
        let mut ids = BTreeSet::new();
        for track in &self.tracks {
            track.validate(&self.demo_id)?;
            if track.n_frames() != t {
                return Err(Error::Schema(format!(
                    "demo {} object {}: track length {} differs from {t}",
                    self.demo_id,
                    track.object_id,
                    track.n_frames()
                )));
            }
            if !ids.insert(track.object_id.as_str()) {
                return Err(Error::Schema(format!(
                    "demo {}: duplicate object id {}",
                    self.demo_id, track.object_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryInfo {
    pub name: String,
    pub n_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemonstrationSet {
    pub task_name: String,
    pub demos: Vec<Demonstration>,
    pub categories: Vec<CategoryInfo>,
}

impl DemonstrationSet {
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        let mut signature: Option<BTreeSet<(String, String, ObjectKind)>> = None;
        let mut sizes: BTreeMap<String, usize> = BTreeMap::new();
        for demo in &self.demos {
            demo.validate()?;
            if !ids.insert(demo.demo_id.as_str()) {
                return Err(Error::Schema(format!("duplicate demo id {}", demo.demo_id)));
            }
            let sig: BTreeSet<_> = demo
                .tracks
                .iter()
                .map(|t| (t.object_id.clone(), t.category.clone(), t.kind))
                .collect();
            match &signature {
                None => signature = Some(sig),
                Some(s) if *s != sig => {
                    return Err(Error::Schema(format!(
                        "demo {}: object set differs from the first demo",
                        demo.demo_id
                    )))
                }
                _ => {}
            }
            for track in &demo.tracks {
                let n = *sizes.entry(track.category.clone()).or_insert(track.n_points());
                if n != track.n_points() {
                    return Err(Error::Schema(format!(
                        "demo {} object {}: category {} has {} points elsewhere, {} here",
                        demo.demo_id,
                        track.object_id,
                        track.category,
                        n,
                        track.n_points()
                    )));
                }
            }
        }
        for cat in &self.categories {
            if let Some(&n) = sizes.get(&cat.name) {
                if n != cat.n_points {
                    return Err(Error::Schema(format!(
                        "category {} declares {} points, tracks carry {n}",
                        cat.name, cat.n_points
                    )));
                }
            }
        }
        Ok(())
    }

    /// Object ids in first-demo order.
    pub fn object_ids(&self) -> Vec<String> {
        self.demos
            .first()
            .map(|d| d.tracks.iter().map(|t| t.object_id.clone()).collect())
            .unwrap_or_default()
    }

    pub fn kind_of(&self, object_id: &str) -> Option<ObjectKind> {
        self.demos
            .first()
            .and_then(|d| d.track(object_id))
            .map(|t| t.kind)
    }

    /// Tracks of one object across all demos.
    pub fn tracks_of<'a>(&'a self, object_id: &str) -> Result<Vec<&'a ObjectTrack>> {
        self.demos
            .iter()
            .map(|d| {
                d.track(object_id).ok_or_else(|| {
                    Error::Schema(format!("demo {} has no object {object_id}", d.demo_id))
                })
            })
            .collect()
    }

    /// Recomputes the category list from the tracks.
    pub fn derive_categories(demos: &[Demonstration]) -> Vec<CategoryInfo> {
        let mut map = BTreeMap::new();
        for d in demos {
            for t in &d.tracks {
                map.entry(t.category.clone()).or_insert(t.n_points());
            }
        }
        map.into_iter()
            .map(|(name, n_points)| CategoryInfo { name, n_points })
            .collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Units {
    length: String,
    time: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    task_name: String,
    units: Units,
    categories: Vec<CategoryInfo>,
    demos: Vec<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn load_demonstration_set(dir: &Path) -> Result<DemonstrationSet> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Error::Schema(format!(
            "missing manifest {}",
            manifest_path.display()
        )));
    }
    let manifest: Manifest = read_json(&manifest_path)?;
    if manifest.units.length != "m" || manifest.units.time != "s" {
        return Err(Error::Schema(format!(
            "unsupported units {}/{}; expected m/s",
            manifest.units.length, manifest.units.time
        )));
    }
    let demos = manifest
        .demos
        .iter()
        .map(|file| read_json::<Demonstration>(&dir.join(file)))
        .collect::<Result<Vec<_>>>()?;
    let set = DemonstrationSet {
        task_name: manifest.task_name,
        demos,
        categories: manifest.categories,
    };
    set.validate()?;
    Ok(set)
}

pub fn save_demonstration_set(set: &DemonstrationSet, dir: &Path) -> Result<()> {
    set.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        task_name: set.task_name.clone(),
        units: Units {
            length: "m".into(),
            time: "s".into(),
        },
        categories: set.categories.clone(),
        demos: set
            .demos
            .iter()
            .map(|d| format!("{}.json", d.demo_id))
            .collect(),
    };
    for demo in &set.demos {
        write_json(&dir.join(format!("{}.json", demo.demo_id)), demo)?;
    }
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Writes through a sibling temporary file and a rename, so readers never
/// observe a partial file.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string(value).map_err(|e| Error::json(path, e))?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Savitzky-Golay weights estimating the value at offset `at` inside a window
/// of `window` samples, from a least-squares polynomial of degree `polyorder`.
fn sg_weights(window: usize, polyorder: usize, at: usize) -> Vec<f64> {
    let half = (window as f64 - 1.0) / 2.0;
    let scale = half.max(1.0);
    let mut a = DMatrix::zeros(window, polyorder + 1);
    for k in 0..window {
        let u = (k as f64 - at as f64) / scale;
        let mut v = 1.0;
        for j in 0..=polyorder {
            a[(k, j)] = v;
            v *= u;
        }
    }
    // value at `at` is the constant coefficient: first row of pinv(A)
    let pinv = a
        .pseudo_inverse(1e-14)
        .expect("vandermonde pseudo-inverse");
    pinv.row(0).iter().copied().collect()
}

/// Smooths every coordinate series of a track with a Savitzky-Golay filter.
/// The first and last `window/2` samples use the polynomial fitted on the
/// one-sided window at that end.
pub fn savitzky_golay_smooth(
    track: &ObjectTrack,
    window: usize,
    polyorder: usize,
) -> Result<ObjectTrack> {
    let t = track.n_frames();
    if window < 3 || window % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "window must be odd and >= 3, got {window}"
        )));
    }
    if polyorder >= window {
        return Err(Error::InvalidArgument(format!(
            "polyorder {polyorder} must be < window {window}"
        )));
    }
    if window > t {
        return Err(Error::InvalidArgument(format!(
            "window {window} exceeds track length {t}"
        )));
    }
    let half = window / 2;
    let weights: Vec<Vec<f64>> = (0..window).map(|at| sg_weights(window, polyorder, at)).collect();
    let mut out = track.clone();
    for (series, smoothed) in track.points.iter().zip(out.points.iter_mut()) {
        for f in 0..t {
            let (start, at) = if f < half {
                (0, f)
            } else if f + half >= t {
                (t - window, f + window - t)
            } else {
                (f - half, half)
            };
            let w = &weights[at];
            smoothed[f] = (0..window).fold(Point::zeros(), |acc, k| acc + series[start + k] * w[k]);
        }
    }
    Ok(out)
}

const MAD_TO_SIGMA: f64 = 1.4826;

/// Indices of points whose mean per-step speed is above
/// `median + z_thresh * sigma_mad` of the object's per-point distribution.
/// Speeds are measured after removing each step's best-fit rigid motion, so
/// rigid tracks score zero however they move, and a single jump still
/// raises the mean.
pub fn outlier_indices(track: &ObjectTrack, dt: f64, z_thresh: f64) -> Result<Vec<usize>> {
    if track.n_points() < 8 {
        return Err(Error::Precondition(format!(
            "outlier rejection needs >= 8 points, {} has {}",
            track.object_id,
            track.n_points()
        )));
    }
    if track.n_frames() < 2 {
        return Ok(Vec::new());
    }
    let mut steps: Vec<Vec<f64>> = vec![Vec::with_capacity(track.n_frames() - 1); track.n_points()];
    let mut current = track.frame(0);
    for t in 1..track.n_frames() {
        let next = track.frame(t);
        let fit = rigid_fit(&current, &next).ok();
        for (i, (a, b)) in current.iter().zip(&next).enumerate() {
            let predicted = fit.as_ref().map_or(*a, |f| f.rotation * a + f.translation);
            steps[i].push((b - predicted).norm() / dt);
        }
        current = next;
    }
    let speeds: Vec<f64> = steps.iter().map(|s| s.iter().sum::<f64>() / s.len() as f64).collect();
    let mut tmp = speeds.clone();
    let med = median(&mut tmp);
    let mut dev: Vec<f64> = speeds.iter().map(|s| (s - med).abs()).collect();
    let mad = median(&mut dev);
    let spread = (MAD_TO_SIGMA * mad).max(1e-3 * med).max(1e-12);
    let limit = med + z_thresh * spread;
    Ok(speeds
        .iter()
        .enumerate()
        .filter(|(_, s)| **s > limit)
        .map(|(i, _)| i)
        .collect())
}

/// Drops outlier points from a track. Returns the reduced track and the
/// removed original indices.
pub fn reject_outlier_points(
    track: &ObjectTrack,
    dt: f64,
    z_thresh: f64,
) -> Result<(ObjectTrack, Vec<usize>)> {
    let removed = outlier_indices(track, dt, z_thresh)?;
    let survivors = track.n_points() - removed.len();
    if survivors < MIN_RIGID_POINTS {
        return Err(Error::Data(format!(
            "object {}: only {survivors} points survive outlier rejection",
            track.object_id
        )));
    }
    let keep = |i: &usize| !removed.contains(i);
    let mut out = track.clone();
    out.points = (0..track.n_points()).filter(keep).map(|i| track.points[i].clone()).collect();
    out.canonical_points = (0..track.n_points())
        .filter(keep)
        .map(|i| track.canonical_points[i])
        .collect();
    Ok((out, removed))
}

/// Set-level outlier mask: the union of removed indices over demos, per
/// non-hand object, so surviving indices stay category-aligned.
pub fn outlier_mask(set: &DemonstrationSet, z_thresh: f64) -> Result<BTreeMap<String, BTreeSet<usize>>> {
    let mut mask: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for demo in &set.demos {
        for track in demo.tracks.iter().filter(|t| !t.kind.is_hand()) {
            let entry = mask.entry(track.object_id.clone()).or_default();
            if track.n_points() >= 8 {
                entry.extend(outlier_indices(track, demo.dt, z_thresh)?);
            }
        }
    }
    for (id, removed) in &mask {
        let n = set.demos[0].track(id).map_or(0, ObjectTrack::n_points);
        if n - removed.len().min(n) < MIN_RIGID_POINTS {
            return Err(Error::Data(format!(
                "object {id}: fewer than {MIN_RIGID_POINTS} points survive outlier rejection"
            )));
        }
    }
    Ok(mask)
}

/// Linear resampling onto `t_out` uniform samples over the same duration.
pub fn resample_time(demo: &Demonstration, t_out: usize) -> Result<Demonstration> {
    if t_out < 2 {
        return Err(Error::InvalidArgument(format!("t_out must be >= 2, got {t_out}")));
    }
    let t = demo.n_frames();
    if t < 2 {
        return Err(Error::Precondition(format!(
            "demo {} has {t} frames, need >= 2",
            demo.demo_id
        )));
    }
    if t == t_out {
        return Ok(demo.clone());
    }
    let mut out = demo.clone();
    out.dt = demo.duration() / (t_out - 1) as f64;
    for (src, dst) in demo.tracks.iter().zip(out.tracks.iter_mut()) {
        for (series, new_series) in src.points.iter().zip(dst.points.iter_mut()) {
            *new_series = (0..t_out)
                .map(|k| {
                    if k == 0 {
                        return series[0];
                    }
                    if k == t_out - 1 {
                        return series[t - 1];
                    }
                    let u = k as f64 * (t - 1) as f64 / (t_out - 1) as f64;
                    let i = (u.floor() as usize).min(t - 2);
                    let frac = u - i as f64;
                    series[i] * (1.0 - frac) + series[i + 1] * frac
                })
                .collect();
        }
    }
    Ok(out)
}

/// Applies `f` to every track of every demo.
pub fn map_tracks(
    set: &DemonstrationSet,
    mut f: impl FnMut(&ObjectTrack) -> Result<ObjectTrack>,
) -> Result<DemonstrationSet> {
    let mut out = set.clone();
    for demo in &mut out.demos {
        for track in &mut demo.tracks {
            *track = f(track)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track_from(f: impl Fn(usize, usize) -> Point, n: usize, t: usize) -> ObjectTrack {
        ObjectTrack {
            object_id: "obj".into(),
            category: "cat".into(),
            kind: ObjectKind::RigidObject,
            canonical_points: (0..n).map(|i| f(i, 0)).collect(),
            points: (0..n).map(|i| (0..t).map(|k| f(i, k)).collect()).collect(),
        }
    }

    #[test]
    fn sg_keeps_constant() {
        let tr = track_from(|i, _| Point::new(i as f64, 1.0, -2.0), 5, 30);
        let s = savitzky_golay_smooth(&tr, 7, 2).unwrap();
        for (a, b) in tr.points.iter().flatten().zip(s.points.iter().flatten()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn sg_exact_on_cubic() {
        let tr = track_from(
            |i, k| {
                let x = k as f64 * 0.05;
                Point::new(x * x * x - x, 0.3 * x * x + i as f64, 2.0 - x)
            },
            4,
            40,
        );
        let s = savitzky_golay_smooth(&tr, 11, 3).unwrap();
        for (a, b) in tr.points.iter().flatten().zip(s.points.iter().flatten()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn sg_rejects_bad_windows() {
        let tr = track_from(|_, _| Point::zeros(), 4, 10);
        assert!(savitzky_golay_smooth(&tr, 4, 2).is_err());
        assert!(savitzky_golay_smooth(&tr, 11, 2).is_err());
        assert!(savitzky_golay_smooth(&tr, 5, 5).is_err());
    }

    #[test]
    fn rigid_translation_has_no_outliers() {
        let tr = track_from(|i, k| Point::new(i as f64 * 0.01, 0.02 * k as f64, 0.0), 12, 20);
        let (out, removed) = reject_outlier_points(&tr, 0.1, 3.5).unwrap();
        assert!(removed.is_empty());
        assert_eq!(out.n_points(), 12);
    }

    #[test]
    fn teleported_point_is_removed() {
        let tr = track_from(
            |i, k| {
                let base = Point::new((i % 4) as f64 * 0.03, (i / 4) as f64 * 0.03, 0.01 * (i % 3) as f64);
                let jump = if i == 5 && k >= 10 { Point::new(1.0, 0.0, 0.0) } else { Point::zeros() };
                base + Point::new(0.02 * k as f64, 0.0, 0.0) + jump
            },
            12,
            20,
        );
        let (out, removed) = reject_outlier_points(&tr, 0.1, 3.5).unwrap();
        assert_eq!(removed, vec![5]);
        assert_eq!(out.n_points(), 11);
    }

    #[test]
    fn equally_noisy_points_are_rarely_removed() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let noise = Normal::new(0.0, 0.001).unwrap();
        let (mut removed, mut total) = (0usize, 0usize);
        for trial in 0..200 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(trial);
            let jitter: Vec<Point> = (0..20 * 30)
                .map(|_| Point::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng)))
                .collect();
            let tr = track_from(
                |i, k| Point::new((i % 4) as f64 * 0.03, (i / 4) as f64 * 0.03, 0.02 * k as f64) + jitter[i * 30 + k],
                20,
                30,
            );
            removed += outlier_indices(&tr, 0.1, 3.5).unwrap().len();
            total += 20;
        }
        assert!((removed as f64) < 0.05 * total as f64, "{removed} of {total} removed");
    }

    #[test]
    fn outlier_needs_eight_points() {
        let tr = track_from(|_, _| Point::zeros(), 6, 10);
        assert!(matches!(
            reject_outlier_points(&tr, 0.1, 3.5),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn resample_identity_and_endpoints() {
        let tr = track_from(|i, k| Point::new(i as f64, (k as f64).sin(), 0.0), 4, 100);
        let demo = Demonstration {
            demo_id: "d".into(),
            dt: 0.1,
            tracks: vec![tr],
        };
        assert_eq!(resample_time(&demo, 100).unwrap(), demo);
        let r = resample_time(&demo, 60).unwrap();
        assert_eq!(r.n_frames(), 60);
        for (a, b) in demo.tracks[0].points.iter().zip(&r.tracks[0].points) {
            assert_eq!(a[0], b[0]);
            assert_eq!(a[99], b[59]);
        }
        assert!((r.duration() - demo.duration()).abs() < 1e-12);
        assert!(resample_time(&demo, 1).is_err());
    }

    #[test]
    fn resample_exact_on_lines() {
        let dir = Point::new(0.3, -0.2, 0.1);
        let tr = track_from(|_, k| Point::new(1.0, 2.0, 3.0) + dir * k as f64, 4, 17);
        let demo = Demonstration {
            demo_id: "d".into(),
            dt: 0.1,
            tracks: vec![tr],
        };
        let r = resample_time(&demo, 41).unwrap();
        for p in &r.tracks[0].points[0] {
            let d = p - Point::new(1.0, 2.0, 3.0);
            assert!(d.cross(&dir).norm() < 1e-12);
        }
    }
}
