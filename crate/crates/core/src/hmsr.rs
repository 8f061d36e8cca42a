//! Hybrid master-slave relationship graph: candidate edges, master
//! resolution by pose invariance, truncation, pose constraints on free
//! masters and bimanual coordination.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Matrix3, Rotation3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geomcon::{
    candidate_local_frames, extract_pair_constraints, frame_poses, ConstraintKind, ConstraintParams,
    ConstraintTolerances, GeometricConstraint, LocalFrame, PairMasks, PoseTarget,
};
use crate::math::{centroid, chordal_mean, geodesic_distance, mean_covariance, rigid_fit, Point};
use crate::saliency::{baseline_rates, detect_grasps, RATE_BASELINE, virtual_id, GraspDetectorConfig, SaliencyReport};
use crate::trajdata::{DemonstrationSet, ObjectKind, ObjectTrack};
use crate::vmp::{pose_to_vec, Vmp, VmpConfig};

pub type Masks = BTreeMap<String, BTreeSet<usize>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HmsrConfig {
    /// Fraction of final frames used for end-segment poses.
    pub end_fraction: f64,
    /// Two movers form an ambiguous pair when their final clouds come this
    /// close in a majority of demos.
    pub interaction_dist: f64,
    /// Fraction of the demo over which the inter-hand distance must stay
    /// constant for symmetric coordination.
    pub sym_window: f64,
    pub sym_rate_thresh: f64,
}

impl Default for HmsrConfig {
    fn default() -> Self {
        HmsrConfig {
            end_fraction: 0.1,
            interaction_dist: 0.05,
            sym_window: 0.3,
            sym_rate_thresh: 0.005,
        }
    }
}

impl HmsrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.end_fraction > 0.0 && self.end_fraction <= 1.0) {
            return Err(Error::config("hmsr", "end_fraction must be in (0, 1]"));
        }
        if !(self.sym_window > 0.0 && self.sym_window <= 1.0) {
            return Err(Error::config("hmsr", "sym_window must be in (0, 1]"));
        }
        if !(self.interaction_dist > 0.0) || !(self.sym_rate_thresh > 0.0) {
            return Err(Error::config("hmsr", "interaction_dist and sym_rate_thresh must be > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioEntry {
    pub static_id: String,
    pub object_id: String,
    pub r_p: f64,
    pub r_o: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceRatios {
    pub pair: (String, String),
    pub entries: Vec<RatioEntry>,
}

fn allowed_indices(n: usize, mask: Option<&BTreeSet<usize>>) -> Vec<usize> {
    (0..n).filter(|i| mask.is_none_or(|m| !m.contains(i))).collect()
}

/// Rigid pose of a track at frame `t` registered from its canonical points.
pub fn object_pose(track: &ObjectTrack, t: usize, mask: Option<&BTreeSet<usize>>) -> Result<(Rotation3<f64>, Point)> {
    let idx = allowed_indices(track.n_points(), mask);
    let src: Vec<Point> = idx.iter().map(|&i| track.canonical_points[i]).collect();
    let dst: Vec<Point> = idx.iter().map(|&i| track.points[i][t]).collect();
    let fit = rigid_fit(&src, &dst).map_err(|e| Error::Registration(format!("{}: {e}", track.object_id)))?;
    Ok((fit.rotation, fit.translation))
}

/// Mean relative pose of `object` in `reference` over the end window.
fn end_relative_pose(
    reference: &ObjectTrack,
    object: &ObjectTrack,
    end_fraction: f64,
    masks: &Masks,
) -> Result<(Point, Rotation3<f64>)> {
    let t = reference.n_frames();
    let w = ((t as f64 * end_fraction).ceil() as usize).clamp(1, t);
    let mut trans = Vec::with_capacity(w);
    let mut rots = Vec::with_capacity(w);
    for k in t - w..t {
        let (rs, ts) = object_pose(reference, k, masks.get(&reference.object_id))?;
        let (rl, tl) = object_pose(object, k, masks.get(&object.object_id))?;
        trans.push(rs.inverse() * (tl - ts));
        rots.push(rs.inverse() * rl);
    }
    Ok((centroid(&trans), chordal_mean(&rots)))
}

/// Translational and orientational variability of each mover's end pose
/// relative to each static anchor, normalized to `[0, 1]`.
pub fn compute_invariance_ratios(
    pair: (&str, &str),
    statics: &[String],
    set: &DemonstrationSet,
    scene_scale: f64,
    cfg: &HmsrConfig,
    masks: &Masks,
) -> Result<InvarianceRatios> {
    if statics.is_empty() {
        return Err(Error::Precondition(format!(
            "no static anchor to resolve {} / {}",
            pair.0, pair.1
        )));
    }
    let mut entries = Vec::new();
    for s in statics {
        for l in [pair.0, pair.1] {
            let mut trans = Vec::new();
            let mut rots = Vec::new();
            for demo in &set.demos {
                let rt = demo
                    .track(s)
                    .ok_or_else(|| Error::Schema(format!("demo {}: no track {s}", demo.demo_id)))?;
                let lt = demo
                    .track(l)
                    .ok_or_else(|| Error::Schema(format!("demo {}: no track {l}", demo.demo_id)))?;
                let (p, r) = end_relative_pose(rt, lt, cfg.end_fraction, masks)?;
                trans.push(p);
                rots.push(r);
            }
            let (_, cov) = mean_covariance(&trans);
            let mean_r = chordal_mean(&rots);
            let r_o = rots.iter().map(|r| geodesic_distance(r, &mean_r)).sum::<f64>()
                / rots.len() as f64
                / std::f64::consts::PI;
            let r_p = cov.trace().max(0.0).sqrt() / scene_scale.max(1e-12);
            entries.push(RatioEntry {
                static_id: s.clone(),
                object_id: l.to_string(),
                r_p: r_p.clamp(0.0, 1.0),
                r_o: r_o.clamp(0.0, 1.0),
            });
        }
    }
    Ok(InvarianceRatios {
        pair: (pair.0.to_string(), pair.1.to_string()),
        entries,
    })
}

/// Object attaining the smallest ratio over both families and all anchors;
/// ties go to the smaller `r_p + r_o`, then the smaller id.
pub fn resolve_master(ratios: &InvarianceRatios) -> Option<String> {
    ratios
        .entries
        .iter()
        .min_by(|a, b| {
            a.r_p
                .min(a.r_o)
                .total_cmp(&b.r_p.min(b.r_o))
                .then((a.r_p + a.r_o).total_cmp(&(b.r_p + b.r_o)))
                .then(a.object_id.cmp(&b.object_id))
        })
        .map(|e| e.object_id.clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Static,
    Moving,
    Virtual,
    Hand,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: String,
    pub kind: NodeKind,
    pub level: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub master: String,
    pub slave: String,
    pub constraints: Vec<GeometricConstraint>,
    /// One primitive per constraint, in the same order.
    pub vmps: Vec<Vmp>,
}

impl GraphEdge {
    pub fn kinds(&self) -> Vec<ConstraintKind> {
        self.constraints.iter().map(|c| c.kind).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordinationStrategy {
    UncoordinatedUnimanual,
    UncoordinatedBimanual,
    LooselyCoupled,
    TightlyCoupledSymmetric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coordination {
    pub value: CoordinationStrategy,
    pub evidence: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphMeta {
    pub task_name: String,
    pub n_demos: usize,
    /// Effective configuration of the extraction run.
    pub config: crate::config::PipelineConfig,
    /// Window used for the pose-invariance ratios.
    pub end_pose_window: String,
    pub ratios: Vec<InvarianceRatios>,
    pub grasps: BTreeMap<String, String>,
    /// Category of every real and virtual node.
    pub categories: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HmsrGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
    pub coordination: Option<Coordination>,
    pub meta: Option<GraphMeta>,
}

impl HmsrGraph {
    pub fn edge(&self, master: &str, slave: &str) -> Option<&GraphEdge> {
        self.edges.iter().find(|e| e.master == master && e.slave == slave)
    }

    pub fn node(&self, id: &str) -> Option<&GraphNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn masters_of(&self, slave: &str) -> Vec<&str> {
        self.edges.iter().filter(|e| e.slave == slave).map(|e| e.master.as_str()).collect()
    }

    /// Node ids in topological order (masters first, ties by id).
    pub fn topological_order(&self) -> Result<Vec<String>> {
        let mut indeg: BTreeMap<&str, usize> = self.nodes.iter().map(|n| (n.id.as_str(), 0)).collect();
        for e in &self.edges {
            for id in [&e.master, &e.slave] {
                if !indeg.contains_key(id.as_str()) {
                    return Err(Error::Internal(format!("edge references unknown node {id}")));
                }
            }
            *indeg.get_mut(e.slave.as_str()).expect("checked") += 1;
        }
        let mut ready: BTreeSet<&str> = indeg.iter().filter(|(_, d)| **d == 0).map(|(k, _)| *k).collect();
        let mut order = Vec::new();
        while let Some(n) = ready.pop_first() {
            order.push(n.to_string());
            for e in self.edges.iter().filter(|e| e.master == n) {
                let d = indeg.get_mut(e.slave.as_str()).expect("checked");
                *d -= 1;
                if *d == 0 {
                    ready.insert(e.slave.as_str());
                }
            }
        }
        if order.len() != self.nodes.len() {
            return Err(Error::Internal("master-slave graph contains a cycle".into()));
        }
        Ok(order)
    }

    /// Longest-path layering; fails on cycles.
    pub fn assign_levels(&mut self) -> Result<()> {
        let order = self.topological_order()?;
        let mut level: BTreeMap<String, usize> = BTreeMap::new();
        for id in &order {
            let l = self
                .edges
                .iter()
                .filter(|e| &e.slave == id)
                .map(|e| level[&e.master] + 1)
                .max()
                .unwrap_or(0);
            level.insert(id.clone(), l);
        }
        for n in &mut self.nodes {
            n.level = level[&n.id];
        }
        Ok(())
    }
}

fn final_min_distance(a: &ObjectTrack, b: &ObjectTrack) -> f64 {
    let fa = a.last_frame();
    let fb = b.last_frame();
    let mut best = f64::INFINITY;
    for p in &fa {
        for q in &fb {
            best = best.min((p - q).norm_squared());
        }
    }
    best.sqrt()
}

/// Inputs shared by graph construction and truncation.
pub struct GraphInputs<'a> {
    /// Demonstration set including virtual tracks.
    pub set: &'a DemonstrationSet,
    pub saliency: &'a SaliencyReport,
    /// Hand id to firmly grasped object id.
    pub grasps: &'a BTreeMap<String, String>,
    pub masks: &'a Masks,
    pub cfg: &'a HmsrConfig,
    pub vmp: &'a VmpConfig,
}

/// Candidate graph before truncation, plus the ratios used to resolve
/// ambiguous mover pairs.
pub fn build_candidate_graph(inp: &GraphInputs<'_>) -> Result<(HmsrGraph, Vec<InvarianceRatios>)> {
    let set = inp.set;
    let movers = inp.saliency.moving();
    let statics = inp.saliency.statics();
    let virtuals: Vec<String> = set
        .object_ids()
        .into_iter()
        .filter(|id| set.kind_of(id) == Some(ObjectKind::Virtual))
        .collect();

    let mut nodes = Vec::new();
    for s in &statics {
        nodes.push(GraphNode { id: s.clone(), kind: NodeKind::Static, level: 0 });
    }
    for v in &virtuals {
        nodes.push(GraphNode { id: v.clone(), kind: NodeKind::Virtual, level: 0 });
    }
    for m in &movers {
        nodes.push(GraphNode { id: m.clone(), kind: NodeKind::Moving, level: 0 });
    }

    let mut edge_set: BTreeSet<(String, String)> = BTreeSet::new();
    for m in &movers {
        for s in &statics {
            edge_set.insert((s.clone(), m.clone()));
        }
        let v = virtual_id(m);
        if virtuals.contains(&v) {
            edge_set.insert((v, m.clone()));
        }
    }

    let anchors: Vec<String> = statics.iter().chain(&virtuals).cloned().collect();
    let mut ratios = Vec::new();
    for (i, a) in movers.iter().enumerate() {
        for b in &movers[i + 1..] {
            let mut close = 0;
            for demo in &set.demos {
                let (ta, tb) = (demo.track(a), demo.track(b));
                if let (Some(ta), Some(tb)) = (ta, tb) {
                    if final_min_distance(ta, tb) < inp.cfg.interaction_dist {
                        close += 1;
                    }
                }
            }
            if 2 * close <= set.demos.len() {
                continue;
            }
            let r = compute_invariance_ratios((a, b), &anchors, set, inp.saliency.scene_scale, inp.cfg, inp.masks)?;
            let master = resolve_master(&r).expect("non-empty ratios");
            let slave = if &master == a { b } else { a };
            edge_set.insert((master, slave.clone()));
            ratios.push(r);
        }
    }

    for (hand, obj) in inp.grasps {
        if !movers.contains(obj) && !statics.contains(obj) {
            continue;
        }
        nodes.push(GraphNode { id: hand.clone(), kind: NodeKind::Hand, level: 0 });
        edge_set.insert((obj.clone(), hand.clone()));
    }

    let mut graph = HmsrGraph {
        nodes,
        edges: edge_set
            .into_iter()
            .map(|(master, slave)| GraphEdge { master, slave, constraints: Vec::new(), vmps: Vec::new() })
            .collect(),
        coordination: None,
        meta: None,
    };
    graph.assign_levels()?;
    Ok((graph, ratios))
}

fn fit_vmps(trajectories: &[Vec<Vec<Point>>], n_basis: usize) -> Result<Vec<Vmp>> {
    trajectories
        .iter()
        .map(|per_demo| {
            let data: Vec<Vec<Vec<f64>>> = per_demo
                .iter()
                .map(|traj| traj.iter().map(|p| vec![p.x, p.y, p.z]).collect())
                .collect();
            Vmp::fit(&data, n_basis)
        })
        .collect()
}

/// Frame on `object` used for its own pose constraint: the frame of its
/// top-priority outgoing constraint, else its first candidate frame.
fn pose_frame(graph: &HmsrGraph, object: &str, set: &DemonstrationSet, tol: &ConstraintTolerances) -> Result<LocalFrame> {
    let best = graph
        .edges
        .iter()
        .filter(|e| e.master == object)
        .flat_map(|e| e.constraints.iter().map(move |c| (e, c)))
        .min_by(|(ea, a), (eb, b)| {
            let hand_a = graph.node(&ea.slave).is_some_and(|n| n.kind == NodeKind::Hand);
            let hand_b = graph.node(&eb.slave).is_some_and(|n| n.kind == NodeKind::Hand);
            hand_a
                .cmp(&hand_b)
                .then(a.priority.cmp(&b.priority))
                .then(a.residual_scale.total_cmp(&b.residual_scale))
                .then(a.frame.anchor_index.cmp(&b.frame.anchor_index))
        });
    if let Some((_, c)) = best {
        return Ok(c.frame.clone());
    }
    let track = set.tracks_of(object)?[0];
    Ok(candidate_local_frames(object, &track.canonical_points, 1, tol.n_neighbors, None)?.remove(0))
}

/// Pose constraint of `object` relative to its virtual copy, with its VMP.
fn pose_edge(
    object: &str,
    frame: &LocalFrame,
    set: &DemonstrationSet,
    n_basis: usize,
) -> Result<GraphEdge> {
    let vid = virtual_id(object);
    let mut vframe = frame.clone();
    vframe.master_id = vid.clone();
    let mut finals_t = Vec::new();
    let mut finals_r = Vec::new();
    let mut trajectories = Vec::new();
    for demo in &set.demos {
        let obj = demo
            .track(object)
            .ok_or_else(|| Error::Schema(format!("demo {}: no track {object}", demo.demo_id)))?;
        let virt = demo
            .track(&vid)
            .ok_or_else(|| Error::Schema(format!("demo {}: no track {vid}", demo.demo_id)))?;
        let anchor = vframe.pose_on(&virt.frame(0))?;
        let poses = frame_poses(frame, obj)?;
        let identity = Rotation3::identity();
        let mut traj = Vec::with_capacity(poses.len());
        for p in &poses {
            let t = anchor.to_local(&p.origin);
            let r = Rotation3::from_matrix_unchecked(anchor.rotation.transpose() * p.rotation);
            traj.push(pose_to_vec(&t, &r, &identity));
        }
        let last = poses.last().expect("non-empty track");
        finals_t.push(anchor.to_local(&last.origin));
        finals_r.push(Rotation3::from_matrix_unchecked(anchor.rotation.transpose() * last.rotation));
        trajectories.push(traj);
    }
    let (mean_t, cov) = mean_covariance(&finals_t);
    let mean_r = chordal_mean(&finals_r);
    let devs: Vec<f64> = finals_r.iter().map(|r| geodesic_distance(r, &mean_r)).collect();
    let target = PoseTarget {
        mean_translation: mean_t,
        translation_cov: cov,
        mean_rotation: *mean_r.matrix(),
        rotation_std: (devs.iter().map(|d| d * d).sum::<f64>() / devs.len() as f64).sqrt(),
        rotation_max_dev: devs.iter().copied().fold(0.0, f64::max),
    };
    let vmp = Vmp::fit(&trajectories, n_basis)?;
    Ok(GraphEdge {
        master: vid,
        slave: object.to_string(),
        constraints: vec![GeometricConstraint {
            kind: ConstraintKind::Pose,
            slave_id: object.to_string(),
            keypoint_index: frame.anchor_index,
            frame: vframe,
            params: ConstraintParams::Pose { target },
            residual_scale: cov.trace().max(0.0).sqrt(),
            priority: ConstraintKind::Pose.priority(),
        }],
        vmps: vec![vmp],
    })
}

/// Runs constraint extraction on every candidate edge, removes empty edges,
/// attaches pose constraints to movers left without a constrained master and
/// drops virtual nodes without outgoing edges.
pub fn truncate(graph: &HmsrGraph, inp: &GraphInputs<'_>, tol: &ConstraintTolerances) -> Result<HmsrGraph> {
    let set = inp.set;
    let mut edges = Vec::new();
    for e in &graph.edges {
        let found = extract_pair_constraints(
            &e.master,
            &e.slave,
            set,
            tol,
            PairMasks { master: inp.masks.get(&e.master), slave: inp.masks.get(&e.slave) },
        )?;
        if found.constraints.is_empty() {
            log::debug!("edge {} -> {} has no constraint; removed", e.master, e.slave);
            continue;
        }
        let vmps = fit_vmps(&found.trajectories, inp.vmp.n_basis)?;
        edges.push(GraphEdge {
            master: e.master.clone(),
            slave: e.slave.clone(),
            constraints: found.constraints,
            vmps,
        });
    }
    let mut out = HmsrGraph {
        nodes: graph.nodes.clone(),
        edges,
        coordination: None,
        meta: None,
    };
    let movers: Vec<String> = out
        .nodes
        .iter()
        .filter(|n| n.kind == NodeKind::Moving)
        .map(|n| n.id.clone())
        .collect();
    for m in movers {
        if !out.masters_of(&m).is_empty() {
            continue;
        }
        let frame = pose_frame(&out, &m, set, tol)?;
        let edge = pose_edge(&m, &frame, set, inp.vmp.n_basis)?;
        if out.node(&edge.master).is_none() {
            out.nodes.push(GraphNode { id: edge.master.clone(), kind: NodeKind::Virtual, level: 0 });
        }
        out.edges.push(edge);
    }
    let keep: BTreeSet<String> = out
        .nodes
        .iter()
        .filter(|n| n.kind != NodeKind::Virtual || out.edges.iter().any(|e| e.master == n.id))
        .map(|n| n.id.clone())
        .collect();
    out.nodes.retain(|n| keep.contains(&n.id));
    out.edges.retain(|e| keep.contains(&e.master) && keep.contains(&e.slave));
    out.edges.sort_by(|a, b| (&a.master, &a.slave).cmp(&(&b.master, &b.slave)));
    out.assign_levels()?;
    Ok(out)
}

/// Fraction of frames, inside the common grasp interval, in which the
/// inter-hand centroid distance is covered by a baseline change rate below
/// `thresh`.
fn steady_hand_fraction(
    set: &DemonstrationSet,
    hands: (&str, &str),
    object: &str,
    gcfg: &GraspDetectorConfig,
    thresh: f64,
) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for demo in &set.demos {
        let ga = detect_grasps(demo, hands.0, object, gcfg)?;
        let gb = detect_grasps(demo, hands.1, object, gcfg)?;
        let a = demo.track(hands.0).expect("grasp detection checked");
        let b = demo.track(hands.1).expect("grasp detection checked");
        let mut steady = BTreeSet::new();
        for x in ga.iter().filter(|g| g.firm) {
            for y in gb.iter().filter(|g| g.firm) {
                let s = x.interval[0].max(y.interval[0]);
                let e = x.interval[1].min(y.interval[1]);
                if e <= s {
                    continue;
                }
                let d: Vec<f64> =
                    (s..=e).map(|t| (centroid(&a.frame(t)) - centroid(&b.frame(t))).norm()).collect();
                for (j, r) in baseline_rates(&d, demo.dt).into_iter().enumerate() {
                    if r < thresh {
                        steady.extend(s + j..s + j + RATE_BASELINE.min(d.len() - 1));
                    }
                }
            }
        }
        out.push(steady.len() as f64 / demo.n_frames() as f64);
    }
    Ok(out)
}

/// Applies the coordination rules: symmetric, coupled, uncoordinated
/// bimanual, then unimanual when only one hand grasps.
pub fn classify_coordination(
    graph: &HmsrGraph,
    grasps: &BTreeMap<String, String>,
    set: &DemonstrationSet,
    gcfg: &GraspDetectorConfig,
    cfg: &HmsrConfig,
) -> Result<Coordination> {
    let active: Vec<(&String, &String)> = grasps.iter().collect();
    match active.as_slice() {
        [] => Err(Error::NoManipulation),
        [(h, o)] => Ok(Coordination {
            value: CoordinationStrategy::UncoordinatedUnimanual,
            evidence: format!("single grasp: {h} holds {o}"),
        }),
        [(ha, oa), (hb, ob), ..] => {
            if oa == ob {
                let fractions = steady_hand_fraction(set, (ha, hb), oa, gcfg, cfg.sym_rate_thresh)?;
                let min = fractions.iter().copied().fold(f64::INFINITY, f64::min);
                if min >= cfg.sym_window {
                    return Ok(Coordination {
                        value: CoordinationStrategy::TightlyCoupledSymmetric,
                        evidence: format!(
                            "symmetric: {ha} and {hb} both hold {oa}; inter-hand distance steady for >= {:.0}% of every demo (min {:.0}%)",
                            100.0 * cfg.sym_window,
                            100.0 * min
                        ),
                    });
                }
                return Ok(Coordination {
                    value: CoordinationStrategy::LooselyCoupled,
                    evidence: format!(
                        "coupled: {ha} and {hb} share {oa} but inter-hand distance is steady for only {:.0}% in some demo",
                        100.0 * min
                    ),
                });
            }
            let linked = graph
                .edges
                .iter()
                .any(|e| (e.master == **oa && e.slave == **ob) || (e.master == **ob && e.slave == **oa));
            if linked {
                return Ok(Coordination {
                    value: CoordinationStrategy::LooselyCoupled,
                    evidence: format!("coupled: constraint edge between {oa} ({ha}) and {ob} ({hb})"),
                });
            }
            let ma: BTreeSet<&str> = graph.masters_of(oa).into_iter().collect();
            let mb: BTreeSet<&str> = graph.masters_of(ob).into_iter().collect();
            if let Some(shared) = ma.intersection(&mb).next() {
                return Ok(Coordination {
                    value: CoordinationStrategy::LooselyCoupled,
                    evidence: format!("coupled: {oa} ({ha}) and {ob} ({hb}) share master {shared}"),
                });
            }
            Ok(Coordination {
                value: CoordinationStrategy::UncoordinatedBimanual,
                evidence: format!(
                    "uncoordinated: {ha} holds {oa}, {hb} holds {ob}; no edge and no shared master"
                ),
            })
        }
    }
}

/// Converts a rotation matrix stored in a pose target back into a rotation.
pub fn target_rotation(m: &Matrix3<f64>) -> Rotation3<f64> {
    crate::math::project_to_so3(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ratios(entries: &[(&str, &str, f64, f64)]) -> InvarianceRatios {
        InvarianceRatios {
            pair: ("a".into(), "b".into()),
            entries: entries
                .iter()
                .map(|(s, l, p, o)| RatioEntry { static_id: s.to_string(), object_id: l.to_string(), r_p: *p, r_o: *o })
                .collect(),
        }
    }

    #[test]
    fn resolve_picks_joint_minimum() {
        let r = ratios(&[("table", "kettle", 0.1, 0.2), ("table", "cup", 0.3, 0.01)]);
        assert_eq!(resolve_master(&r).unwrap(), "cup");
    }

    #[test]
    fn resolve_ties_use_sum_then_id() {
        let r = ratios(&[("t", "b", 0.1, 0.1), ("t", "a", 0.1, 0.1)]);
        assert_eq!(resolve_master(&r).unwrap(), "a");
        let r = ratios(&[("t", "a", 0.1, 0.5), ("t", "b", 0.1, 0.2)]);
        assert_eq!(resolve_master(&r).unwrap(), "b");
    }

    #[test]
    fn resolve_single_entry() {
        assert_eq!(resolve_master(&ratios(&[("t", "z", 0.4, 0.4)])).unwrap(), "z");
    }

    #[test]
    fn resolve_is_scale_invariant() {
        let e = [("t", "a", 0.2, 0.31), ("t", "b", 0.25, 0.19), ("u", "a", 0.4, 0.22)];
        let scaled: Vec<(&str, &str, f64, f64)> = e.iter().map(|(s, l, p, o)| (*s, *l, p * 0.37, o * 0.37)).collect();
        assert_eq!(resolve_master(&ratios(&e)), resolve_master(&ratios(&scaled)));
    }

    #[test]
    fn cycle_is_reported() {
        let node = |id: &str| GraphNode { id: id.into(), kind: NodeKind::Moving, level: 0 };
        let edge = |m: &str, s: &str| GraphEdge { master: m.into(), slave: s.into(), constraints: vec![], vmps: vec![] };
        let mut g = HmsrGraph {
            nodes: vec![node("a"), node("b"), node("c")],
            edges: vec![edge("a", "b"), edge("b", "c")],
            coordination: None,
            meta: None,
        };
        g.assign_levels().unwrap();
        assert_eq!(g.node("c").unwrap().level, 2);
        g.edges.push(edge("c", "a"));
        assert!(matches!(g.assign_levels(), Err(Error::Internal(_))));
    }

    #[test]
    fn zero_grasps_is_no_manipulation() {
        let g = HmsrGraph { nodes: vec![], edges: vec![], coordination: None, meta: None };
        let set = DemonstrationSet { task_name: "t".into(), demos: vec![], categories: vec![] };
        let err = classify_coordination(&g, &BTreeMap::new(), &set, &Default::default(), &Default::default()).unwrap_err();
        assert_eq!(err.to_string(), "no manipulation detected");
    }
}
