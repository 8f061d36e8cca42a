//! End-to-end extraction: preprocess, saliency, virtual objects, grasps,
//! candidate graph, truncation with VMP fits, and coordination.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::{debug, info};

use crate::config::PipelineConfig;
use crate::error::Result;
use crate::hmsr::{
    build_candidate_graph, classify_coordination, truncate, GraphInputs, GraphMeta, HmsrGraph, InvarianceRatios,
};
use crate::saliency::{create_virtual_objects, grasp_assignments, motion_saliency, SaliencyReport};
use crate::trajdata::{map_tracks, outlier_mask, resample_time, savitzky_golay_smooth, DemonstrationSet};

#[derive(Clone, Debug)]
pub struct Extraction {
    pub graph: HmsrGraph,
    pub saliency: SaliencyReport,
    /// Hand id to firmly grasped moving object.
    pub grasps: BTreeMap<String, String>,
    pub ratios: Vec<InvarianceRatios>,
}

/// Resampling and Savitzky-Golay smoothing of every track.
pub fn preprocess(set: &DemonstrationSet, cfg: &PipelineConfig) -> Result<DemonstrationSet> {
    let mut set = set.clone();
    if let Some(t) = cfg.preprocess.resample {
        for demo in &mut set.demos {
            *demo = resample_time(demo, t)?;
        }
    }
    map_tracks(&set, |track| savitzky_golay_smooth(track, cfg.preprocess.sg_window, cfg.preprocess.sg_polyorder))
}

pub fn extract(raw: &DemonstrationSet, cfg: &PipelineConfig) -> Result<Extraction> {
    cfg.validate()?;
    raw.validate()?;
    let masks = outlier_mask(raw, cfg.preprocess.outlier_z)?;
    for (id, m) in masks.iter().filter(|(_, m)| !m.is_empty()) {
        debug!("{id}: {} outlier points masked", m.len());
    }
    let smooth = preprocess(raw, cfg)?;
    let saliency = motion_saliency(&smooth, cfg.saliency.rel_thresh)?;
    info!("moving objects: {:?}, static: {:?}", saliency.moving(), saliency.statics());
    let set = create_virtual_objects(&smooth, &saliency);
    // grasps on static objects carry no manipulation
    let grasps: BTreeMap<String, String> = grasp_assignments(&smooth, &cfg.grasp)?
        .into_iter()
        .filter(|(_, obj)| !saliency.is_static(obj))
        .collect();
    info!("grasps: {grasps:?}");
    let inputs = GraphInputs {
        set: &set,
        saliency: &saliency,
        grasps: &grasps,
        masks: &masks,
        cfg: &cfg.hmsr,
        vmp: &cfg.vmp,
    };
    let (candidate, ratios) = build_candidate_graph(&inputs)?;
    debug!("candidate graph has {} edges", candidate.edges.len());
    let mut graph = truncate(&candidate, &inputs, &cfg.geomcon)?;
    graph.coordination = Some(classify_coordination(&graph, &grasps, &smooth, &cfg.grasp, &cfg.hmsr)?);
    let mut categories = BTreeMap::new();
    for t in &set.demos[0].tracks {
        categories.insert(t.object_id.clone(), t.category.clone());
    }
    graph.meta = Some(GraphMeta {
        task_name: raw.task_name.clone(),
        n_demos: raw.demos.len(),
        config: cfg.clone(),
        end_pose_window: format!("final {:.0}% of frames", 100.0 * cfg.hmsr.end_fraction),
        ratios: ratios.clone(),
        grasps: grasps.clone(),
        categories,
    });
    Ok(Extraction { graph, saliency, grasps, ratios })
}

/// Aligned human-readable summary of an extracted graph.
pub fn report(graph: &HmsrGraph) -> String {
    let mut out = String::new();
    let w = graph
        .edges
        .iter()
        .map(|e| e.master.len().max(e.slave.len()))
        .max()
        .unwrap_or(6)
        .max(6);
    let _ = writeln!(out, "{:<w$}  {:<w$}  constraints", "master", "slave");
    for e in &graph.edges {
        let kinds: Vec<String> = e
            .constraints
            .iter()
            .map(|c| format!("{}@{}", c.kind.tag(), c.keypoint_index))
            .collect();
        let _ = writeln!(out, "{:<w$}  {:<w$}  {}", e.master, e.slave, kinds.join(" "));
    }
    if let Some(c) = &graph.coordination {
        let value = serde_json::to_value(c.value).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        let _ = writeln!(out, "coordination: {value}");
        let _ = writeln!(out, "evidence: {}", c.evidence);
    }
    out
}
