//! Fragment construction, fragment registration and the end-to-end
//! reconstruction driver.

use nalgebra::{Isometry3, Matrix6};
use serde::{Deserialize, Serialize};

use super::features::{rough_align, FeatureParams};
use super::mesh::extract_mesh;
use super::odometry::{icp_point_sets, odometry_levels, Level, Odometry, OdometryParams, PointSet};
use super::posegraph::{optimize_posegraph, EdgeKind, OptimizeParams, PoseEdge, PoseGraph};
use super::tsdf::{integrate_tsdf, TsdfConfig};
use super::RgbdFrame;
use crate::exec::ExecMode;
use crate::formats::Mesh;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconConfig {
    pub fragment_size: usize,
    /// Every this many frames is a keyframe for intra-fragment loops.
    pub keyframe_interval: usize,
    pub odometry: OdometryParams,
    pub features: FeatureParams,
    pub tsdf: TsdfConfig,
    pub optimize: OptimizeParams,
    /// Point spacing of fragment clouds for registration (meters).
    pub registration_voxel: f64,
    /// Correspondence gate of the first registration pass (meters).
    pub registration_distance: f64,
    /// Correspondence gate of the refinement pass (meters).
    pub refine_distance: f64,
    /// Minimum fitness of an accepted fragment loop closure.
    pub loop_fitness: f64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            fragment_size: 50,
            keyframe_interval: 5,
            odometry: OdometryParams::default(),
            features: FeatureParams::default(),
            tsdf: TsdfConfig::default(),
            optimize: OptimizeParams::default(),
            registration_voxel: 0.05,
            registration_distance: 0.1,
            refine_distance: 0.03,
            loop_fitness: 0.3,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fragment_size == 0 || self.keyframe_interval == 0 {
            return Err(Error::Config("fragment size and keyframe interval must be positive".into()));
        }
        if !(self.tsdf.voxel_size > 0.0 && self.registration_voxel > 0.0) {
            return Err(Error::Config("voxel sizes must be positive".into()));
        }
        Ok(())
    }
}

/// A contiguous run of frames with a locally consistent trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Fragment {
    /// Frame range `[start, end)`.
    pub start: usize,
    pub end: usize,
    /// Local pose graph; node `k` is frame `start + k`.
    pub graph: PoseGraph,
    /// Optimized `fragment_from_frame` poses (first is identity).
    pub poses: Vec<Isometry3<f64>>,
    /// Mesh fused from the fragment's frames, in fragment coordinates.
    pub mesh: Mesh,
    /// `world_from_fragment`, chained from odometry until registration.
    pub world_pose: Isometry3<f64>,
    pub warnings: Vec<String>,
}

impl Fragment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

fn levels(frame: &RgbdFrame, p: &OdometryParams) -> Vec<Level> {
    p.strides.iter().map(|&s| Level::new(frame, s, p.max_depth)).collect()
}

/// Odometry `a_from_b`, first from `init`, then from a feature-based guess.
fn align_pair(a: &RgbdFrame, b: &RgbdFrame, la: &[Level], lb: &[Level], init: &Isometry3<f64>, cfg: &ReconConfig) -> Result<Odometry> {
    let lv: Vec<(&Level, &Level)> = la.iter().zip(lb).collect();
    let run = |init: &Isometry3<f64>| odometry_levels(&lv, init, &cfg.odometry);
    let first = run(init);
    if first.is_ok() {
        return first;
    }
    match rough_align(a, b, &cfg.features) {
        Ok(al) => run(&al.pose).or(first),
        Err(_) => first,
    }
}

/// Split frames into fragments and build each one's local pose graph,
/// trajectory and mesh.
pub fn build_fragments(frames: &[RgbdFrame], cfg: &ReconConfig, mode: ExecMode) -> Result<Vec<Fragment>> {
    cfg.validate()?;
    if frames.is_empty() {
        return Err(Error::Validation("no frames to reconstruct".into()));
    }
    let pyr: Vec<Vec<Level>> = mode.map(frames, |f| levels(f, &cfg.odometry));
    // odo[i] aligns frame i+1 into frame i.
    let odo: Vec<Result<Odometry>> = mode.map_range(frames.len() - 1, |i| {
        align_pair(&frames[i], &frames[i + 1], &pyr[i], &pyr[i + 1], &Isometry3::identity(), cfg)
    });

    let mut ranges = Vec::new();
    let mut start = 0;
    for i in 1..=frames.len() {
        let broken = i < frames.len() && odo[i - 1].is_err();
        if i == frames.len() || broken || i - start == cfg.fragment_size {
            ranges.push((start, i, broken));
            start = i;
        }
    }

    let built: Vec<Result<Fragment>> = mode.map(&ranges, |&(s, e, broken)| {
        let mut warnings = Vec::new();
        if broken {
            warnings.push(format!("tracking lost after frame {}; fragment split", e - 1));
        }
        let mut graph = PoseGraph { nodes: vec![Isometry3::identity()], edges: vec![] };
        for (i, o) in odo.iter().enumerate().take(e - 1).skip(s) {
            let o = o.as_ref().expect("no break inside a fragment");
            let prev = *graph.nodes.last().expect("non-empty");
            graph.nodes.push(prev * o.pose);
            graph.edges.push(PoseEdge { i: i - s, j: i + 1 - s, measurement: o.pose, information: o.information, kind: EdgeKind::Odometry });
        }
        let keys: Vec<usize> = (s..e).filter(|i| (i - s) % cfg.keyframe_interval == 0).collect();
        for (ai, &ka) in keys.iter().enumerate() {
            for &kb in &keys[ai + 1..] {
                if kb == ka + 1 {
                    continue;
                }
                let chained = graph.nodes[ka - s].inverse() * graph.nodes[kb - s];
                let lv: Vec<(&Level, &Level)> = pyr[ka].iter().zip(&pyr[kb]).collect();
                let mut best = odometry_levels(&lv, &chained, &cfg.odometry).ok();
                if let Ok(al) = rough_align(&frames[ka], &frames[kb], &cfg.features) {
                    if let Ok(o) = odometry_levels(&lv, &al.pose, &cfg.odometry) {
                        if best.as_ref().is_none_or(|b| o.fitness > b.fitness) {
                            best = Some(o);
                        }
                    }
                }
                if let Some(o) = best {
                    graph.edges.push(PoseEdge { i: ka - s, j: kb - s, measurement: o.pose, information: o.information, kind: EdgeKind::Loop });
                }
            }
        }
        let poses = optimize_posegraph(&graph, &cfg.optimize)?.poses;
        let vol = integrate_tsdf(&frames[s..e], &poses, &cfg.tsdf, ExecMode::Sequential)?;
        Ok(Fragment { start: s, end: e, graph, poses, mesh: extract_mesh(&vol), world_pose: Isometry3::identity(), warnings })
    });
    let mut fragments: Vec<Fragment> = built.into_iter().collect::<Result<_>>()?;

    // Chain world poses through the odometry between fragments.
    for k in 1..fragments.len() {
        let (prev, cur) = (&fragments[k - 1], &fragments[k]);
        let last = *prev.poses.last().expect("non-empty");
        let link = match &odo[cur.start - 1] {
            Ok(o) => o.pose,
            Err(_) => Isometry3::identity(),
        };
        fragments[k].world_pose = fragments[k - 1].world_pose * last * link;
    }
    Ok(fragments)
}

fn bounds_overlap(a: &PointSet, ta: &Isometry3<f64>, b: &PointSet, tb: &Isometry3<f64>) -> bool {
    match (a.transformed(ta).bounds(), b.transformed(tb).bounds()) {
        (Some((alo, ahi)), Some((blo, bhi))) => (0..3).all(|k| alo[k] <= bhi[k] && blo[k] <= ahi[k]),
        _ => false,
    }
}

/// Pose graph over fragments: odometry edges between consecutive fragments
/// and ICP-verified loop closures between spatially overlapping ones.
pub fn register_fragments(fragments: &[Fragment], cfg: &ReconConfig, mode: ExecMode) -> Result<PoseGraph> {
    if fragments.is_empty() {
        return Err(Error::Contract("no fragments to register".into()));
    }
    let coarse: Vec<PointSet> = mode.map(fragments, |f| PointSet::from_mesh(&f.mesh).downsample(cfg.registration_voxel));
    let fine: Vec<PointSet> = mode.map(fragments, |f| PointSet::from_mesh(&f.mesh).downsample(cfg.tsdf.voxel_size));
    let nodes: Vec<Isometry3<f64>> = fragments.iter().map(|f| f.world_pose).collect();
    let mut graph = PoseGraph { nodes: nodes.clone(), edges: vec![] };

    let mut pairs = Vec::new();
    for k in 0..fragments.len() {
        for l in k + 1..fragments.len() {
            let consecutive = l == k + 1 && fragments[k].end == fragments[l].start && fragments[l].warnings.is_empty();
            if consecutive || bounds_overlap(&coarse[k], &nodes[k], &coarse[l], &nodes[l]) {
                pairs.push((k, l, consecutive));
            }
        }
    }
    let results: Vec<Option<PoseEdge>> = mode.map(&pairs, |&(k, l, consecutive)| {
        let init = nodes[k].inverse() * nodes[l];
        if consecutive {
            // Keep the composed frame odometry; weigh it by how well the
            // fragment clouds agree at that pose.
            let eval = icp_point_sets(&fine[l], &fine[k], &init, cfg.refine_distance, 0);
            let information = if eval.inliers >= 6 { eval.information } else { Matrix6::identity() };
            return Some(PoseEdge { i: k, j: l, measurement: init, information, kind: EdgeKind::Odometry });
        }
        let first = icp_point_sets(&coarse[l], &coarse[k], &init, cfg.registration_distance, 30);
        if first.fitness < cfg.loop_fitness {
            return None;
        }
        let refined = icp_point_sets(&fine[l], &fine[k], &first.pose, cfg.refine_distance, 30);
        let o = if refined.fitness >= cfg.loop_fitness { refined } else { first };
        Some(PoseEdge { i: k, j: l, measurement: o.pose, information: o.information * o.fitness, kind: EdgeKind::Loop })
    });
    graph.edges = results.into_iter().flatten().collect();
    Ok(graph)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconReport {
    pub frames: usize,
    pub fragments: usize,
    pub odometry_edges: usize,
    pub loop_edges: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub mesh_vertices: usize,
    pub mesh_triangles: usize,
    pub tracking_lost: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconOutput {
    pub mesh: Mesh,
    /// `world_from_camera` per frame; the first fragment's first frame is
    /// the origin.
    pub trajectory: Vec<Isometry3<f64>>,
    pub fragments: Vec<Fragment>,
    pub report: ReconReport,
}

/// Full pipeline: fragments, registration, global optimization, fusion and
/// mesh extraction.
pub fn reconstruct(frames: &[RgbdFrame], cfg: &ReconConfig, mode: ExecMode) -> Result<ReconOutput> {
    let fragments = build_fragments(frames, cfg, mode)?;
    let graph = register_fragments(&fragments, cfg, mode)?;
    let opt = optimize_posegraph(&graph, &cfg.optimize)?;
    let mut trajectory = Vec::with_capacity(frames.len());
    for (f, world) in fragments.iter().zip(&opt.poses) {
        trajectory.extend(f.poses.iter().map(|p| world * p));
    }
    let vol = integrate_tsdf(frames, &trajectory, &cfg.tsdf, mode)?;
    let mesh = extract_mesh(&vol);
    let warnings: Vec<String> = fragments.iter().flat_map(|f| f.warnings.iter().cloned()).collect();
    let report = ReconReport {
        frames: frames.len(),
        fragments: fragments.len(),
        odometry_edges: graph.count(EdgeKind::Odometry),
        loop_edges: graph.count(EdgeKind::Loop),
        initial_cost: opt.initial_cost,
        final_cost: opt.final_cost,
        mesh_vertices: mesh.vertices.len(),
        mesh_triangles: mesh.triangles.len(),
        tracking_lost: !warnings.is_empty(),
        warnings,
    };
    Ok(ReconOutput { mesh, trajectory, fragments, report })
}
