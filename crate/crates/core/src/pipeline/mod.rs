//! Config-driven dataset generation and bookkeeping.
//!
//! Layout under the output root:
//!
//! ```text
//! manifest.json
//! <method>/<action>/<subject>_<k>.clip   rendered frames + provenance
//! <method>/<action>/<subject>_<k>.json   provenance, pretty-printed
//! <method>/<action>/<subject>_<k>.flow   normalized TV-L1 flow
//! ```
//!
//! Every clip is a pure function of the config and its tuple seed, so runs
//! are byte-reproducible. An existing clip whose stored provenance matches
//! is reused instead of re-rendered, which makes interrupted runs resumable.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{AssetPaths, EnvironmentAsset, PipelineConfig, OUTPUT_ROOT_ENV};

use crate::augment::{clip_seed, realize, sample_spec, AssetBundle, AugmentSpec, Environment, SampleSpace};
use crate::body::{body_height, lbs_pose, parse_rig_json, procedural_take, Humanoid, DEFAULT_TAKE_FRAMES};
use crate::exec::ExecMode;
use crate::fixtures::{living_room, placeholder_backgrounds};
use crate::flow::{clip_flow, FlowParams};
use crate::formats::{
    parse_motion_take, parse_obj, parse_ply, read_clip, read_clip_header, read_flow, read_png_rgb, write_clip, write_flow, ActionLabel, Manifest,
    ManifestEntry, ManifestError, Method, MotionTake,
};
use crate::geom::yaw;
use crate::preprocess::NormalizedClip;
use crate::raster::render_clip;
use crate::scene::{NodeRole, SceneNode};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Id under which the procedural room stands in for reconstructed scenes
/// when none are configured.
pub const FALLBACK_RECON_SCENE: &str = "fixture_room";

/// One clip of the dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipTask {
    pub subject: String,
    pub action: ActionLabel,
    pub method: Method,
    pub k: usize,
    pub seed: u64,
    /// Clip path relative to the output root, `/`-separated.
    pub path: String,
}

impl ClipTask {
    pub fn flow_path(&self) -> String {
        sibling(&self.path, "flow")
    }

    pub fn provenance_path(&self) -> String {
        sibling(&self.path, "json")
    }
}

fn sibling(clip_path: &str, ext: &str) -> String {
    let stem = clip_path.strip_suffix(".clip").unwrap_or(clip_path);
    format!("{stem}.{ext}")
}

pub fn clip_path(method: Method, action: ActionLabel, subject: &str, k: usize) -> String {
    format!("{}/{}/{subject}_{k}.clip", method.slug(), action.as_str())
}

/// Every clip of a run, ordered by method, action, subject and index.
pub fn plan(cfg: &PipelineConfig) -> Vec<ClipTask> {
    let mut tasks = Vec::with_capacity(cfg.clip_count());
    for &method in &cfg.methods {
        for &action in &cfg.actions {
            for subject in &cfg.subjects {
                for k in 0..cfg.clips_per_action {
                    tasks.push(ClipTask {
                        subject: subject.clone(),
                        action,
                        method,
                        k,
                        seed: clip_seed(cfg.master_seed, subject, action, method, k),
                        path: clip_path(method, action, subject, k),
                    });
                }
            }
        }
    }
    tasks
}

/// Sample the spec of every planned clip without loading assets or
/// rendering anything.
pub fn plan_specs(cfg: &PipelineConfig, space: &SampleSpace) -> Result<Vec<(ClipTask, AugmentSpec)>> {
    plan(cfg)
        .into_iter()
        .map(|t| {
            let spec = sample_spec(t.method, t.seed, space)?;
            Ok((t, spec))
        })
        .collect()
}

/// The sample space a run will use, from the config alone.
pub fn config_sample_space(cfg: &PipelineConfig) -> SampleSpace {
    let mut ids: Vec<String> = cfg.assets.recon_scenes.keys().cloned().collect();
    if ids.is_empty() {
        ids.push(FALLBACK_RECON_SCENE.to_string());
    }
    SampleSpace { recon_scenes: ids }
}

/// Loaded assets plus where per-subject takes come from.
#[derive(Debug, Clone)]
pub struct Assets {
    pub bundle: AssetBundle,
    motion_dir: Option<PathBuf>,
}

/// Motion amplitude/tempo variation of a subject's procedural takes.
pub fn subject_variation(subject: &str) -> f64 {
    let d = Sha256::digest(subject.as_bytes());
    (u64::from_le_bytes(d[..8].try_into().expect("8 bytes")) >> 11) as f64 / (1u64 << 53) as f64
}

impl Assets {
    pub fn take(&self, subject: &str, action: ActionLabel) -> Result<MotionTake> {
        match &self.motion_dir {
            Some(dir) => {
                let path = dir.join(subject).join(format!("{}.json", action.as_str()));
                let bytes = fs::read(&path).map_err(|_| Error::MissingAsset(format!("motion take {}", path.display())))?;
                let take = parse_motion_take(&bytes)?;
                if take.label != action {
                    return Err(Error::Validation(format!("{} is labelled {}, expected {action}", path.display(), take.label)));
                }
                Ok(take)
            }
            None => Ok(procedural_take(&self.bundle.body.rig, action, DEFAULT_TAKE_FRAMES, subject_variation(subject), subject)),
        }
    }
}

fn read_asset(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::MissingAsset(format!("{}: {e}", path.display())))
}

/// Load an environment mesh as a single scene node at its anchor.
pub fn load_environment(cfg: &PipelineConfig, asset: &EnvironmentAsset) -> Result<Environment> {
    let path = cfg.resolve(&asset.mesh);
    let bytes = read_asset(&path)?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default().to_ascii_lowercase();
    let mesh = match ext.as_str() {
        "obj" => parse_obj(&bytes)?,
        "ply" => parse_ply(&bytes)?,
        _ => return Err(Error::Unsupported(format!("environment mesh {} (expected .obj or .ply)", path.display()))),
    };
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("environment");
    let mut node = SceneNode::new(name, Arc::new(mesh), NodeRole::Environment);
    node.albedo = [1.0; 3];
    node.colorable = asset.colorable;
    if let Some(t) = &asset.texture {
        node.texture = Some(Arc::new(read_png_rgb(&cfg.resolve(t))?));
    }
    if asset.cv_frame {
        // Camera frames have Y down and Z forward; turn them Y up.
        node.transform = nalgebra::Matrix4::from_diagonal(&nalgebra::Vector4::new(1.0, -1.0, -1.0, 1.0));
    }
    let [x, y, z] = asset.anchor;
    let anchor = nalgebra::Isometry3::from_parts(nalgebra::Translation3::new(x, y, z), yaw(asset.yaw_deg));
    Ok(Environment { nodes: vec![node], anchor })
}

pub fn load_assets(cfg: &PipelineConfig) -> Result<Assets> {
    let a = &cfg.assets;
    let body = match &a.body {
        Some(p) => parse_rig_json(&read_asset(&cfg.resolve(p))?)?,
        None => Humanoid::build().body,
    };
    let backgrounds = if a.backgrounds.is_empty() {
        placeholder_backgrounds()
    } else {
        a.backgrounds.iter().map(|p| read_png_rgb(&cfg.resolve(p)).map(Arc::new)).collect::<Result<_>>()?
    };
    let room = Some(match &a.environment {
        Some(env) => load_environment(cfg, env)?,
        None => living_room(),
    });
    let mut recon_scenes = BTreeMap::new();
    for (id, env) in &a.recon_scenes {
        recon_scenes.insert(id.clone(), load_environment(cfg, env)?);
    }
    if recon_scenes.is_empty() && cfg.methods.contains(&Method::ReconRotate) {
        log::warn!("no reconstructed scenes configured; R3D+R uses the procedural room as `{FALLBACK_RECON_SCENE}`");
        recon_scenes.insert(FALLBACK_RECON_SCENE.to_string(), living_room());
    }
    Ok(Assets {
        bundle: AssetBundle { body, backgrounds, room, recon_scenes, scene: cfg.scene.clone() },
        motion_dir: a.motion_dir.as_ref().map(|p| cfg.resolve(p)),
    })
}

/// What went into a clip; stored in its header and as a sidecar file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub subject: String,
    pub action: ActionLabel,
    pub method: Method,
    pub clip_index: usize,
    pub spec: AugmentSpec,
    pub body_height: f64,
    pub take_frames: usize,
    pub take_fps: f64,
    pub resolution: u32,
    pub fps: u32,
    pub supersample: bool,
}

/// Write through a temporary sibling and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(Error::io_at(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(Error::io_at(&tmp))?;
    f.write_all(bytes).map_err(Error::io_at(&tmp))?;
    f.sync_all().map_err(Error::io_at(&tmp))?;
    fs::rename(&tmp, path).map_err(Error::io_at(path))
}

/// Outcome of one clip task.
enum Outcome {
    Rendered(ManifestEntry),
    Reused(ManifestEntry),
}

fn run_task(task: &ClipTask, cfg: &PipelineConfig, assets: &Assets, root: &Path) -> Result<Outcome> {
    let take = assets.take(&task.subject, task.action)?;
    let spec = sample_spec(task.method, task.seed, &assets.bundle.sample_space())?;
    let first = take.frames.first().ok_or_else(|| Error::Validation(format!("take for {} / {} is empty", task.subject, task.action)))?;
    let prov = Provenance {
        subject: task.subject.clone(),
        action: task.action,
        method: task.method,
        clip_index: task.k,
        spec: spec.clone(),
        body_height: body_height(&lbs_pose(&assets.bundle.body, first)?)?,
        take_frames: take.frames.len(),
        take_fps: take.fps,
        resolution: cfg.render.resolution,
        fps: cfg.render.fps,
        supersample: cfg.render.supersample,
    };
    let prov_text = serde_json::to_string(&prov)?;
    let clip_file = root.join(&task.path);
    let flow_file = root.join(task.flow_path());
    let entry = |frames: usize| ManifestEntry {
        path: task.path.clone(),
        label: task.action,
        method: task.method,
        subject_id: task.subject.clone(),
        clip_index: task.k as u32,
        seed: task.seed,
        frame_count: frames as u32,
        flow_path: flow_file.exists().then(|| task.flow_path()),
    };
    if let Ok(f) = fs::File::open(&clip_file) {
        if let Ok(h) = read_clip_header(std::io::BufReader::new(f)) {
            if h.provenance == prov_text && h.label == task.action {
                return Ok(Outcome::Reused(entry(h.frame_count as usize)));
            }
        }
    }
    let real = realize(&spec, &assets.bundle, &take, cfg.render.fps, ExecMode::Sequential)?;
    let clip = render_clip(&real.scenes, task.action, &prov_text, &cfg.render, ExecMode::Sequential)?;
    let mut bytes = Vec::new();
    write_clip(&clip, &mut bytes)?;
    // A flow computed from an older clip no longer applies.
    if flow_file.exists() {
        fs::remove_file(&flow_file).map_err(Error::io_at(&flow_file))?;
    }
    write_atomic(&clip_file, &bytes)?;
    let mut side = serde_json::to_vec_pretty(&prov)?;
    side.push(b'\n');
    write_atomic(&root.join(task.provenance_path()), &side)?;
    Ok(Outcome::Rendered(entry(clip.frames.len())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateReport {
    pub manifest: Manifest,
    pub rendered: usize,
    pub reused: usize,
    pub failed: usize,
}

/// Run `f` on a pool of `threads` workers (0: the global pool).
fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if threads > 0 {
        match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => return pool.install(f),
            Err(e) => log::warn!("could not build a {threads}-thread pool: {e}"),
        }
    }
    let _ = threads;
    f()
}

pub fn manifest_path(root: &Path) -> PathBuf {
    root.join(MANIFEST_FILE)
}

pub fn load_manifest(root: &Path) -> Result<Manifest> {
    let p = manifest_path(root);
    Manifest::from_json(&fs::read(&p).map_err(Error::io_at(&p))?)
}

pub fn save_manifest(root: &Path, manifest: &Manifest) -> Result<()> {
    write_atomic(&manifest_path(root), &manifest.to_json()?)
}

/// Render every planned clip that is not already on disk, then write the
/// manifest. Clip failures are recorded in the manifest, not raised.
pub fn generate(cfg: &PipelineConfig) -> Result<GenerateReport> {
    cfg.validate()?;
    let assets = load_assets(cfg)?;
    generate_with(cfg, &assets)
}

pub fn generate_with(cfg: &PipelineConfig, assets: &Assets) -> Result<GenerateReport> {
    let root = cfg.output_dir();
    fs::create_dir_all(&root).map_err(Error::io_at(&root))?;
    let tasks = plan(cfg);
    let results = with_threads(cfg.threads, || cfg.exec.map(&tasks, |t| run_task(t, cfg, assets, &root)));
    // Keep weights set on an earlier manifest.
    let weights = match load_manifest(&root) {
        Ok(m) => m.weights,
        Err(_) => Default::default(),
    };
    let mut manifest = Manifest { weights, ..Default::default() };
    let (mut rendered, mut reused) = (0, 0);
    for (task, r) in tasks.iter().zip(results) {
        match r {
            Ok(Outcome::Rendered(e)) => {
                rendered += 1;
                manifest.entries.push(e);
            }
            Ok(Outcome::Reused(e)) => {
                reused += 1;
                manifest.entries.push(e);
            }
            Err(e) => {
                log::error!("{}: {e}", task.path);
                manifest.errors.push(ManifestError { path: task.path.clone(), message: e.to_string() });
            }
        }
    }
    manifest.entries.sort_by(|a, b| a.path.cmp(&b.path));
    manifest.errors.sort_by(|a, b| a.path.cmp(&b.path));
    save_manifest(&root, &manifest)?;
    let failed = manifest.errors.len();
    Ok(GenerateReport { manifest, rendered, reused, failed })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FlowReport {
    pub computed: usize,
    pub reused: usize,
    pub failed: usize,
}

/// Compute the flow container of every manifest entry that lacks one and
/// record it. Failures land in `manifest.errors`.
pub fn compute_flows(root: &Path, manifest: &mut Manifest, params: &FlowParams, mode: ExecMode) -> Result<FlowReport> {
    params.validate()?;
    let jobs: Vec<(String, String)> = manifest.entries.iter().map(|e| (e.path.clone(), sibling(&e.path, "flow"))).collect();
    let results = mode.map(&jobs, |(clip_rel, flow_rel)| -> Result<bool> {
        let flow_file = root.join(flow_rel);
        if flow_file.exists() {
            return Ok(false);
        }
        let clip_file = root.join(clip_rel);
        let clip = read_clip(std::io::BufReader::new(fs::File::open(&clip_file).map_err(Error::io_at(&clip_file))?))?;
        let seq = clip_flow(&clip, params, mode)?;
        let mut bytes = Vec::new();
        write_flow(&seq, &mut bytes)?;
        write_atomic(&flow_file, &bytes)?;
        Ok(true)
    });
    let mut report = FlowReport::default();
    manifest.errors.retain(|e| !e.message.starts_with("flow: "));
    for ((entry, (_, flow_rel)), r) in manifest.entries.iter_mut().zip(&jobs).zip(results) {
        match r {
            Ok(computed) => {
                if computed {
                    report.computed += 1;
                } else {
                    report.reused += 1;
                }
                entry.flow_path = Some(flow_rel.clone());
            }
            Err(e) => {
                report.failed += 1;
                entry.flow_path = None;
                manifest.errors.push(ManifestError { path: entry.path.clone(), message: format!("flow: {e}") });
            }
        }
    }
    manifest.errors.sort_by(|a, b| (&a.path, &a.message).cmp(&(&b.path, &b.message)));
    save_manifest(root, manifest)?;
    Ok(report)
}

/// Problems with the files a manifest points at; empty when every entry
/// references parseable containers of the recorded length.
pub fn audit(root: &Path, manifest: &Manifest) -> Vec<String> {
    let mut problems = Vec::new();
    for e in &manifest.entries {
        let p = root.join(&e.path);
        match fs::File::open(&p).map_err(Error::io_at(&p)).and_then(|f| read_clip(std::io::BufReader::new(f))) {
            Ok(c) => {
                if c.frames.len() != e.frame_count as usize || c.label != e.label {
                    problems.push(format!("{}: header disagrees with manifest", e.path));
                }
                if let Some(fp) = &e.flow_path {
                    let p = root.join(fp);
                    match fs::read(&p).map_err(Error::io_at(&p)).and_then(|b| read_flow(&b[..])) {
                        Ok(f) if f.fields.len() + 1 == c.frames.len() => {}
                        Ok(f) => problems.push(format!("{fp}: {} fields for {} frames", f.fields.len(), c.frames.len())),
                        Err(err) => problems.push(format!("{fp}: {err}")),
                    }
                }
            }
            Err(err) => problems.push(format!("{}: {err}", e.path)),
        }
    }
    problems
}

/// SHA-256 of every file under `root`, keyed by `/`-separated relative
/// path.
pub fn tree_digest(root: &Path) -> Result<BTreeMap<String, String>> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
        for entry in fs::read_dir(dir).map_err(Error::io_at(dir))? {
            let path = entry.map_err(Error::io_at(dir))?.path();
            if path.is_dir() {
                walk(&path, root, out)?;
            } else {
                let bytes = fs::read(&path).map_err(Error::io_at(&path))?;
                let rel = path.strip_prefix(root).expect("under root");
                let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                let hex = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
                out.insert(key, hex);
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out)?;
    Ok(out)
}

/// Save a normalized clip as a `float32` array of shape `(T, H, W, 3)`.
pub fn write_npy(path: &Path, clip: &NormalizedClip) -> Result<()> {
    use npyz::WriterBuilder;
    let mut buf = Vec::new();
    let shape = [clip.frames.len() as u64, clip.height as u64, clip.width as u64, 3];
    let mut w = npyz::WriteOptions::new().default_dtype().shape(&shape).writer(&mut buf).begin_nd()?;
    for f in &clip.frames {
        w.extend(f.iter().copied())?;
    }
    w.finish()?;
    write_atomic(path, &buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PipelineConfig {
        PipelineConfig {
            subjects: vec!["a".into(), "b".into()],
            clips_per_action: 2,
            ..Default::default()
        }
    }

    #[test]
    fn plan_counts_and_paths() {
        let tasks = plan(&small());
        assert_eq!(tasks.len(), 60);
        let paths: std::collections::BTreeSet<_> = tasks.iter().map(|t| t.path.clone()).collect();
        assert_eq!(paths.len(), 60);
        assert_eq!(tasks[0].path, "bg_r/walking/a_0.clip");
        assert_eq!(tasks[0].flow_path(), "bg_r/walking/a_0.flow");
    }

    #[test]
    fn full_plan_samples() {
        let cfg = PipelineConfig::default();
        let specs = plan_specs(&cfg, &config_sample_space(&cfg)).unwrap();
        assert_eq!(specs.len(), 2250);
        assert!(specs.iter().all(|(t, s)| s.method() == t.method && s.seed == t.seed));
    }

    #[test]
    fn variation_in_unit_interval() {
        for s in ["a", "subject_01", ""] {
            let v = subject_variation(s);
            assert!((0.0..1.0).contains(&v));
        }
        assert_ne!(subject_variation("a"), subject_variation("b"));
    }
}
