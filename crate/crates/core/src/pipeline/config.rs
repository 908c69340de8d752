//! Run configuration, loaded from TOML.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::exec::ExecMode;
use crate::flow::FlowParams;
use crate::formats::{ActionLabel, Method};
use crate::raster::RenderConfig;
use crate::scene::SceneConfig;
use crate::{Error, Result};

/// Environment variable that replaces `output_root`. Nothing else can be
/// set from the environment.
pub const OUTPUT_ROOT_ENV: &str = "SYNTHACT_OUTPUT_ROOT";

/// A mesh to place the body in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentAsset {
    /// OBJ or PLY.
    pub mesh: PathBuf,
    /// Diffuse texture for meshes with uvs.
    #[serde(default)]
    pub texture: Option<PathBuf>,
    /// Where the body origin stands, in mesh coordinates after the
    /// `cv_frame` flip.
    #[serde(default)]
    pub anchor: [f64; 3],
    /// Body heading about the vertical axis (degrees).
    #[serde(default)]
    pub yaw_deg: f64,
    /// The mesh uses camera conventions (Y down, as reconstructions do) and
    /// is turned upright first.
    #[serde(default)]
    pub cv_frame: bool,
    /// Whether background recoloring applies to this mesh.
    #[serde(default = "yes")]
    pub colorable: bool,
}

fn repeats<T: Ord>(v: &[T]) -> bool {
    v.iter().collect::<std::collections::BTreeSet<_>>().len() != v.len()
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssetPaths {
    /// Rig JSON of the skinned body; the procedural humanoid when unset.
    pub body: Option<PathBuf>,
    /// Directory holding `<subject>/<action>.json` motion takes; procedural
    /// takes when unset.
    pub motion_dir: Option<PathBuf>,
    /// Six wall images; procedural placeholders when empty.
    pub backgrounds: Vec<PathBuf>,
    /// Room for the 3D methods; the procedural living room when unset.
    pub environment: Option<EnvironmentAsset>,
    /// Reconstructed scenes by id, for R3D+R.
    pub recon_scenes: BTreeMap<String, EnvironmentAsset>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub output_root: PathBuf,
    pub master_seed: u64,
    pub subjects: Vec<String>,
    pub actions: Vec<ActionLabel>,
    pub clips_per_action: usize,
    pub methods: Vec<Method>,
    /// Worker threads for clip-level parallelism (0: one per core).
    pub threads: usize,
    pub exec: ExecMode,
    pub assets: AssetPaths,
    pub render: RenderConfig,
    pub scene: SceneConfig,
    pub flow: FlowParams,
    /// Directory relative asset paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            output_root: PathBuf::from("out"),
            master_seed: 0,
            subjects: (1..=15).map(|i| format!("subject_{i:02}")).collect(),
            actions: ActionLabel::ALL.to_vec(),
            clips_per_action: 10,
            methods: Method::ALL.to_vec(),
            threads: 0,
            exec: ExecMode::Parallel,
            assets: AssetPaths::default(),
            render: RenderConfig::default(),
            scene: SceneConfig::default(),
            flow: FlowParams::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<PipelineConfig> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    /// Read a TOML file; relative paths inside resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        PipelineConfig::from_toml_str(&text, &base)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output_root)
    }

    /// Number of clips a full run produces.
    pub fn clip_count(&self) -> usize {
        self.subjects.len() * self.actions.len() * self.clips_per_action * self.methods.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.clips_per_action == 0 {
            return bad("clips_per_action must be at least 1".into());
        }
        for (name, empty) in [("subjects", self.subjects.is_empty()), ("actions", self.actions.is_empty()), ("methods", self.methods.is_empty())] {
            if empty {
                return bad(format!("{name} must not be empty"));
            }
        }
        if let Some(s) = self.subjects.iter().find(|s| s.is_empty() || s.contains(['/', '\\', '\0']) || s.starts_with('.')) {
            return bad(format!("subject id `{s}` is not usable as a file name"));
        }
        if repeats(&self.subjects) || repeats(&self.actions) || repeats(&self.methods) {
            return bad("subjects, actions and methods must not repeat".into());
        }
        self.render.validate()?;
        self.flow.validate().map_err(|e| Error::Config(e.to_string()))?;
        let a = &self.assets;
        let mut paths: Vec<&PathBuf> = a.body.iter().chain(&a.motion_dir).chain(&a.backgrounds).collect();
        for env in a.environment.iter().chain(a.recon_scenes.values()) {
            paths.push(&env.mesh);
            paths.extend(&env.texture);
        }
        for p in paths {
            let full = self.resolve(p);
            if !full.exists() {
                return bad(format!("asset path {} does not exist", full.display()));
            }
        }
        if !a.backgrounds.is_empty() && a.backgrounds.len() != crate::augment::BACKGROUND_COUNT {
            return bad(format!("expected {} background images, got {}", crate::augment::BACKGROUND_COUNT, a.backgrounds.len()));
        }
        if let Some(id) = a.recon_scenes.keys().find(|k| k.is_empty()) {
            return bad(format!("reconstructed scene id `{id}` is empty"));
        }
        Ok(())
    }
}
