use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ActionLabel;
use crate::{Error, Result};

/// The five augmentation strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// Background image wall, body rotated.
    #[serde(rename = "BG+R")]
    BgRotate,
    /// Background image wall, body rescaled and translated.
    #[serde(rename = "BG+R2T")]
    BgRescaleTranslate,
    /// Living-room model, recolored background, camera orbited.
    #[serde(rename = "3D+R")]
    RoomRotate,
    /// Living-room model, camera moving during the clip.
    #[serde(rename = "3D+M")]
    RoomMotion,
    /// Reconstructed scene, camera orbited.
    #[serde(rename = "R3D+R")]
    ReconRotate,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::BgRotate,
        Method::BgRescaleTranslate,
        Method::RoomRotate,
        Method::RoomMotion,
        Method::ReconRotate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::BgRotate => "BG+R",
            Method::BgRescaleTranslate => "BG+R2T",
            Method::RoomRotate => "3D+R",
            Method::RoomMotion => "3D+M",
            Method::ReconRotate => "R3D+R",
        }
    }

    /// Filesystem-friendly name used in the output layout.
    pub fn slug(self) -> &'static str {
        match self {
            Method::BgRotate => "bg_r",
            Method::BgRescaleTranslate => "bg_r2t",
            Method::RoomRotate => "3d_r",
            Method::RoomMotion => "3d_m",
            Method::ReconRotate => "r3d_r",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('²', "2");
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == norm || m.slug().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Validation(format!("unknown augmentation method `{s}`")))
    }
}

/// A training subset that carries its own stream weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Subset {
    Synthetic(Method),
    /// Real footage (the external benchmark videos).
    Real,
}

impl Subset {
    pub fn key(self) -> &'static str {
        match self {
            Subset::Synthetic(m) => m.as_str(),
            Subset::Real => "real",
        }
    }
}

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "real" | "hmdb" | "hmdb51" => Ok(Subset::Real),
            _ => s.parse().map(Subset::Synthetic),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamWeights {
    pub rgb: f64,
    pub flow: f64,
}

/// Per-subset RGB/flow sampling weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightTable(pub BTreeMap<String, StreamWeights>);

impl Default for WeightTable {
    /// Weights used for the weighted combined training mix.
    fn default() -> Self {
        let rows = [
            (Subset::Synthetic(Method::BgRotate), 1.0, 0.0),
            (Subset::Synthetic(Method::BgRescaleTranslate), 0.0, 1.0),
            (Subset::Synthetic(Method::RoomRotate), 1.0, 1.0),
            (Subset::Synthetic(Method::RoomMotion), 1.0, 1.0),
            (Subset::Synthetic(Method::ReconRotate), 1.0, 1.0),
            (Subset::Real, 8.0, 3.0),
        ];
        WeightTable(
            rows.into_iter()
                .map(|(s, rgb, flow)| (s.key().to_string(), StreamWeights { rgb, flow }))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Rgb,
    Flow,
}

impl WeightTable {
    pub fn get(&self, subset: Subset) -> StreamWeights {
        self.0
            .get(subset.key())
            .copied()
            .unwrap_or(StreamWeights { rgb: 1.0, flow: 1.0 })
    }

    pub fn weight(&self, subset: Subset, stream: Stream) -> f64 {
        let w = self.get(subset);
        match stream {
            Stream::Rgb => w.rgb,
            Stream::Flow => w.flow,
        }
    }

    pub fn set(&mut self, subset: Subset, weights: StreamWeights) -> Result<()> {
        for (name, w) in [("rgb", weights.rgb), ("flow", weights.flow)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Validation(format!(
                    "{name} weight for {} must be a nonnegative number, got {w}",
                    subset.key()
                )));
            }
        }
        self.0.insert(subset.key().to_string(), weights);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Clip path relative to the output root.
    pub path: String,
    pub label: ActionLabel,
    pub method: Method,
    pub subject_id: String,
    pub clip_index: u32,
    pub seed: u64,
    pub frame_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestError {
    /// Clip path (or task key) the failure belongs to.
    pub path: String,
    pub message: String,
}

/// Index of generated clips plus per-subset training weights.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    #[serde(default)]
    pub weights: WeightTable,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<ManifestError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestStats {
    pub total: usize,
    pub per_class: BTreeMap<ActionLabel, usize>,
    pub per_method: BTreeMap<Method, usize>,
    pub with_flow: usize,
    pub errors: usize,
    pub weights: WeightTable,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.path.as_str()) {
                return Err(Error::Validation(format!("duplicate manifest path {}", e.path)));
            }
        }
        for (k, w) in &self.weights.0 {
            let subset: Subset = k.parse()?;
            WeightTable::default().set(subset, *w)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        Ok(v)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Manifest> {
        let m: Manifest = serde_json::from_slice(bytes)?;
        m.validate()?;
        Ok(m)
    }

    pub fn set_weights(&mut self, subset: Subset, weights: StreamWeights) -> Result<()> {
        self.weights.set(subset, weights)
    }

    /// Entries usable for training one stream, with their subset weight.
    /// Subsets weighted zero for that stream are left out entirely.
    pub fn training_entries(&self, stream: Stream) -> Vec<(&ManifestEntry, f64)> {
        self.entries
            .iter()
            .map(|e| (e, self.weights.weight(Subset::Synthetic(e.method), stream)))
            .filter(|(_, w)| *w > 0.0)
            .collect()
    }

    pub fn stats(&self) -> ManifestStats {
        let mut per_class = BTreeMap::new();
        let mut per_method = BTreeMap::new();
        for e in &self.entries {
            *per_class.entry(e.label).or_insert(0) += 1;
            *per_method.entry(e.method).or_insert(0) += 1;
        }
        ManifestStats {
            total: self.entries.len(),
            per_class,
            per_method,
            with_flow: self.entries.iter().filter(|e| e.flow_path.is_some()).count(),
            errors: self.errors.len(),
            weights: self.weights.clone(),
        }
    }
}

impl fmt::Display for ManifestStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "clips: {} ({} with flow, {} errors)", self.total, self.with_flow, self.errors)?;
        writeln!(f, "per class:")?;
        for (k, v) in &self.per_class {
            writeln!(f, "  {k:<14} {v}")?;
        }
        writeln!(f, "per method:")?;
        for (k, v) in &self.per_method {
            writeln!(f, "  {k:<14} {v}")?;
        }
        writeln!(f, "weights (rgb, flow):")?;
        for (k, w) in &self.weights.0 {
            writeln!(f, "  {k:<14} {:>5} {:>5}", w.rgb, w.flow)?;
        }
        Ok(())
    }
}
