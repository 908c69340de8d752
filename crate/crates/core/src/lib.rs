//! Procedural generation of labelled synthetic human-activity clips.
//!
//! A skinned humanoid is posed from motion takes, placed into composed 3D
//! scenes under five augmentation strategies, rendered by a deterministic
//! software rasterizer, and paired with dense TV-L1 optical flow. Real indoor
//! scenes can be reconstructed from RGB-D streams and used as backgrounds.
//!
//! Module map:
//!
//! * [`formats`]: OBJ / GLB / PLY loaders, clip and flow containers, motion
//!   takes, manifests and PNG export.
//! * [`body`]: skeleton rig, forward kinematics and linear blend skinning.
//! * [`scene`]: scene graph assembly (wall and room scenes, camera orbits).
//! * [`augment`]: seeded sampling and realization of the five strategies.
//! * [`raster`]: z-buffered software rasterizer with shadow mapping.
//! * [`flow`]: TV-L1 optical flow and its truncation/normalization.
//! * [`recon`]: RGB-D odometry, fragments, pose graphs, TSDF fusion, meshing.
//! * [`preprocess`]: fps resampling, resizing, cropping and normalization.
//! * [`pipeline`]: config-driven dataset generation and bookkeeping.

pub mod augment;
pub mod body;
pub mod error;
pub mod exec;
pub mod fixtures;
pub mod flow;
pub mod formats;
pub mod geom;
pub mod pipeline;
pub mod preprocess;
pub mod raster;
pub mod recon;
pub mod scene;

pub use error::{Error, Result};
