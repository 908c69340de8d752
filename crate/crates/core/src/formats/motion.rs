//! Motion-take JSON.
//!
//! ```json
//! {
//!   "subject": "s01",
//!   "label": "hand_waving",
//!   "fps": 25.0,
//!   "joints": ["pelvis", "spine", ...],
//!   "frames": [
//!     { "rotations": [[0.0, 0.0, 0.0], ...], "root_translation": [0.0, 0.0, 0.0] }
//!   ]
//! }
//! ```
//!
//! Rotations are axis-angle vectors in radians, one per entry of `joints`, in
//! the same order. `root_translation` may be omitted (defaults to zero).

use serde::{Deserialize, Serialize};

use super::ActionLabel;
use crate::body::PoseFrame;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MotionTake {
    pub subject_id: String,
    pub label: ActionLabel,
    pub fps: f64,
    pub joint_names: Vec<String>,
    pub frames: Vec<PoseFrame>,
}

#[derive(Serialize, Deserialize)]
struct RawTake {
    subject: String,
    label: String,
    fps: f64,
    joints: Vec<String>,
    frames: Vec<RawFrame>,
}

#[derive(Serialize, Deserialize)]
struct RawFrame {
    rotations: Vec<[f64; 3]>,
    #[serde(default)]
    root_translation: [f64; 3],
}

impl MotionTake {
    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::Validation(format!("fps must be positive, got {}", self.fps)));
        }
        if self.frames.len() < 2 {
            return Err(Error::Validation(format!("a take needs at least 2 frames, got {}", self.frames.len())));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.joint_rotations.len() != self.joint_names.len() {
                return Err(Error::Structural(format!(
                    "frame {i} has {} rotations for {} joints",
                    f.joint_rotations.len(),
                    self.joint_names.len()
                )));
            }
            if f.joint_rotations.iter().flatten().chain(&f.root_translation).any(|x| !x.is_finite()) {
                return Err(Error::Validation(format!("frame {i} has non-finite values")));
            }
        }
        Ok(())
    }

    pub fn duration_secs(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }
}

pub fn parse_motion_take(bytes: &[u8]) -> Result<MotionTake> {
    let raw: RawTake = serde_json::from_slice(bytes)?;
    let take = MotionTake {
        subject_id: raw.subject,
        label: raw.label.parse()?,
        fps: raw.fps,
        joint_names: raw.joints,
        frames: raw
            .frames
            .into_iter()
            .map(|f| PoseFrame { joint_rotations: f.rotations, root_translation: f.root_translation })
            .collect(),
    };
    take.validate()?;
    Ok(take)
}

pub fn write_motion_take(take: &MotionTake) -> Result<Vec<u8>> {
    take.validate()?;
    let raw = RawTake {
        subject: take.subject_id.clone(),
        label: take.label.as_str().to_string(),
        fps: take.fps,
        joints: take.joint_names.clone(),
        frames: take
            .frames
            .iter()
            .map(|f| RawFrame { rotations: f.joint_rotations.clone(), root_translation: f.root_translation })
            .collect(),
    };
    Ok(serde_json::to_vec(&raw)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const IDENTITY: &str = r#"{"subject":"s01","label":"walking","fps":25.0,"joints":["a","b"],
        "frames":[{"rotations":[[0,0,0],[0,0,0]]},{"rotations":[[0,0,0],[0,0,0]]}]}"#;

    #[test]
    fn identity_take() {
        let t = parse_motion_take(IDENTITY.as_bytes()).unwrap();
        assert_eq!(t.frames.len(), 2);
        assert!(t.frames.iter().all(|f| f.joint_rotations.iter().flatten().all(|&x| x == 0.0)));
        assert_eq!(t.joint_names, ["a", "b"]);
    }

    #[test]
    fn unknown_label() {
        let src = IDENTITY.replace("walking", "jumping");
        assert!(matches!(parse_motion_take(src.as_bytes()), Err(Error::Validation(_))));
    }

    #[test]
    fn rotation_count_mismatch() {
        let src = IDENTITY.replacen("[[0,0,0],[0,0,0]]", "[[0,0,0]]", 1);
        assert!(matches!(parse_motion_take(src.as_bytes()), Err(Error::Structural(_))));
    }

    #[test]
    fn single_frame_rejected() {
        let src = r#"{"subject":"s","label":"walking","fps":25,"joints":["a"],"frames":[{"rotations":[[0,0,0]]}]}"#;
        assert!(parse_motion_take(src.as_bytes()).is_err());
    }
}
