//! Raw clip container.
//!
//! Byte layout (all integers u32 little-endian):
//!
//! | offset | field                               |
//! |--------|-------------------------------------|
//! | 0      | magic `SACT`                        |
//! | 4      | version (1)                         |
//! | 8      | width                               |
//! | 12     | height                              |
//! | 16     | fps                                 |
//! | 20     | frame count                         |
//! | 24     | label length `L`, then `L` bytes    |
//! | ..     | provenance length `P`, then `P` bytes (JSON) |
//! | ..     | frames, each `width*height*3` RGB8 bytes, row-major |

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const CLIP_MAGIC: &[u8; 4] = b"SACT";
const VERSION: u32 = 1;
const MAX_TEXT: u32 = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionLabel {
    Walking,
    SittingDown,
    HandWaving,
}

impl ActionLabel {
    pub const ALL: [ActionLabel; 3] = [ActionLabel::Walking, ActionLabel::SittingDown, ActionLabel::HandWaving];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionLabel::Walking => "walking",
            ActionLabel::SittingDown => "sitting_down",
            ActionLabel::HandWaving => "hand_waving",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ActionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace([' ', '-'], "_").as_str() {
            "walking" => Ok(ActionLabel::Walking),
            "sitting_down" => Ok(ActionLabel::SittingDown),
            "hand_waving" => Ok(ActionLabel::HandWaving),
            _ => Err(Error::Validation(format!(
                "unknown action label `{s}` (expected walking, sitting_down or hand_waving)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipHeader {
    pub width: u32,
    pub height: u32,
    pub fps: u32,
    pub frame_count: u32,
    pub label: ActionLabel,
    /// JSON text: augmentation parameters, seed and derived values.
    pub provenance: String,
}

/// Rendered RGB8 frames plus labelling metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipContainer {
    pub width: u32,
    pub height: u32,
    pub fps: u32,
    pub label: ActionLabel,
    pub provenance: String,
    pub frames: Vec<Vec<u8>>,
}

impl ClipContainer {
    pub fn frame_bytes(&self) -> usize {
        self.width as usize * self.height as usize * 3
    }

    pub fn header(&self) -> ClipHeader {
        ClipHeader {
            width: self.width,
            height: self.height,
            fps: self.fps,
            frame_count: self.frames.len() as u32,
            label: self.label,
            provenance: self.provenance.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fps == 0 || self.width == 0 || self.height == 0 {
            return Err(Error::Contract("clip dimensions and fps must be positive".into()));
        }
        if let Some(i) = self.frames.iter().position(|f| f.len() != self.frame_bytes()) {
            return Err(Error::Contract(format!("frame {i} has the wrong byte length")));
        }
        Ok(())
    }
}

pub fn write_clip(clip: &ClipContainer, mut sink: impl Write) -> Result<()> {
    clip.validate()?;
    let mut head = Vec::with_capacity(64 + clip.provenance.len());
    head.extend_from_slice(CLIP_MAGIC);
    for v in [VERSION, clip.width, clip.height, clip.fps, clip.frames.len() as u32] {
        head.extend_from_slice(&v.to_le_bytes());
    }
    for text in [clip.label.as_str(), clip.provenance.as_str()] {
        head.extend_from_slice(&(text.len() as u32).to_le_bytes());
        head.extend_from_slice(text.as_bytes());
    }
    sink.write_all(&head)?;
    for f in &clip.frames {
        sink.write_all(f)?;
    }
    sink.flush()?;
    Ok(())
}

fn read_exact_or(src: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    src.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated clip: {what}")),
        _ => Error::Io(e),
    })
}

fn read_u32(src: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or(src, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_text(src: &mut impl Read, what: &str) -> Result<String> {
    let len = read_u32(src, what)?;
    if len > MAX_TEXT {
        return Err(Error::Format(format!("{what} length {len} is implausible")));
    }
    let mut buf = vec![0u8; len as usize];
    read_exact_or(src, &mut buf, what)?;
    String::from_utf8(buf).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
}

/// Read only the header; the source is left positioned at the first frame.
pub fn read_clip_header(mut src: impl Read) -> Result<ClipHeader> {
    let mut magic = [0u8; 4];
    read_exact_or(&mut src, &mut magic, "magic")?;
    if &magic != CLIP_MAGIC {
        return Err(Error::Format("not a clip container (bad magic)".into()));
    }
    let version = read_u32(&mut src, "version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported clip version {version}")));
    }
    let width = read_u32(&mut src, "width")?;
    let height = read_u32(&mut src, "height")?;
    let fps = read_u32(&mut src, "fps")?;
    let frame_count = read_u32(&mut src, "frame count")?;
    let label = read_text(&mut src, "label")?.parse()?;
    let provenance = read_text(&mut src, "provenance")?;
    Ok(ClipHeader { width, height, fps, frame_count, label, provenance })
}

pub fn read_clip(mut src: impl Read) -> Result<ClipContainer> {
    let h = read_clip_header(&mut src)?;
    let size = h.width as usize * h.height as usize * 3;
    let mut frames = Vec::with_capacity(h.frame_count.min(4096) as usize);
    for i in 0..h.frame_count {
        let mut f = vec![0u8; size];
        read_exact_or(&mut src, &mut f, &format!("frame {i} of {}", h.frame_count))?;
        frames.push(f);
    }
    let mut probe = [0u8; 1];
    if src.read(&mut probe)? != 0 {
        return Err(Error::Format("trailing bytes after last frame".into()));
    }
    Ok(ClipContainer {
        width: h.width,
        height: h.height,
        fps: h.fps,
        label: h.label,
        provenance: h.provenance,
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(frames: usize, size: u32) -> ClipContainer {
        ClipContainer {
            width: size,
            height: size,
            fps: 25,
            label: ActionLabel::HandWaving,
            provenance: "{\"seed\":42}".into(),
            frames: (0..frames)
                .map(|k| (0..size * size * 3).map(|i| (i as usize * 7 + k) as u8).collect())
                .collect(),
        }
    }

    #[test]
    fn round_trip_two_frames() {
        let c = clip(2, 224);
        let mut buf = Vec::new();
        write_clip(&c, &mut buf).unwrap();
        assert_eq!(read_clip(buf.as_slice()).unwrap(), c);
    }

    #[test]
    fn header_only_read_skips_frames() {
        let c = clip(250, 8);
        let mut buf = Vec::new();
        write_clip(&c, &mut buf).unwrap();
        // Hand the reader only the header bytes: frames are never touched.
        let head_len = buf.len() - 250 * 8 * 8 * 3;
        let h = read_clip_header(&buf[..head_len]).unwrap();
        assert_eq!(h.frame_count, 250);
        assert_eq!(h.label, ActionLabel::HandWaving);
        assert_eq!(h.provenance, c.provenance);
    }

    #[test]
    fn truncated_payload() {
        let mut c = clip(10, 4);
        let mut buf = Vec::new();
        write_clip(&c, &mut buf).unwrap();
        buf.truncate(buf.len() - 4 * 4 * 3);
        assert!(matches!(read_clip(buf.as_slice()), Err(Error::Format(m)) if m.contains("truncated")));
        c.frames.pop();
        assert_eq!(c.frames.len(), 9);
    }

    #[test]
    fn bad_magic() {
        let mut buf = Vec::new();
        write_clip(&clip(1, 2), &mut buf).unwrap();
        buf[0] = b'X';
        assert!(matches!(read_clip(buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn labels() {
        assert_eq!("sitting down".parse::<ActionLabel>().unwrap(), ActionLabel::SittingDown);
        assert!(matches!("jumping".parse::<ActionLabel>(), Err(Error::Validation(_))));
    }
}
