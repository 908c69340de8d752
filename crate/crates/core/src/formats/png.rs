use std::path::{Path, PathBuf};

use super::{ClipContainer, Texture};
use crate::{Error, Result};

pub fn write_png_rgb(path: &Path, width: u32, height: u32, rgb: &[u8]) -> Result<()> {
    image::save_buffer(path, rgb, width, height, image::ColorType::Rgb8).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::PathIo { path: path.to_path_buf(), source: io },
        other => Error::Image(other),
    })
}

/// Load any PNG as RGB8.
pub fn read_png_rgb(path: &Path) -> Result<Texture> {
    let img = image::open(path)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::PathIo { path: path.to_path_buf(), source: io },
            other => Error::Image(other),
        })?
        .to_rgb8();
    Texture::new(img.width(), img.height(), img.into_raw())
}

/// Write every frame as `NNNNNN.png` (six digits, zero-padded) into `dir`,
/// creating it if needed. Returns the written paths in frame order.
pub fn export_png_frames(clip: &ClipContainer, dir: &Path) -> Result<Vec<PathBuf>> {
    clip.validate()?;
    std::fs::create_dir_all(dir).map_err(Error::io_at(dir))?;
    clip.frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let path = dir.join(format!("{i:06}.png"));
            write_png_rgb(&path, clip.width, clip.height, f)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::ActionLabel;

    fn clip(n: usize) -> ClipContainer {
        ClipContainer {
            width: 5,
            height: 3,
            fps: 25,
            label: ActionLabel::Walking,
            provenance: String::new(),
            frames: (0..n).map(|k| (0..45).map(|i| (i * 5 + k * 11) as u8).collect()).collect(),
        }
    }

    #[test]
    fn exports_lossless_numbered_frames() {
        let dir = tempfile::tempdir().unwrap();
        let c = clip(3);
        let files = export_png_frames(&c, dir.path()).unwrap();
        let names: Vec<_> = files.iter().map(|p| p.file_name().unwrap().to_str().unwrap().to_owned()).collect();
        assert_eq!(names, ["000000.png", "000001.png", "000002.png"]);
        for (f, p) in c.frames.iter().zip(&files) {
            assert_eq!(&read_png_rgb(p).unwrap().pixels, f);
        }
    }

    #[test]
    fn empty_clip_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("frames");
        assert!(export_png_frames(&clip(0), &out).unwrap().is_empty());
        assert_eq!(std::fs::read_dir(&out).unwrap().count(), 0);
    }

    #[test]
    fn unwritable_directory() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain");
        std::fs::write(&file, b"x").unwrap();
        let err = export_png_frames(&clip(1), &file.join("sub")).unwrap_err();
        assert!(matches!(err, Error::PathIo { .. }), "{err}");
    }
}
