//! Classifier input preparation: resample to 25 fps, resize to a height of
//! 224 keeping the aspect ratio, cut equally spaced 224×224 crops across the
//! width, and map RGB8 to `[-1, 1]`.

use std::path::Path;

use crate::exec::ExecMode;
use crate::formats::{read_png_rgb, ClipContainer};
use crate::{Error, Result};

pub const TARGET_FPS: u32 = 25;
pub const CROP: u32 = 224;

/// RGB8 frames with a frame rate; the common currency of this module.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub frames: Vec<Vec<u8>>,
}

impl FrameStack {
    pub fn from_clip(clip: &ClipContainer) -> FrameStack {
        FrameStack { width: clip.width, height: clip.height, fps: clip.fps as f64, frames: clip.frames.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Contract("frames must have nonzero dimensions".into()));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::Contract(format!("frame rate must be positive, got {}", self.fps)));
        }
        let n = self.width as usize * self.height as usize * 3;
        if let Some(i) = self.frames.iter().position(|f| f.len() != n) {
            return Err(Error::Contract(format!("frame {i} has the wrong byte length")));
        }
        Ok(())
    }

    pub fn duration_secs(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }
}

/// Source frame index for every output frame: nearest source time,
/// `round(k · src / target)` clamped to the last frame.
pub fn resample_indices(source_frames: usize, source_fps: f64, target_fps: f64) -> Vec<usize> {
    if source_frames == 0 {
        return vec![];
    }
    let count = (source_frames as f64 / source_fps * target_fps).round() as usize;
    (0..count).map(|k| ((k as f64 * source_fps / target_fps).round() as usize).min(source_frames - 1)).collect()
}

/// Nearest-neighbor temporal resampling.
pub fn resample_fps(stack: &FrameStack, target_fps: u32) -> Result<FrameStack> {
    stack.validate()?;
    if target_fps == 0 {
        return Err(Error::Contract("target frame rate must be positive".into()));
    }
    let frames = resample_indices(stack.frames.len(), stack.fps, target_fps as f64).into_iter().map(|i| stack.frames[i].clone()).collect();
    Ok(FrameStack { fps: target_fps as f64, frames, ..stack.clone() })
}

/// Bilinear resize of one RGB8 frame with pixel-center alignment and
/// clamp-to-edge.
pub fn resize_frame(src: &[u8], w: u32, h: u32, nw: u32, nh: u32) -> Vec<u8> {
    let (sx, sy) = (w as f64 / nw as f64, h as f64 / nh as f64);
    let axis = |n: u32, s: f64, max: u32| -> Vec<(usize, usize, f64)> {
        (0..n)
            .map(|i| {
                let p = ((i as f64 + 0.5) * s - 0.5).clamp(0.0, (max - 1) as f64);
                let i0 = p.floor() as usize;
                (i0, (i0 + 1).min(max as usize - 1), p - i0 as f64)
            })
            .collect()
    };
    let (xs, ys) = (axis(nw, sx, w), axis(nh, sy, h));
    let w = w as usize;
    let mut out = Vec::with_capacity(nw as usize * nh as usize * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for k in 0..3 {
                let g = |x: usize, y: usize| src[(y * w + x) * 3 + k] as f64;
                let top = g(x0, y0) * (1.0 - fx) + g(x1, y0) * fx;
                let bot = g(x0, y1) * (1.0 - fx) + g(x1, y1) * fx;
                out.push((top * (1.0 - fy) + bot * fy).round() as u8);
            }
        }
    }
    out
}

/// Resize to `target_height`, scaling the width by the same factor
/// (rounded to the nearest pixel).
pub fn resize_height(stack: &FrameStack, target_height: u32, mode: ExecMode) -> Result<FrameStack> {
    stack.validate()?;
    if target_height == 0 {
        return Err(Error::Contract("target height must be positive".into()));
    }
    if stack.height == target_height {
        return Ok(stack.clone());
    }
    let nw = ((stack.width as f64 * target_height as f64 / stack.height as f64).round() as u32).max(1);
    let frames = mode.map(&stack.frames, |f| resize_frame(f, stack.width, stack.height, nw, target_height));
    Ok(FrameStack { width: nw, height: target_height, frames, ..stack.clone() })
}

/// Horizontal crop offsets: `round(i·(W−crop)/(n−1))` for `n ≥ 2`, the
/// centered offset for `n = 1`, and `ceil(W/crop)` crops by default.
pub fn crop_offsets(width: u32, crop: u32, count: Option<usize>) -> Result<Vec<u32>> {
    if width < crop {
        return Err(Error::Contract(format!("width {width} is narrower than the {crop} px crop; resize first")));
    }
    let n = count.unwrap_or_else(|| width.div_ceil(crop) as usize);
    if n == 0 {
        return Err(Error::Contract("crop count must be at least 1".into()));
    }
    let span = (width - crop) as u64;
    if n == 1 {
        return Ok(vec![(span / 2) as u32]);
    }
    let d = (n - 1) as u64;
    // Integer round-half-up of i·span/d.
    Ok((0..n as u64).map(|i| ((2 * i * span + d) / (2 * d)) as u32).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Crop {
    pub offset: u32,
    pub stack: FrameStack,
}

/// Square crops spanning the width; the stack height must equal `crop`.
pub fn extract_crops(stack: &FrameStack, crop: u32, count: Option<usize>) -> Result<Vec<Crop>> {
    stack.validate()?;
    if stack.height != crop {
        return Err(Error::Contract(format!("height {} must equal the crop size {crop}; resize first", stack.height)));
    }
    let offsets = crop_offsets(stack.width, crop, count)?;
    let (w, c) = (stack.width as usize, crop as usize);
    Ok(offsets
        .into_iter()
        .map(|off| {
            let o = off as usize;
            let frames = stack
                .frames
                .iter()
                .map(|f| (0..c).flat_map(|y| f[(y * w + o) * 3..(y * w + o + c) * 3].iter().copied()).collect())
                .collect();
            Crop { offset: off, stack: FrameStack { width: crop, height: crop, frames, ..stack.clone() } }
        })
        .collect())
}

/// Classifier-ready frames: `frames[t]` is `height × width × 3` row-major
/// `f32` in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedClip {
    pub width: u32,
    pub height: u32,
    pub fps: u32,
    pub frames: Vec<Vec<f32>>,
    /// Horizontal offset of the crop in the resized frame.
    pub crop_offset: u32,
}

/// `v / 127.5 − 1`. The input type is RGB8 only, so float data can never be
/// scaled twice.
#[inline]
pub fn normalize_value(v: u8) -> f32 {
    (v as f64 / 127.5 - 1.0) as f32
}

pub fn normalize_rgb(stack: &FrameStack, crop_offset: u32, mode: ExecMode) -> Result<NormalizedClip> {
    stack.validate()?;
    let frames = mode.map(&stack.frames, |f| f.iter().map(|&v| normalize_value(v)).collect());
    Ok(NormalizedClip { width: stack.width, height: stack.height, fps: stack.fps.round() as u32, frames, crop_offset })
}

/// Resample → resize → crop → normalize. One clip per crop. Portrait
/// frames yield a single vertically centered crop.
pub fn preprocess(stack: &FrameStack, count: Option<usize>, mode: ExecMode) -> Result<Vec<NormalizedClip>> {
    let resampled = resample_fps(stack, TARGET_FPS)?;
    let resized = fit_height(&resampled, CROP, mode)?;
    extract_crops(&resized, CROP, count)?.iter().map(|c| normalize_rgb(&c.stack, c.offset, mode)).collect()
}

/// Every `*.png` in `dir`, in file-name order, as one stack at `fps`.
pub fn load_png_sequence(dir: &Path, fps: f64) -> Result<FrameStack> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(Error::io_at(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Validation(format!("no PNG frames in {}", dir.display())));
    }
    let mut frames = Vec::with_capacity(paths.len());
    let mut dims = None;
    for p in &paths {
        let t = read_png_rgb(p)?;
        match dims {
            None => dims = Some((t.width, t.height)),
            Some(d) if d != (t.width, t.height) => {
                return Err(Error::Validation(format!("{} is {}x{}, expected {}x{}", p.display(), t.width, t.height, d.0, d.1)))
            }
            _ => {}
        }
        frames.push(t.pixels);
    }
    let (width, height) = dims.expect("at least one frame");
    let stack = FrameStack { width, height, fps, frames };
    stack.validate()?;
    Ok(stack)
}

/// Resize to height `crop`; frames that would end up narrower than `crop`
/// are instead resized to width `crop` and center-cropped vertically.
pub fn fit_height(stack: &FrameStack, crop: u32, mode: ExecMode) -> Result<FrameStack> {
    stack.validate()?;
    if crop == 0 {
        return Err(Error::Contract("crop size must be positive".into()));
    }
    let nw = (stack.width as f64 * crop as f64 / stack.height as f64).round() as u32;
    if nw >= crop {
        return resize_height(stack, crop, mode);
    }
    let nh = ((stack.height as f64 * crop as f64 / stack.width as f64).round() as u32).max(crop);
    let top = ((nh - crop) / 2) as usize;
    let row = crop as usize * 3;
    let frames = mode.map(&stack.frames, |f| {
        let full = resize_frame(f, stack.width, stack.height, crop, nh);
        full[top * row..(top + crop as usize) * row].to_vec()
    });
    Ok(FrameStack { width: crop, height: crop, frames, ..stack.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack(w: u32, h: u32, n: usize, fps: f64) -> FrameStack {
        let frames = (0..n).map(|k| (0..w * h * 3).map(|i| ((i as usize * 7 + k * 13) % 256) as u8).collect()).collect();
        FrameStack { width: w, height: h, fps, frames }
    }

    #[test]
    fn resample_cases() {
        let s = stack(2, 2, 100, 50.0);
        let r = resample_fps(&s, 25).unwrap();
        assert_eq!(r.frames.len(), 50);
        for (k, f) in r.frames.iter().enumerate() {
            assert_eq!(f, &s.frames[2 * k]);
        }
        let s = stack(2, 2, 40, 25.0);
        assert_eq!(resample_fps(&s, 25).unwrap(), s);
        let idx = resample_indices(90, 30.0, 25.0);
        assert_eq!(idx.len(), 75);
        for (k, i) in idx.iter().enumerate() {
            assert_eq!(*i, ((k as f64 * 1.2).round() as usize).min(89));
        }
    }

    #[test]
    fn resize_cases() {
        let s = stack(896, 448, 1, 25.0);
        let r = resize_height(&s, 224, ExecMode::Sequential).unwrap();
        assert_eq!((r.width, r.height), (448, 224));
        let s = stack(300, 224, 2, 25.0);
        assert_eq!(resize_height(&s, 224, ExecMode::Sequential).unwrap(), s);
        let flat = FrameStack { width: 37, height: 91, fps: 25.0, frames: vec![[12u8, 200, 77].repeat(37 * 91)] };
        let r = resize_height(&flat, 224, ExecMode::Sequential).unwrap();
        assert!(r.frames[0].chunks(3).all(|p| p == [12, 200, 77]));
    }

    #[test]
    fn crop_cases() {
        assert_eq!(crop_offsets(224, 224, None).unwrap(), vec![0]);
        assert_eq!(crop_offsets(448, 224, Some(2)).unwrap(), vec![0, 224]);
        assert_eq!(crop_offsets(500, 224, Some(3)).unwrap(), vec![0, 138, 276]);
        assert_eq!(crop_offsets(500, 224, None).unwrap().len(), 3);
        assert!(matches!(crop_offsets(200, 224, None), Err(Error::Contract(_))));
    }

    #[test]
    fn crops_copy_the_right_columns() {
        let s = stack(300, 224, 1, 25.0);
        let crops = extract_crops(&s, 224, Some(2)).unwrap();
        assert_eq!(crops[1].offset, 76);
        let f = &crops[1].stack.frames[0];
        assert_eq!(&f[..3], &s.frames[0][76 * 3..77 * 3]);
        let last_row = 223 * 224 * 3;
        assert_eq!(&f[last_row..last_row + 3], &s.frames[0][(223 * 300 + 76) * 3..(223 * 300 + 77) * 3]);
    }

    #[test]
    fn normalize_endpoints() {
        assert_eq!(normalize_value(0), -1.0);
        assert_eq!(normalize_value(255), 1.0);
        assert!((normalize_value(128) - 0.003_921_6).abs() < 1e-6);
    }

    #[test]
    fn pipeline_shapes() {
        let s = stack(640, 360, 60, 30.0);
        let out = preprocess(&s, None, ExecMode::Parallel).unwrap();
        // 640·224/360 = 398.2 → 398 wide → two crops.
        assert_eq!(out.len(), 2);
        for c in &out {
            assert_eq!((c.width, c.height, c.fps, c.frames.len()), (224, 224, 25, 50));
            assert!(c.frames.iter().all(|f| f.len() == 224 * 224 * 3 && f.iter().all(|v| (-1.0..=1.0).contains(v))));
        }
        assert_eq!(out[1].crop_offset, 398 - 224);
    }

    #[test]
    fn portrait_is_center_cropped() {
        // Rows are colored by height: the kept band is the middle one.
        let (w, h) = (112u32, 448u32);
        let f: Vec<u8> = (0..h).flat_map(|y| [(y * 255 / (h - 1)) as u8; 3].repeat(w as usize)).collect();
        let s = FrameStack { width: w, height: h, fps: 25.0, frames: vec![f] };
        let r = fit_height(&s, 224, ExecMode::Sequential).unwrap();
        assert_eq!((r.width, r.height), (224, 224));
        let mid = r.frames[0][(112 * 224 + 112) * 3] as i32;
        assert!((mid - 127).abs() <= 2, "{mid}");
        assert_eq!(preprocess(&s, None, ExecMode::Sequential).unwrap().len(), 1);
    }
}
