//! Dense TV-L1 optical flow.
//!
//! Duality-based primal-dual solver with coarse-to-fine warping, following
//! the widely used OpenCV formulation and its default parameters. Inputs are
//! grayscale images in `[0,1]`; they are rescaled to `[0,255]` internally so
//! the data weight keeps the calibration of those defaults.

use serde::{Deserialize, Serialize};

use crate::exec::ExecMode;
use crate::formats::{ClipContainer, Texture};
use crate::{Error, Result};

/// Row-major single-channel float image.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<GrayImage> {
        if data.len() != width * height {
            return Err(Error::Structural(format!("{}x{} image needs {} values, got {}", width, height, width * height, data.len())));
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> GrayImage {
        let data = (0..width * height).map(|i| f(i % width, i / width)).collect();
        GrayImage { width, height, data }
    }

    /// Luma (0.299, 0.587, 0.114) of packed RGB8, scaled to `[0,1]`.
    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> GrayImage {
        let data = rgb
            .chunks_exact(3)
            .map(|p| (0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32) / 255.0)
            .collect();
        GrayImage { width, height, data }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample with clamp-to-edge.
    pub fn sample(&self, x: f32, y: f32) -> f32 {
        sample(&self.data, self.width, self.height, x, y)
    }
}

#[inline]
fn sample(data: &[f32], w: usize, h: usize, x: f32, y: f32) -> f32 {
    let x = x.clamp(0.0, (w - 1) as f32);
    let y = y.clamp(0.0, (h - 1) as f32);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f32, y - y0 as f32);
    let top = data[y0 * w + x0] * (1.0 - fx) + data[y0 * w + x1] * fx;
    let bot = data[y1 * w + x0] * (1.0 - fx) + data[y1 * w + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

/// Displacement per pixel, x right / y down, in pixels per frame (or in
/// `[-1,1]` once normalized).
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> FlowField {
        FlowField { width, height, u: vec![0.0; width * height], v: vec![0.0; width * height] }
    }

    pub fn constant(width: usize, height: usize, u: f32, v: f32) -> FlowField {
        FlowField { width, height, u: vec![u; width * height], v: vec![v; width * height] }
    }

    pub fn magnitudes(&self) -> Vec<f32> {
        self.u.iter().zip(&self.v).map(|(a, b)| a.hypot(*b)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|x| x.is_finite())
    }
}

/// One field per consecutive frame pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSequence {
    pub fields: Vec<FlowField>,
    pub normalized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowParams {
    /// Data-term weight.
    pub lambda: f32,
    /// Coupling between the primal and auxiliary flow.
    pub theta: f32,
    /// Dual step size.
    pub tau: f32,
    /// Stop when the mean squared update falls below `epsilon²`.
    pub epsilon: f32,
    pub scales: usize,
    pub scale_factor: f32,
    pub warps: usize,
    pub max_iterations: usize,
    /// 3×3 median filter on the flow after each warp.
    pub median_filter: bool,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            lambda: 0.15,
            theta: 0.3,
            tau: 0.25,
            epsilon: 0.01,
            scales: 5,
            scale_factor: 0.5,
            warps: 5,
            max_iterations: 300,
            median_filter: true,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.lambda, self.theta, self.tau, self.epsilon].iter().all(|v| *v > 0.0);
        if !positive || self.scales == 0 || self.warps == 0 || self.max_iterations == 0 {
            return Err(Error::Config("flow parameters must be positive".into()));
        }
        if !(self.scale_factor > 0.0 && self.scale_factor < 1.0) {
            return Err(Error::Config(format!("flow scale factor {} outside (0,1)", self.scale_factor)));
        }
        Ok(())
    }
}

/// Coarsest level is kept at least this many pixels on each side.
const MIN_LEVEL_SIZE: usize = 8;

fn resize(data: &[f32], w: usize, h: usize, nw: usize, nh: usize) -> Vec<f32> {
    let (sx, sy) = (w as f32 / nw as f32, h as f32 / nh as f32);
    let mut out = Vec::with_capacity(nw * nh);
    for y in 0..nh {
        let fy = (y as f32 + 0.5) * sy - 0.5;
        for x in 0..nw {
            let fx = (x as f32 + 0.5) * sx - 0.5;
            out.push(sample(data, w, h, fx, fy));
        }
    }
    out
}

/// Central-difference gradient with one-sided differences at the border.
fn centered_gradient(data: &[f32], w: usize, h: usize) -> (Vec<f32>, Vec<f32>) {
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            if xr > xl {
                gx[i] = (data[y * w + xr] - data[y * w + xl]) / (xr - xl) as f32;
            }
            if yd > yu {
                gy[i] = (data[yd * w + x] - data[yu * w + x]) / (yd - yu) as f32;
            }
        }
    }
    (gx, gy)
}

/// Forward differences, zero on the last column/row.
fn forward_gradient(data: &[f32], w: usize, h: usize, gx: &mut [f32], gy: &mut [f32]) {
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            gx[i] = if x + 1 < w { data[i + 1] - data[i] } else { 0.0 };
            gy[i] = if y + 1 < h { data[i + w] - data[i] } else { 0.0 };
        }
    }
}

/// Divergence as the negative adjoint of [`forward_gradient`].
fn divergence(px: &[f32], py: &[f32], w: usize, h: usize, out: &mut [f32]) {
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let dx = if x == 0 {
                px[i]
            } else if x + 1 == w {
                -px[i - 1]
            } else {
                px[i] - px[i - 1]
            };
            let dy = if y == 0 {
                py[i]
            } else if y + 1 == h {
                -py[i - w]
            } else {
                py[i] - py[i - w]
            };
            out[i] = dx + dy;
        }
    }
}

fn median3x3(data: &[f32], w: usize, h: usize) -> Vec<f32> {
    let mut out = vec![0.0; w * h];
    let mut win = [0f32; 9];
    for y in 0..h {
        for x in 0..w {
            let mut k = 0;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                    let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                    win[k] = data[yy * w + xx];
                    k += 1;
                }
            }
            win.sort_by(|a, b| a.total_cmp(b));
            out[y * w + x] = win[4];
        }
    }
    out
}

/// Backward bilinear warp: `out(x) = image(x + flow(x))`, clamped to edge.
pub fn warp_image(image: &GrayImage, flow: &FlowField) -> Result<GrayImage> {
    if image.width != flow.width || image.height != flow.height {
        return Err(Error::Contract("flow and image sizes differ".into()));
    }
    Ok(GrayImage { width: image.width, height: image.height, data: warp(&image.data, &flow.u, &flow.v, image.width, image.height) })
}

fn warp(data: &[f32], u: &[f32], v: &[f32], w: usize, h: usize) -> Vec<f32> {
    (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f32, (i / w) as f32);
            sample(data, w, h, x + u[i], y + v[i])
        })
        .collect()
}

/// TV-L1 energy `Σ |∇u| + |∇v| + λ |I1(x+u) − I0|` on the internal
/// `[0,255]` intensity scale.
pub fn tvl1_energy(prev: &GrayImage, next: &GrayImage, flow: &FlowField, lambda: f32) -> f64 {
    let (w, h) = (prev.width, prev.height);
    let i0: Vec<f32> = prev.data.iter().map(|x| x * 255.0).collect();
    let i1: Vec<f32> = next.data.iter().map(|x| x * 255.0).collect();
    energy(&i0, &i1, &flow.u, &flow.v, w, h, lambda)
}

fn energy(i0: &[f32], i1: &[f32], u: &[f32], v: &[f32], w: usize, h: usize, lambda: f32) -> f64 {
    let n = w * h;
    let (mut ux, mut uy, mut vx, mut vy) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    forward_gradient(u, w, h, &mut ux, &mut uy);
    forward_gradient(v, w, h, &mut vx, &mut vy);
    let warped = warp(i1, u, v, w, h);
    (0..n)
        .map(|i| {
            (ux[i].hypot(uy[i]) + vx[i].hypot(vy[i])) as f64 + (lambda * (warped[i] - i0[i]).abs()) as f64
        })
        .sum()
}

/// Solve one pyramid level in place, starting from `(u, v)`.
#[allow(clippy::too_many_arguments)]
fn solve_level(i0: &[f32], i1: &[f32], w: usize, h: usize, u: &mut Vec<f32>, v: &mut Vec<f32>, p: &FlowParams, finest: bool) {
    let n = w * h;
    let (i1x, i1y) = centered_gradient(i1, w, h);
    let l_t = p.lambda * p.theta;
    let taut = p.tau / p.theta;
    let stop = p.epsilon * p.epsilon * n as f32;
    let mut p11 = vec![0f32; n];
    let mut p12 = vec![0f32; n];
    let mut p21 = vec![0f32; n];
    let mut p22 = vec![0f32; n];
    let (mut div1, mut div2) = (vec![0f32; n], vec![0f32; n]);
    let (mut gx, mut gy) = (vec![0f32; n], vec![0f32; n]);
    let mut best = if finest { Some(energy(i0, i1, u, v, w, h, p.lambda)) } else { None };

    for _ in 0..p.warps {
        let (u_start, v_start) = (u.clone(), v.clone());
        let i1w = warp(i1, u, v, w, h);
        let i1wx = warp(&i1x, u, v, w, h);
        let i1wy = warp(&i1y, u, v, w, h);
        let grad: Vec<f32> = i1wx.iter().zip(&i1wy).map(|(a, b)| a * a + b * b).collect();
        let rho_c: Vec<f32> = (0..n).map(|i| i1w[i] - i1wx[i] * u[i] - i1wy[i] * v[i] - i0[i]).collect();

        let mut iter = 0;
        let mut err = f32::INFINITY;
        while err > stop && iter < p.max_iterations {
            iter += 1;
            divergence(&p11, &p12, w, h, &mut div1);
            divergence(&p21, &p22, w, h, &mut div2);
            err = 0.0;
            for i in 0..n {
                // Thresholding step for the auxiliary flow.
                let rho = rho_c[i] + i1wx[i] * u[i] + i1wy[i] * v[i];
                let (d1, d2) = if rho < -l_t * grad[i] {
                    (l_t * i1wx[i], l_t * i1wy[i])
                } else if rho > l_t * grad[i] {
                    (-l_t * i1wx[i], -l_t * i1wy[i])
                } else if grad[i] > 1e-10 {
                    let f = -rho / grad[i];
                    (f * i1wx[i], f * i1wy[i])
                } else {
                    (0.0, 0.0)
                };
                let nu = u[i] + d1 + p.theta * div1[i];
                let nv = v[i] + d2 + p.theta * div2[i];
                err += (nu - u[i]) * (nu - u[i]) + (nv - v[i]) * (nv - v[i]);
                u[i] = nu;
                v[i] = nv;
            }
            forward_gradient(u, w, h, &mut gx, &mut gy);
            for i in 0..n {
                let ng = 1.0 + taut * gx[i].hypot(gy[i]);
                p11[i] = (p11[i] + taut * gx[i]) / ng;
                p12[i] = (p12[i] + taut * gy[i]) / ng;
            }
            forward_gradient(v, w, h, &mut gx, &mut gy);
            for i in 0..n {
                let ng = 1.0 + taut * gx[i].hypot(gy[i]);
                p21[i] = (p21[i] + taut * gx[i]) / ng;
                p22[i] = (p22[i] + taut * gy[i]) / ng;
            }
        }
        if p.median_filter {
            *u = median3x3(u, w, h);
            *v = median3x3(v, w, h);
        }
        // At the finest level a warp is only kept if it does not raise the
        // objective.
        if let Some(prev_e) = best {
            let e = energy(i0, i1, u, v, w, h, p.lambda);
            if e > prev_e {
                *u = u_start;
                *v = v_start;
                break;
            }
            best = Some(e);
        }
    }
}

/// TV-L1 flow from `prev` to `next`: `next(x + flow(x)) ≈ prev(x)`.
pub fn tvl1_flow(prev: &GrayImage, next: &GrayImage, params: &FlowParams) -> Result<FlowField> {
    tvl1_flow_traced(prev, next, params).map(|(f, _)| f)
}

/// Like [`tvl1_flow`], also returning the finest-level energy after the
/// initial upsampled guess and after every accepted warp.
pub fn tvl1_flow_traced(prev: &GrayImage, next: &GrayImage, params: &FlowParams) -> Result<(FlowField, Vec<f64>)> {
    if prev.width != next.width || prev.height != next.height {
        return Err(Error::Contract(format!(
            "frame sizes differ: {}x{} vs {}x{}",
            prev.width, prev.height, next.width, next.height
        )));
    }
    params.validate()?;
    let (w, h) = (prev.width, prev.height);
    if w == 0 || h == 0 {
        return Ok((FlowField::zeros(w, h), vec![]));
    }
    let mut levels = vec![(
        prev.data.iter().map(|x| x * 255.0).collect::<Vec<f32>>(),
        next.data.iter().map(|x| x * 255.0).collect::<Vec<f32>>(),
        w,
        h,
    )];
    while levels.len() < params.scales {
        let (a, b, lw, lh) = levels.last().expect("non-empty");
        let nw = (*lw as f32 * params.scale_factor).round() as usize;
        let nh = (*lh as f32 * params.scale_factor).round() as usize;
        if nw < MIN_LEVEL_SIZE || nh < MIN_LEVEL_SIZE {
            break;
        }
        let level = (resize(a, *lw, *lh, nw, nh), resize(b, *lw, *lh, nw, nh), nw, nh);
        levels.push(level);
    }

    let (_, _, cw, ch) = levels.last().expect("non-empty");
    let mut u = vec![0f32; cw * ch];
    let mut v = vec![0f32; cw * ch];
    let mut trace = Vec::new();
    for s in (0..levels.len()).rev() {
        let (i0, i1, lw, lh) = &levels[s];
        if u.len() != lw * lh {
            let (pw, ph) = (levels[s + 1].2, levels[s + 1].3);
            let (fx, fy) = (*lw as f32 / pw as f32, *lh as f32 / ph as f32);
            u = resize(&u, pw, ph, *lw, *lh).into_iter().map(|x| x * fx).collect();
            v = resize(&v, pw, ph, *lw, *lh).into_iter().map(|x| x * fy).collect();
        }
        if s == 0 {
            trace.push(energy(i0, i1, &u, &v, *lw, *lh, params.lambda));
        }
        solve_level(i0, i1, *lw, *lh, &mut u, &mut v, params, s == 0);
        if s == 0 {
            trace.push(energy(i0, i1, &u, &v, *lw, *lh, params.lambda));
        }
    }
    Ok((FlowField { width: w, height: h, u, v }, trace))
}

/// Clamp each component to `[-20, 20]` then divide by 20.
pub fn truncate_normalize(flow: &FlowField) -> FlowField {
    const BOUND: f32 = 20.0;
    let f = |x: &f32| x.clamp(-BOUND, BOUND) / BOUND;
    FlowField { width: flow.width, height: flow.height, u: flow.u.iter().map(f).collect(), v: flow.v.iter().map(f).collect() }
}

/// Normalized flow for every consecutive frame pair of a clip.
pub fn clip_flow(clip: &ClipContainer, params: &FlowParams, mode: ExecMode) -> Result<FlowSequence> {
    if clip.frames.len() < 2 {
        return Err(Error::Contract(format!("flow needs at least 2 frames, clip has {}", clip.frames.len())));
    }
    let (w, h) = (clip.width as usize, clip.height as usize);
    let gray: Vec<GrayImage> = clip.frames.iter().map(|f| GrayImage::from_rgb8(w, h, f)).collect();
    let fields = mode.map_range(gray.len() - 1, |i| tvl1_flow(&gray[i], &gray[i + 1], params).map(|f| truncate_normalize(&f)));
    Ok(FlowSequence { fields: fields.into_iter().collect::<Result<_>>()?, normalized: true })
}

/// Hue encodes direction, saturation encodes magnitude (full at `√2`, the
/// largest normalized magnitude), value is always 1; zero flow is white.
pub fn flow_to_color(flow: &FlowField) -> Texture {
    let mut pixels = Vec::with_capacity(flow.u.len() * 3);
    for (u, v) in flow.u.iter().zip(&flow.v) {
        let mag = (u.hypot(*v) / std::f32::consts::SQRT_2).min(1.0);
        let hue = v.atan2(*u).rem_euclid(std::f32::consts::TAU) / std::f32::consts::TAU * 6.0;
        let rgb = hsv_to_rgb(hue, mag);
        pixels.extend(rgb.map(|c| (c * 255.0).round() as u8));
    }
    Texture { width: flow.width as u32, height: flow.height as u32, pixels }
}

fn hsv_to_rgb(h6: f32, s: f32) -> [f32; 3] {
    let sector = (h6.floor() as i32).rem_euclid(6);
    let f = h6 - h6.floor();
    let (p, q, t) = (1.0 - s, 1.0 - s * f, 1.0 - s * (1.0 - f));
    match sector {
        0 => [1.0, t, p],
        1 => [q, 1.0, p],
        2 => [p, 1.0, t],
        3 => [p, q, 1.0],
        4 => [t, p, 1.0],
        _ => [1.0, p, q],
    }
}

/// Invert [`flow_to_color`] for one pixel (up to quantization).
pub fn color_to_flow(rgb: [u8; 3]) -> (f32, f32) {
    let c = rgb.map(|x| x as f32 / 255.0);
    let max = c[0].max(c[1]).max(c[2]);
    let min = c[0].min(c[1]).min(c[2]);
    let s = if max > 0.0 { (max - min) / max } else { 0.0 };
    if s == 0.0 {
        return (0.0, 0.0);
    }
    let d = max - min;
    let h6 = if max == c[0] {
        ((c[1] - c[2]) / d).rem_euclid(6.0)
    } else if max == c[1] {
        (c[2] - c[0]) / d + 2.0
    } else {
        (c[0] - c[1]) / d + 4.0
    };
    let angle = h6 / 6.0 * std::f32::consts::TAU;
    let mag = s * std::f32::consts::SQRT_2;
    (mag * angle.cos(), mag * angle.sin())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(w: usize, h: usize, dx: f32) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            let (x, y) = (x as f32 - dx, y as f32);
            0.5 + 0.2 * (x * 0.31).sin() * (y * 0.27).cos() + 0.15 * ((x + 2.0 * y) * 0.11).sin() + 0.1 * (x * 0.07 - y * 0.05).cos()
        })
    }

    #[test]
    fn truncation() {
        let f = FlowField { width: 4, height: 1, u: vec![25.0, -20.0, 0.0, -100.0], v: vec![10.0, 0.0, 0.0, 20.0] };
        let n = truncate_normalize(&f);
        assert_eq!(n.u, vec![1.0, -1.0, 0.0, -1.0]);
        assert_eq!(n.v, vec![0.5, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_warp_is_identity() {
        let img = texture(20, 10, 0.0);
        assert_eq!(warp_image(&img, &FlowField::zeros(20, 10)).unwrap(), img);
    }

    #[test]
    fn constant_warp_on_ramp() {
        let img = GrayImage::from_fn(10, 4, |x, _| x as f32 * 0.1);
        let out = warp_image(&img, &FlowField::constant(10, 4, 1.0, 0.0)).unwrap();
        for y in 0..4 {
            for x in 0..9 {
                assert!((out.at(x, y) - img.at(x + 1, y)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn divergence_is_negative_adjoint() {
        let (w, h) = (7, 5);
        let u: Vec<f32> = (0..w * h).map(|i| ((i * 37 % 11) as f32) * 0.1).collect();
        let px: Vec<f32> = (0..w * h).map(|i| ((i * 13 % 7) as f32) * 0.3 - 1.0).collect();
        let py: Vec<f32> = (0..w * h).map(|i| ((i * 5 % 9) as f32) * 0.2 - 0.7).collect();
        let (mut gx, mut gy) = (vec![0.0; w * h], vec![0.0; w * h]);
        forward_gradient(&u, w, h, &mut gx, &mut gy);
        let mut div = vec![0.0; w * h];
        divergence(&px, &py, w, h, &mut div);
        let lhs: f32 = (0..w * h).map(|i| gx[i] * px[i] + gy[i] * py[i]).sum();
        let rhs: f32 = (0..w * h).map(|i| -u[i] * div[i]).sum();
        assert!((lhs - rhs).abs() < 1e-4, "{lhs} vs {rhs}");
    }

    #[test]
    fn small_shift_recovered() {
        let (a, b) = (texture(64, 64, 0.0), texture(64, 64, 2.0));
        let f = tvl1_flow(&a, &b, &FlowParams::default()).unwrap();
        let mut us: Vec<f32> = (16..48).flat_map(|y| (16..48).map(move |x| (x, y))).map(|(x, y)| f.u[y * 64 + x]).collect();
        us.sort_by(f32::total_cmp);
        assert!((us[us.len() / 2] - 2.0).abs() < 0.3, "median {}", us[us.len() / 2]);
    }

    #[test]
    fn size_mismatch() {
        assert!(matches!(tvl1_flow(&texture(8, 8, 0.0), &texture(9, 8, 0.0), &FlowParams::default()), Err(Error::Contract(_))));
    }

    #[test]
    fn color_wheel() {
        let white = flow_to_color(&FlowField::zeros(3, 2));
        assert!(white.pixels.iter().all(|&p| p == 255));
        let uni = flow_to_color(&FlowField::constant(3, 2, 1.0, 0.0));
        assert!(uni.pixels.chunks(3).all(|p| p == &uni.pixels[..3]));
        for k in 0..16 {
            let a = k as f32 / 16.0 * std::f32::consts::TAU;
            for m in [0.25f32, 0.7, 1.2] {
                let f = FlowField::constant(1, 1, m * a.cos(), m * a.sin());
                let c = flow_to_color(&f);
                let (u, v) = color_to_flow([c.pixels[0], c.pixels[1], c.pixels[2]]);
                assert!((u - f.u[0]).abs() < 0.03 && (v - f.v[0]).abs() < 0.03, "k {k} m {m}: {u},{v}");
            }
        }
    }
}
