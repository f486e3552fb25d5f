//! Image I/O and the resampling pipeline feeding training and evaluation.
//!
//! File formats are binary PGM (P5) and PPM (P6) with 8-bit samples; PNG is
//! available behind the `png` feature. Tensors use C×H×W layout with values
//! in [0,1] (metric domain); the diffusion domain is [-1,1].

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::{self, Domain};

/// Decoded 8-bit image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageFile {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl ImageFile {
    /// As a C×H×W tensor in [0,1].
    pub fn to_tensor(&self) -> Tensor {
        let (c, h, w) = (self.channels, self.height, self.width);
        let mut data = vec![0.0f32; c * h * w];
        for i in 0..h {
            for j in 0..w {
                for ch in 0..c {
                    data[(ch * h + i) * w + j] =
                        self.pixels[(i * w + j) * c + ch] as f32 / 255.0;
                }
            }
        }
        Tensor::new_unchecked(vec![c, h, w], data)
    }

    /// Quantize a [0,1] C×H×W tensor to 8-bit.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.rank() != 3 {
            return Err(Error::shape("image tensor", &[3], &[t.rank()]));
        }
        let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        if c != 1 && c != 3 {
            return Err(Error::InvalidArg(format!("images must have 1 or 3 channels, got {c}")));
        }
        let mut pixels = vec![0u8; c * h * w];
        for i in 0..h {
            for j in 0..w {
                for ch in 0..c {
                    let v = t.data()[(ch * h + i) * w + j].clamp(0.0, 1.0);
                    pixels[(i * w + j) * c + ch] = (v * 255.0).round() as u8;
                }
            }
        }
        Ok(ImageFile { width: w, height: h, channels: c, pixels })
    }
}

// ── domain conversions ──────────────────────────────────────────────

/// Pixel [0,1] -> diffusion [-1,1].
pub fn to_diffusion(t: &Tensor) -> Tensor {
    t.map(|v| 2.0 * v - 1.0)
}

/// Diffusion [-1,1] -> pixel [0,1], clamped.
pub fn from_diffusion(t: &Tensor) -> Tensor {
    t.map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0))
}

// ── PNM I/O ─────────────────────────────────────────────────────────

pub fn read_image(path: &Path) -> Result<ImageFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match bytes.first().zip(bytes.get(1)) {
        Some((b'P', b'5')) | Some((b'P', b'6')) => parse_pnm(&bytes, path),
        #[cfg(feature = "png")]
        Some((0x89, b'P')) => read_png(path),
        _ => Err(Error::Format { path: path.to_path_buf(), msg: "unsupported image format".into() }),
    }
}

pub fn write_image(img: &ImageFile, path: &Path) -> Result<()> {
    #[cfg(feature = "png")]
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        return write_png(img, path);
    }
    let magic = match img.channels {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::InvalidArg(format!("cannot encode {c}-channel image"))),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn parse_pnm(bytes: &[u8], path: &Path) -> Result<ImageFile> {
    let bad = |msg: &str| Error::Format { path: path.to_path_buf(), msg: msg.into() };
    let channels = match bytes[1] {
        b'5' => 1,
        b'6' => 3,
        _ => return Err(bad("unknown PNM magic")),
    };
    // header tokens may be separated by whitespace and '#' comments
    let mut pos = 2usize;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated or malformed header"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap();
        *field = text.parse().map_err(|_| bad("header field overflow"))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(bad("zero image dimension"));
    }
    if maxval != 255 {
        return Err(bad("only 8-bit (maxval 255) images are supported"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad("missing separator after header"));
    }
    pos += 1;
    let need = width * height * channels;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(bad(&format!("truncated payload: need {need} bytes, have {}", payload.len())));
    }
    Ok(ImageFile { width, height, channels, pixels: payload[..need].to_vec() })
}

#[cfg(feature = "png")]
fn read_png(path: &Path) -> Result<ImageFile> {
    let img = image::open(path)
        .map_err(|e| Error::Format { path: path.to_path_buf(), msg: e.to_string() })?;
    let rgb = img.to_rgb8();
    Ok(ImageFile {
        width: rgb.width() as usize,
        height: rgb.height() as usize,
        channels: 3,
        pixels: rgb.into_raw(),
    })
}

#[cfg(feature = "png")]
fn write_png(img: &ImageFile, path: &Path) -> Result<()> {
    let (w, h) = (img.width as u32, img.height as u32);
    let res = match img.channels {
        1 => image::GrayImage::from_raw(w, h, img.pixels.clone())
            .expect("sized buffer")
            .save(path),
        3 => image::RgbImage::from_raw(w, h, img.pixels.clone())
            .expect("sized buffer")
            .save(path),
        c => return Err(Error::InvalidArg(format!("cannot encode {c}-channel image"))),
    };
    res.map_err(|e| Error::Format { path: path.to_path_buf(), msg: e.to_string() })
}

// ── bicubic resampling ──────────────────────────────────────────────

/// Catmull-Rom cubic weight (a = -0.5).
fn cubic(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        (1.5 * t - 2.5) * t * t + 1.0
    } else if t < 2.0 {
        ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0
    } else {
        0.0
    }
}

/// Four tap weights for a fractional offset d in [0,1).
pub fn cubic_weights(d: f64) -> [f64; 4] {
    [cubic(d + 1.0), cubic(d), cubic(1.0 - d), cubic(2.0 - d)]
}

/// Separable cubic-convolution resize with half-pixel-center mapping and
/// edge clamping.
pub fn bicubic_resize(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if img.rank() != 3 {
        return Err(Error::shape("bicubic input", &[3], &[img.rank()]));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArg("bicubic output dims must be positive".into()));
    }
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);

    // horizontal pass: (c, h, w) -> (c, h, out_w), f64 accumulation
    let src: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
    let mut mid = vec![0.0f64; c * h * out_w];
    let (xs, xw) = tap_table(w, out_w);
    for ch in 0..c {
        for i in 0..h {
            let row = &src[(ch * h + i) * w..(ch * h + i + 1) * w];
            let orow = &mut mid[(ch * h + i) * out_w..(ch * h + i + 1) * out_w];
            for oj in 0..out_w {
                let base = xs[oj];
                let wt = &xw[oj * 4..oj * 4 + 4];
                orow[oj] = wt[0] * row[base[0]]
                    + wt[1] * row[base[1]]
                    + wt[2] * row[base[2]]
                    + wt[3] * row[base[3]];
            }
        }
    }

    // vertical pass: (c, h, out_w) -> (c, out_h, out_w)
    let mut out = vec![0.0f32; c * out_h * out_w];
    let (ys, yw) = tap_table(h, out_h);
    for ch in 0..c {
        for oi in 0..out_h {
            let base = ys[oi];
            let wt = &yw[oi * 4..oi * 4 + 4];
            let rows: [&[f64]; 4] = [
                &mid[(ch * h + base[0]) * out_w..(ch * h + base[0] + 1) * out_w],
                &mid[(ch * h + base[1]) * out_w..(ch * h + base[1] + 1) * out_w],
                &mid[(ch * h + base[2]) * out_w..(ch * h + base[2] + 1) * out_w],
                &mid[(ch * h + base[3]) * out_w..(ch * h + base[3] + 1) * out_w],
            ];
            let orow = &mut out[(ch * out_h + oi) * out_w..(ch * out_h + oi + 1) * out_w];
            for oj in 0..out_w {
                orow[oj] = (wt[0] * rows[0][oj]
                    + wt[1] * rows[1][oj]
                    + wt[2] * rows[2][oj]
                    + wt[3] * rows[3][oj]) as f32;
            }
        }
    }
    Ok(Tensor::new_unchecked(vec![c, out_h, out_w], out))
}

/// Per-output-coordinate tap indices (edge-clamped) and weights.
fn tap_table(n_in: usize, n_out: usize) -> (Vec<[usize; 4]>, Vec<f64>) {
    let scale = n_in as f64 / n_out as f64;
    let mut taps = Vec::with_capacity(n_out);
    let mut weights = Vec::with_capacity(n_out * 4);
    for o in 0..n_out {
        let x = (o as f64 + 0.5) * scale - 0.5;
        let i0 = x.floor();
        let d = x - i0;
        let clamp = |i: f64| -> usize { (i.max(0.0) as usize).min(n_in - 1) };
        taps.push([clamp(i0 - 1.0), clamp(i0), clamp(i0 + 1.0), clamp(i0 + 2.0)]);
        weights.extend_from_slice(&cubic_weights(d));
    }
    (taps, weights)
}

/// HR -> LR by bicubic downsampling; dims must divide by the scale.
pub fn degrade(hr: &Tensor, scale: usize) -> Result<Tensor> {
    if scale == 0 {
        return Err(Error::InvalidArg("scale must be positive".into()));
    }
    let (h, w) = (hr.shape()[1], hr.shape()[2]);
    if h % scale != 0 || w % scale != 0 {
        return Err(Error::InvalidArg(format!(
            "dims {h}x{w} not divisible by scale {scale}"
        )));
    }
    bicubic_resize(hr, h / scale, w / scale)
}

/// Nearest-neighbor upsampling (the raw-LR condition shape adapter).
pub fn nearest_upsample(img: &Tensor, scale: usize) -> Result<Tensor> {
    if img.rank() != 3 {
        return Err(Error::shape("nearest input", &[3], &[img.rank()]));
    }
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let (oh, ow) = (h * scale, w * scale);
    let mut out = vec![0.0f32; c * oh * ow];
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                out[(ch * oh + i) * ow + j] = img.data()[(ch * h + i / scale) * w + j / scale];
            }
        }
    }
    Ok(Tensor::new_unchecked(vec![c, oh, ow], out))
}

// ── patches ─────────────────────────────────────────────────────────

/// `count` square patches at seeded-uniform positions.
pub fn extract_patches(img: &Tensor, patch: usize, count: usize, seed: u64) -> Result<Vec<Tensor>> {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    if patch > h || patch > w {
        return Err(Error::InvalidArg(format!("patch {patch} exceeds image {h}x{w}")));
    }
    let mut rng = rng::stream(seed, Domain::PatchPos, 0, 0);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let y = rng.gen_range(0..=h - patch);
        let x = rng.gen_range(0..=w - patch);
        out.push(crop(img, c, h, w, y, x, patch));
    }
    Ok(out)
}

/// Aligned HR/LR patch positions for paired training data.
pub fn paired_patch_origin(
    hr_h: usize,
    hr_w: usize,
    patch_hr: usize,
    scale: usize,
    seed: u64,
    stream: u64,
    counter: u64,
) -> (usize, usize) {
    let mut rng = rng::stream(seed, Domain::PatchPos, stream, counter);
    let max_y = (hr_h - patch_hr) / scale;
    let max_x = (hr_w - patch_hr) / scale;
    let y = rng.gen_range(0..=max_y) * scale;
    let x = rng.gen_range(0..=max_x) * scale;
    (y, x)
}

pub fn crop(img: &Tensor, c: usize, h: usize, w: usize, y: usize, x: usize, size: usize) -> Tensor {
    let mut data = vec![0.0f32; c * size * size];
    for ch in 0..c {
        for i in 0..size {
            let src = &img.data()[(ch * h + y + i) * w + x..(ch * h + y + i) * w + x + size];
            data[(ch * size + i) * size..(ch * size + i + 1) * size].copy_from_slice(src);
        }
    }
    Tensor::new_unchecked(vec![c, size, size], data)
}

// ── procedural textures ─────────────────────────────────────────────

/// Band-limited sinusoid mixture plus a couple of soft random edges,
/// normalized into [0.05, 0.95]. Deterministic per seed.
pub fn synth_texture(seed: u64, channels: usize, h: usize, w: usize) -> Tensor {
    let mut rng = rng::stream(seed, Domain::Synth, 0, 0);
    let mut base = vec![0.0f64; h * w];

    // smooth sinusoid field; longest wavelength a third of the image,
    // shortest ~8 px so a x4 downsample keeps most of the energy
    let n_waves = 6;
    for _ in 0..n_waves {
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let wavelength: f64 = rng.gen_range(8.0..(h.max(w) as f64));
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let amp: f64 = rng.gen_range(0.3..1.0);
        let (fx, fy) = (
            angle.cos() * std::f64::consts::TAU / wavelength,
            angle.sin() * std::f64::consts::TAU / wavelength,
        );
        for i in 0..h {
            for j in 0..w {
                base[i * w + j] += amp * (fx * j as f64 + fy * i as f64 + phase).sin();
            }
        }
    }

    // soft edges: sigmoid transitions across random lines
    for _ in 0..2 {
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let (nx, ny) = (angle.cos(), angle.sin());
        let off: f64 = rng.gen_range(0.25..0.75) * (nx * w as f64 + ny * h as f64);
        let amp: f64 = rng.gen_range(0.5..1.2) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let width: f64 = rng.gen_range(1.0..2.5);
        for i in 0..h {
            for j in 0..w {
                let d = (nx * j as f64 + ny * i as f64 - off) / width;
                base[i * w + j] += amp / (1.0 + (-d).exp());
            }
        }
    }

    let lo = base.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = base.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-9);

    let mut data = vec![0.0f32; channels * h * w];
    let tint: Vec<f64> = (0..channels).map(|_| rng.gen_range(-0.04..0.04)).collect();
    for ch in 0..channels {
        for (k, &b) in base.iter().enumerate() {
            let v = 0.05 + 0.9 * (b - lo) / span + tint[ch];
            data[ch * h * w + k] = v.clamp(0.0, 1.0) as f32;
        }
    }
    Tensor::new_unchecked(vec![channels, h, w], data)
}
