//! Distortion metrics on [0,1]-range images: MSE, PSNR, SSIM.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// PSNR/SSIM/MSE bundle; `psnr_db` is +inf for identical images.
#[derive(Debug, Clone, Copy)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub mse: f64,
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.mse(b)
}

/// 10·log10(1/MSE) for [0,1] images; +inf marks identical inputs.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    let e = a.mse(b).map_err(|_| Error::shape("psnr", a.shape(), b.shape()))?;
    if e == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / e).log10())
    }
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Mean local SSIM over valid 11×11 Gaussian windows, channel-averaged.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("ssim", a.shape(), b.shape()));
    }
    if a.rank() != 3 {
        return Err(Error::shape("ssim rank", &[3], &[a.rank()]));
    }
    let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArg(format!(
            "ssim needs min dim >= {SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let kernel = gaussian_kernel();
    let mut total = 0.0;
    for ch in 0..c {
        let pa = plane(a, ch, h, w);
        let pb = plane(b, ch, h, w);
        // separable filtering of the five moment maps
        let mu_a = filter2(&pa, h, w, &kernel);
        let mu_b = filter2(&pb, h, w, &kernel);
        let aa = filter2(&mulv(&pa, &pa), h, w, &kernel);
        let bb = filter2(&mulv(&pb, &pb), h, w, &kernel);
        let ab = filter2(&mulv(&pa, &pb), h, w, &kernel);

        let (vh, vw) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
        let mut acc = 0.0;
        for i in 0..vh {
            for j in 0..vw {
                let idx = i * vw + j;
                let (ma, mb) = (mu_a[idx], mu_b[idx]);
                let sa = aa[idx] - ma * ma;
                let sb = bb[idx] - mb * mb;
                let sab = ab[idx] - ma * mb;
                let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * sab + SSIM_C2);
                let den = (ma * ma + mb * mb + SSIM_C1) * (sa + sb + SSIM_C2);
                acc += num / den;
            }
        }
        total += acc / (vh * vw) as f64;
    }
    Ok(total / c as f64)
}

pub fn report(a: &Tensor, b: &Tensor) -> Result<MetricReport> {
    Ok(MetricReport { psnr_db: psnr(a, b)?, ssim: ssim(a, b)?, mse: a.mse(b)? })
}

fn plane(t: &Tensor, ch: usize, h: usize, w: usize) -> Vec<f64> {
    t.data()[ch * h * w..(ch + 1) * h * w]
        .iter()
        .map(|&v| v as f64)
        .collect()
}

fn mulv(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

/// Valid-mode separable Gaussian filter: (h, w) -> (h-10, w-10).
fn filter2(src: &[f64], h: usize, w: usize, kernel: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let vw = w - SSIM_WINDOW + 1;
    let mut horiz = vec![0.0; h * vw];
    for i in 0..h {
        for j in 0..vw {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                acc += kv * src[i * w + j + k];
            }
            horiz[i * vw + j] = acc;
        }
    }
    let vh = h - SSIM_WINDOW + 1;
    let mut out = vec![0.0; vh * vw];
    for i in 0..vh {
        for j in 0..vw {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                acc += kv * horiz[(i + k) * vw + j];
            }
            out[i * vw + j] = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::synth_texture;
    use crate::rng::{normal_tensor, Domain};

    #[test]
    fn identical_images_report_infinite_psnr() {
        let a = synth_texture(1, 3, 16, 16);
        assert!(psnr(&a, &a).unwrap().is_infinite());
    }

    #[test]
    fn quarter_mse_is_six_db() {
        let a = Tensor::zeros(&[1, 8, 8]);
        let b = Tensor::full(&[1, 8, 8], 0.5);
        let p = psnr(&a, &b).unwrap();
        assert!((p - 6.0206).abs() < 1e-3, "{p}");
    }

    #[test]
    fn psnr_matches_double_loop_oracle() {
        let a = synth_texture(2, 3, 12, 12);
        let b = synth_texture(3, 3, 12, 12);
        let mut acc = 0.0f64;
        for (x, y) in a.data().iter().zip(b.data()) {
            acc += (*x as f64 - *y as f64).powi(2);
        }
        let want = 10.0 * (a.numel() as f64 / acc).log10();
        let got = psnr(&a, &b).unwrap();
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }

    #[test]
    fn psnr_shape_mismatch_is_error() {
        assert!(psnr(&Tensor::zeros(&[1, 8, 8]), &Tensor::zeros(&[1, 8, 9])).is_err());
    }

    #[test]
    fn ssim_self_is_one() {
        let a = synth_texture(4, 3, 16, 16);
        let s = ssim(&a, &a).unwrap();
        assert!((s - 1.0).abs() < 1e-9, "{s}");
    }

    #[test]
    fn ssim_of_inverted_binary_image_is_negative() {
        let mut data = vec![0.0f32; 16 * 16];
        for (i, v) in data.iter_mut().enumerate() {
            *v = if (i / 16 + i % 16) % 2 == 0 { 1.0 } else { 0.0 };
        }
        let a = Tensor::new_unchecked(vec![1, 16, 16], data.clone());
        let b = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &b).unwrap() < 0.0);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Tensor::zeros(&[1, 10, 16]);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn ssim_symmetry() {
        let a = synth_texture(5, 3, 20, 20);
        let b = synth_texture(6, 3, 20, 20);
        let ab = ssim(&a, &b).unwrap();
        let ba = ssim(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        let p1 = psnr(&a, &b).unwrap();
        let p2 = psnr(&b, &a).unwrap();
        assert!((p1 - p2).abs() < 1e-9);
    }

    #[test]
    fn ssim_matches_direct_formula_oracle() {
        // direct windowed double loop, no separable optimization
        let a = synth_texture(7, 1, 18, 18);
        let b = {
            let n = normal_tensor(8, Domain::Synth, 1, 0, &[1, 18, 18]);
            a.zip(&n, |x, e| (x + 0.1 * e).clamp(0.0, 1.0)).unwrap()
        };
        let got = ssim(&a, &b).unwrap();

        let kernel = gaussian_kernel();
        let (h, w) = (18usize, 18usize);
        let (vh, vw) = (h - 10, w - 10);
        let mut acc = 0.0;
        for wy in 0..vh {
            for wx in 0..vw {
                let (mut ma, mut mb) = (0.0, 0.0);
                let mut wsum = 0.0;
                for dy in 0..11 {
                    for dx in 0..11 {
                        let g = kernel[dy] * kernel[dx];
                        wsum += g;
                        ma += g * a.data()[(wy + dy) * w + wx + dx] as f64;
                        mb += g * b.data()[(wy + dy) * w + wx + dx] as f64;
                    }
                }
                ma /= wsum;
                mb /= wsum;
                let (mut sa, mut sb, mut sab) = (0.0, 0.0, 0.0);
                for dy in 0..11 {
                    for dx in 0..11 {
                        let g = kernel[dy] * kernel[dx] / wsum;
                        let xa = a.data()[(wy + dy) * w + wx + dx] as f64 - ma;
                        let xb = b.data()[(wy + dy) * w + wx + dx] as f64 - mb;
                        sa += g * xa * xa;
                        sb += g * xb * xb;
                        sab += g * xa * xb;
                    }
                }
                acc += ((2.0 * ma * mb + SSIM_C1) * (2.0 * sab + SSIM_C2))
                    / ((ma * ma + mb * mb + SSIM_C1) * (sa + sb + SSIM_C2));
            }
        }
        let want = acc / (vh * vw) as f64;
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }

    #[test]
    fn psnr_monotone_under_growing_noise() {
        let a = synth_texture(9, 3, 16, 16);
        let noise = normal_tensor(10, Domain::Synth, 2, 0, &[3, 16, 16]);
        let mut last = f64::INFINITY;
        for amp in [0.01f32, 0.02, 0.05, 0.1] {
            let b = a.zip(&noise, |x, e| (x + amp * e).clamp(0.0, 1.0)).unwrap();
            let p = psnr(&a, &b).unwrap();
            assert!(p < last, "amp {amp}: {p} !< {last}");
            last = p;
        }
    }
}
