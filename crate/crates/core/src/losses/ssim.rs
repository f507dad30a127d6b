//! Windowed SSIM with an 11×11 Gaussian window (σ = 1.5) and reflect padding.

use crate::scalar::Scalar;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; WINDOW] {
    let r = (WINDOW / 2) as f64;
    let mut taps = [0.0; WINDOW];
    for (k, t) in taps.iter_mut().enumerate() {
        let d = k as f64 - r;
        *t = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Reflect-101 index (`d c b | a b c d | c b a`), repeated for short axes.
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Separable blur of a single-channel plane.
fn blur<T: Scalar>(src: &[T], w: usize, h: usize, taps: &[f64; WINDOW]) -> Vec<T> {
    let r = (WINDOW / 2) as isize;
    let mut tmp = vec![T::zero(); w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = T::zero();
            for (k, &t) in taps.iter().enumerate() {
                acc += src[y * w + reflect(x as isize + k as isize - r, w)] * t;
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![T::zero(); w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = T::zero();
            for (k, &t) in taps.iter().enumerate() {
                acc += tmp[reflect(y as isize + k as isize - r, h) * w + x] * t;
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Transpose of [`blur`].
fn blur_adjoint(g: &[f64], w: usize, h: usize, taps: &[f64; WINDOW]) -> Vec<f64> {
    let r = (WINDOW / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let v = g[y * w + x];
            for (k, &t) in taps.iter().enumerate() {
                tmp[reflect(y as isize + k as isize - r, h) * w + x] += v * t;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let v = tmp[y * w + x];
            for (k, &t) in taps.iter().enumerate() {
                out[y * w + reflect(x as isize + k as isize - r, w)] += v * t;
            }
        }
    }
    out
}

fn plane<T: Copy>(data: &[T], channels: usize, c: usize) -> Vec<T> {
    data.iter().skip(c).step_by(channels).copied().collect()
}

/// Mean SSIM over pixels and channels of two interleaved images.
pub fn ssim_generic<T: Scalar>(x: &[f64], y: &[T], w: usize, h: usize, channels: usize) -> T {
    let taps = gaussian_taps();
    let mut total = T::zero();
    for c in 0..channels {
        let xp = plane(x, channels, c);
        let yp = plane(y, channels, c);
        let lift: Vec<T> = xp.iter().map(|&v| T::cst(v)).collect();
        let xx: Vec<T> = xp.iter().map(|&v| T::cst(v * v)).collect();
        let yy: Vec<T> = yp.iter().map(|&v| v * v).collect();
        let xy: Vec<T> = xp.iter().zip(&yp).map(|(&a, &b)| b * a).collect();
        let mx = blur(&lift, w, h, &taps);
        let my = blur(&yp, w, h, &taps);
        let exx = blur(&xx, w, h, &taps);
        let eyy = blur(&yy, w, h, &taps);
        let exy = blur(&xy, w, h, &taps);
        for p in 0..w * h {
            let sxx = exx[p] - mx[p] * mx[p];
            let syy = eyy[p] - my[p] * my[p];
            let sxy = exy[p] - mx[p] * my[p];
            let num = (mx[p] * my[p] * 2.0 + C1) * (sxy * 2.0 + C2);
            let den = (mx[p] * mx[p] + my[p] * my[p] + C1) * (sxx + syy + C2);
            total += num / den;
        }
    }
    total / (w * h * channels) as f64
}

/// SSIM between two interleaved `f64` images.
pub fn ssim_images(x: &[f64], y: &[f64], w: usize, h: usize, channels: usize) -> f64 {
    ssim_generic(x, y, w, h, channels)
}

/// Gradient of mean SSIM with respect to the second image, scaled by `scale`.
pub fn ssim_backward(x: &[f64], y: &[f64], w: usize, h: usize, channels: usize, scale: f64) -> Vec<f64> {
    let taps = gaussian_taps();
    let n = (w * h * channels) as f64;
    let mut grad = vec![0.0; x.len()];
    for c in 0..channels {
        let xp = plane(x, channels, c);
        let yp = plane(y, channels, c);
        let xx: Vec<f64> = xp.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = yp.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = xp.iter().zip(&yp).map(|(a, b)| a * b).collect();
        let mx = blur(&xp, w, h, &taps);
        let my = blur(&yp, w, h, &taps);
        let exx = blur(&xx, w, h, &taps);
        let eyy = blur(&yy, w, h, &taps);
        let exy = blur(&xy, w, h, &taps);
        let mut g_my = vec![0.0; w * h];
        let mut g_eyy = vec![0.0; w * h];
        let mut g_exy = vec![0.0; w * h];
        for p in 0..w * h {
            let sxx = exx[p] - mx[p] * mx[p];
            let syy = eyy[p] - my[p] * my[p];
            let sxy = exy[p] - mx[p] * my[p];
            let a1 = 2.0 * mx[p] * my[p] + C1;
            let a2 = 2.0 * sxy + C2;
            let b1 = mx[p] * mx[p] + my[p] * my[p] + C1;
            let b2 = sxx + syy + C2;
            let s = a1 * a2 / (b1 * b2);
            let g = scale / n;
            let d_sxy = g * 2.0 * s / a2;
            let d_syy = -g * s / b2;
            g_my[p] = g * s * (2.0 * mx[p] / a1 - 2.0 * my[p] / b1) - d_sxy * mx[p] - 2.0 * d_syy * my[p];
            g_eyy[p] = d_syy;
            g_exy[p] = d_sxy;
        }
        let a = blur_adjoint(&g_my, w, h, &taps);
        let b = blur_adjoint(&g_eyy, w, h, &taps);
        let cc = blur_adjoint(&g_exy, w, h, &taps);
        for p in 0..w * h {
            grad[p * channels + c] = a[p] + 2.0 * yp[p] * b[p] + xp[p] * cc[p];
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct 2-D windowed SSIM, no separability, for cross-checking.
    fn naive_ssim(x: &[f64], y: &[f64], w: usize, h: usize) -> f64 {
        let taps = gaussian_taps();
        let r = (WINDOW / 2) as isize;
        let mut total = 0.0;
        for py in 0..h {
            for px in 0..w {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for ky in 0..WINDOW {
                    for kx in 0..WINDOW {
                        let wt = taps[ky] * taps[kx];
                        let sy = reflect(py as isize + ky as isize - r, h);
                        let sx = reflect(px as isize + kx as isize - r, w);
                        let (a, b) = (x[sy * w + sx], y[sy * w + sx]);
                        mx += wt * a;
                        my += wt * b;
                        xx += wt * a * a;
                        yy += wt * b * b;
                        xy += wt * a * b;
                    }
                }
                let (sxx, syy, sxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
                total += (2.0 * mx * my + C1) * (2.0 * sxy + C2) / ((mx * mx + my * my + C1) * (sxx + syy + C2));
            }
        }
        total / (w * h) as f64
    }

    #[test]
    fn reflect_101() {
        let idx: Vec<usize> = (-3..8).map(|i| reflect(i, 5)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
        assert_eq!(reflect(-7, 3), 1);
        assert_eq!(reflect(4, 1), 0);
    }

    #[test]
    fn taps_normalized_symmetric() {
        let t = gaussian_taps();
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for k in 0..WINDOW {
            assert_eq!(t[k], t[WINDOW - 1 - k]);
        }
    }

    #[test]
    fn matches_naive_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (w, h) = (17, 9);
        let x: Vec<f64> = (0..w * h).map(|_| rng.random()).collect();
        let y: Vec<f64> = (0..w * h).map(|_| rng.random()).collect();
        let a = ssim_images(&x, &y, w, h, 1);
        let b = naive_ssim(&x, &y, w, h);
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn matches_scipy_gaussian_filter_mirror() {
        // scipy.ndimage.gaussian_filter(sigma=1.5, mode="mirror", truncate=5/1.5), frozen
        let (w, h, c) = (16, 12, 3);
        let x: Vec<f64> = (0..w * h * c).map(|i| ((i * 37) % 101) as f64 / 101.0).collect();
        let y: Vec<f64> = (0..w * h * c).map(|i| ((i * 53 + 7) % 97) as f64 / 97.0).collect();
        assert!((ssim_images(&x, &y, w, h, c) - 0.04927438435829377).abs() < 1e-12);
    }

    #[test]
    fn identical_is_one() {
        let x: Vec<f64> = (0..64 * 3).map(|i| (i % 7) as f64 / 7.0).collect();
        assert!((ssim_images(&x, &x, 8, 8, 3) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_images_closed_form() {
        let (a, b) = (0.3, 0.7);
        let x = vec![a; 100];
        let y = vec![b; 100];
        let expect = (2.0 * a * b + C1) / (a * a + b * b + C1);
        assert!((ssim_images(&x, &y, 10, 10, 1) - expect).abs() < 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (w, h, c) = (7, 6, 2);
        let x: Vec<f64> = (0..w * h * c).map(|_| rng.random()).collect();
        let y: Vec<f64> = (0..w * h * c).map(|_| rng.random()).collect();
        let g = ssim_backward(&x, &y, w, h, c, 1.0);
        let eps = 1e-6;
        for i in 0..y.len() {
            let mut yp = y.clone();
            yp[i] += eps;
            let mut ym = y.clone();
            ym[i] -= eps;
            let fd = (ssim_images(&x, &yp, w, h, c) - ssim_images(&x, &ym, w, h, c)) / (2.0 * eps);
            assert!((fd - g[i]).abs() < 1e-8, "{i}: {fd} vs {}", g[i]);
        }
    }
}
