//! Structural similarity with an 11x11 Gaussian window (sigma 1.5).
//!
//! Inputs are on the [0, 1] scale (unit dynamic range), stabilizing
//! constants C1 = (0.01)^2 and C2 = (0.03)^2. Statistics are computed over
//! every fully-contained window (valid-mode convolution) and averaged.

use ndarray::Array2;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Normalized 11-tap Gaussian kernel.
pub fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable valid-mode Gaussian filtering.
fn filter_valid(img: &Array2<f64>, kernel: &[f64; SSIM_WINDOW]) -> Array2<f64> {
    let (h, w) = img.dim();
    assert!(h >= SSIM_WINDOW && w >= SSIM_WINDOW, "image smaller than the SSIM window");
    let wh = w - SSIM_WINDOW + 1;
    // Rows first.
    let mut rows = Array2::<f64>::zeros((h, wh));
    for y in 0..h {
        for x in 0..wh {
            let mut s = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                s += kv * img[[y, x + k]];
            }
            rows[[y, x]] = s;
        }
    }
    let hh = h - SSIM_WINDOW + 1;
    let mut out = Array2::<f64>::zeros((hh, wh));
    for y in 0..hh {
        for x in 0..wh {
            let mut s = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                s += kv * rows[[y + k, x]];
            }
            out[[y, x]] = s;
        }
    }
    out
}

/// Mean SSIM between two equal-shape images on the [0, 1] scale.
pub fn ssim_01(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim(), "ssim shape mismatch");
    let kernel = gaussian_kernel();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;

    let mu_a = filter_valid(a, &kernel);
    let mu_b = filter_valid(b, &kernel);
    let aa = filter_valid(&(a * a), &kernel);
    let bb = filter_valid(&(b * b), &kernel);
    let ab = filter_valid(&(a * b), &kernel);

    let mut total = 0.0;
    for ((y, x), &ma) in mu_a.indexed_iter() {
        let mb = mu_b[[y, x]];
        let va = aa[[y, x]] - ma * ma;
        let vb = bb[[y, x]] - mb * mb;
        let cov = ab[[y, x]] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        total += num / den;
    }
    total / mu_a.len() as f64
}
