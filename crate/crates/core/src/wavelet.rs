//! Reference denoiser: orthonormal Haar pyramid with BayesShrink soft thresholding.

use ndarray::{s, Array2, ArrayView2};

use crate::error::{Result, TensorError};

pub const DEFAULT_LEVELS: usize = 3;

/// Detail subbands of one level. `lh` is low-pass across columns and
/// high-pass across rows (horizontal edges), `hl` the converse.
#[derive(Clone, Debug, PartialEq)]
pub struct DetailBands {
    pub lh: Array2<f64>,
    pub hl: Array2<f64>,
    pub hh: Array2<f64>,
}

impl DetailBands {
    pub fn bands(&self) -> [&Array2<f64>; 3] {
        [&self.lh, &self.hl, &self.hh]
    }

    pub fn bands_mut(&mut self) -> [&mut Array2<f64>; 3] {
        [&mut self.lh, &mut self.hl, &mut self.hh]
    }
}

/// `details[0]` is the finest level.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletPyramid {
    pub details: Vec<DetailBands>,
    pub ll: Array2<f64>,
}

impl WaveletPyramid {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    pub fn coefficient_count(&self) -> usize {
        self.ll.len() + self.details.iter().map(|d| 3 * d.lh.len()).sum::<usize>()
    }

    pub fn energy(&self) -> f64 {
        let sq = |a: &Array2<f64>| a.iter().map(|v| v * v).sum::<f64>();
        sq(&self.ll) + self.details.iter().flat_map(|d| d.bands()).map(sq).sum::<f64>()
    }
}

fn split(x: ArrayView2<'_, f64>) -> (Array2<f64>, DetailBands) {
    let (h, w) = (x.nrows() / 2, x.ncols() / 2);
    let mut ll = Array2::zeros((h, w));
    let mut lh = Array2::zeros((h, w));
    let mut hl = Array2::zeros((h, w));
    let mut hh = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let (a, b) = (x[[2 * i, 2 * j]], x[[2 * i, 2 * j + 1]]);
            let (c, d) = (x[[2 * i + 1, 2 * j]], x[[2 * i + 1, 2 * j + 1]]);
            ll[[i, j]] = (a + b + c + d) / 2.0;
            lh[[i, j]] = (a + b - c - d) / 2.0;
            hl[[i, j]] = (a - b + c - d) / 2.0;
            hh[[i, j]] = (a - b - c + d) / 2.0;
        }
    }
    (ll, DetailBands { lh, hl, hh })
}

fn merge(ll: &Array2<f64>, d: &DetailBands) -> Array2<f64> {
    let (h, w) = ll.dim();
    let mut x = Array2::zeros((2 * h, 2 * w));
    for i in 0..h {
        for j in 0..w {
            let (s, v, u, t) = (ll[[i, j]], d.lh[[i, j]], d.hl[[i, j]], d.hh[[i, j]]);
            x[[2 * i, 2 * j]] = (s + v + u + t) / 2.0;
            x[[2 * i, 2 * j + 1]] = (s + v - u - t) / 2.0;
            x[[2 * i + 1, 2 * j]] = (s - v + u - t) / 2.0;
            x[[2 * i + 1, 2 * j + 1]] = (s - v - u + t) / 2.0;
        }
    }
    x
}

/// `levels`-deep orthonormal Haar analysis; extents must be multiples of `2^levels`.
pub fn haar_forward(image: &Array2<f64>, levels: usize) -> Result<WaveletPyramid> {
    let (h, w) = image.dim();
    let m = 1usize << levels;
    if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
        return Err(TensorError::geometry("haar_forward", format!("{h}x{w} is not a multiple of 2^{levels}")).into());
    }
    let mut ll = image.clone();
    let mut details = Vec::with_capacity(levels);
    for _ in 0..levels {
        let (next, d) = split(ll.view());
        details.push(d);
        ll = next;
    }
    Ok(WaveletPyramid { details, ll })
}

pub fn haar_inverse(p: &WaveletPyramid) -> Array2<f64> {
    p.details.iter().rev().fold(p.ll.clone(), |ll, d| merge(&ll, d))
}

/// Half-sample symmetric extension to `(h, w)`.
pub fn symmetric_pad(x: &Array2<f64>, h: usize, w: usize) -> Array2<f64> {
    let (h0, w0) = x.dim();
    let reflect = |i: usize, n: usize| {
        let period = 2 * n;
        let k = i % period;
        if k < n { k } else { period - 1 - k }
    };
    Array2::from_shape_fn((h, w), |(i, j)| x[[reflect(i, h0), reflect(j, w0)]])
}

/// `sign(c)·max(|c| − t, 0)`.
pub fn soft_threshold(c: f64, t: f64) -> f64 {
    c.signum() * (c.abs() - t).max(0.0)
}

/// BayesShrink threshold of one subband; the subband variance is its mean square.
pub fn bayes_threshold(band: &Array2<f64>, sigma: f64) -> f64 {
    let var = band.iter().map(|v| v * v).sum::<f64>() / band.len() as f64;
    let sigma_x = (var - sigma * sigma).max(0.0).sqrt();
    if sigma_x == 0.0 {
        band.iter().fold(0.0, |m, v| m.max(v.abs()))
    } else {
        sigma * sigma / sigma_x
    }
}

/// Shrink every detail subband of the pyramid in place.
pub fn shrink(p: &mut WaveletPyramid, sigma: f64) {
    for d in &mut p.details {
        for band in d.bands_mut() {
            let t = bayes_threshold(band, sigma);
            band.mapv_inplace(|c| soft_threshold(c, t));
        }
    }
}

/// Pad, transform, shrink, invert, crop and clamp to `[0, 255]`.
pub fn bayes_shrink_denoise(noisy: &Array2<f64>, sigma: f64, levels: usize) -> Result<Array2<f64>> {
    Ok(bayes_shrink_unclamped(noisy, sigma, levels)?.mapv(|v| v.clamp(0.0, 255.0)))
}

/// [`bayes_shrink_denoise`] without the final clamp.
pub fn bayes_shrink_unclamped(noisy: &Array2<f64>, sigma: f64, levels: usize) -> Result<Array2<f64>> {
    if !(sigma >= 0.0) {
        return Err(crate::Error::Config(format!("sigma {sigma} must be non-negative")));
    }
    let (h, w) = noisy.dim();
    if h == 0 || w == 0 {
        return Err(TensorError::Empty("bayes_shrink_denoise").into());
    }
    let m = 1usize << levels;
    let padded = symmetric_pad(noisy, h.div_ceil(m) * m, w.div_ceil(m) * m);
    let mut p = haar_forward(&padded, levels)?;
    shrink(&mut p, sigma);
    Ok(haar_inverse(&p).slice(s![..h, ..w]).to_owned())
}

/// Piecewise-constant test scene: flat background, an off-centre bright
/// rectangle, a mid-grey disc and a dark bar, all on the `[0, 255]` scale.
pub fn piecewise_constant_phantom(size: usize) -> Array2<f64> {
    let n = size as f64;
    Array2::from_shape_fn((size, size), |(r, c)| {
        let (y, x) = (r as f64 / n, c as f64 / n);
        if (x - 0.65).powi(2) + (y - 0.6).powi(2) < 0.2f64.powi(2) {
            120.0
        } else if (0.15..0.45).contains(&x) && (0.1..0.5).contains(&y) {
            210.0
        } else if (0.1..0.9).contains(&x) && (0.85..0.92).contains(&y) {
            20.0
        } else {
            70.0
        }
    })
}
