//! Shared inputs for the criterion benchmarks.

use decompress_core::{Rng, Tensor};

/// Batch of `[batch, 1, size, size]` patches with intensities in `[0, 255)`.
pub fn random_patches(batch: usize, size: usize, seed: u64) -> Tensor<f32> {
    let mut rng = Rng::new(seed);
    let data = (0..batch * size * size).map(|_| (255.0 * rng.uniform()) as f32).collect();
    Tensor::from_vec(&[batch, 1, size, size], data).expect("shape matches data")
}

/// Smooth test plane plus AWGN, `size x size`.
pub fn noisy_plane(size: usize, sigma: f64, seed: u64) -> ndarray::Array2<f64> {
    let clean = ndarray::Array2::from_shape_fn((size, size), |(r, c)| {
        let (x, y) = (r as f64 / size as f64, c as f64 / size as f64);
        127.5 + 100.0 * (6.0 * x).sin() * (4.0 * y).cos()
    });
    decompress_core::denoise::add_awgn(&clean, decompress_core::denoise::NoiseSpec { sigma, seed })
}
