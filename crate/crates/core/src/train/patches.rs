//! Overlapping patch extraction from intensity planes.

use ndarray::Array2;

use crate::error::{Error, Result, TensorError};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

/// Top-left corner of one patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PatchIndex {
    pub image: usize,
    pub row: usize,
    pub col: usize,
}

/// Number of placements of a `size` window along an axis of length `extent`.
pub fn placements(extent: usize, size: usize, stride: usize) -> usize {
    if extent < size || stride == 0 {
        0
    } else {
        (extent - size) / stride + 1
    }
}

/// Every aligned patch of a corpus of 2-D intensity planes.
#[derive(Clone, Debug)]
pub struct PatchDataset {
    images: Vec<Array2<f64>>,
    size: usize,
    stride: usize,
    index: Vec<PatchIndex>,
}

impl PatchDataset {
    /// Enumerate patches image by image in row-major corner order.
    pub fn new(images: Vec<Array2<f64>>, size: usize, stride: usize) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::EmptyCorpus("no images supplied".into()));
        }
        if size == 0 || stride == 0 {
            return Err(Error::Config(format!("patch size {size} and stride {stride} must be positive")));
        }
        let mut index = Vec::new();
        for (i, img) in images.iter().enumerate() {
            let (h, w) = img.dim();
            if h < size || w < size {
                return Err(TensorError::geometry(
                    "extract_patches",
                    format!("image {i} is {h}x{w}, smaller than a {size}x{size} patch"),
                )
                .into());
            }
            for r in 0..placements(h, size, stride) {
                for c in 0..placements(w, size, stride) {
                    index.push(PatchIndex { image: i, row: r * stride, col: c * stride });
                }
            }
        }
        Ok(Self { images, size, stride, index })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn patch_size(&self) -> usize {
        self.size
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn images(&self) -> &[Array2<f64>] {
        &self.images
    }

    pub fn indices(&self) -> &[PatchIndex] {
        &self.index
    }

    /// Keep a seeded uniform sample of at most `cap` patches, preserving corner order.
    pub fn subsample(&mut self, cap: usize, rng: &mut Rng) {
        if cap >= self.index.len() {
            return;
        }
        let mut order: Vec<usize> = (0..self.index.len()).collect();
        rng.shuffle(&mut order);
        order.truncate(cap);
        order.sort_unstable();
        self.index = order.into_iter().map(|i| self.index[i]).collect();
    }

    /// Copy one patch, row-major.
    pub fn patch(&self, at: PatchIndex) -> Vec<f64> {
        let img = &self.images[at.image];
        let mut out = Vec::with_capacity(self.size * self.size);
        for r in at.row..at.row + self.size {
            out.extend(img.row(r).iter().skip(at.col).take(self.size));
        }
        out
    }

    /// Stack the patches at `positions` (into [`Self::indices`]) as `[B, 1, P, P]`.
    pub fn batch<T: Real>(&self, positions: &[usize]) -> Tensor<T> {
        let p = self.size;
        let mut data = Vec::with_capacity(positions.len() * p * p);
        for &i in positions {
            data.extend(self.patch(self.index[i]).into_iter().map(T::lit));
        }
        Tensor::from_vec(&[positions.len(), 1, p, p], data).expect("shape matches data")
    }
}

/// Endless reshuffled pass over dataset positions.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    rng: Rng,
}

impl BatchSampler {
    pub fn new(len: usize, rng: Rng) -> Self {
        Self { order: (0..len).collect(), cursor: len, rng }
    }

    /// Next `n` positions; an epoch boundary reshuffles and continues mid-batch.
    pub fn next_batch(&mut self, n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.cursor == self.order.len() {
                self.rng.shuffle(&mut self.order);
                self.cursor = 0;
            }
            let take = (n - out.len()).min(self.order.len() - self.cursor);
            out.extend_from_slice(&self.order[self.cursor..self.cursor + take]);
            self.cursor += take;
        }
        out
    }
}
