//! Generalized divisive normalization.
//!
//! ```text
//! GDN:  y_i = x_i / sqrt(beta_i + sum_j gamma_ij * x_j^2)
//! IGDN: y_i = x_i * sqrt(beta_i + sum_j gamma_ij * x_j^2)
//! ```
//!
//! evaluated independently at every spatial location. The forward pass and
//! its gradient are fused into one recorded op.

use crate::error::TensorError;
use crate::tensor::{gemm, GradFn, MatRef, Real, Tensor, TensorResult};

/// Lower bound on the effective `beta` after every projection.
pub const BETA_FLOOR: f64 = 1e-6;
/// Normalizer values below this trip the numeric guard.
pub const NORM_GUARD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GdnMode {
    Forward,
    Inverse,
}

/// GDN (analysis side) or IGDN (synthesis side) with trainable `beta`/`gamma`.
#[derive(Clone, Debug)]
pub struct GdnLayer<T: Real = f64> {
    pub beta: Tensor<T>,
    pub gamma: Tensor<T>,
    pub mode: GdnMode,
}

impl<T: Real> GdnLayer<T> {
    /// `beta = 1`, `gamma = 0.1 * I`.
    pub fn new(channels: usize, mode: GdnMode) -> Self {
        let mut gamma = vec![T::zero(); channels * channels];
        for c in 0..channels {
            gamma[c * channels + c] = T::lit(0.1);
        }
        Self {
            beta: Tensor::parameter(&[channels], vec![T::one(); channels]).unwrap(),
            gamma: Tensor::parameter(&[channels, channels], gamma).unwrap(),
            mode,
        }
    }

    /// Layer with explicit parameters.
    pub fn with_params(beta: Vec<T>, gamma: Vec<T>, mode: GdnMode) -> TensorResult<Self> {
        let c = beta.len();
        Ok(Self { beta: Tensor::parameter(&[c], beta)?, gamma: Tensor::parameter(&[c, c], gamma)?, mode })
    }

    pub fn channels(&self) -> usize {
        self.beta.numel()
    }

    pub fn forward(&self, x: &Tensor<T>) -> TensorResult<Tensor<T>> {
        gdn_forward(x, self)
    }

    /// Clamp to `beta >= 1e-6`, `gamma >= 0`.
    pub fn project(&mut self) {
        let floor = T::lit(BETA_FLOOR);
        if self.beta.data().iter().any(|v| *v < floor) {
            let data = self.beta.data().iter().map(|v| v.max(floor)).collect();
            self.beta = Tensor::parameter(self.beta.shape(), data).unwrap();
        }
        if self.gamma.data().iter().any(|v| *v < T::zero()) {
            let data = self.gamma.data().iter().map(|v| v.max(T::zero())).collect();
            self.gamma = Tensor::parameter(self.gamma.shape(), data).unwrap();
        }
    }

    pub(crate) fn satisfies_floors(&self) -> bool {
        self.beta.data().iter().all(|v| *v >= T::lit(BETA_FLOOR)) && self.gamma.data().iter().all(|v| *v >= T::zero())
    }
}

struct GdnFn<T: Real> {
    inputs: [Tensor<T>; 3],
    mode: GdnMode,
    batch: usize,
    spatial: usize,
    /// `[C, B*S]` squared inputs and normalizer values.
    x2: Vec<T>,
    norm: Vec<T>,
}

impl<T: Real> GradFn<T> for GdnFn<T> {
    fn name(&self) -> &'static str {
        match self.mode {
            GdnMode::Forward => "gdn",
            GdnMode::Inverse => "igdn",
        }
    }

    fn inputs(&self) -> &[Tensor<T>] {
        &self.inputs
    }

    fn backward(&self, g: &[T]) -> Vec<Option<Vec<T>>> {
        let [x, beta, gamma] = &self.inputs;
        let (batch, spatial) = (self.batch, self.spatial);
        let c = beta.numel();
        let n = batch * spatial;
        let half = T::lit(0.5);

        // q = dloss/dnorm, laid out channel-major; dx_direct = g * r.
        let mut q = vec![T::zero(); c * n];
        let mut dx = vec![T::zero(); x.numel()];
        for b in 0..batch {
            for ch in 0..c {
                let off = (b * c + ch) * spatial;
                let cm = (ch * batch + b) * spatial;
                let xs = &x.data()[off..][..spatial];
                let gs = &g[off..][..spatial];
                let ns = &self.norm[cm..][..spatial];
                let dxs = &mut dx[off..][..spatial];
                let qs = &mut q[cm..][..spatial];
                match self.mode {
                    GdnMode::Forward => {
                        for s in 0..spatial {
                            let r = T::one() / ns[s].sqrt();
                            dxs[s] = gs[s] * r;
                            qs[s] = -half * gs[s] * xs[s] * r * r * r;
                        }
                    }
                    GdnMode::Inverse => {
                        for s in 0..spatial {
                            let root = ns[s].sqrt();
                            dxs[s] = gs[s] * root;
                            qs[s] = half * gs[s] * xs[s] / root;
                        }
                    }
                }
            }
        }

        let dx = x.requires_grad().then(|| {
            let mut gq = vec![T::zero(); c * n];
            gemm(MatRef::new(gamma.data(), c, c).t(), MatRef::new(&q, c, n), T::zero(), &mut gq);
            let two = T::lit(2.0);
            for b in 0..batch {
                for ch in 0..c {
                    let off = (b * c + ch) * spatial;
                    let cm = (ch * batch + b) * spatial;
                    let gqs = &gq[cm..][..spatial];
                    for ((d, xv), gv) in dx[off..][..spatial].iter_mut().zip(&x.data()[off..][..spatial]).zip(gqs) {
                        *d += two * *xv * *gv;
                    }
                }
            }
            dx
        });
        let dbeta = beta.requires_grad().then(|| q.chunks(n).map(|row| row.iter().copied().sum()).collect());
        let dgamma = gamma.requires_grad().then(|| {
            let mut dg = vec![T::zero(); c * c];
            gemm(MatRef::new(&q, c, n), MatRef::new(&self.x2, c, n).t(), T::zero(), &mut dg);
            dg
        });
        vec![dx, dbeta, dgamma]
    }
}

/// Apply GDN or IGDN to `x: [B, C, H, W]`.
pub fn gdn_forward<T: Real>(x: &Tensor<T>, layer: &GdnLayer<T>) -> TensorResult<Tensor<T>> {
    const OP: &str = "gdn";
    let c = layer.channels();
    let (batch, spatial) = match *x.shape() {
        [b, ch, h, w] if ch == c => (b, h * w),
        _ => return Err(TensorError::dim(OP, format!("input {:?} does not have {c} channels", x.shape()))),
    };
    if layer.gamma.shape() != [c, c] {
        return Err(TensorError::dim(OP, format!("gamma {:?} for {c} channels", layer.gamma.shape())));
    }
    let n = batch * spatial;
    let mut x2 = vec![T::zero(); c * n];
    for b in 0..batch {
        for ch in 0..c {
            let src = &x.data()[(b * c + ch) * spatial..][..spatial];
            let dst = &mut x2[(ch * batch + b) * spatial..][..spatial];
            dst.iter_mut().zip(src).for_each(|(d, s)| *d = *s * *s);
        }
    }
    let mut norm = vec![T::zero(); c * n];
    for (row, &bv) in norm.chunks_mut(n).zip(layer.beta.data()) {
        row.iter_mut().for_each(|v| *v = bv);
    }
    gemm(MatRef::new(layer.gamma.data(), c, c), MatRef::new(&x2, c, n), T::one(), &mut norm);
    let guard = T::lit(NORM_GUARD);
    if let Some(bad) = norm.iter().find(|v| !(**v >= guard)) {
        return Err(TensorError::guard(OP, format!("normalizer {bad} below {NORM_GUARD:e}")));
    }

    let mut out = vec![T::zero(); x.numel()];
    for b in 0..batch {
        for ch in 0..c {
            let off = (b * c + ch) * spatial;
            let nrow = &norm[(ch * batch + b) * spatial..][..spatial];
            let xs = &x.data()[off..][..spatial];
            let os = &mut out[off..][..spatial];
            match layer.mode {
                GdnMode::Forward => os.iter_mut().zip(xs).zip(nrow).for_each(|((o, v), nv)| *o = *v / nv.sqrt()),
                GdnMode::Inverse => os.iter_mut().zip(xs).zip(nrow).for_each(|((o, v), nv)| *o = *v * nv.sqrt()),
            }
        }
    }
    let needs_x2 = layer.gamma.requires_grad();
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        GdnFn {
            inputs: [x.clone(), layer.beta.clone(), layer.gamma.clone()],
            mode: layer.mode,
            batch,
            spatial,
            x2: if needs_x2 { x2 } else { Vec::new() },
            norm,
        },
    ))
}
