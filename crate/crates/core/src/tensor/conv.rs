//! Strided 2-D cross-correlation and its adjoint via im2col + GEMM.
//!
//! Both operators share one geometry: a "wide" map of extent `H x W` and a
//! "narrow" map of extent `Ho x Wo` with `Ho = floor((H + 2p - k)/s) + 1`.
//! `conv2d` goes wide -> narrow, `conv_transpose2d` narrow -> wide.

use super::{gemm, GradFn, MatRef, Real, Tensor, TensorResult};
use crate::error::TensorError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Geometry {
    batch: usize,
    channels: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.batch * self.ho * self.wo
    }

    /// Gather receptive fields of a `[B, C, H, W]` map into `[C*k*k, B*Ho*Wo]`.
    fn im2col<T: Real>(&self, x: &[T]) -> Vec<T> {
        let &Geometry { batch, channels, h, w, ho, wo, k, stride, pad } = self;
        let n = self.col_cols();
        let mut cols = vec![T::zero(); self.col_rows() * n];
        for c in 0..channels {
            for ki in 0..k {
                for kj in 0..k {
                    let row = &mut cols[((c * k + ki) * k + kj) * n..][..n];
                    for b in 0..batch {
                        let plane = &x[(b * channels + c) * h * w..][..h * w];
                        for oi in 0..ho {
                            let ii = (oi * stride + ki) as isize - pad as isize;
                            if ii < 0 || ii >= h as isize {
                                continue;
                            }
                            let src = &plane[ii as usize * w..][..w];
                            let dst = &mut row[(b * ho + oi) * wo..][..wo];
                            for (oj, d) in dst.iter_mut().enumerate() {
                                let jj = (oj * stride + kj) as isize - pad as isize;
                                if jj >= 0 && jj < w as isize {
                                    *d = src[jj as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Scatter-add `[C*k*k, B*Ho*Wo]` columns back onto a `[B, C, H, W]` map.
    fn col2im<T: Real>(&self, cols: &[T]) -> Vec<T> {
        let &Geometry { batch, channels, h, w, ho, wo, k, stride, pad } = self;
        let n = self.col_cols();
        let mut x = vec![T::zero(); batch * channels * h * w];
        for c in 0..channels {
            for ki in 0..k {
                for kj in 0..k {
                    let row = &cols[((c * k + ki) * k + kj) * n..][..n];
                    for b in 0..batch {
                        let plane = &mut x[(b * channels + c) * h * w..][..h * w];
                        for oi in 0..ho {
                            let ii = (oi * stride + ki) as isize - pad as isize;
                            if ii < 0 || ii >= h as isize {
                                continue;
                            }
                            let dst = &mut plane[ii as usize * w..][..w];
                            let src = &row[(b * ho + oi) * wo..][..wo];
                            for (oj, s) in src.iter().enumerate() {
                                let jj = (oj * stride + kj) as isize - pad as isize;
                                if jj >= 0 && jj < w as isize {
                                    dst[jj as usize] += *s;
                                }
                            }
                        }
                    }
                }
            }
        }
        x
    }
}

/// `[B, C, S]` -> `[C, B*S]`.
fn to_channel_major<T: Real>(x: &[T], batch: usize, channels: usize, spatial: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..batch {
        for c in 0..channels {
            out[(c * batch + b) * spatial..][..spatial].copy_from_slice(&x[(b * channels + c) * spatial..][..spatial]);
        }
    }
    out
}

/// `[C, B*S]` -> `[B, C, S]`, adding `bias[c]` when given.
fn from_channel_major<T: Real>(x: &[T], batch: usize, channels: usize, spatial: usize, bias: Option<&[T]>) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let src = &x[(c * batch + b) * spatial..][..spatial];
            let dst = &mut out[(b * channels + c) * spatial..][..spatial];
            match bias {
                Some(bias) => dst.iter_mut().zip(src).for_each(|(d, s)| *d = *s + bias[c]),
                None => dst.copy_from_slice(src),
            }
        }
    }
    out
}

/// Per-channel sums of a `[B, C, S]` gradient.
fn channel_sums<T: Real>(g: &[T], batch: usize, channels: usize, spatial: usize) -> Vec<T> {
    let mut out = vec![T::zero(); channels];
    for b in 0..batch {
        for (c, o) in out.iter_mut().enumerate() {
            *o += g[(b * channels + c) * spatial..][..spatial].iter().copied().sum::<T>();
        }
    }
    out
}

/// Output extent of a strided correlation, if positive.
pub fn conv_output_extent(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || k == 0 || padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Output extent of the adjoint correlation, if positive.
pub fn conv_transpose_output_extent(input: usize, k: usize, stride: usize, pad: usize, output_pad: usize) -> Option<usize> {
    if input == 0 || stride == 0 || k == 0 {
        return None;
    }
    let full = (input - 1) * stride + k + output_pad;
    full.checked_sub(2 * pad).filter(|&e| e > 0)
}

fn check_4d<T: Real>(op: &'static str, t: &Tensor<T>, what: &str) -> TensorResult<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(TensorError::dim(op, format!("{what} must be 4-D, got {:?}", t.shape()))),
    }
}

fn check_bias<T: Real>(op: &'static str, bias: Option<&Tensor<T>>, channels: usize) -> TensorResult<()> {
    match bias {
        Some(b) if b.shape() != [channels] => {
            Err(TensorError::dim(op, format!("bias shape {:?}, expected [{channels}]", b.shape())))
        }
        _ => Ok(()),
    }
}

struct Conv2dFn<T: Real> {
    inputs: Vec<Tensor<T>>,
    geom: Geometry,
    out_channels: usize,
    cols: Vec<T>,
}

impl<T: Real> GradFn<T> for Conv2dFn<T> {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn inputs(&self) -> &[Tensor<T>] {
        &self.inputs
    }

    fn backward(&self, g: &[T]) -> Vec<Option<Vec<T>>> {
        let geom = self.geom;
        let (kc, n, cout) = (geom.col_rows(), geom.col_cols(), self.out_channels);
        let spatial = geom.ho * geom.wo;
        let g_cm = to_channel_major(g, geom.batch, cout, spatial);
        let (x, weight) = (&self.inputs[0], &self.inputs[1]);

        let dx = x.requires_grad().then(|| {
            let mut dcols = vec![T::zero(); kc * n];
            gemm(MatRef::new(weight.data(), cout, kc).t(), MatRef::new(&g_cm, cout, n), T::zero(), &mut dcols);
            geom.col2im(&dcols)
        });
        let dw = weight.requires_grad().then(|| {
            let mut dw = vec![T::zero(); cout * kc];
            gemm(MatRef::new(&g_cm, cout, n), MatRef::new(&self.cols, kc, n).t(), T::zero(), &mut dw);
            dw
        });
        let mut grads = vec![dx, dw];
        if let Some(b) = self.inputs.get(2) {
            grads.push(b.requires_grad().then(|| channel_sums(g, geom.batch, cout, spatial)));
        }
        grads
    }
}

/// Strided zero-padded cross-correlation.
///
/// `input: [B, Cin, H, W]`, `weight: [Cout, Cin, k, k]`, `bias: [Cout]`.
/// Output extent `floor((H + 2*pad - k)/stride) + 1` per spatial axis.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> TensorResult<Tensor<T>> {
    const OP: &str = "conv2d";
    let [batch, cin, h, w] = check_4d(OP, input, "input")?;
    let [cout, wcin, k, k2] = check_4d(OP, weight, "weight")?;
    if wcin != cin {
        return Err(TensorError::dim(OP, format!("input has {cin} channels, weight expects {wcin}")));
    }
    if k != k2 {
        return Err(TensorError::dim(OP, format!("non-square kernel {k}x{k2}")));
    }
    check_bias(OP, bias, cout)?;
    let (ho, wo) = match (conv_output_extent(h, k, stride, pad), conv_output_extent(w, k, stride, pad)) {
        (Some(ho), Some(wo)) => (ho, wo),
        _ => {
            return Err(TensorError::geometry(
                OP,
                format!("{h}x{w} input, kernel {k}, stride {stride}, pad {pad} gives no output"),
            ))
        }
    };
    let geom = Geometry { batch, channels: cin, h, w, ho, wo, k, stride, pad };
    let cols = geom.im2col(input.data());
    let n = geom.col_cols();
    let mut out_cm = vec![T::zero(); cout * n];
    gemm(MatRef::new(weight.data(), cout, geom.col_rows()), MatRef::new(&cols, geom.col_rows(), n), T::zero(), &mut out_cm);
    let data = from_channel_major(&out_cm, batch, cout, ho * wo, bias.map(Tensor::data));
    let mut inputs = vec![input.clone(), weight.clone()];
    inputs.extend(bias.cloned());
    Ok(Tensor::from_op(vec![batch, cout, ho, wo], data, Conv2dFn { inputs, geom, out_channels: cout, cols }))
}

struct ConvTranspose2dFn<T: Real> {
    inputs: Vec<Tensor<T>>,
    geom: Geometry,
    in_channels: usize,
    x_cm: Vec<T>,
}

impl<T: Real> GradFn<T> for ConvTranspose2dFn<T> {
    fn name(&self) -> &'static str {
        "conv_transpose2d"
    }

    fn inputs(&self) -> &[Tensor<T>] {
        &self.inputs
    }

    fn backward(&self, g: &[T]) -> Vec<Option<Vec<T>>> {
        let geom = self.geom;
        let (kc, n, cin) = (geom.col_rows(), geom.col_cols(), self.in_channels);
        let dcols = geom.im2col(g);
        let (x, weight) = (&self.inputs[0], &self.inputs[1]);
        let dx = x.requires_grad().then(|| {
            let mut dx_cm = vec![T::zero(); cin * n];
            gemm(MatRef::new(weight.data(), cin, kc), MatRef::new(&dcols, kc, n), T::zero(), &mut dx_cm);
            from_channel_major(&dx_cm, geom.batch, cin, geom.ho * geom.wo, None)
        });
        let dw = weight.requires_grad().then(|| {
            let mut dw = vec![T::zero(); cin * kc];
            gemm(MatRef::new(&self.x_cm, cin, n), MatRef::new(&dcols, kc, n).t(), T::zero(), &mut dw);
            dw
        });
        let mut grads = vec![dx, dw];
        if let Some(b) = self.inputs.get(2) {
            grads.push(b.requires_grad().then(|| channel_sums(g, geom.batch, geom.channels, geom.h * geom.w)));
        }
        grads
    }
}

/// Adjoint of [`conv2d`] (a.k.a. fractionally strided convolution).
///
/// `input: [B, Cin, H, W]`, `weight: [Cin, Cout, k, k]`, `bias: [Cout]`.
/// Output extent `(H - 1)*stride - 2*pad + k + output_pad`; requires
/// `output_pad < stride`.
pub fn conv_transpose2d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
    output_pad: usize,
) -> TensorResult<Tensor<T>> {
    const OP: &str = "conv_transpose2d";
    let [batch, cin, h, w] = check_4d(OP, input, "input")?;
    let [wcin, cout, k, k2] = check_4d(OP, weight, "weight")?;
    if wcin != cin {
        return Err(TensorError::dim(OP, format!("input has {cin} channels, weight expects {wcin}")));
    }
    if k != k2 {
        return Err(TensorError::dim(OP, format!("non-square kernel {k}x{k2}")));
    }
    if stride == 0 || output_pad >= stride {
        return Err(TensorError::geometry(OP, format!("output_pad {output_pad} must be < stride {stride}")));
    }
    check_bias(OP, bias, cout)?;
    let (oh, ow) = match (
        conv_transpose_output_extent(h, k, stride, pad, output_pad),
        conv_transpose_output_extent(w, k, stride, pad, output_pad),
    ) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(TensorError::geometry(
                OP,
                format!("{h}x{w} input, kernel {k}, stride {stride}, pad {pad} gives no output"),
            ))
        }
    };
    let geom = Geometry { batch, channels: cout, h: oh, w: ow, ho: h, wo: w, k, stride, pad };
    debug_assert_eq!(conv_output_extent(oh, k, stride, pad), Some(h));
    let n = geom.col_cols();
    let kc = geom.col_rows();
    let x_cm = to_channel_major(input.data(), batch, cin, h * w);
    let mut cols = vec![T::zero(); kc * n];
    gemm(MatRef::new(weight.data(), cin, kc).t(), MatRef::new(&x_cm, cin, n), T::zero(), &mut cols);
    let mut data = geom.col2im(&cols);
    if let Some(b) = bias {
        let spatial = oh * ow;
        for (i, chunk) in data.chunks_mut(spatial).enumerate() {
            let bv = b.data()[i % cout];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
    }
    let mut inputs = vec![input.clone(), weight.clone()];
    inputs.extend(bias.cloned());
    let x_cm = if weight.requires_grad() { x_cm } else { Vec::new() };
    Ok(Tensor::from_op(vec![batch, cout, oh, ow], data, ConvTranspose2dFn { inputs, geom, in_channels: cin, x_cm }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::gradcheck::check_gradients;

    fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gaussian()).collect()).unwrap()
    }

    /// Direct-summation oracle for conv2d.
    fn conv2d_naive(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], s: usize, p: usize) -> Vec<f64> {
        let [bn, cin, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let [cout, _, k, _] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
        let ho = (h + 2 * p - k) / s + 1;
        let wo = (wd + 2 * p - k) / s + 1;
        let mut out = vec![0.0; bn * cout * ho * wo];
        for bi in 0..bn {
            for o in 0..cout {
                for i in 0..ho {
                    for j in 0..wo {
                        let mut acc = b[o];
                        for c in 0..cin {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let ii = (i * s + ki) as isize - p as isize;
                                    let jj = (j * s + kj) as isize - p as isize;
                                    if ii < 0 || jj < 0 || ii >= h as isize || jj >= wd as isize {
                                        continue;
                                    }
                                    acc += x.data()[((bi * cin + c) * h + ii as usize) * wd + jj as usize]
                                        * w.data()[((o * cin + c) * k + ki) * k + kj];
                                }
                            }
                        }
                        out[((bi * cout + o) * ho + i) * wo + j] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn all_ones_window_sums_four() {
        let x = Tensor::<f64>::full(&[1, 1, 2, 2], 1.0);
        let w = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, Some(&Tensor::zeros(&[1])), 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.item(), 4.0);
    }

    #[test]
    fn zero_input_gives_bias() {
        let mut rng = Rng::new(1);
        let w = random(&[3, 2, 3, 3], &mut rng);
        let b = Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let y = conv2d(&Tensor::zeros(&[2, 2, 5, 5]), &w, Some(&b), 2, 1).unwrap();
        for (i, v) in y.data().iter().enumerate() {
            assert_eq!(*v, b.data()[(i / 9) % 3]);
        }
        let wt = random(&[2, 3, 3, 3], &mut rng);
        let yt = conv_transpose2d(&Tensor::zeros(&[2, 2, 3, 3]), &wt, Some(&b), 2, 1, 1).unwrap();
        assert_eq!(yt.shape(), &[2, 3, 6, 6]);
        for (i, v) in yt.data().iter().enumerate() {
            assert_eq!(*v, b.data()[(i / 36) % 3]);
        }
    }

    #[test]
    fn extent_laws() {
        let x = Tensor::<f64>::zeros(&[1, 1, 16, 16]);
        let w = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        assert_eq!(conv2d(&x, &w, None, 2, 1).unwrap().shape(), &[1, 1, 8, 8]);
        let z = Tensor::<f64>::zeros(&[1, 1, 8, 8]);
        assert_eq!(conv_transpose2d(&z, &w, None, 2, 1, 1).unwrap().shape(), &[1, 1, 16, 16]);
        assert_eq!(conv_output_extent(16, 3, 2, 1), Some(8));
        assert_eq!(conv_transpose_output_extent(8, 3, 2, 1, 1), Some(16));
    }

    #[test]
    fn matches_direct_summation() {
        let mut rng = Rng::new(5);
        for &(h, wd, s, p, k) in &[(7, 5, 2, 1, 3), (6, 6, 1, 0, 3), (5, 8, 3, 2, 2), (4, 4, 2, 1, 3)] {
            let x = random(&[2, 3, h, wd], &mut rng);
            let w = random(&[4, 3, k, k], &mut rng);
            let b: Vec<f64> = (0..4).map(|_| rng.gaussian()).collect();
            let bt = Tensor::from_vec(&[4], b.clone()).unwrap();
            let y = conv2d(&x, &w, Some(&bt), s, p).unwrap();
            let want = conv2d_naive(&x, &w, &b, s, p);
            for (a, e) in y.data().iter().zip(&want) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn errors() {
        let x = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::<f64>::zeros(&[1, 3, 3, 3]);
        assert!(matches!(conv2d(&x, &w, None, 1, 0), Err(TensorError::Dimension { .. })));
        let w = Tensor::<f64>::zeros(&[1, 2, 5, 5]);
        assert!(matches!(conv2d(&x, &w, None, 1, 0), Err(TensorError::Geometry { .. })));
        let w = Tensor::<f64>::zeros(&[2, 1, 3, 3]);
        assert!(matches!(conv_transpose2d(&x, &w, None, 2, 1, 2), Err(TensorError::Geometry { .. })));
        let one = Tensor::<f64>::zeros(&[1, 2, 1, 1]);
        let w = Tensor::<f64>::zeros(&[2, 1, 1, 1]);
        assert!(matches!(conv_transpose2d(&one, &w, None, 1, 1, 0), Err(TensorError::Geometry { .. })));
    }

    #[test]
    fn transpose_is_adjoint() {
        let mut rng = Rng::new(9);
        for &(h, s, p, k) in &[(16, 2, 1, 3), (8, 2, 1, 3), (4, 2, 1, 3), (9, 3, 1, 3), (7, 1, 1, 3), (10, 2, 0, 2)] {
            let x = random(&[2, 3, h, h], &mut rng);
            let w = random(&[4, 3, k, k], &mut rng);
            let y_shape = conv2d(&x, &w, None, s, p).unwrap().shape().to_vec();
            let ho = y_shape[2];
            let op = h + 2 * p - k - (ho - 1) * s; // recovers the wide extent exactly
            let y = random(&y_shape, &mut rng);
            let lhs: f64 = conv2d(&x, &w, None, s, p).unwrap().data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
            let back = conv_transpose2d(&y, &w, None, s, p, op).unwrap();
            assert_eq!(back.shape(), x.shape());
            let rhs: f64 = x.data().iter().zip(back.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() <= 1e-10, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = Rng::new(21);
        let x = random(&[2, 2, 5, 5], &mut rng);
        let w = random(&[3, 2, 3, 3], &mut rng);
        let b = random(&[3], &mut rng);
        let probe = random(&[2, 3, 3, 3], &mut rng);
        let r = check_gradients(
            &[x, w, b],
            |p| conv2d(&p[0], &p[1], Some(&p[2]), 2, 1).unwrap().mul(&probe).unwrap().sum().unwrap(),
            1e-5,
        );
        assert!(r.max_rel_err <= 1e-4, "{r:?}");
    }

    #[test]
    fn conv_transpose_gradients_match_finite_differences() {
        let mut rng = Rng::new(22);
        let x = random(&[2, 3, 3, 3], &mut rng);
        let w = random(&[3, 2, 3, 3], &mut rng);
        let b = random(&[2], &mut rng);
        let probe = random(&[2, 2, 6, 6], &mut rng);
        let r = check_gradients(
            &[x, w, b],
            |p| conv_transpose2d(&p[0], &p[1], Some(&p[2]), 2, 1, 1).unwrap().mul(&probe).unwrap().sum().unwrap(),
            1e-5,
        );
        assert!(r.max_rel_err <= 1e-4, "{r:?}");
    }
}
