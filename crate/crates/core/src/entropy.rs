//! Quantization surrogate, factorized prior and bottleneck rate.
//!
//! Every latent channel gets its own monotone scalar network whose output,
//! squashed by a sigmoid, is a cumulative distribution function:
//!
//! ```text
//! h <- x
//! h <- softplus(H_k) h + b_k;  h <- h + tanh(a_k) * tanh(h)   (k < K)
//! cdf(x) = sigmoid(softplus(H_K) h + b_K)
//! ```
//!
//! The probability of an integer bin `v` is `cdf(v + 1/2) - cdf(v - 1/2)`,
//! floored at [`PMF_FLOOR`] before any logarithm.

use crate::error::TensorError;
use crate::rng::Rng;
use crate::tensor::{sigmoid, softplus, GradFn, Real, Tensor, TensorResult};

/// Likelihood lower bound applied before taking logarithms.
pub const PMF_FLOOR: f64 = 1e-9;

/// How the bottleneck is quantized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuantizerMode {
    /// Additive `U[-1/2, 1/2]` noise, gradient passes through unchanged.
    Train,
    /// Round to nearest integer, ties away from zero. Inference only.
    Eval,
}

/// Quantize the bottleneck `c`.
///
/// `Eval` refuses inputs that still carry gradient tracking: rounding has no
/// useful derivative and no straight-through estimator is provided.
pub fn quantize<T: Real>(c: &Tensor<T>, mode: QuantizerMode, rng: &mut Rng) -> TensorResult<Tensor<T>> {
    match mode {
        QuantizerMode::Train => {
            let noise = (0..c.numel()).map(|_| T::lit(rng.uniform() - 0.5)).collect();
            c.add(&Tensor::from_vec(c.shape(), noise)?)
        }
        QuantizerMode::Eval => {
            if c.requires_grad() {
                return Err(TensorError::Contract(
                    "eval-mode quantization is inference-only; detach the latent first".into(),
                ));
            }
            Tensor::from_vec(c.shape(), c.data().iter().map(|v| v.round()).collect())
        }
    }
}

/// Per-channel monotone density model over the latent code.
#[derive(Clone, Debug)]
pub struct FactorizedPrior<T: Real = f64> {
    channels: usize,
    /// Layer widths including the scalar input and output, e.g. `[1, 3, 3, 3, 1]`.
    widths: Vec<usize>,
    /// Raw `H_k`, shape `[C, widths[k+1], widths[k]]`; effective weight is `softplus(H_k)`.
    pub matrices: Vec<Tensor<T>>,
    /// `b_k`, shape `[C, widths[k+1]]`.
    pub biases: Vec<Tensor<T>>,
    /// Raw `a_k` for all but the last layer, shape `[C, widths[k+1]]`; effective mix is `tanh(a_k)`.
    pub factors: Vec<Tensor<T>>,
}

impl<T: Real> FactorizedPrior<T> {
    /// Default-initialized prior with hidden widths `hidden` (e.g. `[3, 3, 3]`).
    ///
    /// `softplus(H_k) = 1 / widths[k+1]`, `b_k ~ U(-1/2, 1/2)`, `a_k = 0`, so
    /// the initial CDF is close to a unit-scale logistic.
    pub fn new(channels: usize, hidden: &[usize], rng: &mut Rng) -> Self {
        let mut widths = vec![1];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let layers = widths.len() - 1;
        let mut matrices = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        let mut factors = Vec::with_capacity(layers - 1);
        for k in 0..layers {
            let (fin, fout) = (widths[k], widths[k + 1]);
            let raw = (1.0 / fout as f64).exp_m1().ln();
            matrices.push(Tensor::parameter(&[channels, fout, fin], vec![T::lit(raw); channels * fout * fin]).unwrap());
            let b = (0..channels * fout).map(|_| T::lit(rng.uniform_in(-0.5, 0.5))).collect();
            biases.push(Tensor::parameter(&[channels, fout], b).unwrap());
            if k + 1 < layers {
                factors.push(Tensor::parameter(&[channels, fout], vec![T::zero(); channels * fout]).unwrap());
            }
        }
        Self { channels, widths, matrices, biases, factors }
    }

    /// Assemble from raw parameters; shapes are validated.
    pub fn from_parts(
        channels: usize,
        hidden: &[usize],
        matrices: Vec<Tensor<T>>,
        biases: Vec<Tensor<T>>,
        factors: Vec<Tensor<T>>,
    ) -> TensorResult<Self> {
        let mut widths = vec![1];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let layers = widths.len() - 1;
        if matrices.len() != layers || biases.len() != layers || factors.len() + 1 != layers {
            return Err(TensorError::dim("factorized_prior", "wrong number of parameter tensors"));
        }
        for k in 0..layers {
            let (fin, fout) = (widths[k], widths[k + 1]);
            let ok = matrices[k].shape() == [channels, fout, fin]
                && biases[k].shape() == [channels, fout]
                && (k + 1 == layers || factors[k].shape() == [channels, fout]);
            if !ok {
                return Err(TensorError::dim("factorized_prior", format!("layer {k} parameter shapes")));
            }
        }
        Ok(Self { channels, widths, matrices, biases, factors })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn hidden(&self) -> &[usize] {
        &self.widths[1..self.widths.len() - 1]
    }

    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for k in 0..self.matrices.len() {
            out.push((format!("prior.matrix{k}"), &self.matrices[k]));
            out.push((format!("prior.bias{k}"), &self.biases[k]));
            if let Some(f) = self.factors.get(k) {
                out.push((format!("prior.factor{k}"), f));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        let mut factors = self.factors.iter_mut();
        for (k, (m, b)) in self.matrices.iter_mut().zip(self.biases.iter_mut()).enumerate() {
            out.push((format!("prior.matrix{k}"), m));
            out.push((format!("prior.bias{k}"), b));
            if let Some(f) = factors.next() {
                out.push((format!("prior.factor{k}"), f));
            }
        }
        out
    }

    fn all_tensors(&self) -> Vec<Tensor<T>> {
        let mut v = Vec::new();
        v.extend(self.matrices.iter().cloned());
        v.extend(self.biases.iter().cloned());
        v.extend(self.factors.iter().cloned());
        v
    }

    fn effective(&self) -> Effective<T> {
        Effective {
            widths: self.widths.clone(),
            matrices: self.matrices.iter().map(|m| m.data().iter().map(|&v| softplus(v)).collect()).collect(),
            biases: self.biases.iter().map(|b| b.to_vec()).collect(),
            factors: self.factors.iter().map(|a| a.data().iter().map(|v| v.tanh()).collect()).collect(),
        }
    }

    fn channel_of(&self, x: &Tensor<T>, op: &'static str) -> TensorResult<usize> {
        match x.shape() {
            [_, c, rest @ ..] if *c == self.channels => Ok(rest.iter().product()),
            _ => Err(TensorError::dim(
                op,
                format!("expected [N, {}, ...] latent, got {:?}", self.channels, x.shape()),
            )),
        }
    }

    /// Cumulative distribution of every element of `x: [N, C, ...]` under its channel's density.
    pub fn cdf(&self, x: &Tensor<T>) -> TensorResult<Tensor<T>> {
        let inner = self.channel_of(x, "cdf")?;
        self.evaluate(x, inner, Kind::Cdf)
    }

    /// Upper-tail mass `1 - cdf(x)` as `sigmoid(-logit)`, not recorded for gradients.
    ///
    /// Far in the upper tail `cdf` rounds to exactly 1 while this stays positive.
    pub fn survival(&self, x: &Tensor<T>) -> TensorResult<Vec<T>> {
        let inner = self.channel_of(x, "survival")?;
        let eff = self.effective();
        let mut scratch = Scratch::new(&eff.widths);
        Ok(x.data()
            .iter()
            .enumerate()
            .map(|(i, &v)| sigmoid(-eff.logit((i / inner) % self.channels, v, &mut scratch)))
            .collect())
    }

    /// Unfloored bin probability `cdf(v + 1/2) - cdf(v - 1/2)`.
    pub fn likelihood(&self, v: &Tensor<T>) -> TensorResult<Tensor<T>> {
        let inner = self.channel_of(v, "likelihood")?;
        self.evaluate(v, inner, Kind::Likelihood)
    }

    /// Bin probability floored at [`PMF_FLOOR`].
    pub fn pmf(&self, v: &Tensor<T>) -> TensorResult<Tensor<T>> {
        self.likelihood(v)?.clamp_min(T::lit(PMF_FLOOR))
    }

    /// Mean code length of `c_tilde: [B, C, h, w]` in bits per image pixel.
    pub fn rate_bits_per_pixel(&self, c_tilde: &Tensor<T>, pixels_per_patch: usize) -> TensorResult<Tensor<T>> {
        let batch = c_tilde.shape().first().copied().unwrap_or(0);
        if batch == 0 || pixels_per_patch == 0 {
            return Err(TensorError::Empty("rate_bits_per_pixel"));
        }
        let scale = -1.0 / (batch * pixels_per_patch) as f64;
        self.pmf(c_tilde)?.log2()?.sum()?.mul_scalar(T::lit(scale))
    }

    fn evaluate(&self, x: &Tensor<T>, inner: usize, kind: Kind) -> TensorResult<Tensor<T>> {
        let eff = self.effective();
        let mut scratch = Scratch::new(&eff.widths);
        let mut out = Vec::with_capacity(x.numel());
        let half = T::lit(0.5);
        for (i, &v) in x.data().iter().enumerate() {
            let c = (i / inner) % self.channels;
            let y = match kind {
                Kind::Cdf => sigmoid(eff.logit(c, v, &mut scratch)),
                Kind::Likelihood => {
                    let lo = eff.logit(c, v - half, &mut scratch);
                    let up = eff.logit(c, v + half, &mut scratch);
                    bin_probability(lo, up)
                }
            };
            out.push(y);
        }
        let mut inputs = vec![x.clone()];
        inputs.extend(self.all_tensors());
        Ok(Tensor::from_op(
            x.shape().to_vec(),
            out,
            PriorFn { inputs, kind, inner, channels: self.channels, layers: self.matrices.len() },
        ))
    }
}

/// `cdf(up) - cdf(lo)`, evaluated on whichever tail keeps precision.
fn bin_probability<T: Real>(lo: T, up: T) -> T {
    if lo + up > T::zero() {
        sigmoid(-lo) - sigmoid(-up)
    } else {
        sigmoid(up) - sigmoid(lo)
    }
}

/// Derivative of the logistic function.
fn dsigmoid<T: Real>(t: T) -> T {
    sigmoid(t) * sigmoid(-t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Cdf,
    Likelihood,
}

/// Parameters after the softplus / tanh maps.
struct Effective<T> {
    widths: Vec<usize>,
    matrices: Vec<Vec<T>>,
    biases: Vec<Vec<T>>,
    factors: Vec<Vec<T>>,
}

/// Per-element activations kept for the backward sweep.
struct Scratch<T> {
    /// Layer inputs `h_k` (width `widths[k]`), one slot per layer.
    h: Vec<Vec<T>>,
    /// Pre-activations `z_k` (width `widths[k+1]`).
    z: Vec<Vec<T>>,
    dh: Vec<T>,
    dz: Vec<T>,
}

impl<T: Real> Scratch<T> {
    fn new(widths: &[usize]) -> Self {
        let layers = widths.len() - 1;
        let max = widths.iter().copied().max().unwrap_or(1);
        Self {
            h: (0..layers).map(|k| vec![T::zero(); widths[k]]).collect(),
            z: (0..layers).map(|k| vec![T::zero(); widths[k + 1]]).collect(),
            dh: vec![T::zero(); max],
            dz: vec![T::zero(); max],
        }
    }
}

impl<T: Real> Effective<T> {
    fn logit(&self, c: usize, x: T, s: &mut Scratch<T>) -> T {
        let layers = self.widths.len() - 1;
        s.h[0][0] = x;
        for k in 0..layers {
            let (fin, fout) = (self.widths[k], self.widths[k + 1]);
            let m = &self.matrices[k][c * fout * fin..][..fout * fin];
            let b = &self.biases[k][c * fout..][..fout];
            for i in 0..fout {
                let mut acc = b[i];
                for j in 0..fin {
                    acc += m[i * fin + j] * s.h[k][j];
                }
                s.z[k][i] = acc;
            }
            if k + 1 < layers {
                let a = &self.factors[k][c * fout..][..fout];
                for i in 0..fout {
                    let z = s.z[k][i];
                    s.h[k + 1][i] = z + a[i] * z.tanh();
                }
            }
        }
        s.z[layers - 1][0]
    }

    /// Backpropagate `dlogit` through the activations left in `s` by [`Self::logit`].
    /// Accumulates effective-parameter gradients and returns `dlogit/dx * dlogit`.
    fn logit_backward(&self, c: usize, dlogit: T, s: &mut Scratch<T>, g: &mut Grads<T>) -> T {
        let layers = self.widths.len() - 1;
        s.dh[0] = dlogit; // gradient w.r.t. layer output, width widths[layers] = 1
        for k in (0..layers).rev() {
            let (fin, fout) = (self.widths[k], self.widths[k + 1]);
            if k + 1 < layers {
                let a = &self.factors[k][c * fout..][..fout];
                let ga = &mut g.factors[k][c * fout..][..fout];
                for i in 0..fout {
                    let t = s.z[k][i].tanh();
                    ga[i] += s.dh[i] * t;
                    s.dz[i] = s.dh[i] * (T::one() + a[i] * (T::one() - t * t));
                }
            } else {
                s.dz[..fout].copy_from_slice(&s.dh[..fout]);
            }
            let m = &self.matrices[k][c * fout * fin..][..fout * fin];
            let gm = &mut g.matrices[k][c * fout * fin..][..fout * fin];
            let gb = &mut g.biases[k][c * fout..][..fout];
            for j in 0..fin {
                s.dh[j] = T::zero();
            }
            for i in 0..fout {
                let dz = s.dz[i];
                gb[i] += dz;
                for j in 0..fin {
                    gm[i * fin + j] += dz * s.h[k][j];
                    s.dh[j] += m[i * fin + j] * dz;
                }
            }
        }
        s.dh[0]
    }
}

struct Grads<T> {
    matrices: Vec<Vec<T>>,
    biases: Vec<Vec<T>>,
    factors: Vec<Vec<T>>,
}

struct PriorFn<T: Real> {
    /// `[x, matrices.., biases.., factors..]`
    inputs: Vec<Tensor<T>>,
    kind: Kind,
    inner: usize,
    channels: usize,
    layers: usize,
}

impl<T: Real> GradFn<T> for PriorFn<T> {
    fn name(&self) -> &'static str {
        match self.kind {
            Kind::Cdf => "prior_cdf",
            Kind::Likelihood => "prior_likelihood",
        }
    }

    fn inputs(&self) -> &[Tensor<T>] {
        &self.inputs
    }

    fn backward(&self, grad_out: &[T]) -> Vec<Option<Vec<T>>> {
        let l = self.layers;
        let x = &self.inputs[0];
        let raw_m = &self.inputs[1..1 + l];
        let raw_b = &self.inputs[1 + l..1 + 2 * l];
        let raw_a = &self.inputs[1 + 2 * l..];
        let mut widths = vec![1];
        for m in raw_m {
            widths.push(m.shape()[1]);
        }
        let eff = Effective {
            widths: widths.clone(),
            matrices: raw_m.iter().map(|m| m.data().iter().map(|&v| softplus(v)).collect()).collect(),
            biases: raw_b.iter().map(|b| b.to_vec()).collect(),
            factors: raw_a.iter().map(|a| a.data().iter().map(|v| v.tanh()).collect()).collect(),
        };
        let mut g = Grads {
            matrices: raw_m.iter().map(|m| vec![T::zero(); m.numel()]).collect(),
            biases: raw_b.iter().map(|b| vec![T::zero(); b.numel()]).collect(),
            factors: raw_a.iter().map(|a| vec![T::zero(); a.numel()]).collect(),
        };
        let mut s = Scratch::new(&widths);
        let mut dx = vec![T::zero(); x.numel()];
        let half = T::lit(0.5);
        for (i, &v) in x.data().iter().enumerate() {
            let go = grad_out[i];
            if go == T::zero() {
                continue;
            }
            let c = (i / self.inner) % self.channels;
            match self.kind {
                Kind::Cdf => {
                    let t = eff.logit(c, v, &mut s);
                    dx[i] = eff.logit_backward(c, go * dsigmoid(t), &mut s, &mut g);
                }
                Kind::Likelihood => {
                    let up = eff.logit(c, v + half, &mut s);
                    let d_up = eff.logit_backward(c, go * dsigmoid(up), &mut s, &mut g);
                    let lo = eff.logit(c, v - half, &mut s);
                    let d_lo = eff.logit_backward(c, -go * dsigmoid(lo), &mut s, &mut g);
                    dx[i] = d_up + d_lo;
                }
            }
        }
        // Chain through the reparameterizations.
        for (gm, m) in g.matrices.iter_mut().zip(raw_m) {
            gm.iter_mut().zip(m.data()).for_each(|(gv, &raw)| *gv *= sigmoid(raw));
        }
        for (ga, a) in g.factors.iter_mut().zip(raw_a) {
            ga.iter_mut().zip(a.data()).for_each(|(gv, &raw)| {
                let t = raw.tanh();
                *gv *= T::one() - t * t;
            });
        }
        let mut out = Vec::with_capacity(self.inputs.len());
        out.push(x.requires_grad().then_some(dx));
        for (t, gv) in raw_m.iter().zip(g.matrices) {
            out.push(t.requires_grad().then_some(gv));
        }
        for (t, gv) in raw_b.iter().zip(g.biases) {
            out.push(t.requires_grad().then_some(gv));
        }
        for (t, gv) in raw_a.iter().zip(g.factors) {
            out.push(t.requires_grad().then_some(gv));
        }
        out
    }
}
