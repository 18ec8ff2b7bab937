//! Softmax scorer, the bounded MAE loss and plain SGD.
//!
//! Two architectures are supported: a linear map `d → C+1` and a
//! one-hidden-layer `tanh` network. Parameters live in a single flat buffer,
//! row-major, in the order `W, b` (linear) or `W1, b1, W2, b2` (MLP).
//!
//! # Binary format
//!
//! [`SoftmaxModel::write_to`] emits, all integers little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 8     | magic `CMPUMDL\0` |
//! | 4     | format version (`1`) |
//! | 1     | architecture tag: `0` linear, `1` MLP |
//! | 4     | input dimension `d` |
//! | 4     | positive classes `C` |
//! | 4     | hidden width `h` (`0` for linear) |
//! | 8     | init seed |
//! | 8     | parameter count `n` |
//! | 8·n   | parameters as IEEE-754 `f64`, flat buffer order |
//!
//! `f32` models widen to `f64` on write, so reading back is bit-exact for both.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pu::OneHotLabel;
use crate::scalar::Scalar;

/// Half-width of the uniform initialization interval.
pub const INIT_SCALE: f64 = 0.1;

const MAGIC: &[u8; 8] = b"CMPUMDL\0";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Linear,
    Mlp { hidden: usize },
}

impl Architecture {
    fn tag(self) -> u8 {
        match self {
            Architecture::Linear => 0,
            Architecture::Mlp { .. } => 1,
        }
    }

    fn hidden(self) -> usize {
        match self {
            Architecture::Linear => 0,
            Architecture::Mlp { hidden } => hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxModel<T> {
    arch: Architecture,
    input_dim: usize,
    num_positive: usize,
    params: Vec<T>,
    seed: u64,
}

/// Intermediate values of one forward pass, reused by the backward pass.
#[derive(Debug, Clone)]
pub struct Activations<T> {
    hidden: Vec<T>,
    pub probs: Vec<T>,
}

/// Gradient with the same flat layout as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer<T> {
    values: Vec<T>,
}

impl<T: Scalar> GradientBuffer<T> {
    pub fn zeros_like(model: &SoftmaxModel<T>) -> Self {
        Self {
            values: vec![T::zero(); model.num_params()],
        }
    }

    pub fn from_values(values: Vec<T>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn scale(&mut self, s: T) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn add_scaled(&mut self, other: &GradientBuffer<T>, s: T) {
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

fn param_count(arch: Architecture, d: usize, k: usize) -> usize {
    match arch {
        Architecture::Linear => k * d + k,
        Architecture::Mlp { hidden: h } => h * d + h + k * h + k,
    }
}

impl<T: Scalar> SoftmaxModel<T> {
    /// All-zero parameters: the output is uniform for every input.
    pub fn zeros(arch: Architecture, input_dim: usize, num_positive: usize) -> Result<Self> {
        Self::check_shape(arch, input_dim, num_positive)?;
        let n = param_count(arch, input_dim, num_positive + 1);
        Ok(Self {
            arch,
            input_dim,
            num_positive,
            params: vec![T::zero(); n],
            seed: 0,
        })
    }

    /// Parameters drawn uniformly from `[-INIT_SCALE, INIT_SCALE]`.
    pub fn init(
        arch: Architecture,
        input_dim: usize,
        num_positive: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut m = Self::zeros(arch, input_dim, num_positive)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut m.params {
            *p = T::of(rng.random_range(-INIT_SCALE..=INIT_SCALE));
        }
        m.seed = seed;
        Ok(m)
    }

    pub fn from_params(
        arch: Architecture,
        input_dim: usize,
        num_positive: usize,
        params: Vec<T>,
    ) -> Result<Self> {
        Self::check_shape(arch, input_dim, num_positive)?;
        let n = param_count(arch, input_dim, num_positive + 1);
        if params.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: params.len(),
            });
        }
        Ok(Self {
            arch,
            input_dim,
            num_positive,
            params,
            seed: 0,
        })
    }

    fn check_shape(arch: Architecture, input_dim: usize, num_positive: usize) -> Result<()> {
        if input_dim == 0 || num_positive == 0 {
            return Err(Error::validation("model needs d >= 1 and C >= 1"));
        }
        if let Architecture::Mlp { hidden: 0 } = arch {
            return Err(Error::validation("MLP hidden width must be >= 1"));
        }
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_positive(&self) -> usize {
        self.num_positive
    }

    pub fn num_outputs(&self) -> usize {
        self.num_positive + 1
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    /// Set the output bias (the last `C+1` parameters).
    pub fn set_output_bias(&mut self, bias: &[T]) -> Result<()> {
        let k = self.num_outputs();
        if bias.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: bias.len(),
            });
        }
        let n = self.params.len();
        self.params[n - k..].copy_from_slice(bias);
        Ok(())
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Softmax output `f(x)` on the `(C+1)`-simplex.
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(self.forward_cached(x)?.probs)
    }

    pub fn forward_cached(&self, x: &[T]) -> Result<Activations<T>> {
        self.check_input(x)?;
        let d = self.input_dim;
        let k = self.num_outputs();
        let (hidden, logits) = match self.arch {
            Architecture::Linear => {
                let (w, b) = self.params.split_at(k * d);
                (Vec::new(), affine(w, b, x))
            }
            Architecture::Mlp { hidden: h } => {
                let (w1, rest) = self.params.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(k * h);
                let hidden: Vec<T> = affine(w1, b1, x).into_iter().map(T::tanh).collect();
                let logits = affine(w2, b2, &hidden);
                (hidden, logits)
            }
        };
        Ok(Activations {
            hidden,
            probs: softmax(&logits),
        })
    }

    /// Accumulate `scale · ∂(logit-gradient · logits)/∂θ` into `grads`.
    pub fn backward(
        &self,
        x: &[T],
        acts: &Activations<T>,
        dlogits: &[T],
        scale: T,
        grads: &mut GradientBuffer<T>,
    ) {
        let d = self.input_dim;
        let k = self.num_outputs();
        let g = &mut grads.values;
        match self.arch {
            Architecture::Linear => {
                let (gw, gb) = g.split_at_mut(k * d);
                accumulate_affine(gw, gb, x, dlogits, scale);
            }
            Architecture::Mlp { hidden: h } => {
                let w2 = &self.params[h * d + h..h * d + h + k * h];
                let (g1, g2) = g.split_at_mut(h * d + h);
                let (gw1, gb1) = g1.split_at_mut(h * d);
                let (gw2, gb2) = g2.split_at_mut(k * h);
                accumulate_affine(gw2, gb2, &acts.hidden, dlogits, scale);
                let mut da = vec![T::zero(); h];
                for (j, daj) in da.iter_mut().enumerate() {
                    let mut s = T::zero();
                    for (c, &dz) in dlogits.iter().enumerate() {
                        s += w2[c * h + j] * dz;
                    }
                    let a = acts.hidden[j];
                    *daj = s * (T::one() - a * a);
                }
                accumulate_affine(gw1, gb1, x, &da, scale);
            }
        }
    }

    /// Serialize in the binary format documented at module level.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&[self.arch.tag()])?;
        for v in [self.input_dim, self.num_positive, self.arch.hidden()] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&p.as_f64().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::validation("not a model file (bad magic)"));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::validation(format!(
                "unsupported model format version {version}"
            )));
        }
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let d = read_u32(&mut r)? as usize;
        let c = read_u32(&mut r)? as usize;
        let h = read_u32(&mut r)? as usize;
        let arch = match tag[0] {
            0 => Architecture::Linear,
            1 => Architecture::Mlp { hidden: h },
            t => return Err(Error::validation(format!("unknown architecture tag {t}"))),
        };
        let seed = read_u64(&mut r)?;
        let n = read_u64(&mut r)? as usize;
        let expected = param_count(arch, d, c + 1);
        if n != expected {
            return Err(Error::DimensionMismatch { expected, got: n });
        }
        let mut params = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            params.push(T::of(f64::from_le_bytes(buf)));
        }
        let mut m = Self::from_params(arch, d, c, params)?;
        m.seed = seed;
        Ok(m)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// `W x + b` with `W` row-major `out × in`.
fn affine<T: Scalar>(w: &[T], b: &[T], x: &[T]) -> Vec<T> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(i, &bi)| {
            let row = &w[i * n_in..(i + 1) * n_in];
            row.iter()
                .zip(x)
                .fold(bi, |acc, (&wij, &xj)| acc + wij * xj)
        })
        .collect()
}

fn accumulate_affine<T: Scalar>(gw: &mut [T], gb: &mut [T], x: &[T], delta: &[T], scale: T) {
    let n_in = x.len();
    for (i, &di) in delta.iter().enumerate() {
        let s = scale * di;
        gb[i] += s;
        for (g, &xj) in gw[i * n_in..(i + 1) * n_in].iter_mut().zip(x) {
            *g += s * xj;
        }
    }
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn check_lengths<T>(p: &[T], y: &OneHotLabel) -> Result<()> {
    if p.len() != y.width() {
        return Err(Error::DimensionMismatch {
            expected: y.width(),
            got: p.len(),
        });
    }
    Ok(())
}

/// `ℓ(p, y) = (1/(C+1)) Σ_i |y_i − p_i|`, bounded in `[0, 2/(C+1)]` on the simplex.
pub fn mae_loss<T: Scalar>(p: &[T], y: &OneHotLabel) -> Result<T> {
    check_lengths(p, y)?;
    let k = T::of(p.len() as f64);
    let s: T = p
        .iter()
        .enumerate()
        .map(|(i, &pi)| (y.get::<T>(i) - pi).abs())
        .sum();
    // on the simplex the sum is at most 2; rounding can overshoot by an ulp
    Ok(s.min(T::of(2.0)) / k)
}

/// Gradient of `mae_loss(softmax(z), y)` with respect to the logits `z`, given `p = softmax(z)`.
///
/// The subgradient of `|t|` at `t = 0` is taken as 0.
pub fn loss_grad_wrt_logits<T: Scalar>(p: &[T], y: &OneHotLabel) -> Result<Vec<T>> {
    check_lengths(p, y)?;
    let k = T::of(p.len() as f64);
    // dℓ/dp_j
    let g: Vec<T> = p
        .iter()
        .enumerate()
        .map(|(j, &pj)| {
            let t = pj - y.get::<T>(j);
            if t > T::zero() {
                T::one() / k
            } else if t < T::zero() {
                -T::one() / k
            } else {
                T::zero()
            }
        })
        .collect();
    let gp: T = g.iter().zip(p).map(|(&gj, &pj)| gj * pj).sum();
    Ok(p.iter().zip(&g).map(|(&pk, &gk)| pk * (gk - gp)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig<T> {
    pub learning_rate: T,
    pub batch_size: usize,
    pub epochs: usize,
    pub l2: T,
    pub seed: u64,
}

impl<T: Scalar> SgdConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= T::zero()) || !self.learning_rate.is_finite() {
            return Err(Error::validation("learning_rate must be finite and >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size must be >= 1"));
        }
        if !(self.l2 >= T::zero()) {
            return Err(Error::validation("l2 must be >= 0"));
        }
        Ok(())
    }
}

/// `θ ← θ − lr · (g + l2 · θ)`.
pub fn sgd_step<T: Scalar>(
    model: &mut SoftmaxModel<T>,
    grads: &GradientBuffer<T>,
    cfg: &SgdConfig<T>,
) -> Result<()> {
    if grads.values.len() != model.params.len() {
        return Err(Error::DimensionMismatch {
            expected: model.params.len(),
            got: grads.values.len(),
        });
    }
    if let Some(i) = grads.values.iter().position(|g| !g.is_finite()) {
        return Err(Error::NumericalDivergence(format!(
            "non-finite gradient at parameter {i}"
        )));
    }
    for (theta, &g) in model.params.iter_mut().zip(&grads.values) {
        *theta = *theta - cfg.learning_rate * (g + cfg.l2 * *theta);
    }
    Ok(())
}
