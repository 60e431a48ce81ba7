//! Parameterized building blocks recorded onto a [`Tape`].

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Uniform in `±1/sqrt(fan_in)`.
pub fn fan_in_uniform<T: Real>(rng: &mut impl Rng, shape: [usize; 2]) -> Tensor<T> {
    let bound = 1.0 / (shape[0] as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(-bound..=bound)))
}

/// `y = x·W + b` with `W` stored as `[in, out]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        let weight = store.add(format!("{name}.weight"), fan_in_uniform(rng, [d_in, d_out]));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([d_out]));
        Self { weight, bias, d_in, d_out }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::full([dim], T::one())),
            bias: store.add(format!("{name}.bias"), Tensor::zeros([dim])),
            eps: 1e-5,
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layer_norm(x, g, b, T::from_f64(self.eps))
    }
}

/// Multi-head scaled dot-product attention with input and output projections.
#[derive(Debug, Clone, Copy)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub n_heads: usize,
    pub dim: usize,
}

/// Output of an attention call together with the per-head weight matrices.
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub output: Var,
    pub weights: Vec<Var>,
}

impl MultiHeadAttention {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize, n_heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if n_heads == 0 || !dim.is_multiple_of(n_heads) {
            return Err(TensorError::Config(format!("model dim {dim} is not divisible by {n_heads} heads")));
        }
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            out: Linear::new(store, &format!("{name}.out"), dim, dim, rng),
            n_heads,
            dim,
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        Ok(self.attend(tape, store, x, x, x)?.output)
    }

    /// Attention of `query[Tq, d]` over `key[Tk, d]` / `value[Tk, d]`.
    pub fn attend<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, query: Var, key: Var, value: Var) -> Result<AttentionOutput> {
        let head_dim = self.dim / self.n_heads;
        let q = self.q.forward(tape, store, query)?;
        let k = self.k.forward(tape, store, key)?;
        let v = self.v.forward(tape, store, value)?;
        let scale = T::from_f64(1.0 / (head_dim as f64).sqrt());
        let mut heads = Vec::with_capacity(self.n_heads);
        let mut weights = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = tape.slice_cols(q, h * head_dim, head_dim)?;
            let kh = tape.slice_cols(k, h * head_dim, head_dim)?;
            let vh = tape.slice_cols(v, h * head_dim, head_dim)?;
            let scores = tape.matmul_t(qh, kh)?;
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax(scores, 1)?;
            heads.push(tape.matmul(attn, vh)?);
            weights.push(attn);
        }
        let cat = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
        let output = self.out.forward(tape, store, cat)?;
        Ok(AttentionOutput { output, weights })
    }
}
