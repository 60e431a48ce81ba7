//! The classifier head: learned layer fusion, a pre-norm transformer and one
//! attention-pooling head per class, trained with binary cross-entropy.

mod checkpoint;
mod config;
mod train;

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use train::{eval_loss, Batch, Trainer};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorcore::nn::{LayerNorm, Linear, MultiHeadAttention};
use tensorcore::{ParamId, ParamStore, Real, Tape, Tensor, TensorError, Var};
use thiserror::Error;

use crate::frontend::LayerStack;
use crate::labels::LabelVector;

/// Lower clamp on probabilities inside the loss; the upper clamp is `1 - PROB_CLAMP`.
pub const PROB_CLAMP: f64 = 1e-7;

/// The final linear layer of each head starts at a tenth of the fan-in
/// range so a fresh model predicts close to 0.5 for every class.
const OUT_INIT_SCALE: f64 = 0.1;

#[derive(Error, Debug)]
pub enum ModelError {
    #[error("model config error: {0}")]
    Config(String),
    #[error("input stack {found:?} does not match model {expected:?}")]
    InputShape { found: [usize; 3], expected: [usize; 3] },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("non-finite loss {loss} at step {step}: {detail}")]
    NonFiniteLoss { loss: f64, step: u64, detail: String },
    #[error("non-finite model output")]
    NonFiniteOutput,
    #[error("empty batch")]
    EmptyBatch,
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },
    #[error("checkpoint {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Class probabilities and logits for one clip, in [`crate::Class::ALL`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f32>,
    pub probs: Vec<f32>,
}

/// Dropout behaviour for a forward pass.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

#[derive(Debug, Clone)]
struct Block {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

#[derive(Debug, Clone)]
struct PoolHead {
    hidden: Linear,
    score: Linear,
    out: Linear,
}

/// Nodes of one forward pass recorded on a tape.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub fused: Var,
    pub features: Var,
    /// `[T, 1]` attention distribution per head.
    pub attention: Vec<Var>,
    /// `[1, N]`
    pub logits: Var,
    /// `[1, N]`
    pub probs: Var,
}

#[derive(Debug, Clone)]
pub struct WhilterModel<T: Real = f32> {
    config: ModelConfig,
    params: ParamStore<T>,
    fusion: ParamId,
    input_proj: Linear,
    blocks: Vec<Block>,
    final_ln: LayerNorm,
    heads: Vec<PoolHead>,
    positional: Option<Tensor<T>>,
}

/// `PE[t, 2i] = sin(t / 10000^(2i/d))`, `PE[t, 2i+1] = cos(t / 10000^(2i/d))`.
pub fn sinusoidal_encoding<T: Real>(frames: usize, dim: usize) -> Tensor<T> {
    Tensor::from_fn([frames, dim], |idx| {
        let (t, j) = (idx / dim, idx % dim);
        let pair = (j / 2) as f64;
        let angle = t as f64 / 10000f64.powf(2.0 * pair / dim as f64);
        T::from_f64(if j % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

impl<T: Real> WhilterModel<T> {
    /// Builds a freshly initialized model.
    ///
    /// Fusion weights start at zero (uniform fusion), linear weights are
    /// fan-in uniform (scaled down for the head outputs), biases are zero.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let fusion = p.add("fusion.raw", Tensor::zeros([1, config.encoder_layers]));
        let input_proj = Linear::new(&mut p, "input_proj", config.enc_dim, config.model_dim, &mut rng);
        let mut blocks = Vec::with_capacity(config.tf_layers);
        for i in 0..config.tf_layers {
            let name = format!("block{i}");
            blocks.push(Block {
                ln1: LayerNorm::new(&mut p, &format!("{name}.ln1"), config.model_dim),
                attn: MultiHeadAttention::new(&mut p, &format!("{name}.attn"), config.model_dim, config.tf_heads, &mut rng)?,
                ln2: LayerNorm::new(&mut p, &format!("{name}.ln2"), config.model_dim),
                ff1: Linear::new(&mut p, &format!("{name}.ff1"), config.model_dim, config.ff_dim, &mut rng),
                ff2: Linear::new(&mut p, &format!("{name}.ff2"), config.ff_dim, config.model_dim, &mut rng),
            });
        }
        let final_ln = LayerNorm::new(&mut p, "final_ln", config.model_dim);
        let heads = (0..config.n_classes)
            .map(|n| {
                let head = PoolHead {
                    hidden: Linear::new(&mut p, &format!("head{n}.hidden"), config.model_dim, config.head_hidden, &mut rng),
                    score: Linear::new(&mut p, &format!("head{n}.score"), config.head_hidden, 1, &mut rng),
                    out: Linear::new(&mut p, &format!("head{n}.out"), config.model_dim, 1, &mut rng),
                };
                let w = p.get_mut(head.out.weight).data_mut();
                w.iter_mut().for_each(|x| *x = *x * T::from_f64(OUT_INIT_SCALE));
                head
            })
            .collect();
        let positional = config
            .positional_encoding
            .then(|| sinusoidal_encoding(config.frames, config.model_dim));
        Ok(Self {
            config,
            params: p,
            fusion,
            input_proj,
            blocks,
            final_ln,
            heads,
            positional,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn fusion_param(&self) -> ParamId {
        self.fusion
    }

    /// Same architecture with parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> WhilterModel<U> {
        WhilterModel {
            config: self.config,
            params: self.params.cast(),
            fusion: self.fusion,
            input_proj: self.input_proj,
            blocks: self.blocks.clone(),
            final_ln: self.final_ln,
            heads: self.heads.clone(),
            positional: self.positional.as_ref().map(Tensor::cast),
        }
    }

    pub fn expected_input(&self) -> [usize; 3] {
        [self.config.encoder_layers, self.config.frames, self.config.enc_dim]
    }

    /// Effective fusion weights, `softmax(raw)`.
    pub fn fusion_weights(&self) -> Vec<T> {
        tensorcore::ops::softmax(self.params.get(self.fusion), 1)
            .expect("fusion weights are a [1, L] row")
            .into_data()
    }

    fn check_input(&self, stack: &LayerStack) -> Result<()> {
        if stack.dims() != self.expected_input() {
            return Err(ModelError::InputShape {
                found: stack.dims(),
                expected: self.expected_input(),
            });
        }
        Ok(())
    }

    /// Places the stack on the tape as a `[layers, frames * dim]` constant.
    pub fn stack_constant(&self, tape: &mut Tape<T>, stack: &LayerStack) -> Result<Var> {
        self.check_input(stack)?;
        let t: Tensor<T> = stack.to_matrix().cast();
        Ok(tape.constant(t))
    }

    /// `Σ_l softmax(raw)_l · stack_l`, giving `[frames, enc_dim]`.
    pub fn fuse_on_tape(&self, tape: &mut Tape<T>, stack: Var) -> Result<Var> {
        let raw = tape.param(&self.params, self.fusion);
        let w = tape.softmax(raw, 1)?;
        let flat = tape.matmul(w, stack)?;
        Ok(tape.reshape(flat, [self.config.frames, self.config.enc_dim])?)
    }

    /// Projection to `model_dim`, positional encoding, pre-norm blocks, final norm.
    pub fn prediction_network_on_tape(&self, tape: &mut Tape<T>, fused: Var) -> Result<Var> {
        let p = &self.params;
        let mut x = self.input_proj.forward(tape, p, fused)?;
        if let Some(pe) = &self.positional {
            if tape.shape(x) != pe.shape() {
                return Err(ModelError::InputShape {
                    found: [0, tape.shape(x)[0], tape.shape(x)[1]],
                    expected: [0, pe.shape()[0], pe.shape()[1]],
                });
            }
            let pe = tape.constant(pe.clone());
            x = tape.add(x, pe)?;
        }
        for b in &self.blocks {
            let h = b.ln1.forward(tape, p, x)?;
            let a = b.attn.forward(tape, p, h)?;
            x = tape.add(x, a)?;
            let h = b.ln2.forward(tape, p, x)?;
            let h = b.ff1.forward(tape, p, h)?;
            let h = tape.gelu(h);
            let h = b.ff2.forward(tape, p, h)?;
            x = tape.add(x, h)?;
        }
        Ok(self.final_ln.forward(tape, p, x)?)
    }

    /// Attention pooling for head `n`: returns the `[1, 1]` logit and the
    /// `[T, 1]` attention distribution.
    pub fn pool_head_on_tape(&self, tape: &mut Tape<T>, features: Var, n: usize, mode: &mut Mode) -> Result<(Var, Var)> {
        let head = &self.heads[n];
        let p = &self.params;
        let frames = tape.shape(features)[0];
        let h = head.hidden.forward(tape, p, features)?;
        let mut h = tape.relu(h);
        if let Mode::Train(rng) = mode {
            if self.config.dropout_p > 0.0 {
                let keep = 1.0 - self.config.dropout_p;
                let scale = T::from_f64(1.0 / keep);
                let shape = tape.shape(h).to_vec();
                let mask = Tensor::from_fn(shape, |_| if rng.gen_bool(keep) { scale } else { T::zero() });
                let mask = tape.constant(mask);
                h = tape.mul(h, mask)?;
            }
        }
        let scores = head.score.forward(tape, p, h)?;
        let attn = tape.softmax(scores, 0)?;
        let attn_row = tape.reshape(attn, [1, frames])?;
        let pooled = tape.matmul(attn_row, features)?;
        let mean = tape.mean_rows(features)?;
        let z = tape.add(pooled, mean)?;
        let logit = head.out.forward(tape, p, z)?;
        Ok((logit, attn))
    }

    /// Full forward pass recorded on `tape`.
    pub fn forward_on_tape(&self, tape: &mut Tape<T>, stack: &LayerStack, mut mode: Mode) -> Result<ForwardVars> {
        let s = self.stack_constant(tape, stack)?;
        self.forward_from_matrix(tape, s, &mut mode)
    }

    /// Forward pass from a stack already on the tape as `[layers, frames * dim]`.
    pub fn forward_from_matrix(&self, tape: &mut Tape<T>, stack: Var, mode: &mut Mode) -> Result<ForwardVars> {
        let fused = self.fuse_on_tape(tape, stack)?;
        let features = self.prediction_network_on_tape(tape, fused)?;
        let mut logits = Vec::with_capacity(self.heads.len());
        let mut attention = Vec::with_capacity(self.heads.len());
        for n in 0..self.heads.len() {
            let (l, a) = self.pool_head_on_tape(tape, features, n, mode)?;
            logits.push(l);
            attention.push(a);
        }
        let logits = if logits.len() == 1 { logits[0] } else { tape.concat_cols(&logits)? };
        let probs = tape.sigmoid(logits);
        if !tape.value(logits).is_finite() {
            return Err(ModelError::NonFiniteOutput);
        }
        Ok(ForwardVars {
            fused,
            features,
            attention,
            logits,
            probs,
        })
    }

    /// Mean BCE over classes with probabilities clamped away from 0 and 1.
    pub fn bce_on_tape(&self, tape: &mut Tape<T>, probs: Var, y: &LabelVector) -> Result<Var> {
        let targets: Vec<T> = y.targets()[..self.config.n_classes.min(5)]
            .iter()
            .map(|&v| T::from_f64(v as f64))
            .collect();
        Ok(tape.bce(probs, &targets, T::from_f64(PROB_CLAMP), T::from_f64(1.0 - PROB_CLAMP))?)
    }

    /// Fused `[frames, enc_dim]` features, eval mode.
    pub fn fuse_layers(&self, stack: &LayerStack) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let s = self.stack_constant(&mut tape, stack)?;
        let f = self.fuse_on_tape(&mut tape, s)?;
        Ok(tape.value(f).clone())
    }

    /// `[frames, enc_dim] -> [frames, model_dim]`, eval mode.
    pub fn prediction_network(&self, fused: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let f = tape.constant(fused.clone());
        let out = self.prediction_network_on_tape(&mut tape, f)?;
        Ok(tape.value(out).clone())
    }

    /// Logit and attention weights of head `n` on transformer output `features`, eval mode.
    pub fn attention_pool_head(&self, features: &Tensor<T>, n: usize) -> Result<(T, Vec<T>)> {
        let mut tape = Tape::new();
        let f = tape.constant(features.clone());
        let (logit, attn) = self.pool_head_on_tape(&mut tape, f, n, &mut Mode::Eval)?;
        Ok((tape.value(logit).data()[0], tape.value(attn).data().to_vec()))
    }

    /// Eval-mode prediction.
    pub fn forward(&self, stack: &LayerStack) -> Result<Prediction> {
        let mut tape = Tape::new();
        let v = self.forward_on_tape(&mut tape, stack, Mode::Eval)?;
        Ok(Prediction {
            logits: tape.value(v.logits).data().iter().map(|x| x.as_f64() as f32).collect(),
            probs: tape.value(v.probs).data().iter().map(|x| x.as_f64() as f32).collect(),
        })
    }
}

/// Mean over classes of `-[y ln p + (1 - y) ln(1 - p)]`, `p` clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(pred: &Prediction, y: &LabelVector) -> f64 {
    let targets = y.targets();
    let n = pred.probs.len();
    pred.probs
        .iter()
        .zip(targets.iter())
        .map(|(&p, &t)| {
            let p = (p as f64).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            let t = t as f64;
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / n as f64
}
