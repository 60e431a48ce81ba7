use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tensorcore::{Adam, AdamConfig, Tape};

use super::{Mode, ModelError, Result, WhilterModel};
use crate::frontend::LayerStack;
use crate::labels::LabelVector;

/// A training batch of encoder stacks and their labels.
pub type Batch = Vec<(LayerStack, LabelVector)>;

/// Optimizer, dropout RNG and progress counters for one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub adam: Adam<f32>,
    pub rng: ChaCha8Rng,
    pub epoch: u32,
    pub step: u64,
}

impl Trainer {
    pub fn new(model: &WhilterModel<f32>, adam: AdamConfig, seed: u64) -> Self {
        Self {
            adam: Adam::new(model.params(), adam),
            rng: ChaCha8Rng::seed_from_u64(seed),
            epoch: 0,
            step: 0,
        }
    }

    /// Mean BCE over `batch` with dropout active, without touching parameters.
    /// Gradients are accumulated into the parameter store, scaled by `1/B`.
    fn accumulate(&mut self, model: &mut WhilterModel<f32>, batch: &[(LayerStack, LabelVector)]) -> Result<f64> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let scale = 1.0 / batch.len() as f32;
        let mut total = 0.0f64;
        model.params_mut().clear_grads();
        for (i, (stack, y)) in batch.iter().enumerate() {
            let mut tape = Tape::new();
            let vars = model.forward_on_tape(&mut tape, stack, Mode::Train(&mut self.rng))?;
            let loss = model.bce_on_tape(&mut tape, vars.probs, y)?;
            let value = tape.value(loss).data()[0] as f64;
            if !value.is_finite() {
                model.params_mut().clear_grads();
                return Err(ModelError::NonFiniteLoss {
                    loss: value,
                    step: self.step,
                    detail: format!(
                        "batch item {i}: probs {:?}, targets {:?}",
                        tape.value(vars.probs).data(),
                        y.targets()
                    ),
                });
            }
            total += value;
            tape.backward(loss)?.accumulate_into(model.params_mut(), scale);
        }
        Ok(total / batch.len() as f64)
    }

    /// Forward, mean BCE, backward and one Adam update. Returns the
    /// pre-update loss. On error the parameters are left unchanged.
    pub fn train_step(&mut self, model: &mut WhilterModel<f32>, batch: &[(LayerStack, LabelVector)], lr: f64) -> Result<f64> {
        let loss = self.accumulate(model, batch)?;
        let res = self.adam.step(model.params_mut(), lr);
        model.params_mut().clear_grads();
        res.map_err(|e| ModelError::NonFiniteLoss {
            loss,
            step: self.step,
            detail: e.to_string(),
        })?;
        self.step += 1;
        Ok(loss)
    }
}

/// Mean eval-mode BCE over `batch`.
pub fn eval_loss(model: &WhilterModel<f32>, batch: &[(LayerStack, LabelVector)]) -> Result<f64> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut total = 0.0;
    for (stack, y) in batch {
        total += super::bce_loss(&model.forward(stack)?, y);
    }
    Ok(total / batch.len() as f64)
}
