use super::{ModelError, Result};

/// Architecture hyperparameters of the classifier head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub n_classes: usize,
    pub encoder_layers: usize,
    pub frames: usize,
    pub enc_dim: usize,
    pub model_dim: usize,
    pub tf_layers: usize,
    pub tf_heads: usize,
    pub ff_dim: usize,
    /// Width of the first linear layer in each attention-pooling head.
    pub head_hidden: usize,
    pub dropout_p: f64,
    pub positional_encoding: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_classes: 5,
            encoder_layers: 12,
            frames: 1500,
            enc_dim: 768,
            model_dim: 256,
            tf_layers: 4,
            tf_heads: 4,
            ff_dim: 1024,
            head_hidden: 256,
            dropout_p: 0.1,
            positional_encoding: true,
        }
    }
}

impl ModelConfig {
    /// Small configuration used for gradient checks.
    pub fn reduced() -> Self {
        Self {
            n_classes: 5,
            encoder_layers: 3,
            frames: 8,
            enc_dim: 16,
            model_dim: 8,
            tf_layers: 4,
            tf_heads: 4,
            ff_dim: 32,
            head_hidden: 8,
            dropout_p: 0.1,
            positional_encoding: true,
        }
    }

    /// A little wider than [`ModelConfig::reduced`]; enough capacity to
    /// memorise small batches quickly.
    pub fn small() -> Self {
        Self {
            frames: 16,
            enc_dim: 32,
            model_dim: 32,
            tf_layers: 2,
            ff_dim: 128,
            head_hidden: 32,
            ..Self::reduced()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        if self.n_classes == 0 {
            return fail("n_classes must be at least 1".into());
        }
        if self.tf_heads == 0 || !self.model_dim.is_multiple_of(self.tf_heads) {
            return fail(format!(
                "model_dim {} is not divisible by tf_heads {}",
                self.model_dim, self.tf_heads
            ));
        }
        for (name, v) in [
            ("encoder_layers", self.encoder_layers),
            ("frames", self.frames),
            ("enc_dim", self.enc_dim),
            ("model_dim", self.model_dim),
            ("ff_dim", self.ff_dim),
            ("head_hidden", self.head_hidden),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return fail(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("n_classes", self.n_classes.to_string()),
            ("encoder_layers", self.encoder_layers.to_string()),
            ("frames", self.frames.to_string()),
            ("enc_dim", self.enc_dim.to_string()),
            ("model_dim", self.model_dim.to_string()),
            ("tf_layers", self.tf_layers.to_string()),
            ("tf_heads", self.tf_heads.to_string()),
            ("ff_dim", self.ff_dim.to_string()),
            ("head_hidden", self.head_hidden.to_string()),
            ("dropout_p", self.dropout_p.to_string()),
            ("positional_encoding", self.positional_encoding.to_string()),
        ]
    }

    /// Parses the pairs written by [`ModelConfig::to_pairs`]; every key is required.
    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self> {
        fn parse<V: std::str::FromStr>(get: &dyn Fn(&str) -> Option<String>, key: &str) -> Result<V> {
            let raw = get(key).ok_or_else(|| ModelError::Config(format!("missing model key {key}")))?;
            raw.trim()
                .parse()
                .map_err(|_| ModelError::Config(format!("bad value {raw:?} for {key}")))
        }
        let c = Self {
            n_classes: parse(&get, "n_classes")?,
            encoder_layers: parse(&get, "encoder_layers")?,
            frames: parse(&get, "frames")?,
            enc_dim: parse(&get, "enc_dim")?,
            model_dim: parse(&get, "model_dim")?,
            tf_layers: parse(&get, "tf_layers")?,
            tf_heads: parse(&get, "tf_heads")?,
            ff_dim: parse(&get, "ff_dim")?,
            head_hidden: parse(&get, "head_hidden")?,
            dropout_p: parse(&get, "dropout_p")?,
            positional_encoding: parse(&get, "positional_encoding")?,
        };
        c.validate()?;
        Ok(c)
    }
}
