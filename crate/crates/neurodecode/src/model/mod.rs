//! The decoding architecture: spatial attention → subject layer → conv stack
//! → attention pooling per word, then a sentence-level transformer refining
//! the stacked word embeddings.

mod build;
mod checkpoint;

pub use build::{
    append_decode, attention_pool, conv_stack, decode_word_batch, epoch_input, fourier_features,
    spatial_attention, subject_layer, transformer_pass, SentenceItem,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};

use crate::diffcore::{Tensor, TensorMap};
use crate::error::{Error, Result};
use crate::util::{gauss_vec, seeded_rng};

/// Architecture hyperparameters. `d_out` doubles as the transformer width
/// (the transformer operates in embedding space).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub n_sensors: usize,
    pub hidden_channels: usize,
    pub conv_kernel: usize,
    pub conv_dilations: Vec<usize>,
    pub d_out: usize,
    pub tf_layers: usize,
    pub tf_heads: usize,
    pub tf_mlp_mult: usize,
    pub attention_dropout: f64,
    /// Number of Fourier harmonics per axis for the spatial attention maps.
    pub fourier_k: usize,
    pub rotary_base: f64,
    pub use_transformer: bool,
    /// Causal (left-to-right) sentence attention; bidirectional when false.
    pub causal: bool,
    pub ln_eps: f64,
}

impl ModelConfig {
    /// Desk-scale defaults: 32 hidden channels, 3 dilated conv blocks,
    /// a 2-layer / 4-head transformer at the embedding width.
    pub fn desk_default(n_sensors: usize, d_out: usize) -> Self {
        ModelConfig {
            n_sensors,
            hidden_channels: 32,
            conv_kernel: 3,
            conv_dilations: vec![1, 2, 4],
            d_out,
            tf_layers: 2,
            tf_heads: 4,
            tf_mlp_mult: 4,
            attention_dropout: 0.1,
            fourier_k: 4,
            rotary_base: 10_000.0,
            use_transformer: true,
            causal: false,
            ln_eps: 1e-5,
        }
    }

    /// Full-scale preset (16 layers × 16 heads at width 1024). A config
    /// preset only — desk tests never run it.
    pub fn paper_scale(n_sensors: usize) -> Self {
        ModelConfig {
            n_sensors,
            hidden_channels: 270,
            conv_kernel: 3,
            conv_dilations: vec![1, 2, 4, 8, 16],
            d_out: 1024,
            tf_layers: 16,
            tf_heads: 16,
            tf_mlp_mult: 4,
            attention_dropout: 0.1,
            fourier_k: 8,
            rotary_base: 10_000.0,
            use_transformer: true,
            causal: false,
            ln_eps: 1e-5,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_out / self.tf_heads
    }

    pub fn n_fourier(&self) -> usize {
        2 * self.fourier_k * self.fourier_k
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_out % self.tf_heads != 0 {
            return Err(Error::Model(format!(
                "heads ({}) must divide the embedding width ({})",
                self.tf_heads, self.d_out
            )));
        }
        if self.head_dim() % 2 != 0 {
            return Err(Error::Model(
                "rotary attention needs an even head dimension".into(),
            ));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(Error::Model("conv kernel width must be odd".into()));
        }
        if !(0.0..1.0).contains(&self.attention_dropout) {
            return Err(Error::Model("attention dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// All learnable tensors, their declaration order (checkpoint layout), and
/// the registered subject ids.
#[derive(Debug, Clone)]
pub struct DecoderParams {
    pub tensors: TensorMap,
    pub order: Vec<String>,
    pub subject_ids: Vec<String>,
}

/// Initial log-temperature: t = exp(t') = 10.
pub const TPRIME_INIT: f64 = 2.302585092994046; // ln 10
/// Initial sigmoid bias under the `t·M − b` sign convention. Negative pairs
/// start near zero loss: σ(−(t·M − b)) ≈ 1 requires b ≫ t·M at init.
pub const BIAS_INIT: f64 = 10.0;

impl DecoderParams {
    /// Seeded initialization; subject transforms start at identity, pooling
    /// starts as an exact time mean (zero scores, identity values).
    pub fn init(cfg: &ModelConfig, subject_ids: Vec<String>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if subject_ids.is_empty() {
            return Err(Error::Model("at least one subject must be registered".into()));
        }
        let mut rng = seeded_rng(seed);
        let c = cfg.hidden_channels;
        let d = cfg.d_out;
        let h = d * cfg.tf_mlp_mult;
        let s = subject_ids.len();
        let mut tensors = TensorMap::new();
        let mut order = Vec::new();
        let push = |order: &mut Vec<String>,
                        tensors: &mut TensorMap,
                        name: String,
                        t: Tensor| {
            order.push(name.clone());
            tensors.insert(name, t);
        };

        let f = cfg.n_fourier();
        let gauss_scaled = |rng: &mut rand_chacha::ChaCha8Rng, shape: Vec<usize>, sigma: f64| {
            let n: usize = shape.iter().product();
            Tensor::new(
                shape,
                gauss_vec(rng, n).into_iter().map(|v| v * sigma).collect(),
            )
            .expect("init shape")
        };

        push(
            &mut order,
            &mut tensors,
            "spatial.w".into(),
            gauss_scaled(&mut rng, vec![c, f], 0.5),
        );
        let mut subj = Tensor::zeros(vec![s, c, c]);
        for si in 0..s {
            for i in 0..c {
                subj.data_mut()[si * c * c + i * c + i] = 1.0;
            }
        }
        push(&mut order, &mut tensors, "subject.mats".into(), subj);
        for (i, _dil) in cfg.conv_dilations.iter().enumerate() {
            let k = cfg.conv_kernel;
            push(
                &mut order,
                &mut tensors,
                format!("conv{i}.w"),
                gauss_scaled(&mut rng, vec![c, c, k], (2.0 / (c * k) as f64).sqrt()),
            );
            push(&mut order, &mut tensors, format!("conv{i}.b"), Tensor::zeros(vec![c]));
            push(
                &mut order,
                &mut tensors,
                format!("conv{i}.gamma"),
                Tensor::new(vec![c], vec![1.0; c]).unwrap(),
            );
            push(&mut order, &mut tensors, format!("conv{i}.beta"), Tensor::zeros(vec![c]));
        }
        push(
            &mut order,
            &mut tensors,
            "proj.w".into(),
            gauss_scaled(&mut rng, vec![d, c], (1.0 / c as f64).sqrt()),
        );
        push(&mut order, &mut tensors, "proj.b".into(), Tensor::zeros(vec![d]));
        push(&mut order, &mut tensors, "pool.score".into(), Tensor::zeros(vec![d]));
        push(&mut order, &mut tensors, "pool.value".into(), Tensor::eye(d));
        let resid_scale = (1.0 / (2.0 * cfg.tf_layers.max(1) as f64)).sqrt();
        for l in 0..cfg.tf_layers {
            push(
                &mut order,
                &mut tensors,
                format!("tf{l}.ln1.gamma"),
                Tensor::new(vec![d], vec![1.0; d]).unwrap(),
            );
            push(&mut order, &mut tensors, format!("tf{l}.ln1.beta"), Tensor::zeros(vec![d]));
            for w in ["wq", "wk", "wv"] {
                push(
                    &mut order,
                    &mut tensors,
                    format!("tf{l}.attn.{w}"),
                    gauss_scaled(&mut rng, vec![d, d], (1.0 / d as f64).sqrt()),
                );
            }
            push(
                &mut order,
                &mut tensors,
                format!("tf{l}.attn.wo"),
                gauss_scaled(&mut rng, vec![d, d], (1.0 / d as f64).sqrt() * resid_scale),
            );
            push(
                &mut order,
                &mut tensors,
                format!("tf{l}.ln2.gamma"),
                Tensor::new(vec![d], vec![1.0; d]).unwrap(),
            );
            push(&mut order, &mut tensors, format!("tf{l}.ln2.beta"), Tensor::zeros(vec![d]));
            push(
                &mut order,
                &mut tensors,
                format!("tf{l}.mlp.w1"),
                gauss_scaled(&mut rng, vec![d, h], (1.0 / d as f64).sqrt()),
            );
            push(&mut order, &mut tensors, format!("tf{l}.mlp.b1"), Tensor::zeros(vec![h]));
            push(
                &mut order,
                &mut tensors,
                format!("tf{l}.mlp.w2"),
                gauss_scaled(&mut rng, vec![h, d], (1.0 / h as f64).sqrt() * resid_scale),
            );
            push(&mut order, &mut tensors, format!("tf{l}.mlp.b2"), Tensor::zeros(vec![d]));
        }
        push(
            &mut order,
            &mut tensors,
            "tf.final.gamma".into(),
            Tensor::new(vec![d], vec![1.0; d]).unwrap(),
        );
        push(&mut order, &mut tensors, "tf.final.beta".into(), Tensor::zeros(vec![d]));
        push(&mut order, &mut tensors, "loss.tprime".into(), Tensor::scalar(TPRIME_INIT));
        push(&mut order, &mut tensors, "loss.bias".into(), Tensor::scalar(BIAS_INIT));

        Ok(DecoderParams {
            tensors,
            order,
            subject_ids,
        })
    }

    pub fn subject_index(&self, id: &str) -> Result<usize> {
        self.subject_ids
            .iter()
            .position(|s| s == id)
            .ok_or_else(|| Error::UnknownSubject(id.to_string()))
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn tprime(&self) -> f64 {
        self.tensors["loss.tprime"].item()
    }

    pub fn bias(&self) -> f64 {
        self.tensors["loss.bias"].item()
    }

    /// Total scalar parameter count.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(|t| t.numel()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.is_finite())
    }
}

#[cfg(test)]
mod tests;
