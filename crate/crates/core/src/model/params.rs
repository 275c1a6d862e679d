use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numcore::{Rng, Stream, Tensor};

/// Shape of the decoder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_head: usize,
    pub max_seq: usize,
    pub ffn_mult: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 256,
            d_model: 64,
            n_layers: 4,
            n_heads: 4,
            d_head: 16,
            max_seq: 128,
            ffn_mult: 4,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_head", self.d_head),
            ("max_seq", self.max_seq),
            ("ffn_mult", self.ffn_mult),
        ] {
            ensure!(v >= 1, Input, "model.{name} must be >= 1");
        }
        ensure!(
            self.d_model == self.n_heads * self.d_head,
            Input,
            "model.d_model {} != n_heads {} x d_head {}",
            self.d_model,
            self.n_heads,
            self.d_head
        );
        Ok(())
    }

    pub fn d_ff(&self) -> usize {
        self.d_model * self.ffn_mult
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let (d, f) = (self.d_model, self.d_ff());
        let mut out = vec![
            ("tok_emb".to_string(), vec![self.vocab_size, d]),
            ("pos_emb".to_string(), vec![self.max_seq, d]),
        ];
        for l in 0..self.n_layers {
            for (name, shape) in [
                ("ln1.gain", vec![1, d]),
                ("ln1.bias", vec![1, d]),
                ("attn.w_q", vec![d, d]),
                ("attn.b_q", vec![1, d]),
                // No key bias: each softmax row is invariant to it.
                ("attn.w_k", vec![d, d]),
                ("attn.w_v", vec![d, d]),
                ("attn.b_v", vec![1, d]),
                ("attn.w_o", vec![d, d]),
                ("attn.b_o", vec![1, d]),
                ("ln2.gain", vec![1, d]),
                ("ln2.bias", vec![1, d]),
                ("ffn.w_in", vec![d, f]),
                ("ffn.b_in", vec![1, f]),
                ("ffn.w_out", vec![f, d]),
                ("ffn.b_out", vec![1, d]),
            ] {
                out.push((format!("block{l}.{name}"), shape));
            }
        }
        out.push(("ln_f.gain".to_string(), vec![1, d]));
        out.push(("ln_f.bias".to_string(), vec![1, d]));
        out
    }

    pub fn n_params(&self) -> usize {
        self.layout()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

pub(crate) const TOK_EMB: usize = 0;
pub(crate) const POS_EMB: usize = 1;
pub(crate) const PER_BLOCK: usize = 15;

/// Offsets of one block's tensors inside [`Params::tensors`].
#[derive(Clone, Copy)]
pub(crate) struct BlockIdx {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub w_q: usize,
    pub b_q: usize,
    pub w_k: usize,
    pub w_v: usize,
    pub b_v: usize,
    pub w_o: usize,
    pub b_o: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w_in: usize,
    pub b_in: usize,
    pub w_out: usize,
    pub b_out: usize,
}

pub(crate) fn block_idx(l: usize) -> BlockIdx {
    let b = 2 + l * PER_BLOCK;
    BlockIdx {
        ln1_g: b,
        ln1_b: b + 1,
        w_q: b + 2,
        b_q: b + 3,
        w_k: b + 4,
        w_v: b + 5,
        b_v: b + 6,
        w_o: b + 7,
        b_o: b + 8,
        ln2_g: b + 9,
        ln2_b: b + 10,
        w_in: b + 11,
        b_in: b + 12,
        w_out: b + 13,
        b_out: b + 14,
    }
}

pub(crate) fn final_norm_idx(cfg: &ModelConfig) -> (usize, usize) {
    let b = 2 + cfg.n_layers * PER_BLOCK;
    (b, b + 1)
}

/// All trainable tensors of a model, in [`ModelConfig::layout`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub config: ModelConfig,
    pub tensors: Vec<Tensor>,
}

impl Params {
    /// Gaussian(0, 0.02) weights and embeddings, zero biases, unit norm gains.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::derive(seed, Stream::Init, 0);
        let tensors = config
            .layout()
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let data = if name.ends_with("gain") {
                    vec![1.0; n]
                } else if name.contains(".b_") || name.ends_with("bias") {
                    vec![0.0; n]
                } else {
                    rng.normal_vec(n, 0.02)
                };
                Tensor::new(shape, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            tensors,
        })
    }

    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        ensure!(
            layout.len() == tensors.len(),
            Shape,
            "expected {} tensors, got {}",
            layout.len(),
            tensors.len()
        );
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            ensure!(t.shape() == shape.as_slice(), Shape, "{name}: {:?} vs {:?}", t.shape(), shape);
        }
        Ok(Self {
            config: config.clone(),
            tensors,
        })
    }

    pub fn names(&self) -> Vec<String> {
        self.config.layout().into_iter().map(|(n, _)| n).collect()
    }

    /// Whether the tensor at `index` is a weight matrix (as opposed to a bias or gain).
    pub fn is_matrix(&self, index: usize) -> bool {
        let t = &self.tensors[index];
        t.rows() > 1 && t.cols() > 1
    }

    /// Zeroes every weight of one block, so its update is identically zero.
    pub fn zero_block(&mut self, layer: usize) {
        let b = block_idx(layer);
        for i in b.ln1_g..=b.b_out {
            if i != b.ln1_g && i != b.ln2_g {
                self.tensors[i].data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
}
