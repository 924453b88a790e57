//! Image and text encoders producing `rows × d_model` token sequences.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::grid::{ImageGrid, HIST_BINS};
use crate::model::layers::{normal, BlockParams, LayerNormParams, LinearParams};
use crate::model::ModelConfig;
use crate::scalar::Scalar;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::text::TokenizedText;

#[derive(Clone, Debug)]
pub struct ImageEncoder {
    pub patch_proj: LinearParams,
    pub position: ParamId,
    pub blocks: Vec<BlockParams>,
    pub final_norm: LayerNormParams,
    pub out_proj: LinearParams,
    grid: usize,
}

impl ImageEncoder {
    pub fn init<S: Scalar>(store: &mut ParamStore<S>, rng: &mut impl Rng, cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let n = cfg.grid * cfg.grid;
        Self {
            patch_proj: LinearParams::init(store, rng, "image.patch_proj", HIST_BINS, d, true, 1.0),
            position: store.insert("image.position", normal(rng, vec![n, d], 0.5), false),
            blocks: (0..cfg.blocks)
                .map(|b| BlockParams::init(store, rng, &format!("image.block{b}"), d, cfg.heads, cfg.mlp_hidden()))
                .collect(),
            final_norm: LayerNormParams::init(store, "image.final_norm", d),
            out_proj: LinearParams::init(store, rng, "image.out_proj", d, d, true, (1.0 / d as f64).sqrt()),
            grid: cfg.grid,
        }
    }

    /// `P²×d_model` patch embeddings.
    pub fn forward<S: Scalar>(&self, t: &mut Tape<S>, s: &ParamStore<S>, img: &ImageGrid) -> Result<Var> {
        if img.p != self.grid || img.features.len() != img.p * img.p * HIST_BINS {
            return Err(Error::Tensor(crate::TensorError::Shape {
                op: "encode_image",
                detail: format!("grid side {} but encoder expects {}", img.p, self.grid),
            }));
        }
        let feats = Tensor::new(
            vec![img.patches(), HIST_BINS],
            img.features.iter().map(|&v| S::lit(v)).collect(),
        )?;
        let feats = t.constant(feats);
        let x = self.patch_proj.forward(t, s, feats)?;
        let pos = t.param(s, self.position);
        let mut x = t.add(x, pos)?;
        for b in &self.blocks {
            x = b.forward(t, s, x)?;
        }
        let x = self.final_norm.forward(t, s, x)?;
        self.out_proj.forward(t, s, x)
    }
}

#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub token_embedding: ParamId,
    pub position: ParamId,
    pub blocks: Vec<BlockParams>,
    pub final_norm: LayerNormParams,
    pub out_proj: LinearParams,
    max_tokens: usize,
}

impl TextEncoder {
    pub fn init<S: Scalar>(store: &mut ParamStore<S>, rng: &mut impl Rng, cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        Self {
            token_embedding: store.insert("text.token_embedding", normal(rng, vec![cfg.vocab_size, d], 0.5), false),
            position: store.insert(
                "text.position",
                normal(rng, vec![cfg.max_text_tokens + 2, d], 0.5),
                false,
            ),
            blocks: (0..cfg.blocks)
                .map(|b| BlockParams::init(store, rng, &format!("text.block{b}"), d, cfg.heads, cfg.mlp_hidden()))
                .collect(),
            final_norm: LayerNormParams::init(store, "text.final_norm", d),
            out_proj: LinearParams::init(store, rng, "text.out_proj", d, d, true, (1.0 / d as f64).sqrt()),
            max_tokens: cfg.max_text_tokens,
        }
    }

    /// `(tokens + 2)×d_model`: BOS, one row per token, EOS.
    pub fn forward<S: Scalar>(&self, t: &mut Tape<S>, s: &ParamStore<S>, text: &TokenizedText) -> Result<Var> {
        if text.len() > self.max_tokens {
            return Err(Error::TextTooLong {
                got: text.len(),
                max: self.max_tokens,
            });
        }
        let ids = text.encoder_ids();
        let table = t.param(s, self.token_embedding);
        let x = t.embedding(table, &ids)?;
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos_table = t.param(s, self.position);
        let pos = t.embedding(pos_table, &positions)?;
        let mut x = t.add(x, pos)?;
        for b in &self.blocks {
            x = b.forward(t, s, x)?;
        }
        let x = self.final_norm.forward(t, s, x)?;
        self.out_proj.forward(t, s, x)
    }
}
