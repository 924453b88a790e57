//! The retrieval network: `r = pool(cross_attn(encode_image(I), encode_text(T)))`.

mod encoders;
mod fusion;
mod grid;
mod layers;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use encoders::{ImageEncoder, TextEncoder};
pub use fusion::{AttnMap, FusionParams, FUSION_LAYER};
pub use grid::{color_bin, ImageGrid, HIST_BINS};
pub use layers::{AttentionParams, BlockParams, LayerNormParams, LinearParams, MlpParams};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ParamStore, Tape, Tensor, Var};
use crate::text::{Lexicon, TokenizedText};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub blocks: usize,
    /// Side of the patch grid; images have `grid²` tokens.
    pub grid: usize,
    pub max_text_tokens: usize,
    pub vocab_size: usize,
    pub mlp_ratio: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 4,
            blocks: 2,
            grid: 4,
            max_text_tokens: 32,
            vocab_size: Lexicon::builtin().vocab_size(),
            mlp_ratio: 2,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small enough to finite-difference every parameter entry.
    pub fn tiny() -> Self {
        Self {
            d_model: 8,
            heads: 2,
            blocks: 1,
            grid: 2,
            ..Self::default()
        }
    }

    pub fn mlp_hidden(&self) -> usize {
        self.d_model * self.mlp_ratio
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "heads ({}) must divide d_model ({})",
                self.heads, self.d_model
            )));
        }
        if self.grid == 0 || self.max_text_tokens == 0 || self.vocab_size < 3 || self.mlp_ratio == 0 {
            return Err(Error::Config(
                "grid, max_text_tokens, vocab_size and mlp_ratio must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Parameters plus the layer handles that index into them.
#[derive(Clone, Debug)]
pub struct Model<S> {
    pub config: ModelConfig,
    pub params: ParamStore<S>,
    pub image: ImageEncoder,
    pub text: TextEncoder,
    pub fusion: FusionParams,
}

impl<S: Scalar> Model<S> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut params = ParamStore::new();
        let image = ImageEncoder::init(&mut params, &mut rng, &config);
        let text = TextEncoder::init(&mut params, &mut rng, &config);
        let fusion = FusionParams::init(&mut params, &mut rng, &config);
        Ok(Self {
            config,
            params,
            image,
            text,
            fusion,
        })
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    pub fn set_frozen(&mut self, freeze_image: bool, freeze_text: bool) {
        self.params.set_frozen_prefix("image.", freeze_image);
        self.params.set_frozen_prefix("text.", freeze_text);
    }

    pub fn encode_image(&self, t: &mut Tape<S>, img: &ImageGrid) -> Result<Var> {
        self.image.forward(t, &self.params, img)
    }

    pub fn encode_text(&self, t: &mut Tape<S>, text: &TokenizedText) -> Result<Var> {
        self.text.forward(t, &self.params, text)
    }

    pub fn cross_attn(&self, t: &mut Tape<S>, img: Var, txt: Var) -> Result<(Var, Var)> {
        self.fusion.cross_attn(t, &self.params, img, txt)
    }

    pub fn attn_pool(&self, t: &mut Tape<S>, fused: Var) -> Result<Var> {
        self.fusion.attn_pool(t, &self.params, fused)
    }

    /// Fuses an already-encoded image with a text; returns `(r, map)` nodes.
    pub fn embed_encoded(&self, t: &mut Tape<S>, img: Var, text: &TokenizedText) -> Result<(Var, Var)> {
        let txt = self.encode_text(t, text)?;
        let (fused, map) = self.cross_attn(t, img, txt)?;
        let r = self.attn_pool(t, fused)?;
        Ok((r, map))
    }

    /// `r = f(I, T)` and its cross-attention map, as tape nodes.
    pub fn embed_query(&self, t: &mut Tape<S>, img: &ImageGrid, text: &TokenizedText) -> Result<(Var, Var)> {
        let iv = self.encode_image(t, img)?;
        self.embed_encoded(t, iv, text)
    }

    /// Off-tape evaluation of [`Model::embed_query`].
    pub fn embed(&self, img: &ImageGrid, text: &TokenizedText) -> Result<(Tensor<S>, AttnMap<S>)> {
        let mut t = Tape::new();
        let (r, map) = self.embed_query(&mut t, img, text)?;
        let r = t.value(r).clone().reshape(vec![self.d_model()])?;
        let map = AttnMap {
            weights: t.value(map).clone(),
            heads: self.config.heads,
            layer: FUSION_LAYER.to_string(),
        };
        Ok((r, map))
    }

    /// Stable digest of configuration and parameter values.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for (_, p) in self.params.iter() {
            h.update(p.name.as_bytes());
            for &e in p.value.shape() {
                h.update((e as u64).to_le_bytes());
            }
            for v in p.value.data() {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
