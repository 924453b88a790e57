//! Text-over-image cross-attention and seed-vector attention pooling.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::layers::{normal, AttentionParams, MlpParams};
use crate::model::ModelConfig;
use crate::scalar::Scalar;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// Head-averaged cross-attention weights: one row per text token (including
/// BOS/EOS), one column per image patch. Rows are probability distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct AttnMap<S> {
    pub weights: Tensor<S>,
    pub heads: usize,
    pub layer: String,
}

impl<S: Scalar> AttnMap<S> {
    pub fn text_rows(&self) -> usize {
        self.weights.rows()
    }

    pub fn image_cols(&self) -> usize {
        self.weights.cols()
    }

    /// Largest deviation of a row sum from one, or a negative entry.
    pub fn stochasticity_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.text_rows() {
            let row = self.weights.row(i);
            if row.iter().any(|&v| v < S::zero()) {
                return f64::INFINITY;
            }
            worst = worst.max((row.iter().copied().sum::<S>().as_f64() - 1.0).abs());
        }
        worst
    }
}

#[derive(Clone, Debug)]
pub struct FusionParams {
    pub cross: AttentionParams,
    pub pool_seed: ParamId,
    pub pool: AttentionParams,
    pub pool_ff: MlpParams,
}

pub const FUSION_LAYER: &str = "fusion.cross";

impl FusionParams {
    pub fn init<S: Scalar>(store: &mut ParamStore<S>, rng: &mut impl Rng, cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        Self {
            cross: AttentionParams::init(store, rng, FUSION_LAYER, d, cfg.heads),
            pool_seed: store.insert("fusion.pool.seed", normal(rng, vec![1, d], 1.0), false),
            pool: AttentionParams::init(store, rng, "fusion.pool.attn", d, cfg.heads),
            pool_ff: MlpParams::init(store, rng, "fusion.pool.ff", d, cfg.mlp_hidden()),
        }
    }

    /// Text rows query image rows. Returns `fused = text + attention output`
    /// and the head-mean map as tape nodes.
    pub fn cross_attn<S: Scalar>(&self, t: &mut Tape<S>, s: &ParamStore<S>, img: Var, txt: Var) -> Result<(Var, Var)> {
        let (di, dt) = (t.value(img).cols(), t.value(txt).cols());
        if di != dt {
            return Err(Error::Tensor(crate::TensorError::shapes(
                "cross_attn",
                t.value(img).shape(),
                t.value(txt).shape(),
            )));
        }
        let (out, map) = self.cross.forward(t, s, txt, img)?;
        let fused = t.add(txt, out)?;
        Ok((fused, map))
    }

    /// One learned seed attends over the fused rows; the pooled vector passes
    /// a residual feed-forward and is scaled to unit length. Result is `1×d`.
    pub fn attn_pool<S: Scalar>(&self, t: &mut Tape<S>, s: &ParamStore<S>, fused: Var) -> Result<Var> {
        if t.value(fused).rows() == 0 {
            return Err(Error::Contract("attn_pool over zero rows".into()));
        }
        let seed = t.param(s, self.pool_seed);
        let (pooled, _) = self.pool.forward(t, s, seed, fused)?;
        let ff = self.pool_ff.forward(t, s, pooled)?;
        let h = t.add(pooled, ff)?;
        Ok(t.l2_normalize(h)?)
    }
}
