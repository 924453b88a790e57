use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

pub(crate) fn normal<S: Scalar>(rng: &mut impl Rng, shape: Vec<usize>, std: f64) -> Tensor<S> {
    let dist = Normal::new(0.0, std).expect("valid std");
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| S::lit(dist.sample(rng))).collect()).expect("shape")
}

pub(crate) fn constant<S: Scalar>(shape: Vec<usize>, v: f64) -> Tensor<S> {
    Tensor::zeros(shape).map(|_| S::lit(v))
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub fn init<S: Scalar>(store: &mut ParamStore<S>, name: &str, d: usize) -> Self {
        Self {
            gain: store.insert(format!("{name}.gain"), constant(vec![d], 1.0), false),
            bias: store.insert(format!("{name}.bias"), constant(vec![d], 0.0), false),
        }
    }

    pub fn forward<S: Scalar>(&self, t: &mut Tape<S>, s: &ParamStore<S>, x: Var) -> Result<Var> {
        let g = t.param(s, self.gain);
        let b = t.param(s, self.bias);
        Ok(t.layer_norm(x, g, b)?)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LinearParams {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl LinearParams {
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        std: f64,
    ) -> Self {
        let weight = store.insert(format!("{name}.weight"), normal(rng, vec![fan_in, fan_out], std), true);
        let bias = bias.then(|| store.insert(format!("{name}.bias"), constant(vec![fan_out], 0.0), false));
        Self { weight, bias }
    }

    pub fn forward<S: Scalar>(&self, t: &mut Tape<S>, s: &ParamStore<S>, x: Var) -> Result<Var> {
        let w = t.param(s, self.weight);
        let b = self.bias.map(|b| t.param(s, b));
        Ok(t.linear(x, w, b)?)
    }
}

/// Two-layer GELU feed-forward.
#[derive(Clone, Copy, Debug)]
pub struct MlpParams {
    pub up: LinearParams,
    pub down: LinearParams,
}

impl MlpParams {
    pub fn init<S: Scalar>(store: &mut ParamStore<S>, rng: &mut impl Rng, name: &str, d: usize, hidden: usize) -> Self {
        Self {
            up: LinearParams::init(
                store,
                rng,
                &format!("{name}.up"),
                d,
                hidden,
                true,
                (1.0 / d as f64).sqrt(),
            ),
            down: LinearParams::init(
                store,
                rng,
                &format!("{name}.down"),
                hidden,
                d,
                true,
                0.5 * (1.0 / hidden as f64).sqrt(),
            ),
        }
    }

    pub fn forward<S: Scalar>(&self, t: &mut Tape<S>, s: &ParamStore<S>, x: Var) -> Result<Var> {
        let h = self.up.forward(t, s, x)?;
        let h = t.gelu(h);
        self.down.forward(t, s, h)
    }
}

/// Multi-head attention projections; queries from one sequence, keys and
/// values from another (or the same).
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub output: ParamId,
    pub heads: usize,
}

impl AttentionParams {
    pub fn init<S: Scalar>(store: &mut ParamStore<S>, rng: &mut impl Rng, name: &str, d: usize, heads: usize) -> Self {
        assert!(heads > 0 && d % heads == 0, "heads must divide d_model");
        let std = (1.0 / d as f64).sqrt();
        Self {
            query: store.insert(format!("{name}.query"), normal(rng, vec![d, d], std), true),
            key: store.insert(format!("{name}.key"), normal(rng, vec![d, d], std), true),
            value: store.insert(format!("{name}.value"), normal(rng, vec![d, d], std), true),
            output: store.insert(format!("{name}.output"), normal(rng, vec![d, d], std), true),
            heads,
        }
    }

    /// Returns the projected output `n_q×d` and the head-mean attention
    /// weights `n_q×n_kv`.
    pub fn forward<S: Scalar>(
        &self,
        t: &mut Tape<S>,
        s: &ParamStore<S>,
        queries: Var,
        keys_values: Var,
    ) -> Result<(Var, Var)> {
        let (wq, wk, wv, wo) = (
            t.param(s, self.query),
            t.param(s, self.key),
            t.param(s, self.value),
            t.param(s, self.output),
        );
        let q = t.matmul(queries, wq)?;
        let k = t.matmul(keys_values, wk)?;
        let v = t.matmul(keys_values, wv)?;
        let d = t.value(q).cols();
        let dh = d / self.heads;
        let inv_sqrt = S::lit(1.0 / (dh as f64).sqrt());
        let mut outs = Vec::with_capacity(self.heads);
        let mut map_sum: Option<Var> = None;
        for h in 0..self.heads {
            let qh = t.slice_cols(q, h * dh, dh)?;
            let kh = t.slice_cols(k, h * dh, dh)?;
            let vh = t.slice_cols(v, h * dh, dh)?;
            let kt = t.transpose(kh)?;
            let scores = t.matmul(qh, kt)?;
            let scores = t.scale(scores, inv_sqrt);
            let weights = t.softmax_rows(scores)?;
            outs.push(t.matmul(weights, vh)?);
            map_sum = Some(match map_sum {
                None => weights,
                Some(acc) => t.add(acc, weights)?,
            });
        }
        let cat = t.concat_cols(&outs)?;
        let out = t.matmul(cat, wo)?;
        let map = t.scale(map_sum.expect("at least one head"), S::lit(1.0 / self.heads as f64));
        Ok((out, map))
    }
}

/// Pre-norm transformer block: self-attention then feed-forward, each residual.
#[derive(Clone, Copy, Debug)]
pub struct BlockParams {
    pub norm_attn: LayerNormParams,
    pub attn: AttentionParams,
    pub norm_mlp: LayerNormParams,
    pub mlp: MlpParams,
}

impl BlockParams {
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
        name: &str,
        d: usize,
        heads: usize,
        hidden: usize,
    ) -> Self {
        Self {
            norm_attn: LayerNormParams::init(store, &format!("{name}.norm_attn"), d),
            attn: AttentionParams::init(store, rng, &format!("{name}.attn"), d, heads),
            norm_mlp: LayerNormParams::init(store, &format!("{name}.norm_mlp"), d),
            mlp: MlpParams::init(store, rng, &format!("{name}.mlp"), d, hidden),
        }
    }

    pub fn forward<S: Scalar>(&self, t: &mut Tape<S>, s: &ParamStore<S>, x: Var) -> Result<Var> {
        let h = self.norm_attn.forward(t, s, x)?;
        let (a, _) = self.attn.forward(t, s, h, h)?;
        let x = t.add(x, a)?;
        let h = self.norm_mlp.forward(t, s, x)?;
        let m = self.mlp.forward(t, s, h)?;
        Ok(t.add(x, m)?)
    }
}
