use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ParamStore, Tensor};

/// AdamW moments for every parameter of a store, indexed like the store.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<S> {
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
    /// Updates applied so far (bias-correction exponent).
    pub t: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(store: &ParamStore<S>) -> Self {
        let zeros: Vec<Tensor<S>> = store
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.shape().to_vec()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One decoupled-decay Adam update. Decay-flagged parameters are first
    /// scaled by `1 - lr·wd`; frozen parameters are left untouched.
    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &[Tensor<S>], h: &AdamWParams) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::Contract(format!(
                "optimizer over {} parameters given {} gradients",
                self.m.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let (b1, b2) = (S::lit(h.beta1), S::lit(h.beta2));
        let (one, lr, eps) = (S::one(), S::lit(h.lr), S::lit(h.eps));
        let bc1 = S::lit(1.0 - h.beta1.powf(self.t as f64));
        let bc2 = S::lit(1.0 - h.beta2.powf(self.t as f64));
        let shrink = S::lit(1.0 - h.lr * h.weight_decay);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let p = store.get_mut(id);
            if p.frozen {
                continue;
            }
            let decay = p.decay;
            let g = grads[i].data();
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (k, w) in p.value.data_mut().iter_mut().enumerate() {
                if decay {
                    *w *= shrink;
                }
                m[k] = b1 * m[k] + (one - b1) * g[k];
                v[k] = b2 * v[k] + (one - b2) * g[k] * g[k];
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Euclidean norm over all gradients of non-frozen parameters.
pub fn global_norm<S: Scalar>(store: &ParamStore<S>, grads: &[Tensor<S>]) -> f64 {
    store
        .iter()
        .filter(|(_, p)| !p.frozen)
        .flat_map(|(id, _)| grads[id.index()].data().iter())
        .map(|g| g.as_f64() * g.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients to norm `max` when they exceed it; returns the
/// pre-clip norm.
pub fn clip_global<S: Scalar>(store: &ParamStore<S>, grads: &mut [Tensor<S>], max: f64) -> f64 {
    let n = global_norm(store, grads);
    if n > max {
        let c = S::lit(max / n);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= c);
        }
    }
    n
}
