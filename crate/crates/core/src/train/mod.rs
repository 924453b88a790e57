//! Mini-batch AdamW training of the retrieval model on triplets.

mod checkpoint;
mod config;
mod optim;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    load_checkpoint, read_manifest, save_checkpoint, CheckpointManifest, TensorEntry, TensorKind, CHECKPOINT_VERSION,
};
pub use config::{lr_at, TrainConfig};
pub use optim::{clip_global, global_norm, AdamWParams, OptimizerState};

use crate::data::Dataset;
use crate::error::{Error, Result, TensorError};
use crate::losses::{cc_loss_graph, contrastive_loss_graph, total_loss_graph, RowAlignment};
use crate::model::{ImageGrid, Model};
use crate::scalar::Scalar;
use crate::tensor::gradcheck::{check_params, GradCheckOptions, GradCheckReport};
use crate::tensor::{Tape, Tensor, Var};
use crate::text::{tokenize, Lexicon, NpSpan, TokenizedText};

/// A training triplet with its text tokenized and noun phrases selected.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub query: ImageGrid,
    pub target: ImageGrid,
    pub text: TokenizedText,
    pub nps: Vec<NpSpan>,
}

/// Resolves every record of `ds` into a [`Sample`], checking that the stored
/// phrase rows match the tokenization.
pub fn prepare_samples(ds: &Dataset, lexicon: &Lexicon, max_nps: usize, leaf_only: bool) -> Result<Vec<Sample>> {
    ds.records
        .iter()
        .map(|r| {
            let text = tokenize(&r.text, lexicon);
            let nps = r.select_nps(max_nps, leaf_only);
            for np in &nps {
                let ok = !np.token_rows.is_empty()
                    && np.token_rows.windows(2).all(|w| w[1] == w[0] + 1)
                    && np.token_rows.iter().all(|&i| i < text.len())
                    && np
                        .token_rows
                        .iter()
                        .map(|&i| text.tokens[i].surface.as_str())
                        .collect::<Vec<_>>()
                        .join(" ")
                        == np.text;
                if !ok {
                    return Err(Error::Data(format!(
                        "noun phrase {:?} of {}→{} does not match the tokenized text",
                        np.text, r.query_id, r.target_id
                    )));
                }
            }
            Ok(Sample {
                id: format!("{}→{}", r.query_id, r.target_id),
                query: ds.grids.require(&r.query_id)?.clone(),
                target: ds.grids.require(&r.target_id)?.clone(),
                text,
                nps,
            })
        })
        .collect()
}

/// Loss nodes of one batch.
#[derive(Clone, Debug)]
pub struct BatchLoss {
    pub total: Var,
    pub cont: Var,
    pub cc: Var,
    pub per_sample_cc: Vec<Var>,
    pub r_q: Var,
}

fn sample_error(e: Error, id: &str, step: u64) -> Error {
    match e {
        Error::Tensor(TensorError::NonFinite { .. } | TensorError::Degenerate { .. }) => Error::NonFiniteLoss {
            step,
            sample_id: id.to_string(),
        },
        e => e,
    }
}

/// Isolated phrase maps per sample, per selected noun phrase.
pub type IsoTargets<S> = Vec<Vec<Tensor<S>>>;

/// Evaluates the isolated phrase maps of `batch` on a scratch tape.
pub fn isolated_targets<S: Scalar>(model: &Model<S>, batch: &[&Sample]) -> Result<IsoTargets<S>> {
    batch
        .iter()
        .map(|s| {
            let mut t = Tape::new();
            let iq = model.encode_image(&mut t, &s.query)?;
            s.nps
                .iter()
                .map(|np| {
                    let lo = np.token_rows[0];
                    let iso = model.encode_text(&mut t, &s.text.sub_text(lo..lo + np.token_rows.len()))?;
                    let (_, map) = model.cross_attn(&mut t, iq, iso)?;
                    Ok(t.value(map).clone())
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

/// Builds `L_tot = L_cont + λ·L_cc` for `batch` on `t`. Every sample gets
/// `r_q = f(I_q, T)`, `r_t = f(I_t, "")` and `r_q⁻ = f(I_q, "")`; the
/// isolated phrase maps are evaluated with the current parameters and
/// enter the hinge as constants.
pub fn batch_loss_graph<S: Scalar>(
    t: &mut Tape<S>,
    model: &Model<S>,
    batch: &[&Sample],
    cfg: &TrainConfig,
    step: u64,
) -> Result<BatchLoss> {
    batch_loss_graph_with(t, model, batch, cfg, step, None)
}

/// As [`batch_loss_graph`], with the isolated maps supplied by the caller
/// (used to hold the targets fixed under finite differences).
pub fn batch_loss_graph_with<S: Scalar>(
    t: &mut Tape<S>,
    model: &Model<S>,
    batch: &[&Sample],
    cfg: &TrainConfig,
    step: u64,
    iso: Option<&IsoTargets<S>>,
) -> Result<BatchLoss> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    if iso.is_some_and(|m| m.len() != batch.len() || m.iter().zip(batch).any(|(v, s)| v.len() != s.nps.len())) {
        return Err(Error::Contract("isolated targets do not match the batch".into()));
    }
    let blank = TokenizedText::blank();
    let cc_cfg = cfg.cc();
    let (mut rq, mut rt, mut rqn, mut ccs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (si, s) in batch.iter().enumerate() {
        let per = (|| -> Result<()> {
            let iq = model.encode_image(t, &s.query)?;
            let (r, full_map) = model.embed_encoded(t, iq, &s.text)?;
            rq.push(r);
            if cfg.use_query_negative {
                rqn.push(model.embed_encoded(t, iq, &blank)?.0);
            }
            let it = model.encode_image(t, &s.target)?;
            rt.push(model.embed_encoded(t, it, &blank)?.0);

            let mut phrases = Vec::with_capacity(s.nps.len());
            for (k, np) in s.nps.iter().enumerate() {
                let map = match iso {
                    Some(m) => m[si][k].clone(),
                    None => {
                        let lo = np.token_rows[0];
                        let iso_txt = model.encode_text(t, &s.text.sub_text(lo..lo + np.token_rows.len()))?;
                        let (_, iso_map) = model.cross_attn(t, iq, iso_txt)?;
                        t.value(iso_map).clone()
                    }
                };
                phrases.push((map, RowAlignment::for_span(np)));
            }
            ccs.push(cc_loss_graph(t, full_map, &phrases, &cc_cfg)?);
            Ok(())
        })();
        per.map_err(|e| sample_error(e, &s.id, step))?;
    }
    let r_q = t.concat_rows(&rq)?;
    let r_t = t.concat_rows(&rt)?;
    let r_qn = if cfg.use_query_negative {
        Some(t.concat_rows(&rqn)?)
    } else {
        None
    };
    let cont = contrastive_loss_graph(t, r_q, r_t, r_qn, cfg.tau)?;
    let mut cc = ccs[0];
    for &c in &ccs[1..] {
        cc = t.add(cc, c)?;
    }
    let cc = t.scale(cc, S::lit(1.0 / batch.len() as f64));
    let total = total_loss_graph(t, cont, cc, cfg.lambda)?;
    Ok(BatchLoss {
        total,
        cont,
        cc,
        per_sample_cc: ccs,
        r_q,
    })
}

/// Finite-difference check of `L_tot` on `batch` with respect to every
/// trainable parameter. The isolated maps are evaluated once at the base
/// point and held fixed, matching the stop-gradient of the analytic pass.
pub fn grad_check_total<S: Scalar>(
    model: &Model<S>,
    batch: &[&Sample],
    cfg: &TrainConfig,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let iso = isolated_targets(model, batch)?;
    check_params(
        &model.params,
        |t, store| {
            let local = Model {
                params: store.clone(),
                ..model.clone()
            };
            Ok(batch_loss_graph_with(t, &local, batch, cfg, 0, Some(&iso))?.total)
        },
        opts,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub lr: f64,
    #[serde(rename = "L_cont")]
    pub l_cont: f64,
    #[serde(rename = "L_cc")]
    pub l_cc: f64,
    #[serde(rename = "L_tot")]
    pub l_tot: f64,
    pub grad_norm: f64,
}

/// Dataset indices for `step`: consecutive slices of per-epoch permutations,
/// each permutation seeded by `(seed, epoch)`. A pure function of its
/// arguments, so a resumed run sees the same batches.
pub fn batch_indices(seed: u64, step: u64, n: usize, batch: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(batch);
    let mut cached: Option<(u64, Vec<usize>)> = None;
    for j in 0..batch as u64 {
        let g = step * batch as u64 + j;
        let (epoch, k) = (g / n as u64, (g % n as u64) as usize);
        if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            cached = Some((epoch, perm));
        }
        out.push(cached.as_ref().expect("cached permutation").1[k]);
    }
    out
}

/// Model, optimizer state and step counter.
#[derive(Clone, Debug)]
pub struct Trainer<S> {
    pub model: Model<S>,
    pub opt: OptimizerState<S>,
    pub cfg: TrainConfig,
    pub step: u64,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(mut model: Model<S>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        model.set_frozen(cfg.freeze_image, cfg.freeze_text);
        let opt = OptimizerState::new(&model.params);
        Ok(Self {
            model,
            opt,
            cfg,
            step: 0,
        })
    }

    /// Forward, backward, clip and one AdamW update on `batch`.
    pub fn train_step(&mut self, batch: &[&Sample]) -> Result<StepMetrics> {
        let lr = self.cfg.lr_at(self.step);
        let mut t = Tape::new();
        let loss = batch_loss_graph(&mut t, &self.model, batch, &self.cfg, self.step)?;
        let (l_tot, l_cont, l_cc) = (
            t.value(loss.total).item().as_f64(),
            t.value(loss.cont).item().as_f64(),
            t.value(loss.cc).item().as_f64(),
        );
        if !l_tot.is_finite() {
            return Err(self.non_finite(&t, &loss, batch));
        }
        let grads = t.backward(loss.total)?;
        let mut g = grads.for_store(&self.model.params);
        let grad_norm = match self.cfg.grad_clip {
            Some(c) => clip_global(&self.model.params, &mut g, c),
            None => global_norm(&self.model.params, &g),
        };
        if !grad_norm.is_finite() {
            return Err(self.non_finite(&t, &loss, batch));
        }
        let h = AdamWParams {
            lr,
            beta1: self.cfg.beta1,
            beta2: self.cfg.beta2,
            eps: self.cfg.eps_adam,
            weight_decay: self.cfg.weight_decay,
        };
        self.opt.step(&mut self.model.params, &g, &h)?;
        let m = StepMetrics {
            step: self.step,
            lr,
            l_cont,
            l_cc,
            l_tot,
            grad_norm,
        };
        self.step += 1;
        Ok(m)
    }

    fn non_finite(&self, t: &Tape<S>, loss: &BatchLoss, batch: &[&Sample]) -> Error {
        let rq = t.value(loss.r_q);
        let rows = t.last_row_losses();
        let bad = (0..batch.len()).find(|&i| {
            !rq.row(i).iter().all(|v| v.is_finite())
                || rows.get(i).is_some_and(|v| !v.is_finite())
                || !t.value(loss.per_sample_cc[i]).is_finite()
        });
        Error::NonFiniteLoss {
            step: self.step,
            sample_id: bad.map_or_else(|| "<batch>".to_string(), |i| batch[i].id.clone()),
        }
    }

    /// Runs until `self.step == self.cfg.steps`, calling `on_step` after each
    /// update.
    pub fn fit(&mut self, samples: &[Sample], mut on_step: impl FnMut(&StepMetrics) -> Result<()>) -> Result<()> {
        if samples.is_empty() {
            return Err(Error::Data("no training samples".into()));
        }
        while self.step < self.cfg.steps {
            let idx = batch_indices(self.cfg.seed, self.step, samples.len(), self.cfg.batch_size);
            let batch: Vec<&Sample> = idx.iter().map(|&i| &samples[i]).collect();
            let m = self.train_step(&batch)?;
            on_step(&m)?;
        }
        Ok(())
    }
}

/// Appends metric records as JSON lines.
pub struct MetricsLog<W: Write> {
    out: W,
}

impl<W: Write> MetricsLog<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn record(&mut self, m: &StepMetrics) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, m)?;
        self.out.write_all(b"\n")
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
