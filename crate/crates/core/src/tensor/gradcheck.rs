//! Central finite-difference oracle for tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference half step.
    pub step: f64,
    /// Denominator floor of the relative error, so that gradients near zero
    /// are compared on an absolute scale.
    pub floor: f64,
    /// Entries checked per parameter tensor; `None` checks every entry.
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-4,
            max_entries: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EntryCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamSummary {
    pub param: String,
    pub checked: usize,
    pub numel: usize,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub entries_checked: usize,
    pub per_param: Vec<ParamSummary>,
    pub worst: Option<EntryCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.worst.as_ref().map_or(0.0, |w| w.rel_err)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.entries_checked > 0 && self.max_rel_err() < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares tape gradients of `f` against central differences for every
/// non-frozen parameter in `store`.
pub fn check_params<S, F>(store: &ParamStore<S>, f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &ParamStore<S>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let root = f(&mut tape, store)?;
    let grads = tape.backward(root)?;
    let analytic = grads.for_store(store);

    let eval = |s: &ParamStore<S>| -> Result<f64> {
        let mut t = Tape::new();
        let r = f(&mut t, s)?;
        Ok(t.value(r).item().as_f64())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = store.clone();
    let h = S::lit(opts.step);
    let mut per_param = Vec::new();
    let mut worst: Option<EntryCheck> = None;
    let mut total = 0;

    for (id, p) in store.iter() {
        if p.frozen {
            continue;
        }
        let numel = p.value.numel();
        let ga = analytic[id.index()].data();
        let entries: Vec<usize> = match opts.max_entries {
            Some(k) if k < numel => {
                // Half the budget goes to entries the analytic pass touched,
                // the rest is uniform so missing gradients are also caught.
                let nonzero: Vec<usize> = (0..numel).filter(|&i| ga[i] != S::zero()).collect();
                let mut picked: Vec<usize> = if nonzero.is_empty() {
                    Vec::new()
                } else {
                    sample(&mut rng, nonzero.len(), (k / 2).min(nonzero.len()))
                        .into_iter()
                        .map(|i| nonzero[i])
                        .collect()
                };
                let rest = k - picked.len();
                picked.extend(sample(&mut rng, numel, rest.min(numel)).into_iter());
                picked.sort_unstable();
                picked.dedup();
                picked
            }
            _ => (0..numel).collect(),
        };
        let mut max_rel = 0.0f64;
        for &i in &entries {
            let orig = work.value(id).data()[i];
            work.get_mut(id).value.data_mut()[i] = orig + h;
            let plus = eval(&work)?;
            work.get_mut(id).value.data_mut()[i] = orig - h;
            let minus = eval(&work)?;
            work.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = ga[i].as_f64();
            let rel = relative_error(a, numeric, opts.floor);
            max_rel = max_rel.max(rel);
            if worst.as_ref().is_none_or(|w| rel > w.rel_err) {
                worst = Some(EntryCheck {
                    param: p.name.clone(),
                    index: i,
                    analytic: a,
                    numeric,
                    rel_err: rel,
                });
            }
        }
        total += entries.len();
        per_param.push(ParamSummary {
            param: p.name.clone(),
            checked: entries.len(),
            numel,
            max_rel_err: max_rel,
        });
    }

    Ok(GradCheckReport {
        entries_checked: total,
        per_param,
        worst,
    })
}

/// Gradient check of a function of plain input tensors, each treated as a leaf.
pub fn check_inputs<S, F>(inputs: &[Tensor<S>], f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &[Var]) -> Result<Var>,
{
    let mut store = ParamStore::new();
    let ids: Vec<_> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| store.insert(format!("input{i}"), t.clone(), false))
        .collect();
    check_params(
        &store,
        |t, s| {
            let vars: Vec<Var> = ids.iter().map(|&id| t.param(s, id)).collect();
            f(t, &vars)
        },
        opts,
    )
}
