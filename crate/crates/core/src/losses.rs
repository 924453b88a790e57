//! Concept-consistency hinge, contrastive loss with a query negative, and
//! their weighted total. Each loss has a tape form for training and a plain
//! form over tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::AttnMap;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};
use crate::text::NpSpan;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Sum,
    /// Divide the summed hinge by the number of compared entries.
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CcConfig {
    pub epsilon: f64,
    pub reduction: Reduction,
    /// Penalize `|full - isolated| > ε` instead of only `full > isolated + ε`.
    pub symmetric: bool,
}

impl Default for CcConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            reduction: Reduction::Sum,
            symmetric: false,
        }
    }
}

/// Row correspondence between the full-text map and one isolated-phrase map.
/// Both index map rows, so they include the BOS offset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowAlignment {
    pub full_rows: Vec<usize>,
    pub iso_rows: Vec<usize>,
}

impl RowAlignment {
    /// Token `k` of the phrase sits at map row `token_rows[k] + 1` in context
    /// and at row `k + 1` when the phrase is encoded alone.
    pub fn for_span(span: &NpSpan) -> Self {
        Self {
            full_rows: span.token_rows.iter().map(|r| r + 1).collect(),
            iso_rows: (1..=span.token_rows.len()).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CcPhrase<S> {
    pub isolated_map: AttnMap<S>,
    pub rows: RowAlignment,
}

#[derive(Clone, Debug)]
pub struct CcInputs<S> {
    pub full_map: AttnMap<S>,
    pub phrases: Vec<CcPhrase<S>>,
    pub epsilon: f64,
}

fn check_alignment(rows: &RowAlignment, full: (usize, usize), iso: (usize, usize)) -> Result<()> {
    if rows.full_rows.len() != rows.iso_rows.len() || rows.full_rows.is_empty() {
        return Err(Error::Contract(format!(
            "cc_loss: {} in-context rows aligned with {} isolated rows",
            rows.full_rows.len(),
            rows.iso_rows.len()
        )));
    }
    if full.1 != iso.1 {
        return Err(Error::Contract(format!(
            "cc_loss: maps over {} and {} image patches",
            full.1, iso.1
        )));
    }
    if rows.full_rows.iter().any(|&r| r >= full.0) || rows.iso_rows.iter().any(|&r| r >= iso.0) {
        return Err(Error::Contract("cc_loss: aligned row out of range".into()));
    }
    Ok(())
}

fn hinge(d: f64, eps: f64, symmetric: bool) -> f64 {
    let r = |x: f64| if x > 0.0 { x } else { 0.0 };
    if symmetric {
        r(d - eps) + r(-d - eps)
    } else {
        r(d - eps)
    }
}

/// Plain evaluation: `Σ_i Σ_rows Σ_cols relu(full - isolated - ε)`.
pub fn cc_loss<S: Scalar>(c: &CcInputs<S>, cfg: &CcConfig) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    let full = &c.full_map.weights;
    for p in &c.phrases {
        let iso = &p.isolated_map.weights;
        check_alignment(&p.rows, (full.rows(), full.cols()), (iso.rows(), iso.cols()))?;
        for (&fr, &ir) in p.rows.full_rows.iter().zip(&p.rows.iso_rows) {
            for (a, b) in full.row(fr).iter().zip(iso.row(ir)) {
                total += hinge(a.as_f64() - b.as_f64(), c.epsilon, cfg.symmetric);
            }
            count += full.cols();
        }
    }
    Ok(match cfg.reduction {
        Reduction::Mean if count > 0 => total / count as f64,
        _ => total,
    })
}

/// Tape form. `full_map` carries gradients; each isolated map enters as a
/// constant. An empty phrase list gives a constant zero.
pub fn cc_loss_graph<S: Scalar>(
    t: &mut Tape<S>,
    full_map: Var,
    phrases: &[(Tensor<S>, RowAlignment)],
    cfg: &CcConfig,
) -> Result<Var> {
    let full_dims = (t.value(full_map).rows(), t.value(full_map).cols());
    let eps = S::lit(cfg.epsilon);
    let mut terms = Vec::with_capacity(phrases.len());
    let mut count = 0usize;
    for (iso, rows) in phrases {
        check_alignment(rows, full_dims, (iso.rows(), iso.cols()))?;
        let a = t.select_rows(full_map, &rows.full_rows)?;
        let iso = t.constant(iso.clone());
        let b = t.select_rows(iso, &rows.iso_rows)?;
        let d = t.sub(a, b)?;
        let over = t.add_scalar(d, -eps);
        let mut h = t.relu(over);
        if cfg.symmetric {
            let neg = t.scale(d, S::lit(-1.0));
            let under = t.add_scalar(neg, -eps);
            let hu = t.relu(under);
            h = t.add(h, hu)?;
        }
        count += rows.full_rows.len() * full_dims.1;
        terms.push(t.sum(h));
    }
    let Some(mut total) = terms.first().copied() else {
        return Ok(t.constant(Tensor::scalar(S::zero())));
    };
    for &x in &terms[1..] {
        total = t.add(total, x)?;
    }
    Ok(match cfg.reduction {
        Reduction::Sum => total,
        Reduction::Mean => t.scale(total, S::lit(1.0 / count as f64)),
    })
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("temperature must be > 0, got {tau}")))
    }
}

/// Batch mean of `-log e^{s(q,t_n)/τ} / (e^{s(q,q⁻_n)/τ} + Σ_i e^{s(q,t_i)/τ})`.
/// Rows are normalized first so similarities are cosines. Passing `None`
/// for the query negatives drops that term from the denominator.
pub fn contrastive_loss_graph<S: Scalar>(
    t: &mut Tape<S>,
    r_q: Var,
    r_t: Var,
    r_qneg: Option<Var>,
    tau: f64,
) -> Result<Var> {
    check_tau(tau)?;
    let n = t.value(r_q).rows();
    if t.value(r_q).shape() != t.value(r_t).shape()
        || r_qneg.is_some_and(|v| t.value(v).shape() != t.value(r_q).shape())
    {
        return Err(Error::Contract("contrastive_loss: batch shapes differ".into()));
    }
    let q = t.l2_normalize(r_q)?;
    let tt = t.l2_normalize(r_t)?;
    let tt_t = t.transpose(tt)?;
    let sims = t.matmul(q, tt_t)?;
    let (logits, offset) = match r_qneg {
        Some(qn) => {
            let qn = t.l2_normalize(qn)?;
            let neg = t.row_dot(q, qn)?;
            (t.concat_cols(&[neg, sims])?, 1)
        }
        None => (sims, 0),
    };
    let logits = t.scale(logits, S::lit(1.0 / tau));
    let targets: Vec<usize> = (0..n).map(|i| i + offset).collect();
    Ok(t.cross_entropy_rows(logits, &targets)?)
}

/// Plain evaluation of [`contrastive_loss_graph`] over `N×d` batches.
pub fn contrastive_loss<S: Scalar>(
    r_q: &Tensor<S>,
    r_t: &Tensor<S>,
    r_qneg: Option<&Tensor<S>>,
    tau: f64,
) -> Result<f64> {
    let mut t = Tape::new();
    let q = t.constant(r_q.clone());
    let k = t.constant(r_t.clone());
    let qn = r_qneg.map(|v| t.constant(v.clone()));
    let l = contrastive_loss_graph(&mut t, q, k, qn, tau)?;
    Ok(t.value(l).item().as_f64())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("lambda must be >= 0, got {lambda}")))
    }
}

/// `cont + λ·cc`.
pub fn total_loss(cont: f64, cc: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(cont + lambda * cc)
}

pub fn total_loss_graph<S: Scalar>(t: &mut Tape<S>, cont: Var, cc: Var, lambda: f64) -> Result<Var> {
    check_lambda(lambda)?;
    if lambda == 0.0 {
        return Ok(cont);
    }
    let w = t.scale(cc, S::lit(lambda));
    Ok(t.add(cont, w)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(rows: &[Vec<f64>]) -> AttnMap<f64> {
        AttnMap {
            weights: Tensor::from_rows(rows).unwrap(),
            heads: 1,
            layer: "test".into(),
        }
    }

    fn single(full: Vec<f64>, iso: Vec<f64>, eps: f64) -> CcInputs<f64> {
        CcInputs {
            full_map: map(&[full]),
            phrases: vec![CcPhrase {
                isolated_map: map(&[iso]),
                rows: RowAlignment {
                    full_rows: vec![0],
                    iso_rows: vec![0],
                },
            }],
            epsilon: eps,
        }
    }

    #[test]
    fn worked_examples() {
        let cfg = CcConfig::default();
        let c = single(vec![0.5, 0.5], vec![0.5, 0.5], 0.0);
        assert_eq!(cc_loss(&c, &cfg).unwrap(), 0.0);
        let c = single(vec![0.5, 0.5], vec![0.7, 0.3], 0.0);
        assert!((cc_loss(&c, &cfg).unwrap() - 0.2).abs() < 1e-12);
        let c = single(vec![0.5, 0.5], vec![0.7, 0.3], 0.1);
        assert!((cc_loss(&c, &cfg).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn no_phrases_is_zero() {
        let c = CcInputs {
            full_map: map(&[vec![1.0]]),
            phrases: vec![],
            epsilon: 0.1,
        };
        assert_eq!(cc_loss(&c, &CcConfig::default()).unwrap(), 0.0);
        let mut t = Tape::<f64>::new();
        let f = t.constant(Tensor::scalar(1.0));
        let l = cc_loss_graph(&mut t, f, &[], &CcConfig::default()).unwrap();
        assert_eq!(t.value(l).item(), 0.0);
    }

    #[test]
    fn misaligned_rows_rejected() {
        let mut c = single(vec![0.5, 0.5], vec![0.7, 0.3], 0.0);
        c.phrases[0].rows.iso_rows.push(1);
        assert!(matches!(cc_loss(&c, &CcConfig::default()), Err(Error::Contract(_))));
    }

    #[test]
    fn symmetric_and_mean_variants() {
        let c = single(vec![0.5, 0.5], vec![0.7, 0.3], 0.0);
        let sym = CcConfig {
            symmetric: true,
            ..CcConfig::default()
        };
        assert!((cc_loss(&c, &sym).unwrap() - 0.4).abs() < 1e-12);
        let mean = CcConfig {
            reduction: Reduction::Mean,
            ..CcConfig::default()
        };
        assert!((cc_loss(&c, &mean).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn contrastive_worked_examples() {
        let q = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let qn = Tensor::from_rows(&[vec![0.0, 1.0]]).unwrap();
        let l = contrastive_loss(&q, &q, Some(&qn), 1.0).unwrap();
        assert!((l - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
        let tgt = Tensor::from_rows(&[vec![0.6, 0.8]]).unwrap();
        let l = contrastive_loss(&q, &tgt, Some(&tgt), 0.3).unwrap();
        assert!((l - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn temperature_and_lambda_validated() {
        let q = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(matches!(contrastive_loss(&q, &q, None, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(total_loss(1.0, 1.0, -0.1), Err(Error::Parameter(_))));
        assert_eq!(total_loss(0.7, 3.0, 0.0).unwrap(), 0.7);
        assert_eq!(total_loss(0.7, 0.0, 0.08).unwrap(), 0.7);
    }
}
