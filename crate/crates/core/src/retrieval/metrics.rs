//! Recall@K, subset recall and mAP@K over ranked records.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One evaluated query: the full gallery ranking (best first) with scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub query_id: String,
    pub ranked: Vec<(String, f64)>,
    pub gt_ids: Vec<String>,
    #[serde(default)]
    pub subset_ids: Option<Vec<String>>,
}

impl EvalRecord {
    fn check(&self) -> Result<()> {
        if self.gt_ids.is_empty() {
            return Err(Error::Contract(format!("{}: no ground truth", self.query_id)));
        }
        if let Some(sub) = &self.subset_ids {
            if !self.gt_ids.iter().any(|g| sub.contains(g)) {
                return Err(Error::Contract(format!(
                    "{}: subset holds no ground truth",
                    self.query_id
                )));
            }
        }
        Ok(())
    }

    /// 1-based rank of the best ground truth, if any is ranked.
    pub fn first_gt_rank(&self) -> Option<usize> {
        let gt: HashSet<&str> = self.gt_ids.iter().map(String::as_str).collect();
        self.ranked
            .iter()
            .position(|(id, _)| gt.contains(id.as_str()))
            .map(|p| p + 1)
    }

    /// Subset members in ranking order.
    pub fn subset_ranking(&self) -> Result<Vec<&str>> {
        let sub = self
            .subset_ids
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("{}: no subset ids", self.query_id)))?;
        let sub: HashSet<&str> = sub.iter().map(String::as_str).collect();
        Ok(self
            .ranked
            .iter()
            .map(|(id, _)| id.as_str())
            .filter(|id| sub.contains(id))
            .collect())
    }

    /// AP@K normalized by `min(|GT|, K)`.
    pub fn average_precision(&self, k: usize) -> f64 {
        let gt: HashSet<&str> = self.gt_ids.iter().map(String::as_str).collect();
        let hit_ranks: Vec<usize> = self
            .ranked
            .iter()
            .take(k)
            .enumerate()
            .filter(|(_, (id, _))| gt.contains(id.as_str()))
            .map(|(i, _)| i + 1)
            .collect();
        let norm = gt.len().min(k);
        exact_ap(&hit_ranks, norm).unwrap_or_else(|| {
            let sum: f64 = hit_ranks
                .iter()
                .enumerate()
                .map(|(h, &r)| (h + 1) as f64 / r as f64)
                .sum();
            sum / norm as f64
        })
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// `Σ_h h/rank_h / norm` as a fraction, rounded once at the end. `None` if
/// the denominator overflows.
fn exact_ap(hit_ranks: &[usize], norm: usize) -> Option<f64> {
    let (mut num, mut den) = (0u128, 1u128);
    for (h, &r) in hit_ranks.iter().enumerate() {
        let r = r as u128;
        num = num.checked_mul(r)?.checked_add((h as u128 + 1).checked_mul(den)?)?;
        den = den.checked_mul(r)?;
        let g = gcd(num, den);
        (num, den) = (num / g, den / g);
    }
    den = den.checked_mul(norm as u128)?;
    let g = gcd(num, den);
    let (num, den) = (num / g, den / g);
    // Both must be exact doubles for the quotient to be correctly rounded.
    (num < 1 << 53 && den < 1 << 53).then(|| num as f64 / den as f64)
}

fn mean_over(records: &[EvalRecord], k: usize, f: impl Fn(&EvalRecord) -> Result<f64>) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Data("no evaluation records".into()));
    }
    if k == 0 {
        return Err(Error::Parameter("K must be at least 1".into()));
    }
    let mut s = 0.0;
    for r in records {
        r.check()?;
        s += f(r)?;
    }
    Ok(s / records.len() as f64)
}

pub fn recall_at_k(records: &[EvalRecord], k: usize) -> Result<f64> {
    mean_over(records, k, |r| {
        Ok(r.first_gt_rank().is_some_and(|p| p <= k) as u8 as f64)
    })
}

pub fn recall_subset_at_k(records: &[EvalRecord], k: usize) -> Result<f64> {
    mean_over(records, k, |r| {
        let order = r.subset_ranking()?;
        Ok(order.iter().take(k).any(|id| r.gt_ids.iter().any(|g| g == id)) as u8 as f64)
    })
}

pub fn map_at_k(records: &[EvalRecord], k: usize) -> Result<f64> {
    mean_over(records, k, |r| Ok(r.average_precision(k)))
}
