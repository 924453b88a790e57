//! Standard metric table over evaluated records.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::index::GalleryIndex;
use super::metrics::{map_at_k, recall_at_k, recall_subset_at_k, EvalRecord};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::scalar::Scalar;
use crate::text::{tokenize, Lexicon};

pub const RECALL_KS: [usize; 4] = [1, 5, 10, 50];
pub const SUBSET_KS: [usize; 3] = [1, 2, 3];
pub const MAP_KS: [usize; 4] = [5, 10, 25, 50];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_queries: usize,
    pub rows: Vec<MetricRow>,
}

impl EvalReport {
    pub fn get(&self, metric: &str, k: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.k == k)
            .map(|r| r.value)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("metric\tK\tvalue\n");
        for r in &self.rows {
            writeln!(s, "{}\t{}\t{:.6}", r.metric, r.k, r.value).expect("write to string");
        }
        s
    }

    /// One line per metric family, values in percent.
    pub fn summary(&self) -> String {
        let mut s = format!("queries: {}\n", self.n_queries);
        for family in ["Recall", "Recall_subset", "mAP"] {
            let cells: Vec<String> = self
                .rows
                .iter()
                .filter(|r| r.metric == family)
                .map(|r| format!("@{}: {:6.2}", r.k, 100.0 * r.value))
                .collect();
            if !cells.is_empty() {
                writeln!(s, "{family:<14}{}", cells.join("  ")).expect("write to string");
            }
        }
        s
    }
}

/// Recall@{1,5,10,50}, Recall_subset@{1,2,3} when every record has a subset,
/// and mAP@{5,10,25,50}.
pub fn evaluate(records: &[EvalRecord]) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::Data("no evaluation records".into()));
    }
    let mut rows = Vec::new();
    for k in RECALL_KS {
        rows.push(MetricRow {
            metric: "Recall".into(),
            k,
            value: recall_at_k(records, k)?,
        });
    }
    if records.iter().all(|r| r.subset_ids.is_some()) {
        for k in SUBSET_KS {
            rows.push(MetricRow {
                metric: "Recall_subset".into(),
                k,
                value: recall_subset_at_k(records, k)?,
            });
        }
    }
    for k in MAP_KS {
        rows.push(MetricRow {
            metric: "mAP".into(),
            k,
            value: map_at_k(records, k)?,
        });
    }
    Ok(EvalReport {
        n_queries: records.len(),
        rows,
    })
}

/// Ranks the whole index for every record of `ds`. With `exclude_query`
/// the query image is dropped from its own ranking.
pub fn rank_dataset<S: Scalar>(
    model: &Model<S>,
    idx: &GalleryIndex,
    ds: &Dataset,
    lexicon: &Lexicon,
    exclude_query: bool,
) -> Result<Vec<EvalRecord>> {
    if ds.records.is_empty() {
        return Err(Error::Data("no evaluation records".into()));
    }
    ds.records
        .par_iter()
        .map(|r| {
            let img = ds.grids.require(&r.query_id)?;
            let (v, _) = model.embed(img, &tokenize(&r.text, lexicon))?;
            let q: Vec<f64> = v.data().iter().map(|x| x.as_f64()).collect();
            let ranked = idx
                .rank(&q)?
                .into_iter()
                .filter(|h| !(exclude_query && h.id == r.query_id))
                .map(|h| (h.id, h.score))
                .collect();
            Ok(EvalRecord {
                query_id: r.query_id.clone(),
                ranked,
                gt_ids: r.gt_ids.clone(),
                subset_ids: (!r.subset_ids.is_empty()).then(|| r.subset_ids.clone()),
            })
        })
        .collect()
}
