//! Gallery indexing, exact retrieval and the benchmark metrics.

mod index;
mod metrics;
mod report;

pub use index::{build_index, query_topk, GalleryIndex, Hit};
pub use metrics::{map_at_k, recall_at_k, recall_subset_at_k, EvalRecord};
pub use report::{evaluate, rank_dataset, EvalReport, MetricRow, MAP_KS, RECALL_KS, SUBSET_KS};
