//! Blank-text gallery embeddings and exact top-K search.
//!
//! Index file, little-endian:
//!
//! ```text
//! b"CIRINDX1"        magic
//! u64 d, u64 n
//! u32 len, bytes     model fingerprint
//! n × { u32 len, id bytes }
//! n·d f64            unit vectors, row-major
//! ```

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::data::ByteReader;
use crate::error::{Error, Result};
use crate::model::{ImageGrid, Model};
use crate::scalar::Scalar;
use crate::text::TokenizedText;

const INDEX_MAGIC: &[u8; 8] = b"CIRINDX1";

#[derive(Clone, Debug, PartialEq)]
pub struct GalleryIndex {
    pub d: usize,
    ids: Vec<String>,
    vectors: Vec<f64>,
    pub fingerprint: String,
    lookup: HashMap<String, usize>,
}

/// One ranked gallery entry.
#[derive(Clone, Debug, PartialEq)]
pub struct Hit {
    pub id: String,
    pub score: f64,
}

/// Descending score, then ascending id.
fn rank_order(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.0.cmp(b.0))
}

impl GalleryIndex {
    pub fn from_parts(d: usize, ids: Vec<String>, vectors: Vec<f64>, fingerprint: String) -> Result<Self> {
        if vectors.len() != ids.len() * d {
            return Err(Error::Contract(format!(
                "{} ids but {} values for d = {d}",
                ids.len(),
                vectors.len()
            )));
        }
        let mut lookup = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if lookup.insert(id.clone(), i).is_some() {
                return Err(Error::Contract(format!("duplicate gallery id {id}")));
            }
        }
        Ok(Self {
            d,
            ids,
            vectors,
            fingerprint,
            lookup,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.d..(i + 1) * self.d]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.lookup.get(id).copied()
    }

    /// Dot product of `q` with every stored vector.
    pub fn scores(&self, q: &[f64]) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Err(Error::Data("gallery index is empty".into()));
        }
        if q.len() != self.d {
            return Err(Error::Contract(format!(
                "query of length {} for a d = {} index",
                q.len(),
                self.d
            )));
        }
        Ok(self
            .vectors
            .par_chunks(self.d * 256)
            .flat_map_iter(|block| block.chunks_exact(self.d).map(|v| dot(v, q)))
            .collect())
    }

    /// Full ranking by descending score with ties broken by ascending id.
    pub fn rank(&self, q: &[f64]) -> Result<Vec<Hit>> {
        let s = self.scores(q)?;
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| rank_order((&self.ids[a], s[a]), (&self.ids[b], s[b])));
        Ok(order
            .into_iter()
            .map(|i| Hit {
                id: self.ids[i].clone(),
                score: s[i],
            })
            .collect())
    }

    /// The best `k` hits (all of them if `k` exceeds the gallery).
    pub fn topk(&self, q: &[f64], k: usize) -> Result<Vec<Hit>> {
        if k == 0 {
            return Err(Error::Parameter("K must be at least 1".into()));
        }
        let s = self.scores(q)?;
        let mut order: Vec<usize> = (0..self.len()).collect();
        let cmp = |&a: &usize, &b: &usize| rank_order((&self.ids[a], s[a]), (&self.ids[b], s[b]));
        if k < order.len() {
            order.select_nth_unstable_by(k - 1, cmp);
            order.truncate(k);
        }
        order.sort_by(cmp);
        Ok(order
            .into_iter()
            .map(|i| Hit {
                id: self.ids[i].clone(),
                score: s[i],
            })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(64 + self.vectors.len() * 8);
        buf.extend_from_slice(INDEX_MAGIC);
        buf.extend_from_slice(&(self.d as u64).to_le_bytes());
        buf.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.fingerprint.len() as u32).to_le_bytes());
        buf.extend_from_slice(self.fingerprint.as_bytes());
        for id in &self.ids {
            buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
            buf.extend_from_slice(id.as_bytes());
        }
        for v in &self.vectors {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = ByteReader::new(&bytes, path);
        if r.take(8)? != INDEX_MAGIC {
            return Err(Error::Format(format!("{}: not an index file", path.display())));
        }
        let d = r.u64()? as usize;
        let n = r.u64()? as usize;
        let utf8 = |b: &[u8]| {
            String::from_utf8(b.to_vec()).map_err(|_| Error::Format(format!("{}: invalid utf-8", path.display())))
        };
        let len = r.u32()? as usize;
        let fingerprint = utf8(r.take(len)?)?;
        let mut ids = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let len = r.u32()? as usize;
            ids.push(utf8(r.take(len)?)?);
        }
        let mut vectors = Vec::with_capacity((n * d).min(1 << 24));
        for _ in 0..n * d {
            vectors.push(r.f64()?);
        }
        if !r.rest().is_empty() {
            return Err(Error::Format(format!("{}: trailing bytes", path.display())));
        }
        Self::from_parts(d, ids, vectors, fingerprint)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Embeds every gallery image with the blank text.
pub fn build_index<'a, S: Scalar>(
    model: &Model<S>,
    gallery: impl IntoIterator<Item = &'a ImageGrid>,
) -> Result<GalleryIndex> {
    let grids: Vec<&ImageGrid> = gallery.into_iter().collect();
    let blank = TokenizedText::blank();
    let rows: Vec<Vec<f64>> = grids
        .par_iter()
        .map(|g| Ok(model.embed(g, &blank)?.0.data().iter().map(|v| v.as_f64()).collect()))
        .collect::<Result<_>>()?;
    let ids = grids.iter().map(|g| g.id.clone()).collect();
    GalleryIndex::from_parts(model.d_model(), ids, rows.concat(), model.fingerprint())
}

/// Embeds `(img, text)` and returns the best `k` gallery hits.
pub fn query_topk<S: Scalar>(
    idx: &GalleryIndex,
    model: &Model<S>,
    img: &ImageGrid,
    text: &TokenizedText,
    k: usize,
) -> Result<Vec<Hit>> {
    if idx.is_empty() {
        return Err(Error::Data("gallery index is empty".into()));
    }
    let (r, _) = model.embed(img, text)?;
    let q: Vec<f64> = r.data().iter().map(|v| v.as_f64()).collect();
    idx.topk(&q, k)
}
