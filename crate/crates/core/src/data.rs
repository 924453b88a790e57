//! Triplet dataset on disk: `triplets.jsonl` (one record per line) plus a
//! `grids.bin` sidecar holding every image grid behind an id→offset table.
//!
//! `grids.bin` layout, little-endian:
//!
//! ```text
//! b"CIRGRID1"            magic
//! u32                    grid side P
//! u64                    image count n
//! n × { u32 len, id bytes, u64 offset }   offset in f64 units into the block
//! n × P²·8 f64           feature block
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ImageGrid, HIST_BINS};
use crate::text::NpSpan;

pub const TRIPLETS_FILE: &str = "triplets.jsonl";
pub const GRIDS_FILE: &str = "grids.bin";
const GRID_MAGIC: &[u8; 8] = b"CIRGRID1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub query_id: String,
    pub target_id: String,
    pub text: String,
    #[serde(default)]
    pub subset_ids: Vec<String>,
    pub gt_ids: Vec<String>,
    /// Every noun phrase in BFS order; the cap and leaf filter are applied
    /// when the record is used.
    #[serde(default)]
    pub np_spans: Vec<NpSpan>,
}

impl TripletRecord {
    /// `np_spans` filtered to leaves (optionally) and then capped at `max`,
    /// which matches extracting from the tree with the same settings.
    pub fn select_nps(&self, max: usize, leaf_only: bool) -> Vec<NpSpan> {
        self.np_spans
            .iter()
            .filter(|s| !leaf_only || s.leaf)
            .take(max)
            .cloned()
            .collect()
    }
}

/// Image grids in insertion order with lookup by id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GridStore {
    grids: Vec<ImageGrid>,
    index: HashMap<String, usize>,
}

impl GridStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, g: ImageGrid) -> Result<()> {
        if let Some(first) = self.grids.first() {
            if first.p != g.p {
                return Err(Error::Data(format!(
                    "grid {} has side {} but store uses {}",
                    g.id, g.p, first.p
                )));
            }
        }
        if self.index.contains_key(&g.id) {
            return Err(Error::Data(format!("duplicate image id {}", g.id)));
        }
        self.index.insert(g.id.clone(), self.grids.len());
        self.grids.push(g);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&ImageGrid> {
        self.index.get(id).map(|&i| &self.grids[i])
    }

    pub fn require(&self, id: &str) -> Result<&ImageGrid> {
        self.get(id)
            .ok_or_else(|| Error::Data(format!("unknown image id {id}")))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.grids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ImageGrid> {
        self.grids.iter()
    }

    pub fn grid_side(&self) -> Option<usize> {
        self.grids.first().map(|g| g.p)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let p = self.grid_side().unwrap_or(0);
        let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        let mut buf = Vec::new();
        buf.extend_from_slice(GRID_MAGIC);
        buf.extend_from_slice(&(p as u32).to_le_bytes());
        buf.extend_from_slice(&(self.grids.len() as u64).to_le_bytes());
        let per = p * p * HIST_BINS;
        for (i, g) in self.grids.iter().enumerate() {
            buf.extend_from_slice(&(g.id.len() as u32).to_le_bytes());
            buf.extend_from_slice(g.id.as_bytes());
            buf.extend_from_slice(&((i * per) as u64).to_le_bytes());
        }
        for g in &self.grids {
            for v in &g.features {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let mut r = ByteReader::new(&bytes, path);
        if r.take(8)? != GRID_MAGIC {
            return Err(Error::Format(format!("{}: not a grid file", path.display())));
        }
        let p = r.u32()? as usize;
        let n = r.u64()? as usize;
        let mut table = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let len = r.u32()? as usize;
            let id = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Format(format!("{}: id is not utf-8", path.display())))?;
            table.push((id, r.u64()? as usize));
        }
        let block = r.rest();
        let per = p * p * HIST_BINS;
        let mut store = GridStore::new();
        for (id, off) in table {
            let lo = off
                .checked_mul(8)
                .filter(|&lo| lo + per * 8 <= block.len())
                .ok_or_else(|| {
                    Error::Format(format!("{}: offset of {id} outside the feature block", path.display()))
                })?;
            let features = block[lo..lo + per * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            store.insert(ImageGrid::new(id, p, features)?)?;
        }
        Ok(store)
    }
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: String,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8], path: &Path) -> Self {
        Self {
            bytes,
            pos: 0,
            what: path.display().to_string(),
        }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!("{}: truncated", self.what)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn rest(&mut self) -> &'a [u8] {
        let s = &self.bytes[self.pos..];
        self.pos = self.bytes.len();
        s
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<TripletRecord>,
    pub grids: GridStore,
}

impl Dataset {
    /// Checks the record invariants against the grid store.
    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            let bad = |why: &str| Err(Error::Data(format!("record {i} ({}): {why}", r.query_id)));
            if r.query_id == r.target_id {
                return bad("query and target ids coincide");
            }
            if r.gt_ids.is_empty() {
                return bad("no ground truth");
            }
            for id in std::iter::once(&r.query_id)
                .chain(std::iter::once(&r.target_id))
                .chain(&r.gt_ids)
                .chain(&r.subset_ids)
            {
                if !self.grids.contains(id) {
                    return bad(&format!("image {id} missing from the grid store"));
                }
            }
            if !r.subset_ids.is_empty() && !r.gt_ids.iter().any(|g| r.subset_ids.contains(g)) {
                return bad("subset holds no ground truth");
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(TRIPLETS_FILE);
        let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(f);
        for r in &self.records {
            let line = serde_json::to_string(r).expect("record serializes");
            writeln!(w, "{line}").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        self.grids.write(&dir.join(GRIDS_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(TRIPLETS_FILE);
        let f = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut records = Vec::new();
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(
                serde_json::from_str(&line).map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 1)))?,
            );
        }
        let ds = Self {
            records,
            grids: GridStore::read(&dir.join(GRIDS_FILE))?,
        };
        ds.validate()?;
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(id: &str, v: f64) -> ImageGrid {
        ImageGrid::new(id, 2, vec![v; 2 * 2 * HIST_BINS]).unwrap()
    }

    #[test]
    fn grid_store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = GridStore::new();
        s.insert(grid("a", 0.25)).unwrap();
        s.insert(grid("bb", 0.5)).unwrap();
        let p = dir.path().join("g.bin");
        s.write(&p).unwrap();
        assert_eq!(GridStore::read(&p).unwrap(), s);
    }

    #[test]
    fn duplicate_and_truncation_rejected() {
        let mut s = GridStore::new();
        s.insert(grid("a", 0.25)).unwrap();
        assert!(s.insert(grid("a", 0.5)).is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.bin");
        s.write(&p).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(GridStore::read(&p), Err(Error::Format(_))));
    }

    #[test]
    fn validation_catches_missing_images() {
        let mut ds = Dataset::default();
        ds.grids.insert(grid("q", 0.25)).unwrap();
        ds.records.push(TripletRecord {
            query_id: "q".into(),
            target_id: "t".into(),
            text: "add a ball".into(),
            subset_ids: vec![],
            gt_ids: vec!["t".into()],
            np_spans: vec![],
        });
        assert!(ds.validate().is_err());
        ds.grids.insert(grid("t", 0.5)).unwrap();
        assert!(ds.validate().is_ok());
    }
}
