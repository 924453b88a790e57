//! Per-phrase cross-attention maps: extraction, image dumps, and the
//! attention mass that falls inside a set of patches.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};

use crate::datagen::synthetic::{SynthTriplet, SyntheticSet};
use crate::error::{Error, Result};
use crate::losses::RowAlignment;
use crate::model::{ImageGrid, Model};
use crate::scalar::Scalar;
use crate::text::{chunk_nps, extract_nps, pos_tag, tokenize, Lexicon, NpSpan, TokenizedText};

/// In-context attention rows of one noun phrase.
#[derive(Clone, Debug, PartialEq)]
pub struct NpAttention {
    pub np: NpSpan,
    /// One row per phrase token, each a distribution over the P×P patches.
    pub rows: Vec<Vec<f64>>,
    pub p: usize,
}

impl NpAttention {
    /// Column mean of the rows.
    pub fn mean_map(&self) -> Vec<f64> {
        let n = self.rows.len() as f64;
        (0..self.p * self.p)
            .map(|j| self.rows.iter().map(|r| r[j]).sum::<f64>() / n)
            .collect()
    }

    /// Mean over rows of the weight on the given `(row, col)` cells.
    pub fn region_mass(&self, cells: &[(usize, usize)]) -> f64 {
        let idx: Vec<usize> = cells.iter().map(|&(r, c)| r * self.p + c).collect();
        self.rows
            .iter()
            .map(|row| idx.iter().map(|&j| row[j]).sum::<f64>())
            .sum::<f64>()
            / self.rows.len() as f64
    }
}

/// Full-text map rows for each extracted phrase of `text`.
pub fn np_attention<S: Scalar>(
    model: &Model<S>,
    img: &ImageGrid,
    text: &TokenizedText,
    nps: &[NpSpan],
) -> Result<Vec<NpAttention>> {
    let (_, map) = model.embed(img, text)?;
    let w = &map.weights;
    nps.iter()
        .map(|np| {
            let rows = RowAlignment::for_span(np)
                .full_rows
                .iter()
                .map(|&r| {
                    if r >= w.rows() {
                        return Err(Error::Contract(format!(
                            "phrase row {r} outside a {}-row map",
                            w.rows()
                        )));
                    }
                    Ok(w.row(r).iter().map(|v| v.as_f64()).collect())
                })
                .collect::<Result<_>>()?;
            Ok(NpAttention {
                np: np.clone(),
                rows,
                p: img.p,
            })
        })
        .collect()
}

/// Phrases of an already tokenized text.
pub fn phrases(text: &TokenizedText, lexicon: &Lexicon, max: usize, leaf_only: bool) -> Vec<NpSpan> {
    let tags = pos_tag(text, lexicon);
    extract_nps(&chunk_nps(text, &tags), text, max, leaf_only)
}

/// Writes `np{i:02}.pgm` (mean map, `px` pixels per patch, white = max
/// weight) and `np{i:02}.txt` (header plus one row of weights per token)
/// for every phrase. Returns the written paths.
pub fn dump(dir: &Path, maps: &[NpAttention], px: usize) -> Result<Vec<(PathBuf, PathBuf)>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::with_capacity(maps.len());
    for (i, a) in maps.iter().enumerate() {
        let mean = a.mean_map();
        let peak = mean.iter().cloned().fold(0.0, f64::max);
        let side = a.p * px;
        let mut pixels = vec![0u8; side * side];
        for y in 0..side {
            for x in 0..side {
                let v = mean[(y / px) * a.p + x / px];
                pixels[y * side + x] = if peak > 0.0 {
                    (255.0 * v / peak).round() as u8
                } else {
                    0
                };
            }
        }
        let pgm = dir.join(format!("np{i:02}.pgm"));
        let f = fs::File::create(&pgm).map_err(|e| Error::io(&pgm, e))?;
        PnmEncoder::new(f)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(&pixels, side as u32, side as u32, ExtendedColorType::L8)
            .map_err(|e| Error::Format(format!("{}: {e}", pgm.display())))?;

        let mut txt = format!(
            "# phrase: {}\n# depth: {}\n# leaf: {}\n# token_rows: {:?}\n# grid: {}x{}\n",
            a.np.text, a.np.depth, a.np.leaf, a.np.token_rows, a.p, a.p
        );
        for row in &a.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(txt, "{}", cells.join(" ")).expect("write to string");
        }
        let side_path = dir.join(format!("np{i:02}.txt"));
        fs::write(&side_path, txt).map_err(|e| Error::io(&side_path, e))?;
        out.push((pgm, side_path));
    }
    Ok(out)
}

/// Reads the weight rows back from a sidecar written by [`dump`].
pub fn read_sidecar(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            l.split_whitespace()
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
                })
                .collect()
        })
        .collect()
}

/// Root (depth-0) phrases of a synthetic caption, each with the cell edited
/// by the clause it sits in.
pub fn clause_cells(t: &SynthTriplet, text: &str, nps: &[NpSpan]) -> Result<Vec<(NpSpan, (usize, usize))>> {
    let mut scene = t.query.clone();
    let mut spans = Vec::with_capacity(t.ops.len());
    let mut at = 0;
    let mut joined = String::new();
    for (i, op) in t.ops.iter().enumerate() {
        if i > 0 {
            joined.push_str(" and ");
            at = joined.len();
        }
        let c = op.caption(&scene)?;
        joined.push_str(&c);
        spans.push((at..at + c.len(), op.cell()));
        scene = op.apply(&scene)?;
    }
    if joined != text {
        return Err(Error::Contract(format!("caption {text:?} does not match its edits")));
    }
    Ok(nps
        .iter()
        .filter(|n| n.depth == 0)
        .filter_map(|n| {
            spans
                .iter()
                .find(|(r, _)| r.contains(&n.start))
                .map(|(_, c)| (n.clone(), *c))
        })
        .collect())
}

/// Mean in-context attention mass that root phrases put on the cell their
/// clause edits, over every triplet of a synthetic set.
pub fn edited_region_mass<S: Scalar>(model: &Model<S>, set: &SyntheticSet, lexicon: &Lexicon) -> Result<f64> {
    use rayon::prelude::*;
    let per: Vec<Vec<f64>> = set
        .dataset
        .records
        .par_iter()
        .zip(&set.provenance)
        .map(|(r, t)| {
            let text = tokenize(&r.text, lexicon);
            let pairs = clause_cells(t, &r.text, &r.np_spans)?;
            let nps: Vec<NpSpan> = pairs.iter().map(|(n, _)| n.clone()).collect();
            let img = set.dataset.grids.require(&r.query_id)?;
            let maps = np_attention(model, img, &text, &nps)?;
            Ok(maps
                .iter()
                .zip(&pairs)
                .map(|(m, (_, cell))| m.region_mass(&[*cell]))
                .collect())
        })
        .collect::<Result<_>>()?;
    let all: Vec<f64> = per.into_iter().flatten().collect();
    if all.is_empty() {
        return Err(Error::Data("probe set has no root phrases".into()));
    }
    Ok(all.iter().sum::<f64>() / all.len() as f64)
}
