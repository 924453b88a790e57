use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Colour bins per patch: one bit per RGB channel.
pub const HIST_BINS: usize = 8;

/// An image as a `P×P` grid of patch features (8-bin colour histograms),
/// stored row-major: patch `(r, c)` is row `r * P + c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    pub id: String,
    pub p: usize,
    pub features: Vec<f64>,
}

/// Histogram bin of an RGB pixel.
pub fn color_bin(rgb: [u8; 3]) -> usize {
    (usize::from(rgb[0] >= 128) << 2) | (usize::from(rgb[1] >= 128) << 1) | usize::from(rgb[2] >= 128)
}

impl ImageGrid {
    pub fn new(id: impl Into<String>, p: usize, features: Vec<f64>) -> Result<Self> {
        if p == 0 || features.len() != p * p * HIST_BINS {
            return Err(Error::Data(format!(
                "grid of side {p} needs {} features, got {}",
                p * p * HIST_BINS,
                features.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite patch feature".into()));
        }
        Ok(Self {
            id: id.into(),
            p,
            features,
        })
    }

    pub fn patches(&self) -> usize {
        self.p * self.p
    }

    pub fn patch(&self, i: usize) -> &[f64] {
        &self.features[i * HIST_BINS..(i + 1) * HIST_BINS]
    }

    /// Histograms of `p×p` equal blocks of an RGB raster. Pixels beyond the
    /// last whole block are ignored.
    pub fn from_rgb(id: impl Into<String>, width: usize, height: usize, rgb: &[u8], p: usize) -> Result<Self> {
        if rgb.len() != width * height * 3 {
            return Err(Error::Data("raster size mismatch".into()));
        }
        let (bw, bh) = (width / p, height / p);
        if bw == 0 || bh == 0 {
            return Err(Error::Data(format!(
                "{width}×{height} image too small for a {p}×{p} grid"
            )));
        }
        let mut features = vec![0.0; p * p * HIST_BINS];
        let per_block = (bw * bh) as f64;
        for br in 0..p {
            for bc in 0..p {
                let cell = br * p + bc;
                for y in br * bh..(br + 1) * bh {
                    for x in bc * bw..(bc + 1) * bw {
                        let o = (y * width + x) * 3;
                        let bin = color_bin([rgb[o], rgb[o + 1], rgb[o + 2]]);
                        features[cell * HIST_BINS + bin] += 1.0;
                    }
                }
                for v in &mut features[cell * HIST_BINS..(cell + 1) * HIST_BINS] {
                    *v /= per_block;
                }
            }
        }
        Self::new(id, p, features)
    }

    /// Loads any PNG/PPM file and reduces it to a grid.
    pub fn from_image_file(id: impl Into<String>, path: &Path, p: usize) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::Data(format!("cannot decode {}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Self::from_rgb(id, w as usize, h as usize, img.as_raw(), p)
    }
}
