//! Contrast-limited adaptive histogram equalization.

use crate::error::{Error, Result};
use crate::raster::GrayRaster;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClaheConfig {
    pub clip_limit: f64,
    pub grid_rows: usize,
    pub grid_cols: usize,
}

impl Default for ClaheConfig {
    fn default() -> Self {
        ClaheConfig {
            clip_limit: 2.0,
            grid_rows: 8,
            grid_cols: 8,
        }
    }
}

impl ClaheConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clip_limit.is_nan() || self.clip_limit <= 0.0 {
            return Err(Error::InvalidArgument("clip limit must be positive".into()));
        }
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return Err(Error::InvalidArgument("tile grid must be at least 1x1".into()));
        }
        Ok(())
    }
}

/// Tile boundaries: tile `i` spans `[edges[i], edges[i + 1])`.
fn tile_edges(len: usize, tiles: usize) -> Vec<usize> {
    (0..=tiles).map(|i| i * len / tiles).collect()
}

/// Clipped-histogram equalization lookup table for one tile.
pub(crate) fn tile_lut(hist: &[u64; 256], pixels: u64, clip_limit: f64) -> [u8; 256] {
    let mut lut = [0u8; 256];
    let nonzero = hist.iter().filter(|&&c| c > 0).count();
    if nonzero <= 1 {
        for (i, v) in lut.iter_mut().enumerate() {
            *v = i as u8;
        }
        return lut;
    }
    let ceiling = (clip_limit * pixels as f64 / 256.0).max(1.0);
    let mut clipped = [0f64; 256];
    let mut excess = 0.0;
    for (c, &h) in clipped.iter_mut().zip(hist.iter()) {
        let h = h as f64;
        if h > ceiling {
            excess += h - ceiling;
            *c = ceiling;
        } else {
            *c = h;
        }
    }
    let bonus = excess / 256.0;
    let scale = 255.0 / pixels as f64;
    let mut cdf = 0.0;
    for (v, &c) in lut.iter_mut().zip(clipped.iter()) {
        cdf += c + bonus;
        *v = (cdf * scale).round().clamp(0.0, 255.0) as u8;
    }
    lut
}

/// Per-tile equalization with clipped histograms; each pixel blends the four
/// nearest tile mappings bilinearly by distance to tile centres.
pub fn clahe(img: &GrayRaster, cfg: &ClaheConfig) -> Result<GrayRaster> {
    cfg.validate()?;
    let (w, h) = (img.width(), img.height());
    if w < cfg.grid_cols || h < cfg.grid_rows {
        return Err(Error::TooSmall(format!(
            "{w}x{h} image is smaller than the {}x{} tile grid",
            cfg.grid_cols, cfg.grid_rows
        )));
    }
    let xe = tile_edges(w, cfg.grid_cols);
    let ye = tile_edges(h, cfg.grid_rows);
    let mut luts = Vec::with_capacity(cfg.grid_rows * cfg.grid_cols);
    for ty in 0..cfg.grid_rows {
        for tx in 0..cfg.grid_cols {
            let mut hist = [0u64; 256];
            for y in ye[ty]..ye[ty + 1] {
                for &v in &img.row(y)[xe[tx]..xe[tx + 1]] {
                    hist[v as usize] += 1;
                }
            }
            let n = ((ye[ty + 1] - ye[ty]) * (xe[tx + 1] - xe[tx])) as u64;
            luts.push(tile_lut(&hist, n, cfg.clip_limit));
        }
    }
    let centres = |e: &[usize]| -> Vec<f64> { e.windows(2).map(|p| (p[0] + p[1]) as f64 / 2.0 - 0.5).collect() };
    let xc = centres(&xe);
    let yc = centres(&ye);
    // For a coordinate, the two neighbouring tile indices and the weight of the second.
    let interp = |c: &[f64], p: f64| -> (usize, usize, f64) {
        if p <= c[0] {
            return (0, 0, 0.0);
        }
        let last = c.len() - 1;
        if p >= c[last] {
            return (last, last, 0.0);
        }
        let i = c.partition_point(|&v| v <= p) - 1;
        (i, i + 1, (p - c[i]) / (c[i + 1] - c[i]))
    };
    let xs: Vec<_> = (0..w).map(|x| interp(&xc, x as f64)).collect();
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        let (y0, y1, fy) = interp(&yc, y as f64);
        let row = img.row(y);
        for (x, &v) in row.iter().enumerate() {
            let (x0, x1, fx) = xs[x];
            let at = |ty: usize, tx: usize| luts[ty * cfg.grid_cols + tx][v as usize] as f64;
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
            let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
            out[y * w + x] = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
        }
    }
    GrayRaster::new(w, h, out)
}
