//! Local-entropy thresholding and binary mask cleanup.
//!
//! The classic masker computes a windowed Shannon entropy map, quantizes it to
//! 256 levels, splits it with Otsu's criterion, and then cleans the result:
//! enclosed holes are filled, specks below 1% of the foreground are removed,
//! and any background unreachable from the image corners is absorbed.

use std::collections::VecDeque;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{self, GrayRaster};

pub const ENTROPY_WINDOW: usize = 37;
/// Components smaller than this fraction of the total foreground are dropped.
pub const SPECK_FRACTION: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct EntropyMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl EntropyMap {
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Linear quantization of `[min, max]` onto bins 0..=255.
    pub fn quantize(&self) -> Result<Vec<u8>> {
        let (lo, hi) = self.min_max();
        let span = hi - lo;
        if span.is_nan() || span <= 1e-12 {
            return Err(Error::NoLimbFound);
        }
        Ok(self
            .data
            .iter()
            .map(|&v| ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect())
    }
}

/// Symmetric reflection (`d c b a | a b c d | d c b a`) for any offset.
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Clears the rounding residue `log2(n) - n*log2(n)/n` of single-level windows.
#[inline]
fn bits(h: f64) -> f64 {
    if h < 1e-12 {
        0.0
    } else {
        h
    }
}

/// Per-pixel entropy (bits) of the 8-bit levels inside a `window x window`
/// neighbourhood, with reflected borders.
pub fn entropy_map(img: &GrayRaster, window: usize) -> Result<EntropyMap> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "entropy window must be odd and >= 3, got {window}"
        )));
    }
    let (w, h) = (img.width(), img.height());
    let r = (window / 2) as isize;
    let n = window * window;
    // c * log2(c) for every possible count
    let table: Vec<f64> = (0..=n)
        .map(|c| if c == 0 { 0.0 } else { c as f64 * (c as f64).log2() })
        .collect();
    let log_n = (n as f64).log2();
    let cols: Vec<usize> = (-r..w as isize + r).map(|x| reflect(x, w)).collect();
    let mut data = vec![0.0; w * h];
    let mut hist = vec![0usize; 256];
    let mut rows: Vec<&[u8]> = Vec::with_capacity(window);
    for y in 0..h {
        rows.clear();
        rows.extend((y as isize - r..=y as isize + r).map(|yy| img.row(reflect(yy, h))));
        hist.iter_mut().for_each(|c| *c = 0);
        for &sx in &cols[..window] {
            for row in &rows {
                hist[row[sx] as usize] += 1;
            }
        }
        let mut s: f64 = hist.iter().map(|&c| table[c]).sum();
        let out = &mut data[y * w..(y + 1) * w];
        out[0] = bits(log_n - s / n as f64);
        for x in 1..w {
            let (gone, came) = (cols[x - 1], cols[x - 1 + window]);
            for row in &rows {
                let a = row[gone] as usize;
                s += table[hist[a] - 1] - table[hist[a]];
                hist[a] -= 1;
                let b = row[came] as usize;
                s += table[hist[b] + 1] - table[hist[b]];
                hist[b] += 1;
            }
            out[x] = bits(log_n - s / n as f64);
        }
    }
    Ok(EntropyMap {
        width: w,
        height: h,
        data,
    })
}

/// Entropy in bits of the empirical distribution given by `counts`.
pub fn shannon_entropy(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let h = -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| c as f64 / n as f64)
        .map(|p| p * p.log2())
        .sum::<f64>();
    h.max(0.0)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Histogram256 {
    pub counts: [u64; 256],
}

impl Histogram256 {
    pub fn from_levels(levels: &[u8]) -> Self {
        let mut counts = [0u64; 256];
        for &v in levels {
            counts[v as usize] += 1;
        }
        Histogram256 { counts }
    }
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
    pub fn nonzero_bins(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }
}

/// Sum of squared deviations from the class mean, from integer moments.
fn class_scatter(n: u64, s1: u64, s2: u64) -> f64 {
    if n == 0 {
        0.0
    } else {
        s2 as f64 - (s1 as f64) * (s1 as f64) / n as f64
    }
}

/// Within-class variance `w0*var0 + w1*var1` for class 0 = bins `<= t`.
pub fn within_class_variance(hist: &Histogram256, t: usize) -> f64 {
    let (mut n0, mut a0, mut b0) = (0u64, 0u64, 0u64);
    let (mut n1, mut a1, mut b1) = (0u64, 0u64, 0u64);
    for (i, &c) in hist.counts.iter().enumerate() {
        let i = i as u64;
        if i as usize <= t {
            n0 += c;
            a0 += i * c;
            b0 += i * i * c;
        } else {
            n1 += c;
            a1 += i * c;
            b1 += i * i * c;
        }
    }
    (class_scatter(n0, a0, b0) + class_scatter(n1, a1, b1)) / (n0 + n1) as f64
}

/// Threshold bin `t` in 0..=254 minimizing the within-class variance; class 0
/// is bins `<= t`. Ties go to the smallest `t`.
pub fn otsu_threshold(hist: &Histogram256) -> Result<u8> {
    if hist.nonzero_bins() < 2 {
        return Err(Error::Degenerate("histogram needs at least two occupied bins".into()));
    }
    let total = hist.total();
    let (mut n_all, mut a_all, mut b_all) = (0u64, 0u64, 0u64);
    for (i, &c) in hist.counts.iter().enumerate() {
        let i = i as u64;
        n_all += c;
        a_all += i * c;
        b_all += i * i * c;
    }
    let (mut n0, mut a0, mut b0) = (0u64, 0u64, 0u64);
    let mut best = (f64::INFINITY, 0u8);
    for t in 0..255usize {
        let c = hist.counts[t];
        let i = t as u64;
        n0 += c;
        a0 += i * c;
        b0 += i * i * c;
        let sw = (class_scatter(n0, a0, b0) + class_scatter(n_all - n0, a_all - a0, b_all - b0)) / total as f64;
        if sw < best.0 {
            best = (sw, t as u8);
        }
    }
    Ok(best.1)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimension);
        }
        if data.len() != width * height {
            return Err(Error::InvalidArgument("mask data size mismatch".into()));
        }
        Ok(BinaryMask { width, height, data })
    }
    pub fn filled(width: usize, height: usize, value: bool) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn data(&self) -> &[bool] {
        &self.data
    }
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
    pub fn coverage(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }

    pub fn iou(&self, other: &BinaryMask) -> Result<f64> {
        self.check_dims(other.width, other.height)?;
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
    }

    fn check_dims(&self, width: usize, height: usize) -> Result<()> {
        if (self.width, self.height) != (width, height) {
            return Err(Error::DimensionMismatch {
                expected: (self.width, self.height),
                found: (width, height),
            });
        }
        Ok(())
    }

    /// Nearest-neighbour resample (pixel-centre aligned).
    pub fn resize_nearest(&self, width: usize, height: usize) -> BinaryMask {
        let map = |dst: usize, src: usize| -> Vec<usize> {
            (0..dst)
                .map(|i| (((i as f64 + 0.5) * src as f64 / dst as f64) as usize).min(src - 1))
                .collect()
        };
        let xs = map(width, self.width);
        let ys = map(height, self.height);
        let mut data = Vec::with_capacity(width * height);
        for &sy in &ys {
            data.extend(xs.iter().map(|&sx| self.get(sx, sy)));
        }
        BinaryMask { width, height, data }
    }

    /// 0/255 gray rendering (foreground white).
    pub fn to_gray(&self) -> GrayRaster {
        GrayRaster::new(
            self.width,
            self.height,
            self.data.iter().map(|&v| if v { 255 } else { 0 }).collect(),
        )
        .expect("mask dimensions are valid")
    }

    /// Gray > 127 is foreground.
    pub fn from_gray(img: &GrayRaster) -> BinaryMask {
        BinaryMask {
            width: img.width(),
            height: img.height(),
            data: img.data().iter().map(|&v| v > 127).collect(),
        }
    }

    /// Rows packed 8 pixels per byte, most significant bit first, each row
    /// padded to a byte boundary; `set_bit` decides the bit for a pixel.
    fn packed(&self, set_bit: impl Fn(bool) -> bool) -> Vec<u8> {
        let stride = self.width.div_ceil(8);
        let mut out = vec![0u8; stride * self.height];
        for y in 0..self.height {
            for x in 0..self.width {
                if set_bit(self.get(x, y)) {
                    out[y * stride + x / 8] |= 0x80 >> (x % 8);
                }
            }
        }
        out
    }

    /// 1-bit grayscale PNG, foreground white.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut enc = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::One);
        let mut writer = enc.write_header().map_err(|e| Error::Encode(e.to_string()))?;
        writer
            .write_image_data(&self.packed(|v| v))
            .map_err(|e| Error::Encode(e.to_string()))?;
        writer.finish().map_err(|e| Error::Encode(e.to_string()))?;
        Ok(())
    }

    /// Binary PBM (P4). PBM bit 1 is black, so foreground is stored as 0.
    pub fn save_pbm(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(std::fs::File::create(path)?);
        write!(f, "P4\n{} {}\n", self.width, self.height)?;
        f.write_all(&self.packed(|v| !v))?;
        f.flush()?;
        Ok(())
    }

    /// `.pbm` selects P4, anything else PNG.
    pub fn save(&self, path: &Path) -> Result<()> {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("pbm") => self.save_pbm(path),
            _ => self.save_png(path),
        }
    }

    pub fn load(path: &Path) -> Result<BinaryMask> {
        Ok(BinaryMask::from_gray(&raster::load_gray(path)?))
    }
}

const N4: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
const N8: [(isize, isize); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

/// Labels connected regions of pixels equal to `value`. Returns per-pixel labels
/// (`usize::MAX` for other pixels) and the pixel lists of each region.
fn components(mask: &BinaryMask, value: bool, nbhd: &[(isize, isize)]) -> (Vec<usize>, Vec<Vec<usize>>) {
    let (w, h) = (mask.width as isize, mask.height as isize);
    let mut label = vec![usize::MAX; mask.data.len()];
    let mut regions = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.data.len() {
        if mask.data[start] != value || label[start] != usize::MAX {
            continue;
        }
        let id = regions.len();
        let mut pixels = Vec::new();
        label[start] = id;
        stack.push(start);
        while let Some(p) = stack.pop() {
            pixels.push(p);
            let (x, y) = ((p as isize) % w, (p as isize) / w);
            for &(dx, dy) in nbhd {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                let q = (ny * w + nx) as usize;
                if mask.data[q] == value && label[q] == usize::MAX {
                    label[q] = id;
                    stack.push(q);
                }
            }
        }
        regions.push(pixels);
    }
    (label, regions)
}

/// Turns background 4-components that do not touch the image border into
/// foreground.
pub fn fill_enclosed_holes(mask: &mut BinaryMask) {
    let (w, h) = (mask.width, mask.height);
    let (_, regions) = components(mask, false, &N4);
    for region in regions {
        let touches = region.iter().any(|&p| {
            let (x, y) = (p % w, p / w);
            x == 0 || y == 0 || x == w - 1 || y == h - 1
        });
        if !touches {
            for p in region {
                mask.data[p] = true;
            }
        }
    }
}

/// Deletes 8-connected foreground components whose area is below
/// `fraction` of the total foreground. Returns the number removed.
pub fn remove_small_components(mask: &mut BinaryMask, fraction: f64) -> usize {
    let total = mask.count();
    let (_, regions) = components(mask, true, &N8);
    let min_area = fraction * total as f64;
    let mut removed = 0;
    for region in regions {
        if (region.len() as f64) < min_area {
            removed += 1;
            for p in region {
                mask.data[p] = false;
            }
        }
    }
    removed
}

/// Flood fills the background 4-connected from the four corners; background
/// pixels not reached become foreground.
pub fn fill_unreachable_background(mask: &mut BinaryMask) {
    let (w, h) = (mask.width, mask.height);
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::new();
    for p in [0, w - 1, (h - 1) * w, h * w - 1] {
        if !mask.data[p] && !seen[p] {
            seen[p] = true;
            queue.push_back(p);
        }
    }
    while let Some(p) = queue.pop_front() {
        let (x, y) = ((p % w) as isize, (p / w) as isize);
        for &(dx, dy) in &N4 {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let q = ny as usize * w + nx as usize;
            if !mask.data[q] && !seen[q] {
                seen[q] = true;
                queue.push_back(q);
            }
        }
    }
    for (v, s) in mask.data.iter_mut().zip(seen) {
        if !*v && !s {
            *v = true;
        }
    }
}

/// Hole filling, speck removal, and corner flood fill. The speck pass is
/// repeated last because filling can raise the foreground total.
pub fn clean_mask(mask: &BinaryMask) -> BinaryMask {
    let mut m = mask.clone();
    fill_enclosed_holes(&mut m);
    remove_small_components(&mut m, SPECK_FRACTION);
    fill_unreachable_background(&mut m);
    remove_small_components(&mut m, SPECK_FRACTION);
    m
}

/// Entropy-threshold mask of the limb: entropy map, 256-bin quantization,
/// Otsu split (foreground above threshold), then [`clean_mask`].
pub fn extract_mask(img: &GrayRaster) -> Result<BinaryMask> {
    extract_mask_with_window(img, ENTROPY_WINDOW)
}

pub fn extract_mask_with_window(img: &GrayRaster, window: usize) -> Result<BinaryMask> {
    let q = entropy_map(img, window)?.quantize()?;
    let t = otsu_threshold(&Histogram256::from_levels(&q)).map_err(|_| Error::NoLimbFound)?;
    let raw = BinaryMask::new(img.width(), img.height(), q.iter().map(|&v| v > t).collect())?;
    let m = clean_mask(&raw);
    if m.count() == 0 {
        return Err(Error::NoLimbFound);
    }
    Ok(m)
}

/// Zeroes every pixel outside the mask.
pub fn apply_mask(img: &GrayRaster, mask: &BinaryMask) -> Result<GrayRaster> {
    mask.check_dims(img.width(), img.height())?;
    let data = img
        .data()
        .iter()
        .zip(&mask.data)
        .map(|(&v, &m)| if m { v } else { 0 })
        .collect();
    GrayRaster::new(img.width(), img.height(), data)
}

/// True when every background pixel is 4-connected to a background corner.
pub fn is_hole_free(mask: &BinaryMask) -> bool {
    let mut m = mask.clone();
    fill_unreachable_background(&mut m);
    m == *mask
}

/// Area of the smallest 8-connected foreground component, if any.
pub fn smallest_component_area(mask: &BinaryMask) -> Option<usize> {
    components(mask, true, &N8).1.iter().map(Vec::len).min()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Shannon entropy evaluated directly over the reflected window.
    fn entropy_oracle(img: &GrayRaster, window: usize, x: usize, y: usize) -> f64 {
        let r = (window / 2) as isize;
        let mut counts = std::collections::HashMap::new();
        for dy in -r..=r {
            for dx in -r..=r {
                let sx = reflect(x as isize + dx, img.width());
                let sy = reflect(y as isize + dy, img.height());
                *counts.entry(img.get(sx, sy)).or_insert(0usize) += 1;
            }
        }
        let n = (window * window) as f64;
        -counts
            .values()
            .map(|&c| c as f64 / n)
            .map(|p| p * p.log2())
            .sum::<f64>()
    }

    #[test]
    fn reflection_is_symmetric() {
        let got: Vec<usize> = (-3..8).map(|i| reflect(i, 5)).collect();
        assert_eq!(got, vec![2, 1, 0, 0, 1, 2, 3, 4, 4, 3, 2]);
        assert_eq!(reflect(-7, 2), 1);
    }

    #[test]
    fn entropy_constant_is_zero() {
        let e = entropy_map(&GrayRaster::filled(30, 20, 9).unwrap(), 7).unwrap();
        assert!(e.data().iter().all(|&v| v == 0.0));
        assert!(matches!(e.quantize(), Err(Error::NoLimbFound)));
    }

    #[test]
    fn entropy_of_equal_proportions() {
        // An odd window never splits evenly, so equal proportions are checked
        // on counts; the map itself is checked against the direct formula.
        assert!((shannon_entropy(&[8, 8]) - 1.0).abs() < 1e-15);
        assert!((shannon_entropy(&[4, 0, 4, 4, 4]) - 2.0).abs() < 1e-15);
        assert_eq!(shannon_entropy(&[25]), 0.0);
        let stripes = GrayRaster::from_fn(6, 6, |x, _| if x % 2 == 0 { 10 } else { 20 }).unwrap();
        let e = entropy_map(&stripes, 5).unwrap();
        assert!((e.get(2, 2) - shannon_entropy(&[15, 10])).abs() < 1e-12);
    }

    #[test]
    fn entropy_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..3 {
            let img = GrayRaster::from_fn(23, 17, |_, _| rng.gen_range(0..6u8) * 40).unwrap();
            let e = entropy_map(&img, 9).unwrap();
            for y in 0..17 {
                for x in 0..23 {
                    assert!((e.get(x, y) - entropy_oracle(&img, 9, x, y)).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn entropy_rejects_bad_windows() {
        let img = GrayRaster::filled(5, 5, 0).unwrap();
        assert!(entropy_map(&img, 4).is_err());
        assert!(entropy_map(&img, 1).is_err());
    }

    /// Direct evaluation of the within-class variance from class means.
    fn otsu_oracle(counts: &[u64; 256]) -> u8 {
        let total: u64 = counts.iter().sum();
        let mut best = (f64::INFINITY, 0u8);
        for t in 0..255usize {
            let mut sw = 0.0;
            for range in [0..t + 1, t + 1..256] {
                let n: u64 = counts[range.clone()].iter().sum();
                if n == 0 {
                    continue;
                }
                let mean = range.clone().map(|i| i as f64 * counts[i] as f64).sum::<f64>() / n as f64;
                let var = range.map(|i| counts[i] as f64 * (i as f64 - mean).powi(2)).sum::<f64>() / n as f64;
                sw += n as f64 / total as f64 * var;
            }
            if best.0.is_infinite() || sw < best.0 * (1.0 - 1e-12) {
                best = (sw, t as u8);
            }
        }
        best.1
    }

    #[test]
    fn otsu_two_spikes() {
        let mut h = Histogram256 { counts: [0; 256] };
        h.counts[50] = 100;
        h.counts[200] = 100;
        assert_eq!(otsu_threshold(&h).unwrap(), 50);
        assert_eq!(within_class_variance(&h, 50), 0.0);
    }

    #[test]
    fn otsu_single_spike_is_degenerate() {
        let mut h = Histogram256 { counts: [0; 256] };
        h.counts[128] = 10;
        assert!(matches!(otsu_threshold(&h), Err(Error::Degenerate(_))));
    }

    #[test]
    fn otsu_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let mut counts = [0u64; 256];
            for c in counts.iter_mut() {
                *c = if rng.gen_bool(0.7) { rng.gen_range(0..1000) } else { 0 };
            }
            let h = Histogram256 { counts };
            assert_eq!(otsu_threshold(&h).unwrap(), otsu_oracle(&counts));
        }
    }

    #[test]
    fn otsu_min_within_equals_max_between() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let mut counts = [0u64; 256];
            for c in counts.iter_mut() {
                *c = rng.gen_range(0..50);
            }
            let total: f64 = counts.iter().sum::<u64>() as f64;
            let mut best = (f64::NEG_INFINITY, 0u8);
            for t in 0..255usize {
                let n0: f64 = counts[..=t].iter().sum::<u64>() as f64;
                let n1 = total - n0;
                if n0 == 0.0 || n1 == 0.0 {
                    continue;
                }
                let m0 = (0..=t).map(|i| i as f64 * counts[i] as f64).sum::<f64>() / n0;
                let m1 = (t + 1..256).map(|i| i as f64 * counts[i] as f64).sum::<f64>() / n1;
                let between = n0 / total * n1 / total * (m0 - m1).powi(2);
                if between > best.0 * (1.0 + 1e-12) {
                    best = (between, t as u8);
                }
            }
            assert_eq!(otsu_threshold(&Histogram256 { counts }).unwrap(), best.1);
        }
    }

    fn disk(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| (x as f64 - cx).hypot(y as f64 - cy) <= r).unwrap()
    }

    #[test]
    fn donut_becomes_disk() {
        let outer = disk(80, 80, 40.0, 40.0, 30.0);
        let inner = disk(80, 80, 40.0, 40.0, 12.0);
        let donut = BinaryMask::from_fn(80, 80, |x, y| outer.get(x, y) && !inner.get(x, y)).unwrap();
        assert_eq!(clean_mask(&donut), outer);
    }

    #[test]
    fn speck_is_removed() {
        // 20 000 px blob and a 90 px speck (< 1% of 20 090).
        let mut m = BinaryMask::from_fn(300, 200, |x, y| (50..250).contains(&x) && (50..150).contains(&y)).unwrap();
        for y in 5..14 {
            for x in 5..15 {
                m.set(x, y, true);
            }
        }
        assert_eq!(m.count(), 20_090);
        let cleaned = clean_mask(&m);
        let expected = BinaryMask::from_fn(300, 200, |x, y| (50..250).contains(&x) && (50..150).contains(&y)).unwrap();
        assert_eq!(cleaned, expected);
    }

    #[test]
    fn component_at_one_percent_survives() {
        let mut m = BinaryMask::from_fn(300, 200, |x, y| (50..249).contains(&x) && (50..150).contains(&y)).unwrap();
        // 19 900 + 204 px: 204 >= 1% of 20 104
        for y in 5..8 {
            for x in 5..73 {
                m.set(x, y, true);
            }
        }
        assert_eq!(clean_mask(&m).count(), m.count());
    }

    #[test]
    fn border_notch_reaching_no_corner_is_filled() {
        // A background bay that touches the top edge but is cut off from every
        // corner by foreground: it survives hole filling, then the corner fill
        // absorbs it.
        let m = BinaryMask::from_fn(40, 40, |x, y| {
            let bay = (15..25).contains(&x) && y < 10;
            let band = y < 30 && (5..35).contains(&x);
            band && !bay
        })
        .unwrap();
        let c = clean_mask(&m);
        assert!(c.get(20, 0));
        assert!(!c.get(0, 0));
        assert!(is_hole_free(&c));
    }

    #[test]
    fn extract_mask_on_textured_disk() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let truth = disk(200, 200, 100.0, 100.0, 60.0);
        let img = GrayRaster::from_fn(
            200,
            200,
            |x, y| if truth.get(x, y) { rng.gen_range(60..=200) } else { 0 },
        )
        .unwrap();
        let m = extract_mask(&img).unwrap();
        let iou = m.iou(&truth).unwrap();
        assert!(iou > 0.85, "iou {iou}");
    }

    #[test]
    fn extract_mask_constant_image_is_no_limb() {
        let img = GrayRaster::filled(64, 64, 0).unwrap();
        assert!(matches!(extract_mask(&img), Err(Error::NoLimbFound)));
    }

    #[test]
    fn apply_mask_cases() {
        let img = GrayRaster::from_fn(8, 4, |x, y| (x * 30 + y) as u8).unwrap();
        let all = BinaryMask::filled(8, 4, true).unwrap();
        assert_eq!(apply_mask(&img, &all).unwrap(), img);
        let none = BinaryMask::filled(8, 4, false).unwrap();
        assert!(apply_mask(&img, &none).unwrap().data().iter().all(|&v| v == 0));
        let left = BinaryMask::from_fn(8, 4, |x, _| x < 4).unwrap();
        let out = apply_mask(&img, &left).unwrap();
        for y in 0..4 {
            for x in 0..8 {
                assert_eq!(out.get(x, y), if x < 4 { img.get(x, y) } else { 0 });
            }
        }
        let wrong = BinaryMask::filled(4, 4, true).unwrap();
        assert!(matches!(apply_mask(&img, &wrong), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn mask_png_and_pbm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = BinaryMask::from_fn(13, 7, |x, y| (x * 3 + y) % 4 == 0).unwrap();
        for name in ["m.png", "m.pbm"] {
            let p = dir.path().join(name);
            m.save(&p).unwrap();
            assert_eq!(BinaryMask::load(&p).unwrap(), m, "{name}");
        }
    }

    #[test]
    fn nearest_resize_of_blocks() {
        let m = BinaryMask::from_fn(2, 2, |x, y| x == y).unwrap();
        let big = m.resize_nearest(4, 4);
        assert!(big.get(0, 0) && big.get(1, 1) && !big.get(2, 1) && big.get(3, 3));
    }

    proptest! {
        #[test]
        fn entropy_bounded_by_log_of_distinct_levels(seed in any::<u64>(), k in 1u8..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = GrayRaster::from_fn(20, 20, |_, _| rng.gen_range(0..k) * 17).unwrap();
            let e = entropy_map(&img, 5).unwrap();
            let bound = (k as f64).log2() + 1e-12;
            prop_assert!(e.data().iter().all(|&v| (0.0..=8.0).contains(&v) && v <= bound));
        }

        #[test]
        fn cleaned_masks_are_hole_free_and_speckless(seed in any::<u64>(), density in 0.05f64..0.6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = BinaryMask::from_fn(40, 30, |_, _| rng.gen_bool(density)).unwrap();
            let c = clean_mask(&m);
            prop_assert!(is_hole_free(&c));
            if let Some(a) = smallest_component_area(&c) {
                prop_assert!(a as f64 >= SPECK_FRACTION * c.count() as f64);
            }
        }
    }
}
