//! Raster types, file I/O, and the geometric standardization steps applied
//! to every radiograph before masking: unit normalization, aspect-preserving
//! resize with black padding, and limb-specific bottom cropping.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use image::{DynamicImage, ImageReader};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard frame every radiograph is resized into (rows x columns).
pub const FRAME_HEIGHT: usize = 1500;
pub const FRAME_WIDTH: usize = 1200;

/// 8-bit single-channel image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayRaster {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayRaster {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimension);
        }
        if data.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "raster data has {} values, expected {}",
                data.len(),
                width * height
            )));
        }
        Ok(GrayRaster { width, height, data })
    }

    pub fn filled(width: usize, height: usize, level: u8) -> Result<Self> {
        Self::new(width, height, vec![level; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Result<Self> {
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
    pub fn data(&self) -> &[u8] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }
    pub fn row(&self, y: usize) -> &[u8] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn min_max(&self) -> (u8, u8) {
        self.data
            .iter()
            .fold((u8::MAX, u8::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::GrayImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("dimensions match")
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Encode(e.to_string()))
    }

    /// Binary PGM (P5), maxval 255.
    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Writes PNG or PGM depending on the extension (`.pgm` or anything else).
    pub fn save(&self, path: &Path) -> Result<()> {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("pgm") => self.save_pgm(path),
            _ => self.save_png(path),
        }
    }
}

/// Real-valued image with every value in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitRaster {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl UnitRaster {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimension);
        }
        if data.len() != width * height {
            return Err(Error::InvalidArgument("unit raster size mismatch".into()));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("unit raster values must lie in [0, 1]".into()));
        }
        Ok(UnitRaster { width, height, data })
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Inverse of [`normalize`]: multiply by 255 and round.
    pub fn to_gray(&self) -> GrayRaster {
        GrayRaster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| (v * 255.0).round() as u8).collect(),
        }
    }

    /// Area-averaging resample, used to feed network inputs. Each output pixel
    /// is the coverage-weighted mean of the source pixels it spans.
    pub fn resample_area(&self, width: usize, height: usize) -> UnitRaster {
        let xs = spans(self.width, width);
        let ys = spans(self.height, height);
        let mut data = Vec::with_capacity(width * height);
        for ys in &ys {
            for xs in &xs {
                let mut acc = 0.0f64;
                let mut wsum = 0.0f64;
                for &(sy, wy) in ys {
                    let row = &self.data[sy * self.width..(sy + 1) * self.width];
                    for &(sx, wx) in xs {
                        acc += row[sx] as f64 * wy * wx;
                        wsum += wy * wx;
                    }
                }
                data.push(((acc / wsum) as f32).clamp(0.0, 1.0));
            }
        }
        UnitRaster { width, height, data }
    }
}

/// For each output cell, the overlapping source indices and overlap weights.
fn spans(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let (a, b) = (i as f64 * scale, (i + 1) as f64 * scale);
            let mut v = Vec::new();
            let mut s = a.floor() as usize;
            while (s as f64) < b && s < src {
                let w = (b.min(s as f64 + 1.0) - a.max(s as f64)).max(0.0);
                if w > 0.0 {
                    v.push((s, w));
                }
                s += 1;
            }
            if v.is_empty() {
                v.push(((a as usize).min(src - 1), 1.0));
            }
            v
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LimbKind {
    HandLeft,
    HandRight,
    FootLeft,
    FootRight,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LimbType {
    Hand,
    Foot,
}

impl LimbType {
    pub fn name(self) -> &'static str {
        match self {
            LimbType::Hand => "hand",
            LimbType::Foot => "foot",
        }
    }
}

impl LimbKind {
    pub const ALL: [LimbKind; 4] = [
        LimbKind::HandLeft,
        LimbKind::HandRight,
        LimbKind::FootLeft,
        LimbKind::FootRight,
    ];

    pub fn code(self) -> &'static str {
        match self {
            LimbKind::HandLeft => "LH",
            LimbKind::HandRight => "RH",
            LimbKind::FootLeft => "LF",
            LimbKind::FootRight => "RF",
        }
    }
    pub fn limb_type(self) -> LimbType {
        match self {
            LimbKind::HandLeft | LimbKind::HandRight => LimbType::Hand,
            LimbKind::FootLeft | LimbKind::FootRight => LimbType::Foot,
        }
    }
    pub fn is_hand(self) -> bool {
        self.limb_type() == LimbType::Hand
    }
    pub fn is_left(self) -> bool {
        matches!(self, LimbKind::HandLeft | LimbKind::FootLeft)
    }
}

impl fmt::Display for LimbKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for LimbKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        LimbKind::ALL
            .into_iter()
            .find(|l| l.code().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown limb `{s}` (expected LH, RH, LF or RF)")))
    }
}

/// Loads a PNG or binary PGM/PBM as 8-bit gray. Colour inputs are reduced to
/// luminance with weights 0.299 / 0.587 / 0.114.
pub fn load_gray(path: &Path) -> Result<GrayRaster> {
    let unreadable = |reason: String| Error::Unreadable {
        path: path.to_path_buf(),
        reason,
    };
    let bytes = std::fs::read(path).map_err(|e| unreadable(e.to_string()))?;
    if bytes.is_empty() {
        return Err(unreadable("empty file".into()));
    }
    let reader = ImageReader::new(std::io::Cursor::new(&bytes))
        .with_guessed_format()
        .map_err(|e| unreadable(e.to_string()))?;
    match reader.format() {
        Some(image::ImageFormat::Png) | Some(image::ImageFormat::Pnm) => {}
        Some(other) => return Err(Error::UnsupportedFormat(format!("{other:?}"))),
        None => return Err(Error::UnsupportedFormat("unrecognized signature".into())),
    }
    let img = reader.decode().map_err(|e| unreadable(e.to_string()))?;
    from_dynamic(&img)
}

pub(crate) fn from_dynamic(img: &DynamicImage) -> Result<GrayRaster> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::ZeroDimension);
    }
    let data = match img {
        DynamicImage::ImageLuma8(g) => g.as_raw().clone(),
        DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) => {
            img.to_luma8().into_raw()
        }
        _ => img.to_rgb8().pixels().map(|p| luma(p.0[0], p.0[1], p.0[2])).collect(),
    };
    GrayRaster::new(w, h, data)
}

#[inline]
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
        .round()
        .clamp(0.0, 255.0) as u8
}

pub fn normalize(img: &GrayRaster) -> UnitRaster {
    UnitRaster {
        width: img.width,
        height: img.height,
        data: img.data.iter().map(|&v| v as f32 / 255.0).collect(),
    }
}

/// Where the scaled content sits inside a padded frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Placement {
    pub scale_x: f64,
    pub scale_y: f64,
    pub offset_x: usize,
    pub offset_y: usize,
    pub content_width: usize,
    pub content_height: usize,
}

impl Placement {
    pub fn identity(width: usize, height: usize) -> Self {
        Placement {
            scale_x: 1.0,
            scale_y: 1.0,
            offset_x: 0,
            offset_y: 0,
            content_width: width,
            content_height: height,
        }
    }

    /// Source pixel coordinate to frame coordinate.
    pub fn forward(&self, x: f64, y: f64) -> (f64, f64) {
        (
            x * self.scale_x + self.offset_x as f64,
            y * self.scale_y + self.offset_y as f64,
        )
    }

    /// Frame coordinate to source pixel coordinate.
    pub fn inverse(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.offset_x as f64) / self.scale_x,
            (y - self.offset_y as f64) / self.scale_y,
        )
    }
}

/// Scales by `min(target_h / h, target_w / w)` with bilinear interpolation and
/// centres the result on a black `target_h x target_w` frame. Odd margins put
/// the extra row/column at the bottom/right.
pub fn resize_pad(img: &GrayRaster, target_h: usize, target_w: usize) -> Result<GrayRaster> {
    Ok(resize_pad_with_placement(img, target_h, target_w)?.0)
}

pub fn resize_pad_with_placement(
    img: &GrayRaster,
    target_h: usize,
    target_w: usize,
) -> Result<(GrayRaster, Placement)> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::InvalidArgument("target dimensions must be positive".into()));
    }
    let (w, h) = (img.width, img.height);
    if w == target_w && h == target_h {
        return Ok((img.clone(), Placement::identity(w, h)));
    }
    let s = (target_h as f64 / h as f64).min(target_w as f64 / w as f64);
    let sw = ((w as f64 * s).round() as usize).clamp(1, target_w);
    let sh = ((h as f64 * s).round() as usize).clamp(1, target_h);
    let scaled = resize_bilinear(img, sw, sh);
    let (left, top) = ((target_w - sw) / 2, (target_h - sh) / 2);
    let mut out = vec![0u8; target_w * target_h];
    for y in 0..sh {
        out[(top + y) * target_w + left..(top + y) * target_w + left + sw].copy_from_slice(scaled.row(y));
    }
    let placement = Placement {
        scale_x: sw as f64 / w as f64,
        scale_y: sh as f64 / h as f64,
        offset_x: left,
        offset_y: top,
        content_width: sw,
        content_height: sh,
    };
    Ok((GrayRaster::new(target_w, target_h, out)?, placement))
}

/// Bilinear resample with pixel-centre alignment.
pub fn resize_bilinear(img: &GrayRaster, width: usize, height: usize) -> GrayRaster {
    if width == img.width && height == img.height {
        return img.clone();
    }
    let axis = |src: usize, dst: usize| -> Vec<(usize, usize, f64)> {
        let r = src as f64 / dst as f64;
        (0..dst)
            .map(|i| {
                let p = ((i as f64 + 0.5) * r - 0.5).clamp(0.0, (src - 1) as f64);
                let i0 = p.floor() as usize;
                let i1 = (i0 + 1).min(src - 1);
                (i0, i1, p - i0 as f64)
            })
            .collect()
    };
    let xs = axis(img.width, width);
    let ys = axis(img.height, height);
    let mut data = Vec::with_capacity(width * height);
    for &(y0, y1, fy) in &ys {
        let (r0, r1) = (img.row(y0), img.row(y1));
        for &(x0, x1, fx) in &xs {
            let top = r0[x0] as f64 * (1.0 - fx) + r0[x1] as f64 * fx;
            let bot = r1[x0] as f64 * (1.0 - fx) + r1[x1] as f64 * fx;
            data.push((top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayRaster { width, height, data }
}

/// Rows removed from the bottom: `floor(h / 7)` for hands, `floor(h / 4)` for feet.
pub fn crop_rows_removed(height: usize, limb: LimbKind) -> usize {
    match limb.limb_type() {
        LimbType::Hand => height / 7,
        LimbType::Foot => height / 4,
    }
}

/// Removes the bottom rows of a limb image. Fails when the removal would be
/// empty (height below 7 for hands, below 4 for feet).
pub fn crop_limb(img: &GrayRaster, limb: LimbKind) -> Result<GrayRaster> {
    if crop_rows_removed(img.height, limb) == 0 {
        return Err(Error::TooSmall(format!(
            "height {} leaves nothing to crop for a {}",
            img.height,
            limb.limb_type().name()
        )));
    }
    let keep = img.height - crop_rows_removed(img.height, limb);
    GrayRaster::new(img.width, keep, img.data[..keep * img.width].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        let img = GrayRaster::new(3, 1, vec![255, 0, 51]).unwrap();
        let u = normalize(&img);
        assert_eq!(u.data()[0], 1.0);
        assert_eq!(u.data()[1], 0.0);
        assert!((u.data()[2] - 0.2).abs() < 1e-7);
    }

    #[test]
    fn normalize_round_trips_every_level() {
        let img = GrayRaster::new(256, 1, (0..=255).collect()).unwrap();
        assert_eq!(normalize(&img).to_gray(), img);
    }

    #[test]
    fn resize_exact_halving_has_no_padding() {
        let img = GrayRaster::filled(2400, 3000, 200).unwrap();
        let (out, p) = resize_pad_with_placement(&img, 1500, 1200).unwrap();
        assert_eq!((out.width(), out.height()), (1200, 1500));
        assert_eq!((p.offset_x, p.offset_y), (0, 0));
        assert!(out.data().iter().all(|&v| v == 200));
    }

    #[test]
    fn square_input_pads_rows_evenly() {
        let img = GrayRaster::filled(1200, 1200, 90).unwrap();
        let out = resize_pad(&img, 1500, 1200).unwrap();
        for y in 0..1500 {
            let expect = if (150..1350).contains(&y) { 90 } else { 0 };
            assert!(out.row(y).iter().all(|&v| v == expect), "row {y}");
        }
    }

    #[test]
    fn odd_margin_extra_goes_bottom_right() {
        let img = GrayRaster::filled(4, 4, 9).unwrap();
        let (out, p) = resize_pad_with_placement(&img, 7, 4).unwrap();
        assert_eq!(p.offset_y, 1);
        assert_eq!(out.row(0), &[0, 0, 0, 0]);
        assert_eq!(out.row(5), &[0, 0, 0, 0]);
        assert_eq!(out.row(6), &[0, 0, 0, 0]);
        assert_eq!(out.row(1), &[9, 9, 9, 9]);
    }

    #[test]
    fn conforming_image_is_unchanged() {
        let img = GrayRaster::from_fn(1200, 1500, |x, y| ((x * 7 + y * 3) % 256) as u8).unwrap();
        assert_eq!(resize_pad(&img, 1500, 1200).unwrap(), img);
    }

    #[test]
    fn zero_target_is_rejected() {
        let img = GrayRaster::filled(4, 4, 0).unwrap();
        assert!(resize_pad(&img, 0, 4).is_err());
    }

    #[test]
    fn crop_examples() {
        let hand = GrayRaster::filled(3, 1500, 1).unwrap();
        assert_eq!(crop_limb(&hand, LimbKind::HandRight).unwrap().height(), 1286);
        assert_eq!(crop_limb(&hand, LimbKind::FootLeft).unwrap().height(), 1125);
        let seven = GrayRaster::filled(3, 7, 1).unwrap();
        assert_eq!(crop_limb(&seven, LimbKind::HandLeft).unwrap().height(), 6);
        let six = GrayRaster::filled(3, 6, 1).unwrap();
        assert!(matches!(crop_limb(&six, LimbKind::HandLeft), Err(Error::TooSmall(_))));
        let three = GrayRaster::filled(3, 3, 1).unwrap();
        assert!(matches!(crop_limb(&three, LimbKind::FootLeft), Err(Error::TooSmall(_))));
    }

    #[test]
    fn limb_codes_parse() {
        for l in LimbKind::ALL {
            assert_eq!(l.code().parse::<LimbKind>().unwrap(), l);
        }
        assert!("XX".parse::<LimbKind>().is_err());
        assert!(LimbKind::HandLeft.is_left() && LimbKind::HandLeft.is_hand());
        assert!(!LimbKind::FootRight.is_left() && !LimbKind::FootRight.is_hand());
    }

    #[test]
    fn area_resample_preserves_mean_of_constant() {
        let u = normalize(&GrayRaster::filled(37, 23, 128).unwrap());
        let r = u.resample_area(8, 8);
        assert!(r.data().iter().all(|&v| (v - 128.0 / 255.0).abs() < 1e-6));
    }

    proptest! {
        #[test]
        fn resize_preserves_aspect_ratio(w in 1usize..400, h in 1usize..400) {
            let img = GrayRaster::filled(w, h, 255).unwrap();
            let (_, p) = resize_pad_with_placement(&img, 150, 120).unwrap();
            let (sw, sh) = (p.content_width as f64, p.content_height as f64);
            let err = (sw / sh - w as f64 / h as f64).abs();
            // one pixel of rounding on either axis
            let tol = (1.0 / sh).max(1.0 / sw) * (w as f64 / h as f64).max(1.0) + 1e-12;
            prop_assert!(err <= tol, "{} {} -> {} {}", w, h, sw, sh);
        }

        #[test]
        fn crop_keeps_width_and_top_row(w in 1usize..20, h in 7usize..60, seed in 0u8..255) {
            let img = GrayRaster::from_fn(w, h, |x, y| (x as u8).wrapping_mul(31).wrapping_add(y as u8 ^ seed)).unwrap();
            for limb in LimbKind::ALL {
                let c = crop_limb(&img, limb).unwrap();
                prop_assert_eq!(c.width(), w);
                prop_assert_eq!(c.row(0), img.row(0));
            }
        }
    }
}
