//! Standardization chain applied to every radiograph before masking:
//! resize with padding to the standard frame, limb crop, and CLAHE.

use crate::enhance::{clahe, ClaheConfig};
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::raster::{crop_limb, resize_pad_with_placement, GrayRaster, LimbKind, Placement, FRAME_HEIGHT, FRAME_WIDTH};

#[derive(Clone, Debug)]
pub struct Preprocessed {
    pub limb: LimbKind,
    /// Input dimensions (width, height).
    pub original: (usize, usize),
    pub placement: Placement,
    /// Resized and padded frame, before cropping.
    pub framed: GrayRaster,
    /// Cropped and contrast-enhanced image.
    pub image: GrayRaster,
}

impl Preprocessed {
    /// Cropped-image coordinates back to input-image pixel coordinates.
    pub fn to_original(&self, x: f64, y: f64) -> (f64, f64) {
        self.placement.inverse(x, y)
    }

    /// Crops a frame-sized mask the same way the image was cropped.
    pub fn crop_mask(&self, mask: &BinaryMask) -> Result<BinaryMask> {
        if (mask.width(), mask.height()) != (self.framed.width(), self.framed.height()) {
            return Err(Error::DimensionMismatch {
                expected: (self.framed.width(), self.framed.height()),
                found: (mask.width(), mask.height()),
            });
        }
        let (w, h) = (self.image.width(), self.image.height());
        BinaryMask::new(w, h, mask.data()[..w * h].to_vec())
    }
}

pub fn preprocess(img: &GrayRaster, limb: LimbKind) -> Result<Preprocessed> {
    preprocess_with(img, limb, &ClaheConfig::default())
}

pub fn preprocess_with(img: &GrayRaster, limb: LimbKind, cfg: &ClaheConfig) -> Result<Preprocessed> {
    let (framed, placement) = resize_pad_with_placement(img, FRAME_HEIGHT, FRAME_WIDTH)?;
    let cropped = crop_limb(&framed, limb)?;
    let image = clahe(&cropped, cfg)?;
    Ok(Preprocessed {
        limb,
        original: (img.width(), img.height()),
        placement,
        framed,
        image,
    })
}
