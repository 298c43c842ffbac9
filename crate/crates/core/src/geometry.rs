//! Axis-aligned boxes in pixel and normalized coordinates.

use serde::{Deserialize, Serialize};

/// Box with centre and size normalized to the image dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBoxNorm {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBoxNorm {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBoxNorm { cx, cy, w, h }
    }

    pub fn is_valid(&self) -> bool {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        unit(self.cx) && unit(self.cy) && self.w > 0.0 && self.w <= 1.0 && self.h > 0.0 && self.h <= 1.0
    }

    /// Clamps the centre into [0, 1] and the size into (0, 1].
    pub fn clamped(&self) -> BBoxNorm {
        BBoxNorm {
            cx: self.cx.clamp(0.0, 1.0),
            cy: self.cy.clamp(0.0, 1.0),
            w: self.w.clamp(1e-6, 1.0),
            h: self.h.clamp(1e-6, 1.0),
        }
    }

    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn iou(&self, other: &BBoxNorm) -> f64 {
        let (ax0, ay0, ax1, ay1) = self.corners();
        let (bx0, by0, bx1, by1) = other.corners();
        let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
        let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn to_pixels(&self, width: usize, height: usize) -> PixelBox {
        PixelBox {
            cx: self.cx * width as f64,
            cy: self.cy * height as f64,
            w: self.w * width as f64,
            h: self.h * height as f64,
        }
    }
}

/// Box in pixel units (centre and size).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl PixelBox {
    pub fn normalized(&self, width: usize, height: usize) -> BBoxNorm {
        BBoxNorm {
            cx: self.cx / width as f64,
            cy: self.cy / height as f64,
            w: self.w / width as f64,
            h: self.h / height as f64,
        }
    }

    /// Same centre, each side grown by `fraction`.
    pub fn expanded(&self, fraction: f64) -> PixelBox {
        PixelBox {
            w: self.w * (1.0 + fraction),
            h: self.h * (1.0 + fraction),
            ..*self
        }
    }

    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_cases() {
        let a = BBoxNorm::new(0.5, 0.5, 0.2, 0.2);
        assert!((a.iou(&a) - 1.0).abs() < 1e-12);
        let b = BBoxNorm::new(0.6, 0.5, 0.2, 0.2);
        assert!((a.iou(&b) - 0.02 / 0.06).abs() < 1e-12);
        let c = BBoxNorm::new(0.9, 0.9, 0.1, 0.1);
        assert_eq!(a.iou(&c), 0.0);
    }

    #[test]
    fn pixel_round_trip() {
        let b = BBoxNorm::new(0.25, 0.75, 0.1, 0.05);
        let p = b.to_pixels(1200, 1286);
        let back = p.normalized(1200, 1286);
        assert!((back.cx - b.cx).abs() < 1e-12 && (back.h - b.h).abs() < 1e-12);
        assert!((p.expanded(0.2).w - 144.0).abs() < 1e-9);
    }
}
