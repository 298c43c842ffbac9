//! Synthetic hand and foot radiographs with full ground truth.
//!
//! Limbs are drawn as textured soft tissue over a black background with
//! bright, textured bones. Each scored joint is a pair of bone ends whose gap
//! shrinks with the narrowing score and whose lateral margins carry one
//! circular notch per erosion point. Right limbs put digit 1 at small x; left
//! limbs are mirror images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anatomy::{JointClass, JointId};
use crate::error::{Error, Result};
use crate::geometry::PixelBox;
use crate::mask::BinaryMask;
use crate::ordinal::{ScoreScale, Task};
use crate::raster::{GrayRaster, LimbKind, LimbType, FRAME_HEIGHT, FRAME_WIDTH};

/// Bumped whenever rendering changes in a way that moves pixels.
pub const RENDER_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    /// Each patient contributes one image per entry of `limbs`.
    pub patients: usize,
    pub limbs: Vec<LimbKind>,
    /// Probability that a background pixel carries a bright speck.
    pub noise_density: f64,
    /// Probability of a burned-in side marker in a top corner.
    pub marker_probability: f64,
    /// Joint gap at narrowing 0, in template pixels.
    pub gap_base_px: f64,
    /// Gap reduction per narrowing point.
    pub gap_step_px: f64,
    pub notch_radius_px: f64,
    /// Probability that a joint score is 0; other scores are uniform.
    pub zero_score_probability: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 42,
            patients: 10,
            limbs: LimbKind::ALL.to_vec(),
            noise_density: 0.004,
            marker_probability: 0.5,
            gap_base_px: 30.0,
            gap_step_px: 6.0,
            notch_radius_px: 9.0,
            zero_score_probability: 0.35,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("synth config: {m}")));
        if self.patients == 0 || self.limbs.is_empty() {
            return bad("patients and limbs must be non-empty");
        }
        if !(0.0..=1.0).contains(&self.noise_density)
            || !(0.0..=1.0).contains(&self.marker_probability)
            || !(0.0..=1.0).contains(&self.zero_score_probability)
        {
            return bad("probabilities must lie in [0, 1]");
        }
        let max_n = ScoreScale::default_for(Task::Narrowing, LimbType::Hand).max_score() as f64;
        if self.gap_step_px <= 0.0 || self.notch_radius_px <= 0.0 || self.gap_base_px - self.gap_step_px * max_n <= 0.0
        {
            return bad("gap and notch sizes must be positive at every score");
        }
        Ok(())
    }

    /// Rendered gap (template pixels) for a narrowing score.
    pub fn gap_width(&self, narrowing: usize) -> f64 {
        self.gap_base_px - self.gap_step_px * narrowing as f64
    }

    pub fn sample_count(&self) -> usize {
        self.patients * self.limbs.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthJoint {
    pub id: JointId,
    /// Box in image pixels.
    pub bbox: PixelBox,
    pub narrowing: usize,
    pub erosion: usize,
    /// Rendered gap between bone ends, image pixels.
    pub gap_px: f64,
    pub notches: usize,
}

#[derive(Clone, Debug)]
pub struct SynthSample {
    pub patient_id: String,
    pub limb: LimbKind,
    pub image: GrayRaster,
    pub mask: BinaryMask,
    pub joints: Vec<SynthJoint>,
}

impl SynthSample {
    pub fn image_id(&self) -> String {
        format!("{}-{}", self.patient_id, self.limb.code())
    }
}

pub fn patient_id(index: usize) -> String {
    format!("p{index:04}")
}

/// Renders every (patient, limb) pair in order.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<SynthSample>> {
    synthetic_iter(cfg)?.collect()
}

/// Lazily renders samples; each one is independent of the others.
pub fn synthetic_iter(cfg: &SynthConfig) -> Result<impl Iterator<Item = Result<SynthSample>> + '_> {
    cfg.validate()?;
    Ok((0..cfg.patients).flat_map(move |p| cfg.limbs.iter().map(move |&limb| render_sample(cfg, p, limb))))
}

struct JointT {
    class: JointClass,
    y: f64,
    bone_w: f64,
}

struct DigitT {
    cx: f64,
    tissue_w: f64,
    tip: f64,
    joints: Vec<JointT>,
    bone_bottom: f64,
}

#[derive(Clone, Copy)]
struct RoundRect {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    r: f64,
}

impl RoundRect {
    fn contains(&self, x: f64, y: f64) -> bool {
        if x < self.x0 || x > self.x1 || y < self.y0 || y > self.y1 {
            return false;
        }
        let r = self.r.min((self.x1 - self.x0) / 2.0).min((self.y1 - self.y0) / 2.0);
        let dx = (self.x0 + r - x).max(x - (self.x1 - r)).max(0.0);
        let dy = (self.y0 + r - y).max(y - (self.y1 - r)).max(0.0);
        dx * dx + dy * dy <= r * r
    }
}

fn joint(class: JointClass, y: f64, bone_w: f64) -> JointT {
    JointT { class, y, bone_w }
}

/// Right-limb template in frame pixels: digits, then tissue blocks.
fn template(limb: LimbType) -> (Vec<DigitT>, Vec<RoundRect>, f64) {
    use JointClass::*;
    let rr = |x0, y0, x1, y1, r| RoundRect { x0, y0, x1, y1, r };
    match limb {
        LimbType::Hand => {
            let d = |cx, tissue_w, tip, joints, bone_bottom| DigitT {
                cx,
                tissue_w,
                tip,
                joints,
                bone_bottom,
            };
            (
                vec![
                    d(
                        215.0,
                        128.0,
                        540.0,
                        vec![joint(Pip, 700.0, 62.0), joint(Mcp, 900.0, 74.0)],
                        1100.0,
                    ),
                    d(
                        440.0,
                        122.0,
                        250.0,
                        vec![joint(Pip, 520.0, 58.0), joint(Mcp, 800.0, 70.0)],
                        1160.0,
                    ),
                    d(
                        600.0,
                        122.0,
                        200.0,
                        vec![joint(Pip, 480.0, 58.0), joint(Mcp, 790.0, 70.0)],
                        1160.0,
                    ),
                    d(
                        760.0,
                        122.0,
                        240.0,
                        vec![joint(Pip, 510.0, 58.0), joint(Mcp, 800.0, 70.0)],
                        1160.0,
                    ),
                    d(
                        915.0,
                        116.0,
                        360.0,
                        vec![joint(Pip, 590.0, 56.0), joint(Mcp, 820.0, 66.0)],
                        1160.0,
                    ),
                ],
                vec![
                    rr(370.0, 740.0, 990.0, 1260.0, 90.0),
                    rr(400.0, 1150.0, 940.0, 1800.0, 0.0),
                    rr(250.0, 930.0, 420.0, 1200.0, 60.0),
                ],
                // digits' tissue runs down to this row, inside the palm
                800.0,
            )
        }
        LimbType::Foot => {
            let d = |cx, tissue_w, tip, joints| DigitT {
                cx,
                tissue_w,
                tip,
                joints,
                bone_bottom: 1060.0,
            };
            (
                vec![
                    d(
                        320.0,
                        150.0,
                        290.0,
                        vec![joint(Pip, 430.0, 84.0), joint(Mtp, 650.0, 92.0)],
                    ),
                    d(500.0, 106.0, 340.0, vec![joint(Mtp, 630.0, 68.0)]),
                    d(650.0, 104.0, 380.0, vec![joint(Mtp, 640.0, 66.0)]),
                    d(795.0, 100.0, 420.0, vec![joint(Mtp, 660.0, 64.0)]),
                    d(935.0, 96.0, 470.0, vec![joint(Mtp, 690.0, 62.0)]),
                ],
                vec![rr(240.0, 560.0, 1000.0, 1800.0, 110.0)],
                600.0,
            )
        }
    }
}

/// Bone-end length beyond the gap, template pixels.
const BONE_END: f64 = 70.0;
/// Notch slots: (distal end?, left side?, depth index), spread so that
/// successive notches land on different margins.
const NOTCH_SLOTS: [(bool, bool, usize); 12] = [
    (true, true, 0),
    (false, false, 0),
    (false, true, 0),
    (true, false, 0),
    (true, true, 1),
    (false, false, 1),
    (false, true, 1),
    (true, false, 1),
    (true, true, 2),
    (false, false, 2),
    (false, true, 2),
    (true, false, 2),
];

fn draw_score(rng: &mut ChaCha8Rng, classes: usize, p_zero: f64) -> usize {
    if rng.gen_bool(p_zero) {
        0
    } else {
        rng.gen_range(1..classes)
    }
}

fn limb_stream(limb: LimbKind) -> u64 {
    match limb {
        LimbKind::HandLeft => 0,
        LimbKind::HandRight => 1,
        LimbKind::FootLeft => 2,
        LimbKind::FootRight => 3,
    }
}

/// Renders one radiograph; the result depends only on (config, patient, limb).
pub fn render_sample(cfg: &SynthConfig, patient: usize, limb: LimbKind) -> Result<SynthSample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(patient as u64 * 4 + limb_stream(limb));
    let lt = limb.limb_type();
    let (w, h) = (FRAME_WIDTH, FRAME_HEIGHT);
    let (digits, blocks, digit_base) = template(lt);

    let s: f64 = rng.gen_range(0.94..1.04);
    let dx: f64 = rng.gen_range(-35.0..35.0);
    let dy: f64 = rng.gen_range(-30.0..30.0);
    let left = limb.is_left();
    let tx = |x: f64| {
        let v = 600.0 + s * (x - 600.0) + dx;
        if left {
            w as f64 - v
        } else {
            v
        }
    };
    let ty = |y: f64| s * y + dy;
    let rect = |x0: f64, y0: f64, x1: f64, y1: f64, r: f64| {
        let (a, b) = (tx(x0), tx(x1));
        RoundRect {
            x0: a.min(b),
            x1: a.max(b),
            y0: ty(y0),
            y1: ty(y1),
            r: r * s,
        }
    };

    let narrow_scale = ScoreScale::default_for(Task::Narrowing, lt);
    let erosion_scale = ScoreScale::default_for(Task::Erosion, lt);

    let mut tissue: Vec<RoundRect> = blocks.iter().map(|b| rect(b.x0, b.y0, b.x1, b.y1, b.r)).collect();
    let mut bones: Vec<RoundRect> = Vec::new();
    let mut notches: Vec<(f64, f64, f64)> = Vec::new();
    let mut joints = Vec::new();

    for (i, d) in digits.iter().enumerate() {
        let digit = (i + 1) as u8;
        let cx = d.cx + rng.gen_range(-8.0..8.0);
        let tip = d.tip + rng.gen_range(-15.0..15.0);
        let half = d.tissue_w / 2.0;
        let base = (digit_base + 60.0).max(d.joints.last().map_or(0.0, |j| j.y + 160.0));
        tissue.push(rect(cx - half, tip, cx + half, base, half));

        // bone pieces, top to bottom
        let mut top = tip + 25.0;
        let mut shaft_w = d.joints[0].bone_w * 0.78;
        for jt in &d.joints {
            let jy = jt.y + rng.gen_range(-12.0..12.0);
            let n = draw_score(&mut rng, narrow_scale.classes, cfg.zero_score_probability);
            let e = draw_score(&mut rng, erosion_scale.classes, cfg.zero_score_probability);
            let gap = cfg.gap_width(n);
            let (upper, lower) = (jy - gap / 2.0, jy + gap / 2.0);
            let bw = jt.bone_w;
            shaft_w = shaft_w.min(bw * 0.78);
            bones.push(rect(cx - shaft_w / 2.0, top, cx + shaft_w / 2.0, upper, 10.0));
            bones.push(rect(
                cx - bw / 2.0,
                (upper - BONE_END).max(top),
                cx + bw / 2.0,
                upper,
                9.0,
            ));
            bones.push(rect(cx - bw / 2.0, lower, cx + bw / 2.0, lower + BONE_END, 9.0));
            for &(distal, on_left, depth) in NOTCH_SLOTS.iter().take(e) {
                let off = 14.0 + 20.0 * depth as f64;
                let ny = if distal { upper - off } else { lower + off };
                let nx = if on_left { cx - bw / 2.0 } else { cx + bw / 2.0 };
                notches.push((tx(nx), ty(ny), cfg.notch_radius_px * s));
            }
            let box_h = if jt.class == JointClass::Pip { 104.0 } else { 124.0 };
            joints.push(SynthJoint {
                id: JointId::new(jt.class, digit),
                bbox: PixelBox {
                    cx: tx(cx),
                    cy: ty(jy),
                    w: (bw + 44.0) * s,
                    h: box_h * s,
                },
                narrowing: n,
                erosion: e,
                gap_px: gap * s,
                notches: e,
            });
            top = lower;
            shaft_w = bw * 0.78;
        }
        bones.push(rect(cx - shaft_w / 2.0, top, cx + shaft_w / 2.0, d.bone_bottom, 10.0));
    }

    // 0 background, 1 tissue, 2 bone
    let mut label = vec![0u8; w * h];
    let mut paint = |r: &RoundRect, v: u8, only_over: Option<u8>| {
        let xa = r.x0.floor().max(0.0) as usize;
        let xb = (r.x1.ceil().max(0.0) as usize).min(w);
        let ya = r.y0.floor().max(0.0) as usize;
        let yb = (r.y1.ceil().max(0.0) as usize).min(h);
        for y in ya..yb {
            for x in xa..xb {
                let p = y * w + x;
                if only_over.is_none_or(|o| label[p] == o) && r.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    label[p] = v;
                }
            }
        }
    };
    for r in &tissue {
        paint(r, 1, None);
    }
    for r in &bones {
        paint(r, 2, None);
    }
    for &(nx, ny, nr) in &notches {
        let c = RoundRect {
            x0: nx - nr,
            y0: ny - nr,
            x1: nx + nr,
            y1: ny + nr,
            r: nr,
        };
        paint(&c, 1, Some(2));
    }

    let gain: f64 = rng.gen_range(0.85..1.1);
    let mut data = vec![0u8; w * h];
    for (v, &l) in data.iter_mut().zip(&label) {
        *v = match l {
            1 => (gain * (100.0 + rng.gen_range(-55.0..55.0))).round().clamp(0.0, 255.0) as u8,
            2 => (gain * (185.0 + rng.gen_range(-30.0..30.0))).round().clamp(0.0, 255.0) as u8,
            _ => {
                if cfg.noise_density > 0.0 && rng.gen_bool(cfg.noise_density) {
                    rng.gen_range(40..=255)
                } else {
                    0
                }
            }
        };
    }
    let mut image = GrayRaster::new(w, h, data)?;
    if cfg.marker_probability > 0.0 && rng.gen_bool(cfg.marker_probability) {
        draw_marker(&mut image, &label, limb, &mut rng);
    }
    let mask = BinaryMask::new(w, h, label.iter().map(|&l| l != 0).collect())?;
    Ok(SynthSample {
        patient_id: patient_id(patient),
        limb,
        image,
        mask,
        joints,
    })
}

/// Burned-in side letter ("L" or "R") as a bright block glyph near a top corner.
fn draw_marker(img: &mut GrayRaster, label: &[u8], limb: LimbKind, rng: &mut ChaCha8Rng) {
    const L: [&str; 7] = ["X....", "X....", "X....", "X....", "X....", "X....", "XXXXX"];
    const R: [&str; 7] = ["XXXX.", "X...X", "X...X", "XXXX.", "X.X..", "X..X.", "X...X"];
    let glyph = if limb.is_left() { L } else { R };
    let cell = 12usize;
    let x0 = if rng.gen_bool(0.5) {
        rng.gen_range(30..90)
    } else {
        img.width() - 90 - rng.gen_range(0..60)
    };
    let y0 = rng.gen_range(30..90);
    let w = img.width();
    for (gy, row) in glyph.iter().enumerate() {
        for (gx, c) in row.chars().enumerate() {
            if c != 'X' {
                continue;
            }
            for y in y0 + gy * cell..y0 + (gy + 1) * cell {
                for x in x0 + gx * cell..x0 + (gx + 1) * cell {
                    if x < w && y < img.height() && label[y * w + x] == 0 {
                        img.set(x, y, 235);
                    }
                }
            }
        }
    }
}
