//! End-to-end scoring of one radiograph: preprocess, mask, detect, identify,
//! crop, score, and total.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use jointscore_nn::Checkpoint;
use serde::{Deserialize, Serialize};

use crate::detect::{self, detect_joints, Detection, Detector};
use crate::error::{Error, Result};
use crate::geometry::PixelBox;
use crate::identify::{identify_joints, IdentifyPath, Identity};
use crate::mask::{apply_mask, extract_mask, BinaryMask};
use crate::metrics::{aggregate_totals, JointScore, ScoreSheet};
use crate::ordinal::{OrdinalVector, ScaleSet, Task};
use crate::preprocess::preprocess;
use crate::raster::{normalize, GrayRaster, LimbKind, LimbType};
use crate::scorer::{self, extract_crop, score_joint, Scorer};
use crate::unet::{self, predict_mask, UNet};

/// U-Net masks covering less or more of the frame than this fall back to the
/// classic mask.
pub const MASK_COVERAGE_BOUNDS: (f64, f64) = (0.02, 0.90);
pub const CHECKPOINT_EXTENSION: &str = "ckpt";

/// Trained networks by limb type, with the identity of each checkpoint.
#[derive(Clone, Debug, Default)]
pub struct ModelSet {
    pub unets: BTreeMap<LimbType, UNet>,
    pub detectors: BTreeMap<LimbType, Detector>,
    pub scorers: BTreeMap<(LimbType, Task), Scorer>,
    /// Checkpoint tag to content hash.
    pub identities: BTreeMap<String, String>,
}

pub fn checkpoint_path(dir: &Path, tag: &str) -> std::path::PathBuf {
    dir.join(format!("{tag}.{CHECKPOINT_EXTENSION}"))
}

impl ModelSet {
    /// Loads every known checkpoint present in `dir`; absent ones are skipped.
    pub fn load_dir(dir: &Path) -> Result<ModelSet> {
        if !dir.is_dir() {
            return Err(Error::MissingCheckpoint(format!(
                "model directory {} not found",
                dir.display()
            )));
        }
        let mut m = ModelSet::default();
        let load = |tag: &str| -> Result<Option<Checkpoint>> {
            let p = checkpoint_path(dir, tag);
            if !p.is_file() {
                return Ok(None);
            }
            let ck = Checkpoint::load(&p).map_err(|e| Error::MissingCheckpoint(format!("{}: {e}", p.display())))?;
            if ck.tag != tag {
                return Err(Error::MissingCheckpoint(format!(
                    "{} holds `{}`, expected `{tag}`",
                    p.display(),
                    ck.tag
                )));
            }
            Ok(Some(ck))
        };
        for lt in [LimbType::Hand, LimbType::Foot] {
            if let Some(ck) = load(&unet::checkpoint_tag(lt))? {
                m.identities.insert(ck.tag.clone(), ck.identity());
                m.unets.insert(lt, UNet::from_checkpoint(&ck)?);
            }
            if let Some(ck) = load(&detect::checkpoint_tag(lt))? {
                m.identities.insert(ck.tag.clone(), ck.identity());
                m.detectors.insert(lt, Detector::from_checkpoint(&ck)?);
            }
            for task in Task::ALL {
                if let Some(ck) = load(&scorer::checkpoint_tag(lt, task))? {
                    m.identities.insert(ck.tag.clone(), ck.identity());
                    m.scorers.insert((lt, task), Scorer::from_checkpoint(&ck)?);
                }
            }
        }
        Ok(m)
    }

    /// The detector and both scorers a limb type needs; the U-Net is optional.
    pub fn check_complete(&self, lt: LimbType) -> Result<()> {
        let mut missing = Vec::new();
        if !self.detectors.contains_key(&lt) {
            missing.push(detect::checkpoint_tag(lt));
        }
        for task in Task::ALL {
            if !self.scorers.contains_key(&(lt, task)) {
                missing.push(scorer::checkpoint_tag(lt, task));
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::MissingCheckpoint(missing.join(", ")))
        }
    }

    /// Score scales of the loaded scorers, defaults elsewhere.
    pub fn scales(&self) -> ScaleSet {
        let mut s = ScaleSet::default();
        for sc in self.scorers.values() {
            s.set(sc.scale);
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskSource {
    Unet,
    Classic,
}

impl MaskSource {
    pub fn name(self) -> &'static str {
        match self {
            MaskSource::Unet => "unet",
            MaskSource::Classic => "classic",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointReport {
    /// Box normalized to the cropped frame.
    pub detection: Detection,
    /// Box in input-image pixels.
    pub original_box: PixelBox,
    pub identity: Identity,
    pub narrowing: usize,
    pub narrowing_vector: OrdinalVector,
    pub erosion: usize,
    pub erosion_vector: OrdinalVector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub image_id: String,
    pub limb: LimbKind,
    /// Input (width, height).
    pub original_size: (usize, usize),
    pub mask_source: MaskSource,
    pub mask_coverage: f64,
    pub identify_path: IdentifyPath,
    pub joints: Vec<JointReport>,
    pub sheet: ScoreSheet,
    /// Seconds per stage; all zero in deterministic mode.
    pub timings: BTreeMap<String, f64>,
}

pub const STAGES: [&str; 6] = ["preprocess", "mask", "detect", "identify", "score", "total"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PipelineOptions {
    /// Zero all timings so reports are bit-reproducible.
    pub deterministic: bool,
}

struct Clock {
    start: Instant,
    last: Instant,
    timings: BTreeMap<String, f64>,
    enabled: bool,
}

impl Clock {
    fn new(enabled: bool) -> Self {
        let now = Instant::now();
        Clock {
            start: now,
            last: now,
            timings: BTreeMap::new(),
            enabled,
        }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        let t = if self.enabled {
            (now - self.last).as_secs_f64()
        } else {
            0.0
        };
        self.timings.insert(stage.to_string(), t);
        self.last = now;
    }

    fn finish(mut self) -> BTreeMap<String, f64> {
        let t = if self.enabled {
            self.start.elapsed().as_secs_f64()
        } else {
            0.0
        };
        self.timings.insert("total".into(), t);
        self.timings
    }
}

/// Mask for the cropped frame: the U-Net when available and its coverage is
/// within [`MASK_COVERAGE_BOUNDS`], otherwise the classic entropy mask.
pub fn select_mask(pre: &crate::preprocess::Preprocessed, unet: Option<&UNet>) -> Result<(BinaryMask, MaskSource)> {
    if let Some(net) = unet {
        let m = predict_mask(net, &normalize(&pre.image), 0.5)?;
        let cov = m.coverage();
        if (MASK_COVERAGE_BOUNDS.0..=MASK_COVERAGE_BOUNDS.1).contains(&cov) {
            return Ok((m, MaskSource::Unet));
        }
        log::info!("u-net mask coverage {cov:.3} out of bounds; using the classic mask");
    }
    let m = pre.crop_mask(&extract_mask(&pre.framed)?)?;
    if m.count() == 0 {
        return Err(Error::NoLimbFound);
    }
    Ok((m, MaskSource::Classic))
}

pub fn run_pipeline(
    img: &GrayRaster,
    image_id: &str,
    limb: LimbKind,
    models: &ModelSet,
    opts: &PipelineOptions,
) -> Result<PipelineReport> {
    let lt = limb.limb_type();
    models.check_complete(lt)?;
    let mut clock = Clock::new(!opts.deterministic);

    let pre = preprocess(img, limb)?;
    clock.lap("preprocess");

    let (mask, mask_source) = select_mask(&pre, models.unets.get(&lt))?;
    let masked = normalize(&apply_mask(&pre.image, &mask)?);
    clock.lap("mask");

    let dets = detect_joints(&models.detectors[&lt], &masked, lt)?;
    clock.lap("detect");

    let (identified, identify_path) = identify_joints(&dets, limb)?;
    clock.lap("identify");

    let (cw, ch) = (masked.width(), masked.height());
    let narrow = &models.scorers[&(lt, Task::Narrowing)];
    let erosion = &models.scorers[&(lt, Task::Erosion)];
    let mut joints = Vec::with_capacity(identified.len());
    for item in &identified {
        let d = item.detection;
        let crop = extract_crop(&masked, &d.bbox, narrow.spec.crop_size)?;
        let (n, nv) = score_joint(narrow, &crop)?;
        let ecrop = if erosion.spec.crop_size == narrow.spec.crop_size {
            crop
        } else {
            extract_crop(&masked, &d.bbox, erosion.spec.crop_size)?
        };
        let (e, ev) = score_joint(erosion, &ecrop)?;
        let px = d.bbox.to_pixels(cw, ch);
        let (cx, cy) = pre.to_original(px.cx, px.cy);
        joints.push(JointReport {
            detection: d,
            original_box: PixelBox {
                cx,
                cy,
                w: px.w / pre.placement.scale_x,
                h: px.h / pre.placement.scale_y,
            },
            identity: item.identity,
            narrowing: n,
            narrowing_vector: nv,
            erosion: e,
            erosion_vector: ev,
        });
    }
    let scores: Vec<JointScore> = joints
        .iter()
        .map(|j| JointScore {
            joint: j.identity.joint(),
            narrowing: j.narrowing,
            erosion: j.erosion,
        })
        .collect();
    let sheet = aggregate_totals(&scores, &narrow.scale, &erosion.scale)?;
    clock.lap("score");

    Ok(PipelineReport {
        image_id: image_id.to_string(),
        limb,
        original_size: (img.width(), img.height()),
        mask_source,
        mask_coverage: mask.coverage(),
        identify_path,
        joints,
        sheet,
        timings: clock.finish(),
    })
}
