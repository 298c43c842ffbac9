//! Turns annotated radiographs (synthetic or loaded from disk) into training
//! and evaluation sets, and trains and evaluates the segmentation, detection
//! and scoring networks on them.

use std::collections::BTreeMap;

use jointscore_nn::{TrainConfig, TrainHistory};
use serde::Serialize;

use crate::anatomy::JointId;
use crate::detect::{detect_joints, train_detector, Detector, DetectorSample, DetectorSpec, TruthBox};
use crate::error::{Error, Result};
use crate::geometry::{BBoxNorm, PixelBox};
use crate::identify::{identify_joints, IdentifyPath};
use crate::mask::{apply_mask, extract_mask, BinaryMask};
use crate::metrics::{confusion_matrix, tolerant_balanced_accuracy_cm, ConfusionMatrix};
use crate::ordinal::{undersample, ScaleSet, Task};
use crate::preprocess::{preprocess, Preprocessed};
use crate::raster::{normalize, GrayRaster, LimbKind, LimbType, UnitRaster};
use crate::scorer::{build_scorer, extract_crop, pretrain_trunk, score_joint, Scorer, ScorerSpec};
use crate::synth::SynthSample;
use crate::unet::{predict_mask, train_unet, MaskSample, UNet, UNetSpec};

/// Classic masks below this IoU against the truth silhouette are not used as
/// segmentation targets.
pub const MASK_CURATION_IOU: f64 = 0.95;
/// Detections count as found at this IoU with the truth box.
pub const MATCH_IOU: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedJoint {
    pub id: JointId,
    /// Box in image pixels.
    pub bbox: PixelBox,
    pub narrowing: Option<usize>,
    pub erosion: Option<usize>,
}

impl AnnotatedJoint {
    pub fn score(&self, task: Task) -> Option<usize> {
        match task {
            Task::Narrowing => self.narrowing,
            Task::Erosion => self.erosion,
        }
    }
}

/// A radiograph with whatever truth is known about it.
#[derive(Clone, Debug)]
pub struct AnnotatedImage {
    pub patient_id: String,
    pub limb: LimbKind,
    pub image: GrayRaster,
    /// Limb silhouette at image size.
    pub mask: Option<BinaryMask>,
    pub joints: Vec<AnnotatedJoint>,
}

impl AnnotatedImage {
    pub fn image_id(&self) -> String {
        crate::dataset::image_id(&self.patient_id, self.limb)
    }
}

impl From<SynthSample> for AnnotatedImage {
    fn from(s: SynthSample) -> Self {
        AnnotatedImage {
            patient_id: s.patient_id,
            limb: s.limb,
            image: s.image,
            mask: Some(s.mask),
            joints: s
                .joints
                .into_iter()
                .map(|j| AnnotatedJoint {
                    id: j.id,
                    bbox: j.bbox,
                    narrowing: Some(j.narrowing),
                    erosion: Some(j.erosion),
                })
                .collect(),
        }
    }
}

/// An annotated image after preprocessing, with its truth mapped onto the
/// cropped frame.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub source: AnnotatedImage,
    pub pre: Preprocessed,
    /// Truth silhouette on the cropped frame.
    pub truth_mask: Option<BinaryMask>,
    /// Preprocessed image, normalized and masked by the truth silhouette, or
    /// by the classic mask when there is no truth.
    pub masked: UnitRaster,
}

pub fn prepare(source: AnnotatedImage) -> Result<Prepared> {
    let pre = preprocess(&source.image, source.limb)?;
    let truth_mask = match &source.mask {
        Some(m) => Some(pre.crop_mask(&frame_mask(&pre, m)?)?),
        None => None,
    };
    let mask = match &truth_mask {
        Some(m) => m.clone(),
        None => pre.crop_mask(&extract_mask(&pre.framed)?)?,
    };
    let masked = normalize(&apply_mask(&pre.image, &mask)?);
    Ok(Prepared {
        source,
        pre,
        truth_mask,
        masked,
    })
}

pub fn prepare_synth(sample: SynthSample) -> Result<Prepared> {
    prepare(sample.into())
}

/// An image-sized mask moved onto the resized frame.
fn frame_mask(pre: &Preprocessed, mask: &BinaryMask) -> Result<BinaryMask> {
    if (mask.width(), mask.height()) != pre.original {
        return Err(Error::DimensionMismatch {
            expected: pre.original,
            found: (mask.width(), mask.height()),
        });
    }
    if pre.original == (pre.framed.width(), pre.framed.height()) {
        return Ok(mask.clone());
    }
    BinaryMask::from_fn(pre.framed.width(), pre.framed.height(), |x, y| {
        let (sx, sy) = pre.placement.inverse(x as f64 + 0.5, y as f64 + 0.5);
        sx >= 0.0
            && sy >= 0.0
            && (sx as usize) < mask.width()
            && (sy as usize) < mask.height()
            && mask.get(sx as usize, sy as usize)
    })
}

impl Prepared {
    pub fn limb_type(&self) -> LimbType {
        self.source.limb.limb_type()
    }

    fn frame_box(&self, b: &PixelBox) -> BBoxNorm {
        let (cx, cy) = self.pre.placement.forward(b.cx, b.cy);
        let p = PixelBox {
            cx,
            cy,
            w: b.w * self.pre.placement.scale_x,
            h: b.h * self.pre.placement.scale_y,
        };
        p.normalized(self.masked.width(), self.masked.height())
    }

    /// Truth joints with boxes normalized to the cropped frame.
    pub fn truth_boxes(&self) -> Vec<(&AnnotatedJoint, BBoxNorm)> {
        self.source
            .joints
            .iter()
            .map(|j| (j, self.frame_box(&j.bbox)))
            .collect()
    }

    pub fn detector_sample(&self) -> DetectorSample {
        DetectorSample {
            image: self.masked.clone(),
            boxes: self
                .truth_boxes()
                .into_iter()
                .map(|(j, bbox)| TruthBox {
                    bbox,
                    class_index: j.id.class.index(),
                })
                .collect(),
        }
    }

    /// Segmentation pair whose target is the classic mask of the frame, or
    /// `None` when a truth silhouette exists and the classic mask falls short
    /// of [`MASK_CURATION_IOU`] against it.
    pub fn unet_sample(&self, size: usize) -> Result<Option<MaskSample>> {
        let classic = self.pre.crop_mask(&extract_mask(&self.pre.framed)?)?;
        if let Some(truth) = &self.truth_mask {
            if classic.iou(truth)? < MASK_CURATION_IOU {
                return Ok(None);
            }
        }
        Ok(Some(MaskSample::from_full(
            &normalize(&self.pre.image),
            &classic,
            size,
        )?))
    }

    /// Crops at the truth boxes.
    pub fn joint_crops(&self, size: usize) -> Result<Vec<(&AnnotatedJoint, UnitRaster)>> {
        self.truth_boxes()
            .into_iter()
            .map(|(j, b)| Ok((j, extract_crop(&self.masked, &b, size)?)))
            .collect()
    }
}

/// Architectures and optimizer settings for every trained network.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainPlan {
    pub unet_spec: UNetSpec,
    pub unet: TrainConfig,
    pub detector_spec: DetectorSpec,
    pub detector: TrainConfig,
    pub scorer_spec: ScorerSpec,
    /// Trunk pretraining on joint class.
    pub pretext: TrainConfig,
    pub scorer: TrainConfig,
    pub scales: ScaleSet,
}

impl TrainPlan {
    pub fn with_seed(seed: u64) -> Self {
        let cfg = |learning_rate, batch_size, max_epochs, early_stop_patience| TrainConfig {
            learning_rate,
            batch_size,
            max_epochs,
            early_stop_patience,
            seed,
        };
        TrainPlan {
            unet_spec: UNetSpec::default(),
            unet: cfg(1e-4, 16, 80, Some(10)),
            detector_spec: DetectorSpec::default(),
            detector: cfg(1e-3, 8, 60, None),
            scorer_spec: ScorerSpec::default(),
            pretext: cfg(1e-3, 32, 5, None),
            scorer: cfg(1e-4, 32, 250, None),
            scales: ScaleSet::default(),
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        for c in [&mut self.unet, &mut self.detector, &mut self.pretext, &mut self.scorer] {
            c.seed = seed;
        }
    }
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan::with_seed(42)
    }
}

/// Per-image material the trainers and evaluators need, at network input
/// sizes so whole datasets fit in memory.
#[derive(Clone, Debug)]
pub struct Extracted {
    pub patient_id: String,
    pub limb: LimbKind,
    /// Curated segmentation pair at the U-Net input size.
    pub unet: Option<MaskSample>,
    /// Normalized preprocessed image and truth silhouette at full size, for
    /// mask evaluation.
    pub segmentation: Option<(UnitRaster, BinaryMask)>,
    /// Masked image at the detector input size with truth boxes.
    pub detection: DetectionCase,
    pub crops: Vec<CropCase>,
}

#[derive(Clone, Debug)]
pub struct DetectionCase {
    pub limb: LimbKind,
    pub image: UnitRaster,
    pub truth: Vec<(JointId, BBoxNorm)>,
}

impl DetectionCase {
    pub fn sample(&self) -> DetectorSample {
        DetectorSample {
            image: self.image.clone(),
            boxes: self
                .truth
                .iter()
                .map(|(id, bbox)| TruthBox {
                    bbox: *bbox,
                    class_index: id.class.index(),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CropCase {
    pub joint: JointId,
    pub image: UnitRaster,
    pub narrowing: Option<usize>,
    pub erosion: Option<usize>,
}

impl CropCase {
    pub fn score(&self, task: Task) -> Option<usize> {
        match task {
            Task::Narrowing => self.narrowing,
            Task::Erosion => self.erosion,
        }
    }
}

/// What [`extract`] computes beyond detection cases and crops.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Extras {
    /// Curated U-Net training pair (runs the classic mask).
    pub unet_sample: bool,
    /// Full-size image and truth silhouette for mask evaluation.
    pub segmentation: bool,
}

pub fn extract(p: &Prepared, plan: &TrainPlan, extras: Extras) -> Result<Extracted> {
    let n = plan.detector_spec.input_size;
    let unet = if extras.unet_sample {
        p.unet_sample(plan.unet_spec.input_size)?
    } else {
        None
    };
    let segmentation = match (&p.truth_mask, extras.segmentation) {
        (Some(m), true) => Some((normalize(&p.pre.image), m.clone())),
        _ => None,
    };
    let crops = p
        .joint_crops(plan.scorer_spec.crop_size)?
        .into_iter()
        .map(|(j, image)| CropCase {
            joint: j.id,
            image,
            narrowing: j.narrowing,
            erosion: j.erosion,
        })
        .collect();
    Ok(Extracted {
        patient_id: p.source.patient_id.clone(),
        limb: p.source.limb,
        unet,
        segmentation,
        detection: DetectionCase {
            limb: p.source.limb,
            image: p.masked.resample_area(n, n),
            truth: p.truth_boxes().into_iter().map(|(j, b)| (j.id, b)).collect(),
        },
        crops,
    })
}

/// Prepares and extracts each image in turn, keeping only the compact result.
pub fn extract_all(
    images: impl IntoIterator<Item = Result<AnnotatedImage>>,
    plan: &TrainPlan,
    extras: Extras,
) -> Result<Vec<Extracted>> {
    images
        .into_iter()
        .map(|a| extract(&prepare(a?)?, plan, extras))
        .collect()
}

fn single_limb_type<'a>(limbs: impl IntoIterator<Item = &'a LimbKind>) -> Result<LimbType> {
    let mut it = limbs.into_iter();
    let lt = it
        .next()
        .ok_or_else(|| Error::InvalidArgument("no training images".into()))?
        .limb_type();
    if it.any(|l| l.limb_type() != lt) {
        return Err(Error::InvalidArgument("training images mix hands and feet".into()));
    }
    Ok(lt)
}

/// Trains a U-Net on the curated pairs of `data`. Returns the number of pairs
/// used.
pub fn fit_unet(data: &[Extracted], plan: &TrainPlan) -> Result<(UNet, TrainHistory, usize)> {
    let samples: Vec<MaskSample> = data.iter().filter_map(|e| e.unet.clone()).collect();
    let n = samples.len();
    let (unet, history) = train_unet(&samples, &plan.unet_spec, &plan.unet)?;
    Ok((unet, history, n))
}

pub fn fit_detector(data: &[Extracted], plan: &TrainPlan) -> Result<(Detector, TrainHistory)> {
    single_limb_type(data.iter().map(|e| &e.limb))?;
    let samples: Vec<DetectorSample> = data.iter().map(|e| e.detection.sample()).collect();
    train_detector(&samples, &plan.detector_spec, &plan.detector)
}

/// Crops with their score for `task`, skipping joints whose score is unknown.
pub fn task_crops<'a>(data: impl IntoIterator<Item = &'a Extracted>, task: Task) -> Vec<(UnitRaster, usize)> {
    data.into_iter()
        .flat_map(|e| &e.crops)
        .filter_map(|c| c.score(task).map(|k| (c.image.clone(), k)))
        .collect()
}

#[derive(Clone, Debug)]
pub struct FittedScorers {
    pub pretext: TrainHistory,
    /// Narrowing then erosion.
    pub scorers: Vec<(Scorer, TrainHistory)>,
}

/// Pretrains a shared trunk on joint class, then trains one head per task on
/// under-sampled crops.
pub fn fit_scorers(data: &[Extracted], plan: &TrainPlan) -> Result<FittedScorers> {
    let lt = single_limb_type(data.iter().map(|e| &e.limb))?;
    let class_crops: Vec<(UnitRaster, usize)> = data
        .iter()
        .flat_map(|e| &e.crops)
        .map(|c| (c.image.clone(), c.joint.class.index()))
        .collect();
    let (trunk, pretext) = pretrain_trunk(&class_crops, &plan.scorer_spec, &plan.pretext)?;
    let mut scorers = Vec::new();
    for task in Task::ALL {
        let crops = undersample(&task_crops(data, task), plan.scorer.seed)?;
        let mut sc = build_scorer(&plan.scorer_spec, plan.scales.get(lt, task), &trunk, plan.scorer.seed)?;
        let h = crate::scorer::train_scorer(&mut sc, &crops, &plan.scorer)?;
        scorers.push((sc, h));
    }
    Ok(FittedScorers { pretext, scorers })
}

/// Mean and minimum IoU of U-Net masks against the truth silhouettes.
pub fn eval_unet(unet: &UNet, data: &[Extracted]) -> Result<(f64, f64)> {
    let mut ious = Vec::new();
    for (img, truth) in data.iter().filter_map(|e| e.segmentation.as_ref()) {
        ious.push(predict_mask(unet, img, 0.5)?.iou(truth)?);
    }
    if ious.is_empty() {
        return Err(Error::InvalidArgument("no images with truth masks".into()));
    }
    Ok((
        ious.iter().sum::<f64>() / ious.len() as f64,
        ious.iter().copied().fold(1.0, f64::min),
    ))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DetectionEval {
    pub images: usize,
    pub joints: usize,
    /// Truth joints with a detection at IoU >= [`MATCH_IOU`].
    pub found: usize,
    /// Found joints whose assigned identity is the truth identity.
    pub identified: usize,
    pub paths: BTreeMap<String, usize>,
    /// Joints found on primary-path images, and those given the right identity.
    pub primary_found: usize,
    pub primary_identified: usize,
}

impl DetectionEval {
    pub fn recall(&self) -> f64 {
        ratio(self.found, self.joints)
    }

    /// Detection and identification both right, over all truth joints.
    pub fn combined_accuracy(&self) -> f64 {
        ratio(self.identified, self.joints)
    }

    /// Identity correctness over found joints of primary-path images.
    pub fn primary_identity_accuracy(&self) -> f64 {
        ratio(self.primary_identified, self.primary_found)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn eval_detector(det: &Detector, data: &[Extracted]) -> Result<DetectionEval> {
    let mut ev = DetectionEval::default();
    for e in data {
        let case = &e.detection;
        let dets = detect_joints(det, &case.image, case.limb.limb_type())?;
        let (ids, path) = identify_joints(&dets, case.limb)?;
        ev.images += 1;
        *ev.paths.entry(path.name().to_string()).or_default() += 1;
        for (id, truth) in &case.truth {
            ev.joints += 1;
            let best = ids
                .iter()
                .map(|i| (i.detection.bbox.iou(truth), i))
                .filter(|(iou, _)| *iou >= MATCH_IOU)
                .max_by(|a, b| a.0.total_cmp(&b.0));
            let Some((_, hit)) = best else { continue };
            ev.found += 1;
            let right = hit.identity.joint() == Some(*id);
            ev.identified += right as usize;
            if path == IdentifyPath::Primary {
                ev.primary_found += 1;
                ev.primary_identified += right as usize;
            }
        }
    }
    Ok(ev)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreEval {
    pub confusion: ConfusionMatrix,
    pub exact: f64,
    /// Balanced accuracy counting off-by-one predictions as right.
    pub within_one: f64,
}

pub fn eval_scorer(scorer: &Scorer, crops: &[(UnitRaster, usize)]) -> Result<ScoreEval> {
    let truths: Vec<usize> = crops.iter().map(|c| c.1).collect();
    let preds: Vec<usize> = crops
        .iter()
        .map(|c| Ok(score_joint(scorer, &c.0)?.0))
        .collect::<Result<_>>()?;
    let confusion = confusion_matrix(&truths, &preds, scorer.scale.classes)?;
    Ok(ScoreEval {
        exact: tolerant_balanced_accuracy_cm(&confusion, 0)?,
        within_one: tolerant_balanced_accuracy_cm(&confusion, 1)?,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{render_sample, SynthConfig};

    #[test]
    fn prepared_truth_sits_inside_the_cropped_frame() {
        let cfg = SynthConfig::default();
        for limb in [LimbKind::HandRight, LimbKind::FootLeft] {
            let p = prepare_synth(render_sample(&cfg, 3, limb).unwrap()).unwrap();
            let (w, h) = (p.masked.width(), p.masked.height());
            let truth = p.truth_mask.as_ref().unwrap();
            assert_eq!((truth.width(), truth.height()), (w, h));
            let ds = p.detector_sample();
            assert_eq!(ds.boxes.len(), crate::anatomy::joint_count(limb.limb_type()));
            for (j, b) in p.truth_boxes() {
                assert!(b.is_valid());
                assert!(
                    truth.get((b.cx * w as f64) as usize, (b.cy * h as f64) as usize),
                    "{}",
                    j.id
                );
            }
            let crops = p.joint_crops(64).unwrap();
            assert!(crops
                .iter()
                .all(|c| c.1.width() == 64 && c.1.data().iter().any(|&v| v > 0.3)));
        }
    }

    #[test]
    fn images_without_truth_mask_use_the_classic_mask() {
        let cfg = SynthConfig::default();
        let mut a: AnnotatedImage = render_sample(&cfg, 1, LimbKind::HandLeft).unwrap().into();
        a.mask = None;
        let p = prepare(a).unwrap();
        assert!(p.truth_mask.is_none());
        assert!(p.masked.data().iter().any(|&v| v > 0.0));
        assert!(p.unet_sample(32).unwrap().is_some());
    }

    #[test]
    fn unknown_scores_are_skipped() {
        let cfg = SynthConfig::default();
        let mut a: AnnotatedImage = render_sample(&cfg, 2, LimbKind::FootRight).unwrap().into();
        a.joints[0].erosion = None;
        let e = extract(&prepare(a).unwrap(), &TrainPlan::default(), Extras::default()).unwrap();
        assert_eq!(e.detection.image.width(), 128);
        assert!(e.unet.is_none() && e.segmentation.is_none());
        let data = [e];
        assert_eq!(task_crops(&data, Task::Narrowing).len(), 6);
        assert_eq!(task_crops(&data, Task::Erosion).len(), 5);
    }

    #[test]
    fn mixed_limb_types_are_rejected() {
        let cfg = SynthConfig::default();
        let images = [LimbKind::HandLeft, LimbKind::FootLeft].map(|l| Ok(render_sample(&cfg, 0, l).unwrap().into()));
        let data = extract_all(images, &TrainPlan::default(), Extras::default()).unwrap();
        assert!(fit_detector(&data, &TrainPlan::default()).is_err());
        assert!(fit_scorers(&data, &TrainPlan::default()).is_err());
    }
}
