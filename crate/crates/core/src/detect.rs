//! Single-scale grid detector for joints, in the style of one YOLO head:
//! an `S x S` grid with `B` anchors per cell, each predicting box offsets,
//! objectness, and per-class scores.

use jointscore_nn::{
    bce_with_logits, fit, Checkpoint, Gradients, GraphBuilder, Network, Objective, Padding, Real, Tensor, TrainConfig,
    TrainHistory,
};
use serde::{Deserialize, Serialize};

use crate::anatomy::{self, JointClass};
use crate::error::{Error, Result};
use crate::geometry::BBoxNorm;
use crate::raster::{LimbType, UnitRaster};

pub const CONFIDENCE_THRESHOLD: f64 = 0.5;
pub const NMS_IOU: f64 = 0.45;
/// Unmatched anchors whose decoded box overlaps a truth box above this IoU
/// get no objectness loss.
pub const IGNORE_IOU: f64 = 0.5;
/// Per-anchor channels: tx, ty, tw, th, objectness, then one per class.
const BOX_CHANNELS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBoxNorm,
    pub class: JointClass,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub input_size: usize,
    pub grid: usize,
    /// Anchor priors as normalized (w, h).
    pub anchors: Vec<(f64, f64)>,
    pub classes: usize,
    /// Backbone widths; one 3x3 conv per entry, each but the last followed by
    /// a 2x2 max-pool.
    pub channels: Vec<usize>,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        DetectorSpec {
            input_size: 128,
            grid: 16,
            anchors: vec![(0.064, 0.127), (0.09, 0.09), (0.127, 0.064)],
            classes: 2,
            channels: vec![8, 16, 32, 64],
        }
    }
}

impl DetectorSpec {
    pub fn per_anchor(&self) -> usize {
        BOX_CHANNELS + self.classes
    }

    pub fn head_channels(&self) -> usize {
        self.anchors.len() * self.per_anchor()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("detector spec: {m}")));
        if self.anchors.is_empty() || self.classes == 0 || self.channels.is_empty() {
            return bad("anchors, classes and channels must be non-empty".into());
        }
        if self
            .anchors
            .iter()
            .any(|&(w, h)| !(w > 0.0 && w <= 1.0 && h > 0.0 && h <= 1.0))
        {
            return bad("anchor sizes must lie in (0, 1]".into());
        }
        let pools = self.channels.len() - 1;
        if self.input_size >> pools != self.grid || !self.input_size.is_multiple_of(1 << pools) {
            return bad(format!(
                "input {} with {pools} pools does not give a {}x{} grid",
                self.input_size, self.grid, self.grid
            ));
        }
        Ok(())
    }
}

/// Conv backbone (3x3 conv + ReLU, pooled between stages) ending in a 1x1
/// convolution to `B * (5 + classes)` raw outputs per cell.
pub fn build_detector<T: Real>(spec: &DetectorSpec, seed: u64) -> Result<Network<T>> {
    spec.validate()?;
    let mut b = GraphBuilder::<T>::new(&[1, spec.input_size, spec.input_size], seed);
    let mut x = b.input();
    let last = spec.channels.len() - 1;
    for (i, &c) in spec.channels.iter().enumerate() {
        x = b.conv_relu(x, c, 3, &format!("conv{i}"))?;
        if i < last {
            x = b.max_pool(x)?;
        }
    }
    let head = b.conv(x, spec.head_channels(), 1, Padding::Same, "head")?;
    let mut net = b.finish(head)?;
    // start objectness near the positive rate instead of 0.5
    let id = net.params().id("head.bias")?;
    let bias = &mut net.params_mut().by_id_mut(id).value;
    for a in 0..spec.anchors.len() {
        bias.data_mut()[a * spec.per_anchor() + 4] = T::lit(-3.0);
    }
    Ok(net)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

/// Raw per-anchor outputs at one grid cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RawBox {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
}

/// `cx = (col + sigmoid(tx)) / S`, `w = anchor_w * exp(tw)`, likewise for y/h.
pub fn decode_box(raw: RawBox, row: usize, col: usize, grid: usize, anchor: (f64, f64)) -> BBoxNorm {
    BBoxNorm {
        cx: (col as f64 + sigmoid(raw.tx)) / grid as f64,
        cy: (row as f64 + sigmoid(raw.ty)) / grid as f64,
        w: (anchor.0 * raw.tw.exp()).min(1.0),
        h: (anchor.1 * raw.th.exp()).min(1.0),
    }
}

/// Inverse of [`decode_box`] for a box whose centre lies in (row, col).
pub fn encode_box(b: &BBoxNorm, row: usize, col: usize, grid: usize, anchor: (f64, f64)) -> RawBox {
    let g = grid as f64;
    RawBox {
        tx: logit(b.cx * g - col as f64),
        ty: logit(b.cy * g - row as f64),
        tw: (b.w / anchor.0).ln(),
        th: (b.h / anchor.1).ln(),
    }
}

/// Grid cell (row, col) holding a normalized centre.
pub fn cell_of(b: &BBoxNorm, grid: usize) -> (usize, usize) {
    let c = |v: f64| ((v * grid as f64).floor().max(0.0) as usize).min(grid - 1);
    (c(b.cy), c(b.cx))
}

/// Decodes every anchor of a `[B * (5 + C), S, S]` output into detections.
/// Confidence is objectness times the best class score.
pub fn decode_all(raw: &[f64], spec: &DetectorSpec, limb: LimbType) -> Vec<Detection> {
    let s = spec.grid;
    let at = |ch: usize, r: usize, c: usize| raw[(ch * s + r) * s + c];
    let mut out = Vec::with_capacity(s * s * spec.anchors.len());
    for r in 0..s {
        for c in 0..s {
            for (a, &anchor) in spec.anchors.iter().enumerate() {
                let base = a * spec.per_anchor();
                let rb = RawBox {
                    tx: at(base, r, c),
                    ty: at(base + 1, r, c),
                    tw: at(base + 2, r, c),
                    th: at(base + 3, r, c),
                };
                let obj = sigmoid(at(base + 4, r, c));
                let (k, p) = (0..spec.classes)
                    .map(|k| (k, sigmoid(at(base + BOX_CHANNELS + k, r, c))))
                    .fold((0, f64::NEG_INFINITY), |best, x| if x.1 > best.1 { x } else { best });
                out.push(Detection {
                    bbox: decode_box(rb, r, c, s, anchor).clamped(),
                    class: JointClass::from_index(limb, k),
                    confidence: obj * p,
                });
            }
        }
    }
    out
}

/// Greedy non-maximum suppression within each class.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut sorted = dets.to_vec();
    sort_by_confidence(&mut sorted);
    let mut kept: Vec<Detection> = Vec::new();
    for d in sorted {
        if kept
            .iter()
            .all(|k| k.class != d.class || k.bbox.iou(&d.bbox) <= iou_threshold)
        {
            kept.push(d);
        }
    }
    kept
}

/// Descending confidence; ties broken by position so the order is total.
fn sort_by_confidence(dets: &mut [Detection]) {
    dets.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.bbox.cy.total_cmp(&b.bbox.cy))
            .then(a.bbox.cx.total_cmp(&b.bbox.cx))
    });
}

/// Drops detections at or below the confidence threshold, applies NMS, and
/// keeps at most `k` by confidence.
pub fn select_detections(dets: &[Detection], k: usize) -> Vec<Detection> {
    let above: Vec<Detection> = dets
        .iter()
        .copied()
        .filter(|d| d.confidence > CONFIDENCE_THRESHOLD)
        .collect();
    let mut kept = nms(&above, NMS_IOU);
    kept.truncate(k);
    kept
}

#[derive(Clone, Debug)]
pub struct Detector {
    pub spec: DetectorSpec,
    pub network: Network<f32>,
}

pub fn checkpoint_tag(limb: LimbType) -> String {
    format!("detect-{}", limb.name())
}

impl Detector {
    pub fn to_checkpoint(&self, limb: LimbType, seed: u64) -> Checkpoint {
        let mut ck = Checkpoint::new(&checkpoint_tag(limb), seed).with_network("detector", self.network.cast());
        ck.meta.insert(
            "spec".into(),
            serde_json::to_value(&self.spec).expect("spec serializes"),
        );
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Detector> {
        let spec: DetectorSpec = ck
            .meta
            .get("spec")
            .cloned()
            .ok_or_else(|| Error::MissingCheckpoint(format!("{}: no detector spec", ck.tag)))
            .and_then(|v| serde_json::from_value(v).map_err(|e| Error::MissingCheckpoint(e.to_string())))?;
        spec.validate()?;
        Ok(Detector {
            spec,
            network: ck.network("detector")?.cast(),
        })
    }

    /// Raw head output for an image of any size (area resampled to the input).
    pub fn raw_output(&self, img: &UnitRaster) -> Result<Vec<f64>> {
        let n = self.spec.input_size;
        let small = img.resample_area(n, n);
        let x = Tensor::new(vec![1, n, n], small.data().to_vec())?;
        Ok(self.network.predict(&x)?.data().iter().map(|&v| v as f64).collect())
    }
}

/// Joints in a preprocessed, masked limb image: thresholded at 0.5, NMS at
/// IoU 0.45, then the top 10 (hands) or 6 (feet) by confidence.
pub fn detect_joints(det: &Detector, img: &UnitRaster, limb: LimbType) -> Result<Vec<Detection>> {
    let raw = det.raw_output(img)?;
    Ok(select_detections(
        &decode_all(&raw, &det.spec, limb),
        anatomy::joint_count(limb),
    ))
}

/// A truth box for training: normalized box and class index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthBox {
    pub bbox: BBoxNorm,
    pub class_index: usize,
}

#[derive(Clone, Debug)]
pub struct DetectorSample {
    pub image: UnitRaster,
    pub boxes: Vec<TruthBox>,
}

/// Shape-only IoU of two boxes sharing a centre.
fn shape_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = a.0.min(b.0) * a.1.min(b.1);
    inter / (a.0 * a.1 + b.0 * b.1 - inter)
}

/// Assigns each truth box to (row, col, anchor): its centre cell and the
/// best-IoU anchor, falling back to the next best free anchor when taken.
/// Boxes with no free anchor left are skipped.
pub fn assign_anchors(boxes: &[TruthBox], spec: &DetectorSpec) -> Vec<(usize, usize, usize, TruthBox)> {
    let mut taken = std::collections::HashSet::new();
    let mut out = Vec::new();
    for tb in boxes {
        let (r, c) = cell_of(&tb.bbox, spec.grid);
        let mut order: Vec<usize> = (0..spec.anchors.len()).collect();
        order.sort_by(|&i, &j| {
            shape_iou((tb.bbox.w, tb.bbox.h), spec.anchors[j])
                .total_cmp(&shape_iou((tb.bbox.w, tb.bbox.h), spec.anchors[i]))
                .then(i.cmp(&j))
        });
        if let Some(&a) = order.iter().find(|&&a| !taken.contains(&(r, c, a))) {
            taken.insert((r, c, a));
            out.push((r, c, a, *tb));
        }
    }
    out
}

/// Composite loss on a raw head output and its gradient: squared error on the
/// matched box offsets (`sigmoid(tx), sigmoid(ty), tw, th`), logit BCE on
/// objectness for every anchor, and logit BCE on class scores of matched
/// anchors. All terms have weight 1. Unmatched anchors whose prediction
/// already overlaps a truth box above [`IGNORE_IOU`] are left out of the
/// objectness term, so neighbouring cells are not pushed to silence.
pub fn detector_loss(raw: &[f64], boxes: &[TruthBox], spec: &DetectorSpec) -> (f64, Vec<f64>) {
    let s = spec.grid;
    let idx = |ch: usize, r: usize, c: usize| (ch * s + r) * s + c;
    let mut grad = vec![0.0; raw.len()];
    let mut loss = 0.0;
    let assigned = assign_anchors(boxes, spec);
    let mut positive = vec![false; s * s * spec.anchors.len()];
    for &(r, c, a, tb) in &assigned {
        positive[(r * s + c) * spec.anchors.len() + a] = true;
        let base = a * spec.per_anchor();
        let target = encode_box(&tb.bbox, r, c, s, spec.anchors[a]);
        for (k, (t_sig, is_sig)) in [
            (sigmoid(target.tx), true),
            (sigmoid(target.ty), true),
            (target.tw, false),
            (target.th, false),
        ]
        .into_iter()
        .enumerate()
        {
            let i = idx(base + k, r, c);
            let z = raw[i];
            let (p, dp) = if is_sig {
                let p = sigmoid(z);
                (p, p * (1.0 - p))
            } else {
                (z, 1.0)
            };
            let d = p - t_sig;
            loss += d * d;
            grad[i] += 2.0 * d * dp;
        }
        for k in 0..spec.classes {
            let i = idx(base + BOX_CHANNELS + k, r, c);
            let y = if k == tb.class_index { 1.0 } else { 0.0 };
            let (l, g) = bce_with_logits(raw[i], y);
            loss += l;
            grad[i] += g;
        }
    }
    for r in 0..s {
        for c in 0..s {
            for a in 0..spec.anchors.len() {
                let base = a * spec.per_anchor();
                let i = idx(base + 4, r, c);
                let is_pos = positive[(r * s + c) * spec.anchors.len() + a];
                if !is_pos {
                    let rb = RawBox {
                        tx: raw[idx(base, r, c)],
                        ty: raw[idx(base + 1, r, c)],
                        tw: raw[idx(base + 2, r, c)],
                        th: raw[idx(base + 3, r, c)],
                    };
                    let pred = decode_box(rb, r, c, s, spec.anchors[a]);
                    if boxes.iter().any(|tb| pred.iou(&tb.bbox) > IGNORE_IOU) {
                        continue;
                    }
                }
                let y = if is_pos { 1.0 } else { 0.0 };
                let (l, g) = bce_with_logits(raw[i], y);
                loss += l;
                grad[i] += g;
            }
        }
    }
    (loss, grad)
}

struct DetectorObjective<'a> {
    spec: &'a DetectorSpec,
}

impl<T: Real> Objective<T> for DetectorObjective<'_> {
    type Sample = (Tensor<T>, Vec<TruthBox>);

    fn accumulate(
        &self,
        net: &Network<T>,
        s: &Self::Sample,
        grads: &mut Gradients<T>,
        scale: T,
    ) -> jointscore_nn::Result<f64> {
        let trace = net.forward(&s.0)?;
        let raw = trace.output().to_f64();
        let (loss, g) = detector_loss(&raw, &s.1, self.spec);
        let sc = scale.as_f64();
        let up = Tensor::new(
            trace.output().shape().to_vec(),
            g.iter().map(|&v| T::lit(v * sc)).collect(),
        )?;
        net.backward(&trace, &up, grads, false)?;
        Ok(loss)
    }

    fn evaluate(&self, net: &Network<T>, s: &Self::Sample) -> jointscore_nn::Result<f64> {
        Ok(detector_loss(&net.predict(&s.0)?.to_f64(), &s.1, self.spec).0)
    }
}

/// Learning-rate multiplier: 1, then 0.1 from 80% of the steps, 0.01 from 90%.
pub fn step_decay(step: usize, total: usize) -> f64 {
    let f = step as f64 / total.max(1) as f64;
    if f >= 0.9 {
        0.01
    } else if f >= 0.8 {
        0.1
    } else {
        1.0
    }
}

/// Aspect ratios (w/h relative to the mean box) of the anchor priors.
pub const ANCHOR_RATIOS: [f64; 3] = [0.5, 1.0, 2.0];

/// Anchor priors from the truth-box sizes: the mean box (w, h) reshaped to
/// each ratio in [`ANCHOR_RATIOS`] at constant area.
pub fn fit_anchors(samples: &[DetectorSample]) -> Vec<(f64, f64)> {
    let sizes: Vec<(f64, f64)> = samples
        .iter()
        .flat_map(|s| s.boxes.iter().map(|b| (b.bbox.w, b.bbox.h)))
        .collect();
    if sizes.is_empty() {
        return DetectorSpec::default().anchors;
    }
    let n = sizes.len() as f64;
    let mw = sizes.iter().map(|p| p.0).sum::<f64>() / n;
    let mh = sizes.iter().map(|p| p.1).sum::<f64>() / n;
    ANCHOR_RATIOS
        .iter()
        .map(|r| ((mw * r.sqrt()).min(1.0), (mh / r.sqrt()).min(1.0)))
        .collect()
}

/// Trains a detector from scratch. Anchors are refit to the training boxes;
/// the learning rate decays by 10x at 80% and 90% of the scheduled steps.
pub fn train_detector(
    samples: &[DetectorSample],
    spec: &DetectorSpec,
    cfg: &TrainConfig,
) -> Result<(Detector, TrainHistory)> {
    if samples.is_empty() {
        return Err(Error::Nn(jointscore_nn::NnError::EmptyTrainingSet));
    }
    for s in samples {
        for b in &s.boxes {
            if !b.bbox.is_valid() || b.class_index >= spec.classes {
                return Err(Error::InvalidArgument(format!(
                    "truth box outside [0, 1] or bad class: {b:?}"
                )));
            }
        }
    }
    let mut spec = spec.clone();
    spec.anchors = fit_anchors(samples);
    spec.validate()?;
    let n = spec.input_size;
    let to_pair = |s: &DetectorSample| -> Result<(Tensor<f32>, Vec<TruthBox>)> {
        let small = s.image.resample_area(n, n);
        Ok((Tensor::new(vec![1, n, n], small.data().to_vec())?, s.boxes.clone()))
    };
    let (ti, vi) = crate::unet::holdout_indices(samples.len(), 0.1, cfg.seed);
    let train: Vec<_> = ti.iter().map(|&i| to_pair(&samples[i])).collect::<Result<_>>()?;
    let val: Vec<_> = vi.iter().map(|&i| to_pair(&samples[i])).collect::<Result<_>>()?;
    let mut network = build_detector::<f32>(&spec, cfg.seed)?;
    let objective = DetectorObjective { spec: &spec };
    let history = fit(&mut network, &objective, &train, &val, cfg, step_decay)?;
    Ok((Detector { spec, network }, history))
}
