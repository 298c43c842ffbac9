//! Joint crops and the ordinal score networks: a convolutional trunk trained
//! once on a joint-class pretext task and then frozen, and a trainable dense
//! head with one sigmoid output per score class.

use jointscore_nn::{
    bce_loss, fit, Checkpoint, Gradients, GraphBuilder, Network, Objective, Real, Tensor, TrainConfig, TrainHistory,
};
use serde::{Deserialize, Serialize};

use crate::anatomy::JointId;
use crate::error::{Error, Result};
use crate::geometry::BBoxNorm;
use crate::ordinal::{ordinal_decode, ordinal_encode, OrdinalVector, ScoreScale, Task};
use crate::raster::{LimbKind, LimbType, UnitRaster};

pub const CROP_SIZE: usize = 64;
/// Each side of a detection box grows by this fraction before cropping.
pub const CROP_MARGIN: f64 = 0.2;

#[derive(Clone, Debug)]
pub struct JointCrop {
    pub image: UnitRaster,
    pub joint: Option<JointId>,
    pub limb: LimbKind,
}

/// Cuts the box, grown by [`CROP_MARGIN`], out of `img` and area-resamples it
/// to `size` x `size`. Parts outside the image read as 0.
pub fn extract_crop(img: &UnitRaster, bbox: &BBoxNorm, size: usize) -> Result<UnitRaster> {
    if size == 0 {
        return Err(Error::ZeroDimension);
    }
    let pb = bbox.to_pixels(img.width(), img.height()).expanded(CROP_MARGIN);
    let (x0, y0, x1, y1) = pb.corners();
    let (x0, y0) = (x0.round() as i64, y0.round() as i64);
    let (x1, y1) = ((x1.round() as i64).max(x0 + 1), (y1.round() as i64).max(y0 + 1));
    let (w, h) = ((x1 - x0) as usize, (y1 - y0) as usize);
    let mut data = vec![0.0f32; w * h];
    for y in 0..h {
        let sy = y0 + y as i64;
        if sy < 0 || sy >= img.height() as i64 {
            continue;
        }
        for x in 0..w {
            let sx = x0 + x as i64;
            if sx >= 0 && sx < img.width() as i64 {
                data[y * w + x] = img.get(sx as usize, sy as usize);
            }
        }
    }
    Ok(UnitRaster::new(w, h, data)?.resample_area(size, size))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorerSpec {
    pub crop_size: usize,
    /// One 3x3 conv + ReLU + 2x2 max-pool per entry.
    pub trunk_channels: Vec<usize>,
    /// Hidden dense widths of the head (ReLU), before the sigmoid output.
    pub head_units: Vec<usize>,
}

impl Default for ScorerSpec {
    fn default() -> Self {
        ScorerSpec {
            crop_size: CROP_SIZE,
            trunk_channels: vec![8, 16, 16],
            head_units: vec![64, 32],
        }
    }
}

impl ScorerSpec {
    pub fn validate(&self) -> Result<()> {
        let pools = self.trunk_channels.len();
        if pools == 0 || self.head_units.is_empty() || !self.crop_size.is_multiple_of(1 << pools) {
            return Err(Error::InvalidArgument(format!(
                "scorer spec: crop size {} must be divisible by 2^{pools} and layers non-empty",
                self.crop_size
            )));
        }
        Ok(())
    }

    /// Length of the flattened trunk output.
    pub fn feature_len(&self) -> usize {
        let side = self.crop_size >> self.trunk_channels.len();
        self.trunk_channels.last().copied().unwrap_or(0) * side * side
    }

    /// Trainable parameters of a head with `classes` outputs.
    pub fn head_param_count(&self, classes: usize) -> usize {
        let mut n = 0;
        let mut prev = self.feature_len();
        for &u in self.head_units.iter().chain(std::iter::once(&classes)) {
            n += prev * u + u;
            prev = u;
        }
        n
    }
}

fn trunk_layers<T: Real>(b: &mut GraphBuilder<T>, spec: &ScorerSpec) -> Result<usize> {
    let mut x = b.input();
    for (i, &c) in spec.trunk_channels.iter().enumerate() {
        x = b.conv_relu(x, c, 3, &format!("trunk.conv{i}"))?;
        x = b.max_pool(x)?;
    }
    Ok(b.flatten(x)?)
}

/// The convolutional feature extractor, crop to flat feature vector.
pub fn build_trunk<T: Real>(spec: &ScorerSpec, seed: u64) -> Result<Network<T>> {
    spec.validate()?;
    let mut b = GraphBuilder::<T>::new(&[1, spec.crop_size, spec.crop_size], seed);
    let x = trunk_layers(&mut b, spec)?;
    Ok(b.finish(x)?)
}

/// Dense head: hidden ReLU layers, then `classes` sigmoid outputs.
pub fn build_head<T: Real>(spec: &ScorerSpec, classes: usize, seed: u64) -> Result<Network<T>> {
    spec.validate()?;
    let mut b = GraphBuilder::<T>::new(&[spec.feature_len()], seed);
    let mut x = b.input();
    for (i, &u) in spec.head_units.iter().enumerate() {
        let d = b.dense(x, u, &format!("head.fc{i}"))?;
        x = b.relu(d)?;
    }
    let out = b.dense(x, classes, "head.out")?;
    let out = b.sigmoid(out)?;
    Ok(b.finish(out)?)
}

fn crop_tensor(img: &UnitRaster, size: usize) -> Result<Tensor<f32>> {
    if (img.width(), img.height()) != (size, size) {
        return Err(Error::DimensionMismatch {
            expected: (size, size),
            found: (img.width(), img.height()),
        });
    }
    Ok(Tensor::new(vec![1, size, size], img.data().to_vec())?)
}

/// Pretext task for the trunk: classify crops by joint class (PIP vs the
/// proximal joint) through a single sigmoid unit. Returns the trunk alone.
pub fn pretrain_trunk(
    crops: &[(UnitRaster, usize)],
    spec: &ScorerSpec,
    cfg: &TrainConfig,
) -> Result<(Network<f32>, TrainHistory)> {
    spec.validate()?;
    if crops.len() < 2 {
        return Err(Error::InvalidArgument(
            "trunk pretraining needs at least 2 crops".into(),
        ));
    }
    let mut b = GraphBuilder::<f32>::new(&[1, spec.crop_size, spec.crop_size], cfg.seed);
    let x = trunk_layers(&mut b, spec)?;
    let out = b.dense(x, 1, "pretext.out")?;
    let out = b.sigmoid(out)?;
    let mut net = b.finish(out)?;
    let samples: Vec<(Tensor<f32>, Tensor<f32>)> = crops
        .iter()
        .map(|(img, class)| {
            Ok((
                crop_tensor(img, spec.crop_size)?,
                Tensor::new(vec![1], vec![(*class > 0) as u8 as f32])?,
            ))
        })
        .collect::<Result<_>>()?;
    let (ti, vi) = crate::unet::holdout_indices(samples.len(), 0.1, cfg.seed);
    let train: Vec<_> = ti.iter().map(|&i| samples[i].clone()).collect();
    let val: Vec<_> = vi.iter().map(|&i| samples[i].clone()).collect();
    let history = fit(&mut net, &BceObjective, &train, &val, cfg, |_, _| 1.0)?;
    let mut trunk = build_trunk::<f32>(spec, cfg.seed)?;
    copy_params(&net, &mut trunk)?;
    trunk.params_mut().freeze_all();
    Ok((trunk, history))
}

/// Copies every parameter of `dst` from the same-named parameter of `src`.
fn copy_params(src: &Network<f32>, dst: &mut Network<f32>) -> Result<()> {
    for p in dst.params_mut().iter_mut() {
        let from = src
            .params()
            .get(&p.name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{}`", p.name)))?;
        p.value = from.value.clone();
    }
    Ok(())
}

/// Mean BCE between a sigmoid output and its target.
struct BceObjective;

impl<T: Real> Objective<T> for BceObjective {
    type Sample = (Tensor<T>, Tensor<T>);

    fn accumulate(
        &self,
        net: &Network<T>,
        s: &Self::Sample,
        grads: &mut Gradients<T>,
        scale: T,
    ) -> jointscore_nn::Result<f64> {
        let trace = net.forward(&s.0)?;
        let (loss, g) = bce_loss(trace.output(), &s.1)?;
        net.backward(&trace, &g.map(|v| v * scale), grads, false)?;
        Ok(loss)
    }

    fn evaluate(&self, net: &Network<T>, s: &Self::Sample) -> jointscore_nn::Result<f64> {
        Ok(bce_loss(&net.predict(&s.0)?, &s.1)?.0)
    }
}

/// Frozen trunk plus trainable ordinal head for one (limb type, task).
#[derive(Clone, Debug)]
pub struct Scorer {
    pub spec: ScorerSpec,
    pub scale: ScoreScale,
    pub trunk: Network<f32>,
    pub head: Network<f32>,
}

pub fn checkpoint_tag(limb: LimbType, task: Task) -> String {
    format!("score-{}-{}", limb.name(), task.name())
}

/// Attaches a fresh head for `scale` to a trunk; the trunk is frozen.
pub fn build_scorer(spec: &ScorerSpec, scale: ScoreScale, trunk: &Network<f32>, seed: u64) -> Result<Scorer> {
    spec.validate()?;
    ScoreScale::new(scale.task, scale.limb, scale.classes)?;
    if trunk.input_shape() != [1, spec.crop_size, spec.crop_size] || trunk.output_shape() != [spec.feature_len()] {
        return Err(Error::DimensionMismatch {
            expected: (spec.crop_size, spec.feature_len()),
            found: (
                trunk.input_shape().last().copied().unwrap_or(0),
                trunk.output_shape().iter().product(),
            ),
        });
    }
    let mut trunk = trunk.clone();
    trunk.params_mut().freeze_all();
    Ok(Scorer {
        spec: spec.clone(),
        scale,
        trunk,
        head: build_head(spec, scale.classes, seed)?,
    })
}

impl Scorer {
    pub fn trainable_count(&self) -> usize {
        self.trunk.params().trainable_count() + self.head.params().trainable_count()
    }

    pub fn total_count(&self) -> usize {
        self.trunk.params().count() + self.head.params().count()
    }

    pub fn features(&self, crop: &UnitRaster) -> Result<Tensor<f32>> {
        Ok(self.trunk.predict(&crop_tensor(crop, self.spec.crop_size)?)?)
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        let mut ck = Checkpoint::new(&checkpoint_tag(self.scale.limb, self.scale.task), seed)
            .with_network("trunk", self.trunk.cast())
            .with_network("head", self.head.cast());
        ck.meta.insert(
            "spec".into(),
            serde_json::to_value(&self.spec).expect("spec serializes"),
        );
        ck.meta.insert(
            "scale".into(),
            serde_json::to_value(self.scale).expect("scale serializes"),
        );
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Scorer> {
        let get = |key: &str| {
            ck.meta
                .get(key)
                .cloned()
                .ok_or_else(|| Error::MissingCheckpoint(format!("{}: no scorer {key}", ck.tag)))
        };
        let spec: ScorerSpec =
            serde_json::from_value(get("spec")?).map_err(|e| Error::MissingCheckpoint(e.to_string()))?;
        let scale: ScoreScale =
            serde_json::from_value(get("scale")?).map_err(|e| Error::MissingCheckpoint(e.to_string()))?;
        spec.validate()?;
        let head: Network<f32> = ck.network("head")?.cast();
        if head.output_shape() != [scale.classes] {
            return Err(Error::DimensionMismatch {
                expected: (scale.classes, 1),
                found: (head.output_shape().iter().product(), 1),
            });
        }
        Ok(Scorer {
            spec,
            scale,
            trunk: ck.network("trunk")?.cast(),
            head,
        })
    }
}

/// Class and ordinal vector for one crop; the class is the decoded vector.
pub fn score_joint(scorer: &Scorer, crop: &UnitRaster) -> Result<(usize, OrdinalVector)> {
    let f = scorer.features(crop)?;
    let out = scorer.head.predict(&f)?;
    let v = OrdinalVector::new(out.data().iter().map(|&p| p as f64).collect());
    Ok((ordinal_decode(&v), v))
}

/// Trains the head on trunk features of the crops (computed once, since the
/// trunk is frozen) against ordinal targets, holding out 10% for validation.
/// Callers under-sample class 0 first.
pub fn train_scorer(scorer: &mut Scorer, samples: &[(UnitRaster, usize)], cfg: &TrainConfig) -> Result<TrainHistory> {
    if samples.is_empty() {
        return Err(Error::Nn(jointscore_nn::NnError::EmptyTrainingSet));
    }
    let c = scorer.scale.classes;
    let pairs: Vec<(Tensor<f32>, Tensor<f32>)> = samples
        .iter()
        .map(|(img, k)| {
            let target = ordinal_encode(*k, c)?;
            Ok((scorer.features(img)?, Tensor::from_f64(&[c], &target.values)?))
        })
        .collect::<Result<_>>()?;
    let (ti, vi) = crate::unet::holdout_indices(pairs.len(), 0.1, cfg.seed);
    let train: Vec<_> = ti.iter().map(|&i| pairs[i].clone()).collect();
    let val: Vec<_> = vi.iter().map(|&i| pairs[i].clone()).collect();
    Ok(fit(&mut scorer.head, &BceObjective, &train, &val, cfg, |_, _| 1.0)?)
}
