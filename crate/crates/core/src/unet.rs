//! Lightweight U-Net with multi-scale blocks for limb segmentation.

use jointscore_nn::{
    bce_loss, fit, Checkpoint, Gradients, GraphBuilder, Network, NodeId, Objective, Padding, Real, Tensor, TrainConfig,
    TrainHistory,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::raster::{LimbType, UnitRaster};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetSpec {
    pub input_size: usize,
    pub stages: usize,
    pub base_channels: usize,
    pub msb_kernels: Vec<usize>,
}

impl Default for UNetSpec {
    fn default() -> Self {
        UNetSpec {
            input_size: 128,
            stages: 3,
            base_channels: 4,
            msb_kernels: vec![1, 3, 5],
        }
    }
}

impl UNetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("unet spec: {m}")));
        if self.stages == 0 || self.base_channels == 0 || self.input_size == 0 {
            return bad("stages, base_channels and input_size must be positive".into());
        }
        if !self.input_size.is_multiple_of(1 << self.stages) {
            return bad(format!(
                "input size {} not divisible by 2^{}",
                self.input_size, self.stages
            ));
        }
        if self.msb_kernels.is_empty() || self.msb_kernels.iter().any(|k| k % 2 == 0) {
            return bad("multi-scale kernels must be a non-empty set of odd sizes".into());
        }
        Ok(())
    }

    fn width(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

/// Parallel convolutions (one per kernel size, each followed by ReLU),
/// concatenated and fused by a 1x1 convolution with ReLU.
pub fn msb_block<T: Real>(
    b: &mut GraphBuilder<T>,
    x: NodeId,
    width: usize,
    kernels: &[usize],
    name: &str,
) -> Result<NodeId> {
    let mut branches = Vec::with_capacity(kernels.len());
    for &k in kernels {
        branches.push(b.conv_relu(x, width, k, &format!("{name}.k{k}"))?);
    }
    let cat = b.concat(&branches)?;
    Ok(b.conv_relu(cat, width, 1, &format!("{name}.fuse"))?)
}

/// Encoder of multi-scale blocks with max-pooling, a multi-scale bottleneck,
/// and a decoder of (upsample, concatenate skip, 3x3 conv) stages; a 1x1
/// convolution and sigmoid produce the mask probabilities.
pub fn build_unet<T: Real>(spec: &UNetSpec, seed: u64) -> Result<Network<T>> {
    spec.validate()?;
    let mut b = GraphBuilder::<T>::new(&[1, spec.input_size, spec.input_size], seed);
    let mut x = b.input();
    let mut skips = Vec::with_capacity(spec.stages);
    for s in 0..spec.stages {
        let e = msb_block(&mut b, x, spec.width(s), &spec.msb_kernels, &format!("enc{s}"))?;
        skips.push(e);
        x = b.max_pool(e)?;
    }
    x = msb_block(&mut b, x, spec.width(spec.stages), &spec.msb_kernels, "mid")?;
    for s in (0..spec.stages).rev() {
        let up = b.upsample(x)?;
        let cat = b.concat(&[up, skips[s]])?;
        x = b.conv_relu(cat, spec.width(s), 3, &format!("dec{s}"))?;
    }
    let logits = b.conv(x, 1, 1, Padding::Same, "head")?;
    let out = b.sigmoid(logits)?;
    Ok(b.finish(out)?)
}

/// Closed-form parameter count of [`build_unet`].
pub fn unet_param_count(spec: &UNetSpec) -> usize {
    let msb = |cin: usize, w: usize| -> usize {
        let branches: usize = spec.msb_kernels.iter().map(|k| cin * w * k * k + w).sum();
        branches + w * spec.msb_kernels.len() * w + w
    };
    let mut total = 0;
    let mut cin = 1;
    for s in 0..spec.stages {
        total += msb(cin, spec.width(s));
        cin = spec.width(s);
    }
    total += msb(cin, spec.width(spec.stages));
    for s in (0..spec.stages).rev() {
        let cin = spec.width(s + 1) + spec.width(s);
        total += cin * spec.width(s) * 9 + spec.width(s);
    }
    total + spec.width(0) + 1
}

#[derive(Clone, Debug)]
pub struct MaskSample {
    pub image: UnitRaster,
    pub mask: BinaryMask,
}

impl MaskSample {
    /// Resamples an image/mask pair of any size to the network input size.
    pub fn from_full(image: &UnitRaster, mask: &BinaryMask, size: usize) -> Result<MaskSample> {
        if (image.width(), image.height()) != (mask.width(), mask.height()) {
            return Err(Error::DimensionMismatch {
                expected: (image.width(), image.height()),
                found: (mask.width(), mask.height()),
            });
        }
        Ok(MaskSample {
            image: image.resample_area(size, size),
            mask: mask.resize_nearest(size, size),
        })
    }
}

/// A trained segmentation network with its spec.
#[derive(Clone, Debug)]
pub struct UNet {
    pub spec: UNetSpec,
    pub network: Network<f32>,
}

pub fn checkpoint_tag(limb: LimbType) -> String {
    format!("unet-{}", limb.name())
}

impl UNet {
    pub fn to_checkpoint(&self, limb: LimbType, seed: u64) -> Checkpoint {
        let mut ck = Checkpoint::new(&checkpoint_tag(limb), seed).with_network("unet", self.network.cast());
        ck.meta.insert(
            "spec".into(),
            serde_json::to_value(&self.spec).expect("spec serializes"),
        );
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<UNet> {
        let spec: UNetSpec = ck
            .meta
            .get("spec")
            .cloned()
            .ok_or_else(|| Error::MissingCheckpoint(format!("{}: no unet spec", ck.tag)))
            .and_then(|v| serde_json::from_value(v).map_err(|e| Error::MissingCheckpoint(e.to_string())))?;
        spec.validate()?;
        let network = ck.network("unet")?.cast();
        Ok(UNet { spec, network })
    }

    /// Sigmoid outputs for an image already at the input size.
    pub fn probabilities(&self, img: &UnitRaster) -> Result<Vec<f32>> {
        let n = self.spec.input_size;
        if (img.width(), img.height()) != (n, n) {
            return Err(Error::DimensionMismatch {
                expected: (n, n),
                found: (img.width(), img.height()),
            });
        }
        let x = Tensor::new(vec![1, n, n], img.data().to_vec())?;
        Ok(self.network.predict(&x)?.into_data())
    }
}

/// Foreground where the network output exceeds `thresh`. The image is area
/// resampled to the input size and the mask returned at the image's size by
/// nearest-neighbour scaling.
pub fn predict_mask(net: &UNet, img: &UnitRaster, thresh: f32) -> Result<BinaryMask> {
    let n = net.spec.input_size;
    let small = if (img.width(), img.height()) == (n, n) {
        img.clone()
    } else {
        img.resample_area(n, n)
    };
    let probs = net.probabilities(&small)?;
    let m = BinaryMask::new(n, n, probs.iter().map(|&p| p > thresh).collect())?;
    Ok(if (img.width(), img.height()) == (n, n) {
        m
    } else {
        m.resize_nearest(img.width(), img.height())
    })
}

struct PixelBce;

impl<T: Real> Objective<T> for PixelBce {
    type Sample = (Tensor<T>, Tensor<T>);

    fn accumulate(
        &self,
        net: &Network<T>,
        s: &Self::Sample,
        grads: &mut Gradients<T>,
        scale: T,
    ) -> jointscore_nn::Result<f64> {
        let trace = net.forward(&s.0)?;
        let (loss, mut g) = bce_loss(trace.output(), &s.1)?;
        g.data_mut().iter_mut().for_each(|v| *v *= scale);
        net.backward(&trace, &g, grads, false)?;
        Ok(loss)
    }

    fn evaluate(&self, net: &Network<T>, s: &Self::Sample) -> jointscore_nn::Result<f64> {
        Ok(bce_loss(&net.predict(&s.0)?, &s.1)?.0)
    }
}

/// Seeded hold-out: `floor(n * fraction)` indices (at least one when `n >= 2`)
/// go to validation.
pub fn holdout_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    let k = if n >= 2 {
        ((n as f64 * fraction) as usize).max(1)
    } else {
        0
    };
    let val = idx.split_off(n - k);
    (idx, val)
}

/// Trains a fresh network on the samples, holding out 10% for validation and
/// early stopping.
pub fn train_unet(samples: &[MaskSample], spec: &UNetSpec, cfg: &TrainConfig) -> Result<(UNet, TrainHistory)> {
    spec.validate()?;
    if samples.len() < 2 {
        return Err(Error::InvalidArgument("u-net training needs at least 2 samples".into()));
    }
    let n = spec.input_size;
    let to_pair = |s: &MaskSample| -> Result<(Tensor<f32>, Tensor<f32>)> {
        if (s.image.width(), s.image.height()) != (n, n) || (s.mask.width(), s.mask.height()) != (n, n) {
            return Err(Error::DimensionMismatch {
                expected: (n, n),
                found: (s.image.width(), s.image.height()),
            });
        }
        Ok((
            Tensor::new(vec![1, n, n], s.image.data().to_vec())?,
            Tensor::new(
                vec![1, n, n],
                s.mask.data().iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
            )?,
        ))
    };
    let (ti, vi) = holdout_indices(samples.len(), 0.1, cfg.seed);
    let train: Vec<_> = ti.iter().map(|&i| to_pair(&samples[i])).collect::<Result<_>>()?;
    let val: Vec<_> = vi.iter().map(|&i| to_pair(&samples[i])).collect::<Result<_>>()?;
    let mut network = build_unet::<f32>(spec, cfg.seed)?;
    let history = fit(&mut network, &PixelBce, &train, &val, cfg, |_, _| 1.0)?;
    Ok((
        UNet {
            spec: spec.clone(),
            network,
        },
        history,
    ))
}
