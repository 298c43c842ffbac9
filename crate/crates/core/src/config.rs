//! Line-oriented `key = value` run configuration. `#` starts a comment;
//! blank lines are ignored. Unknown keys and unparsable values are
//! validation errors.
//!
//! | key | meaning |
//! |-----|---------|
//! | `seed` | seed for every stage |
//! | `synth.patients`, `synth.limbs` (comma-separated codes), `synth.noise_density`, `synth.marker_probability`, `synth.gap_base_px`, `synth.gap_step_px`, `synth.notch_radius_px`, `synth.zero_score_probability` | synthetic data |
//! | `split.test_fraction`, `split.val_fraction`, `split.unit` (`patient` or `image`) | dataset split |
//! | `{unet,detector,pretext,scorer}.learning_rate`, `.batch_size`, `.max_epochs`, `.patience` (`none` or a count) | training |
//! | `unet.base_channels` | segmentation network width |

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::dataset::{SplitConfig, SplitUnit};
use crate::error::{Error, Result};
use crate::raster::LimbKind;
use crate::synth::SynthConfig;
use crate::training::TrainPlan;

pub const DEFAULT_SEED: u64 = 42;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub split: SplitConfig,
    pub plan: TrainPlan,
    /// The key/value pairs as read, for the run manifest.
    pub entries: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::with_seed(DEFAULT_SEED)
    }
}

/// Parses `key = value` lines; later duplicates are an error.
pub fn parse_entries(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("config line {}: expected key = value", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::InvalidArgument(format!("config line {}: empty key", i + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::InvalidArgument(format!(
                "config line {}: duplicate key `{k}`",
                i + 1
            )));
        }
    }
    Ok(out)
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidArgument(format!("config key `{key}`: cannot parse `{v}`")))
}

impl RunConfig {
    pub fn with_seed(seed: u64) -> Self {
        RunConfig {
            seed,
            synth: SynthConfig {
                seed,
                ..SynthConfig::default()
            },
            split: SplitConfig {
                seed,
                ..SplitConfig::default()
            },
            plan: TrainPlan::with_seed(seed),
            entries: BTreeMap::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Defaults overridden by the entries of `text`. A `seed` entry applies
    /// before the other keys.
    pub fn from_text(text: &str) -> Result<Self> {
        let entries = parse_entries(text)?;
        let seed = match entries.get("seed") {
            Some(v) => parse("seed", v)?,
            None => DEFAULT_SEED,
        };
        let mut cfg = RunConfig::with_seed(seed);
        for (k, v) in &entries {
            cfg.apply(k, v)?;
        }
        cfg.synth.validate()?;
        if !(0.0 < cfg.split.test_fraction && cfg.split.test_fraction < 1.0)
            || !(0.0 < cfg.split.val_fraction && cfg.split.val_fraction < 1.0)
        {
            return Err(Error::InvalidArgument("split fractions must lie in (0, 1)".into()));
        }
        for c in [&cfg.plan.unet, &cfg.plan.detector, &cfg.plan.pretext, &cfg.plan.scorer] {
            c.validate().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        }
        cfg.plan.unet_spec.validate()?;
        cfg.entries = entries;
        Ok(cfg)
    }

    /// Replaces the seed of every stage.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synth.seed = seed;
        self.split.seed = seed;
        self.plan.set_seed(seed);
    }

    fn apply(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.synth;
        match key {
            "seed" => {}
            "synth.patients" => s.patients = parse(key, v)?,
            "synth.limbs" => {
                s.limbs = v
                    .split(',')
                    .map(|c| c.trim().parse::<LimbKind>())
                    .collect::<Result<_>>()?
            }
            "synth.noise_density" => s.noise_density = parse(key, v)?,
            "synth.marker_probability" => s.marker_probability = parse(key, v)?,
            "synth.gap_base_px" => s.gap_base_px = parse(key, v)?,
            "synth.gap_step_px" => s.gap_step_px = parse(key, v)?,
            "synth.notch_radius_px" => s.notch_radius_px = parse(key, v)?,
            "synth.zero_score_probability" => s.zero_score_probability = parse(key, v)?,
            "split.test_fraction" => self.split.test_fraction = parse(key, v)?,
            "split.val_fraction" => self.split.val_fraction = parse(key, v)?,
            "split.unit" => {
                self.split.unit = match v {
                    "patient" => SplitUnit::ByPatient,
                    "image" => SplitUnit::ByImage,
                    _ => {
                        return Err(Error::InvalidArgument(format!(
                            "config key `{key}`: expected patient or image"
                        )))
                    }
                }
            }
            "unet.base_channels" => self.plan.unet_spec.base_channels = parse(key, v)?,
            _ => {
                let (stage, field) = key
                    .split_once('.')
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown config key `{key}`")))?;
                let p = &mut self.plan;
                let c = match stage {
                    "unet" => &mut p.unet,
                    "detector" => &mut p.detector,
                    "pretext" => &mut p.pretext,
                    "scorer" => &mut p.scorer,
                    _ => return Err(Error::InvalidArgument(format!("unknown config key `{key}`"))),
                };
                match field {
                    "learning_rate" => c.learning_rate = parse(key, v)?,
                    "batch_size" => c.batch_size = parse(key, v)?,
                    "max_epochs" => c.max_epochs = parse(key, v)?,
                    "patience" => c.early_stop_patience = if v == "none" { None } else { Some(parse(key, v)?) },
                    _ => return Err(Error::InvalidArgument(format!("unknown config key `{key}`"))),
                }
            }
        }
        Ok(())
    }
}
