//! Cumulative ordinal encoding of joint scores and class-0 under-sampling.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::LimbType;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    Narrowing,
    Erosion,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Narrowing, Task::Erosion];

    pub fn name(self) -> &'static str {
        match self {
            Task::Narrowing => "narrowing",
            Task::Erosion => "erosion",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Number of score classes for one (task, limb type) pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScoreScale {
    pub task: Task,
    pub limb: LimbType,
    pub classes: usize,
}

impl ScoreScale {
    /// Narrowing 0-4 everywhere; erosion 0-5 for hands, 0-10 for feet.
    pub fn default_for(task: Task, limb: LimbType) -> ScoreScale {
        let classes = match (task, limb) {
            (Task::Narrowing, _) => 5,
            (Task::Erosion, LimbType::Hand) => 6,
            (Task::Erosion, LimbType::Foot) => 11,
        };
        ScoreScale { task, limb, classes }
    }

    pub fn new(task: Task, limb: LimbType, classes: usize) -> Result<ScoreScale> {
        if classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "score scale needs at least 2 classes, got {classes}"
            )));
        }
        Ok(ScoreScale { task, limb, classes })
    }

    pub fn max_score(&self) -> usize {
        self.classes - 1
    }

    pub fn check(&self, score: usize) -> Result<()> {
        if score >= self.classes {
            return Err(Error::InvalidArgument(format!(
                "{} score {score} outside 0..={} for {}",
                self.task,
                self.max_score(),
                self.limb.name()
            )));
        }
        Ok(())
    }
}

/// Score scales for every (limb type, task) pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleSet {
    pub hand_narrowing: ScoreScale,
    pub hand_erosion: ScoreScale,
    pub foot_narrowing: ScoreScale,
    pub foot_erosion: ScoreScale,
}

impl Default for ScaleSet {
    fn default() -> Self {
        ScaleSet {
            hand_narrowing: ScoreScale::default_for(Task::Narrowing, LimbType::Hand),
            hand_erosion: ScoreScale::default_for(Task::Erosion, LimbType::Hand),
            foot_narrowing: ScoreScale::default_for(Task::Narrowing, LimbType::Foot),
            foot_erosion: ScoreScale::default_for(Task::Erosion, LimbType::Foot),
        }
    }
}

impl ScaleSet {
    pub fn get(&self, limb: LimbType, task: Task) -> ScoreScale {
        match (limb, task) {
            (LimbType::Hand, Task::Narrowing) => self.hand_narrowing,
            (LimbType::Hand, Task::Erosion) => self.hand_erosion,
            (LimbType::Foot, Task::Narrowing) => self.foot_narrowing,
            (LimbType::Foot, Task::Erosion) => self.foot_erosion,
        }
    }

    pub fn set(&mut self, scale: ScoreScale) {
        match (scale.limb, scale.task) {
            (LimbType::Hand, Task::Narrowing) => self.hand_narrowing = scale,
            (LimbType::Hand, Task::Erosion) => self.hand_erosion = scale,
            (LimbType::Foot, Task::Narrowing) => self.foot_narrowing = scale,
            (LimbType::Foot, Task::Erosion) => self.foot_erosion = scale,
        }
    }
}

/// Per-class probabilities of an ordinal prediction; entry `i` estimates
/// `score >= i` (entry 0 is always 1 in exact encodings).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrdinalVector {
    pub values: Vec<f64>,
}

impl OrdinalVector {
    pub fn new(values: Vec<f64>) -> Self {
        OrdinalVector { values }
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Class `k` of `c` becomes `k + 1` leading ones followed by zeros.
pub fn ordinal_encode(k: usize, classes: usize) -> Result<OrdinalVector> {
    if k >= classes {
        return Err(Error::InvalidArgument(format!(
            "class {k} out of range for {classes} classes"
        )));
    }
    Ok(OrdinalVector::new(
        (0..classes).map(|i| if i <= k { 1.0 } else { 0.0 }).collect(),
    ))
}

/// Length of the leading run of entries above 0.5, minus one, floored at 0.
pub fn ordinal_decode(v: &OrdinalVector) -> usize {
    v.values.iter().take_while(|&&p| p > 0.5).count().saturating_sub(1)
}

/// Reduces class 0 to the size of the second-largest class by seeded sampling
/// without replacement. Other classes are kept in input order; the retained
/// class-0 samples keep their relative order too.
pub fn undersample<S: Clone>(samples: &[(S, usize)], seed: u64) -> Result<Vec<(S, usize)>> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for (_, c) in samples {
        *counts.entry(*c).or_default() += 1;
    }
    if counts.len() < 2 {
        return Err(Error::InvalidArgument(
            "under-sampling needs at least two classes".into(),
        ));
    }
    let zeros = counts.get(&0).copied().unwrap_or(0);
    let second = counts
        .iter()
        .filter(|(&c, _)| c != 0)
        .map(|(_, &n)| n)
        .max()
        .unwrap_or(0);
    if zeros <= second {
        return Ok(samples.to_vec());
    }
    let zero_idx: Vec<usize> = samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.1 == 0)
        .map(|(i, _)| i)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep: Vec<usize> = zero_idx.choose_multiple(&mut rng, second).copied().collect();
    keep.sort_unstable();
    let mut keep = keep.into_iter().peekable();
    let mut out = Vec::with_capacity(samples.len() - zeros + second);
    for (i, s) in samples.iter().enumerate() {
        if s.1 != 0 {
            out.push(s.clone());
        } else if keep.peek() == Some(&i) {
            keep.next();
            out.push(s.clone());
        }
    }
    Ok(out)
}

/// Mean binary cross-entropy between a prediction and an exact encoding.
pub fn ordinal_bce(pred: &OrdinalVector, target: &OrdinalVector) -> f64 {
    let eps = 1e-7;
    pred.values
        .iter()
        .zip(&target.values)
        .map(|(&p, &y)| {
            let p = p.clamp(eps, 1.0 - eps);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / pred.len() as f64
}
