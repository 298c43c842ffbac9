//! Confusion matrices, balanced accuracy with optional +-1 tolerance, and
//! total-score aggregation, and comparison of score tables.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::anatomy::JointId;
use crate::dataset::ScoreRow;
use crate::error::{Error, Result};
use crate::ordinal::{ScaleSet, ScoreScale, Task};
use crate::raster::LimbType;

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::InvalidArgument("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix {
            classes: c,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.classes..(truth + 1) * self.classes]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// CSV grid with a header row of predicted classes and one row per true class.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("truth\\pred");
        for j in 0..self.classes {
            s.push_str(&format!(",{j}"));
        }
        s.push('\n');
        for i in 0..self.classes {
            s.push_str(&i.to_string());
            for &v in self.row(i) {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

fn check_pairs(truths: &[usize], preds: &[usize], classes: usize) -> Result<()> {
    if truths.len() != preds.len() {
        return Err(Error::DimensionMismatch {
            expected: (truths.len(), 1),
            found: (preds.len(), 1),
        });
    }
    if let Some(v) = truths.iter().chain(preds).find(|&&v| v >= classes) {
        return Err(Error::InvalidArgument(format!(
            "class {v} out of range for {classes} classes"
        )));
    }
    Ok(())
}

pub fn confusion_matrix(truths: &[usize], preds: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    check_pairs(truths, preds, classes)?;
    let mut cm = ConfusionMatrix::new(classes);
    for (&t, &p) in truths.iter().zip(preds) {
        cm.counts[t * classes + p] += 1;
    }
    Ok(cm)
}

/// Mean per-class recall counting a prediction correct when within `tol` of
/// the truth. Classes with no samples are left out of the mean.
pub fn tolerant_balanced_accuracy_cm(cm: &ConfusionMatrix, tol: usize) -> Result<f64> {
    let mut sum = 0.0;
    let mut nonempty = 0usize;
    for i in 0..cm.classes {
        let row = cm.row(i);
        let n: u64 = row.iter().sum();
        if n == 0 {
            continue;
        }
        let ok: u64 = row
            .iter()
            .enumerate()
            .filter(|(j, _)| j.abs_diff(i) <= tol)
            .map(|(_, &v)| v)
            .sum();
        sum += ok as f64 / n as f64;
        nonempty += 1;
    }
    if nonempty == 0 {
        return Err(Error::Degenerate(
            "balanced accuracy of an empty confusion matrix".into(),
        ));
    }
    Ok(sum / nonempty as f64)
}

/// Mean over non-empty classes of correct / total for that class.
pub fn balanced_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    tolerant_balanced_accuracy_cm(cm, 0)
}

pub fn tolerant_balanced_accuracy(truths: &[usize], preds: &[usize], classes: usize, tol: usize) -> Result<f64> {
    tolerant_balanced_accuracy_cm(&confusion_matrix(truths, preds, classes)?, tol)
}

/// Scores of one joint; `joint` is `None` when identification failed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointScore {
    pub joint: Option<JointId>,
    pub narrowing: usize,
    pub erosion: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreSheet {
    pub joints: Vec<JointScore>,
    pub total_narrowing: usize,
    pub total_erosion: usize,
    pub overall_total: usize,
}

impl ScoreSheet {
    pub fn check_invariants(&self) -> Result<()> {
        let n: usize = self.joints.iter().map(|j| j.narrowing).sum();
        let e: usize = self.joints.iter().map(|j| j.erosion).sum();
        if n != self.total_narrowing || e != self.total_erosion || self.overall_total != n + e {
            return Err(Error::Degenerate(format!(
                "score sheet totals {}/{}/{} disagree with joints {n}/{e}",
                self.total_narrowing, self.total_erosion, self.overall_total
            )));
        }
        Ok(())
    }
}

/// Sums per-joint scores; the overall total is narrowing plus erosion.
pub fn aggregate_totals(joints: &[JointScore], narrowing: &ScoreScale, erosion: &ScoreScale) -> Result<ScoreSheet> {
    for j in joints {
        narrowing.check(j.narrowing)?;
        erosion.check(j.erosion)?;
    }
    let total_narrowing = joints.iter().map(|j| j.narrowing).sum();
    let total_erosion = joints.iter().map(|j| j.erosion).sum();
    Ok(ScoreSheet {
        joints: joints.to_vec(),
        total_narrowing,
        total_erosion,
        overall_total: total_narrowing + total_erosion,
    })
}

/// Agreement of one (limb type, task) between predicted and true scores.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaskAgreement {
    pub limb: LimbType,
    pub task: Task,
    pub joints: usize,
    pub exact: f64,
    pub within_one: f64,
    pub confusion: ConfusionMatrix,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TableComparison {
    pub tasks: Vec<TaskAgreement>,
    /// Images present in both tables.
    pub images: usize,
    /// Predicted images without a truth row.
    pub unmatched: Vec<String>,
    /// Mean absolute difference of per-image overall totals, over joints
    /// scored in both tables.
    pub mean_total_error: f64,
}

/// Compares predicted score rows with truth rows by image id, joint by joint.
pub fn compare_score_tables(truth: &[ScoreRow], pred: &[ScoreRow], scales: &ScaleSet) -> Result<TableComparison> {
    let truth: BTreeMap<String, &ScoreRow> = truth.iter().map(|r| (r.image_id(), r)).collect();
    let mut pairs: BTreeMap<(LimbType, Task), (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    let mut out = TableComparison::default();
    let mut total_err = 0.0;
    for p in pred {
        let Some(t) = truth.get(&p.image_id()) else {
            out.unmatched.push(p.image_id());
            continue;
        };
        out.images += 1;
        let lt = p.limb.limb_type();
        let (mut pt, mut tt) = (0i64, 0i64);
        for (joint, ps) in &p.scores {
            let Some(ts) = t.scores.get(joint) else { continue };
            for task in Task::ALL {
                let (pv, tv) = match task {
                    Task::Narrowing => (ps.narrowing, ts.narrowing),
                    Task::Erosion => (ps.erosion, ts.erosion),
                };
                if let (Some(pv), Some(tv)) = (pv, tv) {
                    let e = pairs.entry((lt, task)).or_default();
                    e.0.push(tv);
                    e.1.push(pv);
                    pt += pv as i64;
                    tt += tv as i64;
                }
            }
        }
        total_err += (pt - tt).abs() as f64;
    }
    if out.images > 0 {
        out.mean_total_error = total_err / out.images as f64;
    }
    for ((limb, task), (truths, preds)) in pairs {
        let classes = scales.get(limb, task).classes;
        let confusion = confusion_matrix(&truths, &preds, classes)?;
        out.tasks.push(TaskAgreement {
            limb,
            task,
            joints: truths.len(),
            exact: tolerant_balanced_accuracy_cm(&confusion, 0)?,
            within_one: tolerant_balanced_accuracy_cm(&confusion, 1)?,
            confusion,
        });
    }
    Ok(out)
}
