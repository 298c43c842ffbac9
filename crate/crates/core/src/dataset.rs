//! Score tables, dataset ingestion, deterministic splits, and writing
//! synthetic datasets to disk.
//!
//! Score CSV schema: `patient_id,limb`, then `{joint}_narrowing,{joint}_erosion`
//! for every joint name in [`all_joint_names`] order (`mcp1..5`, `pip1..5`,
//! `mtp1..5`). Cells for joints a limb does not have stay empty; an empty cell
//! for a joint the limb does have means the score is unknown. Images are
//! `{patient_id}-{LH|RH|LF|RF}.png`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anatomy::{self, all_joint_names, JointId};
use crate::error::{Error, Result};
use crate::geometry::PixelBox;
use crate::mask::BinaryMask;
use crate::ordinal::{ScaleSet, Task};
use crate::raster::load_gray;
use crate::raster::LimbKind;
use crate::synth::{synthetic_iter, SynthConfig, RENDER_VERSION};
use crate::training::{AnnotatedImage, AnnotatedJoint};

/// Narrowing and erosion of one joint; `None` when unknown.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointScores {
    pub narrowing: Option<usize>,
    pub erosion: Option<usize>,
}

/// One score-table row: a patient's limb and its per-joint scores.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub patient_id: String,
    pub limb: LimbKind,
    pub scores: BTreeMap<JointId, JointScores>,
}

impl ScoreRow {
    pub fn image_id(&self) -> String {
        image_id(&self.patient_id, self.limb)
    }
}

pub fn image_id(patient_id: &str, limb: LimbKind) -> String {
    format!("{patient_id}-{}", limb.code())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetRecord {
    pub row: ScoreRow,
    pub image: PathBuf,
}

/// Header of the score CSV.
pub fn score_header() -> Vec<String> {
    let mut h = vec!["patient_id".to_string(), "limb".to_string()];
    for j in all_joint_names() {
        for task in Task::ALL {
            h.push(format!("{j}_{}", task.name()));
        }
    }
    h
}

fn cell(v: Option<usize>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes rows in the score CSV schema.
pub fn write_scores<W: std::io::Write>(rows: &[ScoreRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(score_header())?;
    for r in rows {
        let mut rec = vec![r.patient_id.clone(), r.limb.code().to_string()];
        for name in all_joint_names() {
            let s = JointId::parse(&name)
                .ok()
                .and_then(|j| r.scores.get(&j))
                .copied()
                .unwrap_or_default();
            rec.push(cell(s.narrowing));
            rec.push(cell(s.erosion));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses and validates a score CSV. Errors name the 1-based data row and the
/// column of the first bad cell.
pub fn read_scores<R: std::io::Read>(input: R, scales: &ScaleSet) -> Result<Vec<ScoreRow>> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != score_header() {
        return Err(Error::Dataset(format!(
            "score CSV header does not match the schema (expected {} columns starting `patient_id,limb,mcp1_narrowing`)",
            score_header().len()
        )));
    }
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, rec) in rd.records().enumerate() {
        let line = i + 1;
        let rec = rec?;
        let bad = |col: &str, msg: String| Error::Dataset(format!("row {line}, column {col}: {msg}"));
        let patient_id = rec[0].to_string();
        if patient_id.is_empty() {
            return Err(bad("patient_id", "empty".into()));
        }
        let limb: LimbKind = rec[1].parse().map_err(|e: Error| bad("limb", e.to_string()))?;
        if !seen.insert((patient_id.clone(), limb)) {
            return Err(bad("limb", format!("duplicate entry for {patient_id} {limb}")));
        }
        let lt = limb.limb_type();
        let present: BTreeSet<JointId> = anatomy::joints(lt).into_iter().collect();
        let mut scores = BTreeMap::new();
        for (c, col) in header.iter().enumerate().skip(2) {
            let raw = &rec[c];
            let (name, task) = col.rsplit_once('_').expect("schema columns have a task suffix");
            let joint = JointId::parse(name)?;
            if raw.is_empty() {
                continue;
            }
            if !present.contains(&joint) {
                return Err(bad(col, format!("a {} has no {joint} joint", lt.name())));
            }
            let v: usize = raw.parse().map_err(|_| bad(col, format!("`{raw}` is not a score")))?;
            let task = if task == "narrowing" {
                Task::Narrowing
            } else {
                Task::Erosion
            };
            scales.get(lt, task).check(v).map_err(|e| bad(col, e.to_string()))?;
            let entry: &mut JointScores = scores.entry(joint).or_default();
            match task {
                Task::Narrowing => entry.narrowing = Some(v),
                Task::Erosion => entry.erosion = Some(v),
            }
        }
        rows.push(ScoreRow {
            patient_id,
            limb,
            scores,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, Default)]
pub struct Ingested {
    pub records: Vec<DatasetRecord>,
    /// Score rows skipped because their image is missing.
    pub warnings: Vec<String>,
}

/// Joins the score CSV with `{image_dir}/{patient_id}-{limb}.png`. Rows
/// without an image are skipped with a warning.
pub fn ingest_dataset(image_dir: &Path, scores_csv: &Path, scales: &ScaleSet) -> Result<Ingested> {
    let rows = read_scores(fs::File::open(scores_csv)?, scales)?;
    let mut out = Ingested::default();
    for row in rows {
        let image = image_dir.join(format!("{}.png", row.image_id()));
        if image.is_file() {
            out.records.push(DatasetRecord { row, image });
        } else {
            let msg = format!("no image for {} (expected {})", row.image_id(), image.display());
            log::warn!("{msg}");
            out.warnings.push(msg);
        }
    }
    Ok(out)
}

/// Truth boxes of a `boxes.csv` file keyed by image id.
pub fn read_boxes<R: std::io::Read>(input: R) -> Result<BTreeMap<String, Vec<BoxRow>>> {
    let mut out: BTreeMap<String, Vec<BoxRow>> = BTreeMap::new();
    for (i, row) in csv::Reader::from_reader(input).deserialize::<BoxRow>().enumerate() {
        let row = row.map_err(|e| Error::Dataset(format!("boxes row {}: {e}", i + 1)))?;
        JointId::parse(&row.joint).map_err(|e| Error::Dataset(format!("boxes row {}: {e}", i + 1)))?;
        if !(row.w > 0.0 && row.h > 0.0) {
            return Err(Error::Dataset(format!("boxes row {}: non-positive box size", i + 1)));
        }
        out.entry(row.image_id.clone()).or_default().push(row);
    }
    Ok(out)
}

/// A dataset image with its truth boxes and optional silhouette file, not yet
/// loaded.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedRecord {
    pub record: DatasetRecord,
    pub boxes: Vec<BoxRow>,
    pub mask: Option<PathBuf>,
}

impl AnnotatedRecord {
    pub fn load(&self) -> Result<AnnotatedImage> {
        let row = &self.record.row;
        let image = load_gray(&self.record.image)?;
        let mask = match &self.mask {
            Some(path) => {
                let m = BinaryMask::from_gray(&load_gray(path)?);
                if (m.width(), m.height()) != (image.width(), image.height()) {
                    return Err(Error::Dataset(format!(
                        "mask {} does not match its image size",
                        path.display()
                    )));
                }
                Some(m)
            }
            None => None,
        };
        let joints = self
            .boxes
            .iter()
            .map(|b| {
                let id = JointId::parse(&b.joint)?;
                let s = row.scores.get(&id).copied().unwrap_or_default();
                Ok(AnnotatedJoint {
                    id,
                    bbox: PixelBox {
                        cx: b.cx,
                        cy: b.cy,
                        w: b.w,
                        h: b.h,
                    },
                    narrowing: s.narrowing,
                    erosion: s.erosion,
                })
            })
            .collect::<Result<_>>()?;
        Ok(AnnotatedImage {
            patient_id: row.patient_id.clone(),
            limb: row.limb,
            image,
            mask,
            joints,
        })
    }
}

/// Indexes a dataset directory in the layout of [`write_synthetic_dataset`]:
/// scores from `scores.csv`, boxes from `boxes.csv`, silhouettes from
/// `masks/` when present. Images without boxes are skipped with a warning.
pub fn index_annotated(dir: &Path, scales: &ScaleSet) -> Result<(Vec<AnnotatedRecord>, Vec<String>)> {
    let ingested = ingest_dataset(&dir.join("images"), &dir.join("scores.csv"), scales)?;
    let boxes_path = dir.join("boxes.csv");
    let file = fs::File::open(&boxes_path).map_err(|e| Error::Dataset(format!("{}: {e}", boxes_path.display())))?;
    let mut boxes = read_boxes(file)?;
    let mut warnings = ingested.warnings;
    let mut out = Vec::new();
    for record in ingested.records {
        let id = record.row.image_id();
        let Some(rows) = boxes.remove(&id) else {
            let msg = format!("no boxes for {id}");
            log::warn!("{msg}");
            warnings.push(msg);
            continue;
        };
        let mask = Some(dir.join("masks").join(format!("{id}.png"))).filter(|p| p.is_file());
        out.push(AnnotatedRecord {
            record,
            boxes: rows,
            mask,
        });
    }
    Ok((out, warnings))
}

/// [`index_annotated`] followed by loading every image.
pub fn load_annotated(dir: &Path, scales: &ScaleSet) -> Result<(Vec<AnnotatedImage>, Vec<String>)> {
    let (records, warnings) = index_annotated(dir, scales)?;
    let images = records.iter().map(AnnotatedRecord::load).collect::<Result<_>>()?;
    Ok((images, warnings))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitUnit {
    /// All limbs of a patient stay in one partition.
    ByPatient,
    ByImage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub test_fraction: f64,
    /// Fraction of the non-test units used for validation.
    pub val_fraction: f64,
    pub seed: u64,
    pub unit: SplitUnit,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_fraction: 0.1,
            val_fraction: 0.1,
            seed: 42,
            unit: SplitUnit::ByPatient,
        }
    }
}

pub const MIN_SPLIT_UNITS: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded split over units (sorted, then shuffled): the last
/// `floor(n * test_fraction)` go to test, then the last
/// `floor(rest * val_fraction)` of the remainder to validation. Items keep
/// their input order within a partition.
pub fn split_by<T: Clone>(items: &[T], unit_key: impl Fn(&T) -> String, cfg: &SplitConfig) -> Result<Split<T>> {
    for f in [cfg.test_fraction, cfg.val_fraction] {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::InvalidArgument(format!("split fraction {f} outside (0, 1)")));
        }
    }
    let units: BTreeSet<String> = items.iter().map(&unit_key).collect();
    if units.len() < MIN_SPLIT_UNITS {
        return Err(Error::Dataset(format!(
            "{} split units; at least {MIN_SPLIT_UNITS} needed",
            units.len()
        )));
    }
    let mut units: Vec<String> = units.into_iter().collect();
    units.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let n_test = (units.len() as f64 * cfg.test_fraction).floor() as usize;
    let rest = units.len() - n_test;
    let n_val = (rest as f64 * cfg.val_fraction).floor() as usize;
    let part: BTreeMap<&str, u8> = units
        .iter()
        .enumerate()
        .map(|(i, u)| {
            (
                u.as_str(),
                if i >= rest {
                    2
                } else if i >= rest - n_val {
                    1
                } else {
                    0
                },
            )
        })
        .collect();
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for it in items {
        match part[unit_key(it).as_str()] {
            0 => split.train.push(it.clone()),
            1 => split.val.push(it.clone()),
            _ => split.test.push(it.clone()),
        }
    }
    Ok(split)
}

pub fn split_dataset(records: &[DatasetRecord], cfg: &SplitConfig) -> Result<Split<DatasetRecord>> {
    match cfg.unit {
        SplitUnit::ByPatient => split_by(records, |r| r.row.patient_id.clone(), cfg),
        SplitUnit::ByImage => split_by(records, |r| r.row.image_id(), cfg),
    }
}

/// Truth box row of a synthetic dataset, in source-image pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxRow {
    pub image_id: String,
    pub joint: String,
    pub class: String,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

/// Renders a synthetic dataset into `out`: `images/`, `masks/`, `scores.csv`,
/// `boxes.csv` and `manifest.json`. Returns the number of images.
pub fn write_synthetic_dataset(cfg: &SynthConfig, out: &Path) -> Result<usize> {
    cfg.validate()?;
    fs::create_dir_all(out.join("images"))?;
    fs::create_dir_all(out.join("masks"))?;
    let mut rows = Vec::new();
    let mut boxes = csv::Writer::from_path(out.join("boxes.csv"))?;
    for s in synthetic_iter(cfg)? {
        let s = s?;
        let id = s.image_id();
        s.image.save_png(&out.join("images").join(format!("{id}.png")))?;
        s.mask.save_png(&out.join("masks").join(format!("{id}.png")))?;
        let mut scores = BTreeMap::new();
        for j in &s.joints {
            scores.insert(
                j.id,
                JointScores {
                    narrowing: Some(j.narrowing),
                    erosion: Some(j.erosion),
                },
            );
            boxes.serialize(BoxRow {
                image_id: id.clone(),
                joint: j.id.name(),
                class: j.id.class.name().to_string(),
                cx: j.bbox.cx,
                cy: j.bbox.cy,
                w: j.bbox.w,
                h: j.bbox.h,
            })?;
        }
        rows.push(ScoreRow {
            patient_id: s.patient_id.clone(),
            limb: s.limb,
            scores,
        });
    }
    boxes.flush()?;
    write_scores(&rows, fs::File::create(out.join("scores.csv"))?)?;
    let manifest = serde_json::json!({
        "render_version": RENDER_VERSION,
        "config": cfg,
        "images": rows.len(),
    });
    fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("json"),
    )?;
    Ok(rows.len())
}
