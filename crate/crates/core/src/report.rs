//! Files written for a scored image: score and totals CSVs, a detections CSV,
//! an annotated PNG, the report as JSON, and a run manifest.
//!
//! For image `{id}` the outputs are `{id}.scores.csv` (score CSV schema, one
//! row, identified joints only), `{id}.totals.csv`, `{id}.detections.csv`
//! (boxes in input-image pixels), `{id}.annotated.png` and `{id}.report.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{write_scores, JointScores, ScoreRow};
use crate::error::{Error, Result};
use crate::geometry::PixelBox;
use crate::identify::Identity;
use crate::pipeline::PipelineReport;
use crate::raster::GrayRaster;
use crate::synth::RENDER_VERSION;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Patient id of an image id `{patient}-{LH|RH|LF|RF}`; the whole id otherwise.
pub fn patient_of(image_id: &str, report: &PipelineReport) -> String {
    let suffix = format!("-{}", report.limb.code());
    image_id.strip_suffix(&suffix).unwrap_or(image_id).to_string()
}

/// Score-table row of the identified joints.
pub fn score_row(report: &PipelineReport) -> ScoreRow {
    let scores = report
        .joints
        .iter()
        .filter_map(|j| {
            j.identity.joint().map(|id| {
                (
                    id,
                    JointScores {
                        narrowing: Some(j.narrowing),
                        erosion: Some(j.erosion),
                    },
                )
            })
        })
        .collect();
    ScoreRow {
        patient_id: patient_of(&report.image_id, report),
        limb: report.limb,
        scores,
    }
}

fn totals_csv(report: &PipelineReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "image_id",
        "limb",
        "joints",
        "identified",
        "identify_path",
        "mask_source",
        "total_narrowing",
        "total_erosion",
        "overall_total",
    ])?;
    let s = &report.sheet;
    w.write_record([
        report.image_id.clone(),
        report.limb.code().to_string(),
        report.joints.len().to_string(),
        report
            .joints
            .iter()
            .filter(|j| j.identity.joint().is_some())
            .count()
            .to_string(),
        report.identify_path.name().to_string(),
        report.mask_source.name().to_string(),
        s.total_narrowing.to_string(),
        s.total_erosion.to_string(),
        s.overall_total.to_string(),
    ])?;
    into_bytes(w)
}

fn detections_csv(report: &PipelineReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "image_id",
        "joint",
        "class",
        "cx",
        "cy",
        "w",
        "h",
        "confidence",
        "narrowing",
        "erosion",
    ])?;
    for j in &report.joints {
        let b = &j.original_box;
        w.write_record([
            report.image_id.clone(),
            j.identity.joint().map(|id| id.name()).unwrap_or_default(),
            j.detection.class.name().to_string(),
            format!("{:.2}", b.cx),
            format!("{:.2}", b.cy),
            format!("{:.2}", b.w),
            format!("{:.2}", b.h),
            format!("{:.4}", j.detection.confidence),
            j.narrowing.to_string(),
            j.erosion.to_string(),
        ])?;
    }
    into_bytes(w)
}

fn into_bytes(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Label drawn next to a joint box, such as `MCP1 N2 E3`.
pub fn joint_label(identity: Identity, narrowing: usize, erosion: usize) -> String {
    let name = match identity {
        Identity::Joint(id) => format!("{}{}", id.class.name(), id.digit),
        Identity::Unidentified => "?".to_string(),
    };
    format!("{name} N{narrowing} E{erosion}")
}

/// Input image with joint boxes, the joint name above and its scores below
/// each box, and the totals, drawn in white on black backing.
pub fn annotate(img: &GrayRaster, report: &PipelineReport) -> Result<GrayRaster> {
    if (img.width(), img.height()) != report.original_size {
        return Err(Error::DimensionMismatch {
            expected: report.original_size,
            found: (img.width(), img.height()),
        });
    }
    let mut out = img.clone();
    let scale = (img.width().min(img.height()) / 500).max(1);
    let line = (GLYPH_H as i64 + 3) * scale as i64;
    for j in &report.joints {
        draw_box(&mut out, &j.original_box, scale);
        let (x0, y0, _, y1) = j.original_box.corners();
        let label = joint_label(j.identity, j.narrowing, j.erosion);
        let (name, scores) = label.split_once(' ').unwrap_or((&label, ""));
        draw_text(&mut out, name, x0 as i64, (y0 as i64 - line).max(0), scale);
        draw_text(&mut out, scores, x0 as i64, y1 as i64 + 2 * scale as i64, scale);
    }
    let s = &report.sheet;
    let header = format!("N{} E{} T{}", s.total_narrowing, s.total_erosion, s.overall_total);
    draw_text(&mut out, &header, 2 * scale as i64, 2 * scale as i64, scale);
    Ok(out)
}

fn put(img: &mut GrayRaster, x: i64, y: i64, v: u8) {
    if x >= 0 && y >= 0 && (x as usize) < img.width() && (y as usize) < img.height() {
        img.set(x as usize, y as usize, v);
    }
}

fn draw_box(img: &mut GrayRaster, b: &PixelBox, thickness: usize) {
    let (x0, y0, x1, y1) = b.corners();
    let (x0, y0, x1, y1) = (
        x0.round() as i64,
        y0.round() as i64,
        x1.round() as i64,
        y1.round() as i64,
    );
    for t in 0..thickness as i64 {
        for x in x0..=x1 {
            put(img, x, y0 + t, 255);
            put(img, x, y1 - t, 255);
        }
        for y in y0..=y1 {
            put(img, x0 + t, y, 255);
            put(img, x1 - t, y, 255);
        }
    }
}

const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;

/// 5x7 glyph rows, most significant of the low five bits is the left column.
fn glyph(c: char) -> [u8; GLYPH_H] {
    match c.to_ascii_uppercase() {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        '?' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x00, 0x04],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        _ => [0; GLYPH_H],
    }
}

/// Draws `text` with its top-left at (x, y) on a black backing rectangle.
pub fn draw_text(img: &mut GrayRaster, text: &str, x: i64, y: i64, scale: usize) {
    let s = scale as i64;
    let advance = (GLYPH_W as i64 + 1) * s;
    let n = text.chars().count() as i64;
    for yy in y - s..y + (GLYPH_H as i64 + 1) * s {
        for xx in x - s..x + n * advance {
            put(img, xx, yy, 0);
        }
    }
    for (i, c) in text.chars().enumerate() {
        let gx = x + i as i64 * advance;
        for (row, bits) in glyph(c).iter().enumerate() {
            for col in 0..GLYPH_W {
                if bits & (0x10 >> col) != 0 {
                    for dy in 0..s {
                        for dx in 0..s {
                            put(img, gx + col as i64 * s + dx, y + row as i64 * s + dy, 255);
                        }
                    }
                }
            }
        }
    }
}

/// Writes the per-image files into `out_dir` and returns their paths.
pub fn write_report(report: &PipelineReport, img: &GrayRaster, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let id = &report.image_id;
    let path = |ext: &str| out_dir.join(format!("{id}.{ext}"));
    let mut written = Vec::new();

    let mut scores = Vec::new();
    write_scores(&[score_row(report)], &mut scores)?;
    for (ext, bytes) in [
        ("scores.csv", scores),
        ("totals.csv", totals_csv(report)?),
        ("detections.csv", detections_csv(report)?),
        ("report.json", to_json(report)),
    ] {
        let p = path(ext);
        fs::write(&p, bytes)?;
        written.push(p);
    }
    let p = path("annotated.png");
    annotate(img, report)?.save_png(&p)?;
    written.push(p);
    Ok(written)
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("report serializes");
    s.push(b'\n');
    s
}

/// Run-level record of seeds, model identities and per-image timings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub render_version: u32,
    pub seed: u64,
    pub deterministic: bool,
    /// Checkpoint tag to content hash.
    pub checkpoints: BTreeMap<String, String>,
    /// Image id to stage timings in seconds.
    pub images: BTreeMap<String, BTreeMap<String, f64>>,
    pub config: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(seed: u64, deterministic: bool) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            render_version: RENDER_VERSION,
            seed,
            deterministic,
            ..Default::default()
        }
    }

    pub fn add_report(&mut self, report: &PipelineReport) {
        self.images.insert(report.image_id.clone(), report.timings.clone());
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(out_dir)?;
        let p = out_dir.join(MANIFEST_FILE);
        fs::write(&p, to_json(self))?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels() {
        use crate::anatomy::{JointClass, JointId};
        assert_eq!(
            joint_label(Identity::Joint(JointId::new(JointClass::Mcp, 1)), 2, 3),
            "MCP1 N2 E3"
        );
        assert_eq!(joint_label(Identity::Unidentified, 0, 4), "? N0 E4");
    }

    #[test]
    fn text_is_drawn_inside_bounds_only() {
        let mut img = GrayRaster::filled(20, 10, 100).unwrap();
        draw_text(&mut img, "N1", 2, 1, 1);
        assert!(img.data().contains(&255));
        assert_eq!(img.get(19, 9), 100);
        // Clipped at the border without panicking.
        draw_text(&mut img, "MCP5 N4 E5", 15, 5, 2);
    }

    #[test]
    fn glyphs_are_distinct() {
        let chars = "0123456789CEIMNPT?-";
        for (i, a) in chars.chars().enumerate() {
            for b in chars.chars().skip(i + 1) {
                assert_ne!(glyph(a), glyph(b), "{a} vs {b}");
            }
        }
    }
}
