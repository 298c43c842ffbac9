use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use jointscore::anatomy::{JointClass, JointId};
use jointscore::dataset::read_scores;
use jointscore::detect::Detection;
use jointscore::geometry::{BBoxNorm, PixelBox};
use jointscore::identify::{IdentifyPath, Identity};
use jointscore::metrics::{aggregate_totals, JointScore};
use jointscore::ordinal::{OrdinalVector, ScaleSet, ScoreScale, Task};
use jointscore::pipeline::{JointReport, MaskSource, PipelineReport};
use jointscore::raster::{GrayRaster, LimbKind, LimbType};
use jointscore::report::{write_report, RunManifest};

fn joint(identity: Identity, cx: f64, n: usize, e: usize) -> JointReport {
    JointReport {
        detection: Detection {
            bbox: BBoxNorm::new(cx, 0.5, 0.1, 0.08),
            class: JointClass::Mcp,
            confidence: 0.875,
        },
        original_box: PixelBox {
            cx: cx * 160.0,
            cy: 60.0,
            w: 16.0,
            h: 12.0,
        },
        identity,
        narrowing: n,
        narrowing_vector: OrdinalVector::new(vec![0.9, 0.8, 0.2, 0.1, 0.0]),
        erosion: e,
        erosion_vector: OrdinalVector::new(vec![0.9, 0.7, 0.6, 0.3, 0.1, 0.0]),
    }
}

fn fixture() -> (PipelineReport, GrayRaster) {
    let joints = vec![
        joint(Identity::Joint(JointId::new(JointClass::Mcp, 1)), 0.25, 1, 2),
        joint(Identity::Joint(JointId::new(JointClass::Mcp, 2)), 0.5, 0, 0),
        joint(Identity::Unidentified, 0.75, 3, 4),
    ];
    let scores: Vec<JointScore> = joints
        .iter()
        .map(|j| JointScore {
            joint: j.identity.joint(),
            narrowing: j.narrowing,
            erosion: j.erosion,
        })
        .collect();
    let sheet = aggregate_totals(
        &scores,
        &ScoreScale::default_for(Task::Narrowing, LimbType::Hand),
        &ScoreScale::default_for(Task::Erosion, LimbType::Hand),
    )
    .unwrap();
    let mut timings = BTreeMap::new();
    for stage in jointscore::pipeline::STAGES {
        timings.insert(stage.to_string(), 0.0);
    }
    let report = PipelineReport {
        image_id: "p0007-RH".into(),
        limb: LimbKind::HandRight,
        original_size: (160, 120),
        mask_source: MaskSource::Classic,
        mask_coverage: 0.5,
        identify_path: IdentifyPath::Shortfall,
        joints,
        sheet,
        timings,
    };
    let img = GrayRaster::from_fn(160, 120, |x, y| ((x + y) % 200) as u8).unwrap();
    (report, img)
}

#[test]
fn score_csv_round_trips_through_the_reader() {
    let (report, img) = fixture();
    let dir = tempfile::tempdir().unwrap();
    write_report(&report, &img, dir.path()).unwrap();
    let rows = read_scores(
        fs::File::open(dir.path().join("p0007-RH.scores.csv")).unwrap(),
        &ScaleSet::default(),
    )
    .unwrap();
    assert_eq!(rows, vec![jointscore::report::score_row(&report)]);
    assert_eq!(rows[0].patient_id, "p0007");
    assert_eq!(rows[0].scores.len(), 2);
}

#[test]
fn annotated_png_keeps_input_dimensions() {
    let (report, img) = fixture();
    let dir = tempfile::tempdir().unwrap();
    write_report(&report, &img, dir.path()).unwrap();
    let png = jointscore::raster::load_gray(&dir.path().join("p0007-RH.annotated.png")).unwrap();
    assert_eq!((png.width(), png.height()), (160, 120));
    assert_ne!(png, img);
}

#[test]
fn wrong_image_size_is_rejected() {
    let (report, _) = fixture();
    let dir = tempfile::tempdir().unwrap();
    let small = GrayRaster::filled(10, 10, 0).unwrap();
    assert!(write_report(&report, &small, dir.path()).is_err());
}

#[test]
fn unwritable_directory_is_an_error() {
    let (report, img) = fixture();
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    assert!(write_report(&report, &img, &blocker.join("sub")).is_err());
}

/// Output bytes are compared with files captured from a verified run. Set
/// `JOINTSCORE_UPDATE_GOLDEN=1` to recapture after an intended format change.
#[test]
fn outputs_match_golden_files() {
    let (report, img) = fixture();
    let dir = tempfile::tempdir().unwrap();
    let mut files = write_report(&report, &img, dir.path()).unwrap();
    let mut manifest = RunManifest::new(42, true);
    manifest.checkpoints.insert("detect-hand".into(), "00ff".into());
    manifest.add_report(&report);
    files.push(manifest.write(dir.path()).unwrap());

    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let update = std::env::var_os("JOINTSCORE_UPDATE_GOLDEN").is_some();
    for f in files {
        let name = f.file_name().unwrap();
        let got = fs::read(&f).unwrap();
        let want_path = golden.join(name);
        if update {
            fs::write(&want_path, &got).unwrap();
            continue;
        }
        let want = fs::read(&want_path).unwrap_or_else(|_| panic!("missing golden file {}", want_path.display()));
        assert!(got == want, "{} differs from golden", name.to_string_lossy());
    }
}
