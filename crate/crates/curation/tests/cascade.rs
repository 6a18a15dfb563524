use std::collections::HashSet;
use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use proptest::prelude::*;
use refvid_curation::filter::{run_coarse, AuditEntry, Reason, ScoreError, Stage};
use refvid_curation::record::read_records;
use refvid_curation::{
    run_cascade, BodyView, FaceView, FilterThresholds, RecordScorer, Scorer, SourceClass,
    VideoRecord,
};

fn fixture() -> Vec<VideoRecord> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/cascade.jsonl");
    read_records(BufReader::new(File::open(path).unwrap())).unwrap()
}

fn ids(recs: &[VideoRecord]) -> Vec<&str> {
    recs.iter().map(|r| r.id.as_str()).collect()
}

/// Rules applied to the fixture by hand:
/// v1 identity mean 0.35 < 0.4; v2 mean exactly 0.4 passes, clip 0.5;
/// v3 clip exactly 0.45 is not above 0.45; v4 clip mean 0.5, track 0.8;
/// v5 track 0.1; v6 mean 0.4, clip 0.95, track 0.6.
#[test]
fn fixture_keeps_the_three_records_above_both_thresholds() {
    let out = run_cascade(&fixture(), &FilterThresholds::default(), &RecordScorer).unwrap();
    assert_eq!(ids(&out.kept), ["v2", "v4", "v6"]);
    let audit: Vec<(&str, Stage, Reason)> = out
        .audit
        .iter()
        .map(|e| (e.id.as_str(), e.stage, e.reason))
        .collect();
    assert_eq!(
        audit,
        [
            ("v1", Stage::Coarse, Reason::CoarseIdentity),
            ("v3", Stage::Fine, Reason::ClipConsistency),
            ("v5", Stage::Fine, Reason::Tracking),
        ]
    );
    assert!((out.audit[0].value.unwrap() - 0.35).abs() < 1e-12);
    assert_eq!(out.audit[1].value, Some(0.45));
    assert_eq!(out.audit[2].value, Some(0.1));
}

#[test]
fn audit_lines_have_the_documented_shape() {
    let out = run_cascade(&fixture(), &FilterThresholds::default(), &RecordScorer).unwrap();
    let mut buf = Vec::new();
    out.write_audit(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(
        lines[2],
        r#"{"id":"v5","stage":"fine","reason":"tracking","value":0.1}"#
    );
    let back: AuditEntry = serde_json::from_str(lines[1]).unwrap();
    assert_eq!(back, out.audit[1]);
}

#[test]
fn empty_stream_gives_empty_output() {
    let out = run_cascade(&[], &FilterThresholds::default(), &RecordScorer).unwrap();
    assert!(out.kept.is_empty() && out.audit.is_empty());
}

#[test]
fn rerunning_on_kept_output_is_a_fixed_point() {
    let th = FilterThresholds::default();
    let first = run_cascade(&fixture(), &th, &RecordScorer).unwrap();
    let second = run_cascade(&first.kept, &th, &RecordScorer).unwrap();
    assert_eq!(second.kept, first.kept);
    assert!(second.audit.is_empty());
    assert_eq!(
        format!("{:?}", run_cascade(&fixture(), &th, &RecordScorer).unwrap()),
        format!("{first:?}")
    );
}

#[test]
fn sharded_runs_concatenate_to_the_full_run() {
    let recs = fixture();
    let th = FilterThresholds::default();
    let whole = run_cascade(&recs, &th, &RecordScorer).unwrap();
    let mut kept = Vec::new();
    let mut audit = Vec::new();
    for shard in recs.chunks(4) {
        let out = run_cascade(shard, &th, &RecordScorer).unwrap();
        kept.extend(out.kept);
        audit.extend(out.audit);
    }
    assert_eq!((kept, audit), (whole.kept, whole.audit));
}

/// Panics on any 8 fps or tracking access.
struct CoarseOnly(AtomicUsize);

impl Scorer for CoarseOnly {
    fn face_similarities(&self, rec: &VideoRecord) -> Result<Vec<f64>, ScoreError> {
        self.0.fetch_add(1, Ordering::Relaxed);
        RecordScorer.face_similarities(rec)
    }
    fn clip_similarities(&self, _: &VideoRecord) -> Result<Vec<f64>, ScoreError> {
        panic!("coarse stage read 8 fps data")
    }
    fn track_quality(&self, _: &VideoRecord) -> Result<f64, ScoreError> {
        panic!("coarse stage read tracking data")
    }
}

#[test]
fn coarse_stage_ignores_poisoned_fine_data() {
    let th = FilterThresholds::default();
    let clean = run_coarse(&fixture(), &th, &RecordScorer).unwrap();
    let mut poisoned = fixture();
    for r in &mut poisoned {
        r.clip_sims_8fps = vec![f64::NAN; 3];
        r.track_quality = f64::NAN;
    }
    let scorer = CoarseOnly(AtomicUsize::new(0));
    let out = run_coarse(&poisoned, &th, &scorer).unwrap();
    assert_eq!(scorer.0.load(Ordering::Relaxed), poisoned.len());
    assert_eq!(ids(&out.kept), ids(&clean.kept));
    assert_eq!(out.audit, clean.audit);
    assert_eq!(ids(&out.kept), ["v2", "v3", "v4", "v5", "v6"]);
}

struct Flaky {
    face_fails: &'static str,
    clip_fails: &'static str,
}

impl Scorer for Flaky {
    fn face_similarities(&self, rec: &VideoRecord) -> Result<Vec<f64>, ScoreError> {
        if rec.id == self.face_fails {
            return Err(ScoreError::Failed("detector timeout".into()));
        }
        RecordScorer.face_similarities(rec)
    }
    fn clip_similarities(&self, rec: &VideoRecord) -> Result<Vec<f64>, ScoreError> {
        if rec.id == self.clip_fails {
            return Err(ScoreError::Failed("embedder crashed".into()));
        }
        RecordScorer.clip_similarities(rec)
    }
    fn track_quality(&self, rec: &VideoRecord) -> Result<f64, ScoreError> {
        RecordScorer.track_quality(rec)
    }
}

#[test]
fn scorer_failures_are_audited_not_dropped() {
    let out = run_cascade(
        &fixture(),
        &FilterThresholds::default(),
        &Flaky {
            face_fails: "v2",
            clip_fails: "v4",
        },
    )
    .unwrap();
    assert_eq!(ids(&out.kept), ["v6"]);
    let errors: Vec<(&str, Stage)> = out
        .audit
        .iter()
        .filter(|e| e.reason == Reason::ScorerError)
        .map(|e| (e.id.as_str(), e.stage))
        .collect();
    assert_eq!(errors, [("v2", Stage::Coarse), ("v4", Stage::Fine)]);
    assert!(out
        .audit
        .iter()
        .filter(|e| e.reason == Reason::ScorerError)
        .all(|e| e.value.is_none()));
}

#[test]
fn missing_scores_are_malformed() {
    let mut recs = fixture();
    recs[1].face_sims_1fps.clear();
    recs[3].clip_sims_8fps.clear();
    let out = run_cascade(&recs, &FilterThresholds::default(), &RecordScorer).unwrap();
    let malformed: Vec<(&str, Stage)> = out
        .audit
        .iter()
        .filter(|e| e.reason == Reason::Malformed)
        .map(|e| (e.id.as_str(), e.stage))
        .collect();
    assert_eq!(malformed, [("v2", Stage::Coarse), ("v4", Stage::Fine)]);
}

#[test]
fn invalid_thresholds_are_rejected() {
    let th = FilterThresholds {
        tau_clip: 1.5,
        ..Default::default()
    };
    assert!(run_cascade(&fixture(), &th, &RecordScorer).is_err());
}

fn arb_record() -> impl Strategy<Value = VideoRecord> {
    (
        proptest::collection::vec(-1.0f64..=1.0, 0..4),
        proptest::collection::vec(-1.0f64..=1.0, 0..10),
        0.0f64..=1.0,
    )
        .prop_map(|(face, clip, track)| VideoRecord {
            id: String::new(),
            duration_s: 1.0,
            face_sims_1fps: face,
            clip_sims_8fps: clip,
            track_quality: track,
            face_view: FaceView::F,
            body_view: BodyView::S,
            subset: None,
            source: SourceClass::SelfCrop,
        })
}

proptest! {
    #[test]
    fn kept_and_discarded_partition_the_input(mut recs in proptest::collection::vec(arb_record(), 0..40)) {
        for (i, r) in recs.iter_mut().enumerate() {
            r.id = format!("r{i:03}");
        }
        let th = FilterThresholds::default();
        let out = run_cascade(&recs, &th, &RecordScorer).unwrap();
        let kept: HashSet<&str> = out.kept.iter().map(|r| r.id.as_str()).collect();
        let dropped: HashSet<&str> = out.audit.iter().map(|e| e.id.as_str()).collect();
        prop_assert_eq!(kept.len(), out.kept.len());
        prop_assert_eq!(dropped.len(), out.audit.len());
        prop_assert!(kept.is_disjoint(&dropped));
        prop_assert_eq!(kept.len() + dropped.len(), recs.len());
        let mut kept_sorted: Vec<&str> = out.kept.iter().map(|r| r.id.as_str()).collect();
        kept_sorted.sort();
        prop_assert_eq!(kept_sorted, out.kept.iter().map(|r| r.id.as_str()).collect::<Vec<_>>());
        let again = run_cascade(&out.kept, &th, &RecordScorer).unwrap();
        prop_assert_eq!(again.kept, out.kept);
        prop_assert!(again.audit.is_empty());
    }
}
