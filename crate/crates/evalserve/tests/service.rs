mod common;

use std::collections::BTreeSet;
use std::time::Duration;

use polyvox_core::mushra::{TestMode, ANCHOR};
use polyvox_evalserve::model::SlotScore;
use polyvox_evalserve::{EvalService, NextPanel, RatingSubmission, ServiceError, ServiceOptions};

const SYSTEMS: [&str; 4] = ["sd-8500", "mx7-8500", "mx7-5000", "mx6-1250"];

fn full(view_slots: usize, score: f64, token: Option<&str>) -> RatingSubmission {
    RatingSubmission {
        submission_token: token.map(String::from),
        scores: (0..view_slots).map(|slot| SlotScore { slot, score }).collect(),
    }
}

fn panel(next: NextPanel) -> polyvox_evalserve::PanelView {
    match next {
        NextPanel::Panel(p) => p,
        NextPanel::Done => panic!("expected a panel"),
    }
}

#[test]
fn twenty_seven_by_seven_gives_189_panels() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::config(&dir.path().join("stimuli"), &SYSTEMS, 27 * 7, 10, TestMode::Naturalness);
    let svc = EvalService::open(&dir.path().join("db"), ServiceOptions::default()).unwrap();
    let summary = svc.create_test(cfg.clone()).unwrap();
    assert!(summary.created);
    assert_eq!(summary.panels.len(), 189);
    assert!(summary.panels.iter().all(|p| p.quota == 10));
    let test = svc.test(&summary.test_id).unwrap();
    for p in &test.panels {
        assert_eq!(p.stimuli.len(), 5);
        assert_eq!(p.stimuli.iter().filter(|s| s.system == ANCHOR).count(), 1);
    }

    let again = svc.create_test(cfg).unwrap();
    assert!(!again.created);
    assert_eq!(again.test_id, summary.test_id);
    assert_eq!(svc.test(&again.test_id).unwrap().panels, test.panels);
}

#[test]
fn creation_rejects_bad_sentences_and_missing_stimuli() {
    let dir = tempfile::tempdir().unwrap();
    let svc = EvalService::open(&dir.path().join("db"), ServiceOptions::default()).unwrap();
    let mut cfg = common::config(&dir.path().join("stimuli"), &SYSTEMS, 3, 10, TestMode::Naturalness);
    cfg.sentences[1].text = "too short to rate".into();
    match svc.create_test(cfg.clone()) {
        Err(ServiceError::Invalid(m)) => assert!(m.contains("s001 (4 words)"), "{m}"),
        other => panic!("{other:?}"),
    }
    cfg.sentences[1].text = "long enough to be rated now".into();
    std::fs::remove_file(dir.path().join("stimuli/mx7-5000/s002.wav")).unwrap();
    match svc.create_test(cfg) {
        Err(ServiceError::Invalid(m)) => assert!(m.contains("mx7-5000/s002.wav"), "{m}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn submissions_are_validated_and_unique() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::config(&dir.path().join("stimuli"), &SYSTEMS, 2, 10, TestMode::Naturalness);
    let svc = EvalService::open(&dir.path().join("db"), ServiceOptions::default()).unwrap();
    let test_id = svc.create_test(cfg).unwrap().test_id;
    let s = svc.open_session(&test_id, Some("native speaker".into())).unwrap();
    let p = panel(svc.next_panel(&s.session_id).unwrap());
    assert_eq!(p.slots.len(), 5);

    let mut out_of_range = full(5, 50.0, None);
    out_of_range.scores[2].score = 101.0;
    assert!(matches!(
        svc.submit(&s.session_id, &p.panel_id, out_of_range),
        Err(ServiceError::Invalid(_))
    ));
    let mut partial = full(5, 50.0, None);
    partial.scores.pop();
    assert!(matches!(
        svc.submit(&s.session_id, &p.panel_id, partial),
        Err(ServiceError::Invalid(_))
    ));
    assert!(svc.ratings(&test_id).unwrap().is_empty());

    let ack = svc
        .submit(&s.session_id, &p.panel_id, full(5, 60.0, Some("tok-1")))
        .unwrap();
    assert!(!ack.replay);
    let replay = svc
        .submit(&s.session_id, &p.panel_id, full(5, 60.0, Some("tok-1")))
        .unwrap();
    assert!(replay.replay);
    assert!(matches!(
        svc.submit(&s.session_id, &p.panel_id, full(5, 70.0, Some("tok-2"))),
        Err(ServiceError::Conflict(_))
    ));
    assert_eq!(svc.ratings(&test_id).unwrap().len(), 1);
    assert_eq!(svc.score_records(&test_id).unwrap().len(), 5);

    // The rated panel is never dispensed to this rater again.
    let second = panel(svc.next_panel(&s.session_id).unwrap());
    assert_ne!(second.panel_id, p.panel_id);
    svc.submit(&s.session_id, &second.panel_id, full(5, 40.0, None))
        .unwrap();
    assert_eq!(svc.next_panel(&s.session_id).unwrap(), NextPanel::Done);
}

#[test]
fn quota_fills_then_done() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::config(&dir.path().join("stimuli"), &SYSTEMS, 3, 2, TestMode::Naturalness);
    let svc = EvalService::open(&dir.path().join("db"), ServiceOptions::default()).unwrap();
    let test_id = svc.create_test(cfg).unwrap().test_id;
    for _ in 0..2 {
        let s = svc.open_session(&test_id, None).unwrap();
        while let NextPanel::Panel(p) = svc.next_panel(&s.session_id).unwrap() {
            svc.submit(&s.session_id, &p.panel_id, full(5, 50.0, None)).unwrap();
        }
    }
    let late = svc.open_session(&test_id, None).unwrap();
    assert_eq!(svc.next_panel(&late.session_id).unwrap(), NextPanel::Done);
    assert!(svc.summary(&test_id).unwrap().panels.iter().all(|p| p.completed == 2));
}

#[test]
fn expired_reservations_release_quota() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::config(&dir.path().join("stimuli"), &SYSTEMS, 1, 1, TestMode::Naturalness);
    let opts = ServiceOptions {
        reservation_timeout: Duration::from_millis(150),
        ..ServiceOptions::default()
    };
    let svc = EvalService::open(&dir.path().join("db"), opts).unwrap();
    let test_id = svc.create_test(cfg).unwrap().test_id;
    let a = svc.open_session(&test_id, None).unwrap();
    let b = svc.open_session(&test_id, None).unwrap();
    let pa = panel(svc.next_panel(&a.session_id).unwrap());
    assert_eq!(svc.next_panel(&b.session_id).unwrap(), NextPanel::Done);
    std::thread::sleep(Duration::from_millis(250));
    let pb = panel(svc.next_panel(&b.session_id).unwrap());
    assert_eq!(pa.panel_id, pb.panel_id);
    // a's reservation lapsed and b now holds the only place.
    assert!(matches!(
        svc.submit(&a.session_id, &pa.panel_id, full(5, 10.0, None)),
        Err(ServiceError::Conflict(_))
    ));
    svc.submit(&b.session_id, &pb.panel_id, full(5, 10.0, None)).unwrap();
    assert_eq!(svc.ratings(&test_id).unwrap().len(), 1);
}

#[test]
fn state_survives_restart_and_compaction() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::config(&dir.path().join("stimuli"), &SYSTEMS, 4, 3, TestMode::Similarity);
    let db = dir.path().join("db");
    let opts = ServiceOptions {
        compact_every: 3,
        ..ServiceOptions::default()
    };
    let (test_id, exported, session) = {
        let svc = EvalService::open(&db, opts.clone()).unwrap();
        let test_id = svc.create_test(cfg).unwrap().test_id;
        let s = svc.open_session(&test_id, None).unwrap();
        for k in 0..3 {
            let p = panel(svc.next_panel(&s.session_id).unwrap());
            assert!(p.reference_url.is_some());
            svc.submit(&s.session_id, &p.panel_id, full(5, 20.0 + k as f64, None))
                .unwrap();
        }
        let exported = svc.export_csv(&test_id).unwrap();
        (test_id, exported, s)
    };
    let svc = EvalService::open(&db, opts).unwrap();
    assert_eq!(svc.export_csv(&test_id).unwrap(), exported);
    let p = panel(svc.next_panel(&session.session_id).unwrap());
    svc.submit(&session.session_id, &p.panel_id, full(5, 99.0, None))
        .unwrap();
    let panels: BTreeSet<String> = svc
        .ratings(&test_id)
        .unwrap()
        .iter()
        .map(|r| r.panel_id.clone())
        .collect();
    assert_eq!(panels.len(), 4);
}

#[test]
fn empty_export_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::config(&dir.path().join("stimuli"), &SYSTEMS, 1, 1, TestMode::Naturalness);
    let svc = EvalService::open(&dir.path().join("db"), ServiceOptions::default()).unwrap();
    let test_id = svc.create_test(cfg).unwrap().test_id;
    assert_eq!(
        svc.export_csv(&test_id).unwrap(),
        "panel_id,rater_id,slot,system,score\n"
    );
    assert!(matches!(svc.export_csv("nope"), Err(ServiceError::NotFound(_))));
}
