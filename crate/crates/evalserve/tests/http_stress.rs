mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use polyvox_core::mushra::{analyze, read_scores, TestMode};
use polyvox_evalserve::{serve, EvalService, NextPanel, ServiceOptions, Session, SubmitAck, TestSummary};
use serde_json::json;

const SYSTEMS: [&str; 3] = ["sd-25000", "mx7-8500", "mx7-5000"];
const RATERS: usize = 50;
const QUOTA: usize = 10;
const PANELS: usize = 12;

async fn start(svc: Arc<EvalService>) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve(listener, svc));
    format!("http://{addr}")
}

/// Deterministic pseudo-scores so that systems differ on average.
fn score(rater: usize, panel: &str, slot: usize) -> f64 {
    let h = panel.bytes().fold(rater as u64 * 31 + slot as u64 * 7, |a, b| {
        a.wrapping_mul(131).wrapping_add(b as u64)
    });
    (h % 101) as f64
}

async fn rate_until_done(client: reqwest::Client, base: String, test_id: String, rater: usize, abandon: bool) -> usize {
    let session: Session = client
        .post(format!("{base}/sessions"))
        .json(&json!({ "test_id": test_id }))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let mut submitted = 0;
    loop {
        let next: NextPanel = client
            .get(format!("{base}/sessions/{}/next", session.session_id))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        let NextPanel::Panel(panel) = next else {
            return submitted;
        };
        if abandon {
            return submitted;
        }
        let body = json!({
            "submission_token": format!("{rater}-{}", panel.panel_id),
            "scores": panel.slots.iter().map(|s| json!({ "slot": s.slot, "score": score(rater, &panel.panel_id, s.slot) })).collect::<Vec<_>>(),
        });
        let url = format!(
            "{base}/sessions/{}/panels/{}/ratings",
            session.session_id, panel.panel_id
        );
        // Every third rater double-submits concurrently, as a flaky client would.
        let (a, b) = if rater.is_multiple_of(3) {
            let (a, b) = tokio::join!(
                client.post(&url).json(&body).send(),
                client.post(&url).json(&body).send()
            );
            (a.unwrap(), Some(b.unwrap()))
        } else {
            (client.post(&url).json(&body).send().await.unwrap(), None)
        };
        let mut fresh = 0;
        for resp in std::iter::once(a).chain(b) {
            match resp.status().as_u16() {
                200 => {
                    let ack: SubmitAck = resp.json().await.unwrap();
                    fresh += usize::from(!ack.replay);
                }
                409 => {}
                s => panic!("unexpected status {s}"),
            }
        }
        assert!(fresh <= 1);
        submitted += fresh;
    }
}

fn distinct_raters(svc: &EvalService, test_id: &str) -> BTreeMap<String, BTreeSet<String>> {
    let mut per_panel: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let ratings = svc.ratings(test_id).unwrap();
    for r in ratings.iter() {
        assert!(
            per_panel
                .entry(r.panel_id.clone())
                .or_default()
                .insert(r.rater_id.clone()),
            "duplicate record"
        );
    }
    per_panel
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn fifty_raters_never_exceed_quota() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::config(
        &dir.path().join("stimuli"),
        &SYSTEMS,
        PANELS,
        QUOTA,
        TestMode::Naturalness,
    );
    let opts = ServiceOptions {
        reservation_timeout: Duration::from_millis(400),
        compact_every: 40,
    };
    let svc = Arc::new(EvalService::open(&dir.path().join("db"), opts).unwrap());
    let base = start(svc.clone()).await;
    let client = reqwest::Client::new();

    let created = client.post(format!("{base}/tests")).json(&cfg).send().await.unwrap();
    assert_eq!(created.status().as_u16(), 201);
    let summary: TestSummary = created.json().await.unwrap();
    assert_eq!(summary.panels.len(), PANELS);
    let test_id = summary.test_id;

    let tasks: Vec<_> = (0..RATERS)
        .map(|r| {
            tokio::spawn(rate_until_done(
                client.clone(),
                base.clone(),
                test_id.clone(),
                r,
                r % 7 == 6,
            ))
        })
        .collect();
    for t in tasks {
        t.await.unwrap();
    }
    let per_panel = distinct_raters(&svc, &test_id);
    assert!(per_panel.values().all(|r| r.len() <= QUOTA), "{per_panel:?}");

    // Abandoned reservations lapse; late raters then fill every panel exactly.
    tokio::time::sleep(Duration::from_millis(500)).await;
    for r in RATERS..RATERS + 10 {
        rate_until_done(client.clone(), base.clone(), test_id.clone(), r, false).await;
    }
    let per_panel = distinct_raters(&svc, &test_id);
    assert_eq!(per_panel.len(), PANELS);
    assert!(per_panel.values().all(|r| r.len() == QUOTA), "{per_panel:?}");

    // Export through HTTP, parse back and compare with the persisted state.
    let csv = client
        .get(format!("{base}/tests/{test_id}/export"))
        .send()
        .await
        .unwrap()
        .text()
        .await
        .unwrap();
    let parsed = read_scores(csv.as_bytes()).unwrap();
    let in_memory = svc.score_records(&test_id).unwrap();
    assert_eq!(parsed.len(), PANELS * QUOTA * (SYSTEMS.len() + 1));
    assert_eq!(parsed, in_memory);
    let a = analyze(&parsed, &[], "stress", TestMode::Naturalness, 0.05).unwrap();
    let b = analyze(&in_memory, &[], "stress", TestMode::Naturalness, 0.05).unwrap();
    assert_eq!(a, b);
}

#[tokio::test]
async fn http_errors_carry_status_and_detail() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::config(&dir.path().join("stimuli"), &SYSTEMS, 2, 1, TestMode::Similarity);
    let svc = Arc::new(EvalService::open(&dir.path().join("db"), ServiceOptions::default()).unwrap());
    let base = start(svc).await;
    let client = reqwest::Client::new();

    let mut short = cfg.clone();
    short.sentences[0].text = "four words only here".into();
    let resp = client.post(format!("{base}/tests")).json(&short).send().await.unwrap();
    assert_eq!(resp.status().as_u16(), 422);
    let body: serde_json::Value = resp.json().await.unwrap();
    assert_eq!(body["error"], "invalid");

    let test_id = client
        .post(format!("{base}/tests"))
        .json(&cfg)
        .send()
        .await
        .unwrap()
        .json::<TestSummary>()
        .await
        .unwrap()
        .test_id;
    let again = client.post(format!("{base}/tests")).json(&cfg).send().await.unwrap();
    assert_eq!(again.status().as_u16(), 200);

    assert_eq!(
        client
            .get(format!("{base}/tests/nope/export"))
            .send()
            .await
            .unwrap()
            .status()
            .as_u16(),
        404
    );
    let session: Session = client
        .post(format!("{base}/sessions"))
        .json(&json!({ "test_id": test_id }))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let NextPanel::Panel(panel) = client
        .get(format!("{base}/sessions/{}/next", session.session_id))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap()
    else {
        panic!("expected a panel");
    };
    // Slot audio and the similarity reference are served; system names never appear.
    let wav = client
        .get(format!("{base}{}", panel.slots[0].audio_url))
        .send()
        .await
        .unwrap();
    assert_eq!(wav.headers()["content-type"], "audio/wav");
    assert!(wav.bytes().await.unwrap().starts_with(b"RIFF"));
    let reference = panel.reference_url.clone().unwrap();
    assert_eq!(
        client
            .get(format!("{base}{reference}"))
            .send()
            .await
            .unwrap()
            .status()
            .as_u16(),
        200
    );
    let view = serde_json::to_string(&panel).unwrap();
    assert!(!SYSTEMS.iter().chain(["recording"].iter()).any(|s| view.contains(s)));

    let url = format!(
        "{base}/sessions/{}/panels/{}/ratings",
        session.session_id, panel.panel_id
    );
    let bad = json!({ "scores": (0..4).map(|s| json!({ "slot": s, "score": if s == 0 { 101 } else { 50 } })).collect::<Vec<_>>() });
    assert_eq!(
        client.post(&url).json(&bad).send().await.unwrap().status().as_u16(),
        422
    );
    let good = json!({ "scores": (0..4).map(|s| json!({ "slot": s, "score": 50 })).collect::<Vec<_>>() });
    assert_eq!(
        client.post(&url).json(&good).send().await.unwrap().status().as_u16(),
        200
    );
    assert_eq!(
        client.post(&url).json(&good).send().await.unwrap().status().as_u16(),
        409
    );
}
