mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use common::*;
use reqwest::StatusCode;
use serde_json::json;

async fn finish(h: &Harness, j: &str, t: &str) {
    let (s, _) = h
        .send(h.http.post(h.url(&format!("/jobs/{j}/result"))).bearer_auth(t).json(&json!({ "ok": true })))
        .await;
    assert_eq!(s, StatusCode::NO_CONTENT);
    let (s, v) = h.append(j, t, "status", json!({ "status": "succeeded" })).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_producers_get_dense_seqs() {
    let h = std::sync::Arc::new(harness(0).await);
    let (j, t) = h.idle_job().await;
    let started = Instant::now();
    let producers: Vec<_> = (0..4)
        .map(|p| {
            let (h, j, t) = (h.clone(), j.clone(), t.clone());
            tokio::spawn(async move {
                let mut seqs = Vec::with_capacity(2500);
                for i in 0..2500 {
                    let (s, v) = h.append(&j, &t, "metric", json!({ "producer": p, "i": i })).await;
                    assert_eq!(s, StatusCode::CREATED, "{v}");
                    seqs.push(v["seq"].as_u64().unwrap());
                }
                seqs
            })
        })
        .collect();
    let mut all = Vec::new();
    for p in producers {
        let seqs = p.await.unwrap();
        assert!(seqs.windows(2).all(|w| w[0] < w[1]), "a producer saw seqs go backwards");
        all.extend(seqs);
    }
    let unique: BTreeSet<u64> = all.iter().copied().collect();
    assert_eq!(all.len(), 10_000);
    assert_eq!(unique, (1..=10_000).collect());

    let (_, log) = h.get(ALICE, &format!("/jobs/{j}/log")).await;
    let log = log.as_array().unwrap();
    let seqs: Vec<u64> = log.iter().map(|e| e["seq"].as_u64().unwrap()).collect();
    assert_eq!(seqs, (1..=10_000).collect::<Vec<_>>());
    // each producer's events are stored in its own order
    for p in 0..4 {
        let is: Vec<u64> = log
            .iter()
            .filter(|e| e["payload"]["producer"] == p)
            .map(|e| e["payload"]["i"].as_u64().unwrap())
            .collect();
        assert_eq!(is, (0..2500).collect::<Vec<_>>());
    }
    assert!(started.elapsed() < Duration::from_secs(30), "took {:?}", started.elapsed());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn mid_stream_subscription_matches_replay() {
    let h = std::sync::Arc::new(harness(0).await);
    let (j, t) = h.idle_job().await;
    h.append(&j, &t, "status", json!({ "status": "running" })).await;
    for i in 0..40 {
        h.append(&j, &t, "log", json!({ "line": format!("warmup {i}") })).await;
    }

    // subscribers join at different points while the producer keeps going
    let mut live = Vec::new();
    for k in [1u64, 17, 41, 42] {
        let (h, j) = (h.clone(), j.clone());
        live.push((k, tokio::spawn(async move { h.sse(ALICE, &j, k).await })));
    }
    for i in 0..300 {
        let kind = if i % 3 == 0 { "metric" } else { "log" };
        h.append(&j, &t, kind, json!({ "i": i, "text": "ünïcode ✓\nnewline" })).await;
        if i == 150 {
            for k in [100u64, 250] {
                let (h, j) = (h.clone(), j.clone());
                live.push((k, tokio::spawn(async move { h.sse(ALICE, &j, k).await })));
            }
        }
    }
    finish(&h, &j, &t).await;

    let (_, log) = h.get(ALICE, &format!("/jobs/{j}/log")).await;
    let log = log.as_array().unwrap().clone();
    let last_seq = log.last().unwrap()["seq"].as_u64().unwrap();
    assert_eq!(last_seq, 1 + 40 + 300 + 1);

    for (k, task) in live {
        let body = tokio::time::timeout(Duration::from_secs(20), task)
            .await
            .expect("stream did not end")
            .unwrap();
        let replay = h.sse(ALICE, &j, k).await;
        assert_eq!(frames(&body), frames(&replay), "from_seq={k}");

        let events = frame_events(&body);
        assert_eq!(events.len() as u64, last_seq - k + 1);
        assert_eq!(events[0]["seq"], k);
        assert_eq!(events.as_slice(), &log[(k - 1) as usize..], "from_seq={k}");
        let end = frames(&body).pop().unwrap();
        assert!(end.contains("event: end"), "{end}");
        assert!(end.contains(&format!("\"last_seq\":{last_seq}")), "{end}");
    }
}

#[tokio::test]
async fn past_the_end_on_a_finished_job_yields_only_the_marker() {
    let h = harness(0).await;
    let (j, t) = h.idle_job().await;
    h.append(&j, &t, "status", json!({ "status": "running" })).await;
    finish(&h, &j, &t).await;
    let body = h.sse(ALICE, &j, 99).await;
    let f = frames(&body);
    assert_eq!(f.len(), 1, "{body}");
    assert!(f[0].contains("event: end"));
    assert!(f[0].contains("\"status\":\"succeeded\""));

    let full = h.sse(ALICE, &j, 1).await;
    assert_eq!(frame_events(&full).len(), 2);

    let (s, _) = h
        .send(h.http.get(h.url(&format!("/jobs/{j}/events?from_seq=0"))).bearer_auth(ALICE))
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = h
        .send(h.http.get(h.url("/jobs/nope/events?from_seq=1")).bearer_auth(ALICE))
        .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn frames_carry_seq_and_kind() {
    let h = harness(0).await;
    let (j, t) = h.idle_job().await;
    h.append(&j, &t, "candidate_started", json!({ "candidate_id": 0 })).await;
    h.post(ALICE, &format!("/jobs/{j}/cancel"), json!({})).await;
    let body = h.sse(ALICE, &j, 1).await;
    let f = frames(&body);
    assert!(f[0].lines().any(|l| l == "id: 1"), "{}", f[0]);
    assert!(f[0].lines().any(|l| l == "event: candidate_started"), "{}", f[0]);
    assert!(f[1].lines().any(|l| l == "event: status"), "{}", f[1]);
}
