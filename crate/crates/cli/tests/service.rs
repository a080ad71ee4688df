use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use p2c::assessor::{acceptance_rate, Decision, Embedder, EmbeddingIndex, JudgmentRecord};
use p2c::corpus::{synth_corpus, train_bpe, CodeSnippet, Facet, SynthConfig};
use p2c::encoder::{EncoderShape, FacetMode, Model};
use p2c_cli::service::{router, AcceptanceResponse, SearchResponse, ServedModel, ServiceState};
use p2c_cli::store::JudgmentStore;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Fixture {
    snippets: Vec<CodeSnippet>,
    policy: String,
    embedder: Embedder<f64>,
}

fn fixture(seed: u64) -> Fixture {
    let data = synth_corpus(&SynthConfig::new(0, 4, 3, 20)).unwrap();
    let vocab = train_bpe(&data.all_texts(), 200).unwrap();
    let model = Model::init(EncoderShape::new(vocab.len(), 8, 16), FacetMode::Prefixed, vocab.hash(), seed).unwrap();
    Fixture { snippets: data.snippets.clone(), policy: data.policies[0].text.clone(), embedder: Embedder::new(model, vocab).unwrap() }
}

fn served(f: &Fixture, tag: &str) -> ServedModel {
    let index = EmbeddingIndex::build(&f.snippets, &f.embedder).unwrap();
    ServedModel { tag: tag.into(), embedder: f.embedder.clone(), index }
}

fn app(f: &Fixture, judgments: &Path) -> Router {
    let state = ServiceState::new(vec![served(f, "m1")], f.snippets.clone(), 1.0, JudgmentStore::open(judgments).unwrap()).unwrap();
    router(Arc::new(state))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn judgment(id: &str, snippet: &str, facet: Facet, decision: Decision) -> JudgmentRecord {
    JudgmentRecord {
        id: id.into(),
        policy_text: "close every handle".into(),
        snippet_id: snippet.into(),
        facet,
        model_tag: "m1".into(),
        decision,
        timestamp: 1_700_000_000,
        reviewer: "r1".into(),
    }
}

#[tokio::test]
async fn health_reports_model_hash() {
    let f = fixture(1);
    let dir = tempfile::tempdir().unwrap();
    let app = app(&f, &dir.path().join("j.jsonl"));
    let (status, body) = call(&app, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["status"], "ok");
    assert_eq!(v["model_hash"], f.embedder.model_hash());
}

#[tokio::test]
async fn search_returns_exactly_k_hits_with_code() {
    let f = fixture(1);
    let dir = tempfile::tempdir().unwrap();
    let app = app(&f, &dir.path().join("j.jsonl"));
    let (status, body) = call(&app, "POST", "/search", Some(json!({"policy_text": f.policy, "facet": "compliant", "k": 3}))).await;
    assert_eq!(status, StatusCode::OK);
    let r: SearchResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(r.results.len(), 3);
    assert_eq!(r.model_hash, f.embedder.model_hash());
    assert_eq!(r.model_tag, "m1");
    for (i, hit) in r.results.iter().enumerate() {
        assert_eq!(hit.rank, i + 1);
        let code = &f.snippets.iter().find(|s| s.id == hit.snippet_id).unwrap().code;
        assert_eq!(&hit.code, code);
    }
    assert!(r.results.windows(2).all(|w| w[0].distance <= w[1].distance));
}

#[tokio::test]
async fn malformed_requests_are_rejected() {
    let f = fixture(1);
    let dir = tempfile::tempdir().unwrap();
    let app = app(&f, &dir.path().join("j.jsonl"));
    let bad = [
        ("/search", json!({"policy_text": "x"})),
        ("/search", json!({"policy_text": "x", "facet": "sideways", "k": 3})),
        ("/search", json!({"policy_text": "x", "facet": "compliant", "k": 0})),
        ("/search", json!({"policy_text": " ", "facet": "compliant", "k": 1})),
        ("/classify", json!({"policy_text": "x"})),
        ("/judgments", json!({"id": "a"})),
    ];
    for (uri, body) in bad {
        let (status, _) = call(&app, "POST", uri, Some(body.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{uri} {body}");
    }
    let req = Request::builder().method("POST").uri("/search").body(Body::from("{not json")).unwrap();
    assert_eq!(app.clone().oneshot(req).await.unwrap().status(), StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "POST", "/search", Some(json!({"policy_text": "x", "facet": "compliant", "k": 1, "model_tag": "nope"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn classify_returns_verdict() {
    let f = fixture(1);
    let dir = tempfile::tempdir().unwrap();
    let app = app(&f, &dir.path().join("j.jsonl"));
    let code = &f.snippets[0].code;
    let (status, body) = call(&app, "POST", "/classify", Some(json!({"policy_text": f.policy, "code": code}))).await;
    assert_eq!(status, StatusCode::OK);
    let v: Value = serde_json::from_slice(&body).unwrap();
    let expected = serde_json::to_value(f.embedder.classify(&f.policy, code, 1.0).unwrap()).unwrap();
    assert_eq!(v, expected);
}

#[tokio::test]
async fn snippets_resolve_or_404() {
    let f = fixture(1);
    let dir = tempfile::tempdir().unwrap();
    let app = app(&f, &dir.path().join("j.jsonl"));
    let s = &f.snippets[2];
    let (status, body) = call(&app, "GET", &format!("/snippets/{}", s.id), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(serde_json::from_slice::<Value>(&body).unwrap(), json!({"id": s.id, "code": s.code}));
    let (status, _) = call(&app, "GET", "/snippets/missing", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn judgments_are_read_your_writes_and_idempotent() {
    let f = fixture(1);
    let dir = tempfile::tempdir().unwrap();
    let app = app(&f, &dir.path().join("j.jsonl"));
    let (status, body) = call(&app, "GET", "/metrics/acceptance?model_tag=m1", None).await;
    assert_eq!(status, StatusCode::OK);
    let empty: AcceptanceResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!((empty.compliant, empty.noncompliant, empty.overall), (None, None, None));

    let s = &f.snippets[0].id;
    let records = [
        judgment("a", s, Facet::Compliant, Decision::Accept),
        judgment("b", s, Facet::Compliant, Decision::Reject),
        judgment("c", s, Facet::Noncompliant, Decision::Reject),
        judgment("d", s, Facet::Noncompliant, Decision::Accept),
        judgment("e", s, Facet::Noncompliant, Decision::Reject),
    ];
    for r in &records {
        let (status, body) = call(&app, "POST", "/judgments", Some(serde_json::to_value(r).unwrap())).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(serde_json::from_slice::<Value>(&body).unwrap(), json!({"id": r.id}));
    }
    let (status, _) = call(&app, "POST", "/judgments", Some(serde_json::to_value(&records[0]).unwrap())).await;
    assert_eq!(status, StatusCode::OK);
    let mut changed = records[0].clone();
    changed.decision = Decision::Reject;
    let (status, _) = call(&app, "POST", "/judgments", Some(serde_json::to_value(&changed).unwrap())).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) =
        call(&app, "POST", "/judgments", Some(serde_json::to_value(judgment("z", "missing", Facet::Compliant, Decision::Accept)).unwrap())).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (_, body) = call(&app, "GET", "/metrics/acceptance?model_tag=m1", None).await;
    let got: AcceptanceResponse = serde_json::from_slice(&body).unwrap();
    let want = acceptance_rate(&records).unwrap();
    assert_eq!(got.compliant, want.compliant);
    assert_eq!(got.noncompliant, want.noncompliant);
    assert_eq!(got.overall, Some(want.overall));
    assert_eq!(got.compliant, Some(50.0));
    assert_eq!(got.overall, Some(40.0));
    let (_, body) = call(&app, "GET", "/metrics/acceptance?model_tag=other", None).await;
    assert_eq!(serde_json::from_slice::<AcceptanceResponse>(&body).unwrap().overall, None);
}

#[tokio::test]
async fn thousand_writes_survive_restart() {
    let f = fixture(1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("j.jsonl");
    let s = f.snippets[0].id.clone();
    let records: Vec<JudgmentRecord> = (0..1000)
        .map(|i| {
            let facet = if i % 2 == 0 { Facet::Compliant } else { Facet::Noncompliant };
            judgment(&format!("j{i}"), &s, facet, if i % 7 == 0 { Decision::Accept } else { Decision::Reject })
        })
        .collect();
    {
        let app = app(&f, &path);
        for r in &records {
            let (status, _) = call(&app, "POST", "/judgments", Some(serde_json::to_value(r).unwrap())).await;
            assert_eq!(status, StatusCode::OK);
        }
    }
    let reopened = JudgmentStore::open(&path).unwrap();
    assert_eq!(reopened.records(), &records[..]);
    let app = app(&f, &path);
    let (_, body) = call(&app, "GET", "/metrics/acceptance", None).await;
    let got: AcceptanceResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(got.overall, Some(acceptance_rate(&records).unwrap().overall));
    assert_eq!(got.compliant_counts.total + got.noncompliant_counts.total, 1000);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_identical_searches_return_identical_bodies() {
    let f = fixture(1);
    let dir = tempfile::tempdir().unwrap();
    let app = app(&f, &dir.path().join("j.jsonl"));
    let body = json!({"policy_text": f.policy, "facet": "noncompliant", "k": 5});
    let tasks: Vec<_> = (0..32)
        .map(|_| {
            let app = app.clone();
            let body = body.clone();
            tokio::spawn(async move { call(&app, "POST", "/search", Some(body)).await })
        })
        .collect();
    let mut bodies = Vec::new();
    for t in tasks {
        let (status, b) = t.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        bodies.push(b);
    }
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn mismatched_index_is_a_conflict() {
    let a = fixture(1);
    let b = fixture(2);
    let dir = tempfile::tempdir().unwrap();
    let wrong = ServedModel { tag: "m".into(), embedder: a.embedder.clone(), index: served(&b, "x").index };
    let err = ServiceState::new(vec![wrong], a.snippets.clone(), 1.0, JudgmentStore::open(dir.path().join("j.jsonl")).unwrap())
        .err()
        .unwrap();
    assert_eq!(err.status(), StatusCode::CONFLICT);
}

#[tokio::test]
async fn models_are_addressed_by_tag() {
    let a = fixture(1);
    let b = fixture(2);
    let dir = tempfile::tempdir().unwrap();
    let models = vec![served(&a, "alpha"), served(&b, "beta")];
    let state = ServiceState::new(models, a.snippets.clone(), 1.0, JudgmentStore::open(dir.path().join("j.jsonl")).unwrap()).unwrap();
    let app = router(Arc::new(state));
    let (_, body) = call(&app, "POST", "/search", Some(json!({"policy_text": a.policy, "facet": "compliant", "k": 2, "model_tag": "beta"}))).await;
    let r: SearchResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(r.model_tag, "beta");
    assert_eq!(r.model_hash, b.embedder.model_hash());
}
