mod common;

use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use elicit_service::http::{router, AppState, GraphView};
use elicit_service::store::SessionStore;
use elicit_service::{DialogueSession, Engine, TurnOutcome};
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, v)
}

fn session_body(engine_corpus: &elicit_core::corpus::Corpus, i: usize) -> Value {
    let e = &engine_corpus.entries[i];
    let kb: Vec<Vec<String>> =
        e.kb.triples
            .iter()
            .map(|t| {
                vec![
                    t.subject.clone(),
                    t.predicate.clone(),
                    t.object.clone(),
                    t.domain.to_string(),
                ]
            })
            .collect();
    json!({ "user_id": e.profile.user_id, "profile": e.profile.entities, "kb": kb, "strategy": "1", "top_k": 3 })
}

fn setup(store: Option<SessionStore>) -> (Router, Arc<Engine>, elicit_core::corpus::Corpus) {
    let (engine, corpus) = common::small_engine();
    let engine = Arc::new(engine);
    (router(AppState::new(engine.clone(), store)), engine, corpus)
}

fn strip_timing(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timing");
    v
}

#[tokio::test]
async fn session_lifecycle() {
    let (app, engine, corpus) = setup(None);
    let (st, created) = call(&app, "POST", "/sessions", Some(session_body(&corpus, 0))).await;
    assert_eq!(st, StatusCode::OK, "{created}");
    let id = created["session_id"].as_str().unwrap().to_string();
    let path = created["plan"]["path"].as_array().unwrap();
    assert!((3..=6).contains(&path.len()));

    let (st, out) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/turns"),
        Some(json!({ "utterance": "hello , how are you today ?" })),
    )
    .await;
    assert_eq!(st, StatusCode::OK, "{out}");
    let outcome: TurnOutcome = serde_json::from_value(out).unwrap();
    assert!(outcome.timing.total_ms >= 0.0);

    let (st, s) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(st, StatusCode::OK);
    let s: DialogueSession = serde_json::from_value(s).unwrap();
    assert_eq!(s.history.len(), 1);
    assert_eq!(s.plan, outcome.plan);

    let (st, cfg) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/config"),
        Some(json!({ "strategy": "2", "top_k": 5 })),
    )
    .await;
    assert_eq!(st, StatusCode::OK, "{cfg}");
    assert_eq!(cfg["config"], json!({ "strategy": "2", "top_k": 5 }));
    assert_eq!(cfg["plan"]["cursor"], 0);

    let (st, g) = call(&app, "GET", "/graph", None).await;
    assert_eq!(st, StatusCode::OK);
    let g: GraphView = serde_json::from_value(g).unwrap();
    assert_eq!(g.nodes, engine.graph.nodes());
    assert_eq!(g.counts, engine.graph.counts());
    assert_eq!(g.edge_count, engine.graph.edge_count());
    assert_eq!(g.total_count, engine.graph.total_count());

    let (st, h) = call(&app, "GET", "/health", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(h["status"], "ok");
}

#[tokio::test]
async fn errors_are_json_with_status() {
    let (app, _, corpus) = setup(None);
    let (st, v) = call(&app, "GET", "/sessions/nope", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert!(v["error"].as_str().unwrap().contains("nope"));

    let (st, _) = call(
        &app,
        "POST",
        "/sessions",
        Some(json!({ "profile": {} , "kb": [["a","sings","b"]] })),
    )
    .await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let (st, _) = call(
        &app,
        "POST",
        "/sessions",
        Some(json!({ "profile": {"Spaceships": ["x"]} })),
    )
    .await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let (st, v) = call(
        &app,
        "POST",
        "/sessions",
        Some(json!({ "profile": {"Music": ["x"]}, "kb": [] })),
    )
    .await;
    assert_eq!(st, StatusCode::INTERNAL_SERVER_ERROR);
    assert_eq!(v["stage"], "planning");

    let (_, created) = call(&app, "POST", "/sessions", Some(session_body(&corpus, 0))).await;
    let id = created["session_id"].as_str().unwrap();
    let (st, _) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/turns"),
        Some(json!({ "utterance": "" })),
    )
    .await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let (st, _) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/turns"),
        Some(json!({ "text": "hi" })),
    )
    .await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let (st, _) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/config"),
        Some(json!({ "top_k": 0 })),
    )
    .await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn unlabeled_triples_are_classified() {
    let (app, _, _) = setup(None);
    let body = json!({ "profile": {"Music": ["after_rain"]}, "kb": [["hu_ge", "sings", "after_rain"]] });
    let (st, created) = call(&app, "POST", "/sessions", Some(body)).await;
    assert_eq!(st, StatusCode::OK, "{created}");
    let id = created["session_id"].as_str().unwrap();
    let (_, s) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(s["kb"]["triples"][0]["domain"], "Music");
}

const SCRIPT: [&str; 3] = [
    "hello , how are you today ?",
    "how is the weather in nanjing ?",
    "i have to go now , bye",
];

async fn converse(app: Router, id: String) -> Vec<Value> {
    let mut out = Vec::new();
    for u in SCRIPT {
        let (st, v) = call(
            &app,
            "POST",
            &format!("/sessions/{id}/turns"),
            Some(json!({ "utterance": u })),
        )
        .await;
        assert_eq!(st, StatusCode::OK, "{v}");
        out.push(strip_timing(v));
    }
    out
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_sessions_do_not_interfere() {
    let (app, _, corpus) = setup(None);
    let mut ids = Vec::new();
    for i in [0, 1] {
        let (_, c) = call(&app, "POST", "/sessions", Some(session_body(&corpus, i))).await;
        ids.push(c["session_id"].as_str().unwrap().to_string());
    }
    let (a, b) = tokio::join!(
        tokio::spawn(converse(app.clone(), ids[0].clone())),
        tokio::spawn(converse(app.clone(), ids[1].clone())),
    );
    let (a, b) = (a.unwrap(), b.unwrap());

    // The same conversations run one at a time on a fresh server.
    let (solo, _, _) = setup(None);
    for (i, got) in [(0, &a), (1, &b)] {
        let (_, c) = call(&solo, "POST", "/sessions", Some(session_body(&corpus, i))).await;
        let id = c["session_id"].as_str().unwrap().to_string();
        assert_eq!(&converse(solo.clone(), id).await, got);
    }

    // Turns on one session race but are serialized.
    let (_, c) = call(&app, "POST", "/sessions", Some(session_body(&corpus, 2))).await;
    let id = c["session_id"].as_str().unwrap().to_string();
    let mut handles = Vec::new();
    for _ in 0..6 {
        let (app, id) = (app.clone(), id.clone());
        handles.push(tokio::spawn(async move {
            call(
                &app,
                "POST",
                &format!("/sessions/{id}/turns"),
                Some(json!({ "utterance": SCRIPT[0] })),
            )
            .await
        }));
    }
    for h in handles {
        assert_eq!(h.await.unwrap().0, StatusCode::OK);
    }
    let (_, s) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(s["history"].as_array().unwrap().len(), 6);
}

#[tokio::test]
async fn sessions_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let (app, engine, corpus) = setup(Some(SessionStore::open(dir.path()).unwrap()));
    let (_, c) = call(&app, "POST", "/sessions", Some(session_body(&corpus, 0))).await;
    let id = c["session_id"].as_str().unwrap().to_string();
    converse(app.clone(), id.clone()).await;
    let (_, before) = call(&app, "GET", &format!("/sessions/{id}"), None).await;

    let restarted = router(AppState::new(engine, Some(SessionStore::open(dir.path()).unwrap())));
    let (st, after) = call(&restarted, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(before, after);
}
