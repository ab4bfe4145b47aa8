use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use o2m_cli::service::{router, AnnotationLog, AppState, ServiceConfig, SCHEMAS};
use o2m_core::backends::mock::{HashEmbedder, MockChat, OverlapNli, SyntheticChat};
use o2m_core::backends::{BackendError, Backends, ChatBackend, COHERENCE_QUESTION};
use o2m_core::corpus::{parse_contexts, parse_preferences, write_preferences, PreferencePair};
use o2m_core::mrg::{Strategy, StrategyKind};
use o2m_core::odrp::{argmax_present, FeatureMode, OdrpModel};
use o2m_core::pipeline::{RunOptions, Selector, SelectorName};
use serde_json::{json, Value};
use std::sync::Arc;
use tower::ServiceExt;

fn backends(chat: Arc<dyn ChatBackend>) -> Backends {
    Backends::new(chat, Arc::new(HashEmbedder::new(16)), Arc::new(OverlapNli::default()))
}

fn config(kind: StrategyKind, selector: Selector, token: Option<&str>) -> ServiceConfig {
    ServiceConfig {
        strategy: Strategy::new(kind, 5, 0).unwrap(),
        demos: Vec::new(),
        selector,
        opts: RunOptions::default(),
        token: token.map(String::from),
    }
}

fn model_selector() -> Selector {
    Selector::model(SelectorName::Odrp, OdrpModel::init(16, 8, FeatureMode::Context, 3).unwrap()).unwrap()
}

fn app_with(chat: Arc<dyn ChatBackend>, kind: StrategyKind, token: Option<&str>) -> Router {
    router(AppState::new(backends(chat), config(kind, model_selector(), token), AnnotationLog::in_memory()))
}

fn mock_app() -> Router {
    app_with(Arc::new(SyntheticChat::new(5)), StrategyKind::Pc, None)
}

/// Three of five slots filled by a set-style reply; the judge says yes.
fn short_set_app() -> Router {
    let chat = MockChat::from_fn(|req| {
        if req.prompt.contains(COHERENCE_QUESTION) {
            Ok("Yes".into())
        } else {
            Ok("1. Sounds good to me.\n2. Maybe another day.\n3. Only if it stops raining.".into())
        }
    });
    app_with(Arc::new(chat), StrategyKind::It, None)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call_raw(app, method, uri, body.map(|b| b.to_string()), None).await;
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, value)
}

async fn call_raw(
    app: &Router,
    method: &str,
    uri: &str,
    body: Option<String>,
    bearer: Option<&str>,
) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header(header::CONTENT_TYPE, "application/json");
    }
    if let Some(t) = bearer {
        req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
    }
    let req = req.body(body.map(Body::from).unwrap_or_else(Body::empty)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn new_session(app: &Router) -> String {
    let (status, v) = call(app, "POST", "/sessions", None).await;
    assert_eq!(status, StatusCode::CREATED);
    v["id"].as_str().unwrap().to_string()
}

fn validate(schema: &str, value: &Value) {
    let text = SCHEMAS.iter().find(|(n, _)| *n == schema).unwrap().1;
    let schema: Value = serde_json::from_str(text).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(value).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?} in {value}");
}

#[tokio::test]
async fn healthz_is_ok() {
    let (status, body) = call_raw(&mock_app(), "GET", "/healthz", None, None).await;
    assert_eq!((status, body.as_slice()), (StatusCode::OK, b"ok".as_slice()));
}

#[tokio::test]
async fn message_returns_candidates_and_argmax() {
    let app = mock_app();
    let id = new_session(&app).await;
    let (status, v) = call(&app, "POST", &format!("/sessions/{id}/message"), Some(json!({"text": "Any plans for the weekend?"}))).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    validate("message", &v);
    let candidates = v["candidates"].as_array().unwrap();
    assert_eq!(candidates.len(), 5);
    let scores: Vec<Option<f64>> = candidates.iter().map(|c| c["score"].as_f64()).collect();
    assert_eq!(v["selected_index"].as_u64().unwrap() as usize, argmax_present(&scores).unwrap());
    let selected = &candidates[v["selected_index"].as_u64().unwrap() as usize];
    assert_eq!(selected["text"], v["selected_text"]);

    let (status, state) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    validate("session_state", &state);
    let ctx = state["context"].as_array().unwrap();
    assert_eq!(ctx.len(), 2);
    assert_eq!((ctx[0]["speaker"].as_str(), ctx[1]["speaker"].as_str()), (Some("A"), Some("B")));
    assert_eq!(ctx[1]["text"], v["selected_text"]);
}

#[tokio::test]
async fn turns_alternate_speakers() {
    let app = mock_app();
    let id = new_session(&app).await;
    for text in ["Hello there.", "Do you cook?", "What did you make last?"] {
        let (status, _) = call(&app, "POST", &format!("/sessions/{id}/message"), Some(json!({ "text": text }))).await;
        assert_eq!(status, StatusCode::OK);
    }
    let (_, state) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    let speakers: Vec<&str> = state["context"].as_array().unwrap().iter().map(|u| u["speaker"].as_str().unwrap()).collect();
    assert_eq!(speakers, ["A", "B", "A", "B", "A", "B"]);
    assert_eq!(state["turns"].as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn session_ids_are_unique() {
    let app = mock_app();
    let mut ids = std::collections::HashSet::new();
    for _ in 0..20 {
        assert!(ids.insert(new_session(&app).await));
    }
}

#[tokio::test]
async fn select_overrides_transcript_and_rejects_missing_slot() {
    let app = short_set_app();
    let id = new_session(&app).await;
    let (status, v) = call(&app, "POST", &format!("/sessions/{id}/message"), Some(json!({"text": "Picnic tomorrow?"}))).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let candidates = v["candidates"].as_array().unwrap();
    assert!(candidates[3]["text"].is_null() && candidates[4]["text"].is_null());
    assert!(v["selected_index"].as_u64().unwrap() < 3);

    let (status, e) = call(&app, "POST", &format!("/sessions/{id}/select"), Some(json!({"index": 4}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    validate("error", &e);
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/select"), Some(json!({"index": 9}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, s) = call(&app, "POST", &format!("/sessions/{id}/select"), Some(json!({"index": 2}))).await;
    assert_eq!(status, StatusCode::OK);
    validate("select", &s);
    assert_eq!(s["selected_text"], "Only if it stops raining.");
    let (_, state) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(state["context"][1]["text"], "Only if it stops raining.");
    assert_eq!(state["turns"][0]["overridden"], true);
}

#[tokio::test]
async fn select_before_any_turn_conflicts() {
    let app = mock_app();
    let id = new_session(&app).await;
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/select"), Some(json!({"index": 0}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn schema_violations_are_400_and_unknown_sessions_404() {
    let app = mock_app();
    let id = new_session(&app).await;
    let uri = format!("/sessions/{id}/message");
    for bad in [r#"{"txt": "hi"}"#, r#"{"text": 5}"#, "not json", r#"{"text": "   "}"#] {
        let (status, body) = call_raw(&app, "POST", &uri, Some(bad.into()), None).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{bad}");
        validate("error", &serde_json::from_slice(&body).unwrap());
    }
    let (status, _) = call(&app, "POST", "/sessions/nope/message", Some(json!({"text": "hi"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "GET", "/sessions/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/select"), Some(json!({"index": -1}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn backend_down_is_503_and_leaves_transcript_unchanged() {
    let chat = MockChat::from_fn(|_| Err(BackendError::Transport { attempts: 3, message: "connection refused".into() }));
    let app = app_with(Arc::new(chat), StrategyKind::Pc, None);
    let id = new_session(&app).await;
    let (status, e) = call(&app, "POST", &format!("/sessions/{id}/message"), Some(json!({"text": "hello?"}))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    validate("error", &e);
    let (_, state) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert!(state["context"].as_array().unwrap().is_empty());
}

async fn one_turn(app: &Router) -> (String, Value) {
    let id = new_session(app).await;
    let (status, v) = call(app, "POST", &format!("/sessions/{id}/message"), Some(json!({"text": "Should I learn guitar?"}))).await;
    assert_eq!(status, StatusCode::OK);
    (id, v)
}

#[tokio::test]
async fn annotation_round_trips_through_export() {
    let app = mock_app();
    let (id, turn) = one_turn(&app).await;
    let set_id = turn["set_id"].as_str().unwrap();
    let body = json!({"session_id": id, "set_id": set_id, "chosen_index": 3, "rejected_index": 1, "annotator": "ann1"});
    let (status, v) = call(&app, "POST", "/annotations", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    validate("annotation", &v);

    let (status, bytes) = call_raw(&app, "GET", "/annotations/export", None, None).await;
    assert_eq!(status, StatusCode::OK);
    let text = String::from_utf8(bytes).unwrap();
    let expected = PreferencePair {
        context_id: set_id.into(),
        set_id: set_id.into(),
        chosen: turn["candidates"][3]["text"].as_str().unwrap().into(),
        rejected: turn["candidates"][1]["text"].as_str().unwrap().into(),
    };
    let mut line = Vec::new();
    write_preferences(&mut line, &[expected]).unwrap();
    assert_eq!(text.as_bytes(), line.as_slice());
    let pairs = parse_preferences(&text).unwrap();
    assert_eq!(pairs.len(), 1);

    let (_, ctx_bytes) = call_raw(&app, "GET", "/contexts/export", None, None).await;
    let contexts = parse_contexts(std::str::from_utf8(&ctx_bytes).unwrap(), None).unwrap();
    assert_eq!(contexts.len(), 1);
    assert_eq!(contexts[0].id, pairs[0].context_id);
    assert_eq!(contexts[0].len(), 1);
}

#[tokio::test]
async fn full_pair_annotation_yields_ten_records_once_each() {
    let app = mock_app();
    let (_, turn) = one_turn(&app).await;
    let set_id = turn["set_id"].as_str().unwrap();
    for i in 0..5 {
        for j in (i + 1)..5 {
            let (chosen, rejected) = if (i + j) % 2 == 0 { (i, j) } else { (j, i) };
            let body = json!({"set_id": set_id, "chosen_index": chosen, "rejected_index": rejected, "annotator": "a"});
            let (status, _) = call(&app, "POST", "/annotations", Some(body.clone())).await;
            assert_eq!(status, StatusCode::CREATED);
            // Resubmitting, in either direction, is a no-op.
            let (status, v) = call(&app, "POST", "/annotations", Some(body)).await;
            assert_eq!((status, v["duplicate"].as_bool()), (StatusCode::OK, Some(true)));
            let flipped = json!({"set_id": set_id, "chosen_index": rejected, "rejected_index": chosen, "annotator": "a"});
            let (status, _) = call(&app, "POST", "/annotations", Some(flipped)).await;
            assert_eq!(status, StatusCode::OK);
        }
    }
    let other = json!({"set_id": set_id, "chosen_index": 0, "rejected_index": 1, "annotator": "b"});
    assert_eq!(call(&app, "POST", "/annotations", Some(other)).await.0, StatusCode::CREATED);
    let (_, bytes) = call_raw(&app, "GET", "/annotations/export", None, None).await;
    assert_eq!(parse_preferences(std::str::from_utf8(&bytes).unwrap()).unwrap().len(), 11);
}

#[tokio::test]
async fn annotation_invariants_are_enforced() {
    let app = short_set_app();
    let (id, turn) = one_turn(&app).await;
    let set_id = turn["set_id"].as_str().unwrap();
    let post = |chosen: i64, rejected: i64, annotator: &str| {
        json!({"set_id": set_id, "chosen_index": chosen, "rejected_index": rejected, "annotator": annotator})
    };
    assert_eq!(call(&app, "POST", "/annotations", Some(post(1, 1, "a"))).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "POST", "/annotations", Some(post(0, 4, "a"))).await.0, StatusCode::CONFLICT);
    assert_eq!(call(&app, "POST", "/annotations", Some(post(0, 7, "a"))).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "POST", "/annotations", Some(post(0, 1, " "))).await.0, StatusCode::BAD_REQUEST);
    let unknown = json!({"set_id": "missing", "chosen_index": 0, "rejected_index": 1, "annotator": "a"});
    assert_eq!(call(&app, "POST", "/annotations", Some(unknown)).await.0, StatusCode::NOT_FOUND);
    let wrong_session =
        json!({"session_id": format!("{id}x"), "set_id": set_id, "chosen_index": 0, "rejected_index": 1, "annotator": "a"});
    assert_eq!(call(&app, "POST", "/annotations", Some(wrong_session)).await.0, StatusCode::BAD_REQUEST);
    let (_, bytes) = call_raw(&app, "GET", "/annotations/export", None, None).await;
    assert!(bytes.is_empty());
}

#[tokio::test]
async fn annotation_log_file_is_appended_and_reloaded() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ann.jsonl");
    let state = AppState::new(
        backends(Arc::new(SyntheticChat::new(1))),
        config(StrategyKind::Pc, model_selector(), None),
        AnnotationLog::open(&path).unwrap(),
    );
    let app = router(state);
    let (_, turn) = one_turn(&app).await;
    let body = json!({"set_id": turn["set_id"], "chosen_index": 0, "rejected_index": 2, "annotator": "a"});
    assert_eq!(call(&app, "POST", "/annotations", Some(body)).await.0, StatusCode::CREATED);
    let reloaded = AnnotationLog::open(&path).unwrap();
    assert_eq!(reloaded.len(), 1);
    assert_eq!(reloaded.pairs()[0].chosen, turn["candidates"][0]["text"].as_str().unwrap());
}

#[tokio::test]
async fn bearer_token_guards_everything_but_healthz() {
    let app = app_with(Arc::new(SyntheticChat::new(1)), StrategyKind::Pc, Some("s3cret"));
    assert_eq!(call_raw(&app, "POST", "/sessions", None, None).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(call_raw(&app, "POST", "/sessions", None, Some("wrong")).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(call_raw(&app, "POST", "/sessions", None, Some("s3cret")).await.0, StatusCode::CREATED);
    assert_eq!(call_raw(&app, "GET", "/healthz", None, None).await.0, StatusCode::OK);
}

#[tokio::test]
async fn schemas_are_published() {
    let app = mock_app();
    for (name, _) in SCHEMAS {
        let (status, v) = call(&app, "GET", &format!("/schemas/{name}.json"), None).await;
        assert_eq!(status, StatusCode::OK);
        assert!(v["$schema"].is_string());
    }
    assert_eq!(call(&app, "GET", "/schemas/nothing", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn concurrent_sessions_all_complete() {
    let app = mock_app();
    let mut handles = Vec::new();
    for k in 0..6 {
        let app = app.clone();
        handles.push(tokio::spawn(async move {
            let id = new_session(&app).await;
            for t in 0..2 {
                let (status, _) =
                    call(&app, "POST", &format!("/sessions/{id}/message"), Some(json!({"text": format!("msg {k} {t}")}))).await;
                assert_eq!(status, StatusCode::OK);
            }
            id
        }));
    }
    for h in handles {
        let id = h.await.unwrap();
        let (_, state) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
        assert_eq!(state["context"].as_array().unwrap().len(), 4);
    }
}
