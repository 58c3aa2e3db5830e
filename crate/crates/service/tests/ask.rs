use std::path::Path;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use trag_core::bm25::{Bm25Index, Bm25Params};
use trag_core::corpus::load_corpus;
use trag_core::dense::{build_dense, DenseConfig, LocalProvider};
use trag_core::linearize::{segment_corpus, DEFAULT_BUDGET};
use trag_core::rag::{Generator, Prompt, RagConfig, RagError, TokenId, Vocab};
use trag_core::store::{DenseMeta, IndexDir, IndexMeta, ProviderSpec, STORE_VERSION};
use trag_core::tokenize::SimpleTokenizer;
use trag_service::{
    load_generator, router, AppState, AskResponse, GeneratorSpec, RetrieverKind, Snapshot, DEFAULT_CELL_THRESHOLD,
};

const QUESTION: &str = "Who played the first Phantom of the Opera?";
const PHANTOMS: [&str; 4] = ["Michael Crawford", "Lon Chaney", "Claude Rains", "Gerard Butler"];

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures/phantom")
        .join(name)
}

fn phantom_index() -> IndexDir {
    let corpus = load_corpus(fixture("tables.jsonl")).unwrap();
    let segments = segment_corpus(&corpus, DEFAULT_BUDGET, &SimpleTokenizer).unwrap();
    let params = Bm25Params { k1: 0.9, b: 0.4 };
    let bm25 = Bm25Index::build(&segments, params).unwrap();
    let config = DenseConfig::default();
    let dense = build_dense(&segments, &LocalProvider::new(64).unwrap(), &config).unwrap();
    IndexDir {
        meta: IndexMeta {
            version: STORE_VERSION,
            segment_budget: DEFAULT_BUDGET,
            tokenizer: "simple".into(),
            n_tables: corpus.len(),
            n_segments: segments.len(),
            bm25: Some(params),
            dense: Some(DenseMeta {
                provider: ProviderSpec::Local { dim: 64 },
                config,
            }),
        },
        corpus,
        segments,
        bm25: Some(bm25),
        dense: Some(dense),
    }
}

fn snapshot(retriever: RetrieverKind, generator: Box<dyn Generator + Send + Sync>) -> Snapshot {
    Snapshot {
        index: phantom_index(),
        generator,
        retriever,
        rag: RagConfig::default(),
        cell_threshold: DEFAULT_CELL_THRESHOLD,
    }
}

fn toy() -> Box<dyn Generator + Send + Sync> {
    load_generator(&GeneratorSpec::Toy {
        memory: Some(fixture("memory.jsonl")),
    })
    .unwrap()
}

async fn post(state: AppState, body: &str) -> (StatusCode, Value) {
    let req = Request::post("/ask")
        .header("content-type", "application/json")
        .body(Body::from(body.to_owned()))
        .unwrap();
    let resp = router(state, None).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn check_contract(resp: &AskResponse, k: usize) {
    assert!(!resp.answers.is_empty() && resp.answers.len() <= k);
    let total: f64 = resp.answers.iter().map(|a| a.score).sum();
    assert!(total <= 1.0 + 1e-12, "scores sum to {total}");
    for w in resp.answers.windows(2) {
        assert!(w[0].score >= w[1].score);
    }
    for a in &resp.answers {
        assert!(a.score > 0.0 && a.score <= 1.0);
        let table = resp
            .tables
            .iter()
            .find(|t| t.id() == a.table_id)
            .unwrap_or_else(|| panic!("{} missing from tables", a.table_id));
        for &(r, c, w) in &a.cells {
            assert!(
                r < table.n_rows() && c < table.n_cols(),
                "cell ({r}, {c}) out of bounds"
            );
            assert!((DEFAULT_CELL_THRESHOLD..=1.0).contains(&w));
        }
    }
}

#[tokio::test]
async fn default_k_returns_at_most_four_phantoms() {
    let state = AppState::ready(snapshot(RetrieverKind::Bm25, toy()));
    let (status, body) = post(state, &json!({ "question": QUESTION }).to_string()).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let resp: AskResponse = serde_json::from_value(body).unwrap();
    check_contract(&resp, 4);
    assert!(
        PHANTOMS.contains(&resp.answers[0].text.as_str()),
        "{:?}",
        resp.answers[0]
    );
    let top = &resp.answers[0];
    let table = resp.tables.iter().find(|t| t.id() == top.table_id).unwrap();
    let (r, c, w) = top.cells[0];
    assert_eq!(w, 1.0);
    assert_eq!(table.cell(r, c), Some(top.text.as_str()));
}

#[tokio::test]
async fn each_phantom_answer_points_at_its_own_production() {
    let state = AppState::ready(snapshot(RetrieverKind::Bm25, toy()));
    let (_, body) = post(state, &json!({ "question": QUESTION, "k": 10 }).to_string()).await;
    let resp: AskResponse = serde_json::from_value(body).unwrap();
    check_contract(&resp, 10);
    for a in resp.answers.iter().filter(|a| PHANTOMS.contains(&a.text.as_str())) {
        let table = resp.tables.iter().find(|t| t.id() == a.table_id).unwrap();
        assert!(
            table.rows().iter().flatten().any(|cell| *cell == a.text),
            "{} attributed to {}",
            a.text,
            a.table_id
        );
    }
    let distinct: std::collections::HashSet<&str> = resp
        .answers
        .iter()
        .map(|a| a.text.as_str())
        .filter(|t| PHANTOMS.contains(t))
        .collect();
    assert!(distinct.len() >= 2, "{:?}", resp.answers);
}

#[tokio::test]
async fn dense_retrieval_serves_the_same_contract() {
    let state = AppState::ready(snapshot(RetrieverKind::Dense, toy()));
    let (status, body) = post(state, &json!({ "question": QUESTION, "k": 3 }).to_string()).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    check_contract(&serde_json::from_value(body).unwrap(), 3);
}

#[tokio::test]
async fn bad_requests_are_400() {
    let state = AppState::ready(snapshot(RetrieverKind::Bm25, toy()));
    for body in [
        json!({ "question": "" }).to_string(),
        json!({ "question": "   " }).to_string(),
        json!({ "question": QUESTION, "k": 0 }).to_string(),
        json!({ "question": QUESTION, "k": 51 }).to_string(),
        json!({ "question": QUESTION, "extra": 1 }).to_string(),
        json!({ "k": 2 }).to_string(),
        "not json".to_string(),
    ] {
        let (status, v) = post(state.clone(), &body).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert!(v["error"].is_string(), "{body}: {v}");
    }
}

#[tokio::test]
async fn unmatched_question_gives_empty_answers() {
    let state = AppState::ready(snapshot(RetrieverKind::Bm25, toy()));
    let (status, body) = post(state, &json!({ "question": "zzyzx quux" }).to_string()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({ "answers": [], "tables": [] }));
}

#[tokio::test]
async fn not_ready_is_503_and_health_reports_it() {
    let (status, v) = post(AppState::not_ready(), &json!({ "question": QUESTION }).to_string()).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert!(v["error"].is_string());

    let resp = router(AppState::not_ready(), None)
        .oneshot(Request::get("/health").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let v: Value = serde_json::from_slice(&resp.into_body().collect().await.unwrap().to_bytes()).unwrap();
    assert_eq!(v, json!({ "status": "ok", "indexes_loaded": false }));
}

struct Broken(Vocab);

impl Generator for Broken {
    fn vocab(&self) -> &Vocab {
        &self.0
    }

    fn next_token_dist(&self, _: &Prompt, _: &[TokenId]) -> Result<Vec<f64>, RagError> {
        Err(RagError::Generator("secret backend detail".into()))
    }
}

#[tokio::test]
async fn generator_failure_is_an_opaque_500() {
    let vocab = Vocab::new(vec!["x".to_string()], "</s>").unwrap();
    let state = AppState::ready(snapshot(RetrieverKind::Bm25, Box::new(Broken(vocab))));
    let (status, v) = post(state, &json!({ "question": QUESTION }).to_string()).await;
    assert_eq!(status, StatusCode::INTERNAL_SERVER_ERROR);
    assert_eq!(v["error"], "internal error");
    assert!(v["id"].as_str().is_some_and(|id| id.len() == 16));
    assert!(!v.to_string().contains("secret"));
}

#[tokio::test]
async fn cors_origin_is_echoed() {
    let app = router(AppState::not_ready(), Some("http://localhost:5173"));
    let resp = app
        .oneshot(
            Request::get("/health")
                .header("origin", "http://localhost:5173")
                .body(Body::empty())
                .unwrap(),
        )
        .await
        .unwrap();
    assert_eq!(
        resp.headers().get("access-control-allow-origin").unwrap(),
        "http://localhost:5173"
    );
}
