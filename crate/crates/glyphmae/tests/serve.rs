mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use common::*;
use glyphmae::commands::{cmd_index, cmd_retrieve, read_input};
use glyphmae::engine::Engine;
use glyphmae::imageio::decode_gray;
use glyphmae::index_file::{index_path, load_index};
use glyphmae::serve::{router, GenerateResponse, RankedReference, RetrieveResponse, Shared};
use glyphmae_core::retrieval::retrieve_reference;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::sync::RwLock;
use tower::ServiceExt;

fn state(cfg: &glyphmae::config::RunConfig) -> Shared {
    Arc::new(RwLock::new(Some(Arc::new(Engine::load(cfg, None).unwrap()))))
}

async fn call(state: &Shared, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(v) => req.body(Body::from(v.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let res = router(state.clone()).oneshot(req).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn b64(path: &Path) -> String {
    STANDARD.encode(std::fs::read(path).unwrap())
}

/// Every file under `dir` with its bytes.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[tokio::test]
async fn endpoints_follow_the_contract() {
    let (dir, cfg) = trained(6, 30);
    cmd_index(&cfg, None).unwrap();
    let before = snapshot(&cfg.output_dir);
    let st = state(&cfg);

    let (s, body) = call(&st, "GET", "/health", None).await;
    assert_eq!((s, body.as_slice()), (StatusCode::OK, b"ok".as_slice()));

    let (s, body) = call(&st, "GET", "/styles", None).await;
    assert_eq!(s, StatusCode::OK);
    let styles: Vec<String> = serde_json::from_slice(&body).unwrap();
    assert_eq!(styles, (0..6).map(|i| format!("f{i:02}")).collect::<Vec<_>>());

    let content = b64(&cfg.data.data_dir.join("f00/4e03.png"));
    let style = b64(&cfg.data.data_dir.join("f04/4e07.png"));
    for req in [
        json!({"content": content, "style": style}),
        json!({"content": content, "style": "f04"}),
        json!({"content": content, "style_id": "f04", "use_rag": true}),
    ] {
        let (s, body) = call(&st, "POST", "/generate", Some(req.clone())).await;
        assert_eq!(s, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
        let r: GenerateResponse = serde_json::from_slice(&body).unwrap();
        let img = decode_gray(&STANDARD.decode(&r.image).unwrap()).unwrap();
        assert_eq!((img.width, img.height), (16, 16));
        let by_id = req["style"] == "f04" || req["style_id"] == "f04";
        assert_eq!(r.reference_charcode.is_some(), by_id, "{req}");
    }

    let blob = dir.path().join("blob.png");
    blob_png(&blob, 40);
    let (s, _) = call(&st, "POST", "/generate", Some(json!({"content": b64(&blob), "style_id": "f01", "use_rag": true}))).await;
    assert_eq!(s, StatusCode::OK);

    let bad = [
        ("/generate", json!({"content": "%%%", "style_id": "f01"}), StatusCode::BAD_REQUEST),
        ("/generate", json!({"content": STANDARD.encode(b"not a png"), "style_id": "f01"}), StatusCode::BAD_REQUEST),
        ("/generate", json!({"content": content}), StatusCode::BAD_REQUEST),
        ("/generate", json!({"content": content, "style": style, "use_rag": true}), StatusCode::BAD_REQUEST),
        ("/generate", json!({"content": content, "style_id": "f01", "extra": 1}), StatusCode::BAD_REQUEST),
        ("/generate", json!({"content": content, "style_id": "nope"}), StatusCode::NOT_FOUND),
        ("/generate", json!({"content": content, "style_id": "nope", "use_rag": true}), StatusCode::NOT_FOUND),
        ("/retrieve", json!({"content": content, "style_id": "f01", "k": 0}), StatusCode::BAD_REQUEST),
        ("/retrieve", json!({"style_id": "f01"}), StatusCode::BAD_REQUEST),
        ("/retrieve", json!({"content": content, "style_id": "nope"}), StatusCode::NOT_FOUND),
    ];
    for (uri, req, want) in bad {
        let (s, body) = call(&st, "POST", uri, Some(req.clone())).await;
        assert_eq!(s, want, "{uri} {req}");
        let v: Value = serde_json::from_slice(&body).unwrap();
        assert!(v["error"].is_string());
    }
    let raw = Request::builder().method("POST").uri("/generate").header("content-type", "application/json").body(Body::from("{")).unwrap();
    assert_eq!(router(st.clone()).oneshot(raw).await.unwrap().status(), StatusCode::BAD_REQUEST);

    assert_eq!(snapshot(&cfg.output_dir), before, "serving must not touch run artifacts");
}

#[tokio::test]
async fn model_endpoints_answer_503_until_loaded() {
    let st: Shared = Arc::new(RwLock::new(None));
    assert_eq!(call(&st, "GET", "/health", None).await.0, StatusCode::OK);
    assert_eq!(call(&st, "GET", "/styles", None).await.0, StatusCode::SERVICE_UNAVAILABLE);
    let req = json!({"content": "", "style_id": "x"});
    assert_eq!(call(&st, "POST", "/generate", Some(req.clone())).await.0, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(call(&st, "POST", "/retrieve", Some(req)).await.0, StatusCode::SERVICE_UNAVAILABLE);
}

/// Identical charcodes in order; distances agree up to the JSON float hop.
fn same_ranking(a: &[RankedReference], b: &[RankedReference]) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert_eq!(x.charcode, y.charcode);
        assert!((x.distance - y.distance).abs() <= 1e-12 * y.distance.max(1.0), "{x:?} vs {y:?}");
    }
}

#[tokio::test]
async fn retrieve_matches_the_cli_and_core_on_a_500_glyph_index() {
    let (_dir, cfg) = trained(6, 500);
    cmd_index(&cfg, None).unwrap();
    let engine = Engine::load(&cfg, None).unwrap();
    let index = load_index(&index_path(&cfg.index_dir(), "f02")).unwrap();
    assert_eq!(index.len(), 500);
    let st = state(&cfg);
    for code in ["4e00", "4e10", "4e77", "4f00", "4ff3"] {
        let path = cfg.data.data_dir.join("f05").join(format!("{code}.png"));
        let (s, body) = call(&st, "POST", "/retrieve", Some(json!({"content": b64(&path), "style_id": "f02", "k": 3}))).await;
        assert_eq!(s, StatusCode::OK);
        let api = serde_json::from_slice::<RetrieveResponse>(&body).unwrap().references;
        assert_eq!(api.len(), 3);

        let cli: Vec<RankedReference> = cmd_retrieve(&cfg, None, &path, "f02", 3)
            .unwrap()
            .into_iter()
            .map(|r| RankedReference {
                charcode: r.charcode,
                distance: r.distance,
            })
            .collect();
        same_ranking(&api, &cli);

        let img = read_input(&path, 16, "input").unwrap();
        let core: Vec<RankedReference> = retrieve_reference(&img, &index, 3, &engine.model, &engine.store)
            .unwrap()
            .into_iter()
            .map(|h| RankedReference {
                charcode: h.charcode.hex(),
                distance: h.distance,
            })
            .collect();
        same_ranking(&api, &core);
    }
}

async fn raw_get(port: u16, path: &str) -> String {
    let mut s = tokio::net::TcpStream::connect(("127.0.0.1", port)).await.unwrap();
    s.write_all(format!("GET {path} HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").as_bytes())
        .await
        .unwrap();
    let mut out = String::new();
    s.read_to_string(&mut out).await.unwrap();
    out
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn server_binds_before_the_model_is_ready() {
    let (_dir, cfg) = trained(6, 30);
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let (tx, rx) = std::sync::mpsc::channel::<()>();
    let load_cfg = cfg.clone();
    tokio::spawn(glyphmae::serve::serve(([127, 0, 0, 1], port).into(), move || {
        rx.recv().ok();
        Engine::load(&load_cfg, None)
    }));
    let mut health = String::new();
    for _ in 0..100 {
        if tokio::net::TcpStream::connect(("127.0.0.1", port)).await.is_ok() {
            health = raw_get(port, "/health").await;
            break;
        }
        tokio::time::sleep(std::time::Duration::from_millis(20)).await;
    }
    assert!(health.starts_with("HTTP/1.1 200"), "{health}");
    assert!(raw_get(port, "/styles").await.starts_with("HTTP/1.1 503"));
    tx.send(()).unwrap();
    let mut ready = false;
    for _ in 0..200 {
        if raw_get(port, "/styles").await.starts_with("HTTP/1.1 200") {
            ready = true;
            break;
        }
        tokio::time::sleep(std::time::Duration::from_millis(20)).await;
    }
    assert!(ready, "engine never became ready");
}
