use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde_json::Value;
use think3d::toolkit::recon::{ReconRequest, ReconResponse};
use think3d::toolkit::{
    reconstructor_from_config, Action, BridgeClient, BridgeConfig, ImagePayload, ReconError, Reconstructor, ToolOutput, ToolResult, Toolkit,
    ToolkitConfig,
};

fn fixture(name: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/bridge").join(name)).unwrap()
}

fn images() -> Vec<ImagePayload> {
    vec![ImagePayload::new("a.png", (0..16).collect()), ImagePayload::new("b.png", b"\x89PNG\r\n\x1a\n\0\0\0\0\0".to_vec())]
}

struct Mock {
    url: String,
    hits: Arc<AtomicUsize>,
    bodies: Arc<Mutex<Vec<Value>>>,
}

/// Answers `/reconstruct` with `status` for the first `fail_first` calls and
/// with the golden response afterwards.
fn mock_bridge(fail_first: usize, status: u16) -> Mock {
    use axum::routing::post;
    let hits = Arc::new(AtomicUsize::new(0));
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let (h, b) = (hits.clone(), bodies.clone());
    let golden = fixture("golden_response.json");
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let app = axum::Router::new()
                .route(
                    "/reconstruct",
                    post(move |axum::Json(body): axum::Json<Value>| {
                        let (h, b, golden) = (h.clone(), b.clone(), golden.clone());
                        async move {
                            b.lock().unwrap().push(body);
                            if h.fetch_add(1, Ordering::SeqCst) < fail_first {
                                (axum::http::StatusCode::from_u16(status).unwrap(), "unavailable".to_owned())
                            } else {
                                (axum::http::StatusCode::OK, golden)
                            }
                        }
                    }),
                )
                .layer(axum::extract::DefaultBodyLimit::disable());
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    Mock { url: format!("http://{}", rx.recv().unwrap()), hits, bodies }
}

fn client(url: &str, retries: usize) -> BridgeClient {
    BridgeClient::new(url, BridgeConfig { retries, backoff_secs: 0.01, timeout_secs: 10.0, ..Default::default() }).unwrap()
}

#[test]
fn golden_response_decodes() {
    let resp: ReconResponse = serde_json::from_str(&fixture("golden_response.json")).unwrap();
    let expected: Value = serde_json::from_str(&fixture("golden_expected.json")).unwrap();
    let scene = resp.into_scene(&images()).unwrap();
    assert_eq!(scene.view_count(), 2);
    let pos = expected["positions"].as_array().unwrap();
    assert_eq!(scene.points.len(), pos.len());
    for (i, p) in scene.points.iter().enumerate() {
        for k in 0..3 {
            assert_eq!(p.position[k] as f64, pos[i][k].as_f64().unwrap());
            assert_eq!(p.color[k] as u64, expected["colors"][i][k].as_u64().unwrap());
        }
        assert_eq!(p.confidence as f64, expected["confidences"][i].as_f64().unwrap());
    }
    for (cam, c) in scene.cameras.iter().zip(expected["centers"].as_array().unwrap()) {
        for k in 0..3 {
            assert_eq!(cam.center[k], c[k].as_f64().unwrap());
        }
    }
}

#[test]
fn request_encoding_matches_golden() {
    let req = serde_json::to_value(ReconRequest::new(&images(), Some(5000))).unwrap();
    assert_eq!(req, serde_json::from_str::<Value>(&fixture("golden_request.json")).unwrap());
}

#[test]
fn response_round_trips_through_wire_format() {
    let resp: ReconResponse = serde_json::from_str(&fixture("golden_response.json")).unwrap();
    let scene = resp.clone().into_scene(&images()).unwrap();
    let again = ReconResponse::from_scene(&scene, resp.model.clone());
    assert_eq!(again.points.positions, resp.points.positions);
    assert_eq!(again.points.confidences, resp.points.confidences);
    assert_eq!(again.cameras, resp.cameras);
    assert_eq!(again.into_scene(&images()).unwrap(), scene);
}

#[test]
fn retries_server_errors_then_succeeds() {
    let mock = mock_bridge(2, 503);
    let c = client(&mock.url, 2);
    let rec = c.reconstruct(&images()).unwrap();
    assert!(!rec.cached);
    assert_eq!(rec.scene.points.len(), 6);
    assert_eq!(mock.hits.load(Ordering::SeqCst), 3);
    let bodies = mock.bodies.lock().unwrap();
    assert!(bodies.iter().all(|b| *b == bodies[0]));
    assert_eq!(bodies[0]["images"][1]["name"], "b.png");
}

#[test]
fn gives_up_after_retry_budget() {
    let mock = mock_bridge(10, 500);
    match client(&mock.url, 1).reconstruct(&images()) {
        Err(ReconError::Transport { attempts: 2, .. }) => {}
        other => panic!("unexpected {:?}", other.map(|r| r.cached)),
    }
    assert_eq!(mock.hits.load(Ordering::SeqCst), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let mock = mock_bridge(10, 422);
    match client(&mock.url, 3).reconstruct(&images()) {
        Err(ReconError::Rejected { status: 422, body }) => assert_eq!(body, "unavailable"),
        other => panic!("unexpected {:?}", other.map(|r| r.cached)),
    }
    assert_eq!(mock.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn image_count_mismatch_is_a_contract_error() {
    let mock = mock_bridge(0, 200);
    let three = [images(), vec![ImagePayload::new("c.png", vec![1])]].concat();
    assert!(matches!(client(&mock.url, 0).reconstruct(&three), Err(ReconError::Contract(_))));
}

#[test]
fn toolkit_uses_bridge_and_cache() {
    let mock = mock_bridge(0, 200);
    let cache = tempfile::tempdir().unwrap();
    let mut cfg = ToolkitConfig { cache_dir: Some(cache.path().to_path_buf()), ..Default::default() };
    cfg.bridge.url = Some(mock.url.clone());
    cfg.bridge.backoff_secs = 0.01;
    let kit = Toolkit::new(cfg.clone(), reconstructor_from_config(&cfg).unwrap());
    let mut cached = Vec::new();
    for _ in 0..2 {
        let id = kit.create_session(images()).unwrap();
        match kit.handle_action(&id, Action::Reconstruct) {
            ToolResult::Ok(ToolOutput::Reconstruct { cameras, cached: c, .. }) => {
                assert_eq!(cameras, 2);
                cached.push(c);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
    assert_eq!(cached, vec![false, true]);
    assert_eq!(mock.hits.load(Ordering::SeqCst), 1);
}

fn keys(v: &Value) -> Vec<String> {
    let mut k: Vec<String> = v.as_object().unwrap().keys().cloned().collect();
    k.sort();
    k
}

#[test]
fn wire_types_match_schema_properties() {
    let schema: Value = serde_json::from_str(think3d::toolkit::recon::RECON_RESPONSE_SCHEMA).unwrap();
    let resp: ReconResponse = serde_json::from_str(&fixture("golden_response.json")).unwrap();
    let ours = serde_json::to_value(&resp).unwrap();
    assert_eq!(keys(&ours), keys(&schema["properties"]));
    assert_eq!(keys(&ours["cameras"][0]), keys(&schema["properties"]["cameras"]["items"]["properties"]));
    assert_eq!(keys(&ours["points"]), keys(&schema["properties"]["points"]["properties"]));
}
