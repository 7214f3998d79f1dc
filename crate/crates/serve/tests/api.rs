use std::io::Cursor;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use image::{ImageFormat, Rgb, RgbImage};
use serde_json::Value;
use tower::ServiceExt;

use ycd_core::data::preprocess_bytes;
use ycd_core::model::{build_arch, forward, ModelBundle, FORMAT_VERSION};
use ycd_core::nnops::{count_costs, Dense};
use ycd_serve::{router, AppState, ClassifyResponse, ModelInfo, DEFAULT_MAX_BODY_BYTES, MIN_MAX_BODY_BYTES};

const LABELS: [&str; 4] = ["100", "250", "500", "1000"];

fn bundle() -> ModelBundle {
    let arch = build_arch(0.25, 1.0, 48).unwrap();
    let labels = LABELS.iter().map(|s| s.to_string()).collect();
    let base = ModelBundle::initialize(labels, arch, 7).unwrap();
    let (e, k) = (base.arch().embedding_dim, LABELS.len());
    let weights = (0..e * k).map(|i| ((i * 37 % 101) as f32 / 101.0 - 0.5) * 4.0).collect();
    let head = Dense::new(e, k, weights, vec![0.1, -0.2, 0.05, 0.0]).unwrap();
    base.with_head(head).unwrap()
}

fn app_with(model: Option<ModelBundle>, top_k: Option<usize>, limit: usize) -> (AppState, Router) {
    let state = AppState::new(model, top_k, limit);
    let app = router(state.clone(), &["*".to_string()]);
    (state, app)
}

fn app() -> Router {
    app_with(Some(bundle()), None, DEFAULT_MAX_BODY_BYTES).1
}

fn png(seed: u8) -> Vec<u8> {
    let img = RgbImage::from_fn(40, 30, |x, y| Rgb([(x * 6) as u8 ^ seed, (y * 8) as u8, seed.wrapping_mul(3)]));
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).unwrap();
    buf.into_inner()
}

fn jpeg() -> Vec<u8> {
    let img = RgbImage::from_fn(64, 64, |x, y| Rgb([x as u8 * 4, y as u8 * 4, 90]));
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Jpeg).unwrap();
    buf.into_inner()
}

fn post(content_type: Option<&str>, body: Vec<u8>) -> Request<Body> {
    let mut b = Request::post("/v1/classify");
    if let Some(ct) = content_type {
        b = b.header(header::CONTENT_TYPE, ct);
    }
    b.body(Body::from(body)).unwrap()
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn error_code(body: &Value) -> &str {
    let err = &body["error"];
    assert!(err["message"].is_string(), "missing message in {body}");
    err["code"].as_str().expect("error code")
}

#[tokio::test]
async fn classify_matches_direct_forward_bitwise() {
    let b = bundle();
    let app = app();
    for (ct, bytes) in [("image/png", png(3)), ("image/jpeg", jpeg())] {
        let (status, body) = send(&app, post(Some(ct), bytes.clone())).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let resp: ClassifyResponse = serde_json::from_value(body).unwrap();
        assert!(resp.latency_ms >= 0.0);
        assert_eq!(resp.predictions.len(), 4);

        let image = preprocess_bytes(&bytes, b.arch().effective_resolution()).unwrap();
        let direct = forward(&b, &image).unwrap();
        for p in &resp.predictions {
            let i = LABELS.iter().position(|l| *l == p.label).unwrap();
            assert_eq!(p.probability.to_bits(), direct.probs[i].to_bits());
        }
        assert!(resp.predictions.windows(2).all(|w| w[0].probability >= w[1].probability));
        let sum: f64 = resp.predictions.iter().map(|p| p.probability as f64).sum();
        assert!((sum - 1.0).abs() <= 1e-4, "sum {sum}");
    }
}

#[tokio::test]
async fn identical_requests_identical_predictions() {
    let app = app();
    let (_, a) = send(&app, post(Some("image/png"), png(9))).await;
    let (_, b) = send(&app, post(Some("image/png"), png(9))).await;
    assert_eq!(a["predictions"], b["predictions"]);

    let tasks: Vec<_> = (0..6)
        .map(|_| {
            let app = app.clone();
            tokio::spawn(async move { send(&app, post(Some("image/png"), png(9))).await.1 })
        })
        .collect();
    for t in tasks {
        assert_eq!(t.await.unwrap()["predictions"], a["predictions"]);
    }
}

#[tokio::test]
async fn top_k_truncates() {
    for k in 1..=6 {
        let (_, app) = app_with(Some(bundle()), Some(k), DEFAULT_MAX_BODY_BYTES);
        let (status, body) = send(&app, post(Some("image/png"), png(1))).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(body["predictions"].as_array().unwrap().len(), k.min(4));
    }
}

#[tokio::test]
async fn content_type_is_checked() {
    let app = app();
    for ct in [None, Some("text/plain"), Some("application/octet-stream"), Some("image/gif")] {
        let (status, body) = send(&app, post(ct, png(1))).await;
        assert_eq!(status, StatusCode::UNSUPPORTED_MEDIA_TYPE);
        assert_eq!(error_code(&body), "unsupported_media_type");
    }
    // parameters and case are ignored
    let (status, _) = send(&app, post(Some("Image/PNG; charset=binary"), png(1))).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn bad_bodies_are_400_with_codes() {
    let (_, app) = app_with(Some(bundle()), None, MIN_MAX_BODY_BYTES);
    let (status, body) = send(&app, post(Some("image/png"), b"definitely not a png".to_vec())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(&body), "undecodable_image");

    let (status, body) = send(&app, post(Some("image/jpeg"), Vec::new())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(&body), "empty_body");

    let (status, body) = send(&app, post(Some("image/png"), vec![0u8; MIN_MAX_BODY_BYTES + 1])).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(&body), "body_too_large");

    // rejected up front from the declared length
    let req = Request::post("/v1/classify")
        .header(header::CONTENT_TYPE, "image/png")
        .header(header::CONTENT_LENGTH, (MIN_MAX_BODY_BYTES * 4).to_string())
        .body(Body::from(vec![0u8; MIN_MAX_BODY_BYTES * 4]))
        .unwrap();
    let (status, body) = send(&app, req).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(&body), "body_too_large");
}

#[tokio::test]
async fn no_model_means_503_but_healthy() {
    let (_, app) = app_with(None, None, DEFAULT_MAX_BODY_BYTES);
    let (status, body) = send(&app, get("/v1/health")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, serde_json::json!({"status": "ok", "ready": false}));

    for uri in ["/v1/labels", "/v1/model/info"] {
        let (status, body) = send(&app, get(uri)).await;
        assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
        assert_eq!(error_code(&body), "model_not_loaded");
    }
    let (status, body) = send(&app, post(Some("image/png"), png(1))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(error_code(&body), "model_not_loaded");
}

#[tokio::test]
async fn labels_info_health() {
    let b = bundle();
    let app = app();
    let (status, body) = send(&app, get("/v1/labels")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, serde_json::json!({"labels": LABELS}));

    let (status, body) = send(&app, get("/v1/model/info")).await;
    assert_eq!(status, StatusCode::OK);
    let info: ModelInfo = serde_json::from_value(body.clone()).unwrap();
    let costs = count_costs(&b.arch().with_head(4), 48);
    assert_eq!(info.macs, costs.total_macs);
    assert_eq!(info.params, costs.total_params);
    assert_eq!(info.input_resolution, 48);
    assert_eq!(info.format_version, FORMAT_VERSION);
    let keys: Vec<&str> = body.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys.len(), 4);

    let (_, body) = send(&app, get("/v1/health")).await;
    assert_eq!(body, serde_json::json!({"status": "ok", "ready": true}));
}

#[tokio::test]
async fn unknown_routes_and_methods_carry_error_bodies() {
    let app = app();
    let (status, body) = send(&app, get("/v2/nothing")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(error_code(&body), "not_found");

    let (status, body) = send(&app, get("/v1/classify")).await;
    assert_eq!(status, StatusCode::METHOD_NOT_ALLOWED);
    assert_eq!(error_code(&body), "method_not_allowed");
}

#[tokio::test]
async fn cors_headers_for_browser_clients() {
    let app = app();
    let req = Request::get("/v1/health")
        .header(header::ORIGIN, "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN], "*");

    let preflight = Request::options("/v1/classify")
        .header(header::ORIGIN, "http://localhost:5173")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .header(header::ACCESS_CONTROL_REQUEST_HEADERS, "content-type")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(preflight).await.unwrap();
    assert!(resp.status().is_success());
    let methods = resp.headers()[header::ACCESS_CONTROL_ALLOW_METHODS].to_str().unwrap();
    assert!(methods.contains("POST"));

    // restricted list
    let state = AppState::new(Some(bundle()), None, DEFAULT_MAX_BODY_BYTES);
    let app = router(state, &["http://allowed.example".to_string()]);
    let req = |origin: &str| {
        Request::get("/v1/health")
            .header(header::ORIGIN, origin)
            .body(Body::empty())
            .unwrap()
    };
    let ok = app.clone().oneshot(req("http://allowed.example")).await.unwrap();
    assert_eq!(ok.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN], "http://allowed.example");
    let denied = app.oneshot(req("http://other.example")).await.unwrap();
    assert!(denied.headers().get(header::ACCESS_CONTROL_ALLOW_ORIGIN).is_none());
}

#[tokio::test]
async fn request_counter_counts_classify_calls() {
    let (state, app) = app_with(Some(bundle()), None, DEFAULT_MAX_BODY_BYTES);
    for _ in 0..3 {
        send(&app, post(Some("image/png"), png(2))).await;
    }
    send(&app, get("/v1/health")).await;
    assert_eq!(state.request_count(), 3);
}

#[tokio::test]
async fn serves_over_real_http() {
    use tokio::io::{AsyncReadExt, AsyncWriteExt};
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app()).await.unwrap() });

    let mut stream = tokio::net::TcpStream::connect(addr).await.unwrap();
    let body = png(4);
    let head = format!(
        "POST /v1/classify HTTP/1.1\r\nHost: x\r\nContent-Type: image/png\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    );
    stream.write_all(head.as_bytes()).await.unwrap();
    stream.write_all(&body).await.unwrap();
    let mut out = String::new();
    stream.read_to_string(&mut out).await.unwrap();
    assert!(out.starts_with("HTTP/1.1 200"), "{out}");
    assert!(out.contains("\"predictions\""));
}
