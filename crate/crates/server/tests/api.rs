use std::sync::LazyLock;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use futures::{SinkExt, StreamExt};
use http_body_util::BodyExt;
use morphield::grid::GridSpec;
use morphield::mesh::NormalizationTransform;
use morphield::sdf::SdfGrid;
use morphield::session::{EditSession, FitSummary, SourceInfo};
use morphield::spline::{fit, FitOptions};
use morphield::Vec3;
use morphield_server::{decode_frame_header, router, AppState, REVISION_HEADER};
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

fn two_spheres() -> EditSession {
    static BASE: LazyLock<EditSession> = LazyLock::new(|| {
        let grid = SdfGrid::from_fn(GridSpec::new(32).unwrap(), |q| {
            let a = (q - Vec3::new(0.35, 0.5, 0.5)).norm() - 0.12;
            let b = (q - Vec3::new(0.65, 0.5, 0.5)).norm() - 0.12;
            a.min(b)
        });
        let (field, report) = fit(&grid, FitOptions::default());
        let summary = FitSummary {
            tol: 1e-8,
            iterations: report.iterations,
            relative_residual: report.relative_residual,
            converged: report.converged,
            max_interpolation_error: field.max_interpolation_error(&grid),
        };
        let source = SourceInfo {
            path: "two-spheres".into(),
            sha256: String::new(),
            vertices: 0,
            triangles: 0,
        };
        EditSession::from_field(field, source, NormalizationTransform::identity(), 0.1, summary).unwrap()
    });
    BASE.clone()
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    use tower::ServiceExt;
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, headers, bytes)
}

async fn call_json(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, _, bytes) = call(app, method, uri, body).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn render_body(extra: Value) -> Value {
    let mut body = json!({"width": 64, "height": 64, "camera": {"position": [0.5, 0.5, -1.0], "target": [0.5, 0.5, 0.5], "up": [0.0, 1.0, 0.0], "fov_y": 40.0}});
    body.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
    body
}

#[tokio::test]
async fn read_endpoints_pass_the_session_through() {
    let session = two_spheres();
    let app = router(AppState::new(session.clone(), None));
    let (status, meta) = call_json(&app, Method::GET, "/v1/meta", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(meta["revision"], 0);
    assert_eq!(meta["n"], 32);
    assert_eq!(meta["saddle_count"], 1);
    assert!(meta["fit"]["relative_residual"].as_f64().unwrap() <= 1e-8);

    let (_, saddles) = call_json(&app, Method::GET, "/v1/saddles", None).await;
    let list = saddles["saddles"].as_array().unwrap();
    assert_eq!(list.len(), session.saddles().len());
    let expected = serde_json::to_value(&session.saddles()[0]).unwrap();
    for (k, v) in expected.as_object().unwrap() {
        assert_eq!(&list[0][k], v, "{k}");
    }
    assert_eq!(list[0]["id"], 0);

    let (_, deformers) = call_json(&app, Method::GET, "/v1/deformers", None).await;
    assert_eq!(deformers["deformers"], json!([]));
    let (status, err) = call_json(&app, Method::GET, "/v1/nowhere", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["error"]["code"], "not_found");
}

#[tokio::test]
async fn edits_bump_revision_and_errors_leave_state_alone() {
    let state = AppState::new(two_spheres(), None);
    let app = router(state.clone());
    let (status, added) = call_json(&app, Method::POST, "/v1/deformers", Some(json!({"op": "add_topology_deformer", "saddle": 0}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(added["revision"], 1);
    assert_eq!(added["deformer"], 1);
    assert_eq!(added["current"]["kind"], "topology");
    assert!(added["changed"].is_array());

    let bad: [(Method, &str, Option<Value>, StatusCode, &str); 8] = [
        (Method::POST, "/v1/deformers", Some(json!({"op": "add_topology_deformer", "saddle": 5})), StatusCode::NOT_FOUND, "unknown_saddle"),
        (Method::POST, "/v1/deformers", Some(json!({"op": "add_topology_deformer", "saddle": 0, "mu": -1.0})), StatusCode::UNPROCESSABLE_ENTITY, "invalid_argument"),
        (Method::POST, "/v1/deformers", Some(json!({"op": "remove", "id": 1})), StatusCode::UNPROCESSABLE_ENTITY, "invalid_argument"),
        (Method::POST, "/v1/deformers", Some(json!({"op": "explode"})), StatusCode::BAD_REQUEST, "malformed_request"),
        (Method::PATCH, "/v1/deformers/9", Some(json!({"rho": 1.0})), StatusCode::NOT_FOUND, "unknown_deformer"),
        (Method::PATCH, "/v1/deformers/1", Some(json!({"bogus": 1.0})), StatusCode::BAD_REQUEST, "malformed_request"),
        (Method::PATCH, "/v1/deformers/abc", Some(json!({"rho": 1.0})), StatusCode::BAD_REQUEST, "malformed_request"),
        (Method::DELETE, "/v1/deformers/9", None, StatusCode::NOT_FOUND, "unknown_deformer"),
    ];
    for (method, uri, body, want, code) in bad {
        let (status, err) = call_json(&app, method.clone(), uri, body.clone()).await;
        assert_eq!((status, err["error"]["code"].as_str().unwrap()), (want, code), "{method} {uri} {body:?}");
        assert!(!err["error"]["message"].as_str().unwrap().is_empty());
    }
    let (status, _, _) = call(&app, Method::POST, "/v1/deformers", None).await;
    assert!(status.is_client_error());
    assert_eq!(state.revision(), 1);

    let (status, retuned) = call_json(&app, Method::PATCH, "/v1/deformers/1", Some(json!({"rho": 3.375}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(retuned["revision"], 2);
    assert_eq!(retuned["current"]["beta"].as_f64().unwrap(), added["current"]["beta"].as_f64().unwrap() * 3.375 / 5.0);
    let (_, removed) = call_json(&app, Method::DELETE, "/v1/deformers/1", None).await;
    assert_eq!(removed["revision"], 3);
    assert!(removed["current"].is_null());
    let (_, undone) = call_json(&app, Method::POST, "/v1/undo", None).await;
    assert_eq!(undone["revision"], 4);
    assert_eq!(undone["current"], retuned["current"]);
    let (_, list) = call_json(&app, Method::GET, "/v1/deformers", None).await;
    assert_eq!(list["deformers"][0], retuned["current"]);
}

#[tokio::test]
async fn renders_are_deterministic_and_pinned_to_revisions() {
    let state = AppState::new(two_spheres(), None);
    let app = router(state.clone());
    let (status, h0, png0) = call(&app, Method::POST, "/v1/render", Some(render_body(json!({})))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(h0["content-type"], "image/png");
    assert_eq!(h0[REVISION_HEADER], "0");
    let (_, _, png1) = call(&app, Method::POST, "/v1/render", Some(render_body(json!({})))).await;
    assert_eq!(png0, png1);
    assert_eq!(&png0[..8], b"\x89PNG\r\n\x1a\n");

    let (_, _, frame0) = call(&app, Method::POST, "/v1/render", Some(render_body(json!({"format": "frame", "depth": true, "seq": 9})))).await;
    let (header, px) = decode_frame_header(&frame0).unwrap();
    assert_eq!((header.revision, header.width, header.height, header.seq), (0, 64, 64, 9));
    assert!(header.millis > 0.0);
    assert!(px.chunks(4).any(|p| p[3] == 255) && px.chunks(4).any(|p| p == [0, 0, 0, 0]));

    call_json(&app, Method::POST, "/v1/deformers", Some(json!({"op": "add_topology_deformer", "saddle": 0}))).await;
    let (_, h2, png2) = call(&app, Method::POST, "/v1/render", Some(render_body(json!({})))).await;
    assert_eq!(h2[REVISION_HEADER], "1");
    assert_ne!(png2, png0);
    let (_, h3, png3) = call(&app, Method::POST, "/v1/render", Some(render_body(json!({"revision": 0})))).await;
    assert_eq!(h3[REVISION_HEADER], "0");
    assert_eq!(png3, png0);

    let (status, err) = call_json(&app, Method::POST, "/v1/render", Some(render_body(json!({"revision": 77})))).await;
    assert_eq!((status, err["error"]["code"].as_str().unwrap()), (StatusCode::NOT_FOUND, "revision_unavailable"));
    let (status, err) = call_json(&app, Method::POST, "/v1/render", Some(render_body(json!({"width": 0})))).await;
    assert_eq!((status, err["error"]["code"].as_str().unwrap()), (StatusCode::UNPROCESSABLE_ENTITY, "invalid_argument"));
}

#[tokio::test]
async fn concurrent_edit_and_render_use_a_consistent_snapshot() {
    let state = AppState::new(two_spheres(), None);
    let app = router(state.clone());
    let render = call(&app, Method::POST, "/v1/render", Some(render_body(json!({}))));
    let edit = call_json(&app, Method::POST, "/v1/deformers", Some(json!({"op": "add_topology_deformer", "saddle": 0})));
    let ((_, headers, png), (_, added)) = tokio::join!(render, edit);
    assert_eq!(added["revision"], 1);
    let rev = headers[REVISION_HEADER].to_str().unwrap().to_string();
    let (_, _, again) = call(&app, Method::POST, "/v1/render", Some(render_body(json!({"revision": rev.parse::<u64>().unwrap()})))).await;
    assert_eq!(png, again);
}

#[tokio::test]
async fn export_and_save() {
    let dir = tempfile::tempdir().unwrap();
    let session_path = dir.path().join("s.json");
    let state = AppState::new(two_spheres(), Some(session_path.clone()));
    let app = router(state.clone());

    let (status, headers, obj) = call(&app, Method::GET, "/v1/export?res=24", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(headers[REVISION_HEADER], "0");
    let mesh = morphield::mesh::parse_obj(std::str::from_utf8(&obj).unwrap()).unwrap();
    assert_eq!(morphield::metrics::topology_counts(&mesh).component_count, 2);
    let (status, err) = call_json(&app, Method::GET, "/v1/export?res=2", None).await;
    assert_eq!((status, err["error"]["code"].as_str().unwrap()), (StatusCode::UNPROCESSABLE_ENTITY, "invalid_argument"));
    let (status, _) = call_json(&app, Method::GET, "/v1/export?res=abc", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    call_json(&app, Method::POST, "/v1/deformers", Some(json!({"op": "add_topology_deformer", "saddle": 0}))).await;
    let (status, saved) = call_json(&app, Method::POST, "/v1/session/save", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(saved["revision"], 1);
    let loaded = EditSession::load(&session_path).unwrap();
    assert_eq!(loaded.revision(), 1);
    assert_eq!(loaded.deformers().len(), 1);

    let other = dir.path().join("other.json");
    let (status, saved) = call_json(&app, Method::POST, "/v1/session/save", Some(json!({"path": other}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(saved["path"], json!(other));
    assert!(other.exists() && dir.path().join("other.coeff").exists());

    let bare = router(AppState::new(two_spheres(), None));
    let (status, err) = call_json(&bare, Method::POST, "/v1/session/save", None).await;
    assert_eq!((status, err["error"]["code"].as_str().unwrap()), (StatusCode::UNPROCESSABLE_ENTITY, "invalid_argument"));
}

#[tokio::test]
async fn frame_socket_streams_and_follows_revisions() {
    let state = AppState::new(two_spheres(), None);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = router(state.clone());
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/v1/frames")).await.unwrap();

    async fn next_binary(ws: &mut (impl StreamExt<Item = Result<Message, tokio_tungstenite::tungstenite::Error>> + Unpin)) -> Vec<u8> {
        loop {
            match ws.next().await.unwrap().unwrap() {
                Message::Binary(b) => return b.to_vec(),
                Message::Text(t) => panic!("unexpected error message {t}"),
                _ => {}
            }
        }
    }

    ws.send(Message::text(render_body(json!({"seq": 1})).to_string())).await.unwrap();
    let first = next_binary(&mut ws).await;
    let (h, px0) = decode_frame_header(&first).unwrap();
    assert_eq!((h.revision, h.seq, h.width), (0, 1, 64));
    let px0 = px0.to_vec();

    let app = router(state.clone());
    call_json(&app, Method::POST, "/v1/deformers", Some(json!({"op": "add_topology_deformer", "saddle": 0}))).await;
    let second = next_binary(&mut ws).await;
    let (h, px1) = decode_frame_header(&second).unwrap();
    assert_eq!((h.revision, h.seq), (1, 1));
    assert_ne!(px1, &px0[..]);

    ws.send(Message::text("{not json")).await.unwrap();
    match ws.next().await.unwrap().unwrap() {
        Message::Text(t) => {
            let v: Value = serde_json::from_str(&t).unwrap();
            assert_eq!(v["error"]["code"], "malformed_request");
        }
        other => panic!("expected an error message, got {other:?}"),
    }

    // a burst of requests collapses; the last one is always answered
    for seq in 10..20 {
        ws.send(Message::text(render_body(json!({"seq": seq, "revision": 0})).to_string())).await.unwrap();
    }
    let mut seen = Vec::new();
    loop {
        let (h, px) = decode_frame_header(&next_binary(&mut ws).await).map(|(h, p)| (h, p.to_vec())).unwrap();
        assert_eq!(h.revision, 0);
        assert_eq!(px, px0);
        seen.push(h.seq);
        if h.seq == 19 {
            break;
        }
    }
    assert!(seen.windows(2).all(|w| w[0] < w[1]));
    ws.close(None).await.unwrap();
}
