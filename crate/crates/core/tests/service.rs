use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use polishplan::pomcp::PlanTree;
use polishplan::service::{router, AppState};

/// Main run then SLS; a low reading goes on to Deflectometry, a middle one to
/// CCP2 rework. There is no branch above 1 nm.
const PLAN: &str = r#"{
  "format": "polishplan.plan/1",
  "binning": {"shape_edges_nm": [13.0], "roughness_edges_nm": [0.5, 1.0]},
  "targets": {"shape_nm": 13.0, "roughness_nm": 0.5},
  "root": {
    "action_run": [{"action": "MRF", "count": 12}, {"action": "CCP2", "count": 9}, {"action": "CCP3", "count": 1}],
    "measurement": "SLS", "duration_min": 8862.0, "leaf": null,
    "branches": [
      {"bin_low": 0.0, "bin_high": 0.5, "probability": 0.9, "child": {
        "action_run": [], "measurement": "Deflectometry", "duration_min": 159.25, "leaf": null,
        "branches": [{"bin_low": 0.0, "bin_high": 13.0, "probability": 1.0, "child": {
          "action_run": [], "measurement": null, "duration_min": 0.0, "branches": [],
          "leaf": {"success": true, "total_duration_min": 9021.25, "share": 0.9}}}]}},
      {"bin_low": 0.5, "bin_high": 1.0, "probability": 0.1, "child": {
        "action_run": [{"action": "CCP2", "count": 1}], "measurement": null, "duration_min": 480.0, "branches": [],
        "leaf": {"success": false, "total_duration_min": 9342.0, "share": 0.1}}}
    ]
  }
}"#;

fn app() -> axum::Router {
    let plan = PlanTree::from_json(PLAN).unwrap();
    router(AppState::new(plan, None), None)
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

#[tokio::test]
async fn plan_round_trips_through_the_export_schema() {
    let (status, body) = call(&app(), "GET", "/api/plan", None).await;
    assert_eq!(status, StatusCode::OK);
    let served: PlanTree = serde_json::from_value(body).unwrap();
    assert_eq!(served, PlanTree::from_json(PLAN).unwrap());
}

#[tokio::test]
async fn observe_follows_the_plan_to_done() {
    let app = app();
    let (status, session) = call(&app, "POST", "/api/session", None).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(session["advice"]["status"], "next");
    assert_eq!(session["advice"]["label"], "MRF (12); CCP2 (9); CCP3 (1); SLS");
    let id = session["id"].as_str().unwrap().to_string();

    let (status, r) = call(&app, "POST", &format!("/api/session/{id}/observe"), Some(json!({"measurement": "SLS", "value": 0.42}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(r["advice"]["status"], "next");
    assert_eq!(r["advice"]["measurement"], "Deflectometry");
    assert_eq!(r["session"]["path"], json!([0]));

    let (_, r) = call(&app, "POST", &format!("/api/session/{id}/observe"), Some(json!({"value": 11.0}))).await;
    assert_eq!(r["advice"]["status"], "done");
    assert_eq!(r["advice"]["success"], true);

    let (status, s) = call(&app, "GET", &format!("/api/session/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(s["observations"].as_array().unwrap().len(), 2);

    let (status, e) = call(&app, "POST", &format!("/api/session/{id}/observe"), Some(json!({"value": 11.0}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(e["error"]["code"], "session_state");
}

#[tokio::test]
async fn out_of_plan_reading_reports_the_nearest_branch() {
    let app = app();
    let (_, session) = call(&app, "POST", "/api/session", None).await;
    let id = session["id"].as_str().unwrap();
    let (status, r) = call(&app, "POST", &format!("/api/session/{id}/observe"), Some(json!({"value": 1.4}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(r["advice"]["status"], "out_of_plan");
    assert_eq!(r["advice"]["nearest"]["branch"], 1);
    assert_eq!(r["session"]["path"], json!([]));
}

#[tokio::test]
async fn errors_carry_machine_readable_codes() {
    let app = app();
    let (status, e) = call(&app, "GET", "/api/session/nope", None).await;
    assert_eq!((status, e["error"]["code"].as_str()), (StatusCode::NOT_FOUND, Some("session_not_found")));
    let (status, e) = call(&app, "POST", "/api/session/nope/observe", Some(json!({"value": 0.3}))).await;
    assert_eq!((status, e["error"]["code"].as_str()), (StatusCode::NOT_FOUND, Some("session_not_found")));

    let (_, session) = call(&app, "POST", "/api/session", None).await;
    let id = session["id"].as_str().unwrap();
    let uri = format!("/api/session/{id}/observe");
    let (status, e) = call(&app, "POST", &uri, Some(json!({"value": -0.3}))).await;
    assert_eq!((status, e["error"]["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_value")));
    let (status, e) = call(&app, "POST", &uri, Some(json!({"valu": 0.3}))).await;
    assert_eq!((status, e["error"]["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_request")));
    let (status, e) = call(&app, "POST", &uri, Some(json!({"measurement": "Deflectometry", "value": 0.3}))).await;
    assert_eq!((status, e["error"]["code"].as_str()), (StatusCode::CONFLICT, Some("session_state")));
    let (status, e) = call(&app, "POST", &uri, Some(json!({"measurement": "Laser", "value": 0.3}))).await;
    assert_eq!((status, e["error"]["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_request")));
    let (status, e) = call(&app, "GET", "/api/report", None).await;
    assert_eq!((status, e["error"]["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));
    let (status, e) = call(&app, "GET", "/api/nothing", None).await;
    assert_eq!((status, e["error"]["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));
}

#[tokio::test]
async fn static_assets_are_served() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<h1>plan</h1>").unwrap();
    let app = router(AppState::new(PlanTree::from_json(PLAN).unwrap(), None), Some(dir.path().to_path_buf()));
    let resp = app.oneshot(Request::get("/index.html").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(&bytes[..], b"<h1>plan</h1>");
}
