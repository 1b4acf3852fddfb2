use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use maskmpc::api::{NetworkInfo, PredictResponse, TrainResponse};
use maskmpc::nn::ReluFit;
use maskmpc::runtime::ChannelStats;
use maskmpc_service::{router, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let builder = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => builder
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

#[tokio::test]
async fn health_and_networks() {
    let app = router(AppState::default());
    let (status, body) = call(&app, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(serde_json::from_slice::<Value>(&body).unwrap()["status"], "ok");

    let (status, body) = call(&app, "GET", "/v1/networks/C", None).await;
    assert_eq!(status, StatusCode::OK);
    let info: NetworkInfo = serde_json::from_slice(&body).unwrap();
    assert!(info.shapes.iter().any(|s| s.iter().product::<usize>() == 800));

    let (status, _) = call(&app, "GET", "/v1/networks/Z", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn predict_then_fetch_stats() {
    let app = router(AppState::default());
    let req = json!({"network": "logreg", "backend": "int64", "synthetic": 3, "seed": 4, "session": 77});
    let (status, body) = call(&app, "POST", "/v1/predict", Some(req)).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let resp: PredictResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(resp.labels.len(), 3);
    assert_eq!(resp.probabilities.shape, vec![3, 10]);

    let (status, body) = call(&app, "GET", "/v1/sessions/77/stats", None).await;
    assert_eq!(status, StatusCode::OK);
    let stats: ChannelStats = serde_json::from_slice(&body).unwrap();
    assert_eq!(stats, resp.stats);

    let (status, body) = call(&app, "GET", "/v1/sessions/77/stats?format=csv", None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(String::from_utf8(body).unwrap().starts_with("phase,sender,"));

    let (status, _) = call(&app, "GET", "/v1/sessions/78/stats", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn bad_requests_are_reported() {
    let app = router(AppState::default());
    let (status, body) = call(&app, "POST", "/v1/fit-relu", Some(json!({"degree": 1}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(String::from_utf8_lossy(&body).contains("degree"));

    let req = json!({"network": "A", "backend": "int100", "trunc": "local"});
    let (status, _) = call(&app, "POST", "/v1/predict", Some(req)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn fit_and_train() {
    let app = router(AppState::default());
    let (status, body) = call(&app, "POST", "/v1/fit-relu", Some(json!({"degree": 4}))).await;
    assert_eq!(status, StatusCode::OK);
    let fit: ReluFit = serde_json::from_slice(&body).unwrap();
    assert_eq!(fit.coeffs.len(), 5);

    let req = json!({"samples": 600, "epochs": 2, "seed": 1});
    let (status, body) = call(&app, "POST", "/v1/train", Some(req)).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let resp: TrainResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(resp.epoch_losses.len(), 2);
    assert!(resp.test_accuracy.unwrap() > 0.5);
}
