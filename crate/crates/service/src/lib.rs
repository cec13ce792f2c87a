//! HTTP/JSON boundary for the oracle, so the attacker and the simulated
//! server can run as separate processes. Every request maps 1:1 onto an
//! oracle operation through the shared mutex; replies carry the same data
//! as the in-process calls, so wire runs are bit-identical to local ones.
//!
//! Endpoints:
//!   POST /v1/report            {user_id, lat, lon, t}
//!   GET  /v1/distance?account=&target=&lat=&lon=&t=
//!   GET  /v1/nearby?account=&lat=&lon=&t=
//!   GET  /v1/sdk?lat=&lon=&radius=&t=    (captured location-SDK shape)

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lbsn_core::oracle::{DistanceReply, NearbyReply, Oracle};
use lbsn_core::{DisplayedDistance, DistanceOracle, GeoPoint};
use serde::{Deserialize, Serialize};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

pub type SharedOracle = Arc<Mutex<Oracle>>;

/// A bound, running server. Dropping the handle aborts; call
/// [`ServerHandle::shutdown`] to drain in-flight requests first.
pub struct ServerHandle {
    pub local_addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<()>,
}

impl ServerHandle {
    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = self.task.await;
    }
}

/// Bind and serve. Fails fast when the address is taken.
pub async fn serve(oracle: SharedOracle, addr: SocketAddr) -> std::io::Result<ServerHandle> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let local_addr = listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let app = router(oracle);
    let task = tokio::spawn(async move {
        let _ = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
    });
    Ok(ServerHandle { local_addr, shutdown: Some(tx), task })
}

pub fn router(oracle: SharedOracle) -> Router {
    Router::new()
        .route("/v1/report", post(handle_report))
        .route("/v1/distance", get(handle_distance))
        .route("/v1/nearby", get(handle_nearby))
        .route("/v1/sdk", get(handle_sdk))
        .with_state(oracle)
}

#[derive(Debug, Deserialize)]
struct ReportBody {
    user_id: String,
    lat: f64,
    lon: f64,
    t: u64,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

fn bad_request(msg: impl Into<String>) -> Response {
    (StatusCode::BAD_REQUEST, Json(ErrorBody { error: msg.into() })).into_response()
}

async fn handle_report(
    State(oracle): State<SharedOracle>,
    Json(body): Json<ReportBody>,
) -> Response {
    let point = match GeoPoint::new(body.lat, body.lon) {
        Ok(p) => p,
        Err(e) => return bad_request(e.to_string()),
    };
    let result = oracle.lock().unwrap().report_location(&body.user_id, point, body.t);
    match result {
        Ok(()) => (StatusCode::OK, Json(serde_json::json!({"ok": true}))).into_response(),
        Err(e) => bad_request(e.to_string()),
    }
}

#[derive(Debug, Deserialize)]
struct DistanceParams {
    account: String,
    target: String,
    lat: f64,
    lon: f64,
    t: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RateLimitedBody {
    error: String,
    until_s: u64,
    counted: bool,
}

async fn handle_distance(
    State(oracle): State<SharedOracle>,
    Query(params): Query<DistanceParams>,
) -> Response {
    let pos = match GeoPoint::new(params.lat, params.lon) {
        Ok(p) => p,
        Err(e) => return bad_request(e.to_string()),
    };
    let reply = oracle
        .lock()
        .unwrap()
        .query_distance(&params.account, pos, &params.target, params.t);
    match reply {
        DistanceReply::Distance(d) => (StatusCode::OK, Json(d)).into_response(),
        DistanceReply::NotVisible => (
            StatusCode::NOT_FOUND,
            Json(ErrorBody { error: "not_visible".into() }),
        )
            .into_response(),
        DistanceReply::RateLimited { until_s, counted } => (
            StatusCode::TOO_MANY_REQUESTS,
            Json(RateLimitedBody { error: "rate_limited".into(), until_s, counted }),
        )
            .into_response(),
    }
}

#[derive(Debug, Deserialize)]
struct NearbyParams {
    account: String,
    lat: f64,
    lon: f64,
    t: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct NearbyEntry {
    user_id: String,
    value_m: f64,
    at_floor: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct NearbyBody {
    nearby: Vec<NearbyEntry>,
}

async fn handle_nearby(
    State(oracle): State<SharedOracle>,
    Query(params): Query<NearbyParams>,
) -> Response {
    let pos = match GeoPoint::new(params.lat, params.lon) {
        Ok(p) => p,
        Err(e) => return bad_request(e.to_string()),
    };
    let reply = oracle.lock().unwrap().query_nearby(&params.account, pos, params.t);
    match reply {
        NearbyReply::Nearby(list) => {
            let nearby = list
                .into_iter()
                .map(|(user_id, d)| NearbyEntry {
                    user_id,
                    value_m: d.value_m,
                    at_floor: d.at_floor,
                })
                .collect();
            (StatusCode::OK, Json(NearbyBody { nearby })).into_response()
        }
        NearbyReply::RateLimited { until_s, counted } => (
            StatusCode::TOO_MANY_REQUESTS,
            Json(RateLimitedBody { error: "rate_limited".into(), until_s, counted }),
        )
            .into_response(),
    }
}

#[derive(Debug, Deserialize)]
struct SdkParams {
    lat: f64,
    lon: f64,
    radius: Option<f64>,
    t: Option<u64>,
}

async fn handle_sdk(Query(params): Query<SdkParams>) -> Response {
    let point = match GeoPoint::new(params.lat, params.lon) {
        Ok(p) => p,
        Err(e) => return bad_request(e.to_string()),
    };
    // the patched device always reports a 70 m accuracy radius
    let body = sdk_response(point, params.radius.unwrap_or(70.0), params.t.unwrap_or(0));
    (
        StatusCode::OK,
        [(axum::http::header::CONTENT_TYPE, "application/json")],
        body,
    )
        .into_response()
}

/// The plaintext JSON object the captured location SDK returns: coordinates
/// travel as decimal strings in `content.point` (y = latitude,
/// x = longitude) and error code 161 marks a successful query.
pub fn sdk_response(p: GeoPoint, radius_m: f64, unix_s: u64) -> String {
    let body = SdkBody {
        content: SdkContent {
            addr: SdkAddr { detail: String::new() },
            bldg: String::new(),
            floor: String::new(),
            point: SdkPoint { y: format!("{}", p.lat()), x: format!("{}", p.lon()) },
            radius: format!("{radius_m}"),
        },
        result: SdkResult { error: 161, time: format!("{unix_s}") },
    };
    serde_json::to_string(&body).expect("static shape always serializes")
}

/// Parse the SDK shape back into a point; `None` when the shape or code is
/// not a successful capture.
pub fn parse_sdk_response(text: &str) -> Option<GeoPoint> {
    let body: SdkBody = serde_json::from_str(text).ok()?;
    if body.result.error != 161 {
        return None;
    }
    let lat: f64 = body.content.point.y.parse().ok()?;
    let lon: f64 = body.content.point.x.parse().ok()?;
    GeoPoint::new(lat, lon).ok()
}

#[derive(Debug, Serialize, Deserialize)]
struct SdkBody {
    content: SdkContent,
    result: SdkResult,
}

#[derive(Debug, Serialize, Deserialize)]
struct SdkContent {
    addr: SdkAddr,
    bldg: String,
    floor: String,
    point: SdkPoint,
    radius: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct SdkAddr {
    detail: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct SdkPoint {
    y: String,
    x: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct SdkResult {
    error: i64,
    time: String,
}

/// Blocking client for the wire protocol; implements the same oracle trait
/// the attacker drives in-process, so whole attacks can run over HTTP.
/// Transport failures panic: the simulator assumes a reliable local wire.
pub struct HttpOracleClient {
    base: String,
    http: reqwest::blocking::Client,
}

impl HttpOracleClient {
    pub fn new(base_url: impl Into<String>) -> Self {
        let mut base = base_url.into();
        while base.ends_with('/') {
            base.pop();
        }
        HttpOracleClient { base, http: reqwest::blocking::Client::new() }
    }

    pub fn report(&self, user_id: &str, p: GeoPoint, t: u64) -> Result<(), String> {
        let resp = self
            .http
            .post(format!("{}/v1/report", self.base))
            .json(&serde_json::json!({
                "user_id": user_id,
                "lat": p.lat(),
                "lon": p.lon(),
                "t": t,
            }))
            .send()
            .expect("wire: report");
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(resp.json::<ErrorBodyOwned>().map(|e| e.error).unwrap_or_default())
        }
    }
}

#[derive(Debug, Deserialize)]
struct ErrorBodyOwned {
    error: String,
}

impl DistanceOracle for HttpOracleClient {
    fn query_distance(
        &mut self,
        account_id: &str,
        attacker_pos: GeoPoint,
        target_id: &str,
        t: u64,
    ) -> DistanceReply {
        let resp = self
            .http
            .get(format!("{}/v1/distance", self.base))
            .query(&[
                ("account", account_id),
                ("target", target_id),
                ("lat", &attacker_pos.lat().to_string()),
                ("lon", &attacker_pos.lon().to_string()),
                ("t", &t.to_string()),
            ])
            .send()
            .expect("wire: distance");
        match resp.status().as_u16() {
            200 => DistanceReply::Distance(resp.json::<DisplayedDistance>().expect("wire: body")),
            404 => DistanceReply::NotVisible,
            429 => {
                let body: RateLimitedBody = resp.json().expect("wire: body");
                DistanceReply::RateLimited { until_s: body.until_s, counted: body.counted }
            }
            s => panic!("unexpected /v1/distance status {s}"),
        }
    }

    fn query_nearby(&mut self, account_id: &str, attacker_pos: GeoPoint, t: u64) -> NearbyReply {
        let resp = self
            .http
            .get(format!("{}/v1/nearby", self.base))
            .query(&[
                ("account", account_id),
                ("lat", &attacker_pos.lat().to_string()),
                ("lon", &attacker_pos.lon().to_string()),
                ("t", &t.to_string()),
            ])
            .send()
            .expect("wire: nearby");
        match resp.status().as_u16() {
            200 => {
                let body: NearbyBody = resp.json().expect("wire: body");
                NearbyReply::Nearby(
                    body.nearby
                        .into_iter()
                        .map(|e| {
                            (e.user_id, DisplayedDistance { value_m: e.value_m, at_floor: e.at_floor })
                        })
                        .collect(),
                )
            }
            429 => {
                let body: RateLimitedBody = resp.json().expect("wire: body");
                NearbyReply::RateLimited { until_s: body.until_s, counted: body.counted }
            }
            s => panic!("unexpected /v1/nearby status {s}"),
        }
    }
}
