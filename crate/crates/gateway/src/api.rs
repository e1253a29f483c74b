//! HTTP and WebSocket routes.
//!
//! Every `POST` accepts a client request id, either in the `x-request-id`
//! header or as `request_id` in the body. A repeated id on the same route
//! returns the stored response without acting again.

use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use agriswarm_core::sim::{sha256_hex, FaultEvent, FaultKind, Scenario, SimReport, TraceEvent};
use agriswarm_core::UavId;

use crate::error::{from_value, parse_body, ErrorBody, GatewayError};
use crate::mission::{allocate, plan_document, MissionRequest, MissionResponse};
use crate::runs::{RunHandle, RunSpec, Runs, DEFAULT_PLAYBACK_RATE};
use crate::store::{write_atomic, write_json, Store, StoredResponse};

#[derive(Clone)]
pub struct AppState {
    runs: Arc<Runs>,
    mutations: Arc<tokio::sync::Mutex<()>>,
}

impl AppState {
    pub fn open(data_dir: impl Into<std::path::PathBuf>) -> Result<AppState, GatewayError> {
        let store = Store::open(data_dir)?;
        Ok(AppState {
            runs: Arc::new(Runs::open(store)?),
            mutations: Arc::default(),
        })
    }

    fn store(&self) -> &Store {
        self.runs.store()
    }
}

/// The gateway router over `state`.
pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/schemas", get(schemas))
        .route("/api/fields", post(create_field))
        .route("/api/fields/:id", get(get_field))
        .route("/api/missions", post(create_mission))
        .route("/api/missions/:id", get(get_mission))
        .route("/api/missions/:id/plan", get(get_plan))
        .route("/api/runs", post(create_run).get(list_runs))
        .route("/api/runs/:id", get(get_run))
        .route("/api/runs/:id/pause", post(pause_run))
        .route("/api/runs/:id/resume", post(resume_run))
        .route("/api/runs/:id/abort", post(abort_run))
        .route("/api/runs/:id/faults", post(inject_fault))
        .route("/api/runs/:id/heatmap", get(get_heatmap))
        .route("/api/runs/:id/report", get(get_report))
        .route("/api/runs/:id/trace", get(get_trace))
        .route("/api/runs/:id/events", get(events))
        .with_state(state)
}

/// Body of `POST /api/runs`. Exactly one of `mission_id` and `scenario`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RunRequest {
    #[serde(default)]
    pub request_id: Option<String>,
    #[serde(default)]
    pub mission_id: Option<String>,
    /// An inline scenario document.
    #[serde(default)]
    pub scenario: Option<Value>,
    /// Overrides the scenario seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub playback_rate: Option<f64>,
    /// Create the run in `planned` state; `resume` starts it.
    #[serde(default)]
    pub paused: bool,
    #[serde(default)]
    pub gs_redispatch: Option<bool>,
    /// Faults added to the scenario schedule.
    #[serde(default)]
    pub faults: Vec<FaultEvent>,
}

/// Body of `POST /api/runs/{id}/faults`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FaultRequest {
    #[serde(default)]
    pub request_id: Option<String>,
    pub uav_id: UavId,
    pub kind: FaultKind,
    /// Earliest tick to fire at. Defaults to the next tick boundary.
    #[serde(default)]
    pub at_tick: u64,
}

/// Body of a `pause`, `resume` or `abort` request. May be empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct CommandRequest {
    #[serde(default)]
    pub request_id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
pub struct FieldCreated {
    pub field_id: String,
}

#[derive(Debug, Deserialize)]
pub struct EventsQuery {
    #[serde(default)]
    pub from_tick: u64,
}

#[derive(Debug, Deserialize)]
pub struct ReportQuery {
    #[serde(default)]
    pub format: Option<String>,
}

type ApiResult = Result<Response, GatewayError>;

fn json_response(status: StatusCode, body: &impl Serialize) -> Response {
    (status, Json(body)).into_response()
}

fn raw_json(text: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], text).into_response()
}

fn request_id(headers: &HeaderMap, body: &Value) -> Option<String> {
    headers
        .get("x-request-id")
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
        .or_else(|| body.get("request_id").and_then(Value::as_str).map(str::to_string))
}

/// Runs `act` once per `(route, request id)`. Mutations are serialized so a
/// retry racing the original waits for it and gets the same answer.
async fn idempotent<F, Fut>(state: &AppState, route: String, id: Option<String>, act: F) -> Response
where
    F: FnOnce() -> Fut,
    Fut: Future<Output = Result<(StatusCode, Value), GatewayError>>,
{
    let _guard = state.mutations.lock().await;
    let key = id.map(|id| format!("{route}\n{id}"));
    if let Some(stored) = key.as_deref().and_then(|k| state.store().remembered(k)) {
        let status = StatusCode::from_u16(stored.status).unwrap_or(StatusCode::OK);
        return json_response(status, &stored.body);
    }
    let (status, body) = match act().await {
        Ok(ok) => ok,
        Err(e) => (e.status(), e.to_json()),
    };
    if let Some(k) = key.filter(|_| !status.is_server_error()) {
        if let Err(e) = state.store().remember(
            &k,
            &StoredResponse {
                status: status.as_u16(),
                body: body.clone(),
            },
        ) {
            log::warn!("could not store response for request id: {e}");
        }
    }
    json_response(status, &body)
}

fn to_json(value: &impl Serialize) -> Result<Value, GatewayError> {
    serde_json::to_value(value).map_err(|e| GatewayError::Internal(e.to_string()))
}

async fn schemas() -> Json<Value> {
    fn schema<T: JsonSchema>() -> Value {
        serde_json::to_value(schemars::schema_for!(T)).expect("schema serializes")
    }
    Json(json!({
        "schemas": {
            "MissionRequest": schema::<MissionRequest>(),
            "MissionResponse": schema::<MissionResponse>(),
            "RunRequest": schema::<RunRequest>(),
            "RunHandle": schema::<RunHandle>(),
            "CommandRequest": schema::<CommandRequest>(),
            "FaultRequest": schema::<FaultRequest>(),
            "FieldCreated": schema::<FieldCreated>(),
            "Scenario": schema::<Scenario>(),
            "SimReport": schema::<SimReport>(),
            "ApiEvent": schema::<TraceEvent>(),
            "Error": schema::<ErrorBody>(),
        },
        "paths": {
            "POST /api/fields": {"request": "GeoJSON FeatureCollection", "response": "FieldCreated"},
            "GET /api/fields/{id}": {"response": "GeoJSON FeatureCollection"},
            "POST /api/missions": {"request": "MissionRequest", "response": "MissionResponse"},
            "GET /api/missions/{id}": {"response": "MissionResponse"},
            "GET /api/missions/{id}/plan": {"response": "plan document"},
            "POST /api/runs": {"request": "RunRequest", "response": "RunHandle"},
            "GET /api/runs": {"response": "RunHandle[]"},
            "GET /api/runs/{id}": {"response": "RunHandle"},
            "POST /api/runs/{id}/pause": {"request": "CommandRequest", "response": "RunHandle"},
            "POST /api/runs/{id}/resume": {"request": "CommandRequest", "response": "RunHandle"},
            "POST /api/runs/{id}/abort": {"request": "CommandRequest", "response": "RunHandle"},
            "POST /api/runs/{id}/faults": {"request": "FaultRequest", "response": "FaultEvent as scheduled"},
            "GET /api/runs/{id}/heatmap": {"response": "heatmap document"},
            "GET /api/runs/{id}/report": {"query": "format=json|md", "response": "SimReport"},
            "GET /api/runs/{id}/trace": {"response": "trace JSONL"},
            "WS /api/runs/{id}/events": {"query": "from_tick", "messages": "ApiEvent"},
        },
        "errors": {"400": "schema", "404": "unknown id", "409": "illegal status transition", "422": "invalid values, threshold_pct below 10"},
    }))
}

async fn create_field(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    let id = headers
        .get("x-request-id")
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    idempotent(&state, "fields".into(), id, || async {
        let text = std::str::from_utf8(&body).map_err(|e| GatewayError::BadRequest(e.to_string()))?;
        agriswarm_core::coverage::FieldSpec::from_geojson(text)?;
        let field_id = state.store().put_field(text)?;
        Ok((StatusCode::CREATED, to_json(&FieldCreated { field_id })?))
    })
    .await
}

async fn get_field(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let text = state.store().field(&id)?;
    Ok(([(header::CONTENT_TYPE, "application/geo+json")], text).into_response())
}

async fn create_mission(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    let parsed = parse_body(&body);
    let id = parsed.as_ref().ok().and_then(|v| request_id(&headers, v));
    idempotent(&state, "missions".into(), id, || async {
        let mut req: MissionRequest = from_value(parsed?)?;
        req.validate()?;
        req.request_id = None;
        let field = state
            .store()
            .field(&req.field_id)
            .map_err(|_| GatewayError::Unprocessable(format!("unknown field {}", req.field_id)))?;
        let field = req.field_with_priorities(&field)?;
        let (plan, plan_text) = plan_document(&field, &req.sweep())?;
        let allocation = allocate(&req, &plan)?;

        let canonical = serde_json::to_string(&req).map_err(|e| GatewayError::Internal(e.to_string()))?;
        let mission_id = format!("m-{}", &sha256_hex(canonical.as_bytes())[..12]);
        let response = MissionResponse {
            mission_id: mission_id.clone(),
            field_id: req.field_id.clone(),
            plan: serde_json::from_str(&plan_text).map_err(|e| GatewayError::Internal(e.to_string()))?,
            segments: allocation.segments,
            skipped: allocation.skipped,
            unassigned_from: allocation.unassigned_from,
        };
        let dir = state.store().mission_dir(&mission_id);
        write_json(&dir.join("mission.json"), &req)?;
        write_atomic(&dir.join("plan.json"), plan_text.as_bytes())?;
        write_json(&dir.join("response.json"), &response)?;
        Ok((StatusCode::CREATED, to_json(&response)?))
    })
    .await
}

async fn get_mission(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    Ok(raw_json(state.store().mission_file(&id, "response.json")?))
}

async fn get_plan(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    Ok(raw_json(state.store().mission_file(&id, "plan.json")?))
}

fn run_spec(state: &AppState, req: RunRequest) -> Result<RunSpec, GatewayError> {
    let (mission_id, scenario_ref, mut scenario) = match (&req.mission_id, &req.scenario) {
        (Some(mid), None) => {
            let text = state.store().mission_file(mid, "mission.json")?;
            let mission: MissionRequest =
                serde_json::from_str(&text).map_err(|e| GatewayError::Internal(e.to_string()))?;
            let field = state.store().field(&mission.field_id)?;
            let field = mission.field_with_priorities(&field)?;
            let scenario = mission.scenario(mid, &field, req.seed.unwrap_or(0), &[])?;
            (Some(mid.clone()), format!("mission:{mid}"), scenario)
        }
        (None, Some(doc)) => {
            let text = doc.to_string();
            let scenario = Scenario::from_json(&text).map_err(|e| match GatewayError::from(e) {
                GatewayError::Schema { pointer, message } => GatewayError::Schema {
                    pointer: format!("/scenario{pointer}"),
                    message,
                },
                other => other,
            })?;
            (None, format!("inline:{}", &sha256_hex(text.as_bytes())[..12]), scenario)
        }
        _ => {
            return Err(GatewayError::Schema {
                pointer: String::new(),
                message: "exactly one of mission_id and scenario is required".into(),
            })
        }
    };
    if let Some(seed) = req.seed {
        scenario.seed = seed;
    }
    if let Some(r) = req.gs_redispatch {
        scenario.gs_redispatch = r;
    }
    scenario.faults.extend(req.faults);
    scenario.validate()?;
    Ok(RunSpec {
        mission_id,
        scenario_ref,
        scenario,
        playback_rate: req.playback_rate.unwrap_or(DEFAULT_PLAYBACK_RATE),
        start_paused: req.paused,
    })
}

async fn create_run(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    let parsed = parse_body(&body);
    let id = parsed.as_ref().ok().and_then(|v| request_id(&headers, v));
    idempotent(&state, "runs".into(), id, || async {
        let req: RunRequest = from_value(parsed?)?;
        let handle = state.runs.start(run_spec(&state, req)?)?;
        Ok((StatusCode::CREATED, to_json(&handle)?))
    })
    .await
}

async fn list_runs(State(state): State<AppState>) -> Json<Vec<RunHandle>> {
    Json(state.runs.list())
}

async fn get_run(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    Ok(Json(state.runs.get(&id)?.handle()).into_response())
}

#[derive(Clone, Copy)]
enum Steer {
    Pause,
    Resume,
    Abort,
}

async fn steer(state: AppState, id: String, headers: HeaderMap, body: Bytes, what: Steer) -> Response {
    let parsed = parse_body(&body);
    let rid = parsed.as_ref().ok().and_then(|v| request_id(&headers, v));
    let name = match what {
        Steer::Pause => "pause",
        Steer::Resume => "resume",
        Steer::Abort => "abort",
    };
    idempotent(&state, format!("runs/{id}/{name}"), rid, || async {
        let _: CommandRequest = from_value(parsed?)?;
        let run = state.runs.get(&id)?;
        let handle = match what {
            Steer::Pause => run.pause().await?,
            Steer::Resume => run.resume().await?,
            Steer::Abort => run.abort().await?,
        };
        Ok((StatusCode::OK, to_json(&handle)?))
    })
    .await
}

async fn pause_run(State(state): State<AppState>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> Response {
    steer(state, id, headers, body, Steer::Pause).await
}

async fn resume_run(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    steer(state, id, headers, body, Steer::Resume).await
}

async fn abort_run(State(state): State<AppState>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> Response {
    steer(state, id, headers, body, Steer::Abort).await
}

async fn inject_fault(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let parsed = parse_body(&body);
    let rid = parsed.as_ref().ok().and_then(|v| request_id(&headers, v));
    idempotent(&state, format!("runs/{id}/faults"), rid, || async {
        let req: FaultRequest = from_value(parsed?)?;
        let run = state.runs.get(&id)?;
        let fault = FaultEvent {
            at_tick: req.at_tick,
            uav_id: req.uav_id,
            kind: req.kind,
        };
        let scheduled = run.inject(fault).await?;
        Ok((StatusCode::ACCEPTED, to_json(&scheduled)?))
    })
    .await
}

/// Reads a result file of a finished run.
fn run_file(state: &AppState, id: &str, name: &str) -> Result<String, GatewayError> {
    let run = state.runs.get(id)?;
    let handle = run.handle();
    if !handle.status.finished() {
        return Err(GatewayError::Conflict(
            format!("run {id} is still {:?}", handle.status).to_lowercase(),
        ));
    }
    std::fs::read_to_string(state.store().run_dir(id).join(name))
        .map_err(|_| GatewayError::NotFound(format!("run {id} has no {name}")))
}

async fn get_heatmap(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    Ok(raw_json(run_file(&state, &id, "heatmap.json")?))
}

async fn get_report(State(state): State<AppState>, Path(id): Path<String>, Query(q): Query<ReportQuery>) -> ApiResult {
    let text = run_file(&state, &id, "report.json")?;
    match q.format.as_deref() {
        None | Some("json") => Ok(raw_json(text)),
        Some("md") => {
            let report: SimReport = serde_json::from_str(&text).map_err(|e| GatewayError::Internal(e.to_string()))?;
            Ok((
                [(header::CONTENT_TYPE, "text/markdown; charset=utf-8")],
                report.to_markdown(),
            )
                .into_response())
        }
        Some(other) => Err(GatewayError::BadRequest(format!("unknown report format {other:?}"))),
    }
}

async fn get_trace(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let text = run_file(&state, &id, "trace.jsonl")?;
    Ok(([(header::CONTENT_TYPE, "application/jsonl")], text).into_response())
}

async fn events(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    ws: WebSocketUpgrade,
) -> ApiResult {
    let run = state.runs.get(&id)?;
    Ok(ws.on_upgrade(move |socket| stream_events(socket, run, q.from_tick)))
}

fn tick_of(line: &str) -> u64 {
    serde_json::from_str::<TraceEvent>(line).map_or(0, |e| e.tick)
}

/// Sends the run's event lines from `from_tick` on, then follows the live
/// run until it finishes and closes the socket.
async fn stream_events(mut socket: WebSocket, run: Arc<crate::runs::Run>, from_tick: u64) {
    let mut progress = run.subscribe();
    let mut cursor = 0;
    let mut skipping = from_tick > 0;
    loop {
        let now = *progress.borrow_and_update();
        for line in run.events_from(cursor) {
            cursor += 1;
            if skipping {
                if tick_of(&line) < from_tick {
                    continue;
                }
                skipping = false;
            }
            if socket.send(Message::Text(line)).await.is_err() {
                return;
            }
        }
        if now.finished && cursor >= now.lines {
            let _ = socket.send(Message::Close(None)).await;
            return;
        }
        if progress.changed().await.is_err() {
            return;
        }
    }
}
