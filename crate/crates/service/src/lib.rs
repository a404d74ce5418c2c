//! HTTP/JSON service over a trained checkpoint: scenario storage, predictions
//! with optional deltas against a baseline, and hotspot maps for a
//! scenario's synthetic diurnal cycle.
//!
//! Every route lives under `/api/v1`. Grids travel as row-major nested
//! arrays; nodata cells of hotspot maps are `null`.

pub mod model;
pub mod store;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use uhinet::datapipe::{LandCover, RasterGrid, SpatialLayers};
use uhinet::hotspot::{trel_hour, DEFAULT_EPSILON};

pub use model::{diurnal_day, grid_rows, Baseline, BaselineSource, Layers, LoadedModel, DIURNAL_AMPLITUDE};
pub use store::{Scenario, ScenarioInput, ScenarioStore, ScenarioSummary, StoreError};

/// Built-in baseline addressed as scenario id 0 in `baseline_id`/`scenario_id`.
pub const BASELINE_ID: u64 = 0;
pub const ELEVATION_RANGE_M: (f64, f64) = (-500.0, 9000.0);

#[derive(Clone)]
pub struct AppState {
    pub model: Option<Arc<LoadedModel>>,
    pub baseline: Option<Arc<Baseline>>,
    pub store: Arc<ScenarioStore>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub field: Option<String>,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, field: Option<&str>, message: impl Into<String>) -> Self {
        Self {
            status,
            field: field.map(String::from),
            message: message.into(),
        }
    }

    fn bad_request(field: Option<&str>, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, field, message)
    }

    fn unprocessable(field: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, Some(field), message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, None, message)
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, None, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "status": self.status.as_u16(), "field": self.field, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(_) => ApiError::not_found(e.to_string()),
            StoreError::Conflict { .. } => ApiError::new(StatusCode::CONFLICT, Some("modified"), e.to_string()),
            StoreError::Io(_) => ApiError::internal(e),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(None, format!("malformed request body: {e}")))
}

fn check_grid(field: &str, rows: &[Vec<f64>], size: usize) -> ApiResult<()> {
    if rows.len() != size {
        return Err(ApiError::bad_request(Some(field), format!("expected {size} rows, got {}", rows.len())));
    }
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != size) {
        return Err(ApiError::bad_request(
            Some(&format!("{field}[{i}]")),
            format!("expected {size} columns, got {}", r.len()),
        ));
    }
    Ok(())
}

/// Shape checks (400) followed by range checks (422).
pub fn validate_inputs(
    layers: &Layers,
    met: &[Vec<f64>],
    size: usize,
    timesteps: usize,
) -> ApiResult<(SpatialLayers, Vec<[f64; 5]>)> {
    check_grid("layers.imperviousness", &layers.imperviousness, size)?;
    check_grid("layers.elevation", &layers.elevation, size)?;
    check_grid("layers.landcover", &layers.landcover, size)?;
    if met.len() != timesteps || met.iter().any(|r| r.len() != 5) {
        return Err(ApiError::bad_request(Some("met"), format!("expected {timesteps} rows of 5 values")));
    }
    if layers.imperviousness.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(ApiError::unprocessable("layers.imperviousness", "values must lie in [0, 1]"));
    }
    let (lo, hi) = ELEVATION_RANGE_M;
    if layers.elevation.iter().flatten().any(|v| !(lo..=hi).contains(v)) {
        return Err(ApiError::unprocessable("layers.elevation", format!("values must lie in [{lo}, {hi}] m")));
    }
    if layers.landcover.iter().flatten().any(|&v| LandCover::from_code(v as f32).is_none() || v.fract() != 0.0) {
        return Err(ApiError::unprocessable("layers.landcover", "codes must be 0 (water), 1 (vegetation), 2 (urban) or 3 (industrial)"));
    }
    let rows: Vec<[f64; 5]> = met.iter().map(|r| [r[0], r[1], r[2], r[3], r[4]]).collect();
    if rows.iter().any(|r| r[1] < 0.0 || r[2] < 0.0) {
        return Err(ApiError::unprocessable("met", "precipitation and humidity must be non-negative"));
    }
    let spatial = layers.to_spatial().map_err(|e| ApiError::bad_request(Some("layers"), e.to_string()))?;
    Ok((spatial, rows))
}

fn require_model(state: &AppState) -> ApiResult<Arc<LoadedModel>> {
    state
        .model
        .clone()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, None, "no model loaded"))
}

fn parse_id(raw: &str) -> ApiResult<u64> {
    raw.parse().map_err(|_| ApiError::not_found(format!("no scenario {raw:?}")))
}

/// Scenario content by id; id 0 is the built-in baseline.
fn lookup(state: &AppState, id: u64) -> ApiResult<(Layers, Vec<Vec<f64>>)> {
    if id == BASELINE_ID {
        let b = state.baseline.as_ref().ok_or_else(|| ApiError::not_found("no baseline configured"))?;
        return Ok((b.layers.clone(), b.met.clone()));
    }
    let s = state.store.get(id).ok_or_else(|| ApiError::not_found(format!("scenario {id} not found")))?;
    Ok((s.layers.clone(), s.met.clone()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubjectRequest {
    scenario_id: Option<u64>,
    layers: Option<Layers>,
    met: Option<Vec<Vec<f64>>>,
    baseline_id: Option<u64>,
    hours: Option<Vec<u32>>,
}

impl SubjectRequest {
    fn subject(&self, state: &AppState) -> ApiResult<(Layers, Vec<Vec<f64>>)> {
        match (self.scenario_id, &self.layers, &self.met) {
            (Some(id), None, None) => lookup(state, id),
            (None, Some(l), Some(m)) => Ok((l.clone(), m.clone())),
            _ => Err(ApiError::bad_request(None, "give either scenario_id or both layers and met")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub t_a: Vec<Vec<f32>>,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub checkpoint_id: String,
    /// Scenario minus baseline, when a baseline was requested.
    pub delta: Option<Vec<Vec<f32>>>,
    /// Elevation differs from the built-in baseline's.
    pub elevation_modified: bool,
}

fn rows_f32(grid: &RasterGrid) -> Vec<Vec<f32>> {
    grid.values().chunks(grid.width).map(<[f32]>::to_vec).collect()
}

fn predict_response(
    model: &LoadedModel,
    grid: &RasterGrid,
    delta: Option<&RasterGrid>,
    elevation_modified: bool,
) -> PredictResponse {
    let vals = grid.values();
    let min = vals.iter().fold(f32::INFINITY, |a, &b| a.min(b)) as f64;
    let max = vals.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
    let mean = vals.iter().map(|&v| v as f64).sum::<f64>() / vals.len() as f64;
    PredictResponse {
        t_a: rows_f32(grid),
        min,
        max,
        mean,
        checkpoint_id: model.checkpoint_id.clone(),
        delta: delta.map(|b| {
            grid.values()
                .chunks(grid.width)
                .zip(b.values().chunks(b.width))
                .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x - y).collect())
                .collect()
        }),
        elevation_modified,
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> uhinet::Result<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(ApiError::internal)?
        .map_err(ApiError::internal)
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn list_scenarios(State(state): State<AppState>) -> Json<Vec<ScenarioSummary>> {
    Json(state.store.list())
}

fn validate_scenario(state: &AppState, input: &ScenarioInput) -> ApiResult<()> {
    let (size, t) = state
        .model
        .as_ref()
        .map_or((32, 3), |m| (m.input_size(), m.met_timesteps()));
    validate_inputs(&input.layers, &input.met, size, t).map(|_| ())
}

async fn create_scenario(State(state): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Scenario>)> {
    let input: ScenarioInput = parse_body(&body)?;
    validate_scenario(&state, &input)?;
    let s = state.store.create(input)?;
    Ok((StatusCode::CREATED, Json((*s).clone())))
}

async fn get_scenario(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Scenario>> {
    let id = parse_id(&id)?;
    let s = state.store.get(id).ok_or_else(|| ApiError::not_found(format!("scenario {id} not found")))?;
    Ok(Json((*s).clone()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioUpdate {
    name: String,
    layers: Layers,
    met: Vec<Vec<f64>>,
    /// The `modified` stamp the client last saw.
    modified: String,
}

async fn update_scenario(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Scenario>> {
    let id = parse_id(&id)?;
    let u: ScenarioUpdate = parse_body(&body)?;
    let input = ScenarioInput {
        name: u.name,
        layers: u.layers,
        met: u.met,
    };
    validate_scenario(&state, &input)?;
    Ok(Json((*state.store.update(id, input, &u.modified)?).clone()))
}

async fn delete_scenario(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    state.store.delete(parse_id(&id)?)?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineResponse {
    pub id: u64,
    pub name: String,
    pub layers: Layers,
    pub met: Vec<Vec<f64>>,
    pub source: BaselineSource,
    pub prediction: PredictResponse,
}

async fn baseline(State(state): State<AppState>) -> ApiResult<Json<BaselineResponse>> {
    let b = state.baseline.clone().ok_or_else(|| ApiError::not_found("no baseline configured"))?;
    let model = require_model(&state)?;
    let (spatial, met) = validate_inputs(&b.layers, &b.met, model.input_size(), model.met_timesteps())?;
    let m = Arc::clone(&model);
    let grid = blocking(move || m.predict(&spatial, &met)).await?;
    Ok(Json(BaselineResponse {
        id: BASELINE_ID,
        name: b.name.clone(),
        layers: b.layers.clone(),
        met: b.met.clone(),
        source: b.source.clone(),
        prediction: predict_response(&model, &grid, None, false),
    }))
}

async fn predict(State(state): State<AppState>, body: Bytes) -> ApiResult<Json<PredictResponse>> {
    let req: SubjectRequest = parse_body(&body)?;
    if req.hours.is_some() {
        return Err(ApiError::bad_request(Some("hours"), "hours apply to /hotspot only"));
    }
    let model = require_model(&state)?;
    let (layers, met) = req.subject(&state)?;
    let (s, t) = (model.input_size(), model.met_timesteps());
    let (spatial, met) = validate_inputs(&layers, &met, s, t)?;
    let base = match req.baseline_id {
        Some(id) => {
            let (bl, bm) = lookup(&state, id)?;
            Some(validate_inputs(&bl, &bm, s, t)?)
        }
        None => None,
    };
    let elevation_modified = state.baseline.as_ref().is_some_and(|b| b.layers.elevation != layers.elevation);
    let m = Arc::clone(&model);
    let (grid, base_grid) = blocking(move || {
        let g = m.predict(&spatial, &met)?;
        let b = base.map(|(bs, bm)| m.predict(&bs, &bm)).transpose()?;
        Ok((g, b))
    })
    .await?;
    Ok(Json(predict_response(&model, &grid, base_grid.as_ref(), elevation_modified)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HotspotMap {
    pub hour: u32,
    /// Percent; `null` where masked.
    pub t_rel: Vec<Vec<Option<f32>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HotspotResponse {
    pub checkpoint_id: String,
    pub epsilon: f64,
    pub day_count: usize,
    pub maps: Vec<HotspotMap>,
}

pub fn hotspot_map(grid: &RasterGrid, hour: u32) -> HotspotMap {
    HotspotMap {
        hour,
        t_rel: (0..grid.height).map(|y| (0..grid.width).map(|x| grid.get(x, y)).collect()).collect(),
    }
}

async fn hotspot(State(state): State<AppState>, body: Bytes) -> ApiResult<Json<HotspotResponse>> {
    let req: SubjectRequest = parse_body(&body)?;
    if req.baseline_id.is_some() {
        return Err(ApiError::bad_request(Some("baseline_id"), "baseline_id applies to /predict only"));
    }
    let hours = req.hours.clone().unwrap_or_else(|| (0..24).collect());
    if let Some(h) = hours.iter().find(|&&h| h > 23) {
        return Err(ApiError::bad_request(Some("hours"), format!("hour {h} outside 0..=23")));
    }
    let model = require_model(&state)?;
    let (layers, met) = req.subject(&state)?;
    let (spatial, met) = validate_inputs(&layers, &met, model.input_size(), model.met_timesteps())?;
    let m = Arc::clone(&model);
    let maps = blocking(move || {
        let stack = m.diurnal_stack(&spatial, &met)?;
        hours
            .iter()
            .map(|&h| trel_hour(&[&stack[h as usize]], h, DEFAULT_EPSILON).map(|t| hotspot_map(&t.grid, h)))
            .collect::<uhinet::Result<Vec<_>>>()
    })
    .await?;
    Ok(Json(HotspotResponse {
        checkpoint_id: model.checkpoint_id.clone(),
        epsilon: DEFAULT_EPSILON,
        day_count: 1,
        maps,
    }))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/scenarios", get(list_scenarios).post(create_scenario))
        .route(
            "/api/v1/scenarios/{id}",
            get(get_scenario).put(update_scenario).delete(delete_scenario),
        )
        .route("/api/v1/baseline", get(baseline))
        .route("/api/v1/predict", post(predict))
        .route("/api/v1/hotspot", post(hotspot))
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
