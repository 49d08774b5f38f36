use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use cdb_core::catalog::{DataSignal, NewGenericSignal, RecordType, SignalKind, TimeAxis};
use cdb_core::filestore::{Dataset, Dtype};
use cdb_core::identifier::{GenericLocator, UnitsTag};
use cdb_core::postproc::{CommandExecutor, TaskManifest};
use cdb_core::signal_api::{encode_as, signal_str_id, PutRequest, Signal, SignalUpdate};
use cdb_core::wire::{WireSignal, INLINE_LIMIT};
use cdb_core::{parse_str_id, Error, Result, Store};

use crate::AppState;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/records", get(list_records).post(create_record))
        .route("/records/{n}", get(get_record))
        .route("/generic_signals", get(list_generics).post(create_generic))
        .route("/generic_signals/{gs_str_id}", get(get_generic))
        .route("/signals/{str_id}", get(get_signal).post(put_signal))
        .route("/signals/{str_id}/data", get(get_data))
        .route("/signals/{str_id}/update", post(update_signal))
        .route("/tasks", get(list_tasks).post(add_task))
        .route("/postproc/run/{record}", post(run_postproc))
        .route("/postproc/stale/{record}", get(stale))
        .with_state(state)
}

struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

fn status_for(e: &Error) -> StatusCode {
    match e {
        Error::NotFound(_)
        | Error::NoMapping(_)
        | Error::UnknownGeneric(_)
        | Error::UnknownRecord(_) => StatusCode::NOT_FOUND,
        Error::Parse(_) | Error::InvalidRef(_) | Error::InvalidArgument(_) => {
            StatusCode::BAD_REQUEST
        }
        Error::DuplicateName { .. }
        | Error::DuplicateAlias(_)
        | Error::DuplicateValidFrom { .. }
        | Error::DuplicateDataset(_)
        | Error::DuplicateTask(_)
        | Error::DuplicateProducer { .. }
        | Error::CycleDetected(_)
        | Error::AlreadyClosed => StatusCode::CONFLICT,
        Error::ChecksumMismatch(_) | Error::InvalidFormat(_) | Error::Storage(_) => {
            StatusCode::INTERNAL_SERVER_ERROR
        }
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = status_for(&self.0);
        if status.is_server_error() {
            log::error!("{}", self.0);
        }
        let body = json!({"code": self.0.code(), "message": self.0.to_string()});
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T> + Send + 'static,
) -> ApiResult<T> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError),
        Err(e) => Err(ApiError(Error::Storage(format!("worker task failed: {e}")))),
    }
}

fn body<T: DeserializeOwned>(bytes: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(bytes)
        .map_err(|e| ApiError(Error::InvalidArgument(format!("request body: {e}"))))
}

/// Percent-encodes everything but RFC 3986 unreserved characters.
fn encode_component(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'-' | b'.' | b'_' | b'~') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

fn data_url(str_id: &str) -> String {
    format!("/signals/{}/data", encode_component(str_id))
}

// ---- records ----

#[derive(Deserialize)]
struct NewRecord {
    #[serde(default = "experiment")]
    record_type: RecordType,
    #[serde(default)]
    description: String,
}

fn experiment() -> RecordType {
    RecordType::Experiment
}

async fn list_records(State(st): State<AppState>) -> ApiResult<Response> {
    let store = Arc::clone(&st.store);
    let records = blocking(move || store.catalog().list_records()).await?;
    Ok(Json(records).into_response())
}

async fn create_record(State(st): State<AppState>, raw: Bytes) -> ApiResult<Response> {
    let req: NewRecord = if raw.is_empty() {
        body(&Bytes::from_static(b"{}"))?
    } else {
        body(&raw)?
    };
    let store = Arc::clone(&st.store);
    let rec = blocking(move || {
        store
            .catalog()
            .create_record(req.record_type, &req.description)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(rec)).into_response())
}

async fn get_record(State(st): State<AppState>, Path(n): Path<String>) -> ApiResult<Response> {
    let n: i64 = n
        .parse()
        .map_err(|_| ApiError(Error::InvalidArgument(format!("record number {n:?}"))))?;
    let store = Arc::clone(&st.store);
    let rec = blocking(move || {
        let cat = store.catalog();
        cat.get_record(cat.resolve_record(n)?)
    })
    .await?;
    Ok(Json(rec).into_response())
}

// ---- generic signals ----

async fn list_generics(State(st): State<AppState>) -> ApiResult<Response> {
    let store = Arc::clone(&st.store);
    Ok(Json(blocking(move || store.catalog().list_generic_signals()).await?).into_response())
}

async fn create_generic(State(st): State<AppState>, raw: Bytes) -> ApiResult<Response> {
    let spec: NewGenericSignal = body(&raw)?;
    let store = Arc::clone(&st.store);
    let g = blocking(move || store.catalog().create_generic_signal(&spec)).await?;
    Ok((StatusCode::CREATED, Json(g)).into_response())
}

async fn get_generic(State(st): State<AppState>, Path(gs): Path<String>) -> ApiResult<Response> {
    let store = Arc::clone(&st.store);
    let g = blocking(move || {
        store
            .catalog()
            .resolve_generic(&GenericLocator::parse(&gs)?)
    })
    .await?;
    Ok(Json(g).into_response())
}

// ---- signals ----

#[derive(Deserialize)]
struct ReadParams {
    length: Option<u64>,
}

fn read_signal(store: &Store, str_id: &str, length: Option<u64>) -> Result<Signal> {
    let r = parse_str_id(str_id)?;
    match length {
        Some(n) => store.get_with_length(&r, n),
        None => store.get(&r),
    }
}

async fn get_signal(
    State(st): State<AppState>,
    Path(str_id): Path<String>,
    Query(p): Query<ReadParams>,
) -> ApiResult<Response> {
    let store = Arc::clone(&st.store);
    let sig = blocking(move || read_signal(&store, &str_id, p.length)).await?;
    Ok(Json(WireSignal::from_signal(&sig, Some(INLINE_LIMIT), &data_url)).into_response())
}

/// Values as little-endian bytes: physical f64 by default, the stored
/// dataset in its own dtype for `[raw]` FILE signals.
async fn get_data(
    State(st): State<AppState>,
    Path(str_id): Path<String>,
    Query(p): Query<ReadParams>,
) -> ApiResult<Response> {
    let store = Arc::clone(&st.store);
    let (concrete, dtype, shape, bytes) = blocking(move || {
        let r = parse_str_id(&str_id)?;
        let sig = read_signal(&store, &str_id, p.length)?;
        let concrete = sig.str_id();
        if r.units == UnitsTag::Raw && sig.generic.kind == SignalKind::File {
            let (_, ds) = store.read_raw(&r)?;
            return Ok((concrete, ds.dtype, ds.shape, ds.payload));
        }
        let ds = Dataset::from_slice("data", sig.shape.clone(), &sig.values)?;
        Ok((concrete, Dtype::F64, ds.shape, ds.payload))
    })
    .await?;
    let shape_text = shape
        .iter()
        .map(u64::to_string)
        .collect::<Vec<_>>()
        .join(",");
    let mut resp = bytes.into_response();
    let h = resp.headers_mut();
    h.insert(
        header::CONTENT_TYPE,
        HeaderValue::from_static("application/octet-stream"),
    );
    h.insert("x-cdb-dtype", HeaderValue::from_static(dtype.name()));
    h.insert(
        "x-cdb-shape",
        HeaderValue::from_str(&shape_text).map_err(|e| Error::Storage(e.to_string()))?,
    );
    if let Ok(v) = HeaderValue::from_str(&encode_component(&concrete)) {
        h.insert("x-cdb-str-id", v);
    }
    Ok(resp)
}

/// Body of `POST /signals/{gs_str_id}:{record}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PutBody {
    #[serde(default = "default_dtype")]
    pub dtype: Dtype,
    #[serde(default)]
    pub shape: Option<Vec<u64>>,
    /// Numbers converted to `dtype`.
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    /// Little-endian bytes already in `dtype`.
    #[serde(default)]
    pub values_b64: Option<String>,
    #[serde(default)]
    pub t0: Option<f64>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub offset: f64,
    #[serde(default = "one")]
    pub coefficient: f64,
    #[serde(default)]
    pub note: String,
}

fn default_dtype() -> Dtype {
    Dtype::F64
}

fn one() -> f64 {
    1.0
}

impl PutBody {
    fn dataset(&self) -> Result<Dataset> {
        match (&self.values, &self.values_b64) {
            (Some(v), None) => {
                let shape = self.shape.clone().unwrap_or_else(|| vec![v.len() as u64]);
                encode_as(self.dtype, shape, v)
            }
            (None, Some(b64)) => {
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(b64)
                    .map_err(|e| Error::InvalidArgument(format!("values_b64: {e}")))?;
                let shape = self
                    .shape
                    .clone()
                    .unwrap_or_else(|| vec![(bytes.len() / self.dtype.size()) as u64]);
                Dataset::new("data", self.dtype, shape, bytes)
            }
            _ => Err(Error::InvalidArgument(
                "give exactly one of values and values_b64".into(),
            )),
        }
    }

    fn time_axis(&self) -> Result<TimeAxis> {
        match (self.t0, self.dt) {
            (Some(t0), Some(dt)) => Ok(TimeAxis::Linear { t0, dt }),
            (None, None) => Ok(TimeAxis::None),
            _ => Err(Error::InvalidArgument("t0 and dt go together".into())),
        }
    }
}

fn stored(store: &Store, ds: DataSignal) -> Result<serde_json::Value> {
    let generic = store.catalog().get_generic(ds.generic_id)?;
    Ok(json!({
        "str_id": signal_str_id(&generic, &ds, UnitsTag::Default),
        "data_signal": ds,
    }))
}

async fn put_signal(
    State(st): State<AppState>,
    Path(target): Path<String>,
    raw: Bytes,
) -> ApiResult<Response> {
    let (gs, record) = target.rsplit_once(':').ok_or_else(|| {
        Error::InvalidArgument(format!("expected <gs_str_id>:<record>, got {target:?}"))
    })?;
    let record: i64 = record
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("record number {record:?}")))?;
    let locator = GenericLocator::parse(gs).map_err(Error::from)?;
    let req: PutBody = body(&raw)?;
    let store = Arc::clone(&st.store);
    let out = blocking(move || {
        let put = PutRequest::new(locator, record, req.dataset()?)
            .time_axis(req.time_axis()?)
            .transform(req.coefficient, req.offset);
        let put = PutRequest {
            note: req.note,
            ..put
        };
        let ds = store.put_signal(put)?;
        stored(&store, ds)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(out)).into_response())
}

async fn update_signal(
    State(st): State<AppState>,
    Path(str_id): Path<String>,
    raw: Bytes,
) -> ApiResult<Response> {
    let update: SignalUpdate = if raw.is_empty() {
        SignalUpdate::default()
    } else {
        body(&raw)?
    };
    let store = Arc::clone(&st.store);
    let out = blocking(move || {
        let ds = store.update_signal(&str_id, update)?;
        stored(&store, ds)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(out)).into_response())
}

// ---- post-processing ----

async fn list_tasks(State(st): State<AppState>) -> ApiResult<Response> {
    let pp = st.postproc.clone();
    let graph = blocking(move || pp.graph()).await?;
    Ok(Json(graph.tasks().to_vec()).into_response())
}

async fn add_task(State(st): State<AppState>, raw: Bytes) -> ApiResult<Response> {
    let manifest: TaskManifest = body(&raw)?;
    let pp = st.postproc.clone();
    let spec = blocking(move || {
        let graph = pp.add_manifest(&manifest)?;
        graph
            .task(&manifest.name)
            .cloned()
            .ok_or_else(|| Error::Storage("stored task vanished".into()))
    })
    .await?;
    Ok((StatusCode::CREATED, Json(spec)).into_response())
}

#[derive(Deserialize)]
struct RunParams {
    parallelism: Option<usize>,
}

fn record_param(n: &str) -> ApiResult<i64> {
    n.parse()
        .map_err(|_| ApiError(Error::InvalidArgument(format!("record number {n:?}"))))
}

async fn run_postproc(
    State(st): State<AppState>,
    Path(record): Path<String>,
    Query(p): Query<RunParams>,
) -> ApiResult<Response> {
    let record = record_param(&record)?;
    let pp = st.postproc.clone();
    let config = Arc::clone(&st.config);
    let logs = blocking(move || {
        let mut exec = CommandExecutor::new();
        for (k, v) in config.env_vars() {
            exec = exec.env(k, v);
        }
        pp.run(record, p.parallelism.unwrap_or(1), &exec)
    })
    .await?;
    Ok(Json(logs).into_response())
}

async fn stale(State(st): State<AppState>, Path(record): Path<String>) -> ApiResult<Response> {
    let record = record_param(&record)?;
    let pp = st.postproc.clone();
    let names = blocking(move || pp.check_freshness(record)).await?;
    Ok(Json(names).into_response())
}
