//! HTTP API over the fixture pipeline.
//!
//! | route | |
//! |---|---|
//! | `POST /sessions` | body: PLY bytes, `?k=` neighbors; returns `{session_id, n_points, h, version}` |
//! | `GET /sessions/{id}/points?fields=pos,color,normal,label` | typed arrays, see below |
//! | `PATCH /sessions/{id}/labels` | `{indices, region, version?}`; 409 when `version` is stale |
//! | `POST /sessions/{id}/solve` | spec JSON; returns `{fixture_id, kind, undefined_count, solve_ms, cached}` |
//! | `GET /sessions/{id}/fixtures/{fid}/scalar` | float64 per point, or `?format=ply` |
//! | `GET /sessions/{id}/fixtures/{fid}/vectors` | float64 triplets per point, or `?format=ply` |
//! | `POST /sessions/{id}/fixtures/{fid}/query` | `{positions: [[x,y,z], ...]}` |
//! | `POST /sessions/{id}/fixtures/{fid}/simulate` | `{starts, step?, max_steps?, seed?}` |
//! | `POST /sessions/{id}/snapshot` | writes PLY with labels to the snapshot directory |
//! | `DELETE /sessions/{id}` | |
//!
//! Binary layout of `/points`: the requested fields concatenated in request
//! order, all little-endian. `pos` and `normal` are `n × 3` float32, `color`
//! is `n × 3` uint8 (grey when the cloud has no colors), `label` is `n` int32.
//! Field data is float64 with NaN at undefined points. Headers `x-points`,
//! `x-fields` and `x-labels-version` describe the payload.

mod error;
mod session;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, patch, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use surface_fixtures::fixtures::{default_max_steps, sample_free_starts, simulate_agents, Trajectory};
use surface_fixtures::io::{cloud_data, read_cloud, write_cloud, write_field, FieldRef, PlyFormat, SpecFile};
use surface_fixtures::{apply_labels, build_fixture, Fixture, FixtureResponse, RegionId, Vec3, DEFAULT_K};
use tower_http::cors::CorsLayer;

pub use error::{ApiError, ErrorBody};
pub use session::{Session, SessionStore};

use session::StoredFixture;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Sessions idle for longer are dropped.
    pub ttl: Duration,
    /// Neighbor count for new sessions.
    pub k: usize,
    /// Largest accepted request body.
    pub body_limit: usize,
    /// Where snapshots go; snapshots are refused when unset.
    pub snapshot_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            ttl: Duration::from_secs(3600),
            k: DEFAULT_K,
            body_limit: 512 << 20,
            snapshot_dir: None,
        }
    }
}

pub struct AppState {
    pub sessions: SessionStore,
    pub config: ServiceConfig,
}

type Shared = Arc<AppState>;
type ApiResult<T> = Result<T, ApiError>;

pub fn router(config: ServiceConfig) -> Router {
    router_with_state(Arc::new(AppState {
        sessions: SessionStore::new(config.ttl),
        config,
    }))
}

pub fn router_with_state(state: Shared) -> Router {
    let limit = state.config.body_limit;
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", delete(delete_session))
        .route("/sessions/{id}/points", get(points))
        .route("/sessions/{id}/labels", patch(patch_labels))
        .route("/sessions/{id}/solve", post(solve))
        .route("/sessions/{id}/snapshot", post(snapshot))
        .route("/sessions/{id}/fixtures/{fid}/scalar", get(scalar))
        .route("/sessions/{id}/fixtures/{fid}/vectors", get(vectors))
        .route("/sessions/{id}/fixtures/{fid}/query", post(query))
        .route("/sessions/{id}/fixtures/{fid}/simulate", post(simulate))
        .layer(DefaultBodyLimit::max(limit))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serves until the listener fails, sweeping idle sessions once per TTL.
pub async fn serve(listener: tokio::net::TcpListener, config: ServiceConfig) -> std::io::Result<()> {
    let state = Arc::new(AppState {
        sessions: SessionStore::new(config.ttl),
        config,
    });
    let sweeper = Arc::clone(&state);
    tokio::spawn(async move {
        let period = sweeper.config.ttl.max(Duration::from_secs(1));
        loop {
            tokio::time::sleep(period).await;
            let dropped = sweeper.sessions.sweep();
            if dropped > 0 {
                log::info!("dropped {dropped} idle sessions");
            }
        }
    });
    axum::serve(listener, router_with_state(state)).await
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

#[derive(Deserialize)]
struct CreateParams {
    k: Option<usize>,
}

#[derive(Serialize)]
struct Created {
    session_id: String,
    n_points: usize,
    h: f64,
    version: u64,
}

async fn create_session(
    State(state): State<Shared>,
    Query(params): Query<CreateParams>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<Created>)> {
    let k = params.k.unwrap_or(state.config.k);
    let session = blocking(move || {
        let data = read_cloud(body.as_ref())?;
        Session::new(uuid::Uuid::new_v4().simple().to_string(), data, k)
    })
    .await?;
    let session = state.sessions.insert(session);
    let data = session.read();
    let created = Created {
        session_id: session.id.clone(),
        n_points: data.cloud().len(),
        h: data.cloud().mean_spacing(),
        version: data.version,
    };
    Ok((StatusCode::CREATED, Json(created)))
}

async fn delete_session(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    state.sessions.get(&id)?;
    state.sessions.remove(&id);
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct PointsParams {
    fields: Option<String>,
}

fn binary(bytes: Vec<u8>, headers: &[(&'static str, String)]) -> Response {
    let mut map = HeaderMap::new();
    map.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/octet-stream"));
    for (name, value) in headers {
        if let Ok(v) = HeaderValue::from_str(value) {
            map.insert(*name, v);
        }
    }
    (map, bytes).into_response()
}

async fn points(
    State(state): State<Shared>,
    Path(id): Path<String>,
    Query(params): Query<PointsParams>,
) -> ApiResult<Response> {
    let session = state.sessions.get(&id)?;
    let fields = params.fields.unwrap_or_else(|| "pos,label".into());
    let data = session.read();
    let cloud = data.cloud();
    let n = cloud.len();
    let mut out = Vec::new();
    for field in fields.split(',') {
        match field {
            "pos" => {
                for p in cloud.positions() {
                    for c in p.iter() {
                        out.extend_from_slice(&(*c as f32).to_le_bytes());
                    }
                }
            }
            "normal" => {
                let frames = cloud.frames().ok_or_else(|| ApiError::internal("session cloud has no frames"))?;
                for f in frames {
                    for c in f.normal.iter() {
                        out.extend_from_slice(&(*c as f32).to_le_bytes());
                    }
                }
            }
            "color" => match cloud.colors() {
                Some(colors) => colors.iter().for_each(|c| out.extend_from_slice(c)),
                None => out.extend(std::iter::repeat_n(128u8, 3 * n)),
            },
            "label" => {
                for &l in &data.labels {
                    out.extend_from_slice(&(l as i32).to_le_bytes());
                }
            }
            other => return Err(ApiError::bad_request(format!("unknown field '{other}'"))),
        }
    }
    Ok(binary(
        out,
        &[
            ("x-points", n.to_string()),
            ("x-fields", fields),
            ("x-labels-version", data.version.to_string()),
        ],
    ))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelPatch {
    indices: Vec<usize>,
    region: RegionId,
    version: Option<u64>,
}

#[derive(Serialize)]
struct Version {
    version: u64,
}

fn json_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

async fn patch_labels(State(state): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Version>> {
    let session = state.sessions.get(&id)?;
    let stroke: LabelPatch = json_body(&body)?;
    let mut data = session.write();
    if let Some(expected) = stroke.version {
        if expected != data.version {
            return Err(ApiError::conflict(format!(
                "labels are at version {}, not {expected}",
                data.version
            ))
            .with_detail(serde_json::json!({ "version": data.version })));
        }
    }
    let n = data.labels.len();
    if let Some(&bad) = stroke.indices.iter().find(|&&i| i >= n) {
        return Err(ApiError::invalid(format!("index {bad} out of range for {n} points")));
    }
    for &i in &stroke.indices {
        data.labels[i] = stroke.region;
    }
    data.version += 1;
    data.fixtures.clear();
    Ok(Json(Version { version: data.version }))
}

#[derive(Serialize)]
struct Solved {
    fixture_id: String,
    kind: surface_fixtures::FixtureKind,
    undefined_count: usize,
    solve_ms: f64,
    cached: bool,
}

async fn solve(State(state): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Solved>> {
    let session = state.sessions.get(&id)?;
    let text = std::str::from_utf8(&body).map_err(|_| ApiError::bad_request("spec must be UTF-8 JSON"))?;
    let spec_file = SpecFile::parse(text)?;
    blocking(move || {
        let started = Instant::now();
        // Held for the whole solve so a label patch cannot interleave.
        let mut data = session.write();
        let spec_json = spec_file.to_json();
        let fixture_id = data.fixture_id(&spec_json);
        if let Some(stored) = data.fixtures.get(&fixture_id) {
            return Ok(Json(Solved {
                fixture_id,
                kind: stored.fixture.kind(),
                undefined_count: stored.undefined_count,
                solve_ms: started.elapsed().as_secs_f64() * 1e3,
                cached: true,
            }));
        }
        let spec = spec_file.to_fixture_spec(&data.labels)?;
        let cloud = data.surface(spec_file.k)?;
        let labeling = apply_labels(&cloud, &data.labels).map_err(|e| ApiError::invalid(e.to_string()))?;
        let fixture = build_fixture(&cloud, &labeling, &spec)?;
        let undefined_count = fixture.undefined_count();
        let kind = fixture.kind();
        data.fixtures.insert(
            fixture_id.clone(),
            Arc::new(StoredFixture {
                fixture: Arc::new(fixture),
                undefined_count,
                seed: spec_file.seed,
            }),
        );
        Ok(Json(Solved {
            fixture_id,
            kind,
            undefined_count,
            solve_ms: started.elapsed().as_secs_f64() * 1e3,
            cached: false,
        }))
    })
    .await
}

fn fixture(state: &AppState, id: &str, fid: &str) -> ApiResult<Arc<StoredFixture>> {
    let session = state.sessions.get(id)?;
    let data = session.read();
    data.fixtures
        .get(fid)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("no fixture '{fid}' in session '{id}'")))
}

#[derive(Deserialize)]
struct FieldParams {
    format: Option<String>,
}

fn field_response(positions: &[Vec3], field: FieldRef<'_>, format: Option<&str>) -> ApiResult<Response> {
    match format {
        Some("ply") => {
            let mut out = Vec::new();
            write_field(&mut out, positions, field, PlyFormat::BinaryLittleEndian)?;
            Ok(binary(out, &[("x-points", positions.len().to_string())]))
        }
        None | Some("raw") => {
            let mut out = Vec::new();
            match field {
                FieldRef::Scalar(f) => {
                    for i in 0..f.len() {
                        out.extend_from_slice(&f.get(i).unwrap_or(f64::NAN).to_le_bytes());
                    }
                }
                FieldRef::Vector(f) => {
                    for i in 0..f.len() {
                        let v = f.get(i).unwrap_or_else(|| Vec3::repeat(f64::NAN));
                        v.iter().for_each(|c| out.extend_from_slice(&c.to_le_bytes()));
                    }
                }
            }
            Ok(binary(out, &[("x-points", positions.len().to_string())]))
        }
        Some(other) => Err(ApiError::bad_request(format!("unknown format '{other}'"))),
    }
}

async fn scalar(
    State(state): State<Shared>,
    Path((id, fid)): Path<(String, String)>,
    Query(params): Query<FieldParams>,
) -> ApiResult<Response> {
    let stored = fixture(&state, &id, &fid)?;
    let positions = stored.fixture.cloud().positions();
    let field = match stored.fixture.as_ref() {
        Fixture::Value(f) => f.field(),
        Fixture::Guidance(g) => g.target_solve(),
    };
    field_response(positions, FieldRef::Scalar(field), params.format.as_deref())
}

async fn vectors(
    State(state): State<Shared>,
    Path((id, fid)): Path<(String, String)>,
    Query(params): Query<FieldParams>,
) -> ApiResult<Response> {
    let stored = fixture(&state, &id, &fid)?;
    let Fixture::Guidance(g) = stored.fixture.as_ref() else {
        return Err(ApiError::invalid("value fixtures have no vector field"));
    };
    let directions = g.directions();
    field_response(g.cloud().positions(), FieldRef::Vector(&directions), params.format.as_deref())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryRequest {
    positions: Vec<[f64; 3]>,
}

async fn query(
    State(state): State<Shared>,
    Path((id, fid)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Json<Vec<FixtureResponse>>> {
    let stored = fixture(&state, &id, &fid)?;
    let request: QueryRequest = json_body(&body)?;
    if request.positions.iter().flatten().any(|c| !c.is_finite()) {
        return Err(ApiError::invalid("positions must be finite"));
    }
    blocking(move || {
        Ok(Json(
            request
                .positions
                .iter()
                .map(|p| stored.fixture.query(&Vec3::from(*p)))
                .collect(),
        ))
    })
    .await
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Starts {
    Random(usize),
    Indices(Vec<usize>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateRequest {
    starts: Starts,
    step: Option<f64>,
    max_steps: Option<usize>,
    seed: Option<u64>,
}

#[derive(Serialize)]
struct Simulated {
    trajectories: Vec<Trajectory>,
}

async fn simulate(
    State(state): State<Shared>,
    Path((id, fid)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Json<Simulated>> {
    let stored = fixture(&state, &id, &fid)?;
    let request: SimulateRequest = json_body(&body)?;
    blocking(move || {
        let Fixture::Guidance(g) = stored.fixture.as_ref() else {
            return Err(ApiError::invalid("only guidance fixtures can be simulated"));
        };
        let cloud = g.cloud();
        let starts = match request.starts {
            Starts::Random(count) => sample_free_starts(g, count, request.seed.or(stored.seed).unwrap_or(0)),
            Starts::Indices(indices) => {
                if let Some(&bad) = indices.iter().find(|&&i| i >= cloud.len()) {
                    return Err(ApiError::invalid(format!("start {bad} out of range")));
                }
                indices
            }
        };
        let step = request.step.unwrap_or(cloud.mean_spacing());
        let max_steps = request.max_steps.unwrap_or_else(|| default_max_steps(cloud));
        let trajectories = simulate_agents(g, &starts, step, max_steps)?;
        Ok(Json(Simulated { trajectories }))
    })
    .await
}

#[derive(Serialize)]
struct Snapshot {
    path: String,
    version: u64,
}

async fn snapshot(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<Snapshot>> {
    let session = state.sessions.get(&id)?;
    let dir = state
        .config
        .snapshot_dir
        .clone()
        .ok_or_else(|| ApiError::conflict("snapshots are disabled on this server"))?;
    blocking(move || {
        let data = session.read();
        let path = dir.join(format!("{}-v{}.ply", session.id, data.version));
        let file = std::fs::File::create(&path).map_err(|e| ApiError::internal(format!("{}: {e}", path.display())))?;
        let snapshot = cloud_data(data.cloud(), &data.labels);
        write_cloud(std::io::BufWriter::new(file), &snapshot, PlyFormat::BinaryLittleEndian).map_err(ApiError::from)?;
        Ok(Json(Snapshot {
            path: path.display().to_string(),
            version: data.version,
        }))
    })
    .await
}
