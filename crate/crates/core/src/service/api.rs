use std::convert::Infallible;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{Stream, StreamExt};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::error::{ApiError, ApiResult};
use super::jobs::{Job, JobEvent, JobMethod, JobSpec, JobSummary};
use super::state::AppState;
use super::store::{new_id, RegionEntry, RegionMethod, ResultInfo, Session, SessionMeta};
use super::API_VERSION;
use crate::image::{KindHint, Rect, Region};
use crate::models::{seed_size_for, ArchConfig, Method};
use crate::train::{evaluate_gopt, TrainingConfig, ZOptConfig};

/// Upload size cap.
const MAX_UPLOAD: usize = 256 << 20;
/// Iterations of the short seed optimisation behind a z-opt resample.
const RESAMPLE_ZOPT_ITERATIONS: usize = 500;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(upload))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/region", post(set_region))
        .route("/sessions/{id}/jobs", post(start_job))
        .route("/sessions/{id}/resample", post(resample))
        .route("/sessions/{id}/export", get(export))
        .route("/sessions/{id}/bundles/{bundle}", get(download_bundle))
        .route("/jobs/{id}", get(get_job))
        .route("/jobs/{id}/events", get(job_events))
        .route("/jobs/{id}/preview", get(job_preview))
        .route("/jobs/{id}/cancel", post(cancel_job))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD))
        .with_state(state)
}

fn check_version(v: u32) -> ApiResult<()> {
    if v != API_VERSION {
        return Err(ApiError::bad_request(format!("unsupported payload version {v}, expected {API_VERSION}")));
    }
    Ok(())
}

fn session(state: &AppState, id: &str) -> ApiResult<Arc<Session>> {
    state.session(id).ok_or_else(|| ApiError::not_found("session", id))
}

fn job(state: &AppState, id: &str) -> ApiResult<Arc<Job>> {
    state.job(id).ok_or_else(|| ApiError::not_found("job", id))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> crate::Result<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))?.map_err(ApiError::from)
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "v": API_VERSION, "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

#[derive(Serialize)]
struct SessionReply {
    v: u32,
    session: SessionMeta,
}

async fn upload(State(state): State<AppState>, mut form: Multipart) -> ApiResult<(StatusCode, Json<SessionReply>)> {
    let mut bytes = None;
    let mut hint = None;
    while let Some(field) = form.next_field().await.map_err(|e| ApiError::bad_request(e.to_string()))? {
        match field.name() {
            Some("image") => bytes = Some(field.bytes().await.map_err(|e| ApiError::bad_request(e.to_string()))?),
            Some("kind") => {
                let text = field.text().await.map_err(|e| ApiError::bad_request(e.to_string()))?;
                hint = Some(text.trim().parse::<KindHint>()?);
            }
            _ => {}
        }
    }
    let bytes = bytes.ok_or_else(|| ApiError::bad_request("missing multipart field \"image\""))?;
    let root = state.sessions_dir().to_path_buf();
    let s = blocking(move || Session::create(&root, &bytes, hint)).await?;
    let s = state.insert_session(s);
    Ok((StatusCode::CREATED, Json(SessionReply { v: API_VERSION, session: s.meta() })))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionReply>> {
    Ok(Json(SessionReply { v: API_VERSION, session: session(&state, &id)?.meta() }))
}

#[derive(Deserialize)]
struct RegionRequest {
    v: u32,
    method: RegionMethod,
    region: Region,
}

#[derive(Serialize)]
struct RegionReply {
    v: u32,
    method: RegionMethod,
    region: Region,
    window: Rect,
    occluded_pixels: usize,
    annulus_pixels: usize,
    seed_size: [usize; 2],
}

async fn set_region(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<RegionRequest>,
) -> ApiResult<Json<RegionReply>> {
    check_version(req.v)?;
    let s = session(&state, &id)?;
    match (req.method, req.region.is_rect()) {
        (RegionMethod::Gopt, false) => {
            return Err(ApiError::bad_request("generator optimisation takes a rectangle; polygons are for seed optimisation"))
        }
        (RegionMethod::Zopt, true) => {
            return Err(ApiError::bad_request("seed optimisation takes a polygon; rectangles are for generator optimisation"))
        }
        _ => {}
    }
    req.region.validate(s.image.width(), s.image.height())?;
    let core = req.region.core();
    let (sx, sy) = seed_size_for(core.w, core.h)?;
    let reply = RegionReply {
        v: API_VERSION,
        method: req.method,
        window: req.region.window(),
        occluded_pixels: req.region.occluded_count(),
        annulus_pixels: req.region.annulus_mask().count(),
        seed_size: [sx, sy],
        region: req.region.clone(),
    };
    s.meta.lock().expect("session lock").region = Some(RegionEntry { method: req.method, region: req.region });
    s.persist()?;
    Ok(Json(reply))
}

#[derive(Deserialize)]
struct JobRequest {
    v: u32,
    method: JobMethod,
    #[serde(default)]
    config: TrainingConfig,
    #[serde(default)]
    zopt: ZOptConfig,
    #[serde(default)]
    arch: ArchConfig,
    bundle_id: Option<String>,
    seed: Option<u64>,
}

#[derive(Serialize)]
struct JobReply {
    v: u32,
    job: JobSummary,
}

fn session_region(s: &Session, method: RegionMethod) -> Option<Region> {
    s.meta.lock().expect("session lock").region.clone().filter(|r| r.method == method).map(|r| r.region)
}

/// Register and spawn a job, rejecting clashes with active jobs.
fn launch(state: &AppState, s: Arc<Session>, job: Job, spec: JobSpec) -> ApiResult<Arc<Job>> {
    let sid = s.id.clone();
    let method = job.method;
    let input = job.input_bundle_id.clone();
    let job = state
        .insert_job(job, |other| {
            other.session_id == sid
                && if method.is_training() {
                    other.method.is_training()
                } else {
                    !other.method.is_training() && other.input_bundle_id == input
                }
        })
        .map_err(|other| ApiError::conflict(format!("job {other} is already running on this session")))?;
    state.spawn(s, job.clone(), spec);
    Ok(job)
}

async fn start_job(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<JobRequest>,
) -> ApiResult<(StatusCode, Json<JobReply>)> {
    check_version(req.v)?;
    let s = session(&state, &id)?;
    let seed = req.seed.unwrap_or_else(rand::random);
    let (job, spec) = match req.method {
        JobMethod::Gopt => {
            req.config.validate()?;
            let region = session_region(&s, RegionMethod::Gopt)
                .ok_or_else(|| ApiError::bad_request("set a rectangular gopt region first"))?;
            let cfg = json!({ "config": req.config, "arch": req.arch, "seed": seed });
            let job = Job::new(new_id(), s.id.clone(), req.method, Some(region.clone()), cfg, None);
            (job, JobSpec::Gopt { region, config: req.config, arch: req.arch, seed })
        }
        JobMethod::ZoptTrain => {
            req.config.validate()?;
            // a drawn region is kept out of the training patches
            let region = s.meta.lock().expect("session lock").region.clone().map(|r| r.region);
            let cfg = json!({ "config": req.config, "arch": req.arch, "seed": seed });
            let job = Job::new(new_id(), s.id.clone(), req.method, region.clone(), cfg, None);
            (job, JobSpec::ZoptTrain { region, config: req.config, arch: req.arch, seed })
        }
        JobMethod::ZoptOptimize => {
            req.zopt.validate()?;
            let bundle_id = req.bundle_id.ok_or_else(|| ApiError::bad_request("zopt_optimize needs bundle_id"))?;
            return optimize_job(&state, s, bundle_id, req.zopt, seed).map(|j| (StatusCode::ACCEPTED, j));
        }
    };
    let job = launch(&state, s, job, spec)?;
    Ok((StatusCode::ACCEPTED, Json(JobReply { v: API_VERSION, job: job.summary() })))
}

fn optimize_job(state: &AppState, s: Arc<Session>, bundle_id: String, zopt: ZOptConfig, seed: u64) -> ApiResult<Json<JobReply>> {
    let bundle = s.bundle(&bundle_id).ok_or_else(|| ApiError::not_found("bundle", &bundle_id))?;
    if bundle.method != Method::Wgan {
        return Err(ApiError::bad_request("seed optimisation needs a bundle from a zopt_train job"));
    }
    let region = session_region(&s, RegionMethod::Zopt)
        .ok_or_else(|| ApiError::bad_request("set a polygon zopt region first"))?;
    let cfg = json!({ "zopt": zopt, "seed": seed });
    let job = Job::new(new_id(), s.id.clone(), JobMethod::ZoptOptimize, Some(region.clone()), cfg, Some(bundle_id.clone()));
    let spec = JobSpec::ZoptOptimize { region, bundle, bundle_id, config: zopt, seed };
    let job = launch(state, s, job, spec)?;
    Ok(Json(JobReply { v: API_VERSION, job: job.summary() }))
}

async fn get_job(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<JobReply>> {
    Ok(Json(JobReply { v: API_VERSION, job: job(&state, &id)?.summary() }))
}

async fn cancel_job(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<JobReply>> {
    let j = job(&state, &id)?;
    j.request_cancel();
    Ok(Json(JobReply { v: API_VERSION, job: j.summary() }))
}

async fn job_preview(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let png = job(&state, &id)?.preview().ok_or_else(|| ApiError::not_found("preview for job", &id))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], (*png).clone()).into_response())
}

#[derive(Deserialize)]
struct EventsQuery {
    after: Option<u64>,
}

/// Ordered event stream. Resumes after `Last-Event-ID` (or `?after=`) and
/// ends with the job's terminal event.
async fn job_events(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let j = job(&state, &id)?;
    let after = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse().ok())
        .or(q.after)
        .unwrap_or(0);
    Ok(Sse::new(event_stream(j, after)).keep_alive(KeepAlive::default()))
}

fn to_sse(e: &JobEvent) -> Event {
    let name = match e.body {
        super::jobs::EventBody::State { .. } => "state",
        super::jobs::EventBody::Progress { .. } => "progress",
        super::jobs::EventBody::Terminal { .. } => "terminal",
    };
    Event::default().id(e.seq.to_string()).event(name).data(serde_json::to_string(e).expect("event serialises"))
}

fn event_stream(j: Arc<Job>, after: u64) -> impl Stream<Item = Result<Event, Infallible>> {
    // subscribe before the first read so no event is missed
    let rx = j.subscribe();
    futures::stream::unfold((j, rx, after, false), |(j, mut rx, cursor, done)| async move {
        if done {
            return None;
        }
        loop {
            let fresh = j.events_after(cursor);
            if !fresh.is_empty() {
                let end = fresh.iter().any(JobEvent::is_terminal);
                let last = fresh.last().map_or(cursor, |e| e.seq);
                let batch: Vec<Result<Event, Infallible>> = fresh.iter().map(|e| Ok(to_sse(e))).collect();
                return Some((futures::stream::iter(batch), (j, rx, last, end)));
            }
            if rx.changed().await.is_err() {
                return None;
            }
        }
    })
    .flatten()
}

#[derive(Deserialize)]
struct ResampleRequest {
    v: u32,
    bundle_id: String,
    seed: u64,
    zopt: Option<ZOptConfig>,
}

async fn resample(State(state): State<AppState>, Path(id): Path<String>, Json(req): Json<ResampleRequest>) -> ApiResult<Response> {
    check_version(req.v)?;
    let s = session(&state, &id)?;
    let bundle = s.bundle(&req.bundle_id).ok_or_else(|| ApiError::not_found("bundle", &req.bundle_id))?;
    match bundle.method {
        Method::Gopt => {
            if bundle.fixed_seed.is_none() {
                return Err(ApiError::bad_request("bundle has no fixed seed to resample"));
            }
            let (s2, bid, seed) = (s.clone(), req.bundle_id.clone(), req.seed);
            let info: ResultInfo = blocking(move || {
                let r = evaluate_gopt(&bundle, &s2.image, true, &mut ChaCha8Rng::seed_from_u64(seed))?;
                s2.add_result(&r, Some(bid), Some(seed))
            })
            .await?;
            Ok(Json(json!({ "v": API_VERSION, "kind": "result", "result": info })).into_response())
        }
        Method::Wgan => {
            let zopt = req.zopt.unwrap_or(ZOptConfig { iterations: RESAMPLE_ZOPT_ITERATIONS, ..Default::default() });
            zopt.validate()?;
            let reply = optimize_job(&state, s, req.bundle_id, zopt, req.seed)?;
            Ok((StatusCode::ACCEPTED, Json(json!({ "v": API_VERSION, "kind": "job", "job": reply.0.job }))).into_response())
        }
    }
}

#[derive(Deserialize)]
struct ExportQuery {
    result: String,
    format: Option<String>,
}

async fn export(State(state): State<AppState>, Path(id): Path<String>, Query(q): Query<ExportQuery>) -> ApiResult<Response> {
    let s = session(&state, &id)?;
    let info = s.meta().results.get(&q.result).cloned().ok_or_else(|| ApiError::not_found("result", &q.result))?;
    match q.format.as_deref().unwrap_or("png") {
        "png" => {
            let path = s.result_path(&info.id, "png");
            let bytes = tokio::fs::read(&path).await.map_err(|e| ApiError::internal(format!("{}: {e}", path.display())))?;
            let disposition = format!("attachment; filename=\"{}.png\"", info.id);
            Ok(([(header::CONTENT_TYPE, "image/png".to_string()), (header::CONTENT_DISPOSITION, disposition)], bytes)
                .into_response())
        }
        "json" => Ok(Json(json!({ "v": API_VERSION, "result": info })).into_response()),
        other => Err(ApiError::bad_request(format!("unknown export format {other:?}; use png or json"))),
    }
}

async fn download_bundle(State(state): State<AppState>, Path((id, bundle)): Path<(String, String)>) -> ApiResult<Response> {
    let s = session(&state, &id)?;
    if s.bundle(&bundle).is_none() {
        return Err(ApiError::not_found("bundle", &bundle));
    }
    let path = s.bundle_path(&bundle);
    let bytes: Bytes = tokio::fs::read(&path).await.map_err(|e| ApiError::internal(format!("{}: {e}", path.display())))?.into();
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
}
