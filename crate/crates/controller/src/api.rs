use std::collections::{BTreeSet, VecDeque};
use std::convert::Infallible;
use std::sync::Arc;

use autodo_core::catalog::{BrowseTarget, BrowseView, CatalogError, Taxonomy, TemplateEntry, TemplateSummary};
use autodo_core::engine::protocol::EvaluationProtocol;
use autodo_core::engine::{default_schemas, EngineConfig};
use autodo_core::gymspec::{parse_spec, GymSpec, SpecError};
use axum::extract::{FromRequest, FromRequestParts, Path, Query, Request, State};
use axum::http::request::Parts;
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::analytics_api;
use crate::error::ApiError;
use crate::model::*;
use crate::service::Controller;
use crate::worker::assemble_protocols;

pub type AppState = Arc<Controller>;

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(axum::http::header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

/// A user authenticated by a static bearer token.
pub struct Principal(pub String);

impl FromRequestParts<AppState> for Principal {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let token = bearer(&parts.headers).ok_or(ApiError::Unauthenticated)?;
        state
            .config
            .user_tokens
            .get(token)
            .map(|p| Principal(p.clone()))
            .ok_or(ApiError::Unauthenticated)
    }
}

/// The bearer token a worker presents; checked against the job by the store.
pub struct JobToken(pub String);

impl FromRequestParts<AppState> for JobToken {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _state: &AppState) -> Result<Self, Self::Rejection> {
        bearer(&parts.headers)
            .map(|t| JobToken(t.to_string()))
            .ok_or(ApiError::AuthFailed)
    }
}

/// JSON body whose rejections use the API's error format.
pub struct Body<T>(pub T);

impl<T: DeserializeOwned, S: Send + Sync> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        Json::<T>::from_request(req, state)
            .await
            .map(|Json(v)| Body(v))
            .map_err(|e| ApiError::BadRequest(e.body_text()))
    }
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/health", get(|| async { Json(json!({ "status": "ok" })) }))
        .route("/projects", post(create_project).get(list_projects))
        .route("/projects/{p}/gyms", post(put_gym).get(list_gyms))
        .route("/projects/{p}/gyms/{g}", get(get_gym))
        .route("/projects/{p}/configs", get(list_configs))
        .route("/projects/{p}/jobs", post(create_job).get(list_jobs))
        .route("/configs", post(put_config))
        .route("/configs/{c}", get(get_config))
        .route("/engine/schemas", get(schemas))
        .route("/jobs/{j}", get(job_summary))
        .route("/jobs/{j}/launch", post(launch))
        .route("/jobs/{j}/cancel", post(cancel))
        .route("/jobs/{j}/events", post(append_event).get(stream_events))
        .route("/jobs/{j}/log", get(event_log))
        .route("/jobs/{j}/bundle", get(bundle))
        .route("/jobs/{j}/heartbeat", post(heartbeat))
        .route("/jobs/{j}/result", post(post_result).get(get_result))
        .route("/jobs/{j}/candidates/{c}/protocols", get(candidate_protocols))
        .route("/catalog/search", get(catalog_search))
        .route("/catalog/templates", post(publish_template))
        .route("/catalog/templates/{id}", get(get_template))
        .route("/catalog/{taxonomy}/nodes", get(catalog_roots))
        .route("/catalog/{taxonomy}/nodes/{id}", get(catalog_node))
        .merge(analytics_api::routes());
    Router::new().nest("/api/v1", api).with_state(state)
}

#[derive(Deserialize)]
struct CreateProject {
    name: String,
    #[serde(default)]
    members: Vec<String>,
}

async fn create_project(
    State(c): State<AppState>,
    Principal(who): Principal,
    Body(req): Body<CreateProject>,
) -> Result<impl IntoResponse, ApiError> {
    let project = c.store.create_project(&req.name, &who, &req.members)?;
    Ok((StatusCode::CREATED, Json(project)))
}

async fn list_projects(State(c): State<AppState>, Principal(who): Principal) -> Result<Json<Vec<Project>>, ApiError> {
    Ok(Json(c.store.list_projects(&who)?))
}

/// Parses and validates a gym document, reporting findings on failure.
pub fn checked_spec(document: &str) -> Result<GymSpec, ApiError> {
    let spec = parse_spec(document).map_err(|e| match e {
        SpecError::Invalid(report) => ApiError::Validation {
            message: "gym spec is invalid".into(),
            findings: serde_json::to_value(&report.findings).ok(),
        },
        other => ApiError::validation(other.to_string()),
    })?;
    let report = spec.validate();
    if !report.is_valid() {
        return Err(ApiError::Validation {
            message: "gym spec is invalid".into(),
            findings: serde_json::to_value(&report.findings).ok(),
        });
    }
    Ok(spec)
}

async fn put_gym(
    State(c): State<AppState>,
    Principal(who): Principal,
    Path(p): Path<String>,
    body: String,
) -> Result<impl IntoResponse, ApiError> {
    c.store.require_member(&p, &who)?;
    let spec = checked_spec(&body)?;
    let gym = c.store.put_gym(&p, &spec)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "gym_id": gym.gym_id, "project_id": gym.project_id, "version": gym.version })),
    ))
}

async fn list_gyms(
    State(c): State<AppState>,
    Principal(who): Principal,
    Path(p): Path<String>,
) -> Result<Json<Vec<StoredGym>>, ApiError> {
    c.store.require_member(&p, &who)?;
    Ok(Json(c.store.list_gyms(&p)?))
}

async fn get_gym(
    State(c): State<AppState>,
    Principal(who): Principal,
    Path((p, g)): Path<(String, String)>,
) -> Result<Json<StoredGym>, ApiError> {
    c.store.require_member(&p, &who)?;
    Ok(Json(c.store.gym(&p, &g)?))
}

#[derive(Deserialize)]
struct PutConfig {
    project_id: String,
    config: EngineConfig,
    #[serde(default)]
    share: bool,
}

async fn put_config(
    State(c): State<AppState>,
    Principal(who): Principal,
    Body(req): Body<PutConfig>,
) -> Result<impl IntoResponse, ApiError> {
    c.store.require_member(&req.project_id, &who)?;
    req.config
        .validate(&default_schemas())
        .map_err(|e| ApiError::validation(e.to_string()))?;
    let stored = c.store.put_config(&req.project_id, &who, &req.config, req.share)?;
    Ok((StatusCode::CREATED, Json(stored)))
}

async fn get_config(
    State(c): State<AppState>,
    Principal(who): Principal,
    Path(id): Path<String>,
) -> Result<Json<StoredConfig>, ApiError> {
    let config = c.store.config(&id)?;
    c.store.require_member(&config.project_id, &who)?;
    Ok(Json(config))
}

async fn list_configs(
    State(c): State<AppState>,
    Principal(who): Principal,
    Path(p): Path<String>,
) -> Result<Json<Vec<StoredConfig>>, ApiError> {
    c.store.require_member(&p, &who)?;
    Ok(Json(c.store.visible_configs(&p, &who)?))
}

async fn schemas(Principal(_): Principal) -> Json<Value> {
    Json(serde_json::to_value(default_schemas()).expect("schemas serialize"))
}

fn default_cluster() -> Cluster {
    Cluster::Shared
}

#[derive(Deserialize)]
struct CreateJob {
    gym_id: String,
    config_id: String,
    #[serde(default = "default_cluster")]
    cluster: Cluster,
}

async fn create_job(
    State(c): State<AppState>,
    Principal(who): Principal,
    Path(p): Path<String>,
    Body(req): Body<CreateJob>,
) -> Result<impl IntoResponse, ApiError> {
    c.store.require_member(&p, &who)?;
    c.store.gym(&p, &req.gym_id)?;
    let config = c.store.config(&req.config_id)?;
    if !c.store.config_visible(&config, &p, &who)? {
        return Err(ApiError::Forbidden(config.project_id));
    }
    let (job, api_token) = c.store.create_job(&p, &req.gym_id, &req.config_id, &req.cluster)?;
    Ok((
        StatusCode::CREATED,
        Json(CreatedJob {
            job_id: job.id,
            status: job.status,
            api_token,
        }),
    ))
}

async fn list_jobs(
    State(c): State<AppState>,
    Principal(who): Principal,
    Path(p): Path<String>,
) -> Result<Json<Vec<JobSummary>>, ApiError> {
    c.store.require_member(&p, &who)?;
    Ok(Json(c.store.list_jobs(&p)?))
}

fn member_job(c: &Controller, job_id: &str, who: &str) -> Result<Job, ApiError> {
    let job = c.store.job(job_id)?;
    c.store.require_member(&job.project_id, who)?;
    Ok(job)
}

async fn job_summary(
    State(c): State<AppState>,
    Principal(who): Principal,
    Path(j): Path<String>,
) -> Result<Json<JobSummary>, ApiError> {
    member_job(&c, &j, &who)?;
    Ok(Json(c.store.summary(&j)?))
}

async fn launch(
    State(c): State<AppState>,
    Principal(who): Principal,
    Path(j): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    member_job(&c, &j, &who)?;
    let job = c.launch(&j).await?;
    Ok((StatusCode::ACCEPTED, Json(job)))
}

async fn cancel(
    State(c): State<AppState>,
    Principal(who): Principal,
    Path(j): Path<String>,
) -> Result<Json<Job>, ApiError> {
    member_job(&c, &j, &who)?;
    Ok(Json(c.cancel(&j, &who)?))
}

async fn append_event(
    State(c): State<AppState>,
    JobToken(token): JobToken,
    Path(j): Path<String>,
    Body(event): Body<NewEvent>,
) -> Result<impl IntoResponse, ApiError> {
    let appended = c.append_event(&j, &token, &event)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "seq": appended.event.seq, "status": appended.status })),
    ))
}

#[derive(Deserialize)]
struct FromSeq {
    from_seq: Option<u64>,
}

fn start_seq(q: &FromSeq) -> Result<u64, ApiError> {
    match q.from_seq {
        Some(0) => Err(ApiError::BadRequest("from_seq starts at 1".into())),
        Some(n) => Ok(n),
        None => Ok(1),
    }
}

/// SSE frame for one event: `id` is the seq, `event` the kind, `data` the
/// event as JSON.
pub fn event_frame(e: &JobEvent) -> Event {
    Event::default()
        .id(e.seq.to_string())
        .event(e.kind.as_str())
        .data(serde_json::to_string(e).expect("events serialize"))
}

struct Tail {
    c: AppState,
    job_id: String,
    next: u64,
    rx: tokio::sync::watch::Receiver<u64>,
    pending: VecDeque<Event>,
    done: bool,
}

const PAGE: usize = 256;

fn tail_stream(c: AppState, job_id: String, from: u64) -> impl Stream<Item = Result<Event, Infallible>> {
    // subscribe before the first read so no append can slip between them
    let rx = c.subscribe(&job_id);
    let tail = Tail {
        c,
        job_id,
        next: from,
        rx,
        pending: VecDeque::new(),
        done: false,
    };
    futures::stream::unfold(tail, |mut t| async move {
        loop {
            if let Some(frame) = t.pending.pop_front() {
                return Some((Ok(frame), t));
            }
            if t.done {
                return None;
            }
            t.rx.borrow_and_update();
            let page = match t.c.store.events(&t.job_id, t.next, PAGE) {
                Ok(p) => p,
                Err(e) => {
                    t.done = true;
                    t.pending
                        .push_back(Event::default().event("error").data(json!({ "message": e.to_string() }).to_string()));
                    continue;
                }
            };
            if let Some(last) = page.events.last() {
                t.next = last.seq + 1;
                t.pending.extend(page.events.iter().map(event_frame));
                continue;
            }
            if page.status.is_terminal() {
                t.done = true;
                t.pending.push_back(
                    Event::default()
                        .event("end")
                        .data(json!({ "last_seq": page.last_seq, "status": page.status }).to_string()),
                );
                continue;
            }
            if t.rx.changed().await.is_err() {
                return None;
            }
        }
    })
}

async fn stream_events(
    State(c): State<AppState>,
    Principal(who): Principal,
    Path(j): Path<String>,
    Query(q): Query<FromSeq>,
) -> Result<impl IntoResponse, ApiError> {
    member_job(&c, &j, &who)?;
    let from = start_seq(&q)?;
    let keep_alive = KeepAlive::new().interval(c.config.keep_alive);
    Ok(Sse::new(tail_stream(Arc::clone(&c), j, from)).keep_alive(keep_alive))
}

async fn event_log(
    State(c): State<AppState>,
    Principal(who): Principal,
    Path(j): Path<String>,
    Query(q): Query<FromSeq>,
) -> Result<Json<Vec<JobEvent>>, ApiError> {
    member_job(&c, &j, &who)?;
    let mut next = start_seq(&q)?;
    let mut out = Vec::new();
    loop {
        let page = c.store.events(&j, next, 4096)?;
        let Some(last) = page.events.last() else { break };
        next = last.seq + 1;
        out.extend(page.events);
    }
    Ok(Json(out))
}

async fn bundle(
    State(c): State<AppState>,
    JobToken(token): JobToken,
    Path(j): Path<String>,
) -> Result<Json<JobBundle>, ApiError> {
    let job = c.store.check_token(&j, &token)?;
    let gym = c.store.gym(&job.project_id, &job.gym_id)?;
    let config = c.store.config(&job.config_id)?;
    Ok(Json(JobBundle {
        job_id: job.id,
        gym: gym.spec,
        config: config.config,
    }))
}

async fn heartbeat(
    State(c): State<AppState>,
    JobToken(token): JobToken,
    Path(j): Path<String>,
) -> Result<Json<Value>, ApiError> {
    let status = c.store.heartbeat(&j, &token)?;
    Ok(Json(json!({ "status": status })))
}

async fn post_result(
    State(c): State<AppState>,
    JobToken(token): JobToken,
    Path(j): Path<String>,
    Body(result): Body<Value>,
) -> Result<StatusCode, ApiError> {
    c.store.store_result(&j, &token, &result)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn get_result(
    State(c): State<AppState>,
    Principal(who): Principal,
    Path(j): Path<String>,
) -> Result<Json<Value>, ApiError> {
    member_job(&c, &j, &who)?;
    Ok(Json(c.store.result(&j)?))
}

async fn candidate_protocols(
    State(c): State<AppState>,
    Principal(who): Principal,
    Path((j, candidate)): Path<(String, u32)>,
) -> Result<Json<Vec<EvaluationProtocol>>, ApiError> {
    member_job(&c, &j, &who)?;
    let chunks = c.store.protocol_chunks(&j, candidate)?;
    if chunks.is_empty() {
        return Err(ApiError::NotFound(format!("protocols of candidate {candidate}")));
    }
    assemble_protocols(&chunks).map(Json).map_err(ApiError::Internal)
}

fn catalog_error(e: CatalogError) -> ApiError {
    match e {
        CatalogError::NotFound(id) => ApiError::NotFound(id),
        CatalogError::ValidationFailed(report) => ApiError::Validation {
            message: "template spec is invalid".into(),
            findings: serde_json::to_value(&report.findings).ok(),
        },
        other => ApiError::validation(other.to_string()),
    }
}

fn taxonomy(name: &str) -> Result<Taxonomy, ApiError> {
    Taxonomy::parse(name).ok_or_else(|| ApiError::NotFound(format!("taxonomy `{name}`")))
}

async fn catalog_roots(
    State(c): State<AppState>,
    Principal(_): Principal,
    Path(t): Path<String>,
) -> Result<Json<BrowseView>, ApiError> {
    let t = taxonomy(&t)?;
    c.catalog().browse(BrowseTarget::Root(t)).map(Json).map_err(catalog_error)
}

async fn catalog_node(
    State(c): State<AppState>,
    Principal(_): Principal,
    Path((t, id)): Path<(String, String)>,
) -> Result<Json<BrowseView>, ApiError> {
    let t = taxonomy(&t)?;
    let catalog = c.catalog();
    match catalog.node(&id) {
        Some(n) if n.taxonomy == t => {}
        _ => return Err(ApiError::NotFound(format!("node `{id}`"))),
    }
    catalog.browse(BrowseTarget::Node(&id)).map(Json).map_err(catalog_error)
}

async fn get_template(
    State(c): State<AppState>,
    Principal(_): Principal,
    Path(id): Path<String>,
) -> Result<Json<TemplateEntry>, ApiError> {
    c.catalog()
        .template(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::NotFound(format!("template `{id}`")))
}

#[derive(Deserialize)]
struct Publish {
    spec: Value,
    name: Option<String>,
    description: Option<String>,
    category_ids: BTreeSet<String>,
}

async fn publish_template(
    State(c): State<AppState>,
    Principal(who): Principal,
    Body(req): Body<Publish>,
) -> Result<impl IntoResponse, ApiError> {
    let spec = checked_spec(&req.spec.to_string())?;
    let name = req.name.unwrap_or_else(|| spec.name.clone());
    let description = req.description.unwrap_or_else(|| spec.description.clone());
    let mut catalog = c.catalog_mut();
    let entry = catalog
        .publish_template(spec, &name, &description, req.category_ids, &who)
        .map_err(catalog_error)?;
    c.store.save_template(&entry)?;
    Ok((StatusCode::CREATED, Json(entry)))
}

#[derive(Deserialize)]
struct SearchQuery {
    #[serde(default)]
    q: String,
}

async fn catalog_search(
    State(c): State<AppState>,
    Principal(_): Principal,
    Query(q): Query<SearchQuery>,
) -> Json<Vec<TemplateSummary>> {
    Json(
        c.catalog()
            .search_templates(&q.q)
            .into_iter()
            .map(|t| TemplateSummary {
                id: t.id.clone(),
                name: t.name.clone(),
                description: t.description.clone(),
            })
            .collect(),
    )
}
