use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use persona_core::evaluation::bfi::FacetScoreTable;
use persona_core::evaluation::stories::StoryTask;
use persona_core::evaluation::{
    check_footers, compare, cross_average, parse_rating_csv, render_table, ComparisonReport, FooterCheck, Grouping,
    Metric, RatingTable, ReportedFooters, StoryRun,
};
use persona_core::gateway::Message;
use persona_core::{respond, CorpusStats, EpochDescriptor, TrainRun, Workspace};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::BTreeMap;

use crate::error::{ApiError, ApiResult, ErrorBody};
use crate::openapi::openapi_document;
use crate::AppState;

type AppJson<T> = Result<Json<T>, JsonRejection>;

pub(crate) fn routes() -> Router<Arc<AppState>> {
    let v1 = Router::new()
        .route("/characters", post(register).get(list_characters))
        .route("/characters/{id}", get(describe))
        .route("/characters/{id}/initialize", post(initialize))
        .route("/characters/{id}/train", post(start_training))
        .route("/characters/{id}/epochs", get(epochs))
        .route("/characters/{id}/persona", get(persona))
        .route("/characters/{id}/stats", get(stats))
        .route("/characters/{id}/stories", get(list_stories))
        .route("/characters/{id}/stories/{story_id}", get(get_story))
        .route("/runs", get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/sessions", post(open_session))
        .route("/sessions/{id}", get(get_session).delete(close_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/eval/bfi", post(eval_bfi))
        .route("/eval/compare", post(eval_compare))
        .route("/eval/stories", post(eval_stories))
        .route("/eval/ratings", post(eval_ratings));
    Router::new()
        .route("/healthz", get(healthz))
        .route("/openapi.json", get(openapi))
        .nest("/v1", v1)
        .fallback(|| async { ApiError::not_found("no such route") })
        .method_not_allowed_fallback(|| async {
            ApiError::new(
                StatusCode::METHOD_NOT_ALLOWED,
                "method_not_allowed",
                "method not allowed on this route",
            )
        })
}

/// Runs blocking workspace code off the async executor.
async fn blocking<T, F>(state: &Arc<AppState>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Workspace) -> persona_core::Result<T> + Send + 'static,
{
    let state = state.clone();
    tokio::task::spawn_blocking(move || f(&state.workspace))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<Value> {
    let p = &state.workspace.pipeline;
    Json(json!({
        "status": "ok",
        "model": p.gateway.model_id(),
        "prompt_set": p.prompts.version_hash(),
    }))
}

async fn openapi() -> Json<Value> {
    Json(openapi_document())
}

#[derive(Deserialize)]
struct RegisterRequest {
    corpus_path: PathBuf,
}

async fn register(
    State(state): State<Arc<AppState>>,
    body: AppJson<RegisterRequest>,
) -> ApiResult<(StatusCode, Json<persona_core::CharacterDescriptor>)> {
    let Json(req) = body?;
    let d = blocking(&state, move |ws| ws.register(&req.corpus_path)).await?;
    Ok((StatusCode::CREATED, Json(d)))
}

async fn list_characters(
    State(state): State<Arc<AppState>>,
) -> ApiResult<Json<Vec<persona_core::CharacterDescriptor>>> {
    Ok(Json(blocking(&state, |ws| ws.list()).await?))
}

async fn describe(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<persona_core::CharacterDescriptor>> {
    Ok(Json(blocking(&state, move |ws| ws.describe(&id)).await?))
}

#[derive(Serialize)]
struct InitializeResponse {
    character_id: String,
    epoch: u32,
    created_at: DateTime<Utc>,
    refined_info_tokens: usize,
    warnings: Vec<String>,
}

async fn initialize(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<(StatusCode, Json<InitializeResponse>)> {
    if state.training.lock().contains(&id) {
        return Err(ApiError::training_in_progress(&id));
    }
    let init = blocking(&state, move |ws| ws.initialize(&id)).await?;
    Ok((
        StatusCode::CREATED,
        Json(InitializeResponse {
            character_id: init.snapshot.character_id.clone(),
            epoch: init.snapshot.epoch,
            created_at: init.snapshot.created_at,
            refined_info_tokens: init.refined_info_tokens,
            warnings: init.warnings,
        }),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Running,
    Succeeded,
    Failed,
}

/// Progress of an asynchronous training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub run_id: String,
    pub character_id: String,
    pub state: RunState,
    pub resume_from: Option<u32>,
    /// Epochs persisted by this run so far.
    pub completed_epochs: Vec<u32>,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
    pub failed_epoch: Option<u32>,
    pub run: Option<TrainRun>,
    pub error: Option<ErrorBody>,
}

#[derive(Default, Deserialize)]
struct TrainRequest {
    resume_from: Option<u32>,
}

async fn start_training(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<RunStatus>)> {
    let req: TrainRequest = if body.iter().all(u8::is_ascii_whitespace) {
        TrainRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("train request: {e}")))?
    };
    let check_id = id.clone();
    let locked = blocking(&state, move |ws| Ok(ws.lineage(&check_id)?.is_locked())).await?;
    {
        let mut training = state.training.lock();
        if locked || !training.insert(id.clone()) {
            return Err(ApiError::training_in_progress(&id));
        }
    }
    let status = RunStatus {
        run_id: uuid::Uuid::new_v4().to_string(),
        character_id: id.clone(),
        state: RunState::Running,
        resume_from: req.resume_from,
        completed_epochs: Vec::new(),
        started_at: state.workspace.pipeline.clock.now(),
        finished_at: None,
        failed_epoch: None,
        run: None,
        error: None,
    };
    state.runs.lock().insert(status.run_id.clone(), status.clone());
    let st = state.clone();
    let run_id = status.run_id.clone();
    tokio::task::spawn_blocking(move || {
        let result = st.workspace.train(&id, req.resume_from, &mut |snapshot| {
            if let Some(r) = st.runs.lock().get_mut(&run_id) {
                r.completed_epochs.push(snapshot.epoch);
            }
        });
        let finished_at = st.workspace.pipeline.clock.now();
        if let Some(r) = st.runs.lock().get_mut(&run_id) {
            r.finished_at = Some(finished_at);
            match result {
                Ok(run) => {
                    r.state = RunState::Succeeded;
                    r.run = Some(run);
                }
                Err(failure) => {
                    tracing::warn!(run_id = %run_id, error = %failure, "training run failed");
                    r.state = RunState::Failed;
                    r.failed_epoch = failure.failed_epoch;
                    r.run = Some(failure.run);
                    r.error = Some(ApiError::from(failure.error).body);
                }
            }
        }
        st.training.lock().remove(&id);
    });
    Ok((StatusCode::ACCEPTED, Json(status)))
}

async fn list_runs(State(state): State<Arc<AppState>>) -> Json<Vec<RunStatus>> {
    let mut runs: Vec<RunStatus> = state.runs.lock().values().cloned().collect();
    runs.sort_by(|a, b| (a.started_at, &a.run_id).cmp(&(b.started_at, &b.run_id)));
    Json(runs)
}

async fn get_run(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<RunStatus>> {
    state
        .runs
        .lock()
        .get(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("no training run `{id}`")))
}

async fn epochs(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Vec<EpochDescriptor>>> {
    Ok(Json(blocking(&state, move |ws| ws.epochs(&id)).await?))
}

#[derive(Deserialize)]
struct EpochQuery {
    epoch: Option<u32>,
}

async fn persona(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    query: Result<Query<EpochQuery>, QueryRejection>,
) -> ApiResult<Json<persona_core::PersonaView>> {
    let Query(q) = query?;
    let view = blocking(&state, move |ws| {
        let epoch = match q.epoch {
            Some(e) => e,
            None => ws.describe(&id)?.head.unwrap_or(0),
        };
        ws.persona(&id, epoch)
    })
    .await?;
    Ok(Json(view))
}

async fn stats(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<CorpusStats>> {
    Ok(Json(blocking(&state, move |ws| ws.stats(&id)).await?))
}

async fn list_stories(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Vec<String>>> {
    Ok(Json(
        blocking(&state, move |ws| Ok(ws.lineage(&id)?.list_stories()?)).await?,
    ))
}

async fn get_story(
    State(state): State<Arc<AppState>>,
    Path((id, story_id)): Path<(String, String)>,
) -> ApiResult<Json<StoryTask>> {
    Ok(Json(
        blocking(&state, move |ws| Ok(ws.lineage(&id)?.get_story(&story_id)?)).await?,
    ))
}

#[derive(Deserialize)]
struct OpenSessionRequest {
    character_id: String,
    epoch: u32,
}

#[derive(Serialize)]
struct SessionView {
    session_id: String,
    character_id: String,
    display_name: String,
    epoch: u32,
    created_at: DateTime<Utc>,
    messages: Vec<Message>,
}

impl SessionView {
    fn of(s: &persona_core::ChatSession) -> Self {
        SessionView {
            session_id: s.id.clone(),
            character_id: s.character_id.clone(),
            display_name: s.display_name.clone(),
            epoch: s.epoch,
            created_at: s.created_at,
            messages: s.history.clone(),
        }
    }
}

async fn open_session(
    State(state): State<Arc<AppState>>,
    body: AppJson<OpenSessionRequest>,
) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let Json(req) = body?;
    let session_id = uuid::Uuid::new_v4().to_string();
    let sid = session_id.clone();
    let session = blocking(&state, move |ws| ws.open_session(&sid, &req.character_id, req.epoch)).await?;
    let view = SessionView::of(&session);
    state
        .sessions
        .lock()
        .insert(session_id, Arc::new(tokio::sync::Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(view)))
}

fn session(state: &AppState, id: &str) -> ApiResult<Arc<tokio::sync::Mutex<persona_core::ChatSession>>> {
    state
        .sessions
        .lock()
        .get(id)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("no session `{id}`")))
}

#[derive(Deserialize)]
struct MessageRequest {
    text: String,
}

#[derive(Serialize)]
struct MessageResponse {
    session_id: String,
    reply: String,
    turns: usize,
}

async fn post_message(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: AppJson<MessageRequest>,
) -> ApiResult<Json<MessageResponse>> {
    let Json(req) = body?;
    // Holding the session lock across the call serializes posts per session.
    let mut guard = session(&state, &id)?.lock_owned().await;
    let (reply, turns) = blocking(&state, move |ws| {
        let reply = respond(&mut guard, &req.text, &ws.pipeline)?;
        Ok((reply, guard.history.len()))
    })
    .await?;
    Ok(Json(MessageResponse {
        session_id: id,
        reply,
        turns,
    }))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    let s = session(&state, &id)?;
    let guard = s.lock().await;
    Ok(Json(SessionView::of(&guard)))
}

#[derive(Serialize)]
struct CloseResponse {
    session_id: String,
    closed: bool,
    transcript_path: Option<PathBuf>,
}

async fn close_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<CloseResponse>> {
    let s = session(&state, &id)?;
    let guard = s.lock_owned().await;
    state.sessions.lock().remove(&id);
    let transcript_path = if state.workspace.config.server.persist_transcripts {
        let path = blocking(&state, move |ws| {
            Ok(ws
                .lineage(&guard.character_id)?
                .put_transcript(&guard.id, &guard.transcript_jsonl())?)
        })
        .await?;
        Some(path)
    } else {
        None
    };
    Ok(Json(CloseResponse {
        session_id: id,
        closed: true,
        transcript_path,
    }))
}

#[derive(Deserialize)]
struct BfiRequest {
    character_id: String,
    epoch: u32,
    #[serde(default = "one")]
    runs: usize,
}

fn one() -> usize {
    1
}

async fn eval_bfi(State(state): State<Arc<AppState>>, body: AppJson<BfiRequest>) -> ApiResult<Json<FacetScoreTable>> {
    let Json(req) = body?;
    Ok(Json(
        blocking(&state, move |ws| ws.eval_bfi(&req.character_id, req.epoch, req.runs)).await?,
    ))
}

#[derive(Deserialize)]
struct NamedTable {
    name: String,
    scores: FacetScoreTable,
}

#[derive(Deserialize)]
struct CompareRequest {
    human: FacetScoreTable,
    models: Vec<NamedTable>,
    #[serde(default)]
    reported: Option<ReportedFooters>,
    #[serde(default)]
    title: Option<String>,
}

#[derive(Serialize)]
struct CompareResponse {
    report: ComparisonReport,
    table: String,
    footer_check: Option<FooterCheck>,
}

async fn eval_compare(body: AppJson<CompareRequest>) -> ApiResult<Json<CompareResponse>> {
    let Json(req) = body?;
    let models: Vec<(String, FacetScoreTable)> = req.models.into_iter().map(|m| (m.name, m.scores)).collect();
    let report = compare(&req.human, &models).map_err(persona_core::Error::from)?;
    let footer_check = req
        .reported
        .map(|r| check_footers(&report, &r))
        .transpose()
        .map_err(persona_core::Error::from)?;
    let table = render_table(&report, req.title.as_deref().unwrap_or(&req.human.respondent));
    Ok(Json(CompareResponse {
        report,
        table,
        footer_check,
    }))
}

#[derive(Deserialize)]
struct StoriesRequest {
    character_id: String,
    epoch: u32,
    #[serde(default = "four")]
    n: usize,
}

fn four() -> usize {
    4
}

#[derive(Serialize)]
struct StoriesResponse {
    story_ids: Vec<String>,
    #[serde(flatten)]
    run: StoryRun,
}

async fn eval_stories(
    State(state): State<Arc<AppState>>,
    body: AppJson<StoriesRequest>,
) -> ApiResult<Json<StoriesResponse>> {
    let Json(req) = body?;
    let run = blocking(&state, move |ws| ws.eval_stories(&req.character_id, req.epoch, req.n)).await?;
    Ok(Json(StoriesResponse {
        story_ids: run.stories.iter().map(|s| s.story_id.clone()).collect(),
        run,
    }))
}

#[derive(Deserialize)]
struct RatingsQuery {
    grouping: Option<Grouping>,
}

#[derive(Serialize)]
struct RatingsResponse {
    table: RatingTable,
    /// Unrounded mean of the row means.
    average: BTreeMap<Metric, f64>,
}

async fn eval_ratings(
    query: Result<Query<RatingsQuery>, QueryRejection>,
    body: Result<String, axum::extract::rejection::StringRejection>,
) -> ApiResult<Json<RatingsResponse>> {
    let Query(q) = query?;
    let csv = body?;
    let sheets = parse_rating_csv(csv.as_bytes()).map_err(persona_core::Error::from)?;
    let table = persona_core::evaluation::aggregate_ratings(&sheets, q.grouping.unwrap_or(Grouping::Group))
        .map_err(persona_core::Error::from)?;
    let average = cross_average(&table.rows);
    Ok(Json(RatingsResponse { table, average }))
}
