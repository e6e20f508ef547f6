//! JSON HTTP API over a store directory.
//!
//! Reads are served from an immutable model snapshot published after every
//! write; writes are serialized through one store handle, so the command log
//! stays single-writer. Mutating requests name their actor in the
//! `x-actor-role` header and may carry an `expected_revision` for optimistic
//! concurrency.

use std::path::Path as FsPath;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Mutex;

use portfolio_core::ids::{ChangeRequestId, IntegrationId, ProductId};
use portfolio_core::kpp::{EnvironmentClass, EvidenceKind, IntegrationState};
use portfolio_core::lifecycle::render_car_text;
use portfolio_core::planning::{ChangeLevel, ChangeTarget, CrState};
use portfolio_core::stack::{Conflict, StackManifest};
use portfolio_core::store::Store;
use portfolio_core::{Clock, Command, Error, ErrorCategory, Model, NodeId, Outcome, Period, Result, Role};

pub const ROLE_HEADER: &str = "x-actor-role";

pub struct AppState {
    writer: Mutex<Store>,
    view: RwLock<Arc<Model>>,
}

impl AppState {
    pub fn new(store: Store) -> Arc<AppState> {
        let view = RwLock::new(Arc::new(store.model().clone()));
        Arc::new(AppState { writer: Mutex::new(store), view })
    }

    pub fn model(&self) -> Arc<Model> {
        self.view.read().expect("view lock").clone()
    }

    /// Runs one write and republishes the read view if anything committed.
    /// A stale change apply commits and still reports an error.
    async fn write(&self, f: impl FnOnce(&mut Store) -> Result<Outcome>) -> Result<Outcome> {
        let mut store = self.writer.lock().await;
        let result = f(&mut store);
        if store.model().last_seq != self.model().last_seq {
            *self.view.write().expect("view lock") = Arc::new(store.model().clone());
        }
        result
    }
}

#[derive(Debug)]
pub enum ApiError {
    Core(Error),
    BadRequest { kind: &'static str, message: String },
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError::Core(e)
    }
}

pub fn status_for(category: ErrorCategory) -> StatusCode {
    match category {
        ErrorCategory::Validation => StatusCode::BAD_REQUEST,
        ErrorCategory::Forbidden => StatusCode::FORBIDDEN,
        ErrorCategory::Conflict => StatusCode::CONFLICT,
        ErrorCategory::NotFound => StatusCode::NOT_FOUND,
        ErrorCategory::Storage => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind, message) = match self {
            ApiError::Core(e) => (status_for(e.category()), e.kind(), e.to_string()),
            ApiError::BadRequest { kind, message } => (StatusCode::BAD_REQUEST, kind, message),
        };
        (status, Json(json!({ "error": { "kind": kind, "message": message } }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn bad(kind: &'static str, message: impl Into<String>) -> ApiError {
    ApiError::BadRequest { kind, message: message.into() }
}

fn role(headers: &HeaderMap) -> ApiResult<Role> {
    let v = headers
        .get(ROLE_HEADER)
        .ok_or_else(|| bad("missing_role", format!("mutating requests need the {ROLE_HEADER} header")))?;
    let s = v.to_str().map_err(|_| bad("validation", "role header is not text"))?;
    Ok(s.parse()?)
}

fn body<T: DeserializeOwned>(bytes: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(bytes).map_err(|e| bad("validation", format!("request body: {e}")))
}

fn period(s: &str) -> ApiResult<Period> {
    s.parse().map_err(|_| bad("validation", format!("invalid period {s:?}")))
}

fn node(s: &str) -> ApiResult<NodeId> {
    NodeId::parse(s).ok_or_else(|| bad("validation", format!("invalid node {s:?}")))
}

/// Serves the API until the process is stopped.
pub fn serve(root: &FsPath, clock: Clock, addr: &str) -> Result<()> {
    let store = Store::open(root, clock)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        eprintln!("pfm: serving {} on http://{}", root.display(), listener.local_addr()?);
        axum::serve(listener, router(AppState::new(store))).await?;
        Ok(())
    })
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/portfolio", get(get_portfolio))
        .route("/evm/{node}/series", get(get_series))
        .route("/evm/{node}/{period}", get(get_evm))
        .route("/alerts/{period}", get(get_alerts))
        .route("/change-requests", get(list_change_requests).post(create_change_request))
        .route("/change-requests/{id}", get(get_change_request))
        .route("/change-requests/{id}/transition", post(change_request_transition))
        .route("/audit", get(get_audit))
        .route("/integrations", get(list_integrations).post(create_integration))
        .route("/integrations/{id}", get(get_integration))
        .route("/integrations/{id}/transition", post(integration_transition))
        .route("/kpp", get(get_kpp))
        .route("/kpp/{product}", get(get_product_kpp))
        .route("/car/{fy}", get(get_car))
        .route("/snapshots/{period}", get(get_snapshot))
        .route("/stack/manifests", get(list_manifests))
        .route("/stack/manifests/{version}", get(get_manifest))
        .route("/commands", post(post_command))
        .with_state(state)
}

type AppStateRef = State<Arc<AppState>>;

async fn get_portfolio(State(s): AppStateRef) -> ApiResult<Response> {
    let m = s.model();
    let portfolio = m.portfolio()?;
    Ok(Json(json!({
        "portfolio": portfolio,
        "sdk_groups": m.groups.values().collect::<Vec<_>>(),
        "products": m.products_by_name(),
        "lifecycles": m.lifecycles.values().collect::<Vec<_>>(),
        "revision": m.last_seq,
        "last_updated": m.last_updated,
    }))
    .into_response())
}

async fn get_evm(State(s): AppStateRef, Path((n, p)): Path<(String, String)>) -> ApiResult<Response> {
    Ok(Json(s.model().rollup(&node(&n)?, period(&p)?)?).into_response())
}

#[derive(Deserialize)]
struct RangeQuery {
    from: Option<String>,
    to: Option<String>,
}

async fn get_series(State(s): AppStateRef, Path(n): Path<String>, Query(q): Query<RangeQuery>) -> ApiResult<Response> {
    let m = s.model();
    let h = m.horizon()?;
    let from = q.from.as_deref().map(period).transpose()?.unwrap_or(h.first());
    let to = q.to.as_deref().map(period).transpose()?.unwrap_or(h.last());
    Ok(Json(m.index_series(&node(&n)?, from, to)?).into_response())
}

async fn get_alerts(State(s): AppStateRef, Path(p): Path<String>) -> ApiResult<Response> {
    let m = s.model();
    Ok(Json(m.detect_struggling(period(&p)?, m.config()?)?).into_response())
}

#[derive(Deserialize)]
struct StateQuery {
    state: Option<String>,
    product: Option<String>,
}

fn token<T: DeserializeOwned>(what: &str, s: &str) -> ApiResult<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| bad("validation", format!("invalid {what} {s:?}")))
}

async fn list_change_requests(State(s): AppStateRef, Query(q): Query<StateQuery>) -> ApiResult<Response> {
    let state: Option<CrState> = q.state.as_deref().map(|v| token("state", v)).transpose()?;
    let m = s.model();
    let list: Vec<_> = m.change_requests.values().filter(|c| state.is_none_or(|st| c.state == st)).collect();
    Ok(Json(list).into_response())
}

async fn get_change_request(State(s): AppStateRef, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(s.model().change_request(&ChangeRequestId(id))?).into_response())
}

#[derive(Deserialize)]
struct NewChangeRequest {
    level: ChangeLevel,
    targets: Vec<ChangeTarget>,
    rationale: String,
    effective_period: Period,
}

async fn create_change_request(State(s): AppStateRef, headers: HeaderMap, raw: Bytes) -> ApiResult<Response> {
    let actor = role(&headers)?;
    let req: NewChangeRequest = body(&raw)?;
    let cmd = Command::DraftChange {
        level: req.level,
        targets: req.targets,
        rationale: req.rationale,
        effective_period: req.effective_period,
    };
    let out = s.write(|st| st.execute(cmd, actor)).await?;
    Ok(created(out))
}

#[derive(Deserialize)]
struct CrTransitionRequest {
    to: CrState,
    #[serde(default)]
    note: String,
    #[serde(default)]
    expected_revision: Option<u64>,
}

async fn change_request_transition(
    State(s): AppStateRef,
    Path(id): Path<String>,
    headers: HeaderMap,
    raw: Bytes,
) -> ApiResult<Response> {
    let actor = role(&headers)?;
    let req: CrTransitionRequest = body(&raw)?;
    let id = ChangeRequestId(id);
    let expected_revision = req.expected_revision;
    let cmd = match req.to {
        CrState::UnderReview => Command::SubmitChange { change_request: id, expected_revision },
        CrState::Approved | CrState::Rejected => Command::ReviewChange {
            change_request: id,
            approve: req.to == CrState::Approved,
            note: req.note,
            expected_revision,
        },
        CrState::Applied => Command::ApplyChange { change_request: id, expected_revision },
        CrState::Drafted => {
            let from = s.model().change_request(&id)?.state;
            return Err(Error::IllegalTransition {
                entity: "change request",
                id: id.to_string(),
                from: from.to_string(),
                to: req.to.to_string(),
            }
            .into());
        }
    };
    let out = s.write(|st| st.execute(cmd, actor)).await?;
    Ok(Json(out).into_response())
}

async fn get_audit(State(s): AppStateRef) -> ApiResult<Response> {
    Ok(Json(s.model().audit_log()).into_response())
}

async fn list_integrations(State(s): AppStateRef, Query(q): Query<StateQuery>) -> ApiResult<Response> {
    let state: Option<IntegrationState> = q.state.as_deref().map(|v| token("state", v)).transpose()?;
    let m = s.model();
    let list: Vec<_> = m
        .integrations
        .values()
        .filter(|i| state.is_none_or(|st| i.state == st))
        .filter(|i| q.product.as_deref().is_none_or(|p| i.product_id.as_str() == p))
        .collect();
    Ok(Json(list).into_response())
}

async fn get_integration(State(s): AppStateRef, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(s.model().integration(&IntegrationId(id))?).into_response())
}

#[derive(Deserialize)]
struct NewIntegration {
    product: ProductId,
    capability: String,
    client: String,
    environment_class: EnvironmentClass,
    #[serde(default)]
    sustainability_note: Option<String>,
}

async fn create_integration(State(s): AppStateRef, headers: HeaderMap, raw: Bytes) -> ApiResult<Response> {
    let actor = role(&headers)?;
    let req: NewIntegration = body(&raw)?;
    let cmd = Command::RecordIntegration {
        product: req.product,
        capability: req.capability,
        client: req.client,
        environment_class: req.environment_class,
        sustainability_note: req.sustainability_note,
    };
    let out = s.write(|st| st.execute(cmd, actor)).await?;
    Ok(created(out))
}

#[derive(Deserialize)]
struct EvidenceUpload {
    kind: EvidenceKind,
    uri_or_path: String,
    content_base64: String,
}

#[derive(Deserialize)]
struct IntegrationTransitionRequest {
    to: IntegrationState,
    #[serde(default)]
    evidence: Option<EvidenceUpload>,
    #[serde(default)]
    sustainability_note: Option<String>,
    #[serde(default)]
    report: String,
    #[serde(default)]
    expected_revision: Option<u64>,
}

async fn integration_transition(
    State(s): AppStateRef,
    Path(id): Path<String>,
    headers: HeaderMap,
    raw: Bytes,
) -> ApiResult<Response> {
    let actor = role(&headers)?;
    let req: IntegrationTransitionRequest = body(&raw)?;
    let id = IntegrationId(id);
    let expected_revision = req.expected_revision;
    let out = match req.to {
        IntegrationState::EvidenceAttached => {
            let ev = req.evidence.ok_or_else(|| bad("validation", "evidence_attached needs an evidence object"))?;
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(ev.content_base64.as_bytes())
                .map_err(|e| bad("validation", format!("content_base64: {e}")))?;
            s.write(|st| st.attach_evidence(&id, ev.kind, &ev.uri_or_path, &bytes, actor, expected_revision)).await?
        }
        IntegrationState::UnderSmeReview => {
            let cmd = Command::SubmitIntegration {
                integration: id,
                sustainability_note: req.sustainability_note,
                expected_revision,
            };
            s.write(|st| st.execute(cmd, actor)).await?
        }
        IntegrationState::SmeEndorsed | IntegrationState::SmeRejected => {
            let cmd = Command::SmeReview {
                integration: id,
                endorse: req.to == IntegrationState::SmeEndorsed,
                report: req.report,
                expected_revision,
            };
            s.write(|st| st.execute(cmd, actor)).await?
        }
        IntegrationState::FinallyApproved => {
            let cmd = Command::FinalApproval { integration: id, expected_revision };
            s.write(|st| st.execute(cmd, actor)).await?
        }
        IntegrationState::Proposed => {
            let from = s.model().integration(&id)?.state;
            return Err(Error::IllegalTransition {
                entity: "integration",
                id: id.to_string(),
                from: from.to_string(),
                to: req.to.to_string(),
            }
            .into());
        }
    };
    Ok(Json(out).into_response())
}

async fn get_kpp(State(s): AppStateRef) -> ApiResult<Response> {
    Ok(Json(s.model().portfolio_kpp_score()?).into_response())
}

async fn get_product_kpp(State(s): AppStateRef, Path(p): Path<String>) -> ApiResult<Response> {
    Ok(Json(s.model().product_kpp_status(&ProductId(p))?).into_response())
}

#[derive(Deserialize)]
struct FormatQuery {
    format: Option<String>,
}

fn text(body: String, content_type: &'static str) -> Response {
    ([(header::CONTENT_TYPE, content_type)], body).into_response()
}

async fn get_car(State(s): AppStateRef, Path(fy): Path<String>, Query(q): Query<FormatQuery>) -> ApiResult<Response> {
    let fy: i32 = fy.parse().map_err(|_| bad("validation", format!("invalid fiscal year {fy:?}")))?;
    let car = s.model().generate_car(fy)?;
    match q.format.as_deref() {
        None | Some("json") => Ok(Json(car).into_response()),
        Some("text") => Ok(text(render_car_text(&car), "text/plain; charset=utf-8")),
        Some(other) => Err(Error::UnknownFormat { token: other.to_string(), supported: "json, text".into() }.into()),
    }
}

async fn get_snapshot(State(s): AppStateRef, Path(p): Path<String>, Query(q): Query<FormatQuery>) -> ApiResult<Response> {
    let m = s.model();
    let t = period(&p)?;
    match q.format.as_deref() {
        None => Ok(Json(m.snapshot(t)?).into_response()),
        Some(f) => {
            let body = m.export_status(t, f)?;
            Ok(text(body, if f == "csv" { "text/csv; charset=utf-8" } else { "application/json" }))
        }
    }
}

#[derive(Serialize)]
struct ManifestView<'a> {
    manifest: &'a StackManifest,
    conflicts: Vec<Conflict>,
}

async fn list_manifests(State(s): AppStateRef) -> ApiResult<Response> {
    let m = s.model();
    let views = m
        .stack
        .manifests
        .values()
        .map(|mf| Ok(ManifestView { manifest: mf, conflicts: m.check_compatibility(&mf.stack_version)? }))
        .collect::<Result<Vec<_>>>()?;
    Ok(Json(views).into_response())
}

async fn get_manifest(State(s): AppStateRef, Path(v): Path<String>) -> ApiResult<Response> {
    let m = s.model();
    let view = ManifestView { manifest: m.manifest(&v)?, conflicts: m.check_compatibility(&v)? };
    Ok(Json(view).into_response())
}

/// Any command, for operations without a dedicated endpoint.
async fn post_command(State(s): AppStateRef, headers: HeaderMap, raw: Bytes) -> ApiResult<Response> {
    let actor = role(&headers)?;
    let cmd: Command = body(&raw)?;
    let out = s.write(|st| st.execute(cmd, actor)).await?;
    Ok(Json(out).into_response())
}

fn created(out: Outcome) -> Response {
    (StatusCode::CREATED, Json(out)).into_response()
}
