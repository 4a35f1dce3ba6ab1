//! Read-only JSON service over one fitted archive.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use laggard::archive::FORMAT_VERSION;
use laggard::data::{ModifierColumn, ModifierKind};
use laggard::inference::{
    encode_row, exposure_selection, modifier_pip, modifier_splits, summarize, FitSummary, GroupBy, HetDraws,
    MarginalizePolicy, ModifierValue,
};
use laggard::mcmc::PosteriorFit;
use laggard::{Error, ErrorCategory, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const DEFAULT_CONF: f64 = 0.95;
/// Subgroup queries cross at most this many modifiers.
pub const MAX_GROUP_BY: usize = 2;
const SELECTION_BF: f64 = 0.5;

pub struct AppState {
    pub fit: PosteriorFit,
    pub summary: FitSummary,
    het: Option<HetDraws>,
}

impl AppState {
    pub fn new(fit: PosteriorFit) -> Result<Self> {
        let summary = summarize(&fit, DEFAULT_CONF, &MarginalizePolicy::default())?;
        let het = if fit.meta.spec.het {
            Some(HetDraws::new(&fit)?)
        } else {
            None
        };
        Ok(Self { fit, summary, het })
    }
}

pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn not_found(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            code: "not_found",
            message: message.into(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match e.category() {
            ErrorCategory::Usage | ErrorCategory::Data => (StatusCode::BAD_REQUEST, "invalid_request"),
            ErrorCategory::UnsupportedModel => (StatusCode::NOT_FOUND, "unsupported"),
            ErrorCategory::Io => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self {
            status,
            code,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "format_version": FORMAT_VERSION,
            "error": { "code": self.code, "message": self.message },
        });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult = std::result::Result<Json<Value>, ApiError>;

fn envelope<T: Serialize>(key: &str, value: T) -> ApiResult {
    let value = serde_json::to_value(value).map_err(Error::from)?;
    Ok(Json(json!({ "format_version": FORMAT_VERSION, key: value })))
}

fn het(state: &AppState) -> std::result::Result<&HetDraws, ApiError> {
    state
        .het
        .as_ref()
        .ok_or_else(|| ApiError::not_found("archive has no modifier trees"))
}

fn check_conf(conf: f64) -> std::result::Result<f64, ApiError> {
    if conf > 0.0 && conf < 1.0 {
        Ok(conf)
    } else {
        Err(Error::InvalidArgument(format!("conf must lie in (0, 1), got {conf}")).into())
    }
}

#[derive(Debug, Serialize)]
struct ModifierMeta {
    name: String,
    kind: &'static str,
    /// Observed range of a continuous modifier.
    min: Option<f64>,
    max: Option<f64>,
    levels: Option<Vec<String>>,
}

fn modifier_meta(fit: &PosteriorFit) -> Vec<ModifierMeta> {
    fit.meta
        .spec
        .modifiers
        .iter()
        .map(|def| match &def.kind {
            ModifierKind::Continuous => {
                let col = fit.modifiers.index_of(&def.name).map(|j| &fit.modifiers.columns()[j]);
                let (min, max) = match col {
                    Some(ModifierColumn::Continuous { values }) => (
                        values.iter().copied().reduce(f64::min),
                        values.iter().copied().reduce(f64::max),
                    ),
                    _ => (None, None),
                };
                ModifierMeta {
                    name: def.name.clone(),
                    kind: "continuous",
                    min,
                    max,
                    levels: None,
                }
            }
            ModifierKind::Categorical { levels } => ModifierMeta {
                name: def.name.clone(),
                kind: "categorical",
                min: None,
                max: None,
                levels: Some(levels.clone()),
            },
        })
        .collect()
}

async fn meta(State(s): State<Arc<AppState>>) -> ApiResult {
    let m = &s.fit.meta;
    Ok(Json(json!({
        "format_version": FORMAT_VERSION,
        "model_class": m.model_class,
        "family": m.spec.family,
        "rows": m.rows,
        "lags": m.lags,
        "draws": s.fit.draws(),
        "exposures": m.exposure_names,
        "covariates": m.covariate_names,
        "modifiers": modifier_meta(&s.fit),
    })))
}

async fn summary(State(s): State<Arc<AppState>>) -> ApiResult {
    envelope("summary", &s.summary)
}

async fn pips(State(s): State<Arc<AppState>>) -> ApiResult {
    het(&s)?;
    envelope("pips", modifier_pip(&s.fit)?)
}

#[derive(Debug, Deserialize)]
struct SplitsQuery {
    modifier: Option<String>,
}

async fn splits(State(s): State<Arc<AppState>>, Query(q): Query<SplitsQuery>) -> ApiResult {
    het(&s)?;
    let name = q
        .modifier
        .ok_or_else(|| Error::InvalidArgument("query parameter `modifier` is required".into()))?;
    let shares = modifier_splits(&s.fit, &name)?;
    Ok(Json(json!({
        "format_version": FORMAT_VERSION,
        "modifier": name,
        "splits": shares,
    })))
}

async fn exposures(State(s): State<Arc<AppState>>) -> ApiResult {
    let selection = if s.fit.meta.spec.mixture {
        exposure_selection(&s.fit, SELECTION_BF)?
    } else {
        Vec::new()
    };
    Ok(Json(json!({
        "format_version": FORMAT_VERSION,
        "exposures": s.fit.meta.exposure_names,
        "selection": selection,
    })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndividualRequest {
    pub values: BTreeMap<String, ModifierValue>,
    pub conf: Option<f64>,
}

async fn individual(State(s): State<Arc<AppState>>, Json(req): Json<IndividualRequest>) -> ApiResult {
    let draws = het(&s)?;
    let conf = check_conf(req.conf.unwrap_or(DEFAULT_CONF))?;
    let row = encode_row(&s.fit, &req.values)?;
    envelope("effects", draws.individual(&row, conf)?)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubgroupRequest {
    pub group_by: Vec<GroupBy>,
    pub conf: Option<f64>,
}

async fn subgroup(State(s): State<Arc<AppState>>, Json(req): Json<SubgroupRequest>) -> ApiResult {
    let draws = het(&s)?;
    let conf = check_conf(req.conf.unwrap_or(DEFAULT_CONF))?;
    if req.group_by.is_empty() || req.group_by.len() > MAX_GROUP_BY {
        return Err(Error::InvalidArgument(format!("group_by takes 1 to {MAX_GROUP_BY} modifiers")).into());
    }
    envelope("subgroups", draws.subgroups(&s.fit, &req.group_by, conf)?)
}

async fn fallback() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/meta", get(meta))
        .route("/api/summary", get(summary))
        .route("/api/pips", get(pips))
        .route("/api/splits", get(splits))
        .route("/api/exposures", get(exposures))
        .route("/api/individual", post(individual))
        .route("/api/subgroup", post(subgroup))
        .fallback(fallback)
        .with_state(state)
}

/// Serve until interrupted. `on_bound` receives the bound address.
pub fn serve(state: AppState, host: &str, port: u16, on_bound: impl FnOnce(SocketAddr)) -> Result<()> {
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host, port)).await?;
        on_bound(listener.local_addr()?);
        axum::serve(listener, router(Arc::new(state)))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
