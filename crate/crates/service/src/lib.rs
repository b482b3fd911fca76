//! HTTP front end for per-stratum adaptive tournaments.
//!
//! Every stratum owns one rating state, one append-only event log and one
//! book of open pair tickets. Writes to a stratum are serialized; reads
//! clone an immutable snapshot.

use std::collections::{HashMap, VecDeque};
use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use arena_core::domain::{Country, DemographicAxis, GroupRegistry, Outcome};
use arena_core::io::{read_event_log, EventLogWriter, IoError};
use arena_core::matchmaker::{replay_log, select_pair, update_ratings, MatchConfig, MatchError, ResultEvent, TournamentState};
use arena_core::simulator::stratum_key;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown stratum {0:?}")]
    UnknownStratum(String),
    #[error("unknown ticket {0:?}")]
    UnknownTicket(String),
    #[error("stratum has {0} models, need at least 2")]
    TooFewModels(usize),
    #[error("invalid outcome {0}; expected \"A\", \"B\" or \"tie\"")]
    InvalidOutcome(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("event log: {0}")]
    Storage(#[from] IoError),
    #[error("rating update failed: {0}")]
    Rating(MatchError),
    #[error("replaying {stratum}: {source}")]
    Replay { stratum: String, source: MatchError },
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            Self::UnknownStratum(_) | Self::UnknownTicket(_) => StatusCode::NOT_FOUND,
            Self::TooFewModels(_) => StatusCode::CONFLICT,
            Self::InvalidOutcome(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Self::BadRequest(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            Self::UnknownStratum(_) => "unknown_stratum",
            Self::UnknownTicket(_) => "unknown_ticket",
            Self::TooFewModels(_) => "too_few_models",
            Self::InvalidOutcome(_) => "invalid_outcome",
            Self::BadRequest(_) => "bad_request",
            Self::Storage(_) => "storage_error",
            Self::Rating(_) => "rating_error",
            Self::Replay { .. } | Self::Config(_) => "internal_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        if self.status().is_server_error() {
            log::error!("{self}");
        }
        let body = ErrorBody {
            code: self.code().to_owned(),
            message: self.to_string(),
        };
        (self.status(), Json(body)).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairTicket {
    pub ticket_id: String,
    pub stratum: String,
    pub model_a: String,
    pub model_b: String,
    pub issued_at: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultSubmission {
    pub ticket_id: String,
    pub outcome: String,
    pub idempotency_key: String,
}

/// Body returned for an accepted result, and again verbatim for any
/// resubmission with the same idempotency key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitAck {
    pub seq: u64,
    pub stratum: String,
    pub idempotency_key: String,
    pub model_a: String,
    pub model_b: String,
    pub outcome: Outcome,
}

impl SubmitAck {
    fn from_event(e: &ResultEvent) -> Self {
        Self {
            seq: e.seq,
            stratum: e.stratum.clone(),
            idempotency_key: e.event_id.clone(),
            model_a: e.model_a.clone(),
            model_b: e.model_b.clone(),
            outcome: e.outcome,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandingEntry {
    pub model: String,
    pub mu: f64,
    pub sigma: f64,
    pub conservative: f64,
    pub plays: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub models: Vec<String>,
    pub strata: Vec<String>,
    pub log_dir: PathBuf,
    pub match_cfg: MatchConfig,
    /// Oldest unanswered tickets are forgotten beyond this many.
    pub max_open_tickets: usize,
}

impl ServiceConfig {
    pub fn new<S: Into<String>>(models: impl IntoIterator<Item = S>, log_dir: impl Into<PathBuf>) -> Self {
        Self {
            models: models.into_iter().map(Into::into).collect(),
            strata: standard_strata(),
            log_dir: log_dir.into(),
            match_cfg: MatchConfig::default(),
            max_open_tickets: 100_000,
        }
    }
}

/// The 22 country-by-group tournaments of the standard group registry.
pub fn standard_strata() -> Vec<String> {
    let reg = GroupRegistry::standard();
    let mut out = Vec::new();
    for country in Country::ALL {
        for axis in DemographicAxis::ALL {
            for label in reg.labels(axis) {
                if !axis.is_country_namespaced() || country.owns_label(axis, label) {
                    out.push(stratum_key(country, axis, label));
                }
            }
        }
    }
    out
}

/// Log file name for a stratum. Bytes outside `[A-Za-z0-9-]` are hex
/// escaped so every stratum maps to a distinct portable name.
pub fn log_file_name(stratum: &str) -> String {
    let mut out = String::with_capacity(stratum.len() + 6);
    for b in stratum.bytes() {
        if b.is_ascii_alphanumeric() || b == b'-' {
            out.push(b as char);
        } else {
            out.push_str(&format!("~{b:02X}"));
        }
    }
    out.push_str(".jsonl");
    out
}

struct Writer {
    state: TournamentState,
    log: EventLogWriter,
    acks: HashMap<String, SubmitAck>,
}

#[derive(Default)]
struct TicketBook {
    open: HashMap<String, PairTicket>,
    order: VecDeque<String>,
}

struct Tournament {
    name: String,
    snapshot: RwLock<Arc<TournamentState>>,
    writer: Mutex<Writer>,
    tickets: Mutex<TicketBook>,
}

impl Tournament {
    fn open(name: &str, cfg: &ServiceConfig) -> Result<Self, ServiceError> {
        let path = cfg.log_dir.join(log_file_name(name));
        let log = EventLogWriter::open(&path)?;
        let events = read_event_log(&path)?;
        let state = replay_log(name, cfg.models.iter().cloned(), &events, &cfg.match_cfg).map_err(|source| {
            ServiceError::Replay {
                stratum: name.to_owned(),
                source,
            }
        })?;
        let acks = events
            .iter()
            .map(|e| (e.event_id.clone(), SubmitAck::from_event(e)))
            .collect();
        if !events.is_empty() {
            log::info!("{name}: replayed {} events", events.len());
        }
        Ok(Self {
            name: name.to_owned(),
            snapshot: RwLock::new(Arc::new(state.clone())),
            writer: Mutex::new(Writer { state, log, acks }),
            tickets: Mutex::new(TicketBook::default()),
        })
    }

    fn snapshot(&self) -> Arc<TournamentState> {
        self.snapshot.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn issue(&self, cfg: &ServiceConfig) -> Result<PairTicket, ServiceError> {
        let state = self.snapshot();
        let (model_a, model_b) = select_pair(&state, &cfg.match_cfg, &mut rand::rng()).map_err(|e| match e {
            MatchError::TooFewModels(n) => ServiceError::TooFewModels(n),
            other => ServiceError::Rating(other),
        })?;
        let ticket = PairTicket {
            ticket_id: uuid::Uuid::new_v4().to_string(),
            stratum: self.name.clone(),
            model_a,
            model_b,
            issued_at: now(),
        };
        let mut book = self.tickets.lock().unwrap_or_else(|e| e.into_inner());
        book.open.insert(ticket.ticket_id.clone(), ticket.clone());
        book.order.push_back(ticket.ticket_id.clone());
        while book.order.len() > cfg.max_open_tickets {
            if let Some(old) = book.order.pop_front() {
                book.open.remove(&old);
            }
        }
        Ok(ticket)
    }

    fn submit(&self, key: String, ticket_id: &str, outcome: Outcome, cfg: &MatchConfig) -> Result<SubmitAck, ServiceError> {
        let mut w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(ack) = w.acks.get(&key) {
            return Ok(ack.clone());
        }
        let ticket = {
            let book = self.tickets.lock().unwrap_or_else(|e| e.into_inner());
            book.open
                .get(ticket_id)
                .cloned()
                .ok_or_else(|| ServiceError::UnknownTicket(ticket_id.to_owned()))?
        };
        let event = ResultEvent {
            seq: w.state.log_cursor + 1,
            event_id: key.clone(),
            stratum: self.name.clone(),
            model_a: ticket.model_a,
            model_b: ticket.model_b,
            outcome,
            timestamp: now(),
        };
        // Validate and run the update before anything reaches the log.
        w.state.check_event(&event).map_err(ServiceError::Rating)?;
        let ra = w.state.rating(&event.model_a).map_err(ServiceError::Rating)?;
        let rb = w.state.rating(&event.model_b).map_err(ServiceError::Rating)?;
        update_ratings(ra, rb, outcome, cfg).map_err(ServiceError::Rating)?;

        if let Err(e) = w.log.append(&event) {
            // Reopening trims any torn tail left by the failed write.
            if let Ok(fresh) = EventLogWriter::open(w.log.path()) {
                w.log = fresh;
            }
            return Err(e.into());
        }
        w.state.apply(&event, cfg).map_err(ServiceError::Rating)?;
        let ack = SubmitAck::from_event(&event);
        w.acks.insert(key, ack.clone());
        *self.snapshot.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(w.state.clone());
        self.tickets.lock().unwrap_or_else(|e| e.into_inner()).open.remove(ticket_id);
        Ok(ack)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

struct Inner {
    cfg: ServiceConfig,
    tournaments: HashMap<String, Arc<Tournament>>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    /// Opens every stratum log under `cfg.log_dir` and replays it.
    pub fn open(cfg: ServiceConfig) -> Result<Self, ServiceError> {
        cfg.match_cfg.validate().map_err(|e| ServiceError::Config(e.to_string()))?;
        if cfg.strata.is_empty() {
            return Err(ServiceError::Config("no strata".into()));
        }
        std::fs::create_dir_all(&cfg.log_dir).map_err(|source| {
            ServiceError::Storage(IoError::Io {
                path: cfg.log_dir.clone(),
                source,
            })
        })?;
        let mut tournaments = HashMap::new();
        for s in &cfg.strata {
            if !tournaments.contains_key(s) {
                tournaments.insert(s.clone(), Arc::new(Tournament::open(s, &cfg)?));
            }
        }
        Ok(Self {
            inner: Arc::new(Inner { cfg, tournaments }),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.cfg
    }

    pub fn log_dir(&self) -> &Path {
        &self.inner.cfg.log_dir
    }

    fn tournament(&self, stratum: &str) -> Result<Arc<Tournament>, ServiceError> {
        self.inner
            .tournaments
            .get(stratum)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownStratum(stratum.to_owned()))
    }

    /// Current rating state of a stratum.
    pub fn snapshot(&self, stratum: &str) -> Result<Arc<TournamentState>, ServiceError> {
        Ok(self.tournament(stratum)?.snapshot())
    }

    pub fn next_pair(&self, stratum: &str) -> Result<PairTicket, ServiceError> {
        self.tournament(stratum)?.issue(&self.inner.cfg)
    }

    /// Blocking: appends to the log and syncs before returning.
    pub fn submit(&self, stratum: &str, sub: ResultSubmission) -> Result<SubmitAck, ServiceError> {
        let t = self.tournament(stratum)?;
        if sub.idempotency_key.is_empty() {
            return Err(ServiceError::BadRequest("empty idempotency_key".into()));
        }
        let outcome = parse_outcome(&sub.outcome)?;
        t.submit(sub.idempotency_key, &sub.ticket_id, outcome, &self.inner.cfg.match_cfg)
    }

    pub fn standings(&self, stratum: &str) -> Result<Vec<StandingEntry>, ServiceError> {
        let state = self.snapshot(stratum)?;
        Ok(standings_of(&state))
    }
}

fn parse_outcome(s: &str) -> Result<Outcome, ServiceError> {
    Outcome::from_wire(s).ok_or_else(|| ServiceError::InvalidOutcome(format!("{s:?}")))
}

/// Ordered by `mu - 3 sigma` descending, then model id.
pub fn standings_of(state: &TournamentState) -> Vec<StandingEntry> {
    let mut out: Vec<StandingEntry> = state
        .ratings
        .iter()
        .map(|(m, r)| StandingEntry {
            model: m.clone(),
            mu: r.mu,
            sigma: r.sigma,
            conservative: r.mu - 3.0 * r.sigma,
            plays: state.play_counts.get(m).copied().unwrap_or(0),
        })
        .collect();
    out.sort_by(|a, b| {
        b.conservative
            .total_cmp(&a.conservative)
            .then_with(|| a.model.cmp(&b.model))
    });
    out
}

async fn next_pair(State(app): State<AppState>, UrlPath(stratum): UrlPath<String>) -> Result<Json<PairTicket>, ServiceError> {
    app.next_pair(&stratum).map(Json)
}

async fn submit(
    State(app): State<AppState>,
    UrlPath(stratum): UrlPath<String>,
    body: axum::body::Bytes,
) -> Result<Json<SubmitAck>, ServiceError> {
    app.tournament(&stratum)?;
    let raw: serde_json::Value =
        serde_json::from_slice(&body).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    let field = |name: &str| raw.get(name).and_then(|v| v.as_str()).map(str::to_owned);
    let outcome = match raw.get("outcome") {
        Some(serde_json::Value::String(s)) => s.clone(),
        Some(other) => return Err(ServiceError::InvalidOutcome(other.to_string())),
        None => return Err(ServiceError::BadRequest("missing field outcome".into())),
    };
    let sub = ResultSubmission {
        ticket_id: field("ticket_id").ok_or_else(|| ServiceError::BadRequest("missing field ticket_id".into()))?,
        idempotency_key: field("idempotency_key")
            .ok_or_else(|| ServiceError::BadRequest("missing field idempotency_key".into()))?,
        outcome,
    };
    let ack = tokio::task::spawn_blocking(move || app.submit(&stratum, sub))
        .await
        .map_err(|e| ServiceError::BadRequest(format!("submission aborted: {e}")))??;
    Ok(Json(ack))
}

async fn standings(
    State(app): State<AppState>,
    UrlPath(stratum): UrlPath<String>,
) -> Result<Json<Vec<StandingEntry>>, ServiceError> {
    app.standings(&stratum).map(Json)
}

async fn fallback() -> ServiceError {
    ServiceError::BadRequest("no such route".into())
}

pub fn router(app: AppState) -> Router {
    Router::new()
        .route("/tournaments/{stratum}/next-pair", get(next_pair))
        .route("/tournaments/{stratum}/results", post(submit))
        .route("/tournaments/{stratum}/standings", get(standings))
        .fallback(fallback)
        .with_state(app)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    if let Ok(addr) = listener.local_addr() {
        log::info!("listening on {addr}");
    }
    axum::serve(listener, router(app))
        .with_graceful_shutdown(shutdown)
        .await
}
