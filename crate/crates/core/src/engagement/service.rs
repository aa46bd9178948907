use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;

use super::store::{NewPost, SampleStatus, Store};
use super::EngagementError;
use crate::metrics::{IiesWindow, MetricsError, Verdict};

pub type SharedStore = Arc<RwLock<Store>>;

impl IntoResponse for EngagementError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self {
            EngagementError::NotFound { .. } => (StatusCode::NOT_FOUND, "not_found"),
            EngagementError::InvalidInput(_) => (StatusCode::BAD_REQUEST, "invalid_input"),
            EngagementError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            EngagementError::Rejected(_) => (StatusCode::CONFLICT, "rejected"),
            EngagementError::Metrics(MetricsError::NoRelevantPosts | MetricsError::ZeroFollowers) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "unmeasurable")
            }
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        (status, Json(json!({ "error": self.to_string(), "kind": kind }))).into_response()
    }
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, EngagementError> {
    serde_json::from_slice(body).map_err(|e| EngagementError::InvalidInput(format!("request body: {e}")))
}

/// Runs a mutation on the blocking pool under the write lock.
async fn write<T, F>(store: SharedStore, f: F) -> Result<T, EngagementError>
where
    T: Send + 'static,
    F: FnOnce(&mut Store) -> Result<T, EngagementError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || {
        let mut guard = store.write().unwrap_or_else(|e| e.into_inner());
        f(&mut guard)
    })
    .await
    .map_err(|e| EngagementError::Io {
        context: "writer task".into(),
        source: io::Error::other(e.to_string()),
    })?
}

fn read(store: &SharedStore) -> std::sync::RwLockReadGuard<'_, Store> {
    store.read().unwrap_or_else(|e| e.into_inner())
}

#[derive(Deserialize)]
struct SampleQuery {
    status: Option<String>,
}

async fn list_samples(State(store): State<SharedStore>, Query(q): Query<SampleQuery>) -> Result<Response, EngagementError> {
    let status = match q.status.as_deref() {
        None | Some("all") => None,
        Some(s) => Some(
            SampleStatus::parse(s)
                .ok_or_else(|| EngagementError::InvalidInput(format!("unknown status {s:?}")))?,
        ),
    };
    let guard = read(&store);
    Ok(Json(guard.samples(status)).into_response())
}

async fn sample_image(State(store): State<SharedStore>, UrlPath(id): UrlPath<String>) -> Result<Response, EngagementError> {
    let guard = read(&store);
    let bytes = guard
        .image(&id)
        .ok_or_else(|| EngagementError::not_found("sample", &id))?
        .to_vec();
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VerdictBody {
    verdict: Verdict,
    #[serde(default)]
    note: String,
}

async fn post_verdict(
    State(store): State<SharedStore>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Response, EngagementError> {
    let body: VerdictBody = parse_json(&body)?;
    let record = write(store, move |s| s.record_verdict(&id, body.verdict, &body.note, Utc::now())).await?;
    Ok(Json(record).into_response())
}

async fn post_post(State(store): State<SharedStore>, body: Bytes) -> Result<Response, EngagementError> {
    let body: NewPost = parse_json(&body)?;
    let record = write(store, move |s| s.create_post(body, Utc::now())).await?;
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

async fn post_snapshots(State(store): State<SharedStore>, body: Bytes) -> Result<Response, EngagementError> {
    let text = String::from_utf8(body.to_vec()).map_err(|_| EngagementError::InvalidInput("body is not UTF-8".into()))?;
    let outcome = write(store, move |s| s.ingest_snapshots(&text, Utc::now())).await?;
    Ok(Json(outcome).into_response())
}

#[derive(Deserialize)]
struct ReportQuery {
    as_of: Option<String>,
}

async fn page_report(
    State(store): State<SharedStore>,
    UrlPath(handle): UrlPath<String>,
    Query(q): Query<ReportQuery>,
) -> Result<Response, EngagementError> {
    let as_of = match q.as_of {
        None => Utc::now(),
        Some(s) => DateTime::parse_from_rfc3339(&s)
            .map_err(|_| EngagementError::InvalidInput(format!("as_of {s:?} is not an RFC 3339 timestamp")))?
            .with_timezone(&Utc),
    };
    let guard = read(&store);
    Ok(Json(guard.report_page(&handle, as_of, IiesWindow::default())?).into_response())
}

async fn curation_rate(State(store): State<SharedStore>) -> Response {
    Json(read(&store).curation()).into_response()
}

/// The HTTP interface over `store`; `ui_dir`, when given, is served under `/ui`.
pub fn router(store: SharedStore, ui_dir: Option<&Path>) -> Router {
    let mut app = Router::new()
        .route("/samples", get(list_samples))
        .route("/samples/{id}/image", get(sample_image))
        .route("/samples/{id}/verdict", post(post_verdict))
        .route("/posts", post(post_post))
        .route("/snapshots", post(post_snapshots))
        .route("/pages/{handle}/report", get(page_report))
        .route("/metrics/curation-rate", get(curation_rate));
    if let Some(dir) = ui_dir {
        app = app.nest_service("/ui", tower_http::services::ServeDir::new(dir));
    }
    app.with_state(store)
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub data_dir: PathBuf,
    pub ui_dir: Option<PathBuf>,
    pub default_page: String,
}

/// Binds `addr`, turning an occupied port into a readable diagnostic.
pub async fn bind(addr: SocketAddr) -> Result<TcpListener, EngagementError> {
    TcpListener::bind(addr).await.map_err(|source| {
        let context = if source.kind() == io::ErrorKind::AddrInUse {
            format!("cannot bind {addr}: address already in use (another petgan serve? choose another with --bind or PETGAN_BIND)")
        } else {
            format!("cannot bind {addr}")
        };
        EngagementError::Io { context, source }
    })
}

/// Serves until `shutdown` resolves, then drains requests and syncs the
/// journal. `on_ready` receives the bound address.
pub async fn serve(
    config: ServiceConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
    on_ready: impl FnOnce(SocketAddr),
) -> Result<(), EngagementError> {
    let listener = bind(config.bind).await?;
    let store = Store::open_with_page(&config.data_dir, &config.default_page)?;
    let store: SharedStore = Arc::new(RwLock::new(store));
    let local = listener.local_addr().map_err(|source| EngagementError::Io {
        context: "bound socket".into(),
        source,
    })?;
    on_ready(local);
    axum::serve(listener, router(store.clone(), config.ui_dir.as_deref()))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|source| EngagementError::Io {
            context: "http server".into(),
            source,
        })?;
    let guard = read(&store);
    guard.sync()
}

#[cfg(test)]
mod tests {
    use axum::body::Body;
    use axum::http::Request;
    use tower::ServiceExt;

    use super::*;
    use crate::train::SampleProvenance;

    fn app() -> (tempfile::TempDir, SharedStore, Vec<String>) {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Store::open(dir.path()).unwrap();
        let prov = SampleProvenance {
            index: 0,
            checkpoint_id: "c".into(),
            tau: None,
            seed: 0,
        };
        let ids = (0..2u8)
            .map(|i| s.register_sample(&[i], &prov, Utc::now()).unwrap().0.id)
            .collect();
        (dir, Arc::new(RwLock::new(s)), ids)
    }

    async fn call(store: &SharedStore, req: Request<Body>) -> (StatusCode, Vec<u8>) {
        let resp = router(store.clone(), None).oneshot(req).await.unwrap();
        let status = resp.status();
        let body = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
        (status, body.to_vec())
    }

    fn get_req(uri: &str) -> Request<Body> {
        Request::get(uri).body(Body::empty()).unwrap()
    }

    fn post_req(uri: &str, body: &str) -> Request<Body> {
        Request::post(uri).body(Body::from(body.to_string())).unwrap()
    }

    #[tokio::test]
    async fn review_queue_flow() {
        let (_d, store, ids) = app();
        let (st, body) = call(&store, get_req("/samples?status=pending")).await;
        assert_eq!(st, StatusCode::OK);
        let queue: Vec<serde_json::Value> = serde_json::from_slice(&body).unwrap();
        assert_eq!(queue.len(), 2);
        assert_eq!(queue[0]["id"], ids[0]);

        let (st, _) = call(&store, post_req(&format!("/samples/{}/verdict", ids[0]), r#"{"verdict":"fit","note":"ok"}"#)).await;
        assert_eq!(st, StatusCode::OK);
        let (_, body) = call(&store, get_req("/samples?status=pending")).await;
        assert_eq!(serde_json::from_slice::<Vec<serde_json::Value>>(&body).unwrap().len(), 1);

        let (_, body) = call(&store, get_req("/metrics/curation-rate")).await;
        let rate: serde_json::Value = serde_json::from_slice(&body).unwrap();
        assert_eq!(rate["rate"], 1.0);
    }

    #[tokio::test]
    async fn invalid_requests_leave_storage_unchanged() {
        let (_d, store, ids) = app();
        let before = read(&store).journal_len();
        for body in [r#"{"verdict":"maybe"}"#, "not json", r#"{"note":"x"}"#, r#"{"verdict":"fit","extra":1}"#] {
            let (st, _) = call(&store, post_req(&format!("/samples/{}/verdict", ids[0]), body)).await;
            assert_eq!(st, StatusCode::BAD_REQUEST, "{body}");
        }
        let (st, _) = call(&store, post_req("/samples/unknown/verdict", r#"{"verdict":"fit"}"#)).await;
        assert_eq!(st, StatusCode::NOT_FOUND);
        let (st, _) = call(&store, get_req("/samples?status=weird")).await;
        assert_eq!(st, StatusCode::BAD_REQUEST);
        assert_eq!(read(&store).journal_len(), before);
    }

    #[tokio::test]
    async fn images_posts_snapshots_and_reports() {
        let (_d, store, ids) = app();
        let (st, body) = call(&store, get_req(&format!("/samples/{}/image", ids[1]))).await;
        assert_eq!((st, body), (StatusCode::OK, vec![1u8]));
        let (st, _) = call(&store, get_req("/samples/zz/image")).await;
        assert_eq!(st, StatusCode::NOT_FOUND);

        let post = format!(r#"{{"sample_id":"{}","posted_at":"2021-03-01T12:00:00Z","relevant":true,"caption":"c"}}"#, ids[0]);
        let (st, _) = call(&store, post_req("/posts", &post)).await;
        assert_eq!(st, StatusCode::CONFLICT);
        call(&store, post_req(&format!("/samples/{}/verdict", ids[0]), r#"{"verdict":"fit"}"#)).await;
        let (st, body) = call(&store, post_req("/posts", &post)).await;
        assert_eq!(st, StatusCode::CREATED);
        let created: serde_json::Value = serde_json::from_slice(&body).unwrap();
        assert_eq!(created["post_id"], "post-0001");

        let csv = "post_id,observed_at,likes,comments,followers\npost-0001,2021-03-02T12:10:00Z,40,2,120\npost-0001,2021-03-02T12:10:00Z,40,2,120\n";
        let (st, body) = call(&store, post_req("/snapshots", csv)).await;
        assert_eq!(st, StatusCode::OK);
        let out: serde_json::Value = serde_json::from_slice(&body).unwrap();
        assert_eq!(out["accepted"], 1);
        assert_eq!(out["rejected"][0]["reason"], "duplicate");

        let (st, body) = call(&store, get_req("/pages/petgan/report?as_of=2021-03-03T00:00:00Z")).await;
        assert_eq!(st, StatusCode::OK);
        let report: serde_json::Value = serde_json::from_slice(&body).unwrap();
        assert_eq!(report["p_ies"]["value"], 0.35);
        assert_eq!(report["posts"][0]["i_ies"]["status"], "measured");
        let (st, _) = call(&store, get_req("/pages/petgan/report?as_of=2021-02-01T00:00:00Z")).await;
        assert_eq!(st, StatusCode::BAD_REQUEST);
        let (st, _) = call(&store, get_req("/pages/nobody/report")).await;
        assert_eq!(st, StatusCode::NOT_FOUND);
    }

    #[tokio::test]
    async fn busy_port_is_diagnosed() {
        let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let err = bind(held.local_addr().unwrap()).await.unwrap_err();
        assert!(err.to_string().contains("already in use"), "{err}");
    }
}
