//! Local HTTP service behind the annotation UI. The model is loaded once
//! and never changes; edits only touch the session's label assignment.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use anyhow::Context;
use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lcm_core::depth::StratifyOptions;
use lcm_core::labeler::{
    decode_label_map, propagate_labels, set_manual_label, snap_labels, visible_areas,
    LabelAssignment, LabelError,
};
use lcm_core::layers::{export_stack, LayerError};
use lcm_core::model::{CharacterModel, MeshId};
use lcm_core::pngio;
use lcm_core::psd::{export_psd, PsdError};
use lcm_core::raster::{render_composite, visibility_masks, VisibilityMask};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

use crate::cli::{select_meshes, SelectError};

const RENDER_CACHE_LIMIT: usize = 256;

pub struct Session {
    pub id: String,
    pub assignment: LabelAssignment,
    pub undo: Vec<LabelAssignment>,
    pub redo: Vec<LabelAssignment>,
    /// Bumped by every mutation; clients may send it back in `If-Match`.
    pub revision: u64,
    pub dirty: bool,
}

pub struct AppState {
    model: CharacterModel,
    masks: Vec<VisibilityMask>,
    areas: BTreeMap<MeshId, u64>,
    opts: StratifyOptions,
    session: Mutex<Session>,
    /// PNG renders keyed by the drawn mesh ids.
    renders: Mutex<HashMap<Vec<u32>, Bytes>>,
    persist: Option<PathBuf>,
}

impl AppState {
    /// Loads the session from `persist` when that file exists; otherwise
    /// the session starts from the labels stored in the model.
    pub fn new(
        model: CharacterModel,
        tau_vis: f64,
        opts: StratifyOptions,
        persist: Option<PathBuf>,
    ) -> anyhow::Result<Arc<Self>> {
        let masks = visibility_masks(&model, tau_vis)?;
        let assignment = match persist.as_deref().filter(|p| p.exists()) {
            Some(p) => {
                let a = LabelAssignment::from_json(&fs::read_to_string(p)?)
                    .with_context(|| format!("parsing session {}", p.display()))?;
                a.check(&model)?;
                a
            }
            None => LabelAssignment::from_model(&model),
        };
        let id = format!(
            "{:x}",
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_nanos())
                .unwrap_or_default()
        );
        Ok(Arc::new(AppState {
            areas: visible_areas(&masks),
            masks,
            opts,
            session: Mutex::new(Session {
                id,
                assignment,
                undo: Vec::new(),
                redo: Vec::new(),
                revision: 0,
                dirty: false,
            }),
            renders: Mutex::new(HashMap::new()),
            persist,
            model,
        }))
    }

    pub fn model(&self) -> &CharacterModel {
        &self.model
    }

    pub fn session(&self) -> MutexGuard<'_, Session> {
        self.session.lock().unwrap_or_else(|e| e.into_inner())
    }
}

#[derive(Debug)]
pub struct ApiError(pub StatusCode, pub String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

fn not_found(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, msg.into())
}

fn conflict(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::CONFLICT, msg.into())
}

impl From<SelectError> for ApiError {
    fn from(e: SelectError) -> Self {
        match e {
            SelectError::Malformed(_) => bad_request(e.to_string()),
            _ => not_found(e.to_string()),
        }
    }
}

/// Label errors raised while applying a request body.
fn body_error(e: LabelError) -> ApiError {
    match e {
        LabelError::UnknownMesh(_) => not_found(e.to_string()),
        LabelError::NoLabeledMesh => conflict(e.to_string()),
        _ => bad_request(e.to_string()),
    }
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/model", get(get_model))
        .route("/render", get(get_render))
        .route("/mesh/{id}/mask", get(get_mask))
        .route("/class/{name}/preview", get(get_preview))
        .route("/labels", get(get_labels))
        .route("/labels/{mesh_id}", post(post_label))
        .route("/propagate", post(post_propagate))
        .route("/snap", post(post_snap))
        .route("/undo", post(post_undo))
        .route("/redo", post(post_redo))
        .route("/export/assignment", get(export_assignment))
        .route("/export/psd", get(export_psd_file))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(
    state: Arc<AppState>,
    port: u16,
    static_dir: Option<PathBuf>,
) -> anyhow::Result<()> {
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    log::info!("serving on http://{addr}");
    axum::serve(listener, router(state, static_dir)).await?;
    Ok(())
}

fn png(bytes: impl Into<Body>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes.into()).into_response()
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(internal)?
}

async fn get_model(State(st): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let m = &st.model;
    let meshes: Vec<_> = m
        .meshes
        .iter()
        .map(|x| {
            json!({
                "id": x.id.0,
                "name": x.name,
                "path": x.hierarchy_path,
                "drawOrder": x.draw_order,
                "opacity": x.opacity,
                "label": x.label.and_then(|c| m.taxonomy.name(c)),
            })
        })
        .collect();
    Json(json!({
        "session": st.session().id,
        "canvas": { "width": m.canvas_width, "height": m.canvas_height },
        "meshes": meshes,
        "hierarchy": m.groups(),
        "taxonomy": { "classes": m.taxonomy.names(), "stratify": m.taxonomy.stratify_names() },
    }))
}

#[derive(Deserialize)]
struct RenderQuery {
    visible: Option<String>,
    classes: Option<String>,
}

fn parse_ids(s: &str) -> Result<Vec<u32>, ApiError> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| bad_request(format!("bad mesh id {t:?}")))
        })
        .collect()
}

/// Renders the given meshes, reusing earlier renders of the same set.
async fn cached_render(st: Arc<AppState>, ids: Vec<u32>) -> Result<Response, ApiError> {
    if let Some(hit) = st
        .renders
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .get(&ids)
    {
        return Ok(png(hit.clone()));
    }
    let (st2, ids2) = (st.clone(), ids.clone());
    let bytes = blocking(move || {
        let set = ids2.iter().map(|&i| MeshId(i)).collect();
        let img = render_composite(&st2.model, Some(&set));
        pngio::encode_rgba8(img.width, img.height, &img.to_rgba8()).map_err(internal)
    })
    .await?;
    let bytes = Bytes::from(bytes);
    let mut cache = st.renders.lock().unwrap_or_else(|e| e.into_inner());
    if cache.len() >= RENDER_CACHE_LIMIT {
        cache.clear();
    }
    cache.insert(ids, bytes.clone());
    Ok(png(bytes))
}

async fn get_render(
    State(st): State<Arc<AppState>>,
    Query(q): Query<RenderQuery>,
) -> Result<Response, ApiError> {
    let visible = q.visible.as_deref().map(parse_ids).transpose()?;
    let set = {
        let s = st.session();
        select_meshes(
            &st.model,
            &s.assignment,
            visible.as_deref(),
            q.classes.as_deref(),
        )?
    };
    cached_render(st, set.into_iter().map(|m| m.0).collect()).await
}

fn mesh_id(raw: &str) -> Result<u32, ApiError> {
    raw.parse()
        .map_err(|_| bad_request(format!("bad mesh id {raw:?}")))
}

async fn get_mask(
    State(st): State<Arc<AppState>>,
    Path(raw): Path<String>,
) -> Result<Response, ApiError> {
    let id = MeshId(mesh_id(&raw)?);
    let v = st
        .masks
        .iter()
        .find(|v| v.mesh_id == id)
        .ok_or_else(|| not_found(format!("unknown mesh {}", id.0)))?;
    let bytes =
        pngio::encode_gray8(v.mask.width, v.mask.height, &v.mask.to_gray8()).map_err(internal)?;
    Ok(png(bytes))
}

async fn get_preview(
    State(st): State<Arc<AppState>>,
    Path(name): Path<String>,
) -> Result<Response, ApiError> {
    if name.starts_with('!') || name.contains(',') {
        return Err(bad_request("preview takes a single class name"));
    }
    let set = {
        let s = st.session();
        select_meshes(&st.model, &s.assignment, None, Some(&name))?
    };
    cached_render(st, set.into_iter().map(|m| m.0).collect()).await
}

fn labels_response(s: &Session) -> Response {
    let mut r = (
        [(header::CONTENT_TYPE, "application/json; charset=utf-8")],
        s.assignment.to_json(),
    )
        .into_response();
    r.headers_mut().insert(
        header::ETAG,
        HeaderValue::from_str(&format!("\"{}\"", s.revision)).expect("ascii"),
    );
    r
}

async fn get_labels(State(st): State<Arc<AppState>>) -> Response {
    labels_response(&st.session())
}

/// Runs one assignment edit under the session lock. A stale `If-Match`
/// revision is rejected with 409 before anything changes.
async fn mutate(
    st: Arc<AppState>,
    headers: HeaderMap,
    edit: impl FnOnce(&AppState, &LabelAssignment) -> Result<LabelAssignment, ApiError> + Send + 'static,
) -> Result<Response, ApiError> {
    blocking(move || {
        let mut s = st.session();
        check_revision(&headers, s.revision)?;
        let next = edit(&st, &s.assignment)?;
        let prev = std::mem::replace(&mut s.assignment, next);
        s.undo.push(prev);
        s.redo.clear();
        commit(&st, &mut s)
    })
    .await
}

fn check_revision(headers: &HeaderMap, revision: u64) -> Result<(), ApiError> {
    let Some(v) = headers.get(header::IF_MATCH) else {
        return Ok(());
    };
    let v = v.to_str().map_err(|_| bad_request("bad If-Match header"))?;
    let want = v.trim().trim_matches('"');
    if want == "*" || want == revision.to_string() {
        Ok(())
    } else {
        Err(conflict(format!(
            "session is at revision {revision}, not {want}"
        )))
    }
}

fn commit(st: &AppState, s: &mut Session) -> Result<Response, ApiError> {
    s.revision += 1;
    s.dirty = true;
    if let Some(p) = &st.persist {
        fs::write(p, s.assignment.to_json()).map_err(internal)?;
        s.dirty = false;
    }
    Ok(labels_response(s))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelBody {
    class: Option<String>,
}

async fn post_label(
    State(st): State<Arc<AppState>>,
    Path(raw): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let id = MeshId(mesh_id(&raw)?);
    if st.model.mesh(id).is_none() {
        return Err(not_found(format!("unknown mesh {}", id.0)));
    }
    let body: LabelBody =
        serde_json::from_slice(&body).map_err(|e| bad_request(format!("body: {e}")))?;
    let class = body
        .class
        .map(|n| {
            st.model
                .taxonomy
                .class_id(&n)
                .ok_or_else(|| bad_request(format!("unknown class {n:?}")))
        })
        .transpose()?;
    mutate(st, headers, move |st, a| {
        set_manual_label(&st.model, a, id, class).map_err(body_error)
    })
    .await
}

async fn post_propagate(
    State(st): State<Arc<AppState>>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    mutate(st, headers, |st, a| {
        propagate_labels(&st.model, a, &st.areas).map_err(body_error)
    })
    .await
}

async fn post_snap(
    State(st): State<Arc<AppState>>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let map = decode_label_map(&body).map_err(|e| bad_request(format!("label map: {e}")))?;
    mutate(st, headers, move |st, a| {
        snap_labels(&st.model, &map, &st.masks, a)
            .map(|(_, next)| next)
            .map_err(body_error)
    })
    .await
}

async fn post_undo(
    State(st): State<Arc<AppState>>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    step(st, headers, true).await
}

async fn post_redo(
    State(st): State<Arc<AppState>>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    step(st, headers, false).await
}

async fn step(st: Arc<AppState>, headers: HeaderMap, undo: bool) -> Result<Response, ApiError> {
    blocking(move || {
        let mut s = st.session();
        check_revision(&headers, s.revision)?;
        let s = &mut *s;
        let (from, to) = if undo {
            (&mut s.undo, &mut s.redo)
        } else {
            (&mut s.redo, &mut s.undo)
        };
        let restored = from.pop().ok_or_else(|| {
            conflict(if undo {
                "nothing to undo"
            } else {
                "nothing to redo"
            })
        })?;
        to.push(std::mem::replace(&mut s.assignment, restored));
        commit(&st, s)
    })
    .await
}

async fn export_assignment(State(st): State<Arc<AppState>>) -> Response {
    let mut r = labels_response(&st.session());
    r.headers_mut().insert(
        header::CONTENT_DISPOSITION,
        HeaderValue::from_static("attachment; filename=\"assignment.json\""),
    );
    r
}

async fn export_psd_file(State(st): State<Arc<AppState>>) -> Result<Response, ApiError> {
    let assignment = st.session().assignment.clone();
    let bytes = blocking(move || {
        let m = assignment.apply(&st.model);
        let stack = export_stack(&m, st.opts, true).map_err(|e| match e {
            LayerError::Depth(d) => conflict(d.to_string()),
            e => internal(e),
        })?;
        let mut out = Vec::new();
        export_psd(&stack, m.canvas_width, m.canvas_height, &mut out).map_err(|e| match e {
            PsdError::NoLayers => conflict("no layers: label some meshes first"),
            e => internal(e),
        })?;
        Ok(out)
    })
    .await?;
    Ok((
        [
            (header::CONTENT_TYPE, "image/vnd.adobe.photoshop"),
            (
                header::CONTENT_DISPOSITION,
                "attachment; filename=\"layers.psd\"",
            ),
        ],
        bytes,
    )
        .into_response())
}
