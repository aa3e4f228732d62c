//! HTTP API over scene products and interactive placement sessions.
//!
//! Routes:
//!
//! - `GET /scenes`
//! - `GET /scenes/{scene}/background.png`
//! - `GET /scenes/{scene}/maps/{occlusion|lighting}.png`
//! - `POST /scenes/{scene}/sessions`
//! - `POST /sessions/{id}/sprites` (PNG body with alpha)
//! - `GET|POST /sessions/{id}/placements`
//! - `PATCH|DELETE /sessions/{id}/placements/{placement}`
//! - `GET /sessions/{id}/composite.png?shadow=&occlusion=&lighting=&scale=`
//!
//! Placement mutations answer with the new composite PNG.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::composer::{render_composite, Placement, SceneProducts, Sprite, Stages};
use crate::dataio::{Dataset, SceneManifest, SceneSource};
use crate::error::{Error, Stage};
use crate::raster::encode_png;

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_SESSION_IDLE: Duration = Duration::from_secs(30 * 60);
pub const PLACEMENT_ID_HEADER: &str = "x-placement-id";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub scenes_dir: PathBuf,
    pub session_idle: Duration,
}

impl ServiceConfig {
    pub fn new(scenes_dir: impl Into<PathBuf>) -> Self {
        Self {
            scenes_dir: scenes_dir.into(),
            session_idle: DEFAULT_SESSION_IDLE,
        }
    }
}

struct SceneEntry {
    dir: PathBuf,
    manifest: SceneManifest,
    products: RwLock<Option<Arc<SceneProducts>>>,
}

impl SceneEntry {
    /// Products, loading them from disk on first use.
    fn products(&self) -> Result<Arc<SceneProducts>, ApiError> {
        if let Some(p) = self.products.read().expect("products lock").as_ref() {
            return Ok(p.clone());
        }
        let loaded = Arc::new(SceneProducts::load(&self.dir)?);
        *self.products.write().expect("products lock") = Some(loaded.clone());
        Ok(loaded)
    }
}

struct Session {
    scene_id: String,
    sprites: HashMap<String, Arc<Sprite>>,
    placements: Vec<(String, Placement)>,
    next_id: u64,
    touched: Instant,
}

impl Session {
    fn next_id(&mut self, prefix: &str) -> String {
        self.next_id += 1;
        format!("{prefix}{}", self.next_id)
    }

    fn placement_mut(&mut self, id: &str) -> Result<&mut Placement, ApiError> {
        self.placements
            .iter_mut()
            .find(|(pid, _)| pid == id)
            .map(|(_, p)| p)
            .ok_or_else(|| ApiError::not_found(format!("placement {id}")))
    }
}

pub struct AppState {
    config: ServiceConfig,
    scenes: BTreeMap<String, SceneEntry>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
}

impl AppState {
    /// Index every subdirectory of `scenes_dir` holding a `scene.json`.
    pub fn open(config: ServiceConfig) -> crate::Result<Self> {
        let mut scenes = BTreeMap::new();
        let dir = &config.scenes_dir;
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if !path.join(Dataset::MANIFEST_FILE).is_file() {
                continue;
            }
            let Some(id) = path.file_name().and_then(|n| n.to_str()).map(str::to_string) else {
                continue;
            };
            let dataset = Dataset::open(&path)?;
            scenes.insert(
                id,
                SceneEntry {
                    dir: path.clone(),
                    manifest: dataset.manifest().clone(),
                    products: RwLock::new(None),
                },
            );
        }
        Ok(Self {
            config,
            scenes,
            sessions: Mutex::new(HashMap::new()),
        })
    }

    fn scene(&self, id: &str) -> Result<&SceneEntry, ApiError> {
        self.scenes.get(id).ok_or_else(|| ApiError::not_found(format!("scene {id}")))
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        let mut sessions = self.sessions.lock().expect("sessions lock");
        let session = sessions
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("session {id}")))?;
        let expired = session.lock().expect("session lock").touched.elapsed() > self.config.session_idle;
        if expired {
            sessions.remove(id);
            return Err(ApiError::not_found(format!("session {id}")));
        }
        Ok(session)
    }

    /// Drop sessions idle for longer than the configured limit; returns how
    /// many were removed.
    pub fn evict_idle(&self) -> usize {
        let mut sessions = self.sessions.lock().expect("sessions lock");
        let before = sessions.len();
        let idle = self.config.session_idle;
        sessions.retain(|_, s| s.lock().expect("session lock").touched.elapsed() <= idle);
        before - sessions.len()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("sessions lock").len()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/scenes", get(list_scenes))
        .route("/scenes/{scene}/background.png", get(background))
        .route("/scenes/{scene}/maps/{map}", get(map_image))
        .route("/scenes/{scene}/sessions", post(create_session))
        .route("/sessions/{id}", get(session_info).delete(delete_session))
        .route("/sessions/{id}/sprites", post(upload_sprite))
        .route("/sessions/{id}/placements", get(list_placements).post(create_placement))
        .route(
            "/sessions/{id}/placements/{placement}",
            patch(update_placement).delete(delete_placement),
        )
        .route("/sessions/{id}/composite.png", get(composite))
        .with_state(state)
}

/// Serve until the process is stopped, evicting idle sessions periodically.
pub async fn serve(config: ServiceConfig, addr: SocketAddr) -> crate::Result<()> {
    let state = Arc::new(AppState::open(config)?);
    let period = (state.config.session_idle / 4).clamp(Duration::from_secs(1), Duration::from_secs(60));
    let evictor = state.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        loop {
            tick.tick().await;
            evictor.evict_idle();
        }
    });
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(format!("{addr}"), e))?;
    axum::serve(listener, router(state))
        .await
        .map_err(|e| Error::io(format!("{addr}"), e))
}

#[derive(Debug, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    status: StatusCode,
    pub error: String,
    pub stage: Option<Stage>,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>) -> Self {
        Self {
            status,
            error: error.into(),
            stage: None,
        }
    }

    fn not_found(what: String) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown {what}"))
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e.root() {
            Error::OffPlane { .. } | Error::InvalidPlacement(_) | Error::Unavailable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::MissingProducts(_) => StatusCode::CONFLICT,
            Error::Image(_) | Error::Format(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self {
            status,
            stage: e.stage(),
            error: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn png_response(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SceneSummary {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub frame_count: usize,
    pub products: bool,
}

async fn list_scenes(State(state): State<Arc<AppState>>) -> Json<Vec<SceneSummary>> {
    Json(
        state
            .scenes
            .iter()
            .map(|(id, s)| SceneSummary {
                id: id.clone(),
                width: s.manifest.width,
                height: s.manifest.height,
                frame_count: s.manifest.frame_count,
                products: SceneProducts::exists(&s.dir),
            })
            .collect(),
    )
}

async fn background(State(state): State<Arc<AppState>>, Path(scene): Path<String>) -> ApiResult<Response> {
    let products = state.scene(&scene)?.products()?;
    Ok(png_response(encode_png(&products.background)?))
}

async fn map_image(State(state): State<Arc<AppState>>, Path((scene, map)): Path<(String, String)>) -> ApiResult<Response> {
    let entry = state.scene(&scene)?;
    let image = match map.as_str() {
        "occlusion.png" => entry.products()?.occlusion.visualize(),
        "lighting.png" => entry.products()?.lighting.visualize(),
        other => return Err(ApiError::not_found(format!("map {other}"))),
    };
    Ok(png_response(encode_png(&image)?))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SessionCreated {
    pub session_id: String,
    pub scene_id: String,
}

async fn create_session(State(state): State<Arc<AppState>>, Path(scene): Path<String>) -> ApiResult<Response> {
    state.scene(&scene)?.products()?;
    let id = Uuid::new_v4().to_string();
    let session = Session {
        scene_id: scene.clone(),
        sprites: HashMap::new(),
        placements: Vec::new(),
        next_id: 0,
        touched: Instant::now(),
    };
    state
        .sessions
        .lock()
        .expect("sessions lock")
        .insert(id.clone(), Arc::new(Mutex::new(session)));
    let body = SessionCreated {
        session_id: id,
        scene_id: scene,
    };
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SessionInfo {
    pub session_id: String,
    pub scene_id: String,
    pub sprites: Vec<String>,
    pub placements: Vec<PlacementInfo>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct PlacementInfo {
    pub placement_id: String,
    pub sprite_id: String,
    pub x: f64,
    pub y: f64,
    pub height_override: f64,
    pub brightness: f32,
}

fn placement_infos(session: &Session) -> Vec<PlacementInfo> {
    session
        .placements
        .iter()
        .map(|(id, p)| PlacementInfo {
            placement_id: id.clone(),
            sprite_id: p.sprite_id.clone(),
            x: p.x,
            y: p.y,
            height_override: p.height_override,
            brightness: p.brightness,
        })
        .collect()
}

async fn session_info(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<SessionInfo>> {
    let session = state.session(&id)?;
    let mut s = session.lock().expect("session lock");
    s.touched = Instant::now();
    let mut sprites: Vec<String> = s.sprites.keys().cloned().collect();
    sprites.sort();
    Ok(Json(SessionInfo {
        session_id: id,
        scene_id: s.scene_id.clone(),
        sprites,
        placements: placement_infos(&s),
    }))
}

async fn delete_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    state.session(&id)?;
    state.sessions.lock().expect("sessions lock").remove(&id);
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SpriteCreated {
    pub sprite_id: String,
    pub width: u32,
    pub height: u32,
}

async fn upload_sprite(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let session = state.session(&id)?;
    let sprite = Sprite::decode_png(&body).map_err(|e| {
        let mut err = ApiError::from(e);
        err.status = StatusCode::BAD_REQUEST;
        err
    })?;
    let (width, height) = sprite.pixels.dimensions();
    let mut s = session.lock().expect("session lock");
    s.touched = Instant::now();
    let sprite_id = s.next_id("s");
    s.sprites.insert(sprite_id.clone(), Arc::new(sprite));
    let body = SpriteCreated {
        sprite_id,
        width,
        height,
    };
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn list_placements(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Vec<PlacementInfo>>> {
    let session = state.session(&id)?;
    let s = session.lock().expect("session lock");
    Ok(Json(placement_infos(&s)))
}

/// Stage switches; absent means on.
#[derive(Debug, Default, Clone, Copy, Deserialize)]
pub struct Toggles {
    pub shadow: Option<bool>,
    pub occlusion: Option<bool>,
    pub lighting: Option<bool>,
    pub scale: Option<bool>,
}

impl Toggles {
    pub fn stages(&self) -> Stages {
        Stages {
            scale: self.scale.unwrap_or(true),
            lighting: self.lighting.unwrap_or(true),
            occlusion: self.occlusion.unwrap_or(true),
            shadow: self.shadow.unwrap_or(true),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NewPlacement {
    pub sprite_id: String,
    pub x: f64,
    pub y: f64,
    pub height_override: Option<f64>,
    pub brightness: Option<f32>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct PlacementUpdate {
    pub x: Option<f64>,
    pub y: Option<f64>,
    pub height_override: Option<f64>,
    pub brightness: Option<f32>,
}

async fn render_png(products: Arc<SceneProducts>, placements: Vec<Placement>, stages: Stages) -> ApiResult<Vec<u8>> {
    tokio::task::spawn_blocking(move || -> crate::Result<Vec<u8>> {
        let result = render_composite(&products, &placements, stages)?;
        encode_png(&result.i_final)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
    .map_err(ApiError::from)
}

fn snapshot(session: &Session) -> Vec<Placement> {
    session.placements.iter().map(|(_, p)| p.clone()).collect()
}

async fn create_placement(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(toggles): Query<Toggles>,
    Json(req): Json<NewPlacement>,
) -> ApiResult<Response> {
    let session = state.session(&id)?;
    let (products, placement_id, placements) = {
        let mut s = session.lock().expect("session lock");
        s.touched = Instant::now();
        let products = state.scene(&s.scene_id)?.products()?;
        let sprite = s
            .sprites
            .get(&req.sprite_id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("sprite {}", req.sprite_id)))?;
        let mut placement = Placement::new(&products, req.sprite_id.clone(), sprite, req.x, req.y)?;
        if let Some(f) = req.height_override {
            placement.set_height_override(f)?;
        }
        if let Some(b) = req.brightness {
            placement.set_brightness(b)?;
        }
        let mut placements = snapshot(&s);
        placements.push(placement.clone());
        // validate the render before committing
        let stages = toggles.stages();
        for p in &placements {
            p.layer(&products, stages)?;
        }
        let pid = s.next_id("p");
        s.placements.push((pid.clone(), placement));
        (products, pid, placements)
    };
    let png = render_png(products, placements, toggles.stages()).await?;
    let mut response = png_response(png);
    response.headers_mut().insert(
        PLACEMENT_ID_HEADER,
        HeaderValue::from_str(&placement_id).expect("ascii id"),
    );
    Ok(response)
}

async fn update_placement(
    State(state): State<Arc<AppState>>,
    Path((id, placement_id)): Path<(String, String)>,
    Query(toggles): Query<Toggles>,
    Json(req): Json<PlacementUpdate>,
) -> ApiResult<Response> {
    let session = state.session(&id)?;
    let (products, placements) = {
        let mut s = session.lock().expect("session lock");
        s.touched = Instant::now();
        let products = state.scene(&s.scene_id)?.products()?;
        let current = s.placement_mut(&placement_id)?;
        let mut updated = current.clone();
        updated.x = req.x.unwrap_or(updated.x);
        updated.y = req.y.unwrap_or(updated.y);
        if let Some(f) = req.height_override {
            updated.set_height_override(f)?;
        }
        if let Some(b) = req.brightness {
            updated.set_brightness(b)?;
        }
        // an off-plane or out-of-frame target leaves the session untouched
        crate::composer::check_position(&products, updated.x, updated.y)?;
        updated.layer(&products, toggles.stages())?;
        *current = updated;
        (products, snapshot(&s))
    };
    Ok(png_response(render_png(products, placements, toggles.stages()).await?))
}

async fn delete_placement(
    State(state): State<Arc<AppState>>,
    Path((id, placement_id)): Path<(String, String)>,
) -> ApiResult<StatusCode> {
    let session = state.session(&id)?;
    let mut s = session.lock().expect("session lock");
    s.touched = Instant::now();
    let before = s.placements.len();
    s.placements.retain(|(pid, _)| *pid != placement_id);
    if s.placements.len() == before {
        return Err(ApiError::not_found(format!("placement {placement_id}")));
    }
    Ok(StatusCode::NO_CONTENT)
}

async fn composite(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(toggles): Query<Toggles>,
) -> ApiResult<Response> {
    let session = state.session(&id)?;
    let (products, placements) = {
        let mut s = session.lock().expect("session lock");
        s.touched = Instant::now();
        (state.scene(&s.scene_id)?.products()?, snapshot(&s))
    };
    Ok(png_response(render_png(products, placements, toggles.stages()).await?))
}
