//! Drive the HTTP API in-process: open a session, upload a cut-out, place
//! it, drag it off the ground and back.
//!
//!     cargo run --release --example http_session

use std::sync::Arc;

use axum::body::Body;
use axum::http::Request;
use http_body_util::BodyExt;
use image::{Rgba, RgbaImage};
use scene_probe::composer::{build_scene_dir, BuildConfig};
use scene_probe::raster::encode_png_rgba;
use scene_probe::service::{router, AppState, ServiceConfig, PLACEMENT_ID_HEADER};
use scene_probe::synth::{export_scene, SynthConfig, WalkerSpec};
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &axum::Router, method: &str, uri: &str, body: Body) -> (u16, Option<String>, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body)
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status().as_u16();
    let pid = res.headers().get(PLACEMENT_ID_HEADER).map(|v| v.to_str().unwrap().to_string());
    (status, pid, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

#[tokio::main]
async fn main() -> scene_probe::Result<()> {
    let scenes = tempfile::tempdir().map_err(|e| scene_probe::Error::Format(e.to_string()))?;
    let mut cfg = SynthConfig::new(240, 180);
    let mut walkers = WalkerSpec::new(&cfg, 160);
    walkers.duration = (20, 40);
    cfg.tracks = walkers.generate();
    let dir = scenes.path().join("street");
    export_scene(cfg, 160, &dir)?;
    build_scene_dir(&dir, &BuildConfig::default())?;

    let app = router(Arc::new(AppState::open(ServiceConfig::new(scenes.path()))?));
    let (_, _, body) = call(&app, "GET", "/scenes", Body::empty()).await;
    println!("GET /scenes -> {}", String::from_utf8_lossy(&body));

    let (_, _, body) = call(&app, "POST", "/scenes/street/sessions", Body::empty()).await;
    let session: Value = serde_json::from_slice(&body).unwrap();
    let sid = session["session_id"].as_str().unwrap();

    let cut = RgbaImage::from_fn(14, 40, |_, _| Rgba([220, 70, 50, 255]));
    let (_, _, body) = call(&app, "POST", &format!("/sessions/{sid}/sprites"), Body::from(encode_png_rgba(&cut)?)).await;
    let sprite: Value = serde_json::from_slice(&body).unwrap();

    let place = json!({"sprite_id": sprite["sprite_id"], "x": 120.0, "y": 20.0});
    let (status, pid, png) = call(&app, "POST", &format!("/sessions/{sid}/placements"), Body::from(place.to_string())).await;
    let pid = pid.unwrap();
    println!("POST placement -> {status}, {} byte PNG, id {pid}", png.len());

    let off = json!({"y": 179.0});
    let (status, _, body) = call(&app, "PATCH", &format!("/sessions/{sid}/placements/{pid}"), Body::from(off.to_string())).await;
    println!("PATCH above the horizon -> {status} {}", String::from_utf8_lossy(&body));

    let back = json!({"x": 60.0, "y": 35.0});
    let (status, _, png) = call(&app, "PATCH", &format!("/sessions/{sid}/placements/{pid}"), Body::from(back.to_string())).await;
    println!("PATCH back on the ground -> {status}, {} byte PNG", png.len());
    Ok(())
}
