//! Reconstruction backends: the HTTP bridge client, a content-hash disk
//! cache, and a synthetic fixture backend.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use think3d_core::pointcloud::{synth_scene, SyntheticSpec};
use think3d_core::{ColoredPoint, Scene};

use crate::io::{load_scene, save_scene, CameraRecord};

/// An input frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImagePayload {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl ImagePayload {
    pub fn new(name: impl Into<String>, bytes: Vec<u8>) -> Self {
        Self { name: name.into(), bytes }
    }
}

#[derive(Debug, Error)]
pub enum ReconError {
    #[error("bridge unreachable after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },
    #[error("bridge rejected request ({status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("no reconstruction backend configured and no cache entry")]
    Unavailable,
    #[error("cache: {0}")]
    Cache(String),
}

pub trait Reconstructor: Send + Sync {
    fn reconstruct(&self, images: &[ImagePayload]) -> Result<Reconstruction, ReconError>;
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub scene: Scene,
    pub cached: bool,
}

/// Content key for an ordered image set.
pub fn image_set_key(images: &[ImagePayload]) -> String {
    let mut h = Sha256::new();
    h.update((images.len() as u64).to_le_bytes());
    for img in images {
        h.update((img.bytes.len() as u64).to_le_bytes());
        h.update(&img.bytes);
    }
    hex::encode(h.finalize())
}

// ---- wire format ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireImage {
    pub name: String,
    /// Base64 of the encoded PNG/JPEG bytes.
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconRequest {
    pub images: Vec<WireImage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_points: Option<usize>,
}

impl ReconRequest {
    pub fn new(images: &[ImagePayload], max_points: Option<usize>) -> Self {
        Self {
            images: images.iter().map(|i| WireImage { name: i.name.clone(), data: B64.encode(&i.bytes) }).collect(),
            max_points,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub rotation: [f64; 9],
    pub center: [f64; 3],
}

/// Flat point arrays, each base64 of little-endian float32 values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WirePoints {
    pub count: usize,
    /// 3·count values.
    pub positions: String,
    /// 3·count values in [0, 1].
    pub colors: String,
    /// count values in [0, 1].
    pub confidences: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconResponse {
    #[serde(default)]
    pub model: Option<String>,
    pub cameras: Vec<WireCamera>,
    pub points: WirePoints,
}

/// JSON schema shared with the bridge service.
pub const RECON_RESPONSE_SCHEMA: &str = include_str!("../../schema/recon_response.schema.json");

pub fn encode_f32(values: &[f32]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    B64.encode(bytes)
}

pub fn decode_f32(field: &str, data: &str, expected: usize) -> Result<Vec<f32>, ReconError> {
    let bytes = B64.decode(data).map_err(|e| ReconError::Contract(format!("{field}: invalid base64: {e}")))?;
    if bytes.len() != expected * 4 {
        return Err(ReconError::Contract(format!("{field}: {} bytes, expected {}", bytes.len(), expected * 4)));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

impl ReconResponse {
    pub fn from_scene(scene: &Scene, model: Option<String>) -> Self {
        let cameras = scene
            .cameras
            .iter()
            .map(|c| {
                let r = CameraRecord::from_pose(0, c, None);
                WireCamera { fx: r.fx, fy: r.fy, cx: r.cx, cy: r.cy, width: r.width, height: r.height, rotation: r.rotation, center: r.center }
            })
            .collect();
        let pos: Vec<f32> = scene.points.iter().flat_map(|p| p.position).collect();
        let col: Vec<f32> = scene.points.iter().flat_map(|p| p.color_unit()).collect();
        let conf: Vec<f32> = scene.points.iter().map(|p| p.confidence).collect();
        Self {
            model,
            cameras,
            points: WirePoints { count: scene.points.len(), positions: encode_f32(&pos), colors: encode_f32(&col), confidences: encode_f32(&conf) },
        }
    }

    /// Checks the response against the request and decodes it into a scene.
    pub fn into_scene(self, images: &[ImagePayload]) -> Result<Scene, ReconError> {
        if self.cameras.len() != images.len() {
            return Err(ReconError::Contract(format!("{} camera poses for {} images", self.cameras.len(), images.len())));
        }
        let n = self.points.count;
        if n == 0 {
            return Err(ReconError::Contract("empty point cloud".into()));
        }
        let pos = decode_f32("positions", &self.points.positions, 3 * n)?;
        let col = decode_f32("colors", &self.points.colors, 3 * n)?;
        let conf = decode_f32("confidences", &self.points.confidences, n)?;
        let mut points = Vec::with_capacity(n);
        for i in 0..n {
            let position = [pos[3 * i], pos[3 * i + 1], pos[3 * i + 2]];
            let rgb = [col[3 * i], col[3 * i + 1], col[3 * i + 2]];
            if !position.iter().all(|c| c.is_finite()) {
                return Err(ReconError::Contract(format!("point {i}: non-finite position")));
            }
            if !rgb.iter().all(|c| (0.0..=1.0).contains(c)) {
                return Err(ReconError::Contract(format!("point {i}: color outside [0, 1]")));
            }
            if !(0.0..=1.0).contains(&conf[i]) {
                return Err(ReconError::Contract(format!("point {i}: confidence {} outside [0, 1]", conf[i])));
            }
            points.push(ColoredPoint { position, color: ColoredPoint::color_from_unit(rgb), confidence: conf[i] });
        }
        let cameras = self
            .cameras
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let rec = CameraRecord {
                    view_index: i + 1,
                    fx: c.fx,
                    fy: c.fy,
                    cx: c.cx,
                    cy: c.cy,
                    width: c.width,
                    height: c.height,
                    rotation: c.rotation,
                    center: c.center,
                    source_image: None,
                };
                rec.to_pose().map_err(|e| ReconError::Contract(format!("camera {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let names = images.iter().map(|i| i.name.clone()).collect();
        Scene::new(points, cameras, names).map_err(|e| ReconError::Contract(e.to_string()))
    }
}

// ---- bridge client ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BridgeConfig {
    pub url: Option<String>,
    pub timeout_secs: f64,
    /// Retries after the first attempt.
    pub retries: usize,
    /// First backoff delay; doubles on each retry.
    pub backoff_secs: f64,
    pub max_points: Option<usize>,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self { url: None, timeout_secs: 300.0, retries: 2, backoff_secs: 0.5, max_points: None }
    }
}

pub struct BridgeClient {
    endpoint: String,
    config: BridgeConfig,
    http: reqwest::blocking::Client,
    calls: AtomicUsize,
}

impl BridgeClient {
    pub fn new(url: &str, config: BridgeConfig) -> Result<Self, ReconError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| ReconError::Transport { attempts: 0, message: e.to_string() })?;
        Ok(Self { endpoint: format!("{}/reconstruct", url.trim_end_matches('/')), config, http, calls: AtomicUsize::new(0) })
    }

    /// Number of HTTP attempts made so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    fn attempt(&self, body: &ReconRequest) -> Result<ReconResponse, (bool, ReconError)> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let resp = self
            .http
            .post(&self.endpoint)
            .json(body)
            .send()
            .map_err(|e| (true, ReconError::Transport { attempts: 0, message: e.to_string() }))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            let body = resp.text().unwrap_or_default();
            return Err((true, ReconError::Transport { attempts: 0, message: format!("status {status}: {body}") }));
        }
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err((false, ReconError::Rejected { status: status.as_u16(), body }));
        }
        resp.json::<ReconResponse>().map_err(|e| (false, ReconError::Contract(format!("response schema: {e}"))))
    }
}

impl Reconstructor for BridgeClient {
    fn reconstruct(&self, images: &[ImagePayload]) -> Result<Reconstruction, ReconError> {
        let body = ReconRequest::new(images, self.config.max_points);
        let mut delay = self.config.backoff_secs;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Ok(resp) => return Ok(Reconstruction { scene: resp.into_scene(images)?, cached: false }),
                Err((true, ReconError::Transport { message, .. })) => {
                    if attempts > self.config.retries {
                        return Err(ReconError::Transport { attempts, message });
                    }
                    std::thread::sleep(Duration::from_secs_f64(delay));
                    delay *= 2.0;
                }
                Err((_, e)) => return Err(e),
            }
        }
    }
}

// ---- cache ----

/// Serves scenes from `dir/<key>.{ply,json}`, falling back to `inner` on a
/// miss and storing its result.
pub struct CachedReconstructor {
    dir: PathBuf,
    inner: Option<Box<dyn Reconstructor>>,
}

impl CachedReconstructor {
    pub fn new(dir: impl Into<PathBuf>, inner: Option<Box<dyn Reconstructor>>) -> Self {
        Self { dir: dir.into(), inner }
    }

    fn paths(&self, key: &str) -> (PathBuf, PathBuf) {
        (self.dir.join(format!("{key}.ply")), self.dir.join(format!("{key}.json")))
    }

    pub fn store(&self, images: &[ImagePayload], scene: &Scene) -> Result<(), ReconError> {
        std::fs::create_dir_all(&self.dir).map_err(|e| ReconError::Cache(e.to_string()))?;
        let (ply, cams) = self.paths(&image_set_key(images));
        save_scene(scene, &ply, &cams).map_err(|e| ReconError::Cache(e.to_string()))
    }
}

impl Reconstructor for CachedReconstructor {
    fn reconstruct(&self, images: &[ImagePayload]) -> Result<Reconstruction, ReconError> {
        let (ply, cams) = self.paths(&image_set_key(images));
        if ply.exists() && cams.exists() {
            let scene = load_scene(&ply, &cams).map_err(|e| ReconError::Cache(e.to_string()))?;
            if scene.view_count() != images.len() {
                return Err(ReconError::Contract(format!("cached scene has {} cameras for {} images", scene.view_count(), images.len())));
            }
            return Ok(Reconstruction { scene, cached: true });
        }
        let inner = self.inner.as_ref().ok_or(ReconError::Unavailable)?;
        let rec = inner.reconstruct(images)?;
        self.store(images, &rec.scene)?;
        Ok(rec)
    }
}

// ---- fixture ----

/// Deterministic synthetic scenes: a colored cube lattice ringed by one
/// camera per input image.
#[derive(Debug, Clone)]
pub struct FixtureReconstructor {
    pub spec: SyntheticSpec,
}

impl Default for FixtureReconstructor {
    fn default() -> Self {
        let mut spec = SyntheticSpec::cube(10, 1);
        spec.confidence_jitter = 0.5;
        spec.ring.intrinsics = think3d_core::Intrinsics::centered(96.0, 128, 96).expect("static intrinsics");
        Self { spec }
    }
}

impl Reconstructor for FixtureReconstructor {
    fn reconstruct(&self, images: &[ImagePayload]) -> Result<Reconstruction, ReconError> {
        let mut spec = self.spec.clone();
        spec.ring.count = images.len();
        let key = image_set_key(images);
        spec.seed = u64::from_str_radix(&key[..16], 16).expect("hex digest");
        let mut scene = synth_scene(&spec).map_err(|e| ReconError::Contract(e.to_string()))?;
        scene.source_images = images.iter().map(|i| i.name.clone()).collect();
        Ok(Reconstruction { scene, cached: false })
    }
}
