//! File formats: PLY clouds, camera sidecars, scene bundles and PNG output.

pub mod ply;
pub mod png;
pub mod scene;
pub mod sidecar;

pub use ply::{read_ply, write_ply, PlyCloud, PlyError, PlyFormat};
pub use png::{decode_png, encode_png, write_png, PngError};
pub use scene::{load_scene, save_scene, scene_from_parts, scene_hash, scene_to_parts, SceneFileError};
pub use sidecar::{cameras_from_records, parse_sidecar, records_from_scene, sidecar_json, CameraRecord, SidecarError};
