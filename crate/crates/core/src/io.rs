//! Field files: a JSON manifest next to a raw little-endian `f64` payload.
//!
//! ```json
//! {"format_version":1,"topology":"torus","resolution":[32,32],"extent":[1.0,1.0],
//!  "field_name":"u","count":1024,"dtype":"f64le","payload":"u.bin"}
//! ```
//!
//! The surface is rebuilt from the manifest alone.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::IoError;
use crate::surface::{ScalarField, SurfaceDescriptor, SurfaceRef, Topology};

pub const FIELD_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldManifest {
    pub format_version: u32,
    pub topology: Topology,
    /// `[nx, ny]` for the torus, `[level]` for the sphere.
    pub resolution: Vec<usize>,
    /// Torus side lengths; absent for the sphere.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extent: Option<[f64; 2]>,
    pub field_name: String,
    pub count: usize,
    pub dtype: String,
    pub payload: String,
}

impl FieldManifest {
    pub fn for_surface(surface: &SurfaceRef, field_name: &str, payload: &str) -> Self {
        let (resolution, extent) = match surface.descriptor() {
            SurfaceDescriptor::Torus { nx, ny, lx, ly } => (vec![nx, ny], Some([lx, ly])),
            SurfaceDescriptor::Sphere { level } => (vec![level], None),
        };
        FieldManifest {
            format_version: FIELD_FORMAT_VERSION,
            topology: surface.topology(),
            resolution,
            extent,
            field_name: field_name.to_string(),
            count: surface.node_count(),
            dtype: "f64le".into(),
            payload: payload.to_string(),
        }
    }

    pub fn surface_descriptor(&self) -> Option<SurfaceDescriptor> {
        match (self.topology, self.resolution.as_slice(), self.extent) {
            (Topology::Torus, &[nx, ny], Some([lx, ly])) => Some(SurfaceDescriptor::Torus { nx, ny, lx, ly }),
            (Topology::Torus, &[nx, ny], None) => Some(SurfaceDescriptor::Torus { nx, ny, lx: 1.0, ly: 1.0 }),
            (Topology::Sphere, &[level], _) => Some(SurfaceDescriptor::Sphere { level }),
            _ => None,
        }
    }
}

pub fn encode_f64le(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_f64le(bytes: &[u8], count: usize, path: &Path) -> Result<Vec<f64>, IoError> {
    if bytes.len() != count * 8 {
        return Err(IoError::Corrupt {
            path: path.to_path_buf(),
            detail: format!("expected {} bytes for {count} values, found {}", count * 8, bytes.len()),
        });
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| IoError::Manifest { path: path.into(), source: e })?;
    fs::write(path, text + "\n").map_err(|e| IoError::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| IoError::Manifest { path: path.into(), source: e })
}

fn payload_path(manifest: &Path, payload: &str) -> PathBuf {
    manifest.parent().unwrap_or_else(|| Path::new(".")).join(payload)
}

/// Writes `<stem>.json` and `<stem>.bin` for the field; `manifest_path` must
/// end in `.json`.
pub fn write_field(manifest_path: &Path, field_name: &str, field: &ScalarField) -> Result<(), IoError> {
    let payload = manifest_path.with_extension("bin");
    let payload_name = payload.file_name().and_then(|n| n.to_str()).unwrap_or("field.bin").to_string();
    let manifest = FieldManifest::for_surface(field.surface(), field_name, &payload_name);
    fs::write(&payload, encode_f64le(field.values())).map_err(|e| IoError::io(&payload, e))?;
    write_json(manifest_path, &manifest)
}

/// Reads the manifest and payload, rebuilding the surface from the manifest.
pub fn read_field(manifest_path: &Path) -> Result<(FieldManifest, ScalarField), IoError> {
    let manifest: FieldManifest = read_json(manifest_path)?;
    let surface = manifest_surface(manifest_path, &manifest)?;
    let field = read_field_on(manifest_path, &manifest, &surface)?;
    Ok((manifest, field))
}

pub(crate) fn manifest_surface(path: &Path, manifest: &FieldManifest) -> Result<SurfaceRef, IoError> {
    if manifest.format_version != FIELD_FORMAT_VERSION {
        return Err(IoError::Version {
            path: path.into(),
            found: manifest.format_version,
            expected: FIELD_FORMAT_VERSION,
        });
    }
    let desc = manifest.surface_descriptor().ok_or_else(|| IoError::Corrupt {
        path: path.into(),
        detail: format!("resolution {:?} does not describe a {}", manifest.resolution, manifest.topology.name()),
    })?;
    Ok(desc.build()?)
}

/// Reads the payload named by `manifest` onto an existing surface.
pub fn read_field_on(path: &Path, manifest: &FieldManifest, surface: &SurfaceRef) -> Result<ScalarField, IoError> {
    if manifest.dtype != "f64le" {
        return Err(IoError::Corrupt { path: path.into(), detail: format!("unsupported dtype {}", manifest.dtype) });
    }
    if manifest.count != surface.node_count() {
        return Err(IoError::Corrupt {
            path: path.into(),
            detail: format!("count {} does not match {} surface nodes", manifest.count, surface.node_count()),
        });
    }
    let payload = payload_path(path, &manifest.payload);
    let bytes = fs::read(&payload).map_err(|e| IoError::io(&payload, e))?;
    let values = decode_f64le(&bytes, manifest.count, &payload)?;
    ScalarField::new(surface, values).map_err(|e| IoError::Corrupt { path: payload, detail: e.to_string() })
}
