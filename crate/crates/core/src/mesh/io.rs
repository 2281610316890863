use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Grid, ScalarField};
use crate::error::{Error, Result};

/// JSON sidecar describing a raw little-endian payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub dtype: String,
    pub order: String,
    pub payload: String,
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::domain(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn payload_path(header_path: &Path) -> PathBuf {
    header_path.with_extension("bin")
}

/// Writes `<stem>.json` and `<stem>.bin`; `header_path` names the JSON file.
pub fn write_field(field: &ScalarField, header_path: &Path) -> Result<FieldHeader> {
    let grid = field.grid();
    let payload = payload_path(header_path);
    let header = FieldHeader {
        dims: grid.dims(),
        spacing: grid.spacing(),
        origin: grid.origin(),
        dtype: "f64le".into(),
        order: "C".into(),
        payload: payload.file_name().unwrap().to_string_lossy().into_owned(),
    };
    let mut bytes = Vec::with_capacity(8 * field.values().len());
    for v in field.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(&payload, &bytes)?;
    let json = serde_json::to_vec_pretty(&header).expect("header serializes");
    write_atomic(header_path, &json)?;
    Ok(header)
}

pub fn read_field(header_path: &Path) -> Result<ScalarField> {
    let bad = |message: String| Error::FieldFormat {
        path: header_path.to_path_buf(),
        message,
    };
    let text = fs::read(header_path).map_err(|e| Error::io(header_path, e))?;
    let header: FieldHeader = serde_json::from_slice(&text).map_err(|e| bad(e.to_string()))?;
    if header.dtype != "f64le" {
        return Err(bad(format!("unsupported dtype {:?}", header.dtype)));
    }
    if header.order != "C" {
        return Err(bad(format!("unsupported order {:?}", header.order)));
    }
    let grid = Grid::new(header.dims, header.spacing, header.origin).map_err(|e| bad(e.to_string()))?;
    let payload = header_path.parent().unwrap_or(Path::new(".")).join(&header.payload);
    let bytes = fs::read(&payload).map_err(|e| Error::io(&payload, e))?;
    if bytes.len() != 8 * grid.len() {
        return Err(bad(format!(
            "payload has {} bytes, expected {}",
            bytes.len(),
            8 * grid.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ScalarField::new(grid, values).map_err(|e| bad(e.to_string()))
}
