//! On-disk formats: dataset manifests, model bundles and run configuration.

mod bundle;
mod config;
mod manifest;

pub use bundle::{decode_bundle, encode_bundle, load_bundle, save_bundle, ModelBundle, Provenance, BUNDLE_MAGIC, BUNDLE_VERSION};
pub use config::{parse_architecture, parse_config, read_config, RunConfig, Task};
pub use manifest::{
    parse_manifest, read_manifest, validate_manifest, DatasetManifest, Kind, ManifestEntry, Role,
};

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Writes `bytes` to a temporary sibling of `path` and renames it into place,
/// so readers never observe a partial file.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let io = |e: std::io::Error| Error::from(e).in_file(path);
    let mut f = std::fs::File::create(&tmp).map_err(io)?;
    let res = f.write_all(bytes).and_then(|_| f.sync_all());
    drop(f);
    if let Err(e) = res.and_then(|_| std::fs::rename(&tmp, path)) {
        let _ = std::fs::remove_file(&tmp);
        return Err(io(e));
    }
    Ok(())
}

/// Lower-case hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
