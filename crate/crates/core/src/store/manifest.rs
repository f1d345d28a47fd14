//! Tab-separated dataset manifest.
//!
//! ```text
//! # path	kind	role	group	sample_rate	channels	scale	offset
//! noise_000.csv	noise	train	noise	200	drive_1,drive_2,drive_3	-	-
//! ```
//!
//! Lines starting with `#` and blank lines are ignored. `scale` and the
//! comma-separated per-channel `offset` are `-` when not applicable. Paths
//! are relative to the manifest's directory unless absolute.

#![allow(clippy::tabs_in_doc_comments)]

use std::collections::HashSet;
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::signal::MultiChannelSignal;

/// Excitation family of a data file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kind {
    Noise,
    ServiceLoad,
    Sin,
    Sweep,
}

impl Kind {
    pub const ALL: [Kind; 4] = [Kind::Noise, Kind::ServiceLoad, Kind::Sin, Kind::Sweep];

    pub fn name(self) -> &'static str {
        match self {
            Kind::Noise => "noise",
            Kind::ServiceLoad => "serviceload",
            Kind::Sin => "sin",
            Kind::Sweep => "sweep",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Kind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown data kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Train,
    Validation,
    Test,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Train, Role::Validation, Role::Test];

    pub fn name(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Validation => "validation",
            Role::Test => "test",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Role::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown role `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub kind: Kind,
    pub role: Role,
    pub group: String,
    pub sample_rate: f64,
    pub channels: Vec<String>,
    pub scale: Option<f64>,
    pub offset: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths are resolved against. Not serialized.
    pub base_dir: PathBuf,
}

const HEADER: &str = "# path\tkind\trole\tgroup\tsample_rate\tchannels\tscale\toffset";

impl DatasetManifest {
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.role == role)
    }

    /// Loads the signal of `entry`.
    pub fn load(&self, entry: &ManifestEntry) -> Result<MultiChannelSignal> {
        MultiChannelSignal::read_csv(self.resolve(entry))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# hybrid-sysid dataset manifest v1\n{HEADER}\n");
        for e in &self.entries {
            let scale = e.scale.map_or_else(|| "-".to_string(), |s| format!("{s:?}"));
            let offset = e.offset.as_ref().map_or_else(
                || "-".to_string(),
                |o| o.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(","),
            );
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:?}\t{}\t{}\t{}",
                e.path.display(),
                e.kind,
                e.role,
                e.group,
                e.sample_rate,
                e.channels.join(","),
                scale,
                offset
            );
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        super::write_atomic(path, self.to_text().as_bytes())
    }
}

fn parse_field<T: FromStr>(line: usize, what: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::parse(line, format!("invalid {what} `{s}`")))
}

fn check_text(line: usize, what: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(|c| c.is_control() || c == ',') {
        return Err(Error::parse(line, format!("invalid {what} `{s}`")));
    }
    Ok(())
}

/// Parses manifest text. Relative paths stay relative; see [`read_manifest`].
pub fn parse_manifest(text: &str) -> Result<DatasetManifest> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.trim_end_matches('\r');
        if content.trim().is_empty() || content.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = content.split('\t').collect();
        if fields.len() != 8 {
            return Err(Error::parse(line, format!("expected 8 tab-separated fields, found {}", fields.len())));
        }
        if fields[0].is_empty() {
            return Err(Error::parse(line, "empty path"));
        }
        let sample_rate: f64 = parse_field(line, "sample rate", fields[4])?;
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::parse(line, format!("sample rate {sample_rate} must be positive")));
        }
        check_text(line, "group", fields[3])?;
        let channels: Vec<String> = fields[5].split(',').map(str::to_string).collect();
        for c in &channels {
            check_text(line, "channel name", c)?;
        }
        let scale = match fields[6] {
            "-" => None,
            s => {
                let v: f64 = parse_field(line, "scale", s)?;
                if !v.is_finite() {
                    return Err(Error::parse(line, "non-finite scale"));
                }
                Some(v)
            }
        };
        let offset = match fields[7] {
            "-" => None,
            s => Some(
                s.split(',')
                    .map(|v| {
                        parse_field::<f64>(line, "offset", v).and_then(|x| {
                            if x.is_finite() {
                                Ok(x)
                            } else {
                                Err(Error::parse(line, "non-finite offset"))
                            }
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        entries.push(ManifestEntry {
            path: PathBuf::from(fields[0]),
            kind: parse_field(line, "kind", fields[1])?,
            role: parse_field(line, "role", fields[2])?,
            group: fields[3].to_string(),
            sample_rate,
            channels,
            scale,
            offset,
        });
    }
    Ok(DatasetManifest {
        entries,
        base_dir: PathBuf::new(),
    })
}

/// Reads a manifest; relative entry paths resolve against its directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
    let mut m = parse_manifest(&text).map_err(|e| e.in_file(path))?;
    m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(m)
}

/// Checks for duplicate paths, missing files, channel/header disagreement and
/// mixed sample rates.
pub fn validate_manifest(manifest: &DatasetManifest) -> Result<()> {
    if manifest.entries.is_empty() {
        return Err(Error::Manifest("manifest lists no files".into()));
    }
    let mut seen = HashSet::new();
    for e in &manifest.entries {
        if !seen.insert(&e.path) {
            return Err(Error::Manifest(format!("duplicate path {}", e.path.display())));
        }
    }
    let rate = manifest.entries[0].sample_rate;
    for e in &manifest.entries {
        let path = manifest.resolve(e);
        if !path.is_file() {
            return Err(Error::Manifest(format!("missing file {}", path.display())));
        }
        if e.sample_rate != rate {
            return Err(Error::Manifest(format!(
                "{}: sample rate {} differs from {rate}",
                e.path.display(),
                e.sample_rate
            )));
        }
        let signal = MultiChannelSignal::read_csv(&path)?;
        if signal.names() != e.channels.as_slice() {
            return Err(Error::Manifest(format!(
                "{}: file has channels [{}], manifest lists [{}]",
                e.path.display(),
                signal.names().join(", "),
                e.channels.join(", ")
            )));
        }
        if (signal.sample_rate() - e.sample_rate).abs() > 1e-6 * e.sample_rate {
            return Err(Error::Manifest(format!(
                "{}: file is sampled at {} Hz, manifest says {}",
                e.path.display(),
                signal.sample_rate(),
                e.sample_rate
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(path: &str) -> ManifestEntry {
        ManifestEntry {
            path: path.into(),
            kind: Kind::ServiceLoad,
            role: Role::Test,
            group: "sl".into(),
            sample_rate: 200.0,
            channels: vec!["a".into(), "b".into()],
            scale: Some(0.5),
            offset: Some(vec![1.0, -0.25]),
        }
    }

    #[test]
    fn text_round_trip() {
        let m = DatasetManifest {
            entries: vec![
                entry("x.csv"),
                ManifestEntry {
                    scale: None,
                    offset: None,
                    kind: Kind::Noise,
                    role: Role::Train,
                    ..entry("y.csv")
                },
            ],
            base_dir: PathBuf::new(),
        };
        assert_eq!(parse_manifest(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(parse_manifest("a.csv\tnoise\ttrain").is_err());
        assert!(parse_manifest("a.csv\tpink\ttrain\tg\t200\ta\t-\t-").is_err());
        assert!(parse_manifest("a.csv\tnoise\ttrain\tg\t-1\ta\t-\t-").is_err());
        assert!(parse_manifest("a.csv\tnoise\ttrain\tg\t200\ta,,b\t-\t-").is_err());
        assert!(parse_manifest("a.csv\tnoise\ttrain\tg\t200\ta\tNaN\t-").is_err());
        assert!(parse_manifest("# only a comment\n\n").unwrap().entries.is_empty());
    }

    #[test]
    fn duplicate_paths_fail_validation() {
        let m = DatasetManifest {
            entries: vec![entry("x.csv"), entry("x.csv")],
            base_dir: PathBuf::new(),
        };
        let err = validate_manifest(&m).unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");
    }

    #[test]
    fn missing_file_is_named() {
        let m = DatasetManifest {
            entries: vec![entry("does_not_exist.csv")],
            base_dir: std::env::temp_dir(),
        };
        let err = validate_manifest(&m).unwrap_err().to_string();
        assert!(err.contains("does_not_exist.csv"), "{err}");
    }
}
