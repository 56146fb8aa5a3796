//! Subject profiles on disk.
//!
//! ```text
//! #popa-profile v1
//! subject=s01
//! algorithm=rf
//! n_trees=100            (hyperparameters, one per line)
//! seed=1
//! created=2024-01-01T00:00:00Z
//! updated=2024-01-01T00:00:00Z
//! frames=600
//! #popa-recording v1     (the enrollment recording, verbatim)
//! ...
//! ```
//!
//! Profiles keep training frames and the seed, not model payloads; a model
//! is rebuilt by retraining, which is deterministic.
//!
//! Subject ids in file names are limited to `[A-Za-z0-9_.-]`, must not start
//! with a dot, and at most 128 characters long.
//!
//! Profiles are stored unencrypted. Real deployments hold biometric
//! templates and need protection at rest and access control on top of this.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use thiserror::Error;

use crate::classify::{AlgorithmSpec, Dataset};
use crate::features::normalize_frame;
use crate::ingest::{parse_csv_str, write_csv, SessionRecording, RECORDING_MAGIC};
use crate::SENSOR_COUNT;

pub const PROFILE_MAGIC: &str = "#popa-profile v1";
pub const PROFILE_EXTENSION: &str = "popa-profile";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid subject id {0:?}: use 1-128 characters from [A-Za-z0-9_.-], not starting with '.'")]
    InvalidSubjectId(String),
    #[error("unsupported profile version {0:?}")]
    VersionMismatch(String),
    #[error("{}line {line}: corrupt profile: {reason}", path.as_ref().map(|p| format!("{}: ", p.display())).unwrap_or_default())]
    CorruptProfile { path: Option<PathBuf>, line: usize, reason: String },
    #[error("subject {subject:?} appears in both {} and {}", first.display(), second.display())]
    DuplicateSubject { subject: String, first: PathBuf, second: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectProfile {
    pub subject_id: String,
    /// Enrollment frames; the recording's subject equals `subject_id`.
    pub enrollment: SessionRecording,
    pub algorithm: AlgorithmSpec,
    pub seed: u64,
    /// ISO-8601 UTC, second precision.
    pub created: String,
    pub updated: String,
}

/// Current time as ISO-8601 UTC. `SOURCE_DATE_EPOCH` (seconds) overrides the
/// clock so that generated files can be reproduced byte for byte.
pub fn timestamp_now() -> String {
    let at = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| DateTime::<Utc>::from_timestamp(secs, 0))
        .unwrap_or_else(Utc::now);
    at.to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub fn validate_subject_id(id: &str) -> Result<(), StoreError> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'));
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidSubjectId(id.to_string()))
    }
}

impl SubjectProfile {
    /// New profile stamped with the current time; the subject id is taken
    /// from the recording.
    pub fn new(enrollment: SessionRecording, algorithm: AlgorithmSpec, seed: u64) -> Result<Self, StoreError> {
        validate_subject_id(enrollment.subject_id())?;
        let now = timestamp_now();
        Ok(SubjectProfile {
            subject_id: enrollment.subject_id().to_string(),
            enrollment,
            algorithm,
            seed,
            created: now.clone(),
            updated: now,
        })
    }

    /// Enrollment frames as normalized features labelled with the subject id.
    pub fn enrollment_dataset(&self) -> Dataset {
        let mut d = Dataset::new(SENSOR_COUNT);
        for f in self.enrollment.frames() {
            d.push(normalize_frame(f).as_slice(), &self.subject_id);
        }
        d
    }

    pub fn file_name(&self) -> String {
        format!("{}.{PROFILE_EXTENSION}", self.subject_id)
    }
}

pub fn write_profile(profile: &SubjectProfile) -> String {
    let mut out = String::new();
    out.push_str(PROFILE_MAGIC);
    out.push('\n');
    let _ = writeln!(out, "subject={}", profile.subject_id);
    let _ = writeln!(out, "algorithm={}", profile.algorithm.name());
    for (k, v) in profile.algorithm.hyperparams() {
        let _ = writeln!(out, "{k}={v}");
    }
    let _ = writeln!(out, "seed={}", profile.seed);
    let _ = writeln!(out, "created={}", profile.created);
    let _ = writeln!(out, "updated={}", profile.updated);
    let _ = writeln!(out, "frames={}", profile.enrollment.len());
    out.push_str(&write_csv(&profile.enrollment));
    out
}

pub fn parse_profile(text: &str) -> Result<SubjectProfile, StoreError> {
    let corrupt = |line: usize, reason: String| StoreError::CorruptProfile { path: None, line, reason };
    let mut lines = text.split_inclusive('\n').enumerate();
    let first = lines.next().map_or("", |(_, l)| l);
    match first.trim_end_matches('\n') {
        PROFILE_MAGIC => {}
        other if other.starts_with("#popa-profile") => return Err(StoreError::VersionMismatch(other.into())),
        _ => return Err(corrupt(1, format!("expected {PROFILE_MAGIC}"))),
    }

    let mut meta: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
    let mut order: Vec<&str> = Vec::new();
    let mut csv_start = None;
    let mut offset = first.len();
    for (i, raw) in lines {
        let line = raw.trim_end_matches('\n');
        if line.starts_with(RECORDING_MAGIC) {
            csv_start = Some((i, offset));
            break;
        }
        offset += raw.len();
        let (k, v) = line.split_once('=').ok_or_else(|| corrupt(i + 1, "expected key=value".into()))?;
        if meta.insert(k, (i + 1, v)).is_some() {
            return Err(corrupt(i + 1, format!("duplicate key {k:?}")));
        }
        order.push(k);
    }
    let (csv_index, csv_offset) = csv_start.ok_or_else(|| corrupt(0, "missing recording block".into()))?;

    let get = |k: &str| meta.get(k).copied().ok_or_else(|| corrupt(0, format!("missing key {k}")));
    let (_, subject_id) = get("subject")?;
    validate_subject_id(subject_id)?;
    let (alg_line, alg_name) = get("algorithm")?;
    let mut algorithm =
        AlgorithmSpec::from_name(alg_name).ok_or_else(|| corrupt(alg_line, format!("unknown algorithm {alg_name:?}")))?;
    let reserved = ["subject", "algorithm", "seed", "created", "updated", "frames"];
    for k in order.iter().filter(|k| !reserved.contains(k)) {
        let (line, v) = meta[k];
        match algorithm.set_hyperparam(k, v) {
            Ok(true) => {}
            Ok(false) => return Err(corrupt(line, format!("unknown key {k:?}"))),
            Err(e) => return Err(corrupt(line, e.to_string())),
        }
    }
    let (seed_line, seed) = get("seed")?;
    let seed = seed.parse::<u64>().map_err(|_| corrupt(seed_line, format!("bad seed {seed:?}")))?;
    let (frames_line, frames) = get("frames")?;
    let frames = frames.parse::<usize>().map_err(|_| corrupt(frames_line, format!("bad frame count {frames:?}")))?;
    let created = get("created")?.1.to_string();
    let updated = get("updated")?.1.to_string();

    let enrollment = parse_csv_str(&text[csv_offset..]).map_err(|e| {
        let line = e.line().map_or(csv_index + 1, |l| l + csv_index);
        corrupt(line, e.to_string())
    })?;
    if enrollment.len() != frames {
        return Err(corrupt(
            csv_index + 4 + enrollment.len(),
            format!("recording block has {} frames, header says {frames}", enrollment.len()),
        ));
    }
    if enrollment.subject_id() != subject_id {
        return Err(corrupt(csv_index + 2, format!("recording subject {:?} != {subject_id:?}", enrollment.subject_id())));
    }
    Ok(SubjectProfile { subject_id: subject_id.to_string(), enrollment, algorithm, seed, created, updated })
}

/// Writes `<dir>/<subject_id>.popa-profile` via a temporary file and rename.
pub fn save_profile(profile: &SubjectProfile, dir: &Path) -> Result<PathBuf, StoreError> {
    validate_subject_id(&profile.subject_id)?;
    if profile.enrollment.subject_id() != profile.subject_id {
        return Err(StoreError::InvalidSubjectId(format!(
            "{} (recording belongs to {})",
            profile.subject_id,
            profile.enrollment.subject_id()
        )));
    }
    let path = dir.join(profile.file_name());
    let tmp = dir.join(format!(".{}.tmp", profile.file_name()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(write_profile(profile).as_bytes())?;
        f.sync_all()?;
    }
    if let Err(e) = fs::rename(&tmp, &path) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(path)
}

pub fn load_profile(path: &Path) -> Result<SubjectProfile, StoreError> {
    let text = fs::read_to_string(path)?;
    parse_profile(&text).map_err(|e| match e {
        StoreError::CorruptProfile { line, reason, .. } => {
            StoreError::CorruptProfile { path: Some(path.to_path_buf()), line, reason }
        }
        other => other,
    })
}

/// `(subject_id, path)` for every `*.popa-profile` file in `dir`, sorted by
/// subject id. Other files are ignored.
pub fn list_profiles(dir: &Path) -> Result<Vec<(String, PathBuf)>, StoreError> {
    let mut found: BTreeMap<String, PathBuf> = BTreeMap::new();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.sort();
    for path in paths {
        let is_profile = path.is_file()
            && path.extension().is_some_and(|e| e == PROFILE_EXTENSION)
            && !path.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.'));
        if !is_profile {
            continue;
        }
        let profile = load_profile(&path)?;
        if let Some(first) = found.get(&profile.subject_id) {
            return Err(StoreError::DuplicateSubject { subject: profile.subject_id, first: first.clone(), second: path });
        }
        found.insert(profile.subject_id, path);
    }
    Ok(found.into_iter().collect())
}

/// Every profile in `dir`, sorted by subject id.
pub fn load_all(dir: &Path) -> Result<Vec<SubjectProfile>, StoreError> {
    list_profiles(dir)?.into_iter().map(|(_, p)| load_profile(&p)).collect()
}
