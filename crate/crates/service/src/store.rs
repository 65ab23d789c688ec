//! Directory-backed session persistence.
//!
//! Layout per session, under `<root>/sessions/<id>/`:
//!
//! ```text
//! source.motion      optional source motion
//! step-000.codes     one code file per history entry
//! trace-001.json     edit trace for every entry after the source
//! manifest.json      committed history; always written last
//! edit.lock          present while an edit is in flight
//! ```
//!
//! A directory without a manifest is ignored, and files not listed in the
//! manifest are leftovers from an interrupted edit.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use posecodec::codebook::Codebook;
use posecodec::editor::{EditSession, EditTrace, HistoryEntry};
use posecodec::encoder::{format_codes, parse_codes};
use posecodec::motion::{format_motion, parse_motion};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const MANIFEST: &str = "manifest.json";
const LOCK: &str = "edit.lock";
const SOURCE_MOTION: &str = "source.motion";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown session `{0}`")]
    NotFound(String),
    #[error("session `{0}` already exists")]
    AlreadyExists(String),
    #[error("session `{0}` has an edit in progress")]
    Locked(String),
    #[error("session `{id}` is corrupt: {message}")]
    Corrupt { id: String, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    instruction: Option<String>,
    range: Option<(usize, usize)>,
    codes_file: String,
    trace_file: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    session_id: String,
    description: String,
    source_motion: Option<String>,
    entries: Vec<ManifestEntry>,
}

/// Held while an edit runs; removes the lock file when dropped.
#[derive(Debug)]
pub struct SessionLock {
    path: PathBuf,
}

impl Drop for SessionLock {
    fn drop(&mut self) {
        if let Err(e) = fs::remove_file(&self.path) {
            log::warn!("could not remove {}: {e}", self.path.display());
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionStore {
    root: PathBuf,
    cb: &'static Codebook,
}

fn write_synced(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let mut f = File::create(path).map_err(io_err(path))?;
    f.write_all(bytes).map_err(io_err(path))?;
    f.sync_all().map_err(io_err(path))
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

impl SessionStore {
    /// Open (creating if needed) a store. Lock files left by a previous
    /// process are stale at this point and are removed.
    pub fn open(root: impl Into<PathBuf>, cb: &'static Codebook) -> Result<Self, StoreError> {
        let root = root.into();
        let sessions = root.join("sessions");
        fs::create_dir_all(&sessions).map_err(io_err(&sessions))?;
        for entry in fs::read_dir(&sessions).map_err(io_err(&sessions))? {
            let lock = entry.map_err(io_err(&sessions))?.path().join(LOCK);
            if lock.exists() {
                log::warn!("removing stale lock {}", lock.display());
                fs::remove_file(&lock).map_err(io_err(&lock))?;
            }
        }
        Ok(Self { root, cb })
    }

    fn dir(&self, id: &str) -> Result<PathBuf, StoreError> {
        if !valid_id(id) {
            return Err(StoreError::NotFound(id.to_string()));
        }
        Ok(self.root.join("sessions").join(id))
    }

    /// Ids of sessions with a committed manifest.
    pub fn list(&self) -> Result<Vec<String>, StoreError> {
        let sessions = self.root.join("sessions");
        let mut ids: Vec<String> = fs::read_dir(&sessions)
            .map_err(io_err(&sessions))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join(MANIFEST).is_file())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        ids.sort();
        Ok(ids)
    }

    pub fn exists(&self, id: &str) -> bool {
        self.dir(id).map(|d| d.join(MANIFEST).is_file()).unwrap_or(false)
    }

    pub fn create(&self, session: &EditSession) -> Result<(), StoreError> {
        let dir = self.dir(&session.session_id)?;
        match fs::create_dir(&dir) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                if dir.join(MANIFEST).exists() {
                    return Err(StoreError::AlreadyExists(session.session_id.clone()));
                }
            }
            Err(e) => return Err(io_err(&dir)(e)),
        }
        if let Some(m) = &session.source_motion {
            write_synced(&dir.join(SOURCE_MOTION), format_motion(m).as_bytes())?;
        }
        self.write_entries(&dir, session, 0)
    }

    /// Persist history entries not yet in the manifest, then the manifest.
    pub fn commit(&self, session: &EditSession) -> Result<(), StoreError> {
        let dir = self.dir(&session.session_id)?;
        let committed = self.read_manifest(&session.session_id, &dir)?.entries.len();
        if session.history.len() < committed {
            return Err(StoreError::Corrupt {
                id: session.session_id.clone(),
                message: format!("history shrank from {committed} to {} entries", session.history.len()),
            });
        }
        self.write_entries(&dir, session, committed)
    }

    fn write_entries(&self, dir: &Path, session: &EditSession, from: usize) -> Result<(), StoreError> {
        let mut entries = Vec::with_capacity(session.history.len());
        for (i, h) in session.history.iter().enumerate() {
            let codes_file = format!("step-{i:03}.codes");
            let trace_file = h.trace.as_ref().map(|_| format!("trace-{i:03}.json"));
            if i >= from {
                write_synced(&dir.join(&codes_file), format_codes(&h.codes).as_bytes())?;
                if let (Some(name), Some(trace)) = (&trace_file, &h.trace) {
                    let json = serde_json::to_vec_pretty(trace).expect("trace serializes");
                    write_synced(&dir.join(name), &json)?;
                }
            }
            entries.push(ManifestEntry { instruction: h.instruction.clone(), range: h.range, codes_file, trace_file });
        }
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            session_id: session.session_id.clone(),
            description: session.description.clone(),
            source_motion: session.source_motion.as_ref().map(|_| SOURCE_MOTION.to_string()),
            entries,
        };
        let tmp = dir.join("manifest.json.tmp");
        write_synced(&tmp, &serde_json::to_vec_pretty(&manifest).expect("manifest serializes"))?;
        let target = dir.join(MANIFEST);
        fs::rename(&tmp, &target).map_err(io_err(&target))?;
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
        Ok(())
    }

    fn read_manifest(&self, id: &str, dir: &Path) -> Result<Manifest, StoreError> {
        let path = dir.join(MANIFEST);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::NotFound(id.to_string())),
            Err(e) => return Err(io_err(&path)(e)),
        };
        let m: Manifest = serde_json::from_str(&text).map_err(|e| StoreError::Corrupt { id: id.to_string(), message: e.to_string() })?;
        if m.version != MANIFEST_VERSION || m.session_id != id || m.entries.is_empty() {
            return Err(StoreError::Corrupt { id: id.to_string(), message: "manifest header mismatch".into() });
        }
        Ok(m)
    }

    pub fn load(&self, id: &str) -> Result<EditSession, StoreError> {
        let dir = self.dir(id)?;
        let m = self.read_manifest(id, &dir)?;
        let corrupt = |message: String| StoreError::Corrupt { id: id.to_string(), message };
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(io_err(&p))
        };
        let source_motion = match &m.source_motion {
            Some(name) => Some(parse_motion(&read(name)?).map_err(|e| corrupt(e.to_string()))?),
            None => None,
        };
        let mut history = Vec::with_capacity(m.entries.len());
        for e in &m.entries {
            let codes = parse_codes(&read(&e.codes_file)?, self.cb).map_err(|err| corrupt(format!("{}: {err}", e.codes_file)))?;
            let trace = match &e.trace_file {
                Some(name) => Some(serde_json::from_str::<EditTrace>(&read(name)?).map_err(|err| corrupt(format!("{name}: {err}")))?),
                None => None,
            };
            history.push(HistoryEntry { instruction: e.instruction.clone(), range: e.range, codes, trace });
        }
        Ok(EditSession { session_id: m.session_id, description: m.description, source_motion, history })
    }

    /// Take the per-session edit lock, failing at once if it is held.
    pub fn try_lock(&self, id: &str) -> Result<SessionLock, StoreError> {
        let dir = self.dir(id)?;
        if !dir.join(MANIFEST).is_file() {
            return Err(StoreError::NotFound(id.to_string()));
        }
        let path = dir.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(SessionLock { path })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(StoreError::Locked(id.to_string())),
            Err(e) => Err(io_err(&path)(e)),
        }
    }
}
