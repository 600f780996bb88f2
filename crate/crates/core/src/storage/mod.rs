//! Persistence for datasets, sessions, schemes, annotations and signal
//! streams.
//!
//! Layout, relative to the backend root:
//!
//! ```text
//! <dataset>/.dataset.json
//! <dataset>/.schemes/<scheme>.json
//! <dataset>/<session>/.session.json
//! <dataset>/<session>/<role>.<scheme>.<annotator>.annotation
//! <dataset>/<session>/<name>.stream
//! ```
//!
//! Identifiers never contain `.` (annotators excepted, and they come last),
//! so the dot-prefixed metadata files cannot collide with user names.

mod backend;
mod document;
mod stream;

use std::collections::HashMap;
use std::io;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{Backend, FsBackend, MemBackend};
pub use document::{export_annotation_file, import_annotation_file, AnnotationDocument};
pub use stream::{decode_stream, encode_stream, read_stream, write_stream, StreamError, StreamHeader, DTYPE_F32};

use crate::canonical::to_canonical_vec;
use crate::error::ModelError;
use crate::model::{is_identifier, validate_annotation, Annotation, AnnotationKey, Scheme, Session, Violation};

const DATASET_FILE: &str = ".dataset.json";
const SESSION_FILE: &str = ".session.json";
const SCHEMES_DIR: &str = ".schemes";
const ANNOTATION_EXT: &str = ".annotation";
const STREAM_EXT: &str = ".stream";

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("unknown dataset: {0}")]
    UnknownDataset(String),
    #[error("unknown session: {0}")]
    UnknownSession(String),
    #[error("unknown scheme: {0}")]
    UnknownScheme(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("validation failed: {}", join(.0))]
    Invalid(Vec<Violation>),
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|v| v.message.as_str()).collect::<Vec<_>>().join("; ")
}

#[derive(Serialize, Deserialize)]
struct DatasetRecord {
    name: String,
}

/// The annotation and stream store.
///
/// Writes to one annotation key are serialized; writes to different keys
/// proceed independently.
pub struct Store {
    backend: Arc<dyn Backend>,
    structure: Mutex<()>,
    key_locks: Mutex<HashMap<AnnotationKey, Arc<Mutex<()>>>>,
}

impl Store {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            structure: Mutex::new(()),
            key_locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn open_dir(root: impl AsRef<Path>) -> Result<Self, StorageError> {
        Ok(Self::new(Arc::new(FsBackend::new(root.as_ref())?)))
    }

    pub fn in_memory() -> Self {
        Self::new(Arc::new(MemBackend::default()))
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&self, path: &[&str]) -> Result<Option<T>, StorageError> {
        match self.backend.read(path)? {
            None => Ok(None),
            Some(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| StorageError::Malformed(format!("{}: {e}", path.join("/")))),
        }
    }

    fn write_json<T: Serialize>(&self, path: &[&str], value: &T) -> Result<(), StorageError> {
        let bytes = to_canonical_vec(value).map_err(|e| StorageError::Malformed(e.to_string()))?;
        self.backend.write(path, &bytes)?;
        Ok(())
    }

    fn check_id(id: &str) -> Result<(), StorageError> {
        if is_identifier(id) {
            Ok(())
        } else {
            Err(ModelError::InvalidIdentifier(id.to_string()).into())
        }
    }

    pub fn create_dataset(&self, name: &str) -> Result<(), StorageError> {
        Self::check_id(name)?;
        let _guard = self.structure.lock().unwrap();
        if self.backend.exists(&[name, DATASET_FILE])? {
            return Err(StorageError::Conflict(format!("dataset {name} exists")));
        }
        self.write_json(&[name, DATASET_FILE], &DatasetRecord { name: name.into() })
    }

    pub fn has_dataset(&self, name: &str) -> Result<bool, StorageError> {
        Ok(is_identifier(name) && self.backend.exists(&[name, DATASET_FILE])?)
    }

    fn require_dataset(&self, name: &str) -> Result<(), StorageError> {
        if self.has_dataset(name)? {
            Ok(())
        } else {
            Err(StorageError::UnknownDataset(name.to_string()))
        }
    }

    pub fn list_datasets(&self) -> Result<Vec<String>, StorageError> {
        let mut out = Vec::new();
        for name in self.backend.list(&[])? {
            if is_identifier(&name) && self.backend.exists(&[&name, DATASET_FILE])? {
                out.push(name);
            }
        }
        Ok(out)
    }

    /// Registers a session. Re-adding an identical session is a no-op.
    pub fn add_session(&self, session: &Session) -> Result<(), StorageError> {
        session.validate()?;
        let _guard = self.structure.lock().unwrap();
        self.require_dataset(&session.dataset)?;
        let path = [session.dataset.as_str(), session.name.as_str(), SESSION_FILE];
        match self.read_json::<Session>(&path)? {
            Some(existing) if &existing == session => Ok(()),
            Some(_) => Err(StorageError::Conflict(format!(
                "session {}/{} exists with a different definition",
                session.dataset, session.name
            ))),
            None => self.write_json(&path, session),
        }
    }

    pub fn get_session(&self, dataset: &str, name: &str) -> Result<Session, StorageError> {
        self.require_dataset(dataset)?;
        if !is_identifier(name) {
            return Err(StorageError::UnknownSession(name.to_string()));
        }
        self.read_json(&[dataset, name, SESSION_FILE])?
            .ok_or_else(|| StorageError::UnknownSession(format!("{dataset}/{name}")))
    }

    pub fn list_sessions(&self, dataset: &str) -> Result<Vec<String>, StorageError> {
        self.require_dataset(dataset)?;
        let mut out = Vec::new();
        for name in self.backend.list(&[dataset])? {
            if is_identifier(&name) && self.backend.exists(&[dataset, &name, SESSION_FILE])? {
                out.push(name);
            }
        }
        Ok(out)
    }

    /// Registers a scheme in a dataset. Re-adding an identical scheme is a
    /// no-op.
    pub fn add_scheme(&self, dataset: &str, scheme: &Scheme) -> Result<(), StorageError> {
        let _guard = self.structure.lock().unwrap();
        self.require_dataset(dataset)?;
        let file = format!("{}.json", scheme.name());
        let path = [dataset, SCHEMES_DIR, file.as_str()];
        match self.read_json::<Scheme>(&path)? {
            Some(existing) if &existing == scheme => Ok(()),
            Some(_) => Err(StorageError::Conflict(format!(
                "scheme {} exists with a different definition",
                scheme.name()
            ))),
            None => self.write_json(&path, scheme),
        }
    }

    pub fn get_scheme(&self, dataset: &str, name: &str) -> Result<Scheme, StorageError> {
        self.require_dataset(dataset)?;
        if !is_identifier(name) {
            return Err(StorageError::UnknownScheme(name.to_string()));
        }
        let file = format!("{name}.json");
        self.read_json(&[dataset, SCHEMES_DIR, &file])?
            .ok_or_else(|| StorageError::UnknownScheme(name.to_string()))
    }

    pub fn list_schemes(&self, dataset: &str) -> Result<Vec<Scheme>, StorageError> {
        self.require_dataset(dataset)?;
        let mut out = Vec::new();
        for file in self.backend.list(&[dataset, SCHEMES_DIR])? {
            if let Some(name) = file.strip_suffix(".json") {
                out.push(self.get_scheme(dataset, name)?);
            }
        }
        Ok(out)
    }

    fn key_lock(&self, key: &AnnotationKey) -> Arc<Mutex<()>> {
        self.key_locks
            .lock()
            .unwrap()
            .entry(key.clone())
            .or_default()
            .clone()
    }

    fn annotation_file(key: &AnnotationKey) -> String {
        format!("{}.{}.{}{ANNOTATION_EXT}", key.role, key.scheme, key.annotator)
    }

    /// Validates and stores `a`, returning its new revision (1 on first
    /// save, +1 per overwrite).
    pub fn save_annotation(&self, a: &Annotation) -> Result<u64, StorageError> {
        self.save_annotation_at(a, None)
    }

    /// Like [`Store::save_annotation`], but only if the stored revision is
    /// still `expected` (0: the key must not exist yet). A mismatch is a
    /// [`StorageError::Conflict`].
    pub fn save_annotation_at(&self, a: &Annotation, expected: Option<u64>) -> Result<u64, StorageError> {
        let key = &a.key;
        key.validate()?;
        let session = self.get_session(&key.dataset, &key.session)?;
        let scheme = self.get_scheme(&key.dataset, &key.scheme)?;
        let violations = validate_annotation(a, &scheme, &session);
        if !violations.is_empty() {
            return Err(StorageError::Invalid(violations));
        }
        let lock = self.key_lock(key);
        let _guard = lock.lock().unwrap();
        let revision = match self.load_document(key) {
            Ok(doc) => doc.revision + 1,
            Err(StorageError::NotFound(_)) => 1,
            Err(e) => return Err(e),
        };
        if let Some(want) = expected.filter(|&want| want != revision - 1) {
            return Err(StorageError::Conflict(format!(
                "stale revision of {key}: expected {want}, stored {}",
                revision - 1
            )));
        }
        let doc = AnnotationDocument::new(a.clone(), scheme, revision);
        let file = Self::annotation_file(key);
        self.backend
            .write(&[&key.dataset, &key.session, &file], &doc.to_bytes())?;
        Ok(revision)
    }

    pub fn load_document(&self, key: &AnnotationKey) -> Result<AnnotationDocument, StorageError> {
        if key.validate().is_err() {
            return Err(StorageError::NotFound(key.to_string()));
        }
        let file = Self::annotation_file(key);
        match self.backend.read(&[&key.dataset, &key.session, &file])? {
            Some(bytes) => AnnotationDocument::from_bytes(&bytes),
            None => Err(StorageError::NotFound(key.to_string())),
        }
    }

    pub fn load_annotation(&self, key: &AnnotationKey) -> Result<(Annotation, u64), StorageError> {
        let doc = self.load_document(key)?;
        let revision = doc.revision;
        Ok((doc.into_annotation(), revision))
    }

    /// Raw canonical bytes of the stored document.
    pub fn load_annotation_bytes(&self, key: &AnnotationKey) -> Result<Vec<u8>, StorageError> {
        self.load_document(key).map(|d| d.to_bytes())
    }

    /// Keys of all annotations in a session, sorted.
    pub fn list_annotations(&self, dataset: &str, session: &str) -> Result<Vec<AnnotationKey>, StorageError> {
        self.get_session(dataset, session)?;
        let mut out = Vec::new();
        for file in self.backend.list(&[dataset, session])? {
            let Some(stem) = file.strip_suffix(ANNOTATION_EXT) else {
                continue;
            };
            let mut parts = stem.splitn(3, '.');
            if let (Some(role), Some(scheme), Some(annotator)) = (parts.next(), parts.next(), parts.next()) {
                let key = AnnotationKey::new(dataset, session, role, scheme, annotator);
                if key.validate().is_ok() {
                    out.push(key);
                }
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn put_stream(
        &self,
        dataset: &str,
        session: &str,
        name: &str,
        header: &StreamHeader,
        frames: &[f32],
    ) -> Result<(), StorageError> {
        check_stream_name(name)?;
        self.get_session(dataset, session)?;
        let bytes = encode_stream(header, frames)?;
        let file = format!("{name}{STREAM_EXT}");
        self.backend.write(&[dataset, session, &file], &bytes)?;
        Ok(())
    }

    pub fn get_stream(&self, dataset: &str, session: &str, name: &str) -> Result<(StreamHeader, Vec<f32>), StorageError> {
        check_stream_name(name).map_err(|_| StorageError::NotFound(name.to_string()))?;
        self.get_session(dataset, session)?;
        let file = format!("{name}{STREAM_EXT}");
        match self.backend.read(&[dataset, session, &file])? {
            Some(bytes) => Ok(decode_stream(&bytes)?),
            None => Err(StorageError::NotFound(format!("{dataset}/{session}/{file}"))),
        }
    }

    pub fn list_streams(&self, dataset: &str, session: &str) -> Result<Vec<String>, StorageError> {
        self.get_session(dataset, session)?;
        Ok(self
            .backend
            .list(&[dataset, session])?
            .into_iter()
            .filter_map(|f| f.strip_suffix(STREAM_EXT).map(str::to_string))
            .collect())
    }
}

/// Stream names are dot-separated identifiers, e.g. `teacher.mouth-openness`.
pub fn check_stream_name(name: &str) -> Result<(), StorageError> {
    if name.split('.').all(is_identifier) {
        Ok(())
    } else {
        Err(ModelError::InvalidIdentifier(name.to_string()).into())
    }
}

/// Conventional stream name for a role's signal.
pub fn stream_name(role: &str, signal: &str) -> String {
    format!("{role}.{signal}")
}
