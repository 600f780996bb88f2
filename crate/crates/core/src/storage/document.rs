//! The `.annotation` file format.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::StorageError;
use crate::canonical::to_canonical_vec;
use crate::model::{Annotation, AnnotationBody, AnnotationKey, Scheme};

/// A self-describing annotation: key, scheme definition, revision and body,
/// serialized as one canonical JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationDocument {
    pub key: AnnotationKey,
    pub scheme_def: Scheme,
    pub revision: u64,
    pub body: AnnotationBody,
}

impl AnnotationDocument {
    pub fn new(annotation: Annotation, scheme_def: Scheme, revision: u64) -> Self {
        Self {
            key: annotation.key,
            scheme_def,
            revision,
            body: annotation.body,
        }
    }

    pub fn annotation(&self) -> Annotation {
        Annotation {
            key: self.key.clone(),
            body: self.body.clone(),
        }
    }

    pub fn into_annotation(self) -> Annotation {
        Annotation {
            key: self.key,
            body: self.body,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        to_canonical_vec(self).expect("annotation documents always serialize")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StorageError> {
        let doc: Self = serde_json::from_slice(bytes).map_err(|e| StorageError::Malformed(e.to_string()))?;
        doc.check()?;
        Ok(doc)
    }

    fn check(&self) -> Result<(), StorageError> {
        if self.scheme_def.kind() != self.body.kind() {
            return Err(StorageError::Malformed(format!(
                "scheme_def is {} but body is {}",
                self.scheme_def.kind(),
                self.body.kind()
            )));
        }
        if self.scheme_def.name() != self.key.scheme {
            return Err(StorageError::Malformed(format!(
                "scheme_def {:?} does not match key scheme {:?}",
                self.scheme_def.name(),
                self.key.scheme
            )));
        }
        Ok(())
    }
}

pub fn export_annotation_file(doc: &AnnotationDocument, path: impl AsRef<Path>) -> Result<(), StorageError> {
    fs::write(path, doc.to_bytes())?;
    Ok(())
}

pub fn import_annotation_file(path: impl AsRef<Path>) -> Result<AnnotationDocument, StorageError> {
    AnnotationDocument::from_bytes(&fs::read(path)?)
}
