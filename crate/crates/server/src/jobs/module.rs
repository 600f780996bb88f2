//! Module descriptors: the inputs, outputs and options a processing module
//! declares.

use std::collections::{BTreeMap, BTreeSet};

use discover_core::canonical::to_canonical_vec;
use discover_core::sampling::{InputDescriptor, SlotType};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::JobError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionType {
    Number,
    Integer,
    String,
    Boolean,
}

impl OptionType {
    pub fn accepts(self, v: &Value) -> bool {
        match self {
            OptionType::Number => v.is_number(),
            OptionType::Integer => v.is_i64() || v.is_u64(),
            OptionType::String => v.is_string(),
            OptionType::Boolean => v.is_boolean(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OptionType::Number => "number",
            OptionType::Integer => "integer",
            OptionType::String => "string",
            OptionType::Boolean => "boolean",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionSpec {
    #[serde(rename = "type")]
    pub kind: OptionType,
    pub default: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleDescriptor {
    pub name: String,
    pub version: String,
    #[serde(default)]
    pub category: String,
    pub inputs: Vec<InputDescriptor>,
    pub outputs: Vec<InputDescriptor>,
    #[serde(default)]
    pub options: BTreeMap<String, OptionSpec>,
}

fn is_module_token(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.'))
}

impl ModuleDescriptor {
    pub fn validate(&self) -> Result<(), JobError> {
        let bad = |m: String| Err(JobError::InvalidDescriptor(m));
        if !is_module_token(&self.name) || !is_module_token(&self.version) {
            return bad(format!("bad module name or version {:?}@{:?}", self.name, self.version));
        }
        let mut ids = BTreeSet::new();
        for (slots, want) in [(&self.inputs, SlotType::Input), (&self.outputs, SlotType::Output)] {
            for s in slots {
                if s.slot != want {
                    return bad(format!("slot {} is declared in the wrong list", s.id));
                }
                if !ids.insert(s.id.as_str()) {
                    return bad(format!("duplicate slot id {}", s.id));
                }
            }
        }
        for (name, spec) in &self.options {
            if !spec.kind.accepts(&spec.default) {
                return bad(format!("default of option {name} is not a {}", spec.kind.as_str()));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let bytes = to_canonical_vec(self).expect("descriptors always serialize");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Annotator id under which the module's results are stored.
    pub fn machine_annotator(&self) -> String {
        machine_annotator(&self.name, &self.version)
    }

    /// Fills unset options with defaults and type-checks the given ones.
    pub fn resolve_options(&self, given: &BTreeMap<String, Value>) -> Result<BTreeMap<String, Value>, JobError> {
        for name in given.keys() {
            if !self.options.contains_key(name) {
                return Err(JobError::UnknownOption(name.clone()));
            }
        }
        self.options
            .iter()
            .map(|(name, spec)| match given.get(name) {
                Some(v) if spec.kind.accepts(v) => Ok((name.clone(), v.clone())),
                Some(v) => Err(JobError::OptionType {
                    name: name.clone(),
                    expected: spec.kind.as_str(),
                    got: v.to_string(),
                }),
                None => Ok((name.clone(), spec.default.clone())),
            })
            .collect()
    }
}

pub fn machine_annotator(module: &str, version: &str) -> String {
    format!("DISCOVER:{module}@{version}")
}
