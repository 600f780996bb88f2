use std::path::{Path, PathBuf};

use clap::ValueEnum;
use reqwest::Url;
use serde::Deserialize;

use crate::CliError;

pub const DEFAULT_URL: &str = "http://127.0.0.1:8080";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Table,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CliConfig {
    pub url: Url,
    pub token: Option<String>,
    pub format: Format,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    url: Option<String>,
    token: Option<String>,
    format: Option<Format>,
}

/// Values given on the command line or through the environment.
#[derive(Debug, Default)]
pub struct Overrides {
    pub url: Option<String>,
    pub token: Option<String>,
    pub format: Option<Format>,
}

impl CliConfig {
    /// Overrides win over the file; missing values fall back to defaults.
    pub fn resolve(file: Option<&Path>, overrides: Overrides) -> Result<Self, CliError> {
        let stored = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
                toml::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?
            }
            None => ConfigFile::default(),
        };
        let url = overrides.url.or(stored.url).unwrap_or_else(|| DEFAULT_URL.to_string());
        Ok(CliConfig {
            url: parse_url(&url)?,
            token: overrides.token.or(stored.token).filter(|t| !t.is_empty()),
            format: overrides.format.or(stored.format).unwrap_or_default(),
        })
    }
}

pub fn parse_url(raw: &str) -> Result<Url, CliError> {
    let url = Url::parse(raw).map_err(|e| CliError::Usage(format!("invalid server url {raw:?}: {e}")))?;
    if !matches!(url.scheme(), "http" | "https") || url.host_str().is_none() {
        return Err(CliError::Usage(format!("invalid server url {raw:?}: expected http(s)://host[:port]")));
    }
    Ok(url)
}

/// `$HOME/.config/discover/config.toml` when it exists.
pub fn default_path() -> Option<PathBuf> {
    let home = std::env::var_os("HOME")?;
    let path = PathBuf::from(home).join(".config/discover/config.toml");
    path.is_file().then_some(path)
}
