use std::time::Duration;

use reqwest::blocking::{Client as Http, RequestBuilder};
use reqwest::header::CONTENT_TYPE;
use serde_json::Value;

use crate::config::CliConfig;
use crate::CliError;

/// Blocking REST client; every command is one or more of these calls.
pub struct Client {
    http: Http,
    base: String,
    token: Option<String>,
}

impl Client {
    pub fn new(config: &CliConfig) -> Result<Self, CliError> {
        let http = Http::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| CliError::Transport(e.to_string()))?;
        Ok(Client { http, base: config.url.as_str().trim_end_matches('/').to_string(), token: config.token.clone() })
    }

    pub fn get(&self, path: &str, query: &[(&str, &str)]) -> Result<Vec<u8>, CliError> {
        self.send(self.http.get(self.url(path)).query(query))
    }

    pub fn post(&self, path: &str, body: &Value) -> Result<Vec<u8>, CliError> {
        self.post_raw(path, serde_json::to_vec(body).expect("json values serialize"))
    }

    pub fn post_raw(&self, path: &str, body: Vec<u8>) -> Result<Vec<u8>, CliError> {
        self.send(self.http.post(self.url(path)).header(CONTENT_TYPE, "application/json").body(body))
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn send(&self, request: RequestBuilder) -> Result<Vec<u8>, CliError> {
        let request = match &self.token {
            Some(t) => request.bearer_auth(t),
            None => request,
        };
        let response = request.send().map_err(|e| CliError::Transport(e.to_string()))?;
        let status = response.status();
        let body = response.bytes().map_err(|e| CliError::Transport(e.to_string()))?.to_vec();
        if status.is_success() {
            Ok(body)
        } else {
            Err(CliError::Server { status: status.as_u16(), body: String::from_utf8_lossy(&body).into_owned() })
        }
    }
}
