//! HTTP/JSON client for a node's admin plane.

use std::time::Duration;

use snickv_core::api::{CommandRequest, CommandResponse, Health, StatusReport};
use snickv_core::wire::Command;

#[derive(Debug, Clone)]
pub struct AdminClient {
    base: String,
    http: reqwest::Client,
}

impl AdminClient {
    /// `target` is `addr:port` or a full `http://` URL.
    pub fn new(target: &str) -> Result<Self, reqwest::Error> {
        let base = if target.starts_with("http://") || target.starts_with("https://") {
            target.trim_end_matches('/').to_owned()
        } else {
            format!("http://{target}")
        };
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(10))
            .build()?;
        Ok(AdminClient { base, http })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub async fn health(&self) -> Result<Health, reqwest::Error> {
        self.http
            .get(format!("{}/health", self.base))
            .send()
            .await?
            .error_for_status()?
            .json()
            .await
    }

    pub async fn status(&self) -> Result<StatusReport, reqwest::Error> {
        self.http
            .get(format!("{}/status", self.base))
            .send()
            .await?
            .error_for_status()?
            .json()
            .await
    }

    /// Runs one command through the node's admin plane. Malformed requests
    /// come back as HTTP 400.
    pub async fn command(&self, cmd: &Command) -> Result<CommandResponse, reqwest::Error> {
        self.http
            .post(format!("{}/command", self.base))
            .json(&CommandRequest::from_command(cmd))
            .send()
            .await?
            .error_for_status()?
            .json()
            .await
    }
}
