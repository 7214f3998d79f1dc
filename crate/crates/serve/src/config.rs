use std::net::SocketAddr;
use std::path::PathBuf;

use thiserror::Error;

pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";
pub const DEFAULT_MAX_BODY_BYTES: usize = 8 * 1024 * 1024;
pub const MIN_MAX_BODY_BYTES: usize = 64 * 1024;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("top_k must be at least 1")]
    TopK,
    #[error("body limit must be at least {MIN_MAX_BODY_BYTES} bytes, got {0}")]
    BodyLimit(usize),
    #[error("invalid allowed origin '{0}'")]
    Origin(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceConfig {
    pub addr: SocketAddr,
    pub model_path: Option<PathBuf>,
    /// Number of predictions returned; `None` returns every class.
    pub top_k: Option<usize>,
    pub max_body_bytes: usize,
    /// Origins allowed to call the API from a browser. `"*"` allows any origin; an empty
    /// list emits no cross-origin headers.
    pub allowed_origins: Vec<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            addr: DEFAULT_ADDR.parse().expect("valid default address"),
            model_path: None,
            top_k: None,
            max_body_bytes: DEFAULT_MAX_BODY_BYTES,
            allowed_origins: vec!["*".into()],
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.top_k == Some(0) {
            return Err(ConfigError::TopK);
        }
        if self.max_body_bytes < MIN_MAX_BODY_BYTES {
            return Err(ConfigError::BodyLimit(self.max_body_bytes));
        }
        for o in &self.allowed_origins {
            if o != "*" && axum::http::HeaderValue::from_str(o).is_err() {
                return Err(ConfigError::Origin(o.clone()));
            }
        }
        Ok(())
    }
}
