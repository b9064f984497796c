use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Error)]
#[error("{var}={value:?}: {reason}")]
pub struct ConfigError {
    pub var: String,
    pub value: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    /// Parent directory of all session directories.
    pub artifact_root: PathBuf,
    /// Backend TOML; mock backends when unset.
    pub backend_config: Option<PathBuf>,
    /// Idle time after which a session expires.
    pub session_ttl: Duration,
    /// How long a step request waits before answering 202.
    pub step_timeout: Duration,
    pub max_upload_bytes: usize,
    /// Answer every step request with 202 immediately and run in the background.
    pub async_steps: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            artifact_root: PathBuf::from("sessions"),
            backend_config: None,
            session_ttl: Duration::from_secs(3600),
            step_timeout: Duration::from_secs(120),
            max_upload_bytes: 32 << 20,
            async_steps: false,
        }
    }
}

fn parse<T: std::str::FromStr>(var: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError {
        var: var.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

impl ServiceConfig {
    /// Defaults overridden by `HANDMEND_BIND`, `HANDMEND_ARTIFACT_ROOT`,
    /// `HANDMEND_BACKEND_CONFIG`, `HANDMEND_SESSION_TTL_SECS`,
    /// `HANDMEND_STEP_TIMEOUT_SECS`, `HANDMEND_MAX_UPLOAD_BYTES` and
    /// `HANDMEND_ASYNC_STEPS`.
    pub fn from_env() -> Result<Self, ConfigError> {
        Self::from_vars(|k| std::env::var(k).ok())
    }

    pub fn from_vars(get: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        if let Some(v) = get("HANDMEND_BIND") {
            cfg.bind = parse("HANDMEND_BIND", &v)?;
        }
        if let Some(v) = get("HANDMEND_ARTIFACT_ROOT") {
            cfg.artifact_root = v.into();
        }
        if let Some(v) = get("HANDMEND_BACKEND_CONFIG") {
            cfg.backend_config = Some(v.into());
        }
        if let Some(v) = get("HANDMEND_SESSION_TTL_SECS") {
            cfg.session_ttl = Duration::from_secs(parse("HANDMEND_SESSION_TTL_SECS", &v)?);
        }
        if let Some(v) = get("HANDMEND_STEP_TIMEOUT_SECS") {
            cfg.step_timeout = Duration::from_secs(parse("HANDMEND_STEP_TIMEOUT_SECS", &v)?);
        }
        if let Some(v) = get("HANDMEND_MAX_UPLOAD_BYTES") {
            cfg.max_upload_bytes = parse("HANDMEND_MAX_UPLOAD_BYTES", &v)?;
        }
        if let Some(v) = get("HANDMEND_ASYNC_STEPS") {
            cfg.async_steps = parse("HANDMEND_ASYNC_STEPS", &v)?;
        }
        Ok(cfg)
    }
}
