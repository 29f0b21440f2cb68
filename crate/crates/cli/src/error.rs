use rolecast::gateway::GatewayError;

/// Every failure maps to one exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("gateway: {0}")]
    Gateway(String),
    #[error("{0} (replay mode; run with --mode record to fill the cache)")]
    CacheMiss(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Gateway(_) => 3,
            CliError::CacheMiss(_) => 4,
        }
    }

    pub fn input(e: impl std::fmt::Display) -> Self {
        CliError::Input(e.to_string())
    }

    pub fn from_gateway(context: impl std::fmt::Display, e: &GatewayError) -> Self {
        if e.is_cache_miss() {
            CliError::CacheMiss(format!("{context}: {e}"))
        } else {
            CliError::Gateway(format!("{context}: {e}"))
        }
    }
}
