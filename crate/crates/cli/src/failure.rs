use std::fmt;

/// A command failure, split by exit code.
#[derive(Debug)]
pub enum Failure {
    /// Rejected configuration; nothing was written.
    Config(String),
    /// Failure while running.
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Failure::Config(_) => "config",
            Failure::Runtime(_) => "runtime",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Runtime(m) => m,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.kind(), self.message())
    }
}

impl From<ssf_core::Error> for Failure {
    fn from(e: ssf_core::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<ssf_models::Error> for Failure {
    fn from(e: ssf_models::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<ssf_eval::Error> for Failure {
    fn from(e: ssf_eval::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

/// Reclassify a runtime failure as a configuration rejection.
pub fn as_config<T>(r: Result<T, impl Into<Failure>>) -> Result<T, Failure> {
    r.map_err(|e| match e.into() {
        Failure::Runtime(m) => Failure::Config(m),
        other => other,
    })
}
