use serde::Serialize;

/// Failure of a run, mapped to an exit code and an error document.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error in `{section}`: {message}")]
    Config { section: String, message: String },

    #[error("{module}: {source}")]
    Module {
        module: &'static str,
        #[source]
        source: elastodiel::Error,
    },

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("output error: {0}")]
    Output(String),
}

impl CliError {
    pub fn module(module: &'static str) -> impl Fn(elastodiel::Error) -> CliError {
        move |source| CliError::Module { module, source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Module { source, .. } if source.is_resource_cap() => 4,
            _ => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "ConfigError",
            CliError::Module { source, .. } => source.kind(),
            CliError::Verification(_) => "VerificationError",
            CliError::Output(_) => "OutputError",
        }
    }

    pub fn document(&self, config_hash: Option<&str>) -> ErrorDocument {
        ErrorDocument {
            error: self.kind().to_string(),
            module: match self {
                CliError::Config { .. } => "cli".to_string(),
                CliError::Module { module, .. } => module.to_string(),
                CliError::Verification(_) => "effective_tensors".to_string(),
                CliError::Output(_) => "cli".to_string(),
            },
            section: match self {
                CliError::Config { section, .. } => Some(section.clone()),
                _ => None,
            },
            message: self.to_string(),
            exit_code: self.exit_code(),
            config_hash: config_hash.map(str::to_string),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

/// Machine-readable failure report.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorDocument {
    pub error: String,
    pub module: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub section: Option<String>,
    pub message: String,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}
