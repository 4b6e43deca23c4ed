use std::fmt;

/// Failure of one CLI run, classified for the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config files, plans or network specs (exit code 2).
    #[error("{0}")]
    Config(String),
    /// I/O, decoding, numerical or other runtime failures (exit code 1).
    #[error("{0}")]
    Runtime(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn config(msg: impl fmt::Display) -> Self {
        CliError::Config(msg.to_string())
    }

    pub fn runtime(msg: impl fmt::Display) -> Self {
        CliError::Runtime(msg.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Runtime(_) => "runtime",
        }
    }

    /// Single stderr line for scripts:
    /// `rcnkit: error code=2 kind=config msg="..."`.
    pub fn machine_line(&self) -> String {
        let msg = self.to_string().replace('\\', "\\\\").replace('"', "\\\"").replace('\n', "\\n");
        format!("rcnkit: error code={} kind={} msg=\"{msg}\"", self.exit_code(), self.kind())
    }
}

impl From<rcnkit::Error> for CliError {
    fn from(e: rcnkit::Error) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
