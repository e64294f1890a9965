use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] bitext::Error),

    #[error("{0}")]
    Usage(String),
}

pub type CliResult<T = ()> = Result<T, CliError>;

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError::Usage(message.into())
    }

    pub fn category(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.category(),
            CliError::Usage(_) => "usage",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self.category() {
            "usage" => 2,
            "io" => 3,
            "parse" | "format" => 4,
            "shape" | "validation" => 5,
            _ => 1,
        }
    }

    /// `error<TAB>category<TAB>message` on a single line.
    pub fn report_line(&self) -> String {
        let message = self.to_string().replace(['\n', '\r', '\t'], " ");
        format!("error\t{}\t{}", self.category(), message.trim())
    }
}
