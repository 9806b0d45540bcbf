use thiserror::Error;

/// Failure of a command, carrying its exit code class.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Internal(_) => 1,
        }
    }
}

impl From<mmhcl::Error> for CliError {
    fn from(e: mmhcl::Error) -> Self {
        use mmhcl::Error as E;
        match e {
            E::Parameter(_) => CliError::Config(e.to_string()),
            E::Parse { .. }
            | E::Format(_)
            | E::Data(_)
            | E::Io(_)
            | E::Degenerate(_)
            | E::InvalidSparse(_)
            | E::Empty(_) => CliError::Data(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Attaches a path to an I/O or format failure.
pub(crate) fn data_at(path: &std::path::Path) -> impl Fn(mmhcl::Error) -> CliError + '_ {
    move |e| match CliError::from(e) {
        CliError::Data(msg) => CliError::Data(format!("{}: {msg}", path.display())),
        other => other,
    }
}
