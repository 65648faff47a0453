use std::fmt;

/// Exit 1 for bad input or configuration, 2 for failures while running.
#[derive(Debug)]
pub enum CliError {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn invalid(msg: impl fmt::Display) -> Self {
        CliError::Validation(anyhow::anyhow!("{msg}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(e) | CliError::Runtime(e) => {
                if f.alternate() {
                    write!(f, "{e:#}")
                } else {
                    write!(f, "{e}")
                }
            }
        }
    }
}

pub trait Classify<T> {
    fn invalid(self, context: &str) -> Result<T, CliError>;
    fn runtime(self, context: &str) -> Result<T, CliError>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn invalid(self, context: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::Validation(e.into().context(context.to_string())))
    }

    fn runtime(self, context: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::Runtime(e.into().context(context.to_string())))
    }
}
