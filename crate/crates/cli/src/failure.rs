use dfq::pipeline::StepError;
use dfq::Error;

pub const CONFIG: u8 = 1;
pub const MODEL: u8 = 2;
pub const NUMERICAL: u8 = 3;

/// An error together with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn config(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: CONFIG,
            error: error.into(),
        }
    }

    pub fn model(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: MODEL,
            error: error.into(),
        }
    }

    pub fn context(mut self, msg: impl std::fmt::Display + Send + Sync + 'static) -> Self {
        self.error = self.error.context(msg);
        self
    }
}

/// Exit code for a library error raised while processing a model.
pub fn code_of(e: &Error) -> u8 {
    match e {
        Error::InvalidParameter(_) | Error::EmptyDataset => CONFIG,
        Error::Numerical(_) => NUMERICAL,
        _ => MODEL,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: code_of(&e),
            error: e.into(),
        }
    }
}

impl From<StepError> for Failure {
    fn from(e: StepError) -> Self {
        Failure {
            code: code_of(&e.source),
            error: e.into(),
        }
    }
}
