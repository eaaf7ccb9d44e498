use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("CSV error in {context}: {source}")]
    Csv {
        context: String,
        #[source]
        source: csv::Error,
    },

    #[error("WAV error: {0}")]
    Wav(#[from] hound::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Parses JSON, naming the offending key path in the error when there is one.
    pub(crate) fn parse_json<T: serde::de::DeserializeOwned>(text: &str, context: &str) -> Result<T> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let context = if path == "." { context.to_string() } else { format!("{context} at key '{path}'") };
            Error::json(context, e.into_inner())
        })
    }

    pub(crate) fn csv(context: impl Into<String>, source: csv::Error) -> Self {
        Error::Csv {
            context: context.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than internal failures.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Shape(_)
                | Error::Input(_)
                | Error::Json { .. }
                | Error::Csv { .. }
                | Error::Wav(_)
                | Error::Io { .. }
        )
    }
}

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(format!($($arg)*)) };
}

macro_rules! input_err {
    ($($arg:tt)*) => { $crate::error::Error::Input(format!($($arg)*)) };
}

pub(crate) use input_err;
pub(crate) use shape_err;
