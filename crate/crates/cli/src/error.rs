use std::fmt;
use std::path::{Path, PathBuf};

use volcap_core::Error;

/// A failure reported as one machine-parsable line:
/// `error: kind=<kind> file=<path|-> offset=<byte|-> msg=<text>`.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub code: i32,
    pub file: Option<PathBuf>,
    pub offset: Option<u64>,
    pub msg: String,
}

pub const EXIT_TASK: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_GATE: i32 = 4;

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError {
            kind: "validation",
            code: EXIT_VALIDATION,
            file: None,
            offset: None,
            msg: msg.into(),
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError {
            kind: "usage",
            ..CliError::validation(msg)
        }
    }

    pub fn task(msg: impl Into<String>) -> Self {
        CliError {
            kind: "task",
            code: EXIT_TASK,
            ..CliError::validation(msg)
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let file = self.file.as_ref().map_or("-".to_string(), |p| p.display().to_string());
        let offset = self.offset.map_or("-".to_string(), |o| o.to_string());
        let msg = self.msg.replace('\n', " ");
        write!(f, "error: kind={} file={file} offset={offset} msg={msg}", self.kind)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        let mut out = CliError::validation(msg);
        match e {
            Error::Io { path, .. } => {
                out.kind = "io";
                out.code = EXIT_IO;
                out.file = Some(path);
            }
            Error::Image { ref path, .. } => {
                if e.is_io() {
                    out.kind = "io";
                    out.code = EXIT_IO;
                }
                out.file = Some(path.clone());
            }
            Error::Malformed { offset, .. } => out.offset = Some(offset),
            Error::GateRejected(_) => {
                out.kind = "gate";
                out.code = EXIT_GATE;
            }
            Error::Task(_) => {
                out.kind = "task";
                out.code = EXIT_TASK;
            }
            _ => {}
        }
        out
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Error::from(e).into()
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attaches the file being processed when the error does not name one.
pub trait Context<T> {
    fn at(self, path: &Path) -> CliResult<T>;
}

impl<T, E: Into<CliError>> Context<T> for Result<T, E> {
    fn at(self, path: &Path) -> CliResult<T> {
        self.map_err(|e| {
            let mut e = e.into();
            if e.file.is_none() {
                e.file = Some(path.to_path_buf());
            }
            e
        })
    }
}
