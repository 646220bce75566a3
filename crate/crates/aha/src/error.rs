use std::path::PathBuf;

/// Errors surfaced by the engine and its storage layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error{}: {source}", path_suffix(.path))]
    Io {
        #[source]
        source: std::io::Error,
        path: Option<PathBuf>,
    },

    #[error("corrupt table file {path}: {detail}")]
    CorruptTable { path: PathBuf, detail: String },

    #[error("corrupt manifest {path} (line {line}): {detail}")]
    CorruptManifest {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("page buffer pool exhausted: all {capacity} frames are pinned")]
    PoolExhausted { capacity: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("key length {got} outside 1..={max} bytes")]
    KeyLength { got: usize, max: usize },

    #[error("value length {got} exceeds {max} bytes")]
    ValueLength { got: usize, max: usize },

    #[error("engine is shut down")]
    ShutDown,

    #[error("timed out waiting for memtable rotation")]
    RotationTimeout,

    #[error("invariant violated: {0}")]
    Invariant(String),
}

fn path_suffix(path: &Option<PathBuf>) -> String {
    match path {
        Some(p) => format!(" on {}", p.display()),
        None => String::new(),
    }
}

impl Error {
    pub fn io(source: std::io::Error, path: impl Into<PathBuf>) -> Self {
        Error::Io {
            source,
            path: Some(path.into()),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(source: std::io::Error) -> Self {
        Error::Io { source, path: None }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn messages_name_the_file() {
        let err = Error::CorruptTable {
            path: PathBuf::from("/tmp/sst_7.aha"),
            detail: "body checksum mismatch".into(),
        };
        let msg = err.to_string();
        assert!(msg.contains("sst_7.aha"));
        assert!(msg.contains("checksum"));
    }

    #[test]
    fn io_error_carries_path() {
        let err = Error::io(
            std::io::Error::new(std::io::ErrorKind::NotFound, "gone"),
            "/data/x",
        );
        assert!(err.to_string().contains("/data/x"));
    }
}
