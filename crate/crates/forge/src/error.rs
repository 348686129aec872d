use std::io;
use std::path::{Path, PathBuf};

pub type Result<T> = std::result::Result<T, ForgeError>;

#[derive(Debug, thiserror::Error)]
pub enum ForgeError {
    /// Bad input or configuration. Exit code 1.
    #[error("{0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    /// A file exists but its contents cannot be decoded. Exit code 2.
    #[error("{path}: {msg}")]
    Corrupt { path: PathBuf, msg: String },
    #[error("{0}")]
    Internal(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<ForgeError>,
    },
}

impl ForgeError {
    pub fn validation(msg: impl Into<String>) -> Self {
        ForgeError::Validation(msg.into())
    }

    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        ForgeError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn corrupt(path: impl AsRef<Path>, msg: impl Into<String>) -> Self {
        ForgeError::Corrupt {
            path: path.as_ref().to_path_buf(),
            msg: msg.into(),
        }
    }

    /// Wraps a core error raised while handling `path`. Malformed binary data
    /// counts as an I/O failure, everything else as invalid input.
    pub fn core_at(path: impl AsRef<Path>, e: forge_core::Error) -> Self {
        match e {
            forge_core::Error::Format(msg) => Self::corrupt(path, msg),
            other => ForgeError::Validation(format!("{}: {}", path.as_ref().display(), other)),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        ForgeError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            ForgeError::Validation(_) => 1,
            ForgeError::Io { .. } | ForgeError::Corrupt { .. } => 2,
            ForgeError::Internal(_) => 3,
            ForgeError::Stage { source, .. } => source.exit_code(),
        }
    }
}

impl From<forge_core::Error> for ForgeError {
    fn from(e: forge_core::Error) -> Self {
        match e {
            forge_core::Error::Format(msg) => ForgeError::Validation(format!("malformed data: {}", msg)),
            other => ForgeError::Validation(other.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(ForgeError::validation("x").exit_code(), 1);
        assert_eq!(ForgeError::io("a", io::Error::other("boom")).exit_code(), 2);
        assert_eq!(ForgeError::corrupt("a", "bad magic").exit_code(), 2);
        assert_eq!(ForgeError::Internal("x".into()).exit_code(), 3);
        let staged = ForgeError::corrupt("f.bin", "truncated").in_stage("index");
        assert_eq!(staged.exit_code(), 2);
        assert!(staged.to_string().starts_with("stage index failed"));
    }
}
