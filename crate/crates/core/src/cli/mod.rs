//! Command-line surface: configuration, experiment orchestration and result files.

pub mod calibrate;
pub mod config;
pub mod experiment;
pub mod scaling;
pub mod verify;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::ExperimentConfig;
pub use experiment::{run_cells, CellResult, ExperimentRecord};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config file not found: {}", .0.display())]
    MissingConfig(PathBuf),

    #[error("{}:{line}: {message}", path.display())]
    Config { path: PathBuf, line: usize, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Learner(#[from] crate::Error),

    #[error("verification failed: {}", .0.join(", "))]
    VerificationFailed(Vec<String>),

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MissingConfig(_) | CliError::Config { .. } | CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

/// Overrides that the command line applies on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub label_cap: Option<u64>,
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = overrides.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &overrides.out {
        cfg.out = out.clone();
    }
    if let Some(cap) = overrides.label_cap {
        cfg.label_cap = Some(cap);
    }
    Ok(cfg)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

/// Serializes rows to CSV text headed by the `# schema=1` comment.
pub fn csv_with_schema<T: serde::Serialize>(rows: &[T]) -> Vec<u8> {
    let mut buf = b"# schema=1\n".to_vec();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for r in rows {
            w.serialize(r).expect("in-memory csv write");
        }
        w.flush().expect("in-memory csv flush");
    }
    buf
}
