use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use sprinql::Error;

pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;
pub const EXIT_PARTIAL: u8 = 3;

/// An error together with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub type CliResult<T> = std::result::Result<T, Failure>;

impl Failure {
    pub fn validation(msg: impl Display) -> Self {
        Failure {
            code: EXIT_VALIDATION,
            error: anyhow!("{msg}"),
        }
    }

    pub fn runtime(error: anyhow::Error) -> Self {
        Failure {
            code: EXIT_RUNTIME,
            error,
        }
    }
}

/// Bad configuration or malformed inputs are validation failures; everything that goes
/// wrong while computing is a runtime failure.
impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_)
            | Error::Shape(_)
            | Error::Parse { .. }
            | Error::InvalidMdp(_)
            | Error::InvalidPolicy(_)
            | Error::EmptyLevel(_)
            | Error::Domain(_) => EXIT_VALIDATION,
            _ => EXIT_RUNTIME,
        };
        Failure {
            code,
            error: e.into(),
        }
    }
}

pub trait CoreContext<T> {
    /// Attaches `what` to a core error, keeping its exit code.
    fn ctx(self, what: impl Display) -> CliResult<T>;
}

impl<T> CoreContext<T> for sprinql::Result<T> {
    fn ctx(self, what: impl Display) -> CliResult<T> {
        self.map_err(|e| {
            let f = Failure::from(e);
            Failure {
                code: f.code,
                error: f.error.context(what.to_string()),
            }
        })
    }
}

/// Reads an input file, reporting a missing file as a validation error.
pub fn read_input(path: &Path) -> CliResult<String> {
    if !path.exists() {
        return Err(Failure::validation(format!("input file {} does not exist", path.display())));
    }
    std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::runtime)
}

/// Collects files in memory and writes them only once the whole command succeeded.
#[derive(Debug)]
pub struct Outputs {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Self {
        Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, contents: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), contents.into()));
    }

    /// Writes every file through a temporary file in the target directory followed by a
    /// rename, so readers never see a partially written file.
    pub fn commit(self) -> CliResult<Vec<PathBuf>> {
        std::fs::create_dir_all(&self.dir)
            .with_context(|| format!("creating {}", self.dir.display()))
            .map_err(Failure::runtime)?;
        let mut written = Vec::new();
        for (name, bytes) in self.files {
            let target = self.dir.join(&name);
            let persist = || -> anyhow::Result<()> {
                let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
                tmp.write_all(&bytes)?;
                tmp.as_file().sync_all()?;
                tmp.persist(&target)?;
                Ok(())
            };
            persist()
                .with_context(|| format!("writing {}", target.display()))
                .map_err(Failure::runtime)?;
            written.push(target);
        }
        Ok(written)
    }
}
