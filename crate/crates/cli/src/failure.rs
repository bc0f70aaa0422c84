//! Exit codes and file output.

use std::fmt;
use std::io::Write;
use std::path::Path;

use hierclass::config::ConfigError;
use hierclass::dataset::DatasetError;
use hierclass::hierarchy::HierarchyError;
use hierclass::learners::LearnerError;
use hierclass::metrics::MetricsError;
use hierclass::report::ReportError;
use hierclass::taxonomy::TaxonomyError;

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

/// An output file could not be written.
#[derive(Debug)]
pub struct WriteFailed(pub std::io::Error);

impl fmt::Display for WriteFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "write failed: {}", self.0)
    }
}

impl std::error::Error for WriteFailed {}

/// A request that makes no sense for the inputs, caught before any work.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn learner_code(e: &LearnerError) -> u8 {
    match e {
        LearnerError::EmptyGrid | LearnerError::InvalidHyper(_) | LearnerError::DimensionMismatch { .. } => {
            EXIT_VALIDATION
        }
        _ => EXIT_RUNTIME,
    }
}

fn hierarchy_code(e: &HierarchyError) -> u8 {
    match e {
        HierarchyError::Learner(l) => learner_code(l),
        HierarchyError::NoViews | HierarchyError::MissingModel(_) | HierarchyError::UnknownClass(_) => EXIT_RUNTIME,
        _ => EXIT_VALIDATION,
    }
}

/// Validation failures (bad input files, flags or config) exit 2, anything
/// that goes wrong while doing the work exits 3.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<HierarchyError>() {
            return hierarchy_code(e);
        }
        if let Some(e) = cause.downcast_ref::<LearnerError>() {
            return learner_code(e);
        }
        if cause.is::<WriteFailed>() {
            return EXIT_RUNTIME;
        }
        if cause.is::<Invalid>()
            || cause.is::<TaxonomyError>()
            || cause.is::<DatasetError>()
            || cause.is::<ConfigError>()
            || cause.is::<MetricsError>()
            || cause.is::<ReportError>()
            || cause.is::<serde_json::Error>()
            || cause.is::<std::io::Error>()
        {
            return EXIT_VALIDATION;
        }
    }
    EXIT_RUNTIME
}

/// Write through a temporary file in the target directory, then rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), WriteFailed> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(WriteFailed)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(WriteFailed)?;
    tmp.write_all(contents).map_err(WriteFailed)?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        // temporary files are private; outputs get ordinary permissions
        let mode = std::fs::metadata(path).map_or(0o644, |m| m.permissions().mode());
        tmp.as_file()
            .set_permissions(std::fs::Permissions::from_mode(mode))
            .map_err(WriteFailed)?;
    }
    tmp.as_file().sync_all().map_err(WriteFailed)?;
    tmp.persist(path).map_err(|e| WriteFailed(e.error))?;
    Ok(())
}
