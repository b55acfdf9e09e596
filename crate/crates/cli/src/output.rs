//! Report output. Everything is serialized in memory first, then written so
//! that a failed run never leaves a half-written table behind.

use std::fs;
use std::io::Write;
use std::path::Path;

use lmb_core::io::{write_report, Report, ReportFormat};

pub fn write(report: &Report, format: ReportFormat, out: &Path) -> lmb_core::Result<()> {
    let files = write_report(report, format)?;
    if out.exists() {
        // Replace files one at a time, each via a temp file and rename.
        for (name, bytes) in &files {
            let mut tmp = tempfile::NamedTempFile::new_in(out)?;
            tmp.write_all(bytes)?;
            tmp.persist(out.join(name)).map_err(|e| e.error)?;
        }
        return Ok(());
    }
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(parent)?;
    let staging = tempfile::Builder::new().prefix(".lmb-out-").tempdir_in(parent)?;
    for (name, bytes) in &files {
        fs::write(staging.path().join(name), bytes)?;
    }
    let staged = staging.keep();
    fs::rename(&staged, out).inspect_err(|_| {
        let _ = fs::remove_dir_all(&staged);
    })?;
    Ok(())
}
