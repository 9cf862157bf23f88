use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::args::{Common, Format};
use crate::AppError;

pub const OUT_DIR_VAR: &str = "GLMCAL_OUT_DIR";

/// Where a command writes: an explicit `--out`, else `$GLMCAL_OUT_DIR/<command>.<ext>`,
/// else stdout.
pub fn resolve(out: Option<&Path>, command: &str, format: Format) -> Option<PathBuf> {
    let dir = std::env::var_os(OUT_DIR_VAR).map(PathBuf::from);
    match (out, dir) {
        (Some(p), Some(d)) if p.is_relative() => Some(d.join(p)),
        (Some(p), _) => Some(p.to_path_buf()),
        (None, Some(d)) => Some(d.join(format!("{command}.{}", extension(format)))),
        (None, None) => None,
    }
}

fn extension(format: Format) -> &'static str {
    match format {
        Format::Csv => "csv",
        Format::Json => "json",
    }
}

pub fn open(path: Option<&Path>) -> Result<Box<dyn Write>, AppError> {
    match path {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            Ok(Box::new(BufWriter::new(File::create(p)?)))
        }
        None => Ok(Box::new(io::stdout().lock())),
    }
}

/// Output target of one command run.
pub struct Target {
    pub format: Format,
    pub path: Option<PathBuf>,
}

impl Target {
    pub fn new(common: &Common, command: &str, default: Format) -> Self {
        let format = common.format.unwrap_or(default);
        Self {
            format,
            path: resolve(common.out.as_deref(), command, format),
        }
    }

    pub fn writer(&self) -> Result<Box<dyn Write>, AppError> {
        open(self.path.as_deref())
    }

    /// Sibling file `<stem>_<suffix>.csv` next to the main output, if any.
    pub fn sibling(&self, suffix: &str) -> Option<PathBuf> {
        let p = self.path.as_ref()?;
        let stem = p.file_stem()?.to_string_lossy();
        Some(p.with_file_name(format!("{stem}_{suffix}.csv")))
    }

    pub fn write_json(&self, value: &Value) -> Result<(), AppError> {
        let mut w = self.writer()?;
        serde_json::to_writer_pretty(&mut w, value)
            .map_err(|e| AppError::Usage(format!("json: {e}")))?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}
