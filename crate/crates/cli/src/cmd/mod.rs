pub mod analyze;
pub mod compare;
pub mod patch;
pub mod train;
pub mod verify;

use std::fs;
use std::path::Path;

use crate::error::CliResult;

pub(crate) fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, text)?;
    Ok(())
}
