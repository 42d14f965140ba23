//! Output-file helpers: every artifact is written temp-then-rename so a
//! partial run never corrupts an existing golden file, and every file starts
//! with a comment line carrying the normalised config.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::config::NormalizedConfig;

/// `# <single-line JSON of the normalised config, seed included>`.
pub fn config_comment(config: &NormalizedConfig) -> String {
    format!("# {}\n", config.to_json())
}

/// Writes atomically: to `<name>.tmp` in the same directory, then rename.
pub fn write_atomic(path: &Path, contents: &str) -> io::Result<()> {
    let mut tmp: PathBuf = path.to_path_buf();
    let mut name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?
        .to_os_string();
    name.push(".tmp");
    tmp.set_file_name(name);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}

/// Writes `comment + body` atomically, creating the directory if needed.
pub fn write_artifact(
    dir: &Path,
    file_name: &str,
    config: &NormalizedConfig,
    body: &str,
) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(file_name);
    let mut contents = config_comment(config);
    contents.push_str(body);
    write_atomic(&path, &contents)?;
    Ok(path)
}
