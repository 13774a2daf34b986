use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// First line of every file this crate writes.
pub const FORMAT_HEADER: &str = "# volcal-format v1";

/// Splits off and checks the version line, returning the remaining body.
pub fn strip_header<'a>(text: &'a str, what: &str) -> Result<&'a str> {
    let (first, rest) = match text.split_once('\n') {
        Some((first, rest)) => (first, rest),
        None => (text, ""),
    };
    let first = first.trim_end_matches('\r');
    if first == FORMAT_HEADER {
        return Ok(rest);
    }
    if first.starts_with("# volcal-format") {
        return Err(Error::VersionMismatch(format!("{what}: unsupported format line {first:?}")));
    }
    Err(Error::VersionMismatch(format!("{what}: missing format line {FORMAT_HEADER:?}")))
}

pub fn write_with_header(path: &Path, body: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("partial");
    {
        let mut file = fs::File::create(&tmp)?;
        writeln!(file, "{FORMAT_HEADER}")?;
        file.write_all(body.as_bytes())?;
        if !body.ends_with('\n') {
            writeln!(file)?;
        }
        file.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_with_header(path: &Path, what: &str) -> Result<String> {
    let text = fs::read_to_string(path)?;
    strip_header(&text, what).map(str::to_owned)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_with_header(path, &serde_json::to_string_pretty(value)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let body = read_with_header(path, what)?;
    serde_json::from_str(&body).map_err(|e| Error::VersionMismatch(format!("{what}: {e}")))
}
