//! File helpers shared by the artifact formats: `#key=value` header lines
//! and atomic replacement of output files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Ordered `#key=value` lines at the top of a text artifact.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Header {
    entries: Vec<(String, String)>,
}

impl Header {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.set(key, value);
        self
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn write_to(&self, out: &mut String) {
        for (k, v) in &self.entries {
            out.push('#');
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
    }

    /// Splits leading `#` lines off `text`. Returns the header, the remaining
    /// body, and the number of header lines consumed.
    pub fn split(text: &str) -> Result<(Header, &str, usize), String> {
        let mut header = Header::new();
        let mut rest = text;
        let mut lines = 0;
        while let Some(stripped) = rest.strip_prefix('#') {
            let (line, tail) = match stripped.find('\n') {
                Some(pos) => (&stripped[..pos], &stripped[pos + 1..]),
                None => (stripped, ""),
            };
            lines += 1;
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("header line {lines} lacks '='"))?;
            header.entries.push((k.to_string(), v.to_string()));
            rest = tail;
        }
        Ok((header, rest, lines))
    }
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_sibling(path);
    let result = (|| {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    path.with_file_name(format!(".{name}.tmp{}", std::process::id()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_split_and_write() {
        let text = "#a=1\n#b=x=y\nbody\n";
        let (h, body, n) = Header::split(text).unwrap();
        assert_eq!(n, 2);
        assert_eq!(h.get("a"), Some("1"));
        assert_eq!(h.get("b"), Some("x=y"));
        assert_eq!(body, "body\n");
        let mut out = String::new();
        h.write_to(&mut out);
        out.push_str(body);
        assert_eq!(out, text);
    }

    #[test]
    fn header_without_equals_is_rejected() {
        assert!(Header::split("#oops\n").is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
