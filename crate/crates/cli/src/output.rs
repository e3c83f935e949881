//! File output: one writer per command, no silent overwrites.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use respa::{LabeledSample, Vector};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Writes files under a root directory. Rewriting a file with identical
/// bytes is a no-op; different bytes need `force`.
#[derive(Debug)]
pub struct OutputWriter {
    root: PathBuf,
    force: bool,
    written: usize,
    unchanged: usize,
}

impl OutputWriter {
    pub fn new(root: impl Into<PathBuf>, force: bool) -> Self {
        OutputWriter {
            root: root.into(),
            force,
            written: 0,
            unchanged: 0,
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.root.join(rel)
    }

    /// Fails if any of `rels` exists with contents other than the paired
    /// bytes. Lets a command check everything before writing anything.
    pub fn preflight<'a>(&self, files: impl IntoIterator<Item = (&'a Path, &'a [u8])>) -> CliResult<()> {
        if self.force {
            return Ok(());
        }
        for (rel, bytes) in files {
            let path = self.path(rel);
            if let Ok(existing) = fs::read(&path) {
                if existing != bytes {
                    return Err(CliError::WouldOverwrite { path });
                }
            }
        }
        Ok(())
    }

    pub fn write(&mut self, rel: impl AsRef<Path>, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.path(rel);
        match fs::read(&path) {
            Ok(existing) if existing == bytes => {
                self.unchanged += 1;
                return Ok(path);
            }
            Ok(_) if !self.force => return Err(CliError::WouldOverwrite { path }),
            _ => {}
        }
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.written += 1;
        Ok(path)
    }

    /// `(files written, files already up to date)`.
    pub fn counts(&self) -> (usize, usize) {
        (self.written, self.unchanged)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            write!(s, "{b:02x}").unwrap();
            s
        })
}

pub fn read(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// `index,label,x0,...` with round-trip float formatting.
pub fn vectors_csv(rows: impl IntoIterator<Item = (usize, usize, Vector)>, dim: usize) -> String {
    let mut out = String::from("index,label");
    for j in 0..dim {
        write!(out, ",x{j}").unwrap();
    }
    out.push('\n');
    for (i, label, x) in rows {
        write!(out, "{i},{label}").unwrap();
        for v in x.iter() {
            write!(out, ",{v:?}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Parses [`vectors_csv`] output.
pub fn parse_vectors_csv(path: &Path, text: &str) -> CliResult<Vec<(usize, usize, Vector)>> {
    let malformed = |line: usize, message: String| CliError::Malformed {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let dim = match lines.next() {
        Some((_, header)) if header.starts_with("index,label") => header.split(',').count() - 2,
        _ => return Err(malformed(1, "expected an `index,label,...` header".into())),
    };
    let mut rows = Vec::new();
    for (n, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 2 {
            return Err(malformed(
                n + 1,
                format!("expected {} fields, found {}", dim + 2, fields.len()),
            ));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|e| malformed(n + 1, format!("`{s}`: {e}")));
        let x = fields[2..]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| malformed(n + 1, format!("`{s}`: {e}"))))
            .collect::<CliResult<Vector>>()?;
        rows.push((int(fields[0])?, int(fields[1])?, x));
    }
    Ok(rows)
}

pub fn samples_to_rows(samples: &[LabeledSample]) -> Vec<(usize, usize, Vector)> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| (i, s.label(), s.x().clone()))
        .collect()
}
