//! Artifact files: CSVs with a one-line provenance comment, TOML documents.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Provenance stamped on every artifact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub seed: Option<u64>,
    pub params_hash: String,
}

impl Provenance {
    /// Hashes the canonical text of everything that determines a run.
    pub fn new(seed: Option<u64>, canonical_params: &str) -> Self {
        Self {
            seed,
            params_hash: hex::encode(Sha256::digest(canonical_params.as_bytes())),
        }
    }

    pub fn comment_line(&self) -> String {
        let seed = self.seed.map_or_else(|| "none".to_string(), |s| s.to_string());
        format!(
            "# fedalloc {} seed={seed} params_sha256={}",
            fedalloc::ARTIFACT_VERSION,
            self.params_hash
        )
    }
}

pub struct OutputDir {
    root: PathBuf,
    provenance: Provenance,
}

impl OutputDir {
    pub fn create(root: &Path, provenance: Provenance) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            provenance,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Writes `rows` as CSV after the provenance comment.
    pub fn write_csv<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{}", self.provenance.comment_line()).map_err(|e| CliError::io(&path, e))?;
        let mut writer = csv::Writer::from_writer(out);
        for row in rows {
            writer
                .serialize(row)
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        }
        writer.flush().map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    /// Writes a TOML document preceded by the provenance comment.
    pub fn write_document(&self, name: &str, body: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let text = format!("{}\n{body}", self.provenance.comment_line());
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

/// Reads a CSV written by [`OutputDir::write_csv`], skipping the comment.
pub fn read_csv_body(path: &Path) -> Result<String, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        a: u32,
        b: f64,
    }

    #[test]
    fn csv_has_comment_then_header() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutputDir::create(dir.path(), Provenance::new(Some(7), "x")).unwrap();
        let path = out.write_csv("t.csv", &[Row { a: 1, b: 0.5 }]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        let first = lines.next().unwrap();
        assert!(first.starts_with("# fedalloc "));
        assert!(first.contains("seed=7"));
        assert!(first.contains(&hex::encode(Sha256::digest(b"x"))));
        assert_eq!(lines.next(), Some("a,b"));
        assert_eq!(lines.next(), Some("1,0.5"));
        assert_eq!(read_csv_body(&path).unwrap(), "a,b\n1,0.5");
    }
}
