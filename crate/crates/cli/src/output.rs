//! Artifact writers: JSON documents, CSV tables and field dumps.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use elastodiel::boxfem::BoxGrid;
use elastodiel::torus::Field;

use crate::config::FieldFormat;
use crate::error::CliError;

/// Hex SHA-256 of the raw configuration text.
pub fn config_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Identifies the run that produced a document.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub subcommand: String,
    pub version: String,
}

pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let mut w = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(path)
    }

    pub fn csv<R: Serialize>(&self, name: &str, rows: &[R]) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(path)
    }

    /// CSV with an explicit header, for tables whose width depends on the run.
    pub fn table(&self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(path)
    }

    pub fn field(&self, name: &str, field: &Field, format: FieldFormat) -> Result<PathBuf, CliError> {
        fs::create_dir_all(self.path("fields"))?;
        let ext = match format {
            FieldFormat::Csv => "csv",
            FieldFormat::Binary => "bin",
        };
        let path = self.path(&format!("fields/{name}.{ext}"));
        let w = BufWriter::new(File::create(&path)?);
        let res = match format {
            FieldFormat::Csv => field.write_csv(w),
            FieldFormat::Binary => field.write_binary(w),
        };
        res.map_err(|e| CliError::Output(e.to_string()))?;
        Ok(path)
    }

    /// Nodal values on a box grid: node coordinates followed by the
    /// components (component c of node i at `c * nodes + i`).
    pub fn nodal(&self, name: &str, grid: &BoxGrid, values: &[f64], labels: &[&str]) -> Result<PathBuf, CliError> {
        fs::create_dir_all(self.path("fields"))?;
        let path = self.path(&format!("fields/{name}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        let nn = grid.node_count();
        let mut header: Vec<String> = (0..grid.dim).map(|a| format!("x{a}")).collect();
        header.extend(labels.iter().map(|s| s.to_string()));
        w.write_record(&header)?;
        let mut x = vec![0.0; grid.dim];
        for i in 0..nn {
            grid.node_position(i, &mut x);
            let mut rec: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            rec.extend((0..labels.len()).map(|c| values[c * nn + i].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(path)
    }
}
