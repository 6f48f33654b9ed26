use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::Serialize;
use spa_core::linalg::Matrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// Shortest decimal that parses back to the same `f64`; infinities are `inf`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    format!("{x:?}")
}

pub fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .with_context(|| format!("not a number: {s:?}"))
}

/// Headerless CSV, one matrix row per line.
pub fn matrix_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_matrix_csv(text: &str) -> Result<Matrix> {
    let rows = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(parse_f64).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        bail!("empty matrix file");
    }
    Ok(Matrix::from_rows(&rows)?)
}

pub fn matrix_json(m: &Matrix) -> Result<String> {
    Ok(serde_json::to_string(&m.to_rows())? + "\n")
}

pub fn parse_matrix_json(text: &str) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = serde_json::from_str(text)?;
    Ok(Matrix::from_rows(&rows)?)
}

/// CSV with a header row; cells are already formatted.
pub fn table_csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub struct OutputDir {
    root: PathBuf,
    format: Format,
}

impl OutputDir {
    pub fn create(root: &Path, format: Format) -> Result<Self> {
        fs::create_dir_all(root)
            .with_context(|| format!("cannot create output directory {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            format,
        })
    }

    pub fn format(&self) -> Format {
        self.format
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }

    pub fn write_matrix(&self, stem: &str, m: &Matrix) -> Result<PathBuf> {
        let text = match self.format {
            Format::Csv => matrix_csv(m),
            Format::Json => matrix_json(m)?,
        };
        self.write_text(&format!("{stem}.{}", self.format.extension()), &text)
    }

    /// Table as CSV with header, or as a JSON array of objects keyed by column.
    pub fn write_table(
        &self,
        stem: &str,
        header: &[&str],
        rows: &[Vec<String>],
    ) -> Result<PathBuf> {
        let text = match self.format {
            Format::Csv => table_csv(header, rows),
            Format::Json => {
                let records: Vec<serde_json::Map<String, serde_json::Value>> = rows
                    .iter()
                    .map(|row| {
                        header
                            .iter()
                            .zip(row)
                            .map(|(k, v)| (k.to_string(), cell_json(v)))
                            .collect()
                    })
                    .collect();
                serde_json::to_string_pretty(&records)? + "\n"
            }
        };
        self.write_text(&format!("{stem}.{}", self.format.extension()), &text)
    }
}

// Numbers stay numbers; `inf` and other text stay strings.
fn cell_json(cell: &str) -> serde_json::Value {
    if let Ok(n) = cell.parse::<i64>() {
        return n.into();
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => {
            serde_json::Number::from_f64(v).map_or_else(|| cell.into(), Into::into)
        }
        _ if cell.is_empty() => serde_json::Value::Null,
        _ => cell.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Success,
    ValidationFailed,
    ConfigError,
    NumericFailure,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub version: &'static str,
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub files: Vec<String>,
    pub timings: BTreeMap<String, f64>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            config: serde_json::Value::Null,
            seed,
            status: Status::Success,
            error: None,
            files: Vec::new(),
            timings: BTreeMap::new(),
        }
    }

    pub fn record(&mut self, path: &Path) {
        if let Some(name) = path.file_name() {
            self.files.push(name.to_string_lossy().into_owned());
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(self)? + "\n",
        )?;
        Ok(())
    }
}
