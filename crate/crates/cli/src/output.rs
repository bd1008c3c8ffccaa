//! Artifact writers: CSV with a comment header and JSON reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// One CSV cell.
pub enum Cell {
    F(f64),
    U(usize),
    S(String),
}

impl Cell {
    fn render(&self, out: &mut String) {
        match self {
            Cell::F(v) if v.is_nan() => out.push_str("nan"),
            Cell::F(v) if v.is_infinite() => out.push_str(if *v > 0.0 { "inf" } else { "-inf" }),
            // 17 significant digits round-trip every f64
            Cell::F(v) => write!(out, "{v:.16e}").unwrap(),
            Cell::U(v) => write!(out, "{v}").unwrap(),
            Cell::S(v) => out.push_str(v),
        }
    }
}

/// Output directory plus the provenance stamped on every artifact.
pub struct Artifacts {
    pub dir: PathBuf,
    pub command: String,
    pub config: Value,
    pub config_hash: String,
    pub written: Vec<String>,
}

impl Artifacts {
    pub fn new(dir: &Path, command: &str, config: Value, config_hash: String) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            config,
            config_hash,
            written: Vec::new(),
        })
    }

    fn stamp(&self) -> Value {
        json!({
            "tool": "formstab",
            "version": VERSION,
            "command": self.command,
            "config_sha256": self.config_hash,
        })
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<Cell>>) -> std::io::Result<()> {
        let mut text = format!(
            "# formstab {VERSION} {} config_sha256={}\n{}\n",
            self.command,
            self.config_hash,
            header.join(",")
        );
        for row in rows {
            debug_assert_eq!(row.len(), header.len());
            for (i, cell) in row.iter().enumerate() {
                if i > 0 {
                    text.push(',');
                }
                cell.render(&mut text);
            }
            text.push('\n');
        }
        self.write(name, &text)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, body: &T) -> std::io::Result<()> {
        let doc = json!({ "metadata": self.stamp(), "report": body });
        let text = serde_json::to_string_pretty(&doc).expect("report serializes") + "\n";
        self.write(name, &text)
    }

    /// `metadata.json`, listing the artifacts written so far.
    pub fn finish(mut self) -> std::io::Result<Vec<String>> {
        let mut meta = self.stamp();
        meta["config"] = self.config.clone();
        meta["artifacts"] = json!(self.written);
        let text = serde_json::to_string_pretty(&meta).expect("metadata serializes") + "\n";
        self.write("metadata.json", &text)?;
        Ok(self.written)
    }

    fn write(&mut self, name: &str, text: &str) -> std::io::Result<()> {
        fs::write(self.dir.join(name), text)?;
        self.written.push(name.to_string());
        Ok(())
    }
}

/// Non-finite floats become strings so JSON reports stay valid.
pub fn finite_or_label(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v.is_nan() {
        json!("nan")
    } else if v > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}
