//! Tabular output in CSV or JSON Lines, each file opening with provenance
//! metadata (config hash, seed, tool version).

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde_json::{json, Map, Value as Json};

pub const TOOL_VERSION: &str = concat!("tbqkd ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Jsonl => "jsonl",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    UInt(u64),
    Float(f64),
    Text(String),
    Missing,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::UInt(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::UInt(v as u64)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Missing, Into::into)
    }
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::UInt(v) => v.to_string(),
            Cell::Float(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Missing => String::new(),
        }
    }

    fn json(&self) -> Json {
        match self {
            Cell::Int(v) => json!(v),
            Cell::UInt(v) => json!(v),
            Cell::Float(v) => json!(v),
            Cell::Text(s) => json!(s),
            Cell::Missing => Json::Null,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Self {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }
}

/// Provenance written at the top of every output file.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub command: &'static str,
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn comments(&self) -> Vec<(String, String)> {
        vec![
            ("tool".into(), TOOL_VERSION.into()),
            ("command".into(), self.command.into()),
            ("config_sha256".into(), self.config_sha256.clone()),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}

pub fn render(table: &Table, prov: &Provenance, format: Format) -> String {
    let mut out = String::new();
    match format {
        Format::Csv => {
            for (k, v) in prov.comments() {
                let _ = writeln!(out, "# {k}: {v}");
            }
            let _ = writeln!(out, "{}", table.columns.join(","));
            for row in &table.rows {
                let cells: Vec<String> = row.iter().map(Cell::csv).collect();
                let _ = writeln!(out, "{}", cells.join(","));
            }
        }
        Format::Jsonl => {
            let meta: Map<String, Json> = prov.comments().into_iter().map(|(k, v)| (k, Json::String(v))).collect();
            let _ = writeln!(out, "{}", json!({ "meta": meta }));
            for row in &table.rows {
                let obj: Map<String, Json> = table
                    .columns
                    .iter()
                    .zip(row)
                    .map(|(c, v)| (c.to_string(), v.json()))
                    .collect();
                let _ = writeln!(out, "{}", Json::Object(obj));
            }
        }
    }
    out
}

pub struct OutDir {
    pub root: PathBuf,
    pub format: Format,
}

impl OutDir {
    pub fn create(root: &Path, format: Format) -> io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            format,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes `table` as `<stem>.<csv|jsonl>` and returns the path.
    pub fn table(&self, stem: &str, table: &Table, prov: &Provenance) -> io::Result<PathBuf> {
        let path = self.path(&format!("{stem}.{}", self.format.extension()));
        fs::write(&path, render(table, prov, self.format))?;
        Ok(path)
    }

    pub fn writer(&self, name: &str) -> io::Result<(PathBuf, BufWriter<fs::File>)> {
        let path = self.path(name);
        let f = fs::File::create(&path)?;
        Ok((path, BufWriter::new(f)))
    }
}

pub fn flush(mut w: BufWriter<fs::File>) -> io::Result<()> {
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prov() -> Provenance {
        Provenance {
            command: "test",
            config_sha256: "ab".into(),
            seed: 7,
        }
    }

    #[test]
    fn csv_layout() {
        let mut t = Table::new(&["a", "b", "c"]);
        t.push(vec![1u64.into(), 0.25.into(), Cell::Missing]);
        let s = render(&t, &prov(), Format::Csv);
        assert_eq!(
            s,
            format!("# tool: {TOOL_VERSION}\n# command: test\n# config_sha256: ab\n# seed: 7\na,b,c\n1,0.25,\n")
        );
    }

    #[test]
    fn jsonl_layout() {
        let mut t = Table::new(&["a", "q"]);
        t.push(vec!["x".into(), Cell::from(None::<f64>)]);
        let s = render(&t, &prov(), Format::Jsonl);
        let lines: Vec<&str> = s.lines().collect();
        assert!(lines[0].contains("\"seed\":\"7\""));
        assert_eq!(lines[1], "{\"a\":\"x\",\"q\":null}");
    }
}
