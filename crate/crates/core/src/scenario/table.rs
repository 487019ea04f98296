//! Columnar result tables and their CSV / JSON persistence.
//!
//! Floats are written in the shortest decimal form that parses back to the
//! identical binary value. In CSV, integral floats keep a trailing `.0` so
//! that integer and float columns can be told apart on import. JSON has no
//! NaN or infinity; those are written as `null` and read back as NaN.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            _ => Err(Error::InvalidParameter(format!(
                "unknown output format {s:?} (csv or json)"
            ))),
        }
    }
}

fn nan_for_null<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    let v: Vec<Option<f64>> = Deserialize::deserialize(d)?;
    Ok(v.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "values", rename_all = "snake_case")]
pub enum ColumnData {
    F64(#[serde(deserialize_with = "nan_for_null")] Vec<f64>),
    I64(Vec<i64>),
    Text(Vec<String>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::F64(v) => v.len(),
            ColumnData::I64(v) => v.len(),
            ColumnData::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn cell(&self, i: usize) -> String {
        match self {
            ColumnData::F64(v) => format_f64(v[i]),
            ColumnData::I64(v) => v[i].to_string(),
            ColumnData::Text(v) => v[i].clone(),
        }
    }

    /// Bitwise equality, so NaN cells compare equal to themselves.
    pub fn bit_eq(&self, other: &ColumnData) -> bool {
        match (self, other) {
            (ColumnData::F64(a), ColumnData::F64(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => self == other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(flatten)]
    pub data: ColumnData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
}

impl Table {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            columns: Vec::new(),
        }
    }

    pub fn f64(mut self, name: &str, values: Vec<f64>) -> Self {
        self.columns.push(Column {
            name: name.into(),
            data: ColumnData::F64(values),
        });
        self
    }

    pub fn i64(mut self, name: &str, values: Vec<i64>) -> Self {
        self.columns.push(Column {
            name: name.into(),
            data: ColumnData::I64(values),
        });
        self
    }

    pub fn text(mut self, name: &str, values: Vec<String>) -> Self {
        self.columns.push(Column {
            name: name.into(),
            data: ColumnData::Text(values),
        });
        self
    }

    /// Two-column `quantity, value` table.
    pub fn key_values(name: &str, rows: &[(&str, f64)]) -> Self {
        Table::new(name)
            .text("quantity", rows.iter().map(|r| r.0.to_string()).collect())
            .f64("value", rows.iter().map(|r| r.1).collect())
    }

    /// Look up `key` in a table built by [`Table::key_values`].
    pub fn value(&self, key: &str) -> Option<f64> {
        let ColumnData::Text(keys) = self.column("quantity")? else {
            return None;
        };
        let i = keys.iter().position(|k| k == key)?;
        self.f64_column("value").map(|v| v[i])
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.data.len())
    }

    pub fn column(&self, name: &str) -> Option<&ColumnData> {
        self.columns.iter().find(|c| c.name == name).map(|c| &c.data)
    }

    pub fn f64_column(&self, name: &str) -> Option<&[f64]> {
        match self.column(name)? {
            ColumnData::F64(v) => Some(v),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_rows();
        if let Some(c) = self.columns.iter().find(|c| c.data.len() != n) {
            return Err(Error::InvalidParameter(format!(
                "table {}: column {} has {} rows, expected {n}",
                self.name,
                c.name,
                c.data.len()
            )));
        }
        Ok(())
    }

    pub fn bit_eq(&self, other: &Table) -> bool {
        self.name == other.name
            && self.columns.len() == other.columns.len()
            && self
                .columns
                .iter()
                .zip(&other.columns)
                .all(|(a, b)| a.name == b.name && a.data.bit_eq(&b.data))
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        self.validate()?;
        let mut out = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| Error::InvalidParameter(format!("CSV write failed for {}: {e}", self.name));
        out.write_record(self.columns.iter().map(|c| c.name.as_str()))
            .map_err(csv_err)?;
        for i in 0..self.n_rows() {
            out.write_record(self.columns.iter().map(|c| c.data.cell(i)))
                .map_err(csv_err)?;
        }
        out.flush()
            .map_err(|e| Error::InvalidParameter(format!("CSV flush failed: {e}")))?;
        Ok(())
    }

    /// Read a CSV written by [`Table::write_csv`], inferring column types.
    pub fn read_csv<R: std::io::Read>(name: &str, r: R) -> Result<Table> {
        let mut rd = csv::Reader::from_reader(r);
        let bad = |e: csv::Error| Error::InvalidParameter(format!("CSV read failed for {name}: {e}"));
        let headers: Vec<String> = rd.headers().map_err(bad)?.iter().map(str::to_string).collect();
        let mut cells: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
        for rec in rd.records() {
            let rec = rec.map_err(bad)?;
            for (col, v) in cells.iter_mut().zip(rec.iter()) {
                col.push(v.to_string());
            }
        }
        let columns = headers
            .into_iter()
            .zip(cells)
            .map(|(name, raw)| Column {
                name,
                data: infer_column(raw),
            })
            .collect();
        Ok(Table {
            name: name.to_string(),
            columns,
        })
    }
}

fn looks_float(s: &str) -> bool {
    s.contains(['.', 'e', 'E']) || matches!(s, "NaN" | "inf" | "-inf")
}

fn infer_column(raw: Vec<String>) -> ColumnData {
    if raw.is_empty() {
        return ColumnData::F64(Vec::new());
    }
    if raw.iter().all(|s| !looks_float(s) && s.parse::<i64>().is_ok()) {
        return ColumnData::I64(raw.iter().map(|s| s.parse().expect("checked")).collect());
    }
    let floats: Option<Vec<f64>> = raw.iter().map(|s| s.parse::<f64>().ok()).collect();
    match floats {
        Some(v) if raw.iter().all(|s| looks_float(s) || s.parse::<i64>().is_ok()) => ColumnData::F64(v),
        _ => ColumnData::Text(raw),
    }
}

/// Shortest round-trip decimal; scientific notation outside [1e-5, 1e16).
pub fn format_f64(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let a = v.abs();
    if a != 0.0 && !(1e-5..1e16).contains(&a) {
        return format!("{v:e}");
    }
    let s = format!("{v}");
    if s.contains('.') {
        s
    } else {
        s + ".0"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool_version: String,
    /// Wall-clock creation time, seconds since the Unix epoch. Not part of
    /// the deterministic output.
    pub created_unix_s: u64,
    pub protocol: String,
    pub stage: String,
    pub warnings: Vec<String>,
    /// Canonical echo of the scenario that produced the tables.
    pub scenario: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub schema_version: u32,
    pub scenario_hash: String,
    pub metadata: Metadata,
    pub tables: Vec<Table>,
}

impl ResultBundle {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Tables and hash agree bit for bit; metadata is ignored.
    pub fn same_results(&self, other: &ResultBundle) -> bool {
        self.scenario_hash == other.scenario_hash
            && self.tables.len() == other.tables.len()
            && self.tables.iter().zip(&other.tables).all(|(a, b)| a.bit_eq(b))
    }

    /// Write into `dir` (created if needed). CSV: one `<table>.csv` per table
    /// plus `metadata.json`; JSON: a single `result.json`.
    pub fn export(&self, dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>> {
        let io = |p: &Path| {
            let p = p.display().to_string();
            move |e: std::io::Error| Error::Io { path: p, source: e }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let mut written = Vec::new();
        match format {
            OutputFormat::Csv => {
                for t in &self.tables {
                    let path = dir.join(format!("{}.csv", t.name));
                    let f = fs::File::create(&path).map_err(io(&path))?;
                    t.write_csv(std::io::BufWriter::new(f))?;
                    written.push(path);
                }
                #[derive(Serialize)]
                struct Envelope<'a> {
                    schema_version: u32,
                    scenario_hash: &'a str,
                    metadata: &'a Metadata,
                    tables: Vec<&'a str>,
                }
                let env = Envelope {
                    schema_version: self.schema_version,
                    scenario_hash: &self.scenario_hash,
                    metadata: &self.metadata,
                    tables: self.tables.iter().map(|t| t.name.as_str()).collect(),
                };
                let path = dir.join("metadata.json");
                let text = serde_json::to_string_pretty(&env).expect("metadata serializes");
                fs::write(&path, text).map_err(io(&path))?;
                written.push(path);
            }
            OutputFormat::Json => {
                let path = dir.join("result.json");
                let text = serde_json::to_string_pretty(self).expect("bundle serializes");
                fs::write(&path, text).map_err(io(&path))?;
                written.push(path);
            }
        }
        Ok(written)
    }

    pub fn read_json(path: &Path) -> Result<ResultBundle> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Table {
        Table::new("t")
            .f64(
                "x",
                vec![
                    0.1,
                    1.0 / 3.0,
                    1e-300,
                    -2.5e17,
                    3.0,
                    0.0,
                    f64::MIN_POSITIVE,
                    12345.678901234567,
                ],
            )
            .i64("n", vec![1, -2, 3, 4, 5, 6, 7, 8])
            .text("s", (0..8).map(|i| format!("row {i}, quoted")).collect())
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let t = sample();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = Table::read_csv("t", buf.as_slice()).unwrap();
        assert!(back.bit_eq(&t), "{back:?}");
    }

    #[test]
    fn empty_table_is_header_only() {
        let t = Table::new("e").f64("a", vec![]).f64("b", vec![]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "a,b\n");
    }

    #[test]
    fn non_finite_floats() {
        let t = Table::new("n").f64("v", vec![f64::NAN, f64::INFINITY, f64::NEG_INFINITY, 1.0]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert!(Table::read_csv("n", buf.as_slice()).unwrap().bit_eq(&t));
    }

    #[test]
    fn ragged_tables_rejected() {
        let t = Table::new("r").f64("a", vec![1.0]).f64("b", vec![]);
        assert!(t.write_csv(Vec::new()).is_err());
    }

    #[test]
    fn formatting() {
        assert_eq!(format_f64(3.0), "3.0");
        assert_eq!(format_f64(-0.0), "-0.0");
        assert_eq!(format_f64(1e-7), "1e-7");
        assert_eq!(format_f64(0.25), "0.25");
    }
}
