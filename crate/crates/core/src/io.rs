//! On-disk formats.
//!
//! `ENTF1` files: the 5-byte magic `ENTF1`, a little-endian `u64` header
//! length, a JSON header, a little-endian `u64` value count, then that many
//! little-endian `f64` values.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{ConfigFunction, GibbsTable};
use crate::lattice::Region;

const MAGIC: &[u8; 5] = b"ENTF1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntfHeader {
    /// `"table"` or `"function"`.
    pub kind: String,
    pub region: Region,
    pub q: usize,
    pub model_hash: String,
    pub boundary_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_z: Option<f64>,
}

pub fn write_entf<W: Write>(mut w: W, header: &EntfHeader, values: &[f64]) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_entf<R: Read>(mut r: R) -> Result<(EntfHeader, Vec<f64>)> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Domain("not an ENTF1 file".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: EntfHeader = serde_json::from_slice(&json)?;
    r.read_exact(&mut len)?;
    let count = u64::from_le_bytes(len) as usize;
    let mut values = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut buf)?;
        values.push(f64::from_le_bytes(buf));
    }
    Ok((header, values))
}

fn table_header(table: &GibbsTable, kind: &str) -> EntfHeader {
    EntfHeader {
        kind: kind.into(),
        region: table.region().clone(),
        q: table.q(),
        model_hash: table.model_hash().into(),
        boundary_hash: table.boundary().hash(),
        log_z: (kind == "table").then(|| table.log_z()),
    }
}

pub fn save_table(path: &Path, table: &GibbsTable) -> Result<()> {
    write_entf(BufWriter::new(File::create(path)?), &table_header(table, "table"), table.probs())
}

/// A function saved with the domain tag of the table it lives on.
pub fn save_function(path: &Path, table: &GibbsTable, f: &ConfigFunction) -> Result<()> {
    table.check_len(f)?;
    write_entf(BufWriter::new(File::create(path)?), &table_header(table, "function"), f.values())
}

pub fn load(path: &Path) -> Result<(EntfHeader, Vec<f64>)> {
    read_entf(BufReader::new(File::open(path)?))
}

/// Appends one JSON object per line.
pub fn append_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a header row and equal-length numeric columns, preceded by a
/// `# comment` line when given.
pub fn write_csv_columns(path: &Path, comment: Option<&str>, names: &[&str], columns: &[&[f64]]) -> Result<()> {
    if names.len() != columns.len() || columns.windows(2).any(|w| w[0].len() != w[1].len()) {
        return Err(Error::Parameter("CSV columns must match names and share a length".into()));
    }
    let mut file = BufWriter::new(File::create(path)?);
    if let Some(c) = comment {
        writeln!(file, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(file);
    w.write_record(names)?;
    let rows = columns.first().map_or(0, |c| c.len());
    for i in 0..rows {
        w.write_record(columns.iter().map(|c| format!("{}", c[i])))?;
    }
    w.flush()?;
    Ok(())
}
