//! Raw and encoded dataset containers plus delimited-file IO.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// A parsed delimited file: header names plus rows of optional strings.
/// Empty fields are nulls.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawDataset {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<String>>>,
}

impl RawDataset {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column<'a>(&'a self, idx: usize) -> impl Iterator<Item = Option<&'a str>> {
        self.rows.iter().map(move |r| r[idx].as_deref())
    }
}

/// Read a comma- or tab-separated file with a header line. The delimiter is
/// sniffed from the header: a tab anywhere selects tabs, otherwise commas.
pub fn read_delimited(path: &Path) -> Result<RawDataset> {
    let file = File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    read_delimited_from(BufReader::new(file))
}

pub fn read_delimited_from(mut reader: impl Read) -> Result<RawDataset> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let header_end = text.find('\n').unwrap_or(text.len());
    let delim = if text[..header_end].contains('\t') {
        b'\t'
    } else {
        b','
    };

    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delim)
        .has_headers(true)
        .from_reader(text.as_bytes());
    let columns: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Data {
            row: 1,
            msg: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();

    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let row = e
                .position()
                .map(|p| p.line() as usize)
                .unwrap_or(rows.len() + 2);
            Error::Data {
                row,
                msg: e.to_string(),
            }
        })?;
        rows.push(
            rec.iter()
                .map(|f| if f.is_empty() { None } else { Some(f.to_string()) })
                .collect(),
        );
    }
    Ok(RawDataset { columns, rows })
}

/// Write a dataset as CSV; nulls become empty fields.
pub fn write_delimited(path: &Path, data: &RawDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(&data.columns)
        .map_err(|e| Error::Data { row: 1, msg: e.to_string() })?;
    for (i, row) in data.rows.iter().enumerate() {
        w.write_record(row.iter().map(|f| f.as_deref().unwrap_or("")))
            .map_err(|e| Error::Data {
                row: i + 2,
                msg: e.to_string(),
            })?;
    }
    w.flush()?;
    Ok(())
}

/// Write already-formatted lines, used for prediction and metric outputs.
pub fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for line in lines {
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Model-ready matrices. Categorical ids and numeric features are stored
/// row major; label vectors are present when the source data had them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EncodedDataset {
    pub n_rows: usize,
    /// Embedded-categorical ids, `n_rows * n_cat`.
    pub x_c: Vec<u32>,
    pub n_cat: usize,
    /// Numeric block, `n_rows * n_num`: standardized numerics, raw binaries
    /// and stats, and target-encoded pairs.
    pub x_n: Vec<f64>,
    pub n_num: usize,
    /// Embedding table sizes, one per categorical column.
    pub cardinalities: Vec<usize>,
    pub clicks: Option<Vec<f64>>,
    pub installs: Option<Vec<f64>>,
    pub ratings: Option<Vec<f64>>,
}

impl EncodedDataset {
    pub fn row_c(&self, i: usize) -> &[u32] {
        &self.x_c[i * self.n_cat..(i + 1) * self.n_cat]
    }

    pub fn row_n(&self, i: usize) -> &[f64] {
        &self.x_n[i * self.n_num..(i + 1) * self.n_num]
    }

    /// Copy of the selected rows, in the given order.
    pub fn subset(&self, idx: &[usize]) -> EncodedDataset {
        let take = |v: &Option<Vec<f64>>| {
            v.as_ref()
                .map(|v| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>())
        };
        let mut x_c = Vec::with_capacity(idx.len() * self.n_cat);
        let mut x_n = Vec::with_capacity(idx.len() * self.n_num);
        for &i in idx {
            x_c.extend_from_slice(self.row_c(i));
            x_n.extend_from_slice(self.row_n(i));
        }
        EncodedDataset {
            n_rows: idx.len(),
            x_c,
            n_cat: self.n_cat,
            x_n,
            n_num: self.n_num,
            cardinalities: self.cardinalities.clone(),
            clicks: take(&self.clicks),
            installs: take(&self.installs),
            ratings: take(&self.ratings),
        }
    }
}
