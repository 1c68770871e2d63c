//! Token feature matrices and their line-delimited JSON file format.
//!
//! One document per line:
//! `{"id": "...", "scorers": ["s1", ...], "features": [[a, b, g, ...], ...]}`.
//! Numbers are written with 17 significant digits so values reload bit-exactly.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Lines, Write};
use std::path::Path;

use log::warn;
use serde::Deserialize;

use super::MAX_SEQ_LEN;
use crate::error::{Error, Result};

/// Rows are token positions; each row holds `(alpha, beta, gamma)` for every
/// scorer in `scorer_ids` order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    scorer_ids: Vec<String>,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(scorer_ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let width = 3 * scorer_ids.len();
        let mut data = Vec::with_capacity(rows.len() * width);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != width {
                return Err(Error::Format(format!("row {i} has {} columns, expected {width}", row.len())));
            }
            data.extend(row);
        }
        Self::from_flat(scorer_ids, data)
    }

    /// Row-major constructor.
    pub fn from_flat(scorer_ids: Vec<String>, data: Vec<f64>) -> Result<Self> {
        if scorer_ids.is_empty() {
            return Err(Error::Format("a feature matrix needs at least one scorer".into()));
        }
        let width = 3 * scorer_ids.len();
        if data.len() % width != 0 {
            return Err(Error::Format(format!("{} values do not fill rows of width {width}", data.len())));
        }
        if data.len() / width > MAX_SEQ_LEN {
            return Err(Error::Format(format!("{} rows exceed the {MAX_SEQ_LEN}-token limit", data.len() / width)));
        }
        Ok(FeatureMatrix { scorer_ids, data })
    }

    pub fn scorer_ids(&self) -> &[String] {
        &self.scorer_ids
    }

    pub fn n_cols(&self) -> usize {
        3 * self.scorer_ids.len()
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.n_cols()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let w = self.n_cols();
        &self.data[t * w..(t + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_cols())
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Positions and scorers where gamma exceeds alpha.
    pub fn ordering_violations(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (t, row) in self.rows().enumerate() {
            for (s, triple) in row.chunks_exact(3).enumerate() {
                if triple[2] > triple[0] {
                    out.push((t, s));
                }
            }
        }
        out
    }
}

fn push_number(buf: &mut String, value: f64) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::Format(format!("cannot serialize non-finite feature {value}")));
    }
    write!(buf, "{value:.16e}").expect("writing to a String");
    Ok(())
}

fn encode_record(id: &str, fm: &FeatureMatrix) -> Result<String> {
    let mut line = String::with_capacity(64 + fm.data.len() * 24);
    line.push_str("{\"id\":");
    line.push_str(&serde_json::to_string(id)?);
    line.push_str(",\"scorers\":");
    line.push_str(&serde_json::to_string(&fm.scorer_ids)?);
    line.push_str(",\"features\":[");
    for (t, row) in fm.rows().enumerate() {
        if t > 0 {
            line.push(',');
        }
        line.push('[');
        for (j, &v) in row.iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            push_number(&mut line, v)?;
        }
        line.push(']');
    }
    line.push_str("]}");
    Ok(line)
}

/// Streams feature records to a file, one line per document.
pub struct FeatureWriter<W: Write> {
    out: W,
}

impl FeatureWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        Ok(FeatureWriter { out: BufWriter::new(File::create(path)?) })
    }
}

impl<W: Write> FeatureWriter<W> {
    pub fn new(out: W) -> Self {
        FeatureWriter { out }
    }

    pub fn write(&mut self, id: &str, fm: &FeatureMatrix) -> Result<()> {
        let line = encode_record(id, fm)?;
        self.out.write_all(line.as_bytes())?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn write_features<'a, I>(path: impl AsRef<Path>, records: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, &'a FeatureMatrix)>,
{
    let mut writer = FeatureWriter::create(path)?;
    for (id, fm) in records {
        writer.write(id, fm)?;
    }
    writer.finish()?;
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    scorers: Vec<String>,
    features: Vec<Vec<f64>>,
}

/// Iterator over `(id, FeatureMatrix)` records of a feature file. Blank lines are skipped.
pub struct FeatureReader<R: BufRead> {
    lines: Lines<R>,
    line_no: usize,
}

impl FeatureReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::new(BufReader::new(File::open(path)?)))
    }
}

impl<R: BufRead> FeatureReader<R> {
    pub fn new(reader: R) -> Self {
        FeatureReader { lines: reader.lines(), line_no: 0 }
    }

    fn decode(&self, line: &str) -> Result<(String, FeatureMatrix)> {
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            position: format!("line {}", self.line_no),
            message: e.to_string(),
        })?;
        if let Some(row) = raw.features.iter().find(|r| r.len() % 3 != 0) {
            return Err(Error::Format(format!(
                "line {}: {} feature columns is not a multiple of 3",
                self.line_no,
                row.len()
            )));
        }
        let fm = FeatureMatrix::new(raw.scorers, raw.features)
            .map_err(|e| Error::Format(format!("line {}: {e}", self.line_no)))?;
        let violations = fm.ordering_violations();
        if !violations.is_empty() {
            warn!(
                "line {}: document `{}` has {} positions with gamma > alpha",
                self.line_no,
                raw.id,
                violations.len()
            );
        }
        Ok((raw.id, fm))
    }
}

impl<R: BufRead> Iterator for FeatureReader<R> {
    type Item = Result<(String, FeatureMatrix)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            return Some(self.decode(&line));
        }
    }
}

pub fn read_features(path: impl AsRef<Path>) -> Result<Vec<(String, FeatureMatrix)>> {
    FeatureReader::open(path)?.collect()
}
