//! Labeled text datasets in the shared-task CSV layout (`id`, `text`, `label`).
//!
//! Reading goes through a strict RFC 4180 reader so that broken quoting is
//! reported with a byte offset instead of being silently repaired.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use log::warn;

use crate::error::{Error, Result};

/// Binary class of a document. The numeric encoding is fixed: human = 0, machine = 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Human,
    Machine,
}

impl Label {
    pub fn encode(self) -> u8 {
        match self {
            Label::Human => 0,
            Label::Machine => 1,
        }
    }

    pub fn decode(value: u8) -> Option<Label> {
        match value {
            0 => Some(Label::Human),
            1 => Some(Label::Machine),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Human => "human",
            Label::Machine => "machine",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "human" => Ok(Label::Human),
            "machine" => Ok(Label::Machine),
            other => Err(format!("label `{other}` is not one of human/machine")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledDocument {
    pub id: String,
    pub text: String,
    pub label: Option<Label>,
}

/// Ordered collection of documents; either all of them carry a label or none do.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    documents: Vec<LabeledDocument>,
    labeled: bool,
}

impl Dataset {
    pub fn new(documents: Vec<LabeledDocument>) -> Result<Self> {
        let labeled = documents.first().is_some_and(|d| d.label.is_some());
        let mut seen = HashSet::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            if doc.id.is_empty() {
                return Err(Error::InvalidValue { row: i as u64 + 1, message: "empty document id".into() });
            }
            if doc.label.is_some() != labeled {
                return Err(Error::InvalidValue {
                    row: i as u64 + 1,
                    message: "dataset mixes labeled and unlabeled documents".into(),
                });
            }
            if !seen.insert(doc.id.as_str()) {
                return Err(Error::DuplicateId(doc.id.clone()));
            }
        }
        Ok(Dataset { documents, labeled })
    }

    pub fn documents(&self) -> &[LabeledDocument] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// True when every document has a label. An empty dataset is unlabeled.
    pub fn is_labeled(&self) -> bool {
        self.labeled
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.documents.iter().map(|d| d.text.as_str())
    }

    /// Labels in document order, or a usage error for unlabeled data.
    pub fn labels(&self) -> Result<Vec<Label>> {
        if !self.labeled {
            return Err(Error::Usage("dataset has no labels".into()));
        }
        Ok(self.documents.iter().filter_map(|d| d.label).collect())
    }

    /// Number of (human, machine) documents.
    pub fn class_counts(&self) -> Result<(usize, usize)> {
        let labels = self.labels()?;
        let machine = labels.iter().filter(|&&l| l == Label::Machine).count();
        Ok((labels.len() - machine, machine))
    }

    /// Writes the dataset back out in `id,text[,label]` layout.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut writer = csv::Writer::from_path(path.as_ref()).map_err(csv_error)?;
        if self.labeled {
            writer.write_record(["id", "text", "label"]).map_err(csv_error)?;
        } else {
            writer.write_record(["id", "text"]).map_err(csv_error)?;
        }
        for doc in &self.documents {
            match doc.label {
                Some(label) => writer.write_record([doc.id.as_str(), doc.text.as_str(), label.name()]),
                None => writer.write_record([doc.id.as_str(), doc.text.as_str()]),
            }
            .map_err(csv_error)?;
        }
        writer.flush()?;
        Ok(())
    }
}

fn csv_error(err: csv::Error) -> Error {
    match err.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

/// Loads a dataset keyed by header names, so any column order is accepted.
/// With `expect_labels = false` the `label` column is ignored even if present.
pub fn load_csv(path: impl AsRef<Path>, expect_labels: bool) -> Result<Dataset> {
    let bytes = fs::read(path.as_ref())?;
    parse_csv(&bytes, expect_labels)
}

pub fn parse_csv(bytes: &[u8], expect_labels: bool) -> Result<Dataset> {
    let table = Table::parse(bytes)?;
    let id_col = table.column("id")?;
    let text_col = table.column("text")?;
    let label_col = if expect_labels { Some(table.column("label")?) } else { None };
    for (i, name) in table.header.iter().enumerate() {
        if i != id_col && i != text_col && Some(i) != label_col && !(name == "label" && !expect_labels) {
            warn!("ignoring unknown column `{name}`");
        }
    }

    let mut documents = Vec::with_capacity(table.rows.len());
    let mut seen = HashSet::with_capacity(table.rows.len());
    for (i, row) in table.rows.iter().enumerate() {
        let row_number = i as u64 + 2;
        let id = row[id_col].clone();
        if id.is_empty() {
            return Err(Error::InvalidValue { row: row_number, message: "empty document id".into() });
        }
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        let label = match label_col {
            Some(col) => Some(
                row[col]
                    .parse::<Label>()
                    .map_err(|message| Error::InvalidValue { row: row_number, message })?,
            ),
            None => None,
        };
        documents.push(LabeledDocument { id, text: row[text_col].clone(), label });
    }
    Ok(Dataset { documents, labeled: expect_labels && !table.rows.is_empty() })
}

/// Reads a predictions file with `id,label` columns, preserving file order.
pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<(String, Label)>> {
    let bytes = fs::read(path.as_ref())?;
    let table = Table::parse(&bytes)?;
    let id_col = table.column("id")?;
    let label_col = table.column("label")?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(table.rows.len());
    for (i, row) in table.rows.iter().enumerate() {
        let id = row[id_col].clone();
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        let label = row[label_col]
            .parse::<Label>()
            .map_err(|message| Error::InvalidValue { row: i as u64 + 2, message })?;
        out.push((id, label));
    }
    Ok(out)
}

/// Writes `id,label` rows with decoded label names.
pub fn write_predictions<'a>(
    path: impl AsRef<Path>,
    predictions: impl IntoIterator<Item = (&'a str, Label)>,
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref()).map_err(csv_error)?;
    writer.write_record(["id", "label"]).map_err(csv_error)?;
    for (id, label) in predictions {
        writer.write_record([id, label.name()]).map_err(csv_error)?;
    }
    writer.flush()?;
    Ok(())
}

/// Header plus data rows of a CSV file, every row as wide as the header.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn parse(bytes: &[u8]) -> Result<Table> {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
            position: format!("byte {}", e.valid_up_to()),
            message: "invalid UTF-8".into(),
        })?;
        let (offset, text) = match text.strip_prefix('\u{feff}') {
            Some(rest) => (3, rest),
            None => (0, text),
        };
        let mut records = read_records(text, offset)?.into_iter();
        let (_, header) = records.next().ok_or_else(|| Error::Parse {
            position: "byte 0".into(),
            message: "missing header row".into(),
        })?;
        let header: Vec<String> = header.into_iter().map(|h| h.trim().to_string()).collect();
        let mut rows = Vec::new();
        for (start, record) in records {
            if record.len() != header.len() {
                return Err(Error::Parse {
                    position: format!("byte {start} (row {})", rows.len() + 2),
                    message: format!("expected {} fields, found {}", header.len(), record.len()),
                });
            }
            rows.push(record);
        }
        Ok(Table { header, rows })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }
}

/// Splits RFC 4180 text into records, each tagged with its starting byte offset.
/// Blank lines between records are skipped.
fn read_records(text: &str, base: usize) -> Result<Vec<(usize, Vec<String>)>> {
    let bytes = text.as_bytes();
    let mut records = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        if bytes[pos] == b'\n' {
            pos += 1;
            continue;
        }
        if bytes[pos] == b'\r' && bytes.get(pos + 1) == Some(&b'\n') {
            pos += 2;
            continue;
        }
        let start = pos;
        let mut fields = Vec::new();
        loop {
            let (field, next) = read_field(text, pos, base)?;
            fields.push(field);
            pos = next;
            match bytes.get(pos) {
                Some(b',') => pos += 1,
                Some(b'\n') => {
                    pos += 1;
                    break;
                }
                Some(b'\r') if bytes.get(pos + 1) == Some(&b'\n') => {
                    pos += 2;
                    break;
                }
                None => break,
                Some(_) => unreachable!("read_field stops only at a delimiter"),
            }
        }
        records.push((base + start, fields));
    }
    Ok(records)
}

fn read_field(text: &str, start: usize, base: usize) -> Result<(String, usize)> {
    let bytes = text.as_bytes();
    let malformed = |at: usize, message: &str| Error::Parse {
        position: format!("byte {}", base + at),
        message: message.to_string(),
    };
    if bytes.get(start) == Some(&b'"') {
        let mut value = String::new();
        let mut pos = start + 1;
        let mut chunk = pos;
        loop {
            match bytes.get(pos) {
                None => return Err(malformed(start, "unterminated quoted field")),
                Some(b'"') if bytes.get(pos + 1) == Some(&b'"') => {
                    value.push_str(&text[chunk..=pos]);
                    pos += 2;
                    chunk = pos;
                }
                Some(b'"') => {
                    value.push_str(&text[chunk..pos]);
                    pos += 1;
                    return match bytes.get(pos) {
                        None | Some(b',') | Some(b'\n') => Ok((value, pos)),
                        Some(b'\r') if bytes.get(pos + 1) == Some(&b'\n') => Ok((value, pos)),
                        Some(_) => Err(malformed(pos, "unexpected character after closing quote")),
                    };
                }
                Some(_) => pos += 1,
            }
        }
    } else {
        let mut pos = start;
        while let Some(&b) = bytes.get(pos) {
            match b {
                b',' | b'\n' => break,
                b'\r' if bytes.get(pos + 1) == Some(&b'\n') => break,
                b'"' => return Err(malformed(pos, "quote inside unquoted field")),
                _ => pos += 1,
            }
        }
        Ok((text[start..pos].to_string(), pos))
    }
}
