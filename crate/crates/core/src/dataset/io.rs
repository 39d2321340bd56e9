//! CSV and JSON persistence.
//!
//! CSV header: `f0..f{d-1}`, then `r0..r{K-1}` and/or `label`, then one
//! `group.<name>` column per group. Group cells are `0`, `1` or empty
//! (demographics unknown). JSON is an array of objects with `features`,
//! `raters` and/or `label`, and a `groups` map of `0`/`1`/`null`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{aggregate_ratings, DataError, Dataset, Example, LABEL_MISMATCH_TOLERANCE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// Guesses the format from the file extension; anything but `.json` is CSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn load_dataset(path: &Path, format: Format) -> Result<Dataset, DataError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    match format {
        Format::Csv => read_csv(reader),
        Format::Json => read_json(reader),
    }
}

pub fn save_dataset(dataset: &Dataset, path: &Path, format: Format) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut writer = BufWriter::new(file);
    match format {
        Format::Csv => write_csv(dataset, &mut writer)?,
        Format::Json => write_json(dataset, &mut writer)?,
    }
    writer.flush().map_err(|e| io_err(path, e))
}

enum Column {
    Feature,
    Rater,
    Label,
    Group(usize),
}

struct CsvSchema {
    columns: Vec<Column>,
    dim: usize,
    raters: usize,
    has_label: bool,
    group_names: Vec<String>,
}

fn parse_header(header: &csv::StringRecord) -> Result<CsvSchema, DataError> {
    let mut schema = CsvSchema {
        columns: Vec::with_capacity(header.len()),
        dim: 0,
        raters: 0,
        has_label: false,
        group_names: Vec::new(),
    };
    for name in header.iter() {
        let name = name.trim();
        let column = if let Some(group) = name.strip_prefix("group.") {
            if group.is_empty() || schema.group_names.iter().any(|g| g == group) {
                return Err(DataError::Schema(format!("bad or duplicate group column `{name}`")));
            }
            schema.group_names.push(group.to_string());
            Column::Group(schema.group_names.len() - 1)
        } else if name == "label" {
            if schema.has_label {
                return Err(DataError::Schema("duplicate `label` column".into()));
            }
            schema.has_label = true;
            Column::Label
        } else if let Some(idx) = indexed(name, 'f') {
            if idx != schema.dim {
                return Err(DataError::Schema(format!(
                    "expected feature column f{}, found `{name}`",
                    schema.dim
                )));
            }
            schema.dim += 1;
            Column::Feature
        } else if let Some(idx) = indexed(name, 'r') {
            if idx != schema.raters {
                return Err(DataError::Schema(format!(
                    "expected rater column r{}, found `{name}`",
                    schema.raters
                )));
            }
            schema.raters += 1;
            Column::Rater
        } else {
            return Err(DataError::Schema(format!("unrecognised column `{name}`")));
        };
        schema.columns.push(column);
    }
    if schema.raters == 0 && !schema.has_label {
        return Err(DataError::Schema("need rater columns r0.. or a `label` column".into()));
    }
    Ok(schema)
}

fn indexed(name: &str, prefix: char) -> Option<usize> {
    let digits = name.strip_prefix(prefix)?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

pub fn read_csv<R: Read>(reader: R) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let schema = parse_header(rdr.headers()?)?;
    let mut examples = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let more = rdr.read_record(&mut record).map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            DataError::Parse {
                line,
                message: e.to_string(),
            }
        })?;
        if !more {
            break;
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let parse_err = |message: String| DataError::Parse { line, message };
        if record.len() != schema.columns.len() {
            return Err(parse_err(format!(
                "expected {} cells, found {}",
                schema.columns.len(),
                record.len()
            )));
        }
        let mut features = Vec::with_capacity(schema.dim);
        let mut raters = Vec::with_capacity(schema.raters);
        let mut label = None;
        let mut groups = BTreeMap::new();
        for (cell, column) in record.iter().zip(&schema.columns) {
            match column {
                Column::Feature | Column::Rater | Column::Label => {
                    let v: f64 = cell
                        .parse()
                        .map_err(|_| parse_err(format!("cannot parse `{cell}` as a number")))?;
                    if !v.is_finite() {
                        return Err(parse_err(format!("non-finite value `{cell}`")));
                    }
                    match column {
                        Column::Feature => features.push(v),
                        Column::Rater => raters.push(v),
                        _ => label = Some(v),
                    }
                }
                Column::Group(g) => match cell {
                    "" => {}
                    "0" => {
                        groups.insert(schema.group_names[*g].clone(), false);
                    }
                    "1" => {
                        groups.insert(schema.group_names[*g].clone(), true);
                    }
                    other => return Err(parse_err(format!("group cell must be 0, 1 or empty, found `{other}`"))),
                },
            }
        }
        let example = build_example(features, raters, label, groups).map_err(|e| parse_err(e.to_string()))?;
        examples.push(example);
    }
    Dataset::new(schema.dim, schema.raters, schema.group_names, examples)
}

fn build_example(
    features: Vec<f64>,
    raters: Vec<f64>,
    label: Option<f64>,
    groups: BTreeMap<String, bool>,
) -> Result<Example, DataError> {
    if raters.is_empty() {
        let label = label.ok_or_else(|| DataError::Schema("missing label".into()))?;
        return Example::from_label(features, label, groups);
    }
    if let Some(explicit) = label {
        let mean = aggregate_ratings(&raters)?;
        if (mean - explicit).abs() > LABEL_MISMATCH_TOLERANCE {
            return Err(DataError::Schema(format!(
                "label {explicit} disagrees with rater mean {mean}"
            )));
        }
    }
    Example::from_ratings(features, raters, groups)
}

pub fn write_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (0..dataset.dim()).map(|i| format!("f{i}")).collect();
    header.extend((0..dataset.rater_count()).map(|k| format!("r{k}")));
    header.push("label".into());
    header.extend(dataset.group_names().iter().map(|g| format!("group.{g}")));
    wtr.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for ex in dataset.examples() {
        row.clear();
        row.extend(ex.features().iter().map(|v| v.to_string()));
        row.extend(ex.rater_scores().iter().map(|v| v.to_string()));
        row.push(ex.label().to_string());
        for g in dataset.group_names() {
            row.push(match ex.group(g) {
                Some(true) => "1".into(),
                Some(false) => "0".into(),
                None => String::new(),
            });
        }
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| DataError::Csv(e.into()))?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct JsonExample {
    features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    raters: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<f64>,
    #[serde(default)]
    groups: BTreeMap<String, Option<u8>>,
}

pub fn read_json<R: Read>(reader: R) -> Result<Dataset, DataError> {
    let rows: Vec<JsonExample> = serde_json::from_reader(reader)?;
    let mut group_names: Vec<String> = Vec::new();
    for row in &rows {
        for name in row.groups.keys() {
            if !group_names.contains(name) {
                group_names.push(name.clone());
            }
        }
    }
    group_names.sort();
    let dim = rows.first().map_or(0, |r| r.features.len());
    let raters = rows.first().and_then(|r| r.raters.as_ref()).map_or(0, Vec::len);
    let mut examples = Vec::with_capacity(rows.len());
    for (index, row) in rows.into_iter().enumerate() {
        let err = |message: String| DataError::Parse {
            line: index as u64 + 1,
            message,
        };
        let mut groups = BTreeMap::new();
        for (name, flag) in row.groups {
            match flag {
                None => {}
                Some(0) => {
                    groups.insert(name, false);
                }
                Some(1) => {
                    groups.insert(name, true);
                }
                Some(other) => return Err(err(format!("group flag must be 0, 1 or null, found {other}"))),
            }
        }
        let example = build_example(row.features, row.raters.unwrap_or_default(), row.label, groups)
            .map_err(|e| err(e.to_string()))?;
        examples.push(example);
    }
    Dataset::new(dim, raters, group_names, examples)
}

pub fn write_json<W: Write>(dataset: &Dataset, writer: W) -> Result<(), DataError> {
    let rows: Vec<JsonExample> = dataset
        .examples()
        .iter()
        .map(|ex| JsonExample {
            features: ex.features().to_vec(),
            raters: (dataset.rater_count() > 0).then(|| ex.rater_scores().to_vec()),
            label: Some(ex.label()),
            groups: dataset
                .group_names()
                .iter()
                .map(|g| (g.clone(), ex.group(g).map(u8::from)))
                .collect(),
        })
        .collect();
    serde_json::to_writer(writer, &rows)?;
    Ok(())
}
