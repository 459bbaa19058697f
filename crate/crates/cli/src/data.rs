//! CSV ingestion and the tidy tables written by the commands.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Observations with inputs in the unit cube.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub input_names: Vec<String>,
    pub output_name: String,
    /// Per-input `(min, max)` used to map raw inputs to `[0, 1]`.
    pub scaling: Option<Vec<Scaling>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub min: f64,
    pub max: f64,
}

impl Scaling {
    /// Affine map of `[min, max]` onto `[0, 1]`; constant columns map to 0.
    pub fn apply(&self, v: f64) -> f64 {
        if self.max > self.min {
            (v - self.min) / (self.max - self.min)
        } else {
            0.0
        }
    }
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.input_names.len()
    }
}

/// Canonical input column names `x1..xD`.
pub fn input_names(dim: usize) -> Vec<String> {
    (1..=dim).map(|j| format!("x{j}")).collect()
}

fn read_to_string(path: &Path) -> Result<String> {
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| CliError::io(path, e))?;
    Ok(text)
}

type Table = (Vec<String>, Vec<Vec<f64>>);

/// Parsed header and numeric rows of a CSV file. `None` for an empty file.
fn read_numeric(path: &Path) -> Result<Option<Table>> {
    let text = read_to_string(path)?;
    if text.trim().is_empty() {
        return Ok(None);
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.iter().all(|h| h.parse::<f64>().is_ok()) {
        return Err(CliError::Data(format!("{}: missing header row", path.display())));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(CliError::Data(format!(
                "{} line {line}: expected {} fields, found {}",
                path.display(),
                header.len(),
                record.len()
            )));
        }
        let row = record
            .iter()
            .zip(&header)
            .map(|(cell, name)| match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(CliError::Data(format!(
                    "{} line {line}, column {name}: '{cell}' is not a finite number",
                    path.display()
                ))),
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Some((header, rows)))
}

fn check_input_header(path: &Path, names: &[String]) -> Result<()> {
    let expected = input_names(names.len());
    if names != expected.as_slice() {
        return Err(CliError::Data(format!(
            "{}: input columns must be named {}, found {}",
            path.display(),
            expected.join(","),
            names.join(",")
        )));
    }
    Ok(())
}

fn check_unit_cube(path: &Path, x: &[Vec<f64>], names: &[String]) -> Result<()> {
    for (i, row) in x.iter().enumerate() {
        for (v, name) in row.iter().zip(names) {
            if !(0.0..=1.0).contains(v) {
                return Err(CliError::Data(format!(
                    "{} data row {}: {name} = {v} lies outside [0, 1]; enable rescale",
                    path.display(),
                    i + 1
                )));
            }
        }
    }
    Ok(())
}

/// Read `x1,...,xD,<output>` observations. With `rescale`, every input column
/// is mapped to `[0, 1]` by its minimum and maximum; otherwise inputs outside
/// the unit cube are an error.
pub fn ingest_csv(path: &Path, rescale: bool) -> Result<Dataset> {
    let Some((header, rows)) = read_numeric(path)? else {
        return Err(CliError::Data(format!("{}: empty file", path.display())));
    };
    if header.len() < 2 {
        return Err(CliError::Data(format!(
            "{}: need at least one input column and one output column",
            path.display()
        )));
    }
    if rows.is_empty() {
        return Err(CliError::Data(format!("{}: no data rows", path.display())));
    }
    let d = header.len() - 1;
    let names = header[..d].to_vec();
    check_input_header(path, &names)?;
    let mut x: Vec<Vec<f64>> = rows.iter().map(|r| r[..d].to_vec()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r[d]).collect();
    let scaling = if rescale {
        let s: Vec<Scaling> = (0..d)
            .map(|j| Scaling {
                min: x.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min),
                max: x.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max),
            })
            .collect();
        for row in &mut x {
            for (v, sc) in row.iter_mut().zip(&s) {
                *v = sc.apply(*v).clamp(0.0, 1.0);
            }
        }
        Some(s)
    } else {
        check_unit_cube(path, &x, &names)?;
        None
    };
    Ok(Dataset {
        x,
        y,
        input_names: names,
        output_name: header[d].clone(),
        scaling,
    })
}

/// Prediction points as supplied and mapped to the unit cube.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Points {
    pub raw: Vec<Vec<f64>>,
    pub unit: Vec<Vec<f64>>,
}

/// Read prediction points `x1,...,xD`, mapped with `scaling` when given.
/// An empty file yields no points.
pub fn ingest_points(path: &Path, dim: usize, scaling: Option<&[Scaling]>) -> Result<Points> {
    let Some((header, rows)) = read_numeric(path)? else {
        return Ok(Points::default());
    };
    if header.len() != dim {
        return Err(CliError::Data(format!(
            "{}: {} columns but the model has {dim} inputs",
            path.display(),
            header.len()
        )));
    }
    check_input_header(path, &header)?;
    let unit: Vec<Vec<f64>> = match scaling {
        Some(s) => rows
            .iter()
            .map(|row| row.iter().zip(s).map(|(v, sc)| sc.apply(*v)).collect())
            .collect(),
        None => rows.clone(),
    };
    check_unit_cube(path, &unit, &header)?;
    Ok(Points { raw: rows, unit })
}

/// Write a table with a header row.
pub fn write_table(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let to_err = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    w.write_record(header).map_err(to_err)?;
    for row in rows {
        w.write_record(&row).map_err(to_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Shortest representation that parses back to the same value.
pub fn fmt(v: f64) -> String {
    format!("{v:?}")
}

/// Write observations in the ingestion format.
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut header = data.input_names.clone();
    header.push(data.output_name.clone());
    write_table(
        path,
        &header,
        data.x.iter().zip(&data.y).map(|(p, y)| p.iter().chain([y]).map(|v| fmt(*v)).collect()),
    )
}
