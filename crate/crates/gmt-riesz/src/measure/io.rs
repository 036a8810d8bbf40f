//! CSV (`x_0,..,x_n,weight`) and JSON (`{dim, n, atoms: [{p, w}]}`) atom files.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DiscreteMeasure, MeasureError};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AtomDoc {
    pub p: Vec<f64>,
    pub w: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MeasureDoc {
    pub dim: usize,
    pub n: usize,
    pub atoms: Vec<AtomDoc>,
}

impl MeasureDoc {
    pub fn from_measure(mu: &DiscreteMeasure) -> Self {
        MeasureDoc {
            dim: mu.dim_ambient(),
            n: mu.dim_growth(),
            atoms: (0..mu.len()).map(|i| AtomDoc { p: mu.position(i).to_vec(), w: mu.weight(i) }).collect(),
        }
    }

    pub fn into_measure(self) -> Result<DiscreteMeasure, MeasureError> {
        if self.dim != self.n + 1 {
            return Err(MeasureError::Codimension { ambient: self.dim, growth: self.n });
        }
        let weights = self.atoms.iter().map(|a| a.w).collect();
        let points: Vec<Vec<f64>> = self.atoms.into_iter().map(|a| a.p).collect();
        DiscreteMeasure::from_points(self.n, &points, weights)
    }
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Reads a measure, choosing the format from the file extension. With
/// `normalize` the support is rescaled affinely into the unit cube.
pub fn read_measure(path: &Path, normalize: bool) -> Result<DiscreteMeasure, MeasureError> {
    let mu = if is_json(path) {
        let doc: MeasureDoc = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        doc.into_measure()?
    } else {
        read_csv(path)?
    };
    if normalize {
        mu.normalized()
    } else {
        Ok(mu)
    }
}

fn read_csv(path: &Path) -> Result<DiscreteMeasure, MeasureError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(values) => rows.push(values),
            // An unparsable first line is a header.
            Err(_) if line == 0 => continue,
            Err(e) => return Err(MeasureError::Malformed(format!("line {}: {e}", line + 1))),
        }
    }
    let width = rows.first().map(Vec::len).ok_or(MeasureError::Empty)?;
    if width < 3 {
        return Err(MeasureError::Malformed(format!("need at least 3 columns, found {width}")));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != width) {
        return Err(MeasureError::Malformed(format!("row {} has {} columns", bad + 1, rows[bad].len())));
    }
    let dim = width - 1;
    let mut coords = Vec::with_capacity(rows.len() * dim);
    let mut weights = Vec::with_capacity(rows.len());
    for row in rows {
        coords.extend_from_slice(&row[..dim]);
        weights.push(row[dim]);
    }
    DiscreteMeasure::new(dim - 1, coords, weights)
}

pub fn write_measure(mu: &DiscreteMeasure, path: &Path) -> Result<(), MeasureError> {
    if is_json(path) {
        serde_json::to_writer(BufWriter::new(File::create(path)?), &MeasureDoc::from_measure(mu))?;
        return Ok(());
    }
    let mut writer = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..mu.dim_ambient()).map(|i| format!("x{i}")).collect();
    header.push("weight".into());
    writer.write_record(&header)?;
    for atom in 0..mu.len() {
        let weight = mu.weight(atom);
        let row = mu.position(atom).iter().chain(std::iter::once(&weight)).map(|v| v.to_string());
        writer.write_record(row)?;
    }
    writer.flush()?;
    Ok(())
}
