//! Tabular regression datasets and their CSV representation.
//!
//! CSV layout: a header row of column names, one numeric row per example,
//! target in the last column unless named explicitly. Lines starting with
//! `#` are metadata comments and are skipped on read.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{check_dim, Error, Result};
use crate::math::{Matrix, RngStream};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub x: Matrix,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>, x: Matrix, y: Vec<f64>) -> Result<Self> {
        check_dim(x.cols(), feature_names.len())?;
        check_dim(x.rows(), y.len())?;
        Ok(Self {
            feature_names,
            target_name: "y".into(),
            x,
            y,
        })
    }

    /// Dataset with generic names `x1..xD`.
    pub fn unnamed(x: Matrix, y: Vec<f64>) -> Result<Self> {
        let names = (1..=x.cols()).map(|i| format!("x{i}")).collect();
        Self::new(names, x, y)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self {
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }

    pub fn with_target(&self, y: Vec<f64>) -> Result<Self> {
        check_dim(self.len(), y.len())?;
        Ok(Self {
            y,
            ..self.clone()
        })
    }

    /// Shuffle and split by fractions; the remainder goes to the last part.
    pub fn split(&self, fractions: &[f64], rng: RngStream) -> Result<Vec<Dataset>> {
        if fractions.iter().any(|f| *f < 0.0) || fractions.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(Error::invalid("split fractions must be non-negative and sum to at most 1"));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rng.rng());
        let mut parts = Vec::with_capacity(fractions.len() + 1);
        let mut start = 0;
        for f in fractions {
            let end = start + (f * self.len() as f64).round() as usize;
            let end = end.min(self.len());
            parts.push(self.select_rows(&idx[start..end]));
            start = end;
        }
        parts.push(self.select_rows(&idx[start..]));
        Ok(parts)
    }

    /// Parse CSV text. `target` names the target column; default is the last.
    pub fn from_csv_reader<R: Read>(reader: R, target: Option<&str>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Malformed(format!("header: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        if headers.len() < 2 {
            return Err(Error::Malformed("need at least one feature and a target column".into()));
        }
        if headers.iter().any(String::is_empty) {
            return Err(Error::Malformed("empty column name in header".into()));
        }
        let t_idx = match target {
            Some(name) => headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Malformed(format!("target column '{name}' not in header")))?,
            None => headers.len() - 1,
        };
        let mut data = Vec::new();
        let mut y = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Malformed(format!("row {}: {e}", line + 1)))?;
            if rec.len() != headers.len() {
                return Err(Error::Malformed(format!(
                    "row {} has {} fields, header has {}",
                    line + 1,
                    rec.len(),
                    headers.len()
                )));
            }
            for (c, field) in rec.iter().enumerate() {
                if field.is_empty() {
                    return Err(Error::Malformed(format!(
                        "missing value in row {}, column '{}'",
                        line + 1,
                        headers[c]
                    )));
                }
                let v: f64 = field.parse().map_err(|_| {
                    Error::Malformed(format!("non-numeric value '{field}' in row {}", line + 1))
                })?;
                if !v.is_finite() {
                    return Err(Error::Malformed(format!("non-finite value in row {}", line + 1)));
                }
                if c == t_idx {
                    y.push(v);
                } else {
                    data.push(v);
                }
            }
        }
        if y.is_empty() {
            return Err(Error::Empty("csv has no data rows"));
        }
        let names: Vec<String> = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != t_idx)
            .map(|(_, h)| h.clone())
            .collect();
        let x = Matrix::from_vec(y.len(), names.len(), data)?;
        let mut ds = Self::new(names, x, y)?;
        ds.target_name = headers[t_idx].clone();
        Ok(ds)
    }

    pub fn read_csv(path: impl AsRef<Path>, target: Option<&str>) -> Result<Self> {
        let f = std::fs::File::open(path.as_ref())?;
        Self::from_csv_reader(std::io::BufReader::new(f), target)
    }

    /// Write as CSV with the target last. `meta` becomes a leading `#` line.
    pub fn to_csv_writer<W: Write>(&self, mut w: W, meta: Option<&str>) -> Result<()> {
        if let Some(m) = meta {
            writeln!(w, "# {m}")?;
        }
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = self.feature_names.clone();
        header.push(self.target_name.clone());
        wtr.write_record(&header).map_err(csv_io)?;
        let mut rec = Vec::with_capacity(header.len());
        for r in 0..self.len() {
            rec.clear();
            rec.extend(self.x.row(r).iter().map(|v| format_f64(*v)));
            rec.push(format_f64(self.y[r]));
            wtr.write_record(&rec).map_err(csv_io)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, meta: Option<&str>) -> Result<()> {
        let f = std::fs::File::create(path.as_ref())?;
        self.to_csv_writer(std::io::BufWriter::new(f), meta)
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}
