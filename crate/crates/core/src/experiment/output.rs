//! Versioned output files: θ samples, per-step records, fields and summaries.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::samplers::ChainRecord;

pub const SAMPLES_HEADER: &str = "# msm-theta-samples v1";
pub const FIELD_HEADER: &str = "# msm-field v1";
pub const RECORDS_FORMAT: &str = "msm-records";
pub const RECORDS_VERSION: u32 = 1;

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

fn check_header(first: Option<&str>, expected: &str, path: &Path) -> Result<()> {
    match first {
        Some(line) if line.trim_end() == expected => Ok(()),
        Some(line) => Err(Error::Format(format!(
            "{}: expected header {expected:?}, found {:?}",
            path.display(),
            line.trim_end()
        ))),
        None => Err(Error::Format(format!("{} is empty", path.display()))),
    }
}

/// Streaming writer for retained θ samples.
pub struct SampleWriter {
    inner: csv::Writer<BufWriter<File>>,
}

impl SampleWriter {
    pub fn create(path: &Path, dim: usize) -> Result<Self> {
        let mut file = BufWriter::new(File::create(path)?);
        writeln!(file, "{SAMPLES_HEADER}")?;
        let mut inner = csv::Writer::from_writer(file);
        let mut header = vec!["cycle".to_string()];
        header.extend((0..dim).map(|k| format!("theta_{k}")));
        inner.write_record(&header).map_err(csv_err)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, cycle: u64, theta: &[f64]) -> Result<()> {
        let mut row = Vec::with_capacity(theta.len() + 1);
        row.push(cycle.to_string());
        row.extend(theta.iter().map(|v| v.to_string()));
        self.inner.write_record(&row).map_err(csv_err)
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleTable {
    pub cycles: Vec<u64>,
    pub theta: Vec<Vec<f64>>,
}

impl SampleTable {
    pub fn dim(&self) -> usize {
        self.theta.first().map_or(0, Vec::len)
    }

    /// Column `k` across all samples.
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.theta.iter().map(|row| row[k]).collect()
    }
}

pub fn read_samples(path: &Path) -> Result<SampleTable> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    check_header(
        (!first.is_empty()).then_some(first.as_str()),
        SAMPLES_HEADER,
        path,
    )?;
    let mut csv = csv::Reader::from_reader(reader);
    let mut table = SampleTable {
        cycles: Vec::new(),
        theta: Vec::new(),
    };
    for row in csv.records() {
        let row = row.map_err(csv_err)?;
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Format(format!("bad number {s:?}")))
        };
        let cycle = row
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("bad cycle column".into()))?;
        table.cycles.push(cycle);
        table
            .theta
            .push(row.iter().skip(1).map(parse).collect::<Result<_>>()?);
    }
    Ok(table)
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordsHeader {
    format: String,
    version: u32,
}

/// JSON-lines writer for per-step records; the first line identifies the format.
pub struct RecordWriter {
    inner: BufWriter<File>,
}

impl RecordWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut inner = BufWriter::new(File::create(path)?);
        let header = RecordsHeader {
            format: RECORDS_FORMAT.into(),
            version: RECORDS_VERSION,
        };
        writeln!(inner, "{}", serde_json::to_string(&header)?)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, record: &ChainRecord) -> Result<()> {
        writeln!(self.inner, "{}", serde_json::to_string(record)?)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

pub fn read_records(path: &Path) -> Result<Vec<ChainRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header: RecordsHeader = match lines.next() {
        Some(line) => serde_json::from_str(&line?)?,
        None => return Err(Error::Format(format!("{} is empty", path.display()))),
    };
    if header.format != RECORDS_FORMAT || header.version != RECORDS_VERSION {
        return Err(Error::Format(format!(
            "unsupported records file {} v{} in {}",
            header.format,
            header.version,
            path.display()
        )));
    }
    lines
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}

/// Cell-centered field as `idx,i,j,x,y,value` rows.
pub fn write_field(path: &Path, grid: Grid, values: &[f64]) -> Result<()> {
    if values.len() != grid.cell_count() {
        return Err(Error::Contract("field does not match the grid".into()));
    }
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "{FIELD_HEADER}")?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["idx", "i", "j", "x", "y", "value"])
        .map_err(csv_err)?;
    for (idx, v) in values.iter().enumerate() {
        let (i, j) = grid.coords(idx);
        let [x, y] = grid.center(idx);
        w.write_record([
            idx.to_string(),
            i.to_string(),
            j.to_string(),
            x.to_string(),
            y.to_string(),
            v.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<Vec<f64>> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    check_header(
        (!first.is_empty()).then_some(first.as_str()),
        FIELD_HEADER,
        path,
    )?;
    let mut csv = csv::Reader::from_reader(reader);
    csv.records()
        .map(|row| {
            let row = row.map_err(csv_err)?;
            row.get(5)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Format("bad value column".into()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(i: u64) -> ChainRecord {
        ChainRecord {
            iteration: i,
            active: 1,
            promoted: false,
            accepted: false,
            log_g: Some(f64::NEG_INFINITY),
            log_rho: None,
            log_alpha: None,
            uniform_1: Some(0.25),
            uniform_2: None,
            theta_star: vec![0.1, -0.2],
            log_lc: Some(-3.0),
            log_lf: -2.5,
        }
    }

    #[test]
    fn samples_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let mut w = SampleWriter::create(&path, 3).unwrap();
        let rows = [[0.1, 1.0 / 3.0, -2e-300], [5.0, f64::MIN_POSITIVE, 7.25]];
        for (c, r) in rows.iter().enumerate() {
            w.write(c as u64 + 10, r).unwrap();
        }
        w.finish().unwrap();
        let t = read_samples(&path).unwrap();
        assert_eq!(t.cycles, vec![10, 11]);
        assert_eq!(t.theta, rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>());
        assert_eq!(t.column(1), vec![1.0 / 3.0, f64::MIN_POSITIVE]);
    }

    #[test]
    fn unknown_headers_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        std::fs::write(&path, "# msm-theta-samples v2\ncycle,theta_0\n0,1\n").unwrap();
        assert!(matches!(read_samples(&path), Err(Error::Format(_))));
        std::fs::write(&path, "{\"format\":\"msm-records\",\"version\":3}\n").unwrap();
        assert!(matches!(read_records(&path), Err(Error::Format(_))));
    }

    #[test]
    fn records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let mut w = RecordWriter::create(&path).unwrap();
        let recs: Vec<_> = (0..3).map(record).collect();
        for r in &recs {
            w.write(r).unwrap();
        }
        w.finish().unwrap();
        assert_eq!(read_records(&path).unwrap(), recs);
    }

    #[test]
    fn field_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        let grid = Grid::new(4).unwrap();
        let values: Vec<f64> = (0..16).map(|k| (k as f64).sqrt()).collect();
        write_field(&path, grid, &values).unwrap();
        assert_eq!(read_field(&path).unwrap(), values);
    }
}
