//! File formats: datasets as CSV (one sample per row, header `x1..xd`) or a
//! JSON envelope with provenance; matrices as headerless CSV or JSON; fitted
//! models as JSON.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ecd::{Dataset, Dgf, DgfClass, ExistenceReport, FitMethod, FitReport, Provenance};
use crate::error::{Error, Result};
use crate::optim::Status;
use crate::spd::SpdMatrix;

fn io_err(e: impl std::fmt::Display) -> Error {
    Error::Io(e.to_string())
}

fn parse_err(what: &str, e: impl std::fmt::Display) -> Error {
    Error::Parse { what: what.to_string(), reason: e.to_string() }
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Writes one sample per row under the header `x1,…,xd`.
pub fn write_dataset_csv<W: Write>(w: W, data: &Dataset) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let d = data.dim();
    wr.write_record((1..=d).map(|i| format!("x{i}"))).map_err(io_err)?;
    for col in data.columns().column_iter() {
        wr.write_record(col.iter().map(|v| v.to_string())).map_err(io_err)?;
    }
    wr.flush().map_err(io_err)
}

/// Reads a dataset CSV. The header fixes `d`, so an empty body is a valid
/// dataset with `n = 0`.
pub fn read_dataset_csv<R: Read>(r: R) -> Result<Dataset> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r);
    let d = rd.headers().map_err(|e| parse_err("dataset header", e))?.len();
    if d == 0 {
        return Err(parse_err("dataset", "empty header"));
    }
    let mut values = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| parse_err("dataset row", e))?;
        if rec.len() != d {
            return Err(parse_err("dataset", format!("row {} has {} fields, expected {d}", i + 1, rec.len())));
        }
        for field in rec.iter() {
            values.push(field.parse::<f64>().map_err(|e| parse_err("dataset value", format!("`{field}`: {e}")))?);
        }
    }
    let n = values.len() / d;
    Dataset::from_columns(DMatrix::from_column_slice(d, n, &values))
}

#[derive(Serialize, Deserialize)]
struct DatasetEnvelope {
    dim: usize,
    n: usize,
    rows: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

pub fn write_dataset_json<W: Write>(w: W, data: &Dataset) -> Result<()> {
    let env = DatasetEnvelope {
        dim: data.dim(),
        n: data.len(),
        rows: data.columns().column_iter().map(|c| c.iter().copied().collect()).collect(),
        provenance: data.provenance.clone(),
    };
    serde_json::to_writer_pretty(w, &env).map_err(io_err)
}

pub fn read_dataset_json<R: Read>(r: R) -> Result<Dataset> {
    let env: DatasetEnvelope = serde_json::from_reader(r).map_err(|e| parse_err("dataset JSON", e))?;
    if env.rows.len() != env.n || env.rows.iter().any(|row| row.len() != env.dim) {
        return Err(parse_err("dataset JSON", "rows do not match `dim` and `n`"));
    }
    let flat: Vec<f64> = env.rows.into_iter().flatten().collect();
    let mut data = Dataset::from_columns(DMatrix::from_column_slice(env.dim, env.n, &flat))?;
    data.provenance = env.provenance;
    Ok(data)
}

/// Reads a dataset, choosing the format from the extension (`.json` or CSV).
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let f = BufReader::new(File::open(path).map_err(|e| io_err(format!("{}: {e}", path.display())))?);
    if is_json(path) {
        read_dataset_json(f)
    } else {
        read_dataset_csv(f)
    }
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let f = BufWriter::new(File::create(path).map_err(|e| io_err(format!("{}: {e}", path.display())))?);
    if is_json(path) {
        write_dataset_json(f, data)
    } else {
        write_dataset_csv(f, data)
    }
}

/// Square matrix in JSON: `{"dim": d, "data": [row-major entries]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl MatrixJson {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self { dim: m.nrows(), data: m.transpose().iter().copied().collect() }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.dim * self.dim {
            return Err(parse_err("matrix JSON", format!("{} entries for dimension {}", self.data.len(), self.dim)));
        }
        Ok(DMatrix::from_row_slice(self.dim, self.dim, &self.data))
    }
}

/// Headerless CSV with one matrix row per line.
pub fn read_matrix_csv<R: Read>(r: R) -> Result<DMatrix<f64>> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(r);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| parse_err("matrix row", e))?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| parse_err("matrix value", format!("`{f}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let d = rows.len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(parse_err("matrix CSV", "expected a non-empty square matrix"));
    }
    Ok(DMatrix::from_row_iterator(d, d, rows.into_iter().flatten()))
}

pub fn write_matrix_csv<W: Write>(w: W, m: &DMatrix<f64>) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for row in m.row_iter() {
        wr.write_record(row.iter().map(|v| v.to_string())).map_err(io_err)?;
    }
    wr.flush().map_err(io_err)
}

/// Reads a square matrix from `.json` or CSV.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let f = BufReader::new(File::open(path).map_err(|e| io_err(format!("{}: {e}", path.display())))?);
    if is_json(path) {
        let m: MatrixJson = serde_json::from_reader(f).map_err(|e| parse_err("matrix JSON", e))?;
        m.to_matrix()
    } else {
        read_matrix_csv(f)
    }
}

/// Reads an SPD matrix; fails with [`Error::Domain`] when it is not one.
pub fn read_spd(path: &Path) -> Result<SpdMatrix> {
    SpdMatrix::new(read_matrix(path)?)
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).map_err(|e| io_err(format!("{}: {e}", path.display())))?);
    if is_json(path) {
        serde_json::to_writer_pretty(&mut f, &MatrixJson::from_matrix(m)).map_err(io_err)?;
        f.flush().map_err(io_err)
    } else {
        write_matrix_csv(f, m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub method: FitMethod,
    pub status: Status,
    pub iterations: usize,
    pub final_nll: f64,
    pub grad_norm: f64,
    pub class: DgfClass,
    pub existence: ExistenceReport,
}

/// Fitted model: the dgf (with its parameters), the scatter in row-major
/// order and solver diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelJson {
    pub dgf: Dgf,
    pub dim: usize,
    pub scatter: Vec<f64>,
    pub diagnostics: Diagnostics,
}

impl ModelJson {
    pub fn from_fit(dgf: &Dgf, fit: &FitReport) -> Self {
        Self {
            dgf: *dgf,
            dim: fit.scatter.dim(),
            scatter: fit.scatter.as_matrix().transpose().iter().copied().collect(),
            diagnostics: Diagnostics {
                method: fit.method,
                status: fit.status,
                iterations: fit.iterations(),
                final_nll: fit.final_nll,
                grad_norm: fit.final_grad_norm(),
                class: fit.class,
                existence: fit.existence.clone(),
            },
        }
    }

    pub fn scatter(&self) -> Result<SpdMatrix> {
        SpdMatrix::new(MatrixJson { dim: self.dim, data: self.scatter.clone() }.to_matrix()?)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(io_err)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| parse_err("model JSON", e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecd::sample;
    use crate::random::{random_spd, rng};

    #[test]
    fn dataset_csv_round_trips_exactly() {
        let s = random_spd(&mut rng(1), 3);
        let data = sample(&Dgf::gaussian(3), &s, 20, 4).unwrap();
        let mut buf = Vec::new();
        write_dataset_csv(&mut buf, &data).unwrap();
        assert!(buf.starts_with(b"x1,x2,x3\n"));
        let back = read_dataset_csv(buf.as_slice()).unwrap();
        assert_eq!(back.columns(), data.columns());
    }

    #[test]
    fn empty_dataset_keeps_its_header() {
        let data = Dataset::from_columns(DMatrix::zeros(4, 0)).unwrap();
        let mut buf = Vec::new();
        write_dataset_csv(&mut buf, &data).unwrap();
        assert_eq!(buf, b"x1,x2,x3,x4\n");
        let back = read_dataset_csv(buf.as_slice()).unwrap();
        assert_eq!((back.dim(), back.len()), (4, 0));
    }

    #[test]
    fn dataset_json_keeps_provenance() {
        let s = random_spd(&mut rng(2), 2);
        let data = sample(&Dgf::StudentT { nu: 3.0 }, &s, 5, 9).unwrap();
        let mut buf = Vec::new();
        write_dataset_json(&mut buf, &data).unwrap();
        let back = read_dataset_json(buf.as_slice()).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn ragged_csv_is_rejected() {
        let text = "x1,x2\n1,2\n3\n";
        assert!(matches!(read_dataset_csv(text.as_bytes()), Err(Error::Parse { .. })));
        assert!(read_matrix_csv("1,2\n3,4,5\n".as_bytes()).is_err());
        assert!(read_dataset_csv("x1,x2\n1,abc\n".as_bytes()).is_err());
    }

    #[test]
    fn matrix_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = random_spd(&mut rng(3), 3).into_matrix();
        for name in ["a.csv", "a.json"] {
            let p = dir.path().join(name);
            write_matrix(&p, &m).unwrap();
            assert_eq!(read_matrix(&p).unwrap(), m);
        }
        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "1,2\n2,-5\n").unwrap();
        assert!(matches!(read_spd(&bad), Err(Error::Domain(_))));
    }
}
