//! CSV datasets and matrices.
//!
//! Input tables have a header row and one sample per row; in memory every
//! sample is a column. Values are written with 17 significant digits so that
//! a save followed by a load reproduces every bit.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use grasspca_core::data::Dataset;
use grasspca_core::DenseMatrix;
use serde::Serialize;

use crate::error::CliError;

/// What [`load_csv`] kept and dropped.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LoadSummary {
    pub path: String,
    pub rows_read: usize,
    pub rows_kept: usize,
    pub rows_dropped: usize,
    pub features: usize,
    pub anomalies: Option<usize>,
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::MissingFile(path.to_path_buf()),
        _ => CliError::io(path, e),
    })
}

fn parse_cell(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_label(cell: &str) -> Option<u8> {
    match parse_cell(cell)? {
        0.0 => Some(0),
        1.0 => Some(1),
        _ => None,
    }
}

/// Column names of a table, trimmed.
pub fn read_header(path: &Path) -> Result<Vec<String>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(open(path)?);
    let header = reader.headers().map_err(|e| CliError::header(path, e.to_string()))?;
    Ok(header.iter().map(|h| h.trim().to_string()).collect())
}

/// Reads a numeric table. Rows with any unparseable or non-finite cell (or a
/// label other than 0/1) are dropped and counted.
pub fn load_csv(path: &Path, label_column: Option<&str>) -> Result<(Dataset, LoadSummary), CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(open(path)?);
    let header = read_header(path)?;
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(CliError::header(path, "empty header row".into()));
    }
    let label_idx = match label_column {
        Some(name) => Some(
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| CliError::header(path, format!("label column `{name}` not in header")))?,
        ),
        None => None,
    };
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != label_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let d = feature_names.len();
    if d == 0 {
        return Err(CliError::header(path, "no feature columns".into()));
    }

    let mut rows: Vec<f64> = Vec::new();
    let mut labels: Vec<u8> = Vec::new();
    let (mut read, mut dropped) = (0usize, 0usize);
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::header(path, e.to_string()))?;
        read += 1;
        if record.len() != header.len() {
            return Err(CliError::header(
                path,
                format!(
                    "line {} has {} fields, header has {}",
                    line + 2,
                    record.len(),
                    header.len()
                ),
            ));
        }
        let mut values = Vec::with_capacity(d);
        let mut label = None;
        let mut ok = true;
        for (i, cell) in record.iter().enumerate() {
            if Some(i) == label_idx {
                label = parse_label(cell);
                ok &= label.is_some();
            } else {
                match parse_cell(cell) {
                    Some(v) => values.push(v),
                    None => ok = false,
                }
            }
        }
        if !ok {
            dropped += 1;
            continue;
        }
        rows.extend(values);
        labels.extend(label);
    }
    let n = read - dropped;
    if n == 0 {
        return Err(CliError::EmptyAfterFiltering(path.to_path_buf()));
    }
    // Samples are columns: transpose the row-major table.
    let table = DenseMatrix::from_row_major(n, d, rows)?;
    let labels = label_idx.map(|_| labels);
    let summary = LoadSummary {
        path: path.display().to_string(),
        rows_read: read,
        rows_kept: n,
        rows_dropped: dropped,
        features: d,
        anomalies: labels.as_ref().map(|l| l.iter().filter(|&&v| v == 1).count()),
    };
    Ok((Dataset::new(table.transpose(), labels, feature_names)?, summary))
}

/// `{:.16e}`: 17 significant digits, enough to round-trip any `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path).map_err(|e| CliError::io(path, e))?))
}

/// Writes a dataset in the layout [`load_csv`] reads, with the label column
/// (named `label_column`) last when labels are present.
pub fn save_csv(path: &Path, ds: &Dataset, label_column: &str) -> Result<(), CliError> {
    let mut w = create(path)?;
    let mut header = ds.feature_names.clone();
    if ds.labels.is_some() {
        header.push(label_column.to_string());
    }
    let io = |e| CliError::io(path, e);
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for j in 0..ds.len() {
        let mut cells: Vec<String> = (0..ds.dim()).map(|i| format_value(ds.features[(i, j)])).collect();
        if let Some(l) = &ds.labels {
            cells.push(l[j].to_string());
        }
        writeln!(w, "{}", cells.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Matrix as CSV: header `c0,…,c{k-1}`, one matrix row per line.
pub fn write_matrix(path: &Path, m: &DenseMatrix) -> Result<(), CliError> {
    let mut w = create(path)?;
    let io = |e| CliError::io(path, e);
    let header: Vec<String> = (0..m.cols()).map(|j| format!("c{j}")).collect();
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for i in 0..m.rows() {
        let cells: Vec<String> = m.row(i).iter().map(|&v| format_value(v)).collect();
        writeln!(w, "{}", cells.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_matrix(path: &Path) -> Result<DenseMatrix, CliError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(open(path)?);
    let cols = reader
        .headers()
        .map_err(|e| CliError::header(path, e.to_string()))?
        .len();
    let mut data = Vec::new();
    let mut rows = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::header(path, e.to_string()))?;
        for cell in record.iter() {
            let v = parse_cell(cell).ok_or_else(|| CliError::Parse {
                path: path.to_path_buf(),
                line: line + 2,
                detail: format!("`{cell}` is not a finite number"),
            })?;
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(CliError::EmptyAfterFiltering(path.to_path_buf()));
    }
    Ok(DenseMatrix::from_row_major(rows, cols, data)?)
}

/// Two-column CSV for plotting.
pub fn write_pairs(
    path: &Path,
    header: (&str, &str),
    pairs: impl IntoIterator<Item = (f64, f64)>,
) -> Result<(), CliError> {
    let mut w = create(path)?;
    let io = |e| CliError::io(path, e);
    writeln!(w, "{},{}", header.0, header.1).map_err(io)?;
    for (a, b) in pairs {
        writeln!(w, "{},{}", format_value(a), format_value(b)).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn clean_file_loads_as_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", "x,y\n1,2\n3,4\n5,6\n");
        let (ds, summary) = load_csv(&p, None).unwrap();
        assert_eq!(ds.features.shape(), (2, 3));
        assert_eq!(ds.features.row(0), &[1.0, 3.0, 5.0]);
        assert_eq!(ds.features.row(1), &[2.0, 4.0, 6.0]);
        assert_eq!(summary.rows_dropped, 0);
    }

    #[test]
    fn bad_rows_are_dropped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "a.csv",
            "x,y,label\n1,2,0\nNaN,4,1\n5,6,1\n7,8,2\n9,inf,0\n",
        );
        let (ds, summary) = load_csv(&p, Some("label")).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(summary.rows_dropped, 3);
        assert_eq!(ds.labels.unwrap(), vec![0, 1]);
        assert_eq!(ds.feature_names, vec!["x", "y"]);
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_csv(&dir.path().join("none.csv"), None),
            Err(CliError::MissingFile(_))
        ));
        let p = write(dir.path(), "a.csv", "x,y\n1,2\n");
        assert!(matches!(
            load_csv(&p, Some("label")),
            Err(CliError::HeaderMismatch { .. })
        ));
        let p = write(dir.path(), "b.csv", "x,y\n1,2,3\n");
        assert!(matches!(load_csv(&p, None), Err(CliError::HeaderMismatch { .. })));
        let p = write(dir.path(), "c.csv", "x\nNaN\n");
        assert!(matches!(load_csv(&p, None), Err(CliError::EmptyAfterFiltering(_))));
    }

    #[test]
    fn save_then_load_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let values = [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, f64::MIN_POSITIVE, -0.0];
        let x = DenseMatrix::from_row_major(2, 3, values.to_vec()).unwrap();
        let ds = Dataset::new(x, Some(vec![0, 1, 1]), vec!["a".into(), "b".into()]).unwrap();
        let p = dir.path().join("rt.csv");
        save_csv(&p, &ds, "label").unwrap();
        let (back, _) = load_csv(&p, Some("label")).unwrap();
        assert_eq!(back.labels, ds.labels);
        for (a, b) in back.features.as_slice().iter().zip(ds.features.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn matrices_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = DenseMatrix::from_rows(&[[1.0 / 7.0, 2.0], [3.0, -4.5], [1e-17, 0.0]]);
        let p = dir.path().join("m.csv");
        write_matrix(&p, &m).unwrap();
        assert_eq!(read_matrix(&p).unwrap(), m);
    }
}
