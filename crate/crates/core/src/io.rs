//! File formats: hierarchy JSON, series-by-column matrices and experiment
//! reports.
//!
//! Matrix CSVs hold one row per series in hierarchy order. The header is
//! `series,<prefix>1,<prefix>2,...` and the first field of every row is the
//! series label. Floats are written with `Display`, which is the shortest
//! representation that parses back to the same `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::hierarchy::{Hierarchy, HierarchySpec};
use crate::simulate::{Failure, Report, ReportRow};

pub fn read_hierarchy(path: impl AsRef<Path>) -> Result<Hierarchy> {
    let text = std::fs::read_to_string(path)?;
    Hierarchy::build(&HierarchySpec::from_json(&text)?)
}

pub fn write_hierarchy(path: impl AsRef<Path>, h: &Hierarchy) -> Result<()> {
    std::fs::write(path, h.spec().to_json()?)?;
    Ok(())
}

/// Reads an `n x k` matrix whose row labels must match `h` in order.
pub fn read_matrix_csv<R: Read>(reader: R, h: &Hierarchy) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("series") {
        return Err(Error::Validation(format!(
            "first header field must be \"series\", got {:?}",
            header.get(0).unwrap_or("")
        )));
    }
    let cols = header.len() - 1;
    if cols == 0 {
        return Err(Error::Validation("matrix CSV has no value columns".into()));
    }
    let labels = h.labels();
    let mut data = Vec::with_capacity(labels.len() * cols);
    let mut row = 0;
    for record in rdr.records() {
        let record = record?;
        let label = record.get(0).unwrap_or("");
        match labels.get(row) {
            Some(expected) if expected == label => {}
            Some(expected) => {
                return Err(Error::Validation(format!(
                    "row {} is series {label:?}, hierarchy expects {expected:?}",
                    row + 1
                )))
            }
            None => {
                return Err(Error::Validation(format!(
                    "unexpected extra series {label:?}; hierarchy has {} series",
                    labels.len()
                )))
            }
        }
        if record.len() != cols + 1 {
            return Err(Error::Validation(format!(
                "series {label:?} has {} values, header has {cols}",
                record.len() - 1
            )));
        }
        for (k, field) in record.iter().skip(1).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Validation(format!(
                    "series {label:?}, column {}: {field:?} is not a number",
                    header.get(k + 1).unwrap_or("?")
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "series {label:?}, column {}",
                    k + 1
                )));
            }
            data.push(v);
        }
        row += 1;
    }
    if row != labels.len() {
        return Err(Error::Validation(format!(
            "missing series {:?}; file has {row} of {} rows",
            labels[row],
            labels.len()
        )));
    }
    Ok(DMatrix::from_row_slice(labels.len(), cols, &data))
}

pub fn write_matrix_csv<W: Write>(
    writer: W,
    labels: &[String],
    m: &DMatrix<f64>,
    column_prefix: &str,
) -> Result<()> {
    if labels.len() != m.nrows() {
        return Err(Error::dimension(
            "matrix rows vs labels",
            labels.len(),
            m.nrows(),
        ));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["series".to_string()];
    header.extend((1..=m.ncols()).map(|k| format!("{column_prefix}{k}")));
    w.write_record(&header)?;
    for (label, row) in labels.iter().zip(m.row_iter()) {
        let mut record = vec![label.clone()];
        record.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_file(path: impl AsRef<Path>, h: &Hierarchy) -> Result<DMatrix<f64>> {
    read_matrix_csv(BufReader::new(File::open(path)?), h)
}

pub fn write_matrix_file(
    path: impl AsRef<Path>,
    labels: &[String],
    m: &DMatrix<f64>,
    column_prefix: &str,
) -> Result<()> {
    write_matrix_csv(
        BufWriter::new(File::create(path)?),
        labels,
        m,
        column_prefix,
    )
}

pub fn write_report_csv<W: Write>(writer: W, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report_csv<R: Read>(reader: R) -> Result<Vec<ReportRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn write_failures_csv<W: Write>(writer: W, failures: &[Failure]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for f in failures {
        w.serialize(f)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_failures_csv<R: Read>(reader: R) -> Result<Vec<Failure>> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn write_report_json<W: Write>(writer: W, report: &Report) -> Result<()> {
    serde_json::to_writer_pretty(writer, report)?;
    Ok(())
}

pub fn read_report_json<R: Read>(reader: R) -> Result<Report> {
    Ok(serde_json::from_reader(reader)?)
}
