use std::io::{Read, Write};
use std::path::Path;

use super::{CohortDataset, DataError, Record, N_FEATURES};

fn csv_err(row: usize, e: csv::Error) -> DataError {
    DataError::Parse { row, msg: e.to_string() }
}

/// Reads a header of ten feature names plus `label`, then one record per
/// row. Row numbers in errors count data rows from 1 (the header is row 0).
pub fn read_csv_from<R: Read>(reader: R) -> Result<CohortDataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h.map_err(|e| csv_err(0, e))?,
        None => return Err(DataError::Parse { row: 0, msg: "empty file".into() }),
    };
    if header.len() != N_FEATURES + 1 || &header[N_FEATURES] != "label" {
        return Err(DataError::Parse {
            row: 0,
            msg: format!("expected {N_FEATURES} feature columns followed by `label`, got {} columns", header.len()),
        });
    }
    let names: Vec<String> = header.iter().take(N_FEATURES).map(str::to_string).collect();

    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| csv_err(row, e))?;
        if rec.len() != N_FEATURES + 1 {
            return Err(DataError::Parse {
                row,
                msg: format!("expected {} columns, got {}", N_FEATURES + 1, rec.len()),
            });
        }
        let mut features = [0.0; N_FEATURES];
        for (j, slot) in features.iter_mut().enumerate() {
            let cell = rec[j].trim();
            *slot = cell
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DataError::Parse {
                    row,
                    msg: format!("column `{}`: `{cell}` is not a finite number", names[j]),
                })?;
        }
        let label = match rec[N_FEATURES].trim() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(DataError::Parse {
                    row,
                    msg: format!("label `{other}` is not 0 or 1"),
                })
            }
        };
        rows.push(Record { features, label });
    }
    CohortDataset::with_names(names, rows)
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<CohortDataset, DataError> {
    read_csv_from(std::fs::File::open(path)?)
}

/// Floats use Rust's shortest round-trip rendering.
pub fn write_csv_to<W: Write>(ds: &CohortDataset, writer: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let to_io = |e: csv::Error| DataError::Io(e.into());
    let mut header: Vec<&str> = ds.feature_names().iter().map(String::as_str).collect();
    header.push("label");
    w.write_record(&header).map_err(to_io)?;
    let mut fields: Vec<String> = Vec::with_capacity(N_FEATURES + 1);
    for r in ds.rows() {
        fields.clear();
        fields.extend(r.features.iter().map(|v| v.to_string()));
        fields.push(r.label.to_string());
        w.write_record(&fields).map_err(to_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(ds: &CohortDataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    write_csv_to(ds, std::io::BufWriter::new(std::fs::File::create(path)?))
}
