use std::path::Path;

use crate::autodiff::Matrix;

use super::{DataError, Dataset, Task};

/// Reads a headered, comma-separated numeric file as a regression dataset.
/// Columns named in `target_columns` become targets (in that order); the rest
/// are features in file order.
pub fn load_csv(path: &Path, target_columns: &[&str], standardize: bool) -> Result<Dataset, DataError> {
    let format_err = |detail: String| DataError::Format {
        path: path.to_path_buf(),
        detail,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if target_columns.is_empty() {
        return Err(format_err("no target columns given".into()));
    }
    let mut target_idx = Vec::with_capacity(target_columns.len());
    for name in target_columns {
        match header.iter().position(|h| h == name) {
            Some(i) => target_idx.push(i),
            None => return Err(format_err(format!("target column `{name}` not in header"))),
        }
    }
    let feature_idx: Vec<usize> = (0..header.len()).filter(|i| !target_idx.contains(i)).collect();
    if feature_idx.is_empty() {
        return Err(format_err("no feature columns left after removing targets".into()));
    }

    let mut features = Vec::new();
    let mut targets = Vec::new();
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        // header is line 1
        let line = r + 2;
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != header.len() {
            return Err(format_err(format!(
                "line {line} has {} fields, header has {}",
                record.len(),
                header.len()
            )));
        }
        let cell = |c: usize| -> Result<f64, DataError> {
            let raw = &record[c];
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(DataError::Cell {
                    path: path.to_path_buf(),
                    row: line,
                    column: c + 1,
                    detail: format!("`{raw}` is not a finite number"),
                }),
            }
        };
        for &c in &feature_idx {
            features.push(cell(c)?);
        }
        for &c in &target_idx {
            targets.push(cell(c)?);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(format_err("no data rows".into()));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    let mut dataset = Dataset::new(
        name,
        Task::Regression,
        Matrix::from_vec(rows, feature_idx.len(), features),
        Matrix::from_vec(rows, target_idx.len(), targets),
    )?;
    if standardize {
        dataset.standardize_features();
    }
    Ok(dataset)
}

/// Writes `m` under `header` using shortest round-trip float formatting.
pub fn write_csv(path: &Path, header: &[&str], m: &Matrix) -> Result<(), DataError> {
    if header.len() != m.cols() {
        return Err(DataError::Invalid(format!(
            "{} header names for {} columns",
            header.len(),
            m.cols()
        )));
    }
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    writer.write_record(header).map_err(|e| csv_error(path, e))?;
    for r in 0..m.rows() {
        writer
            .write_record(m.row(r).iter().map(|v| v.to_string()))
            .map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_error(path: &Path, err: csv::Error) -> DataError {
    let path = path.to_path_buf();
    if err.is_io_error() {
        match err.into_kind() {
            csv::ErrorKind::Io(source) => DataError::Io { path, source },
            _ => unreachable!(),
        }
    } else {
        DataError::Format {
            path,
            detail: err.to_string(),
        }
    }
}
