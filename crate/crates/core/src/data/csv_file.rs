use std::path::Path;

use ndarray::Array2;

use super::dataset::{Dataset, Normalization};
use crate::error::{Error, Result};

/// Reads a headed CSV with a `label` column; every other column is a
/// feature. Features are min-max normalized per column. `classes` defaults
/// to `max(label) + 1`.
pub fn load_csv(path: &Path, classes: Option<usize>) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let label_col = headers.iter().position(|h| h.trim() == "label").ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        offset: 0,
        reason: "no `label` column in header".into(),
    })?;
    let dim = headers.len() - 1;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let offset = record.position().map_or(0, |p| p.byte());
        let bad = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            offset,
            reason,
        };
        for (j, field) in record.iter().enumerate() {
            let field = field.trim();
            if j == label_col {
                labels.push(field.parse::<usize>().map_err(|e| bad(format!("label `{field}`: {e}")))?);
            } else {
                let v = field.parse::<f64>().map_err(|e| bad(format!("value `{field}`: {e}")))?;
                if !v.is_finite() {
                    return Err(bad(format!("non-finite value `{field}`")));
                }
                values.push(v);
            }
        }
    }
    let n = labels.len();
    let mut features = Array2::from_shape_vec((n, dim), values).map_err(|e| Error::Config(e.to_string()))?;
    let norm = Normalization::fit(&[&features]);
    norm.apply(&mut features);
    let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    let mut ds = Dataset::new(features, labels, classes)?;
    ds.normalization = Some(norm);
    Ok(ds)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte());
    Error::Parse {
        path: path.to_path_buf(),
        offset,
        reason: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_label_column_anywhere() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "a,label,b\n0,1,10\n2,0,20\n4,2,30\n").unwrap();
        let ds = load_csv(&p, None).unwrap();
        assert_eq!(ds.labels, vec![1, 0, 2]);
        assert_eq!(ds.classes, 3);
        assert_eq!(ds.features.column(0).to_vec(), vec![0.0, 0.5, 1.0]);
        assert_eq!(ds.features.column(1).to_vec(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn missing_label_column_and_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "a,b\n1,2\n").unwrap();
        assert!(matches!(load_csv(&p, None), Err(Error::Parse { .. })));
        std::fs::write(&p, "a,label\nx,1\n").unwrap();
        assert!(matches!(load_csv(&p, None), Err(Error::Parse { .. })));
        std::fs::write(&p, "a,label\n1,4\n").unwrap();
        assert!(matches!(load_csv(&p, Some(3)), Err(Error::Range(_))));
    }
}
