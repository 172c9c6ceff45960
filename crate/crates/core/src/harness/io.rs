//! CSV matrices and datasets.
//!
//! A matrix file starts with a header row holding the column count,
//! followed by one row per matrix row. Floats carry 17 significant digits.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::pooling::FeatureMap;
use crate::tensor::Mat;

/// Float text with 17 significant digits (round-trips exactly).
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn data_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Data {
        path: path.display().to_string(),
        message: message.into(),
    }
}

pub fn matrix_to_csv(m: &Mat) -> String {
    let mut out = format!("{}\n", m.cols());
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|&x| format_float(x)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_matrix(path: &Path, m: &Mat) -> Result<()> {
    fs::write(path, matrix_to_csv(m))?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<Mat> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| data_err(path, e.to_string()))?;
    let mut records = reader.records();
    let header = records
        .next()
        .ok_or_else(|| data_err(path, "empty file"))?
        .map_err(|e| data_err(path, e.to_string()))?;
    if header.len() != 1 {
        return Err(data_err(path, "header row must hold only the column count"));
    }
    let cols: usize = header[0]
        .parse()
        .map_err(|_| data_err(path, format!("bad column count {:?}", &header[0])))?;
    let mut data = Vec::new();
    let mut rows = 0;
    for (line, rec) in records.enumerate() {
        let rec = rec.map_err(|e| data_err(path, e.to_string()))?;
        if rec.len() != cols {
            return Err(data_err(
                path,
                format!("row {} has {} values, expected {cols}", line + 1, rec.len()),
            ));
        }
        for field in rec.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| data_err(path, format!("row {}: bad number {field:?}", line + 1)))?;
            data.push(v);
        }
        rows += 1;
    }
    Mat::from_vec(rows, cols, data).map_err(|e| data_err(path, e.to_string()))
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "label")?;
    for l in labels {
        writeln!(f, "{l}")?;
    }
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| data_err(path, e.to_string()))?;
    reader
        .records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(|e| data_err(path, e.to_string()))?;
            rec.get(0)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| data_err(path, format!("row {}: bad label", i + 1)))
        })
        .collect()
}

fn sample_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("sample_{i:06}.csv"))
}

/// Writes `labels.csv` and one `sample_NNNNNN.csv` (d×n) per sample.
pub fn write_dataset(dir: &Path, samples: &[FeatureMap], labels: &[usize]) -> Result<()> {
    if samples.len() != labels.len() {
        return Err(Error::dim("write_dataset", "one label per sample required"));
    }
    fs::create_dir_all(dir)?;
    write_labels(&dir.join("labels.csv"), labels)?;
    for (i, s) in samples.iter().enumerate() {
        write_matrix(&sample_path(dir, i), s.features())?;
    }
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<(Vec<FeatureMap>, Vec<usize>)> {
    let labels = read_labels(&dir.join("labels.csv"))?;
    let samples = (0..labels.len())
        .map(|i| {
            let p = sample_path(dir, i);
            FeatureMap::new(read_matrix(&p)?).map_err(|e| data_err(&p, e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((samples, labels))
}
