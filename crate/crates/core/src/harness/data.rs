//! Plain-text dataset ingestion.
//!
//! Features: one instance per line, whitespace/tab-separated floats.
//! Labels: one float per line. Lengths: one positive integer per line; when
//! given, labels are raw post-editing times and the response becomes
//! `time / length`.

use std::fs;
use std::path::Path;

use crate::gp::Dataset;
use crate::harness::HarnessError;

fn read(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))
}

/// Non-empty lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_float(tok: &str, what: &str, line: usize, col: usize) -> Result<f64, HarnessError> {
    let v: f64 = tok.parse().map_err(|_| {
        HarnessError::Data(format!("{what}: line {line}, column {col}: cannot parse '{tok}' as a number"))
    })?;
    if !v.is_finite() {
        return Err(HarnessError::Data(format!(
            "{what}: line {line}, column {col}: non-finite value '{tok}'"
        )));
    }
    Ok(v)
}

pub fn parse_features(text: &str, what: &str) -> Result<Vec<Vec<f64>>, HarnessError> {
    let mut rows = Vec::new();
    let mut width = None;
    for (line, l) in lines(text) {
        let row = l
            .split_whitespace()
            .enumerate()
            .map(|(c, tok)| parse_float(tok, what, line, c + 1))
            .collect::<Result<Vec<_>, _>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(HarnessError::Data(format!(
                    "{what}: line {line} has {} columns, expected {w}",
                    row.len()
                )))
            }
            _ => {}
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(HarnessError::Data(format!("{what}: no rows")));
    }
    Ok(rows)
}

pub fn parse_column(text: &str, what: &str) -> Result<Vec<f64>, HarnessError> {
    lines(text)
        .map(|(line, l)| {
            let mut toks = l.split_whitespace();
            let tok = toks.next().unwrap_or_default();
            if toks.next().is_some() {
                return Err(HarnessError::Data(format!("{what}: line {line}: expected a single value")));
            }
            parse_float(tok, what, line, 1)
        })
        .collect()
}

pub fn parse_lengths(text: &str, what: &str) -> Result<Vec<f64>, HarnessError> {
    lines(text)
        .map(|(line, l)| {
            let n: i64 = l.parse().map_err(|_| {
                HarnessError::Data(format!("{what}: line {line}: cannot parse '{l}' as an integer length"))
            })?;
            if n <= 0 {
                return Err(HarnessError::Data(format!("{what}: line {line}: length must be positive, got {n}")));
            }
            Ok(n as f64)
        })
        .collect()
}

/// Builds a dataset from already-read file contents.
pub fn dataset_from_text(features: &str, labels: &str, lengths: Option<&str>) -> Result<Dataset, HarnessError> {
    let rows = parse_features(features, "features")?;
    let mut y = parse_column(labels, "labels")?;
    if rows.len() != y.len() {
        return Err(HarnessError::Data(format!(
            "row count mismatch: {} feature rows, {} labels",
            rows.len(),
            y.len()
        )));
    }
    if let Some(lengths) = lengths {
        let len = parse_lengths(lengths, "lengths")?;
        if len.len() != y.len() {
            return Err(HarnessError::Data(format!(
                "row count mismatch: {} labels, {} lengths",
                y.len(),
                len.len()
            )));
        }
        for (t, l) in y.iter_mut().zip(&len) {
            *t /= l;
        }
    }
    Dataset::from_rows(&rows, y).map_err(|e| HarnessError::Data(e.to_string()))
}

pub fn load_dataset(features: &Path, labels: &Path, lengths: Option<&Path>) -> Result<Dataset, HarnessError> {
    let f = read(features)?;
    let l = read(labels)?;
    let n = lengths.map(read).transpose()?;
    dataset_from_text(&f, &l, n.as_deref())
}

pub fn load_features(path: &Path) -> Result<Vec<Vec<f64>>, HarnessError> {
    parse_features(&read(path)?, "features")
}

pub fn load_labels(path: &Path) -> Result<Vec<f64>, HarnessError> {
    parse_column(&read(path)?, "labels")
}

/// Writes a dataset in the same plain-text layout.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    let mut feats = String::new();
    for i in 0..dataset.len() {
        let row: Vec<String> = dataset.row(i).iter().map(|v| v.to_string()).collect();
        feats.push_str(&row.join("\t"));
        feats.push('\n');
    }
    let labels: String = dataset.responses().iter().map(|v| format!("{v}\n")).collect();
    fs::write(dir.join("features.txt"), feats)?;
    fs::write(dir.join("labels.txt"), labels)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_small_file() {
        let ds = dataset_from_text("1.0 2.0\n3\t4\n\n5 6\n", "0.5\n1.5\n2.5\n", None).unwrap();
        assert_eq!((ds.len(), ds.dim()), (3, 2));
        assert_eq!(ds.row(1), vec![3.0, 4.0]);
    }

    #[test]
    fn normalises_by_length() {
        let ds = dataset_from_text("1\n2\n", "30\n8\n", Some("10\n4\n")).unwrap();
        assert_eq!(ds.responses()[0], 3.0);
        assert_eq!(ds.responses()[1], 2.0);
    }

    #[test]
    fn reports_parse_errors_with_location() {
        let err = dataset_from_text("1.0 2.0\n1.0 abc\n", "1\n2\n", None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2") && msg.contains("column 2") && msg.contains("abc"), "{msg}");
        assert!(dataset_from_text("1 2\n3\n", "1\n2\n", None).unwrap_err().to_string().contains("line 2"));
        assert!(dataset_from_text("1\nnan\n", "1\n2\n", None).is_err());
    }

    #[test]
    fn rejects_mismatches_and_bad_lengths() {
        assert!(matches!(dataset_from_text("1\n2\n", "1\n", None), Err(HarnessError::Data(_))));
        assert!(dataset_from_text("1\n2\n", "1\n2\n", Some("3\n")).is_err());
        let e = dataset_from_text("1\n2\n", "1\n2\n", Some("3\n0\n")).unwrap_err();
        assert!(e.to_string().contains("positive"));
        assert!(dataset_from_text("1\n2\n", "1\n2\n", Some("3\n2.5\n")).is_err());
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let ds = dataset_from_text("0.1 -2\n3.25 4e-3\n", "1.5\n0.125\n", None).unwrap();
        write_dataset(dir.path(), &ds).unwrap();
        let back = load_dataset(&dir.path().join("features.txt"), &dir.path().join("labels.txt"), None).unwrap();
        assert_eq!(back, ds);
    }
}
