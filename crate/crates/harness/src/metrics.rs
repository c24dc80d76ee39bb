//! JSON-lines training telemetry.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Writes one JSON object per line, suitable for tailing during long
/// runs and for loading into any dataframe tool.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        let line = serde_json::to_string(row).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        out.push_str(&line);
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(serde::Serialize)]
    struct Row {
        epoch: usize,
        loss: f64,
    }

    #[test]
    fn one_parseable_object_per_line() {
        let dir = std::env::temp_dir().join("fovdef_metrics_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.jsonl");
        let rows = vec![
            Row { epoch: 0, loss: 1.5 },
            Row { epoch: 1, loss: 0.75 },
        ];
        write_jsonl(&path, &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.trim_end().lines().collect();
        assert_eq!(lines.len(), 2);
        for (i, line) in lines.iter().enumerate() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert_eq!(v["epoch"], i);
        }
    }
}
