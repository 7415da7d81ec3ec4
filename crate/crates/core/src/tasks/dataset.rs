use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One labelled case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub input: String,
    pub label: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    #[serde(default)]
    id: Option<String>,
    input: String,
    label: String,
}

/// Reads JSON Lines records `{"input": ..., "label": ..., "id"?: ...}` in
/// file order. Blank lines are skipped; a record without `id` gets
/// `<file stem>-<line>`.
pub fn load_dataset(path: &Path) -> Result<Vec<Example>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "case".into());
    parse_dataset(&text, &stem).map_err(|(line, message)| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    })
}

/// Parses dataset text; errors carry the 1-based line number.
pub fn parse_dataset(text: &str, id_prefix: &str) -> std::result::Result<Vec<Example>, (usize, String)> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let r: Record = serde_json::from_str(line).map_err(|e| (line_no, e.to_string()))?;
        out.push(Example {
            id: r.id.unwrap_or_else(|| format!("{id_prefix}-{line_no}")),
            input: r.input,
            label: r.label,
        });
    }
    Ok(out)
}
