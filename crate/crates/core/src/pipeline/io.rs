use std::io::{BufRead, Write};
use std::path::Path;

use super::Trace;
use crate::error::{Error, Result};

/// Writes one JSON object per trace, one trace per line.
pub fn write_traces<W: Write>(mut out: W, traces: &[Trace]) -> Result<()> {
    for t in traces {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_traces(path: &Path) -> Result<Vec<Trace>> {
    let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut traces = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        traces.push(t);
    }
    Ok(traces)
}
