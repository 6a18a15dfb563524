//! Line-oriented JSON helpers shared by the record, audit and job formats.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CurationError, Result};

/// Parses one value per non-blank line. Errors carry the 1-based line number.
pub fn read<T: DeserializeOwned>(reader: impl BufRead) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| CurationError::Parse {
            line: i + 1,
            detail: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write<T: Serialize>(mut writer: impl Write, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut writer, item)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}
