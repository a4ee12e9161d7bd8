use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::Result;

/// Comment lines put above every CSV: the echoed config as one JSON line.
pub fn csv_preamble(echo: &Value) -> String {
    format!("# retainkv report\n# config: {echo}\n")
}

/// Writes `preamble ∥ header ∥ rows` as CSV.
pub fn write_csv(path: impl AsRef<Path>, echo: &Value, header: &str, rows: &[String]) -> Result<()> {
    let mut s = csv_preamble(echo);
    s.push_str(header);
    s.push('\n');
    for r in rows {
        s.push_str(r);
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// Wraps a report as `{"config": echo, "report": …}`.
pub fn write_json<R: Serialize>(path: impl AsRef<Path>, echo: &Value, report: &R) -> Result<()> {
    let doc = json!({ "config": echo, "report": report });
    fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(())
}

/// Lines of a CSV body, skipping the `#` preamble.
pub fn csv_body(text: &str) -> impl Iterator<Item = &str> {
    text.lines().filter(|l| !l.starts_with('#'))
}
