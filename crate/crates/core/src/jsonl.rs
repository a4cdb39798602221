//! JSON Lines helpers shared by stage artifacts.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Read every non-blank line as a `T`.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: T = serde_json::from_str(&line)
            .map_err(Error::Json)
            .map_err(|e| Error::Corpus(format!("line {}: {e}", i + 1)))?;
        out.push(value);
    }
    Ok(out)
}

/// Read a JSON Lines file from disk.
pub fn read_jsonl_file<T: DeserializeOwned>(path: &std::path::Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    read_jsonl(std::io::BufReader::new(file))
}

/// Serialize items one compact JSON document per line.
pub fn write_jsonl<T: Serialize, W: Write>(writer: &mut W, items: &[T]) -> Result<()> {
    for item in items {
        let line = serde_json::to_string(item)?;
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

/// Render items to a JSON Lines string.
pub fn to_jsonl_string<T: Serialize>(items: &[T]) -> Result<String> {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, items)?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_values() {
        let items = vec![1u32, 2, 3];
        let text = to_jsonl_string(&items).unwrap();
        assert_eq!(text, "1\n2\n3\n");
        let back: Vec<u32> = read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(back, items);
    }

    #[test]
    fn blank_lines_skipped() {
        let back: Vec<u32> = read_jsonl("1\n\n2\n".as_bytes()).unwrap();
        assert_eq!(back, vec![1, 2]);
    }

    #[test]
    fn bad_line_reports_number() {
        let err = read_jsonl::<u32, _>("1\nnope\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }
}
