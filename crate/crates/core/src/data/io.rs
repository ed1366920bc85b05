//! JSON-lines persistence: one [`DialogueRecord`] per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::record::DialogueRecord;
use crate::error::{Error, Result};

pub fn write_records<W: Write>(mut out: W, records: &[DialogueRecord]) -> Result<()> {
    for r in records {
        r.validate()?;
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<DialogueRecord>> {
    let mut records = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DialogueRecord = serde_json::from_str(&line)
            .map_err(|e| Error::MalformedLine { line: i + 1, message: e.to_string() })?;
        record.validate()?;
        records.push(record);
    }
    Ok(records)
}

pub fn save_dataset(path: &Path, records: &[DialogueRecord]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_records(BufWriter::new(File::create(path)?), records)
}

pub fn load_dataset(path: &Path) -> Result<Vec<DialogueRecord>> {
    read_records(File::open(path)?)
}
