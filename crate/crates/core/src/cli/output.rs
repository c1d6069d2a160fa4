use std::fmt::Display;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

/// An output file held in memory until the run succeeds.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputFile {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl OutputFile {
    pub fn sha256(&self) -> String {
        sha256_hex(&self.bytes)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Serialize)]
struct Versioned<'a, T: Serialize> {
    schema_version: u32,
    #[serde(flatten)]
    body: &'a T,
}

/// Pretty JSON with a leading `schema_version` key.
pub fn json_file<T: Serialize>(name: &str, body: &T) -> OutputFile {
    let mut text = serde_json::to_string_pretty(&Versioned {
        schema_version: SCHEMA_VERSION,
        body,
    })
    .expect("reports serialize");
    text.push('\n');
    OutputFile {
        name: name.to_owned(),
        bytes: text.into_bytes(),
    }
}

/// CSV table preceded by a `# schema_version=N` comment line.
pub struct CsvTable {
    writer: csv::Writer<Vec<u8>>,
}

impl CsvTable {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(format!("# schema_version={SCHEMA_VERSION}\n").as_bytes());
        let mut writer = csv::Writer::from_writer(buf);
        writer
            .write_record(header.iter().map(|h| h.as_ref()))
            .expect("in-memory csv");
        CsvTable { writer }
    }

    pub fn row(&mut self, cells: &[&dyn Display]) {
        self.writer
            .write_record(cells.iter().map(|c| c.to_string()))
            .expect("in-memory csv");
    }

    pub fn row_strings(&mut self, cells: &[String]) {
        self.writer.write_record(cells).expect("in-memory csv");
    }

    pub fn finish(self, name: &str) -> OutputFile {
        OutputFile {
            name: name.to_owned(),
            bytes: self.writer.into_inner().expect("in-memory csv"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_starts_with_schema_comment() {
        let mut t = CsvTable::new(&["a", "b"]);
        t.row(&[&1, &0.5]);
        let f = t.finish("t.csv");
        assert_eq!(
            String::from_utf8(f.bytes).unwrap(),
            "# schema_version=1\na,b\n1,0.5\n"
        );
    }

    #[test]
    fn json_has_schema_version_first() {
        #[derive(Serialize)]
        struct B {
            x: f64,
        }
        let f = json_file("b.json", &B { x: 0.1 });
        let text = String::from_utf8(f.bytes).unwrap();
        assert!(
            text.starts_with("{\n  \"schema_version\": 1,\n  \"x\": 0.1"),
            "{text}"
        );
    }

    #[test]
    fn sha256_reference() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
