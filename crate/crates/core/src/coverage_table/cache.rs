//! Plain-text cache files for coverage tables.
//!
//! ```text
//! fedcal-coverage-table
//! format-version 1
//! m 10
//! n 20
//! entries 2
//! 18 10 9.0476190476190477e-1
//! 20 9 9.0123456789012345e-1
//! ```
//!
//! Values carry 17 significant digits, enough to round-trip any `f64`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{FedcalError, Result};

use super::{CoverageTable, TableKey};

pub const CACHE_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "fedcal-coverage-table";

/// Conventional file name for a table inside a cache directory.
pub fn cache_file_name(key: TableKey) -> String {
    format!("coverage_m{}_n{}.txt", key.m(), key.n())
}

fn parse_err(line: usize, message: impl Into<String>) -> FedcalError {
    FedcalError::Parse {
        line,
        message: message.into(),
    }
}

fn header_value<'a>(line: usize, text: &'a str, name: &str) -> Result<&'a str> {
    let mut parts = text.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some(k), Some(v), None) if k == name => Ok(v),
        _ => Err(parse_err(line, format!("expected `{name} <value>`, found `{text}`"))),
    }
}

fn parse_usize(line: usize, text: &str) -> Result<usize> {
    text.parse()
        .map_err(|_| parse_err(line, format!("`{text}` is not a nonnegative integer")))
}

impl CoverageTable {
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{MAGIC}")?;
        writeln!(out, "format-version {CACHE_FORMAT_VERSION}")?;
        writeln!(out, "m {}", self.key.m())?;
        writeln!(out, "n {}", self.key.n())?;
        writeln!(out, "entries {}", self.entries.len())?;
        for (&(l, k), &v) in &self.entries {
            writeln!(out, "{l} {k} {v:.16e}")?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut lines = BufReader::new(input).lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, l)) => Ok((i + 1, l?)),
                None => Err(parse_err(0, format!("unexpected end of file, expected {what}"))),
            }
        };
        let (no, magic) = next("header")?;
        if magic.trim() != MAGIC {
            return Err(parse_err(no, format!("not a coverage table (`{}`)", magic.trim())));
        }
        let (no, line) = next("format-version")?;
        let version: u32 = header_value(no, &line, "format-version")?
            .parse()
            .map_err(|_| parse_err(no, "bad format version"))?;
        if version > CACHE_FORMAT_VERSION {
            return Err(parse_err(
                no,
                format!("format version {version} is newer than supported {CACHE_FORMAT_VERSION}"),
            ));
        }
        let (no, line) = next("m")?;
        let m = parse_usize(no, header_value(no, &line, "m")?)?;
        let (no, line) = next("n")?;
        let n = parse_usize(no, header_value(no, &line, "n")?)?;
        let key = TableKey::new(m, n)?;
        let (no, line) = next("entries")?;
        let count = parse_usize(no, header_value(no, &line, "entries")?)?;

        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let (no, line) = next("entry")?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(parse_err(no, format!("expected `l k M`, found `{line}`")));
            }
            let l = parse_usize(no, fields[0])?;
            let k = parse_usize(no, fields[1])?;
            let v: f64 = fields[2]
                .parse()
                .map_err(|_| parse_err(no, format!("`{}` is not a number", fields[2])))?;
            if entries.insert((l, k), v).is_some() {
                return Err(parse_err(no, format!("duplicate entry ({l},{k})")));
            }
        }
        if let Some((no, extra)) = lines.next() {
            if !extra?.trim().is_empty() {
                return Err(parse_err(no + 1, "trailing content after entries"));
            }
        }
        CoverageTable::from_entries(key, entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, buf)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::super::QQIndex;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn round_trips_bit_exactly() {
        let mut t = CoverageTable::new(TableKey::new(4, 6).unwrap());
        t.fill_all().unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let back = CoverageTable::read_from(&buf[..]).unwrap();
        assert_eq!(back.key(), t.key());
        let a: Vec<_> = t.entries().collect();
        let b: Vec<_> = back.entries().collect();
        assert_eq!(a, b);
        assert_eq!(back.computed_entries(), 0);
    }

    #[test]
    fn rejects_newer_versions_and_garbage() {
        let newer = "fedcal-coverage-table\nformat-version 2\nm 1\nn 1\nentries 0\n";
        assert!(CoverageTable::read_from(newer.as_bytes()).is_err());
        let bad = "fedcal-coverage-table\nformat-version 1\nm 2\nn 2\nentries 1\n1 1 nope\n";
        match CoverageTable::read_from(bad.as_bytes()) {
            Err(FedcalError::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("unexpected {other:?}"),
        }
        let out_of_grid = "fedcal-coverage-table\nformat-version 1\nm 2\nn 2\nentries 1\n3 1 0.5\n";
        assert!(CoverageTable::read_from(out_of_grid.as_bytes()).is_err());
        let non_monotone =
            "fedcal-coverage-table\nformat-version 1\nm 2\nn 2\nentries 2\n1 1 0.5\n1 2 0.4\n";
        assert!(CoverageTable::read_from(non_monotone.as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn value_text_round_trip(v in 0.0f64..=1.0) {
            let key = TableKey::new(1, 1).unwrap();
            let mut entries = BTreeMap::new();
            entries.insert((1, 1), v);
            let t = CoverageTable::from_entries(key, entries).unwrap();
            let mut buf = Vec::new();
            t.write_to(&mut buf).unwrap();
            let back = CoverageTable::read_from(&buf[..]).unwrap();
            prop_assert_eq!(back.get(QQIndex::new(1, 1)).unwrap().to_bits(), v.to_bits());
        }
    }
}
