//! Flat `key = value` text format shared by every file this crate writes.
//!
//! One entry per line, `#` starts a comment line. Vectors are written as
//! whitespace-separated numbers using Rust's shortest round-trip float
//! formatting, so parsing a written document reproduces every value exactly.

use std::fmt::{self, Display, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvDoc {
    entries: Vec<(String, String)>,
}

impl KvDoc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn push_floats(&mut self, key: impl Into<String>, values: &[f64]) {
        let mut s = String::new();
        for (i, v) in values.iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            write!(s, "{v:?}").unwrap();
        }
        self.entries.push((key.into(), s));
    }

    pub fn push_list(&mut self, key: impl Into<String>, values: &[String]) {
        self.entries.push((key.into(), values.join(",")));
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Parse(format!("missing key `{key}`")))
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| Error::Parse(format!("key `{key}`: cannot parse `{raw}`")))
    }

    pub fn floats(&self, key: &str) -> Result<Vec<f64>> {
        let raw = self.require(key)?;
        raw.split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("key `{key}`: bad number `{tok}`")))
            })
            .collect()
    }

    /// Comma-separated list; the empty string is the empty list.
    pub fn list(&self, key: &str) -> Result<Vec<String>> {
        let raw = self.require(key)?;
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        Ok(raw.split(',').map(|s| s.trim().to_string()).collect())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_string()).map_err(|e| Error::io(path, e))
    }

    pub fn extend(&mut self, other: KvDoc) {
        self.entries.extend(other.entries);
    }

    /// Entries whose key starts with `prefix.`, with the prefix stripped.
    pub fn section(&self, prefix: &str) -> KvDoc {
        let p = format!("{prefix}.");
        KvDoc {
            entries: self
                .entries
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }

    pub fn prefixed(self, prefix: &str) -> KvDoc {
        KvDoc {
            entries: self
                .entries
                .into_iter()
                .map(|(k, v)| (format!("{prefix}.{k}"), v))
                .collect(),
        }
    }
}

impl fmt::Display for KvDoc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sections_and_lists() {
        let doc = KvDoc::parse("# header\na.x = 1\na.y = p,q\nb = 2\n").unwrap();
        let a = doc.section("a");
        assert_eq!(a.parse_value::<i32>("x").unwrap(), 1);
        assert_eq!(a.list("y").unwrap(), vec!["p", "q"]);
        assert!(doc.get("c").is_none());
        assert!(KvDoc::parse("novalue").is_err());
    }

    proptest! {
        #[test]
        fn floats_round_trip_exactly(v in proptest::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 0..20)) {
            let mut doc = KvDoc::new();
            doc.push_floats("v", &v);
            let back = KvDoc::parse(&doc.to_string()).unwrap();
            let parsed = back.floats("v").unwrap();
            prop_assert_eq!(parsed.len(), v.len());
            for (a, b) in parsed.iter().zip(&v) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
