//! Plain-text `key = value` files used for configs, world descriptions and
//! metadata sidecars. `#` starts a comment; keys may repeat (list entries).

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone, Default)]
pub struct KvFile {
    pub name: String,
    pub entries: Vec<Entry>,
}

impl KvFile {
    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                file: name.to_string(),
                line: i + 1,
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            entries.push(Entry {
                key: k.trim().to_string(),
                value: v.trim().to_string(),
                line: i + 1,
            });
        }
        Ok(KvFile {
            name: name.to_string(),
            entries,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        Self::parse(&path.display().to_string(), &text)
    }

    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().rev().find(|e| e.key == key)
    }

    pub fn all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a Entry> + 'a {
        self.entries.iter().filter(move |e| e.key == key)
    }

    pub fn parse_value<T: FromStr>(&self, e: &Entry) -> Result<T> {
        e.value.parse().map_err(|_| Error::Parse {
            file: self.name.clone(),
            line: e.line,
            reason: format!("bad value `{}` for `{}`", e.value, e.key),
        })
    }

    /// Overwrites `*slot` when `key` is present.
    pub fn set<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(e) = self.get(key) {
            *slot = self.parse_value(e)?;
        }
        Ok(())
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        let e = self.get(key).ok_or_else(|| Error::Parse {
            file: self.name.clone(),
            line: 0,
            reason: format!("missing key `{key}`"),
        })?;
        self.parse_value(e)
    }

    /// Whitespace- or comma-separated list of numbers.
    pub fn numbers(&self, e: &Entry) -> Result<Vec<f64>> {
        e.value
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>().map_err(|_| Error::Parse {
                    file: self.name.clone(),
                    line: e.line,
                    reason: format!("bad number `{s}` in `{}`", e.key),
                })
            })
            .collect()
    }

    pub fn unknown_keys(&self, known: &[&str]) -> Vec<&Entry> {
        self.entries
            .iter()
            .filter(|e| !known.contains(&e.key.as_str()))
            .collect()
    }
}

/// Small builder for writing key-value files.
#[derive(Debug, Default)]
pub struct KvWriter {
    out: String,
}

impl KvWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn comment(&mut self, text: &str) -> &mut Self {
        let _ = writeln!(self.out, "# {text}");
        self
    }

    pub fn put(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        let _ = writeln!(self.out, "{key} = {value}");
        self
    }

    pub fn put_list(&mut self, key: &str, values: &[f64]) -> &mut Self {
        let joined: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        self.put(key, joined.join(" "))
    }

    pub fn finish(&self) -> String {
        self.out.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_repeats() {
        let kv = KvFile::parse(
            "t",
            "# header\nalpha = 1.5\nobstacle = 1 2 0.5 # tree\nobstacle = 3, 4, 0.25\n\nalpha=2\n",
        )
        .unwrap();
        assert_eq!(kv.require::<f64>("alpha").unwrap(), 2.0);
        let obs: Vec<Vec<f64>> = kv.all("obstacle").map(|e| kv.numbers(e).unwrap()).collect();
        assert_eq!(obs, vec![vec![1.0, 2.0, 0.5], vec![3.0, 4.0, 0.25]]);
    }

    #[test]
    fn reports_line_of_bad_entry() {
        let err = KvFile::parse("cfg", "a = 1\nnot a pair\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let kv = KvFile::parse("cfg", "seeds = ten").unwrap();
        assert!(kv.require::<usize>("seeds").is_err());
    }
}
