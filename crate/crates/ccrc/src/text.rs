// SPDX-License-Identifier: Apache-2.0

//! Line-oriented text helpers shared by every file format.
//!
//! Every file starts with a magic line `<magic> <version>`. Reals are written
//! with Rust's shortest round-trip formatting, so reading back what was
//! written reproduces the same bits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn real(v: f64) -> String {
    format!("{v:?}")
}

pub fn reals(values: impl IntoIterator<Item = f64>) -> String {
    let mut s = String::new();
    for (i, v) in values.into_iter().enumerate() {
        if i > 0 {
            s.push('\t');
        }
        let _ = write!(s, "{v:?}");
    }
    s
}

pub fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::read(path, e))
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::write(dir, e))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| Error::write(path, e))
}

/// Cursor over the lines of a document, with 1-based line numbers for errors.
pub struct Cursor<'a> {
    what: &'static str,
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(what: &'static str, text: &'a str) -> Self {
        Cursor {
            what,
            lines: text.lines().collect(),
            pos: 0,
        }
    }

    pub fn err(&self, message: impl Into<String>) -> Error {
        Error::parse(self.what, self.pos.max(1), message)
    }

    /// Checks the magic line and returns nothing if the version matches.
    pub fn expect_magic(&mut self, magic: &str, version: u32) -> Result<()> {
        let line = self.next().ok_or_else(|| self.err("empty file"))?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(magic) {
            return Err(self.err(format!("missing '{magic}' header")));
        }
        let found: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| self.err("missing format version"))?;
        if found != version {
            return Err(Error::Version {
                what: self.what,
                expected: version,
                found,
            });
        }
        Ok(())
    }

    pub fn peek(&self) -> Option<&'a str> {
        self.lines.get(self.pos).copied()
    }

    #[allow(clippy::should_implement_trait)]
    pub fn next(&mut self) -> Option<&'a str> {
        let l = self.lines.get(self.pos).copied();
        if l.is_some() {
            self.pos += 1;
        }
        l
    }

    pub fn next_required(&mut self, expecting: &str) -> Result<&'a str> {
        self.next().ok_or_else(|| self.err(format!("unexpected end of file, expecting {expecting}")))
    }

    pub fn expect_line(&mut self, expected: &str) -> Result<()> {
        let line = self.next_required(expected)?;
        if line != expected {
            return Err(self.err(format!("expected '{expected}', found '{line}'")));
        }
        Ok(())
    }

    pub fn at_end(&self) -> bool {
        self.pos >= self.lines.len()
    }

    /// Reads `key=value` lines until a line starting with `[` or the end.
    pub fn key_values(&mut self) -> Result<KeyValues> {
        let mut map = BTreeMap::new();
        while let Some(line) = self.peek() {
            if line.starts_with('[') {
                break;
            }
            self.pos += 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (k, v) = trimmed
                .split_once('=')
                .ok_or_else(|| self.err(format!("expected key=value, found '{trimmed}'")))?;
            if map.insert(k.trim().to_string(), (self.pos, v.trim().to_string())).is_some() {
                return Err(self.err(format!("duplicate key '{}'", k.trim())));
            }
        }
        Ok(KeyValues { what: self.what, map })
    }

    /// Parses one tab-separated row.
    pub fn row<T: FromStr>(&mut self, expected_len: usize) -> Result<Vec<T>> {
        let line = self.next_required("a data row")?;
        let fields: Vec<&str> = if line.is_empty() { Vec::new() } else { line.split('\t').collect() };
        if fields.len() != expected_len {
            return Err(self.err(format!("expected {expected_len} fields, found {}", fields.len())));
        }
        fields
            .iter()
            .map(|f| f.parse::<T>().map_err(|_| self.err(format!("cannot parse '{f}'"))))
            .collect()
    }

    /// Reads `[matrix <name> <rows> <cols>]` followed by `rows` lines.
    pub fn matrix(&mut self, name: &str) -> Result<DMatrix<f64>> {
        let header = self.next_required("a matrix block")?;
        let dims = header
            .strip_prefix(&format!("[matrix {name} "))
            .and_then(|r| r.strip_suffix(']'))
            .ok_or_else(|| self.err(format!("expected matrix '{name}', found '{header}'")))?;
        let (r, c) = dims.split_once(' ').ok_or_else(|| self.err("bad matrix dimensions"))?;
        let rows: usize = r.parse().map_err(|_| self.err("bad row count"))?;
        let cols: usize = c.parse().map_err(|_| self.err("bad column count"))?;
        let mut m = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            let row: Vec<f64> = self.row(cols)?;
            for (j, v) in row.into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
    }

    pub fn vector(&mut self, name: &str) -> Result<DVector<f64>> {
        let m = self.matrix(name)?;
        if m.ncols() != 1 && m.nrows() > 0 {
            return Err(self.err(format!("'{name}' must have one column")));
        }
        Ok(DVector::from_iterator(m.nrows(), m.iter().copied()))
    }
}

pub fn write_matrix(out: &mut String, name: &str, m: &DMatrix<f64>) {
    let _ = writeln!(out, "[matrix {name} {} {}]", m.nrows(), m.ncols());
    for row in m.row_iter() {
        out.push_str(&reals(row.iter().copied()));
        out.push('\n');
    }
}

pub fn write_vector(out: &mut String, name: &str, v: &DVector<f64>) {
    let _ = writeln!(out, "[matrix {name} {} 1]", v.len());
    for x in v.iter() {
        out.push_str(&real(*x));
        out.push('\n');
    }
}

/// Parsed `key=value` block that tracks which keys were consumed.
pub struct KeyValues {
    what: &'static str,
    map: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn raw(&mut self, key: &str) -> Option<(usize, String)> {
        self.map.remove(key)
    }

    pub fn opt<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::parse(self.what, line, format!("cannot parse {key}='{v}'"))),
        }
    }

    pub fn req<T: FromStr>(&mut self, key: &str) -> Result<T> {
        self.opt(key)?
            .ok_or_else(|| Error::parse(self.what, 0, format!("missing key '{key}'")))
    }

    pub fn flag(&mut self, key: &str) -> Result<Option<bool>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some((line, v)) => match v.as_str() {
                "true" | "on" | "yes" => Ok(Some(true)),
                "false" | "off" | "no" => Ok(Some(false)),
                _ => Err(Error::parse(self.what, line, format!("{key} must be true or false"))),
            },
        }
    }

    /// Fails on any key that was not consumed.
    pub fn finish(self) -> Result<()> {
        match self.map.into_iter().next() {
            None => Ok(()),
            Some((k, (line, _))) => Err(Error::parse(self.what, line, format!("unknown key '{k}'"))),
        }
    }
}
