//! Plain-text file formats.
//!
//! Matrix files: the first non-blank line is `rows cols`, followed by `rows`
//! lines of whitespace-separated decimals. Lines starting with `#` are
//! comments.
//!
//! Structured files are flat `key = value` pairs grouped under `[section]`
//! headers. A header of the form `[matrix NAME]` opens an embedded matrix in
//! the format above, which runs until the next header.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::matnum::Matrix;

fn is_comment_or_blank(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with('#')
}

/// Column (1-based) of the `index`-th whitespace-separated token in `line`.
fn token_column(line: &str, index: usize) -> usize {
    let mut count = 0;
    let mut in_token = false;
    for (i, ch) in line.char_indices() {
        if ch.is_whitespace() {
            in_token = false;
        } else if !in_token {
            if count == index {
                return line[..i].chars().count() + 1;
            }
            count += 1;
            in_token = true;
        }
    }
    line.chars().count() + 1
}

/// Parses a matrix from `lines`, where `first_line` is the 1-based number of
/// `lines[0]` in the enclosing file (used in error messages).
fn parse_matrix_lines(lines: &[&str], first_line: usize) -> Result<Matrix> {
    let mut rows_iter = lines
        .iter()
        .enumerate()
        .filter(|(_, l)| !is_comment_or_blank(l))
        .map(|(i, l)| (first_line + i, *l));

    let (hline, header) = rows_iter
        .next()
        .ok_or_else(|| Error::parse(first_line, 1, "missing `rows cols` header"))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(Error::parse(
            hline,
            token_column(header, dims.len().min(2)),
            "expected exactly two integers `rows cols`",
        ));
    }
    let mut parsed = [0usize; 2];
    for (k, tok) in dims.iter().enumerate() {
        parsed[k] = tok
            .parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::parse(hline, token_column(header, k), format!("invalid dimension `{tok}`")))?;
    }
    let [rows, cols] = parsed;

    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (lineno, line) in rows_iter {
        if seen == rows {
            return Err(Error::parse(lineno, 1, format!("unexpected extra row (matrix has {rows} rows)")));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != cols {
            return Err(Error::parse(
                lineno,
                token_column(line, toks.len().min(cols)),
                format!("expected {cols} entries, found {}", toks.len()),
            ));
        }
        for (k, tok) in toks.iter().enumerate() {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::parse(lineno, token_column(line, k), format!("invalid number `{tok}`")))?;
            if !v.is_finite() {
                return Err(Error::parse(lineno, token_column(line, k), format!("non-finite entry `{tok}`")));
            }
            data.push(v);
        }
        seen += 1;
    }
    if seen != rows {
        let last = first_line + lines.len().saturating_sub(1);
        return Err(Error::parse(last, 1, format!("expected {rows} rows, found {seen}")));
    }
    Ok(Matrix::from_row_slice(rows, cols, &data))
}

/// Parses a standalone matrix file.
pub fn parse_matrix(text: &str) -> Result<Matrix> {
    let lines: Vec<&str> = text.lines().collect();
    parse_matrix_lines(&lines, 1)
}

/// Formats a matrix in the shared text format. Entries use Rust's shortest
/// round-trip representation, so parsing the output restores it bit-exactly.
pub fn format_matrix(m: &Matrix) -> String {
    let mut out = String::new();
    writeln!(out, "{} {}", m.nrows(), m.ncols()).unwrap();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:?}", m[(i, j)])).collect();
        writeln!(out, "{}", row.join(" ")).unwrap();
    }
    out
}

/// One `[section]` of a structured file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Section {
    pub name: String,
    pub entries: Vec<(String, String)>,
    /// 1-based line of each entry, parallel to `entries`.
    pub lines: Vec<usize>,
}

impl Section {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn line_of(&self, key: &str) -> usize {
        self.entries
            .iter()
            .position(|(k, _)| k == key)
            .map(|i| self.lines[i])
            .unwrap_or(0)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| {
            Error::parse(0, 0, format!("missing key `{key}` in section [{}]", self.name))
        })
    }

    pub fn parse_value<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse().map_err(|_| {
            Error::parse(
                self.line_of(key),
                1,
                format!("invalid value `{raw}` for `{key}` in section [{}]", self.name),
            )
        })
    }
}

/// A parsed structured file: ordered sections plus named embedded matrices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Document {
    pub sections: Vec<Section>,
    pub matrices: Vec<(String, Matrix)>,
}

impl Document {
    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn require_section(&self, name: &str) -> Result<&Section> {
        self.section(name)
            .ok_or_else(|| Error::parse(0, 0, format!("missing section [{name}]")))
    }

    pub fn matrix(&self, name: &str) -> Option<&Matrix> {
        self.matrices.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn require_matrix(&self, name: &str) -> Result<&Matrix> {
        self.matrix(name)
            .ok_or_else(|| Error::parse(0, 0, format!("missing [matrix {name}] block")))
    }

    pub fn parse(text: &str) -> Result<Document> {
        let lines: Vec<&str> = text.lines().collect();
        let mut doc = Document::default();
        let mut i = 0;
        while i < lines.len() {
            let line = lines[i];
            let lineno = i + 1;
            if is_comment_or_blank(line) {
                i += 1;
                continue;
            }
            let t = line.trim();
            if !(t.starts_with('[') && t.ends_with(']')) {
                return Err(Error::parse(lineno, 1, "expected a `[section]` header"));
            }
            let header = t[1..t.len() - 1].trim();
            if let Some(name) = header.strip_prefix("matrix ") {
                let start = i + 1;
                let mut end = start;
                while end < lines.len() && !lines[end].trim().starts_with('[') {
                    end += 1;
                }
                let m = parse_matrix_lines(&lines[start..end], start + 1)?;
                doc.matrices.push((name.trim().to_string(), m));
                i = end;
                continue;
            }
            if header.is_empty() {
                return Err(Error::parse(lineno, 2, "empty section name"));
            }
            let mut section = Section {
                name: header.to_string(),
                ..Default::default()
            };
            i += 1;
            while i < lines.len() && !lines[i].trim().starts_with('[') {
                let l = lines[i];
                if !is_comment_or_blank(l) {
                    let (k, v) = l.split_once('=').ok_or_else(|| {
                        Error::parse(i + 1, 1, "expected `key = value`")
                    })?;
                    let key = k.trim();
                    if key.is_empty() {
                        return Err(Error::parse(i + 1, 1, "empty key"));
                    }
                    if section.get(key).is_some() {
                        return Err(Error::parse(i + 1, 1, format!("duplicate key `{key}`")));
                    }
                    section.entries.push((key.to_string(), v.trim().to_string()));
                    section.lines.push(i + 1);
                }
                i += 1;
            }
            doc.sections.push(section);
        }
        Ok(doc)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for s in &self.sections {
            writeln!(out, "[{}]", s.name).unwrap();
            for (k, v) in &s.entries {
                writeln!(out, "{k} = {v}").unwrap();
            }
            out.push('\n');
        }
        for (name, m) in &self.matrices {
            writeln!(out, "[matrix {name}]").unwrap();
            out.push_str(&format_matrix(m));
            out.push('\n');
        }
        out
    }
}

impl Section {
    pub fn new(name: impl Into<String>) -> Self {
        Section {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn with(mut self, key: impl Into<String>, value: impl std::fmt::Display) -> Self {
        self.entries.push((key.into(), value.to_string()));
        self.lines.push(0);
        self
    }
}
