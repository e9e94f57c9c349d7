//! Sectioned plain-text dialect shared by feeder files, run configs, partition
//! exports, manifests and model files.
//!
//! ```text
//! # comment
//! [section]
//! token token token   # trailing comment
//! ```
//!
//! Tokens are whitespace separated. Every content line must live inside a
//! section. Line and column numbers are 1-based.

use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}, column {column}: {message}")]
pub struct SyntaxError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl SyntaxError {
    pub fn new(line: usize, column: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            column,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub text: String,
    pub column: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub number: usize,
    pub tokens: Vec<Token>,
}

impl Line {
    pub fn key(&self) -> &str {
        &self.tokens[0].text
    }

    /// Tokens after the key.
    pub fn values(&self) -> &[Token] {
        &self.tokens[1..]
    }

    pub fn error_at(&self, token: usize, message: impl Into<String>) -> SyntaxError {
        let column = self
            .tokens
            .get(token)
            .map(|t| t.column)
            .unwrap_or_else(|| self.tokens.last().map(|t| t.column + t.text.len()).unwrap_or(1));
        SyntaxError::new(self.number, column, message)
    }

    pub fn expect_len(&self, min: usize, max: usize) -> Result<(), SyntaxError> {
        let n = self.tokens.len();
        if n < min {
            return Err(self.error_at(n, format!("expected at least {min} fields, found {n}")));
        }
        if n > max {
            return Err(self.error_at(max, format!("expected at most {max} fields, found {n}")));
        }
        Ok(())
    }

    pub fn f64_at(&self, i: usize) -> Result<f64, SyntaxError> {
        let tok = self
            .tokens
            .get(i)
            .ok_or_else(|| self.error_at(i, "missing numeric field"))?;
        parse_f64(tok).map_err(|m| SyntaxError::new(self.number, tok.column, m))
    }

    pub fn usize_at(&self, i: usize) -> Result<usize, SyntaxError> {
        let tok = self
            .tokens
            .get(i)
            .ok_or_else(|| self.error_at(i, "missing integer field"))?;
        tok.text
            .parse::<usize>()
            .map_err(|_| SyntaxError::new(self.number, tok.column, format!("invalid integer `{}`", tok.text)))
    }

    pub fn u64_at(&self, i: usize) -> Result<u64, SyntaxError> {
        let tok = self
            .tokens
            .get(i)
            .ok_or_else(|| self.error_at(i, "missing integer field"))?;
        tok.text
            .parse::<u64>()
            .map_err(|_| SyntaxError::new(self.number, tok.column, format!("invalid integer `{}`", tok.text)))
    }

    pub fn str_at(&self, i: usize) -> Result<&str, SyntaxError> {
        self.tokens
            .get(i)
            .map(|t| t.text.as_str())
            .ok_or_else(|| self.error_at(i, "missing field"))
    }

    /// All values after the key parsed as floats.
    pub fn f64_values(&self) -> Result<Vec<f64>, SyntaxError> {
        (1..self.tokens.len()).map(|i| self.f64_at(i)).collect()
    }
}

fn parse_f64(tok: &Token) -> Result<f64, String> {
    let v = tok
        .text
        .parse::<f64>()
        .map_err(|_| format!("invalid number `{}`", tok.text))?;
    if !v.is_finite() {
        return Err(format!("non-finite number `{}`", tok.text));
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub line: usize,
    pub lines: Vec<Line>,
}

impl Section {
    /// First line whose key equals `key`.
    pub fn get(&self, key: &str) -> Option<&Line> {
        self.lines.iter().find(|l| l.key() == key)
    }

    pub fn require(&self, key: &str) -> Result<&Line, SyntaxError> {
        self.get(key).ok_or_else(|| {
            SyntaxError::new(self.line, 1, format!("section [{}] is missing `{key}`", self.name))
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Document {
    pub sections: Vec<Section>,
}

impl Document {
    pub fn parse(text: &str) -> Result<Self, SyntaxError> {
        let mut sections: Vec<Section> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let number = idx + 1;
            let content = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let trimmed = content.trim();
            if trimmed.is_empty() {
                continue;
            }
            if trimmed.starts_with('[') {
                let col = content.find('[').unwrap() + 1;
                let Some(inner) = trimmed.strip_prefix('[').and_then(|s| s.strip_suffix(']')) else {
                    return Err(SyntaxError::new(number, col, "unterminated section header"));
                };
                let name = inner.trim();
                if name.is_empty() || name.contains(char::is_whitespace) {
                    return Err(SyntaxError::new(number, col, "invalid section name"));
                }
                sections.push(Section {
                    name: name.to_string(),
                    line: number,
                    lines: Vec::new(),
                });
                continue;
            }
            let tokens = tokenize(content);
            match sections.last_mut() {
                Some(s) => s.lines.push(Line { number, tokens }),
                None => {
                    return Err(SyntaxError::new(
                        number,
                        tokens[0].column,
                        "content outside of any [section]",
                    ))
                }
            }
        }
        Ok(Self { sections })
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Section, SyntaxError> {
        self.section(name)
            .ok_or_else(|| SyntaxError::new(1, 1, format!("missing section [{name}]")))
    }
}

fn tokenize(content: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    for (i, ch) in content.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                tokens.push(Token {
                    text: content[s..i].to_string(),
                    column: content[..s].chars().count() + 1,
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        tokens.push(Token {
            text: content[s..].to_string(),
            column: content[..s].chars().count() + 1,
        });
    }
    tokens
}

/// Incremental writer for the same dialect.
#[derive(Debug, Default)]
pub struct Writer {
    buf: String,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn comment(&mut self, text: &str) -> &mut Self {
        for l in text.lines() {
            let _ = writeln!(self.buf, "# {l}");
        }
        self
    }

    pub fn section(&mut self, name: &str) -> &mut Self {
        if !self.buf.is_empty() && !self.buf.ends_with("\n\n") {
            self.buf.push('\n');
        }
        let _ = writeln!(self.buf, "[{name}]");
        self
    }

    pub fn line<I, S>(&mut self, tokens: I) -> &mut Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut first = true;
        for t in tokens {
            if !first {
                self.buf.push(' ');
            }
            first = false;
            self.buf.push_str(t.as_ref());
        }
        self.buf.push('\n');
        self
    }

    pub fn finish(self) -> String {
        self.buf
    }
}

/// Float with 17 significant digits; parses back bit-exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_comments() {
        let doc = Document::parse("# head\n[a]\nx 1 2 # tail\n\n[b]\n  y   z\n").unwrap();
        assert_eq!(doc.sections.len(), 2);
        let a = doc.section("a").unwrap();
        assert_eq!(a.lines[0].key(), "x");
        assert_eq!(a.lines[0].f64_values().unwrap(), vec![1.0, 2.0]);
        let y = &doc.section("b").unwrap().lines[0];
        assert_eq!(y.tokens[1].column, 7);
        assert_eq!(y.number, 6);
    }

    #[test]
    fn rejects_orphan_content() {
        let err = Document::parse("\n  foo bar\n").unwrap_err();
        assert_eq!((err.line, err.column), (2, 3));
    }

    #[test]
    fn rejects_bad_header() {
        let err = Document::parse("[abc\n").unwrap_err();
        assert_eq!(err.line, 1);
    }

    #[test]
    fn bad_number_reports_column() {
        let doc = Document::parse("[s]\nk 1.5 zz\n").unwrap();
        let err = doc.sections[0].lines[0].f64_at(2).unwrap_err();
        assert_eq!((err.line, err.column), (2, 7));
    }

    #[test]
    fn f64_format_round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 12345.678901234567] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }
}
