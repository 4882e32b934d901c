//! Decoder for the Python-repr tuple literals stored in the shared-task CSVs.
//!
//! Grammar (whitespace allowed between tokens):
//!
//! ```text
//! Tuple    := '(' QStr ',' QStr [',' LangList] [','] ')'
//! OcrList  := '[' [Tuple {',' Tuple}] ']'
//! Verdicts := '[' [QStr {',' QStr}] ']'
//! LangList := '[' ['(' QStr ',' Float ')' {',' '(' QStr ',' Float ')'}] ']'
//! QStr     := single- or double-quoted string with backslash escapes | None
//! ```

use std::fmt;

use super::LangTuple;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiteralError {
    /// Character offset into the field.
    pub position: usize,
    pub message: String,
}

impl fmt::Display for LiteralError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at offset {}", self.message, self.position)
    }
}

impl std::error::Error for LiteralError {}

type Parse<T> = Result<T, LiteralError>;

struct Cursor<'a> {
    chars: Vec<char>,
    pos: usize,
    _src: &'a str,
}

impl<'a> Cursor<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            chars: src.chars().collect(),
            pos: 0,
            _src: src,
        }
    }

    fn err<T>(&self, message: impl Into<String>) -> Parse<T> {
        Err(LiteralError {
            position: self.pos,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn expect(&mut self, c: char) -> Parse<()> {
        match self.peek() {
            Some(got) if got == c => {
                self.pos += 1;
                Ok(())
            }
            Some(got) => self.err(format!("expected `{c}`, found `{got}`")),
            None => self.err(format!("expected `{c}`, found end of input")),
        }
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn finish(&mut self) -> Parse<()> {
        match self.peek() {
            None => Ok(()),
            Some(c) => self.err(format!("trailing input starting with `{c}`")),
        }
    }

    /// A quoted string, or the bare word `None` (returned as `None`).
    fn qstr(&mut self) -> Parse<Option<String>> {
        let quote = match self.peek() {
            Some(q @ ('\'' | '"')) => q,
            Some('N') if self.rest_starts_with("None") => {
                self.pos += 4;
                return Ok(None);
            }
            Some(c) => return self.err(format!("expected quoted string, found `{c}`")),
            None => return self.err("expected quoted string, found end of input"),
        };
        self.pos += 1;
        let mut out = String::new();
        loop {
            let Some(&c) = self.chars.get(self.pos) else {
                return self.err("unterminated string");
            };
            self.pos += 1;
            if c == quote {
                return Ok(Some(out));
            }
            if c != '\\' {
                out.push(c);
                continue;
            }
            let Some(&e) = self.chars.get(self.pos) else {
                return self.err("dangling backslash");
            };
            self.pos += 1;
            match e {
                '\\' => out.push('\\'),
                '\'' => out.push('\''),
                '"' => out.push('"'),
                'n' => out.push('\n'),
                'r' => out.push('\r'),
                't' => out.push('\t'),
                '0' => out.push('\0'),
                'a' => out.push('\x07'),
                'b' => out.push('\x08'),
                'f' => out.push('\x0c'),
                'v' => out.push('\x0b'),
                'x' => {
                    let cp = self.hex(2)?;
                    out.push(self.scalar(cp)?);
                }
                'u' => {
                    let mut cp = self.hex(4)?;
                    if (0xD800..0xDC00).contains(&cp) && self.rest_starts_with("\\u") {
                        let save = self.pos;
                        self.pos += 2;
                        let lo = self.hex(4)?;
                        if (0xDC00..0xE000).contains(&lo) {
                            cp = 0x10000 + ((cp - 0xD800) << 10) + (lo - 0xDC00);
                        } else {
                            self.pos = save;
                        }
                    }
                    out.push(self.scalar(cp)?);
                }
                'U' => {
                    let cp = self.hex(8)?;
                    out.push(self.scalar(cp)?);
                }
                // Unknown escapes are kept verbatim, as Python does.
                other => {
                    out.push('\\');
                    out.push(other);
                }
            }
        }
    }

    fn rest_starts_with(&self, s: &str) -> bool {
        let n = s.chars().count();
        self.chars.get(self.pos..self.pos + n).is_some_and(|w| w.iter().copied().eq(s.chars()))
    }

    fn hex(&mut self, n: usize) -> Parse<u32> {
        if self.pos + n > self.chars.len() {
            return self.err("truncated hex escape");
        }
        let digits: String = self.chars[self.pos..self.pos + n].iter().collect();
        match u32::from_str_radix(&digits, 16) {
            Ok(v) => {
                self.pos += n;
                Ok(v)
            }
            Err(_) => self.err(format!("invalid hex escape `{digits}`")),
        }
    }

    fn scalar(&self, cp: u32) -> Parse<char> {
        match char::from_u32(cp) {
            Some(c) => Ok(c),
            None => self.err(format!("escape U+{cp:04X} is not a Unicode scalar value")),
        }
    }

    fn float(&mut self) -> Parse<f64> {
        self.skip_ws();
        let start = self.pos;
        while let Some(&c) = self.chars.get(self.pos) {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '+') {
                self.pos += 1;
            } else {
                break;
            }
        }
        let token: String = self.chars[start..self.pos].iter().collect();
        match token.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => {
                self.pos = start;
                self.err(format!("invalid number `{token}`"))
            }
        }
    }

    fn lang_list(&mut self) -> Parse<Vec<(String, f64)>> {
        self.expect('[')?;
        let mut out = Vec::new();
        if self.eat(']') {
            return Ok(out);
        }
        loop {
            self.expect('(')?;
            let code_pos = self.pos;
            let Some(code) = self.qstr()? else {
                self.pos = code_pos;
                return self.err("language code may not be None");
            };
            self.expect(',')?;
            let conf_pos = self.pos;
            let conf = self.float()?;
            if !(0.0..=1.0).contains(&conf) {
                self.pos = conf_pos;
                return self.err(format!("confidence {conf} outside [0, 1]"));
            }
            if code.is_empty() || !code.bytes().all(|b| b.is_ascii_lowercase()) {
                self.pos = code_pos;
                return self.err(format!("invalid language code `{code}`"));
            }
            self.expect(')')?;
            out.push((code, conf));
            if self.eat(',') {
                if self.eat(']') {
                    return Ok(out);
                }
                continue;
            }
            self.expect(']')?;
            return Ok(out);
        }
    }

    fn tuple(&mut self) -> Parse<LangTuple> {
        self.expect('(')?;
        let original = self.qstr()?.unwrap_or_default();
        self.expect(',')?;
        let translation = self.qstr()?.and_then(non_empty);
        let mut languages = Vec::new();
        if self.eat(',') && self.peek() == Some('[') {
            languages = self.lang_list()?;
            self.eat(',');
        }
        self.expect(')')?;
        Ok(LangTuple {
            original,
            translation,
            languages,
        })
    }
}

fn non_empty(s: String) -> Option<String> {
    if s.is_empty() {
        None
    } else {
        Some(s)
    }
}

/// Empty, `nan` and `NaN` fields carry no value.
pub fn is_null(field: &str) -> bool {
    let t = field.trim();
    t.is_empty() || t == "nan" || t == "NaN"
}

/// Decode a single `(original, translation, [(lang, conf), ...])` literal.
/// Null fields decode to `None`.
pub fn parse_tuple(field: &str) -> Result<Option<LangTuple>, LiteralError> {
    if is_null(field) {
        return Ok(None);
    }
    let mut cur = Cursor::new(field);
    let t = cur.tuple()?;
    cur.finish()?;
    Ok(Some(t))
}

/// Decode a bracketed list of tuples (the `ocr` column).
pub fn parse_tuple_list(field: &str) -> Result<Vec<LangTuple>, LiteralError> {
    if is_null(field) {
        return Ok(Vec::new());
    }
    let mut cur = Cursor::new(field);
    cur.expect('[')?;
    let mut out = Vec::new();
    if !cur.eat(']') {
        loop {
            out.push(cur.tuple()?);
            if cur.eat(',') {
                if cur.eat(']') {
                    break;
                }
                continue;
            }
            cur.expect(']')?;
            break;
        }
    }
    cur.finish()?;
    Ok(out)
}

/// Decode a bracketed list of quoted strings (the `verdicts` column).
pub fn parse_string_list(field: &str) -> Result<Vec<String>, LiteralError> {
    if is_null(field) {
        return Ok(Vec::new());
    }
    let mut cur = Cursor::new(field);
    cur.expect('[')?;
    let mut out = Vec::new();
    if !cur.eat(']') {
        loop {
            let at = cur.pos;
            match cur.qstr()? {
                Some(s) => out.push(s),
                None => {
                    cur.pos = at;
                    return cur.err("verdict may not be None");
                }
            }
            if cur.eat(',') {
                if cur.eat(']') {
                    break;
                }
                continue;
            }
            cur.expect(']')?;
            break;
        }
    }
    cur.finish()?;
    Ok(out)
}

/// Encode a string the way Python's `repr` would, so normalized records can
/// be written back into the CSV form.
pub fn quote(s: &str) -> String {
    let q = if s.contains('\'') && !s.contains('"') {
        '"'
    } else {
        '\''
    };
    let mut out = String::with_capacity(s.len() + 2);
    out.push(q);
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if c == q => {
                out.push('\\');
                out.push(c);
            }
            c if (c as u32) < 0x20 || c == '\x7f' => out.push_str(&format!("\\x{:02x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push(q);
    out
}

/// Inverse of [`parse_tuple`] for a present tuple.
pub fn format_tuple(t: &LangTuple) -> String {
    let langs: Vec<String> = t
        .languages
        .iter()
        .map(|(code, conf)| format!("({}, {conf:?})", quote(code)))
        .collect();
    format!(
        "({}, {}, [{}])",
        quote(&t.original),
        quote(t.translation.as_deref().unwrap_or("")),
        langs.join(", ")
    )
}
