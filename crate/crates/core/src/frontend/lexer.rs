use serde::{Deserialize, Serialize};

/// Byte range into the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn join(self, other: Span) -> Span {
        Span::new(self.start.min(other.start), self.end.max(other.end))
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Number(f64),
    Str(String),
    LineComment(String),
    BlockComment,
    /// Operators and punctuation.
    Punct(&'static str),
    /// A character outside the language.
    Unknown(char),
    UnterminatedString,
    UnterminatedComment,
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
    pub line: usize,
}

impl Token {
    pub fn is_ident(&self, s: &str) -> bool {
        matches!(&self.tok, Tok::Ident(x) if x == s)
    }

    pub fn is_punct(&self, s: &str) -> bool {
        matches!(&self.tok, Tok::Punct(p) if *p == s)
    }

    pub fn is_trivia(&self) -> bool {
        matches!(self.tok, Tok::LineComment(_) | Tok::BlockComment)
    }
}

pub const KEYWORDS: &[&str] = &[
    "algorithm", "and", "annotation", "block", "class", "connect", "connector", "constant", "discrete",
    "each", "else", "elseif", "elsewhen", "encapsulated", "end", "equation", "extends", "false", "final",
    "flow", "for", "function", "if", "import", "in", "initial", "inner", "input", "loop", "model", "not",
    "or", "outer", "output", "package", "parameter", "partial", "protected", "public", "record",
    "redeclare", "replaceable", "stream", "then", "true", "type", "when", "while", "within",
];

pub fn is_keyword(s: &str) -> bool {
    KEYWORDS.contains(&s)
}

const PUNCT: &[&str] = &[
    ":=", "==", "<>", "<=", ">=", ".^", ".*", "./", ".+", ".-", "(", ")", "[", "]", "{", "}", ";", ",", "=",
    "+", "-", "*", "/", "^", "<", ">", ".", ":",
];

/// Splits source text into tokens. Never fails: unknown characters and
/// unterminated literals become tokens the parser reports.
pub fn lex(src: &str) -> Vec<Token> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let mut line = 1;
    while i < bytes.len() {
        let c = bytes[i];
        if c == b'\n' {
            line += 1;
            i += 1;
            continue;
        }
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let start_line = line;
        let tok = if src[i..].starts_with("//") {
            let end = src[i..].find('\n').map_or(bytes.len(), |e| i + e);
            let text = src[i + 2..end].trim().to_string();
            i = end;
            Tok::LineComment(text)
        } else if src[i..].starts_with("/*") {
            match src[i + 2..].find("*/") {
                Some(e) => {
                    let end = i + 2 + e + 2;
                    line += src[i..end].matches('\n').count();
                    i = end;
                    Tok::BlockComment
                }
                None => {
                    line += src[i..].matches('\n').count();
                    i = bytes.len();
                    Tok::UnterminatedComment
                }
            }
        } else if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            Tok::Ident(src[start..i].to_string())
        } else if c == b'\'' {
            // quoted identifier
            match src[i + 1..].find(['\'', '\n']) {
                Some(e) if bytes[i + 1 + e] == b'\'' => {
                    i = i + 1 + e + 1;
                    Tok::Ident(src[start + 1..i - 1].to_string())
                }
                _ => {
                    i += 1;
                    Tok::Unknown('\'')
                }
            }
        } else if c.is_ascii_digit() || (c == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'.' {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            Tok::Number(src[start..i].parse().unwrap_or(f64::NAN))
        } else if c == b'"' {
            let mut j = i + 1;
            let mut text = String::new();
            let mut closed = false;
            while j < bytes.len() {
                match bytes[j] {
                    b'\\' if j + 1 < bytes.len() => {
                        let ch = src[j + 1..].chars().next().expect("char boundary");
                        if ch == '\n' {
                            line += 1;
                        }
                        text.push(ch);
                        j += 1 + ch.len_utf8();
                    }
                    b'"' => {
                        closed = true;
                        j += 1;
                        break;
                    }
                    _ => {
                        let ch = src[j..].chars().next().expect("char boundary");
                        if ch == '\n' {
                            line += 1;
                        }
                        text.push(ch);
                        j += ch.len_utf8();
                    }
                }
            }
            i = j;
            if closed {
                Tok::Str(text)
            } else {
                Tok::UnterminatedString
            }
        } else if let Some(p) = PUNCT.iter().find(|p| src[i..].starts_with(**p)) {
            i += p.len();
            Tok::Punct(p)
        } else {
            let ch = src[i..].chars().next().expect("char boundary");
            i += ch.len_utf8();
            Tok::Unknown(ch)
        };
        out.push(Token {
            tok,
            span: Span::new(start, i),
            line: start_line,
        });
    }
    out.push(Token {
        tok: Tok::Eof,
        span: Span::new(src.len(), src.len()),
        line,
    });
    out
}

/// 1-based line and column (in characters) of a byte offset.
pub fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(src.len());
    let mut off = offset;
    while !src.is_char_boundary(off) {
        off -= 1;
    }
    let before = &src[..off];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}
