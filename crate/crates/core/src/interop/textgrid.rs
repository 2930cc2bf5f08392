//! Praat TextGrid text files.
//!
//! Both the long ("ooTextFile") and the short layout are read. The reader is
//! token based, like Praat's own: it picks numbers, quoted strings and `<flag>`
//! tokens in order and ignores the `key =` text between them, except that a
//! key which is present must name the value being read. Only the long layout
//! is written.

use std::fmt::Write as _;

use crate::time::Time;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TextGridError {
    #[error("line {line}: expected {expected}, got {got}")]
    Parse {
        line: usize,
        expected: String,
        got: String,
    },
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TierKind {
    IntervalTier,
    TextTier,
}

impl TierKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TierKind::IntervalTier => "IntervalTier",
            TierKind::TextTier => "TextTier",
        }
    }
}

/// One interval (`t1 < t2`) or point (`t1 == t2`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextGridItem {
    pub t1: Time,
    pub t2: Time,
    pub text: String,
}

impl TextGridItem {
    pub fn new(t1: Time, t2: Time, text: &str) -> Self {
        TextGridItem {
            t1,
            t2,
            text: text.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextGridTier {
    pub name: String,
    pub kind: TierKind,
    pub xmin: Time,
    pub xmax: Time,
    pub items: Vec<TextGridItem>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextGridDoc {
    pub xmin: Time,
    pub xmax: Time,
    pub tiers: Vec<TextGridTier>,
}

impl TextGridDoc {
    pub fn tier(&self, name: &str) -> Option<&TextGridTier> {
        self.tiers.iter().find(|t| t.name == name)
    }

    /// Structural problems that do not prevent reading: items outside the
    /// grid span, unsorted or overlapping items, points with a span.
    pub fn findings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.xmin > self.xmax {
            out.push(format!("grid xmin {} is after xmax {}", self.xmin, self.xmax));
        }
        for tier in &self.tiers {
            if tier.xmin < self.xmin || tier.xmax > self.xmax {
                out.push(format!("tier {:?} extends beyond the grid", tier.name));
            }
            let mut previous: Option<&TextGridItem> = None;
            for (i, item) in tier.items.iter().enumerate() {
                let n = i + 1;
                if item.t1 < tier.xmin || item.t2 > tier.xmax {
                    out.push(format!("tier {:?} item {n} lies outside the tier span", tier.name));
                }
                match tier.kind {
                    TierKind::IntervalTier if item.t1 >= item.t2 => {
                        out.push(format!("tier {:?} interval {n} is empty or reversed", tier.name))
                    }
                    TierKind::TextTier if item.t1 != item.t2 => {
                        out.push(format!("tier {:?} point {n} has a span", tier.name))
                    }
                    _ => {}
                }
                if let Some(p) = previous {
                    if item.t1 < p.t2 || (tier.kind == TierKind::TextTier && item.t1 <= p.t1) {
                        out.push(format!("tier {:?} item {n} overlaps or precedes item {}", tier.name, n - 1));
                    }
                }
                previous = Some(item);
            }
        }
        out
    }
}

/// Decodes bytes: UTF-16 when a BOM says so, otherwise UTF-8 (BOM optional).
fn decode(bytes: &[u8]) -> Result<String, TextGridError> {
    let utf16 = |big_endian: bool| -> Result<String, TextGridError> {
        let body = &bytes[2..];
        if !body.len().is_multiple_of(2) {
            return Err(TextGridError::UnsupportedEncoding("odd byte count in UTF-16 input".into()));
        }
        let units = body.chunks_exact(2).map(|c| {
            if big_endian {
                u16::from_be_bytes([c[0], c[1]])
            } else {
                u16::from_le_bytes([c[0], c[1]])
            }
        });
        char::decode_utf16(units)
            .collect::<Result<String, _>>()
            .map_err(|e| TextGridError::UnsupportedEncoding(format!("invalid UTF-16: {e}")))
    };
    match bytes {
        [0xFE, 0xFF, ..] => utf16(true),
        [0xFF, 0xFE, ..] => utf16(false),
        [0xEF, 0xBB, 0xBF, rest @ ..] => std::str::from_utf8(rest)
            .map(str::to_string)
            .map_err(|e| TextGridError::UnsupportedEncoding(format!("invalid UTF-8: {e}"))),
        _ => std::str::from_utf8(bytes)
            .map(str::to_string)
            .map_err(|e| TextGridError::UnsupportedEncoding(format!("invalid UTF-8: {e}"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Number(String),
    Text(String),
    Flag(String),
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    /// Key text seen since the previous value, e.g. `xmin =`.
    key: String,
    line: usize,
}

impl Token {
    fn describe(&self) -> String {
        match &self.kind {
            TokenKind::Number(n) => format!("number {n}"),
            TokenKind::Text(t) => format!("string {t:?}"),
            TokenKind::Flag(f) => format!("<{f}>"),
        }
    }
}

fn tokenize(text: &str) -> Result<Vec<Token>, TextGridError> {
    let mut tokens = Vec::new();
    let mut chars = text.char_indices().peekable();
    let mut line = 1;
    let mut key = String::new();
    while let Some((_, c)) = chars.next() {
        match c {
            '\n' => line += 1,
            c if c.is_whitespace() => {}
            '"' => {
                let start_line = line;
                let mut s = String::new();
                loop {
                    match chars.next() {
                        None => {
                            return Err(TextGridError::Parse {
                                line: start_line,
                                expected: "closing quote".into(),
                                got: "end of file".into(),
                            })
                        }
                        Some((_, '"')) => {
                            if matches!(chars.peek(), Some((_, '"'))) {
                                chars.next();
                                s.push('"');
                            } else {
                                break;
                            }
                        }
                        Some((_, ch)) => {
                            if ch == '\n' {
                                line += 1;
                            }
                            s.push(ch);
                        }
                    }
                }
                tokens.push(Token {
                    kind: TokenKind::Text(s),
                    key: std::mem::take(&mut key),
                    line: start_line,
                });
            }
            '<' => {
                let mut flag = String::new();
                loop {
                    match chars.next() {
                        Some((_, '>')) => break,
                        Some((_, '\n')) | None => {
                            return Err(TextGridError::Parse {
                                line,
                                expected: "closing '>'".into(),
                                got: "end of line".into(),
                            })
                        }
                        Some((_, ch)) => flag.push(ch),
                    }
                }
                tokens.push(Token {
                    kind: TokenKind::Flag(flag),
                    key: std::mem::take(&mut key),
                    line,
                });
            }
            '[' => {
                // Index annotations such as `item [1]:` are not values.
                for (_, ch) in chars.by_ref() {
                    if ch == ']' {
                        break;
                    }
                    if ch == '\n' {
                        line += 1;
                        break;
                    }
                }
            }
            '!' => {
                // Comment to end of line.
                for (_, ch) in chars.by_ref() {
                    if ch == '\n' {
                        line += 1;
                        break;
                    }
                }
            }
            c if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => {
                let mut number = String::from(c);
                while let Some(&(_, ch)) = chars.peek() {
                    if ch.is_ascii_alphanumeric() || matches!(ch, '.' | '-' | '+') {
                        number.push(ch);
                        chars.next();
                    } else {
                        break;
                    }
                }
                tokens.push(Token {
                    kind: TokenKind::Number(number),
                    key: std::mem::take(&mut key),
                    line,
                });
            }
            c => {
                key.push(c);
                while let Some(&(_, ch)) = chars.peek() {
                    let value_start = ch.is_ascii_digit() || matches!(ch, '-' | '+' | '.');
                    if matches!(ch, '"' | '<' | '[' | '\n') || value_start && key.ends_with(char::is_whitespace) {
                        break;
                    }
                    key.push(ch);
                    chars.next();
                }
                key.push(' ');
            }
        }
    }
    Ok(tokens)
}

struct Reader {
    tokens: Vec<Token>,
    pos: usize,
    last_line: usize,
}

impl Reader {
    fn error(&self, expected: &str) -> TextGridError {
        match self.tokens.get(self.pos) {
            Some(t) => TextGridError::Parse {
                line: t.line,
                expected: expected.to_string(),
                got: t.describe(),
            },
            None => TextGridError::Parse {
                line: self.last_line,
                expected: expected.to_string(),
                got: "end of file".into(),
            },
        }
    }

    /// Takes the next token, checking that its key (if any) mentions one of `names`.
    fn next(&mut self, names: &[&str], expected: &str) -> Result<&Token, TextGridError> {
        let Some(token) = self.tokens.get(self.pos) else {
            return Err(self.error(expected));
        };
        let key = token.key.to_ascii_lowercase();
        if !key.trim().is_empty() && !names.is_empty() && !names.iter().any(|n| key.contains(n)) {
            return Err(TextGridError::Parse {
                line: token.line,
                expected: expected.to_string(),
                got: format!("{} after {:?}", token.describe(), token.key.trim()),
            });
        }
        self.pos += 1;
        Ok(&self.tokens[self.pos - 1])
    }

    fn time(&mut self, names: &[&str], expected: &str) -> Result<Time, TextGridError> {
        let token = self.next(names, expected)?.clone();
        match &token.kind {
            TokenKind::Number(n) => Time::parse_secs(n).map_err(|e| TextGridError::Parse {
                line: token.line,
                expected: expected.to_string(),
                got: e.to_string(),
            }),
            _ => {
                self.pos -= 1;
                Err(self.error(expected))
            }
        }
    }

    fn count(&mut self, names: &[&str], expected: &str) -> Result<usize, TextGridError> {
        let token = self.next(names, expected)?.clone();
        match &token.kind {
            TokenKind::Number(n) => n.parse::<usize>().map_err(|_| TextGridError::Parse {
                line: token.line,
                expected: expected.to_string(),
                got: format!("number {n}"),
            }),
            _ => {
                self.pos -= 1;
                Err(self.error(expected))
            }
        }
    }

    fn text(&mut self, names: &[&str], expected: &str) -> Result<String, TextGridError> {
        let token = self.next(names, expected)?.clone();
        match token.kind {
            TokenKind::Text(s) => Ok(s),
            _ => {
                self.pos -= 1;
                Err(self.error(expected))
            }
        }
    }

    fn peek_flag(&self) -> Option<&str> {
        match self.tokens.get(self.pos).map(|t| &t.kind) {
            Some(TokenKind::Flag(f)) => Some(f),
            _ => None,
        }
    }
}

pub fn parse_textgrid(bytes: &[u8]) -> Result<TextGridDoc, TextGridError> {
    let text = decode(bytes)?;
    let tokens = tokenize(&text)?;
    let last_line = text.lines().count().max(1);
    let mut r = Reader {
        tokens,
        pos: 0,
        last_line,
    };

    let file_type = r.text(&["file type"], "File type \"ooTextFile\"")?;
    if !file_type.starts_with("ooTextFile") {
        r.pos -= 1;
        return Err(r.error("File type \"ooTextFile\""));
    }
    let class = r.text(&["object class"], "Object class \"TextGrid\"")?;
    if class != "TextGrid" {
        r.pos -= 1;
        return Err(r.error("Object class \"TextGrid\""));
    }
    let xmin = r.time(&["xmin"], "xmin")?;
    let xmax = r.time(&["xmax"], "xmax")?;
    let size = match r.peek_flag() {
        Some("exists") => {
            r.pos += 1;
            r.count(&["size"], "tier count")?
        }
        Some("absent") => {
            r.pos += 1;
            0
        }
        _ => return Err(r.error("<exists> or <absent>")),
    };

    let mut tiers = Vec::new();
    for _ in 0..size {
        let class = r.text(&["class"], "tier class")?;
        let kind = match class.as_str() {
            "IntervalTier" => TierKind::IntervalTier,
            "TextTier" => TierKind::TextTier,
            _ => {
                r.pos -= 1;
                return Err(r.error("\"IntervalTier\" or \"TextTier\""));
            }
        };
        let name = r.text(&["name"], "tier name")?;
        let tier_xmin = r.time(&["xmin"], "tier xmin")?;
        let tier_xmax = r.time(&["xmax"], "tier xmax")?;
        let count = r.count(&["size"], "item count")?;
        let mut items = Vec::new();
        for _ in 0..count {
            let item = match kind {
                TierKind::IntervalTier => {
                    let t1 = r.time(&["xmin"], "interval xmin")?;
                    let t2 = r.time(&["xmax"], "interval xmax")?;
                    let text = r.text(&["text"], "interval text")?;
                    TextGridItem { t1, t2, text }
                }
                TierKind::TextTier => {
                    let t = r.time(&["number", "time"], "point time")?;
                    let text = r.text(&["mark", "text"], "point mark")?;
                    TextGridItem { t1: t, t2: t, text }
                }
            };
            items.push(item);
        }
        tiers.push(TextGridTier {
            name,
            kind,
            xmin: tier_xmin,
            xmax: tier_xmax,
            items,
        });
    }
    if r.pos < r.tokens.len() {
        return Err(r.error("end of file"));
    }
    Ok(TextGridDoc { xmin, xmax, tiers })
}

fn quoted(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

/// Long-format UTF-8 serialization, laid out as Praat writes it.
pub fn write_textgrid(doc: &TextGridDoc) -> Vec<u8> {
    let mut out = String::new();
    out.push_str("File type = \"ooTextFile\"\nObject class = \"TextGrid\"\n\n");
    let _ = writeln!(out, "xmin = {} ", doc.xmin);
    let _ = writeln!(out, "xmax = {} ", doc.xmax);
    if doc.tiers.is_empty() {
        out.push_str("tiers? <absent> \n");
        return out.into_bytes();
    }
    out.push_str("tiers? <exists> \n");
    let _ = writeln!(out, "size = {} ", doc.tiers.len());
    out.push_str("item []: \n");
    for (i, tier) in doc.tiers.iter().enumerate() {
        let _ = writeln!(out, "    item [{}]:", i + 1);
        let _ = writeln!(out, "        class = {} ", quoted(tier.kind.as_str()));
        let _ = writeln!(out, "        name = {} ", quoted(&tier.name));
        let _ = writeln!(out, "        xmin = {} ", tier.xmin);
        let _ = writeln!(out, "        xmax = {} ", tier.xmax);
        match tier.kind {
            TierKind::IntervalTier => {
                let _ = writeln!(out, "        intervals: size = {} ", tier.items.len());
                for (j, item) in tier.items.iter().enumerate() {
                    let _ = writeln!(out, "        intervals [{}]:", j + 1);
                    let _ = writeln!(out, "            xmin = {} ", item.t1);
                    let _ = writeln!(out, "            xmax = {} ", item.t2);
                    let _ = writeln!(out, "            text = {} ", quoted(&item.text));
                }
            }
            TierKind::TextTier => {
                let _ = writeln!(out, "        points: size = {} ", tier.items.len());
                for (j, item) in tier.items.iter().enumerate() {
                    let _ = writeln!(out, "        points [{}]:", j + 1);
                    let _ = writeln!(out, "            number = {} ", item.t1);
                    let _ = writeln!(out, "            mark = {} ", quoted(&item.text));
                }
            }
        }
    }
    out.into_bytes()
}
