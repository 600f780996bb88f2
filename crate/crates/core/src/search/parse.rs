//! Query text to [`Query`].
//!
//! ```text
//! query     := or modifier*
//! or        := and ("OR" and)*
//! and       := unary ("AND" unary)*
//! unary     := "NOT" unary | atom
//! atom      := "(" or ")" | streamref (cmp number)?
//! streamref := ident "@" ident ("." (ident | "quoted"))?
//! modifier  := "FOR" duration | "MERGE" duration
//! duration  := <int>ms | <int>s
//! ```
//!
//! Keywords are case-insensitive. A bare stream reference means `!= 0`.

use super::{CmpOp, Expr, Query, SearchError, StreamRef};

const RESERVED: &[&str] = &["WITHIN", "AFTER", "BEFORE"];

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Number(f64),
    Duration(u64),
    At,
    Dot,
    LParen,
    RParen,
    Cmp(CmpOp),
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("{s:?}"),
            Tok::Str(s) => format!("string {s:?}"),
            Tok::Number(n) => format!("number {n}"),
            Tok::Duration(d) => format!("duration {d}ms"),
            Tok::At => "'@'".into(),
            Tok::Dot => "'.'".into(),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::Cmp(op) => format!("'{}'", op.symbol()),
        }
    }
}

fn syntax(offset: usize, message: impl Into<String>) -> SearchError {
    SearchError::Syntax {
        offset,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, SearchError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let tok = match c {
            b'@' => {
                i += 1;
                Tok::At
            }
            b'.' => {
                i += 1;
                Tok::Dot
            }
            b'(' => {
                i += 1;
                Tok::LParen
            }
            b')' => {
                i += 1;
                Tok::RParen
            }
            b'>' | b'<' | b'=' | b'!' => {
                let two = bytes.get(i + 1) == Some(&b'=');
                let op = match (c, two) {
                    (b'>', true) => CmpOp::Ge,
                    (b'>', false) => CmpOp::Gt,
                    (b'<', true) => CmpOp::Le,
                    (b'<', false) => CmpOp::Lt,
                    (b'=', true) => CmpOp::Eq,
                    (b'!', true) => CmpOp::Ne,
                    _ => return Err(syntax(start, format!("unexpected character {:?}", c as char))),
                };
                i += if two { 2 } else { 1 };
                Tok::Cmp(op)
            }
            b'"' => {
                let end = text[i + 1..]
                    .find('"')
                    .ok_or_else(|| syntax(start, "unterminated string"))?;
                let s = text[i + 1..i + 1 + end].to_string();
                i += end + 2;
                Tok::Str(s)
            }
            b'0'..=b'9' | b'-' => {
                if c == b'-' && !bytes.get(i + 1).is_some_and(u8::is_ascii_digit) {
                    return Err(syntax(start, "unexpected character '-'"));
                }
                i += 1;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                let num = &text[start..i];
                let suffix_start = i;
                while i < bytes.len() && bytes[i].is_ascii_alphabetic() {
                    i += 1;
                }
                match &text[suffix_start..i] {
                    "" => Tok::Number(num.parse().map_err(|_| syntax(start, format!("bad number {num:?}")))?),
                    unit @ ("ms" | "s") => {
                        let n: u64 = num
                            .parse()
                            .map_err(|_| syntax(start, format!("bad duration {num:?}{unit}")))?;
                        Tok::Duration(if unit == "s" { n * 1000 } else { n })
                    }
                    other => return Err(syntax(suffix_start, format!("unknown unit {other:?}"))),
                }
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'-') {
                    i += 1;
                }
                Tok::Ident(text[start..i].to_string())
            }
            _ => {
                let ch = text[i..].chars().next().unwrap_or('?');
                return Err(syntax(start, format!("unexpected character {ch:?}")));
            }
        };
        out.push((start, tok));
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
    _text: &'a str,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        t
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s.eq_ignore_ascii_case(kw))
    }

    fn unexpected(&self, wanted: &str) -> SearchError {
        match self.peek() {
            Some(t) => syntax(self.offset(), format!("expected {wanted}, found {}", t.describe())),
            None => syntax(self.offset(), format!("expected {wanted}, found end of input")),
        }
    }

    fn or(&mut self) -> Result<Expr, SearchError> {
        let mut lhs = self.and()?;
        while self.at_keyword("OR") {
            self.bump();
            let rhs = self.and()?;
            lhs = Expr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, SearchError> {
        let mut lhs = self.unary()?;
        while self.at_keyword("AND") {
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, SearchError> {
        if self.at_keyword("NOT") {
            self.bump();
            return Ok(Expr::Not(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn ident(&mut self, wanted: &str) -> Result<String, SearchError> {
        match self.peek() {
            Some(Tok::Ident(s)) if !is_keyword(s) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            Some(Tok::Ident(s)) if is_reserved(s) => Err(syntax(
                self.offset(),
                format!("{} is reserved for temporal operators and not supported", s.to_ascii_uppercase()),
            )),
            _ => Err(self.unexpected(wanted)),
        }
    }

    fn atom(&mut self) -> Result<Expr, SearchError> {
        if self.peek() == Some(&Tok::LParen) {
            self.bump();
            let e = self.or()?;
            if self.peek() != Some(&Tok::RParen) {
                return Err(self.unexpected("')'"));
            }
            self.bump();
            return Ok(e);
        }
        let scheme = self.ident("stream reference")?;
        if self.peek() != Some(&Tok::At) {
            return Err(self.unexpected("'@'"));
        }
        self.bump();
        let role = self.ident("role")?;
        let annotator = if self.peek() == Some(&Tok::Dot) {
            self.bump();
            match self.peek() {
                Some(Tok::Str(s)) => {
                    let s = s.clone();
                    self.bump();
                    Some(s)
                }
                _ => Some(self.ident("annotator")?),
            }
        } else {
            None
        };
        let stream = StreamRef { scheme, role, annotator };
        let (op, value) = if let Some(Tok::Cmp(op)) = self.peek() {
            let op = *op;
            self.bump();
            match self.peek() {
                Some(Tok::Number(v)) => {
                    let v = *v;
                    self.bump();
                    (op, v)
                }
                _ => return Err(self.unexpected("number")),
            }
        } else {
            (CmpOp::Ne, 0.0)
        };
        Ok(Expr::Cmp { stream, op, value })
    }

    fn modifiers(&mut self, q: &mut Query) -> Result<(), SearchError> {
        loop {
            let offset = self.offset();
            let slot = if self.at_keyword("FOR") {
                &mut q.min_duration_ms
            } else if self.at_keyword("MERGE") {
                &mut q.merge_gap_ms
            } else {
                return Ok(());
            };
            let Some(Tok::Ident(name)) = self.bump() else { unreachable!() };
            let name = name.to_ascii_uppercase();
            if slot.is_some() {
                return Err(SearchError::DuplicateModifier { offset, name });
            }
            let at = self.offset();
            match self.bump() {
                Some(Tok::Duration(d)) if d > 0 => *slot = Some(d),
                Some(Tok::Duration(_)) => return Err(syntax(at, format!("{name} duration must be positive"))),
                _ => {
                    self.pos -= 1;
                    return Err(self.unexpected("duration such as 500ms"));
                }
            }
        }
    }
}

fn is_reserved(s: &str) -> bool {
    RESERVED.iter().any(|k| s.eq_ignore_ascii_case(k))
}

fn is_keyword(s: &str) -> bool {
    ["AND", "OR", "NOT", "FOR", "MERGE"].iter().any(|k| s.eq_ignore_ascii_case(k)) || is_reserved(s)
}

pub fn parse_query(text: &str) -> Result<Query, SearchError> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: text.len(),
        _text: text,
    };
    let expr = p.or()?;
    let mut q = Query {
        expr,
        min_duration_ms: None,
        merge_gap_ms: None,
    };
    p.modifiers(&mut q)?;
    if p.peek().is_some() {
        return Err(p.unexpected("AND, OR, FOR, MERGE or end of input"));
    }
    Ok(q)
}
