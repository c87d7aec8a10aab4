//! Tokenizer for the Java-like surface syntax. Comments, strings and chars
//! are consumed but not enumerated; numbers come out parsed with their
//! radix. Spans are byte offsets into the original buffer.

use super::Radix;

#[derive(Clone, Debug, PartialEq)]
pub enum TokKind {
    Ident,
    Int { value: i64, radix: Radix },
    Float { value: f64 },
    Str,
    Char,
    /// Operator or punctuation; the text is the source slice.
    Sym,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    pub kind: TokKind,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug)]
pub struct LexError {
    pub offset: usize,
    pub message: String,
}

/// Multi-byte operators, longest first so maximal munch works.
const SYMS: [&str; 26] = [
    ">>>=", ">>>", "<<=", ">>=", "==", "!=", "<=", ">=", "&&", "||", "++", "--", "+=", "-=",
    "*=", "/=", "%=", "&=", "|=", "^=", "<<", ">>", "->", "::", "...", "..",
];

pub fn lex(src: &[u8]) -> Result<Vec<Token>, LexError> {
    let mut toks = Vec::new();
    let mut i = 0;
    while i < src.len() {
        let c = src[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c == b'/' && i + 1 < src.len() {
            if src[i + 1] == b'/' {
                while i < src.len() && src[i] != b'\n' {
                    i += 1;
                }
                continue;
            }
            if src[i + 1] == b'*' {
                let start = i;
                i += 2;
                loop {
                    if i + 1 >= src.len() {
                        return Err(LexError {
                            offset: start,
                            message: "unterminated block comment".into(),
                        });
                    }
                    if src[i] == b'*' && src[i + 1] == b'/' {
                        i += 2;
                        break;
                    }
                    i += 1;
                }
                continue;
            }
        }
        if c == b'"' || c == b'\'' {
            let start = i;
            let quote = c;
            i += 1;
            loop {
                if i >= src.len() {
                    return Err(LexError {
                        offset: start,
                        message: format!(
                            "unterminated {} literal",
                            if quote == b'"' { "string" } else { "char" }
                        ),
                    });
                }
                if src[i] == b'\\' {
                    i += 2;
                    continue;
                }
                if src[i] == quote {
                    i += 1;
                    break;
                }
                i += 1;
            }
            toks.push(Token {
                kind: if quote == b'"' { TokKind::Str } else { TokKind::Char },
                start,
                end: i,
            });
            continue;
        }
        if c.is_ascii_digit() {
            let (tok, next) = lex_number(src, i)?;
            toks.push(tok);
            i = next;
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' || c == b'$' {
            let start = i;
            while i < src.len()
                && (src[i].is_ascii_alphanumeric() || src[i] == b'_' || src[i] == b'$')
            {
                i += 1;
            }
            toks.push(Token {
                kind: TokKind::Ident,
                start,
                end: i,
            });
            continue;
        }
        if let Some(sym) = SYMS
            .iter()
            .find(|s| src[i..].starts_with(s.as_bytes()))
        {
            toks.push(Token {
                kind: TokKind::Sym,
                start: i,
                end: i + sym.len(),
            });
            i += sym.len();
            continue;
        }
        if b"()[]{};,.<>=+-*/%!&|^~?:@".contains(&c) {
            toks.push(Token {
                kind: TokKind::Sym,
                start: i,
                end: i + 1,
            });
            i += 1;
            continue;
        }
        if c < 0x80 {
            return Err(LexError {
                offset: i,
                message: format!("unexpected byte {:?}", c as char),
            });
        }
        // Non-ASCII bytes only appear inside comments and strings in the
        // grammars this adapter targets; anywhere else is a parse error.
        return Err(LexError {
            offset: i,
            message: "unexpected non-ascii byte outside string or comment".into(),
        });
    }
    Ok(toks)
}

fn lex_number(src: &[u8], start: usize) -> Result<(Token, usize), LexError> {
    let mut i = start;
    let err = |i: usize, m: &str| LexError {
        offset: i,
        message: m.into(),
    };

    if src[i] == b'0' && i + 1 < src.len() && (src[i + 1] | 0x20) == b'x' {
        i += 2;
        let digits_start = i;
        while i < src.len() && (src[i].is_ascii_hexdigit() || src[i] == b'_') {
            i += 1;
        }
        if i == digits_start {
            return Err(err(start, "hex literal without digits"));
        }
        let text: String = strip_underscores(&src[digits_start..i]);
        let value = u64::from_str_radix(&text, 16)
            .map_err(|_| err(start, "hex literal out of range"))? as i64;
        let end = eat_int_suffix(src, i);
        return Ok((
            Token {
                kind: TokKind::Int {
                    value,
                    radix: Radix::Hex,
                },
                start,
                end,
            },
            end,
        ));
    }
    if src[i] == b'0' && i + 1 < src.len() && (src[i + 1] | 0x20) == b'b' {
        i += 2;
        let digits_start = i;
        while i < src.len() && (src[i] == b'0' || src[i] == b'1' || src[i] == b'_') {
            i += 1;
        }
        if i == digits_start {
            return Err(err(start, "binary literal without digits"));
        }
        let text = strip_underscores(&src[digits_start..i]);
        let value = u64::from_str_radix(&text, 2)
            .map_err(|_| err(start, "binary literal out of range"))? as i64;
        let end = eat_int_suffix(src, i);
        return Ok((
            Token {
                kind: TokKind::Int {
                    value,
                    radix: Radix::Bin,
                },
                start,
                end,
            },
            end,
        ));
    }

    // Decimal digits, then decide int / float / octal.
    while i < src.len() && (src[i].is_ascii_digit() || src[i] == b'_') {
        i += 1;
    }
    let mut is_float = false;
    if i < src.len() && src[i] == b'.' && i + 1 < src.len() && src[i + 1].is_ascii_digit() {
        is_float = true;
        i += 1;
        while i < src.len() && (src[i].is_ascii_digit() || src[i] == b'_') {
            i += 1;
        }
    }
    if i < src.len() && (src[i] | 0x20) == b'e' {
        let mut j = i + 1;
        if j < src.len() && (src[j] == b'+' || src[j] == b'-') {
            j += 1;
        }
        if j < src.len() && src[j].is_ascii_digit() {
            is_float = true;
            i = j;
            while i < src.len() && src[i].is_ascii_digit() {
                i += 1;
            }
        }
    }
    let mut end = i;
    if i < src.len() && matches!(src[i] | 0x20, b'f' | b'd') {
        is_float = true;
        end = i + 1;
    } else if i < src.len() && (src[i] | 0x20) == b'l' {
        end = i + 1;
    }

    if is_float {
        let text = strip_underscores(&src[start..i]);
        let value: f64 = text
            .parse()
            .map_err(|_| err(start, "malformed float literal"))?;
        if !value.is_finite() {
            return Err(err(start, "float literal overflows to non-finite"));
        }
        return Ok((
            Token {
                kind: TokKind::Float { value },
                start,
                end,
            },
            end,
        ));
    }

    let text = strip_underscores(&src[start..i]);
    // A leading zero with more digits is octal notation.
    let (value, radix) = if text.len() > 1 && text.starts_with('0') {
        let v = i64::from_str_radix(&text[1..], 8)
            .map_err(|_| err(start, "malformed octal literal"))?;
        (v, Radix::Oct)
    } else {
        let v: i64 = text
            .parse()
            .map_err(|_| err(start, "integer literal out of range"))?;
        (v, Radix::Dec)
    };
    Ok((
        Token {
            kind: TokKind::Int { value, radix },
            start,
            end,
        },
        end,
    ))
}

fn eat_int_suffix(src: &[u8], i: usize) -> usize {
    if i < src.len() && (src[i] | 0x20) == b'l' {
        i + 1
    } else {
        i
    }
}

fn strip_underscores(bytes: &[u8]) -> String {
    bytes
        .iter()
        .filter(|&&b| b != b'_')
        .map(|&b| b as char)
        .collect()
}

pub fn text<'a>(src: &'a [u8], tok: &Token) -> &'a str {
    std::str::from_utf8(&src[tok.start..tok.end]).unwrap_or("")
}
