use super::{Expr, ExprError, VarSpace};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(src: &'a str) -> Result<Vec<(Tok, usize)>, ExprError> {
        let mut lx = Lexer { src, pos: 0 };
        let mut out = Vec::new();
        loop {
            let (t, at) = lx.next()?;
            let end = t == Tok::End;
            out.push((t, at));
            if end {
                return Ok(out);
            }
        }
    }

    fn next(&mut self) -> Result<(Tok, usize), ExprError> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(&c) = bytes.get(self.pos) else {
            return Ok((Tok::End, start + 1));
        };
        let single = match c {
            b'+' => Some(Tok::Plus),
            b'-' => Some(Tok::Minus),
            b'*' => Some(Tok::Star),
            b'/' => Some(Tok::Slash),
            b'^' => Some(Tok::Caret),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(t) = single {
            self.pos += 1;
            return Ok((t, start + 1));
        }
        if c.is_ascii_digit() || c == b'.' {
            let mut end = self.pos;
            while end < bytes.len() && (bytes[end].is_ascii_digit() || bytes[end] == b'.') {
                end += 1;
            }
            if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
                let mut e = end + 1;
                if e < bytes.len() && (bytes[e] == b'+' || bytes[e] == b'-') {
                    e += 1;
                }
                if e < bytes.len() && bytes[e].is_ascii_digit() {
                    while e < bytes.len() && bytes[e].is_ascii_digit() {
                        e += 1;
                    }
                    end = e;
                }
            }
            let text = &self.src[self.pos..end];
            let v: f64 = text.parse().map_err(|_| ExprError::Syntax {
                position: start + 1,
                message: format!("malformed number `{text}`"),
            })?;
            self.pos = end;
            return Ok((Tok::Num(v), start + 1));
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let mut end = self.pos;
            while end < bytes.len() && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_') {
                end += 1;
            }
            let name = self.src[self.pos..end].to_string();
            self.pos = end;
            return Ok((Tok::Ident(name), start + 1));
        }
        let ch = self.src[self.pos..].chars().next().unwrap_or('?');
        Err(ExprError::Syntax {
            position: start + 1,
            message: format!("unexpected character `{ch}`"),
        })
    }
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    at: usize,
    space: &'a VarSpace,
}

/// Parses `text` into an [`Expr`] over `space`.
///
/// Grammar, loosest to tightest: `+ -`, then `* /`, then unary minus, then
/// `^`. The exponent of `^` is right-associative and must fold to a
/// non-negative integer constant, so `x^2^3` is `x^8` and `x^0.5` is rejected.
/// Positions in errors are 1-based columns.
pub fn parse_expr(text: &str, space: &VarSpace) -> Result<Expr, ExprError> {
    let mut p = Parser {
        toks: Lexer::tokens(text)?,
        at: 0,
        space,
    };
    let e = p.sum()?;
    match p.peek() {
        Tok::End => Ok(e),
        t => Err(p.syntax(format!("unexpected {}", describe(t)))),
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Num(v) => format!("number {v}"),
        Tok::Ident(s) => format!("identifier `{s}`"),
        Tok::End => "end of input".into(),
        Tok::Plus => "`+`".into(),
        Tok::Minus => "`-`".into(),
        Tok::Star => "`*`".into(),
        Tok::Slash => "`/`".into(),
        Tok::Caret => "`^`".into(),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
    }
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn position(&self) -> usize {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].0.clone();
        if t != Tok::End {
            self.at += 1;
        }
        t
    }

    fn syntax(&self, message: String) -> ExprError {
        ExprError::Syntax {
            position: self.position(),
            message,
        }
    }

    fn sum(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.product()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.product()?));
                }
                Tok::Minus => {
                    self.bump();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.product()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn product(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Tok::Star => {
                    self.bump();
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Tok::Slash => {
                    self.bump();
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if *self.peek() != Tok::Caret {
            return Ok(base);
        }
        self.bump();
        let position = self.position();
        let exponent = self.unary()?;
        let n = match fold_constant(&exponent) {
            Some(v) if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 => v as u32,
            _ => return Err(ExprError::NonIntegerExponent { position }),
        };
        Ok(Expr::Pow(Box::new(base), n))
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let position = self.position();
        match self.bump() {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::Ident(name) => match self.space.index_of(&name) {
                Some(i) => Ok(Expr::Var(i)),
                None => Err(ExprError::UnknownIdentifier { name, position }),
            },
            Tok::LParen => {
                let e = self.sum()?;
                match self.bump() {
                    Tok::RParen => Ok(e),
                    t => Err(ExprError::Syntax {
                        position: self.toks[self.at.saturating_sub(1)].1,
                        message: format!("expected `)`, found {}", describe(&t)),
                    }),
                }
            }
            t => Err(ExprError::Syntax {
                position,
                message: format!("expected a number, identifier or `(`, found {}", describe(&t)),
            }),
        }
    }
}

fn fold_constant(e: &Expr) -> Option<f64> {
    if e.variables().is_empty() {
        e.eval(&[]).ok()
    } else {
        None
    }
}
