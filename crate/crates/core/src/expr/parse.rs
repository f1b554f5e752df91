//! Recursive-descent parser for the coefficient grammar.
//!
//! Precedence: ^ binds tightest (right-associative), then unary minus, then
//! * and /, then + and - (left-associative). No implicit multiplication.

use super::{Func, Node, ParseError};

#[derive(Debug, Clone, PartialEq)]
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
    Comma,
}

struct Lexer<'a> {
    text: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Self {
        Lexer {
            text,
            bytes: text.as_bytes(),
            pos: 0,
        }
    }

    fn tokens(mut self) -> Result<Vec<(Tok, usize)>, ParseError> {
        let mut out = Vec::new();
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos >= self.bytes.len() {
                break;
            }
            let start = self.pos;
            let b = self.bytes[self.pos];
            let tok = match b {
                b'+' => {
                    self.pos += 1;
                    Tok::Plus
                }
                b'-' => {
                    self.pos += 1;
                    Tok::Minus
                }
                b'*' => {
                    self.pos += 1;
                    Tok::Star
                }
                b'/' => {
                    self.pos += 1;
                    Tok::Slash
                }
                b'^' => {
                    self.pos += 1;
                    Tok::Caret
                }
                b'(' => {
                    self.pos += 1;
                    Tok::LParen
                }
                b')' => {
                    self.pos += 1;
                    Tok::RParen
                }
                b',' => {
                    self.pos += 1;
                    Tok::Comma
                }
                b'0'..=b'9' | b'.' => {
                    while self.pos < self.bytes.len()
                        && (self.bytes[self.pos].is_ascii_digit() || self.bytes[self.pos] == b'.')
                    {
                        self.pos += 1;
                    }
                    // exponent part: e or E, optional sign, digits
                    if self.pos < self.bytes.len()
                        && (self.bytes[self.pos] == b'e' || self.bytes[self.pos] == b'E')
                    {
                        let mut look = self.pos + 1;
                        if look < self.bytes.len()
                            && (self.bytes[look] == b'+' || self.bytes[look] == b'-')
                        {
                            look += 1;
                        }
                        if look < self.bytes.len() && self.bytes[look].is_ascii_digit() {
                            self.pos = look;
                            while self.pos < self.bytes.len()
                                && self.bytes[self.pos].is_ascii_digit()
                            {
                                self.pos += 1;
                            }
                        }
                    }
                    let s = &self.text[start..self.pos];
                    let v: f64 = s.parse().map_err(|_| ParseError::Syntax {
                        offset: start,
                        message: format!("malformed number `{s}`"),
                    })?;
                    Tok::Num(v)
                }
                b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                    while self.pos < self.bytes.len()
                        && (self.bytes[self.pos].is_ascii_alphanumeric()
                            || self.bytes[self.pos] == b'_')
                    {
                        self.pos += 1;
                    }
                    Tok::Ident(self.text[start..self.pos].to_string())
                }
                other => {
                    return Err(ParseError::Syntax {
                        offset: start,
                        message: format!("unexpected character `{}`", other as char),
                    })
                }
            };
            out.push((tok, start));
        }
        Ok(out)
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
    dim: usize,
}

pub(super) fn parse(text: &str, dim: usize) -> Result<Node, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError::Syntax {
            offset: 0,
            message: "empty expression".into(),
        });
    }
    let toks = Lexer::new(text).tokens()?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: text.len(),
        dim,
    };
    let node = p.expr()?;
    if let Some((_, off)) = p.peek() {
        return Err(ParseError::Syntax {
            offset: off,
            message: "unexpected trailing input".into(),
        });
    }
    Ok(node)
}

impl Parser {
    fn peek(&self) -> Option<(&Tok, usize)> {
        self.toks.get(self.pos).map(|(t, o)| (t, *o))
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map(|(_, o)| *o).unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<(Tok, usize)> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, want: &Tok, what: &str) -> Result<usize, ParseError> {
        match self.peek() {
            Some((t, o)) if t == want => {
                self.pos += 1;
                Ok(o)
            }
            _ => Err(ParseError::Syntax {
                offset: self.here(),
                message: format!("expected {what}"),
            }),
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        while let Some((t, _)) = self.peek() {
            match t {
                Tok::Plus => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Node::Add(Box::new(lhs), Box::new(rhs));
                }
                Tok::Minus => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Node::Sub(Box::new(lhs), Box::new(rhs));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        while let Some((t, _)) = self.peek() {
            match t {
                Tok::Star => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    lhs = Node::Mul(Box::new(lhs), Box::new(rhs));
                }
                Tok::Slash => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    lhs = Node::Div(Box::new(lhs), Box::new(rhs));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if let Some((Tok::Minus, _)) = self.peek() {
            self.pos += 1;
            let inner = self.unary()?;
            return Ok(Node::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if let Some((Tok::Caret, _)) = self.peek() {
            self.pos += 1;
            // right-associative; exponent may carry a unary minus (2^-3)
            let exp = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        match self.bump() {
            Some((Tok::Num(v), _)) => Ok(Node::Num(v)),
            Some((Tok::LParen, _)) => {
                let inner = self.expr()?;
                self.eat(&Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Some((Tok::Ident(name), off)) => self.ident(name, off),
            Some((_, off)) => Err(ParseError::Syntax {
                offset: off,
                message: "expected a number, variable, function or `(`".into(),
            }),
            None => Err(ParseError::Syntax {
                offset: self.end,
                message: "expected an operand".into(),
            }),
        }
    }

    fn ident(&mut self, name: String, off: usize) -> Result<Node, ParseError> {
        if let Some(rest) = name.strip_prefix('x') {
            if let Ok(idx) = rest.parse::<usize>() {
                if idx >= 1 && idx <= self.dim {
                    return Ok(Node::Var(idx - 1));
                }
                return Err(ParseError::UnknownIdentifier { name, offset: off });
            }
        }
        let func = match name.as_str() {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "log" => Some(Func::Log),
            "sqrt" => Some(Func::Sqrt),
            "abs" => Some(Func::Abs),
            "tanh" => Some(Func::Tanh),
            "step" => Some(Func::Step),
            _ => None,
        };
        let two_arg = matches!(name.as_str(), "min" | "max");
        if func.is_none() && !two_arg {
            return Err(ParseError::UnknownIdentifier { name, offset: off });
        }
        self.eat(&Tok::LParen, "`(` after function name")?;
        let mut args = vec![self.expr()?];
        while let Some((Tok::Comma, _)) = self.peek() {
            self.pos += 1;
            args.push(self.expr()?);
        }
        self.eat(&Tok::RParen, "`)`")?;
        let expected = if two_arg { 2 } else { 1 };
        if args.len() != expected {
            return Err(ParseError::WrongArity {
                name,
                expected,
                got: args.len(),
                offset: off,
            });
        }
        if two_arg {
            let b = args.pop().unwrap();
            let a = args.pop().unwrap();
            Ok(if name == "min" {
                Node::Min(Box::new(a), Box::new(b))
            } else {
                Node::Max(Box::new(a), Box::new(b))
            })
        } else {
            Ok(Node::Fun(func.unwrap(), Box::new(args.pop().unwrap())))
        }
    }
}
