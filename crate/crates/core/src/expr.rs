//! Scalar expressions over state coordinates `x1..xn`.
//!
//! Grammar (whitespace insignificant):
//!
//! ```text
//! expr   := term (("+" | "-") term)*
//! term   := factor (("*" | "/") factor)*
//! factor := "-" factor | power
//! power  := atom ("^" factor)?
//! atom   := number | "x" digits | func "(" expr ")" | "(" expr ")"
//! func   := sin | cos | tan | exp | sqrt | abs
//! ```
//!
//! `^` is right-associative and binds tighter than unary minus, so `-x1^2`
//! is `-(x1^2)` and `2^-1` is `0.5`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Tan,
    Exp,
    Sqrt,
    Abs,
}

impl UnaryOp {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "tan" => UnaryOp::Tan,
            "exp" => UnaryOp::Exp,
            "sqrt" => UnaryOp::Sqrt,
            "abs" => UnaryOp::Abs,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Tan => "tan",
            UnaryOp::Exp => "exp",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Abs => "abs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
            BinaryOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Zero-based state coordinate (`x1` is `Var(0)`).
    Var(usize),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("empty expression")]
    Empty,
    #[error("syntax error at position {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown identifier `{name}` at position {pos}")]
    UnknownIdentifier { pos: usize, name: String },
    #[error("variable x{index} at position {pos} is out of range 1..={n}")]
    VariableOutOfRange { pos: usize, index: usize, n: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("square root of negative value {0}")]
    SqrtOfNegative(f64),
    #[error("power {base}^{exponent} is undefined")]
    Power { base: f64, exponent: f64 },
    #[error("`{op}` produced NaN")]
    NotANumber { op: &'static str },
    #[error("variable x{index} is out of range for a state of length {len}")]
    VariableOutOfRange { index: usize, len: usize },
}

impl Expr {
    pub fn constant(c: f64) -> Self {
        Expr::Const(c)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Var(i) => x.get(*i).copied().ok_or(EvalError::VariableOutOfRange {
                index: i + 1,
                len: x.len(),
            }),
            Expr::Unary(op, arg) => {
                let a = arg.eval(x)?;
                let v = match op {
                    UnaryOp::Neg => -a,
                    UnaryOp::Sin => a.sin(),
                    UnaryOp::Cos => a.cos(),
                    UnaryOp::Tan => a.tan(),
                    UnaryOp::Exp => a.exp(),
                    UnaryOp::Abs => a.abs(),
                    UnaryOp::Sqrt => {
                        if a < 0.0 {
                            return Err(EvalError::SqrtOfNegative(a));
                        }
                        a.sqrt()
                    }
                };
                nan_check(v, op.name())
            }
            Expr::Binary(op, lhs, rhs) => {
                let a = lhs.eval(x)?;
                let b = rhs.eval(x)?;
                let v = match op {
                    BinaryOp::Add => a + b,
                    BinaryOp::Sub => a - b,
                    BinaryOp::Mul => a * b,
                    BinaryOp::Div => {
                        if b == 0.0 {
                            return Err(EvalError::DivisionByZero);
                        }
                        a / b
                    }
                    BinaryOp::Pow => {
                        let v = a.powf(b);
                        if v.is_nan() && !a.is_nan() && !b.is_nan() {
                            return Err(EvalError::Power { base: a, exponent: b });
                        }
                        v
                    }
                };
                nan_check(v, "arithmetic")
            }
        }
    }

    /// Largest one-based variable index referenced, 0 if none.
    pub fn max_variable(&self) -> usize {
        match self {
            Expr::Const(_) => 0,
            Expr::Var(i) => i + 1,
            Expr::Unary(_, a) => a.max_variable(),
            Expr::Binary(_, a, b) => a.max_variable().max(b.max_variable()),
        }
    }
}

fn nan_check(v: f64, op: &'static str) -> Result<f64, EvalError> {
    if v.is_nan() {
        Err(EvalError::NotANumber { op })
    } else {
        Ok(v)
    }
}

/// Fully parenthesized, re-parseable rendering. Constants use the shortest
/// representation that round-trips exactly.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) if *c < 0.0 => write!(f, "(-{:?})", -c),
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Unary(UnaryOp::Neg, a) => write!(f, "(-{a})"),
            Expr::Unary(op, a) => write!(f, "{}({a})", op.name()),
            Expr::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
        }
    }
}

/// Parses `text` for a system with `n` state coordinates.
pub fn parse(text: &str, n: usize) -> Result<Expr, ParseError> {
    let tokens = tokenize(text)?;
    if tokens.is_empty() {
        return Err(ParseError::Empty);
    }
    let mut parser = Parser {
        tokens,
        pos: 0,
        n,
        end: text.len(),
    };
    let expr = parser.expr()?;
    if let Some(tok) = parser.peek() {
        return Err(ParseError::Syntax {
            pos: tok.pos,
            message: format!("unexpected {}", tok.kind.describe()),
        });
    }
    Ok(expr)
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Number(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

impl TokenKind {
    fn describe(&self) -> String {
        match self {
            TokenKind::Number(v) => format!("number {v}"),
            TokenKind::Ident(s) => format!("identifier `{s}`"),
            TokenKind::Op(c) => format!("operator `{c}`"),
            TokenKind::LParen => "`(`".into(),
            TokenKind::RParen => "`)`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    pos: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' | b'-' | b'*' | b'/' | b'^' => {
                tokens.push(Token {
                    kind: TokenKind::Op(c as char),
                    pos: start,
                });
                i += 1;
            }
            b'(' => {
                tokens.push(Token { kind: TokenKind::LParen, pos: start });
                i += 1;
            }
            b')' => {
                tokens.push(Token { kind: TokenKind::RParen, pos: start });
                i += 1;
            }
            b'0'..=b'9' | b'.' => {
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
                    } else {
                        return Err(ParseError::Syntax {
                            pos: i,
                            message: "malformed exponent".into(),
                        });
                    }
                }
                let literal = &text[start..i];
                let value = literal.parse::<f64>().map_err(|_| ParseError::Syntax {
                    pos: start,
                    message: format!("malformed number `{literal}`"),
                })?;
                tokens.push(Token {
                    kind: TokenKind::Number(value),
                    pos: start,
                });
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                tokens.push(Token {
                    kind: TokenKind::Ident(text[start..i].to_string()),
                    pos: start,
                });
            }
            _ => {
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(ParseError::Syntax {
                    pos: start,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        }
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    n: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_op(&self) -> Option<char> {
        match self.peek() {
            Some(Token { kind: TokenKind::Op(c), .. }) => Some(*c),
            _ => None,
        }
    }

    fn next(&mut self) -> Option<Token> {
        let tok = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        tok
    }

    fn here(&self) -> usize {
        self.peek().map_or(self.end, |t| t.pos)
    }

    fn expect(&mut self, kind: TokenKind) -> Result<(), ParseError> {
        let pos = self.here();
        match self.next() {
            Some(tok) if tok.kind == kind => Ok(()),
            Some(tok) => Err(ParseError::Syntax {
                pos,
                message: format!("expected {}, found {}", kind.describe(), tok.kind.describe()),
            }),
            None => Err(ParseError::Syntax {
                pos,
                message: format!("expected {}, found end of input", kind.describe()),
            }),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(c @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            let op = if c == '+' { BinaryOp::Add } else { BinaryOp::Sub };
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        while let Some(c @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.factor()?;
            let op = if c == '*' { BinaryOp::Mul } else { BinaryOp::Div };
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        if self.peek_op() == Some('-') {
            self.pos += 1;
            let inner = self.factor()?;
            return Ok(Expr::Unary(UnaryOp::Neg, Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            let exponent = self.factor()?;
            return Ok(Expr::Binary(BinaryOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let pos = self.here();
        let Some(tok) = self.next() else {
            return Err(ParseError::Syntax {
                pos,
                message: "unexpected end of input".into(),
            });
        };
        match tok.kind {
            TokenKind::Number(v) => Ok(Expr::Const(v)),
            TokenKind::LParen => {
                let inner = self.expr()?;
                self.expect(TokenKind::RParen)?;
                Ok(inner)
            }
            TokenKind::Ident(name) => {
                if let Some(op) = UnaryOp::from_name(&name) {
                    self.expect(TokenKind::LParen)?;
                    let arg = self.expr()?;
                    self.expect(TokenKind::RParen)?;
                    return Ok(Expr::Unary(op, Box::new(arg)));
                }
                self.variable(&name, tok.pos)
            }
            other => Err(ParseError::Syntax {
                pos: tok.pos,
                message: format!("unexpected {}", other.describe()),
            }),
        }
    }

    fn variable(&self, name: &str, pos: usize) -> Result<Expr, ParseError> {
        let digits = name.strip_prefix('x').filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()));
        let Some(digits) = digits else {
            return Err(ParseError::UnknownIdentifier {
                pos,
                name: name.to_string(),
            });
        };
        let index = digits.parse::<usize>().unwrap_or(usize::MAX);
        if index == 0 || index > self.n {
            return Err(ParseError::VariableOutOfRange { pos, index, n: self.n });
        }
        Ok(Expr::Var(index - 1))
    }
}
