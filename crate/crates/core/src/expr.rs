//! Arithmetic expressions for forward kernels.
//!
//! Grammar (left-associative, unary minus binds tightest):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | primary
//! primary := NUMBER | IDENT | '(' expr ')'
//! ```
//!
//! No powers and no function calls. Division by zero is an evaluation error,
//! never an infinity.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub enum Token {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
}

/// A token and the byte offset where it starts.
#[derive(Debug, Clone, PartialEq)]
pub struct Spanned {
    pub token: Token,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("illegal character {found:?} at offset {offset}")]
    Lex { offset: usize, found: char },
    #[error("malformed number {text:?} at offset {offset}")]
    BadNumber { offset: usize, text: String },
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound identifier `{0}`")]
    Unbound(String),
    #[error("division by zero")]
    DivisionByZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }

    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }

    fn apply(self, a: f64, b: f64) -> Result<f64, EvalError> {
        Ok(match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => {
                if b == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                a / b
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn negate(inner: Expr) -> Expr {
        Expr::Neg(Box::new(inner))
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(op, _, _) => op.precedence(),
            _ => 3,
        }
    }
}

/// Prints with the minimum parentheses needed to parse back to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(name) => f.write_str(name),
            Expr::Neg(inner) => {
                if matches!(**inner, Expr::Binary(..)) {
                    write!(f, "-({inner})")
                } else {
                    write!(f, "-{inner}")
                }
            }
            Expr::Binary(op, lhs, rhs) => {
                let p = op.precedence();
                if lhs.precedence() < p {
                    write!(f, "({lhs})")?;
                } else {
                    write!(f, "{lhs}")?;
                }
                write!(f, " {} ", op.symbol())?;
                if rhs.precedence() <= p {
                    write!(f, "({rhs})")
                } else {
                    write!(f, "{rhs}")
                }
            }
        }
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// True when `name` matches `[A-Za-z_][A-Za-z0-9_]*`.
pub fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if is_ident_start(c)) && chars.all(is_ident_continue)
}

pub fn tokenize(text: &str) -> Result<Vec<Spanned>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let start = i;
        let token = match c {
            ' ' | '\t' | '\n' | '\r' => {
                i += 1;
                continue;
            }
            '+' => Token::Plus,
            '-' => Token::Minus,
            '*' => Token::Star,
            '/' => Token::Slash,
            '(' => Token::LParen,
            ')' => Token::RParen,
            c if c.is_ascii_digit() || (c == '.' && next_is_digit(bytes, i + 1)) => {
                i = scan_number(bytes, i);
                let slice = &text[start..i];
                let value = slice.parse::<f64>().map_err(|_| ParseError::BadNumber {
                    offset: start,
                    text: slice.to_string(),
                })?;
                out.push(Spanned {
                    token: Token::Num(value),
                    offset: start,
                });
                continue;
            }
            c if is_ident_start(c) => {
                while i < bytes.len() && is_ident_continue(bytes[i] as char) {
                    i += 1;
                }
                out.push(Spanned {
                    token: Token::Ident(text[start..i].to_string()),
                    offset: start,
                });
                continue;
            }
            _ => {
                let found = text[start..].chars().next().unwrap_or(c);
                return Err(ParseError::Lex {
                    offset: start,
                    found,
                });
            }
        };
        out.push(Spanned {
            token,
            offset: start,
        });
        i += 1;
    }
    Ok(out)
}

fn next_is_digit(bytes: &[u8], i: usize) -> bool {
    bytes.get(i).is_some_and(u8::is_ascii_digit)
}

fn scan_number(bytes: &[u8], mut i: usize) -> usize {
    while next_is_digit(bytes, i) {
        i += 1;
    }
    if bytes.get(i) == Some(&b'.') {
        i += 1;
        while next_is_digit(bytes, i) {
            i += 1;
        }
    }
    if matches!(bytes.get(i), Some(b'e' | b'E')) {
        let mut j = i + 1;
        if matches!(bytes.get(j), Some(b'+' | b'-')) {
            j += 1;
        }
        if next_is_digit(bytes, j) {
            i = j;
            while next_is_digit(bytes, i) {
                i += 1;
            }
        }
    }
    i
}

struct Parser {
    tokens: Vec<Spanned>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|s| &s.token)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |s| s.offset)
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Token::Plus) => BinOp::Add,
                Some(Token::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Token::Star) => BinOp::Mul,
                Some(Token::Slash) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if let Some(Token::Minus) = self.peek() {
            self.pos += 1;
            return Ok(Expr::negate(self.unary()?));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.peek().cloned() {
            Some(Token::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Token::Ident(name)) => {
                self.pos += 1;
                Ok(Expr::Var(name))
            }
            Some(Token::LParen) => {
                let open = self.offset();
                self.pos += 1;
                let inner = self.expr()?;
                match self.peek() {
                    Some(Token::RParen) => {
                        self.pos += 1;
                        Ok(inner)
                    }
                    Some(_) => self.error("expected `)`"),
                    None => Err(ParseError::Syntax {
                        offset: open,
                        message: "unclosed parenthesis".into(),
                    }),
                }
            }
            Some(t) => self.error(format!("unexpected token {t:?}")),
            None => self.error("unexpected end of input"),
        }
    }
}

pub fn parse(text: &str) -> Result<Expr, ParseError> {
    let tokens = tokenize(text)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        end: text.len(),
    };
    let expr = parser.expr()?;
    if parser.pos < parser.tokens.len() {
        return parser.error("unexpected trailing input");
    }
    Ok(expr)
}

/// Name lookup for evaluation.
pub trait Bindings {
    fn lookup(&self, name: &str) -> Option<f64>;
}

impl Bindings for HashMap<String, f64> {
    fn lookup(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl Bindings for BTreeMap<String, f64> {
    fn lookup(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl Bindings for [(&str, f64)] {
    fn lookup(&self, name: &str) -> Option<f64> {
        self.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }
}

impl<const N: usize> Bindings for [(&str, f64); N] {
    fn lookup(&self, name: &str) -> Option<f64> {
        self.as_slice().lookup(name)
    }
}

pub fn evaluate<B: Bindings + ?Sized>(expr: &Expr, bindings: &B) -> Result<f64, EvalError> {
    match expr {
        Expr::Num(v) => Ok(*v),
        Expr::Var(name) => bindings
            .lookup(name)
            .ok_or_else(|| EvalError::Unbound(name.clone())),
        Expr::Neg(inner) => Ok(-evaluate(inner, bindings)?),
        Expr::Binary(op, lhs, rhs) => {
            let a = evaluate(lhs, bindings)?;
            let b = evaluate(rhs, bindings)?;
            op.apply(a, b)
        }
    }
}

pub fn free_variables(expr: &Expr) -> BTreeSet<String> {
    fn walk(e: &Expr, out: &mut BTreeSet<String>) {
        match e {
            Expr::Num(_) => {}
            Expr::Var(name) => {
                out.insert(name.clone());
            }
            Expr::Neg(inner) => walk(inner, out),
            Expr::Binary(_, lhs, rhs) => {
                walk(lhs, out);
                walk(rhs, out);
            }
        }
    }
    let mut out = BTreeSet::new();
    walk(expr, &mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    Slot(usize),
    Neg,
    Bin(BinOp),
}

/// An expression with identifiers resolved to positional slots, evaluated on a
/// small stack. Gives the same results as [`evaluate`] bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Compiled {
    ops: Vec<Op>,
    depth: usize,
}

impl Compiled {
    /// Resolve every identifier against `slots`; fails on the first name not
    /// listed.
    pub fn new(expr: &Expr, slots: &[&str]) -> Result<Self, EvalError> {
        fn emit(e: &Expr, slots: &[&str], ops: &mut Vec<Op>) -> Result<(), EvalError> {
            match e {
                Expr::Num(v) => ops.push(Op::Const(*v)),
                Expr::Var(name) => {
                    let idx = slots
                        .iter()
                        .position(|s| s == name)
                        .ok_or_else(|| EvalError::Unbound(name.clone()))?;
                    ops.push(Op::Slot(idx));
                }
                Expr::Neg(inner) => {
                    emit(inner, slots, ops)?;
                    ops.push(Op::Neg);
                }
                Expr::Binary(op, lhs, rhs) => {
                    emit(lhs, slots, ops)?;
                    emit(rhs, slots, ops)?;
                    ops.push(Op::Bin(*op));
                }
            }
            Ok(())
        }
        let mut ops = Vec::new();
        emit(expr, slots, &mut ops)?;
        let mut depth = 0usize;
        let mut max = 0usize;
        for op in &ops {
            match op {
                Op::Const(_) | Op::Slot(_) => depth += 1,
                Op::Neg => {}
                Op::Bin(_) => depth -= 1,
            }
            max = max.max(depth);
        }
        Ok(Compiled { ops, depth: max })
    }

    pub fn eval(&self, values: &[f64]) -> Result<f64, EvalError> {
        self.eval_by(|i| values[i])
    }

    /// Evaluate with slot `i` supplied by `slot(i)`.
    pub fn eval_by(&self, slot: impl Fn(usize) -> f64) -> Result<f64, EvalError> {
        let mut stack: Vec<f64> = Vec::with_capacity(self.depth);
        for op in &self.ops {
            match *op {
                Op::Const(v) => stack.push(v),
                Op::Slot(i) => stack.push(slot(i)),
                Op::Neg => {
                    let top = stack.last_mut().expect("stack underflow");
                    *top = -*top;
                }
                Op::Bin(op) => {
                    let b = stack.pop().expect("stack underflow");
                    let a = stack.last_mut().expect("stack underflow");
                    *a = op.apply(*a, b)?;
                }
            }
        }
        Ok(stack.pop().expect("empty program"))
    }
}
