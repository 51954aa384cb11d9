//! Scoring expression language.
//!
//! Pure, per-response expressions with no loops or assignment:
//!
//! ```text
//! or      := and ("or" and)*
//! and     := cmp ("and" cmp)*
//! cmp     := add (("==" | "!=" | "<" | "<=" | ">" | ">=") add)?
//! add     := mul (("+" | "-") mul)*
//! mul     := unary (("*" | "/") unary)*
//! unary   := ("not" | "-") unary | primary
//! primary := number | string | "true" | "false" | "text" | "model"
//!          | name "(" args ")" | "(" or ")"
//! ```
//!
//! `var("x")` reads a fill-history entry; `meta("x")` looks in the fill
//! history and then the metadata.

use std::fmt;

use regex::RegexBuilder;
use thiserror::Error;

use super::ScoreValue;
use crate::engine::ResponseRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Type {
    Bool,
    Num,
    Str,
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Type::Bool => "boolean",
            Type::Num => "number",
            Type::Str => "string",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExprErrorKind {
    Syntax,
    UnknownIdentifier,
    UnknownFunction,
    Arity,
    Type,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind:?} error at offset {offset}: {message}")]
pub struct ExprError {
    pub kind: ExprErrorKind,
    pub offset: usize,
    pub message: String,
}

fn err(kind: ExprErrorKind, offset: usize, message: impl Into<String>) -> ExprError {
    ExprError {
        kind,
        offset,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuntimeError {
    #[error("variable `{0}` not found in response bindings")]
    UnresolvedVariable(String),
    #[error("metavariable `{0}` not found in response bindings")]
    UnresolvedMetavariable(String),
    #[error("to_num: `{0}` is not a number")]
    NotNumeric(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("invalid regex: {0}")]
    BadRegex(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Contains,
    StartsWith,
    EndsWith,
    Matches,
    Len,
    Lower,
    Upper,
    Trim,
    ToNum,
    WordCount,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "contains" => Func::Contains,
            "starts_with" => Func::StartsWith,
            "ends_with" => Func::EndsWith,
            "matches" => Func::Matches,
            "len" => Func::Len,
            "lower" => Func::Lower,
            "upper" => Func::Upper,
            "trim" => Func::Trim,
            "to_num" => Func::ToNum,
            "word_count" => Func::WordCount,
            _ => return None,
        })
    }

    fn signature(self) -> (&'static [Type], Type) {
        use Type::*;
        match self {
            Func::Contains | Func::StartsWith | Func::EndsWith | Func::Matches => (&[Str, Str], Bool),
            Func::Len | Func::WordCount | Func::ToNum => (&[Str], Num),
            Func::Lower | Func::Upper | Func::Trim => (&[Str], Str),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Add,
    Sub,
    Mul,
    Div,
    And,
    Or,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnOp {
    Not,
    Neg,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Bool(bool),
    Num(f64),
    Str(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Accessor {
    Text,
    Model,
    Var(String),
    Meta(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Lit(Literal),
    Access(Accessor),
    Call { func: Func, args: Vec<Expr> },
    Unary { op: UnOp, expr: Box<Expr> },
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr> },
}

/// A parsed and type-checked scoring expression.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreExpr {
    pub source: String,
    pub ast: Expr,
    pub ty: Type,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Str(String),
    Ident(String),
    LParen,
    RParen,
    Comma,
    Op(&'static str),
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let mut out = Vec::new();
    let bytes = src.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'(' => {
                out.push((Tok::LParen, start));
                i += 1;
            }
            b')' => {
                out.push((Tok::RParen, start));
                i += 1;
            }
            b',' => {
                out.push((Tok::Comma, start));
                i += 1;
            }
            b'"' | b'\'' => {
                let quote = c;
                let mut s = String::new();
                i += 1;
                let mut closed = false;
                while i < bytes.len() {
                    let ch = src[i..].chars().next().expect("in bounds");
                    if ch as u32 == quote as u32 {
                        i += 1;
                        closed = true;
                        break;
                    }
                    if ch == '\\' {
                        let next = src[i + 1..].chars().next().ok_or_else(|| {
                            err(ExprErrorKind::Syntax, i, "unterminated escape")
                        })?;
                        s.push(match next {
                            'n' => '\n',
                            't' => '\t',
                            other => other,
                        });
                        i += 1 + next.len_utf8();
                        continue;
                    }
                    s.push(ch);
                    i += ch.len_utf8();
                }
                if !closed {
                    return Err(err(ExprErrorKind::Syntax, start, "unterminated string"));
                }
                out.push((Tok::Str(s), start));
            }
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                let text = &src[start..i];
                let n: f64 = text
                    .parse()
                    .map_err(|_| err(ExprErrorKind::Syntax, start, format!("bad number `{text}`")))?;
                out.push((Tok::Num(n), start));
            }
            b'=' | b'!' | b'<' | b'>' => {
                let two = bytes.get(i + 1) == Some(&b'=');
                let op = match (c, two) {
                    (b'=', true) => "==",
                    (b'!', true) => "!=",
                    (b'<', true) => "<=",
                    (b'>', true) => ">=",
                    (b'<', false) => "<",
                    (b'>', false) => ">",
                    _ => return Err(err(ExprErrorKind::Syntax, start, "unexpected character")),
                };
                i += op.len();
                out.push((Tok::Op(op), start));
            }
            b'+' | b'-' | b'*' | b'/' => {
                let op = match c {
                    b'+' => "+",
                    b'-' => "-",
                    b'*' => "*",
                    _ => "/",
                };
                out.push((Tok::Op(op), start));
                i += 1;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
            }
            _ => {
                let ch = src[i..].chars().next().expect("in bounds");
                return Err(err(
                    ExprErrorKind::Syntax,
                    start,
                    format!("unexpected character `{ch}`"),
                ));
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(_, o)| *o).unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn is_ident(&self, word: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(w)) if w == word)
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ExprError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(err(ExprErrorKind::Syntax, self.offset(), format!("expected {what}")))
        }
    }

    fn or(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.and()?;
        while self.is_ident("or") {
            self.pos += 1;
            let rhs = self.and()?;
            lhs = Expr::Binary {
                op: BinOp::Or,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.cmp()?;
        while self.is_ident("and") {
            self.pos += 1;
            let rhs = self.cmp()?;
            lhs = Expr::Binary {
                op: BinOp::And,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn cmp(&mut self) -> Result<Expr, ExprError> {
        let lhs = self.add()?;
        let op = match self.peek() {
            Some(Tok::Op("==")) => BinOp::Eq,
            Some(Tok::Op("!=")) => BinOp::Ne,
            Some(Tok::Op("<")) => BinOp::Lt,
            Some(Tok::Op("<=")) => BinOp::Le,
            Some(Tok::Op(">")) => BinOp::Gt,
            Some(Tok::Op(">=")) => BinOp::Ge,
            _ => return Ok(lhs),
        };
        self.pos += 1;
        let rhs = self.add()?;
        Ok(Expr::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        })
    }

    fn add(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.mul()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Op("+")) => BinOp::Add,
                Some(Tok::Op("-")) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.mul()?;
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
    }

    fn mul(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Op("*")) => BinOp::Mul,
                Some(Tok::Op("/")) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        let op = if self.is_ident("not") {
            UnOp::Not
        } else if self.peek() == Some(&Tok::Op("-")) {
            UnOp::Neg
        } else {
            return self.primary();
        };
        self.pos += 1;
        Ok(Expr::Unary {
            op,
            expr: Box::new(self.unary()?),
        })
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        let at = self.offset();
        match self.bump() {
            Some(Tok::Num(n)) => Ok(Expr::Lit(Literal::Num(n))),
            Some(Tok::Str(s)) => Ok(Expr::Lit(Literal::Str(s))),
            Some(Tok::LParen) => {
                let e = self.or()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                if self.peek() == Some(&Tok::LParen) {
                    self.pos += 1;
                    return self.call(&name, at);
                }
                match name.as_str() {
                    "true" => Ok(Expr::Lit(Literal::Bool(true))),
                    "false" => Ok(Expr::Lit(Literal::Bool(false))),
                    "text" => Ok(Expr::Access(Accessor::Text)),
                    "model" => Ok(Expr::Access(Accessor::Model)),
                    _ => Err(err(
                        ExprErrorKind::UnknownIdentifier,
                        at,
                        format!("unknown identifier `{name}`"),
                    )),
                }
            }
            Some(_) => Err(err(ExprErrorKind::Syntax, at, "unexpected token")),
            None => Err(err(ExprErrorKind::Syntax, at, "unexpected end of input")),
        }
    }

    fn call(&mut self, name: &str, at: usize) -> Result<Expr, ExprError> {
        let mut args = Vec::new();
        if self.peek() != Some(&Tok::RParen) {
            loop {
                args.push(self.or()?);
                if self.peek() == Some(&Tok::Comma) {
                    self.pos += 1;
                    continue;
                }
                break;
            }
        }
        self.expect(Tok::RParen, "`)`")?;

        if name == "var" || name == "meta" {
            return match args.as_slice() {
                [Expr::Lit(Literal::Str(s))] => Ok(Expr::Access(if name == "var" {
                    Accessor::Var(s.clone())
                } else {
                    Accessor::Meta(s.clone())
                })),
                [_] => Err(err(
                    ExprErrorKind::Type,
                    at,
                    format!("{name}() takes a string literal"),
                )),
                _ => Err(err(
                    ExprErrorKind::Arity,
                    at,
                    format!("{name}() takes 1 argument, got {}", args.len()),
                )),
            };
        }
        let func = Func::lookup(name).ok_or_else(|| {
            err(
                ExprErrorKind::UnknownFunction,
                at,
                format!("unknown function `{name}`"),
            )
        })?;
        let (params, _) = func.signature();
        if params.len() != args.len() {
            return Err(err(
                ExprErrorKind::Arity,
                at,
                format!("{name}() takes {} argument(s), got {}", params.len(), args.len()),
            ));
        }
        Ok(Expr::Call { func, args })
    }
}

fn type_of(e: &Expr) -> Result<Type, String> {
    Ok(match e {
        Expr::Lit(Literal::Bool(_)) => Type::Bool,
        Expr::Lit(Literal::Num(_)) => Type::Num,
        Expr::Lit(Literal::Str(_)) | Expr::Access(_) => Type::Str,
        Expr::Call { func, args } => {
            let (params, ret) = func.signature();
            for (i, (a, p)) in args.iter().zip(params).enumerate() {
                let t = type_of(a)?;
                if t != *p {
                    return Err(format!("{func:?} argument {} must be {p}, got {t}", i + 1));
                }
            }
            if *func == Func::Matches {
                if let Expr::Lit(Literal::Str(re)) = &args[1] {
                    regex::Regex::new(re).map_err(|e| format!("invalid regex: {e}"))?;
                }
            }
            ret
        }
        Expr::Unary { op: UnOp::Not, expr } => match type_of(expr)? {
            Type::Bool => Type::Bool,
            t => return Err(format!("`not` needs a boolean, got {t}")),
        },
        Expr::Unary { op: UnOp::Neg, expr } => match type_of(expr)? {
            Type::Num => Type::Num,
            t => return Err(format!("unary `-` needs a number, got {t}")),
        },
        Expr::Binary { op, lhs, rhs } => {
            let (l, r) = (type_of(lhs)?, type_of(rhs)?);
            match op {
                BinOp::And | BinOp::Or if l == Type::Bool && r == Type::Bool => Type::Bool,
                BinOp::Eq | BinOp::Ne if l == r => Type::Bool,
                BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge if l == r && l != Type::Bool => {
                    Type::Bool
                }
                BinOp::Add if l == r && l != Type::Bool => l,
                BinOp::Sub | BinOp::Mul | BinOp::Div if l == Type::Num && r == Type::Num => {
                    Type::Num
                }
                _ => return Err(format!("operator {op:?} cannot combine {l} and {r}")),
            }
        }
    })
}

/// Parses and type-checks a scoring expression.
pub fn parse_score_expr(src: &str) -> Result<ScoreExpr, ExprError> {
    let toks = lex(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: src.len(),
    };
    let ast = p.or()?;
    if p.pos < p.toks.len() {
        return Err(err(ExprErrorKind::Syntax, p.offset(), "unexpected trailing input"));
    }
    let ty = type_of(&ast).map_err(|m| err(ExprErrorKind::Type, 0, m))?;
    Ok(ScoreExpr {
        source: src.to_string(),
        ast,
        ty,
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Val {
    Bool(bool),
    Num(f64),
    Str(String),
}

impl Val {
    fn str(self) -> String {
        match self {
            Val::Str(s) => s,
            _ => unreachable!("type-checked"),
        }
    }
    fn num(self) -> f64 {
        match self {
            Val::Num(n) => n,
            _ => unreachable!("type-checked"),
        }
    }
    fn bool(self) -> bool {
        match self {
            Val::Bool(b) => b,
            _ => unreachable!("type-checked"),
        }
    }
}

fn eval(e: &Expr, r: &ResponseRecord) -> Result<Val, RuntimeError> {
    Ok(match e {
        Expr::Lit(Literal::Bool(b)) => Val::Bool(*b),
        Expr::Lit(Literal::Num(n)) => Val::Num(*n),
        Expr::Lit(Literal::Str(s)) => Val::Str(s.clone()),
        Expr::Access(Accessor::Text) => Val::Str(r.text().to_string()),
        Expr::Access(Accessor::Model) => Val::Str(r.model_alias().to_string()),
        Expr::Access(Accessor::Var(name)) => Val::Str(
            r.fill_history
                .get(name)
                .cloned()
                .ok_or_else(|| RuntimeError::UnresolvedVariable(name.clone()))?,
        ),
        Expr::Access(Accessor::Meta(name)) => Val::Str(
            r.resolve(name)
                .map(str::to_string)
                .ok_or_else(|| RuntimeError::UnresolvedMetavariable(name.clone()))?,
        ),
        Expr::Call { func, args } => {
            let mut vals = args
                .iter()
                .map(|a| eval(a, r))
                .collect::<Result<Vec<_>, _>>()?
                .into_iter();
            let mut next = || vals.next().expect("arity checked");
            match func {
                Func::Contains => {
                    let (a, b) = (next().str(), next().str());
                    Val::Bool(a.contains(&b))
                }
                Func::StartsWith => {
                    let (a, b) = (next().str(), next().str());
                    Val::Bool(a.starts_with(&b))
                }
                Func::EndsWith => {
                    let (a, b) = (next().str(), next().str());
                    Val::Bool(a.ends_with(&b))
                }
                Func::Matches => {
                    let (a, pat) = (next().str(), next().str());
                    let re = RegexBuilder::new(&pat)
                        .build()
                        .map_err(|e| RuntimeError::BadRegex(e.to_string()))?;
                    Val::Bool(re.is_match(&a))
                }
                Func::Len => Val::Num(next().str().chars().count() as f64),
                Func::WordCount => Val::Num(next().str().split_whitespace().count() as f64),
                Func::Lower => Val::Str(next().str().to_lowercase()),
                Func::Upper => Val::Str(next().str().to_uppercase()),
                Func::Trim => Val::Str(next().str().trim().to_string()),
                Func::ToNum => {
                    let s = next().str();
                    Val::Num(
                        s.trim()
                            .parse::<f64>()
                            .ok()
                            .filter(|n| n.is_finite())
                            .ok_or(RuntimeError::NotNumeric(s))?,
                    )
                }
            }
        }
        Expr::Unary { op: UnOp::Not, expr } => Val::Bool(!eval(expr, r)?.bool()),
        Expr::Unary { op: UnOp::Neg, expr } => Val::Num(-eval(expr, r)?.num()),
        Expr::Binary { op: BinOp::And, lhs, rhs } => {
            Val::Bool(eval(lhs, r)?.bool() && eval(rhs, r)?.bool())
        }
        Expr::Binary { op: BinOp::Or, lhs, rhs } => {
            Val::Bool(eval(lhs, r)?.bool() || eval(rhs, r)?.bool())
        }
        Expr::Binary { op, lhs, rhs } => {
            let (l, rv) = (eval(lhs, r)?, eval(rhs, r)?);
            match (op, l, rv) {
                (BinOp::Eq, a, b) => Val::Bool(a == b),
                (BinOp::Ne, a, b) => Val::Bool(a != b),
                (BinOp::Add, Val::Num(a), Val::Num(b)) => Val::Num(a + b),
                (BinOp::Add, Val::Str(a), Val::Str(b)) => Val::Str(a + &b),
                (BinOp::Sub, Val::Num(a), Val::Num(b)) => Val::Num(a - b),
                (BinOp::Mul, Val::Num(a), Val::Num(b)) => Val::Num(a * b),
                (BinOp::Div, Val::Num(a), Val::Num(b)) => {
                    if b == 0.0 {
                        return Err(RuntimeError::DivisionByZero);
                    }
                    Val::Num(a / b)
                }
                (op, Val::Num(a), Val::Num(b)) => Val::Bool(compare(*op, a.partial_cmp(&b))),
                (op, Val::Str(a), Val::Str(b)) => Val::Bool(compare(*op, Some(a.cmp(&b)))),
                _ => unreachable!("type-checked"),
            }
        }
    })
}

fn compare(op: BinOp, ord: Option<std::cmp::Ordering>) -> bool {
    use std::cmp::Ordering::*;
    match (op, ord) {
        (_, None) => false,
        (BinOp::Lt, Some(o)) => o == Less,
        (BinOp::Le, Some(o)) => o != Greater,
        (BinOp::Gt, Some(o)) => o == Greater,
        (BinOp::Ge, Some(o)) => o != Less,
        _ => unreachable!("comparison operator"),
    }
}

/// Evaluates an expression against one response.
pub fn eval_score_expr(expr: &ScoreExpr, record: &ResponseRecord) -> Result<ScoreValue, RuntimeError> {
    Ok(match eval(&expr.ast, record)? {
        Val::Bool(b) => ScoreValue::Bool(b),
        Val::Num(n) => ScoreValue::Number(n),
        Val::Str(s) => ScoreValue::Text(s),
    })
}
