//! Arithmetic/boolean expression language used inside environment documents.
//!
//! ```text
//! expr    := or
//! or      := and ("or" and)*
//! and     := not ("and" not)*
//! not     := "not" not | cmp
//! cmp     := add (("<" | "<=" | ">" | ">=" | "==" | "!=") add)?
//! add     := mul (("+" | "-") mul)*
//! mul     := unary (("*" | "/") unary)*
//! unary   := "-" unary | primary
//! primary := number | "true" | "false" | ident | func "(" expr ("," expr)* ")" | "(" expr ")"
//! func    := "min" | "max" | "abs" | "if"
//! ```
//!
//! A unary minus applied directly to a numeric literal is folded into the
//! literal, so `-1` parses to `Num(-1.0)`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::And => "and",
            BinOp::Or => "or",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul | BinOp::Div => 6,
        }
    }

    pub fn is_comparison(self) -> bool {
        self.precedence() == 4
    }

    pub fn is_logical(self) -> bool {
        matches!(self, BinOp::And | BinOp::Or)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Min,
    Max,
    Abs,
    If,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Min => "min",
            Func::Max => "max",
            Func::Abs => "abs",
            Func::If => "if",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        match name {
            "min" => Some(Func::Min),
            "max" => Some(Func::Max),
            "abs" => Some(Func::Abs),
            "if" => Some(Func::If),
            _ => None,
        }
    }
}

/// Words that can never be used as identifiers.
pub const KEYWORDS: &[&str] = &["and", "or", "not", "true", "false", "min", "max", "abs", "if"];

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Bool(bool),
    Ident(String),
    Neg(Box<Expr>),
    Not(Box<Expr>),
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Call {
        func: Func,
        args: Vec<Expr>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Type {
    Real,
    Bool,
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Real => f.write_str("real"),
            Type::Bool => f.write_str("boolean"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Num(f64),
    Bool(bool),
}

impl Value {
    pub fn as_num(self) -> Result<f64, EvalError> {
        match self {
            Value::Num(v) => Ok(v),
            Value::Bool(_) => Err(EvalError::TypeMismatch {
                expected: Type::Real,
            }),
        }
    }

    pub fn as_bool(self) -> Result<bool, EvalError> {
        match self {
            Value::Bool(b) => Ok(b),
            Value::Num(_) => Err(EvalError::TypeMismatch {
                expected: Type::Bool,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{message} at column {column}")]
pub struct ParseError {
    /// 1-based character column.
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TypeError {
    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),
    #[error("expected {expected}, found {found} in `{context}`")]
    Mismatch {
        expected: Type,
        found: Type,
        context: String,
    },
    #[error("function `{func}` takes {expected} argument(s), got {got}")]
    Arity {
        func: &'static str,
        expected: &'static str,
        got: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),
    #[error("type mismatch, expected {expected}")]
    TypeMismatch { expected: Type },
}

/// Name lookup used by [`Expr::eval`].
pub trait Scope {
    fn lookup(&self, name: &str) -> Option<f64>;
}

impl<F: Fn(&str) -> Option<f64>> Scope for F {
    fn lookup(&self, name: &str) -> Option<f64> {
        self(name)
    }
}

impl Expr {
    pub fn parse(text: &str) -> Result<Expr, ParseError> {
        let tokens = lex(text)?;
        let mut parser = Parser {
            tokens,
            pos: 0,
            end_column: text.chars().count() + 1,
        };
        let expr = parser.parse_or()?;
        if let Some(tok) = parser.peek() {
            return Err(ParseError {
                column: tok.column,
                message: format!("unexpected `{}`", tok.kind),
            });
        }
        Ok(expr)
    }

    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn ident(name: &str) -> Expr {
        Expr::Ident(name.to_string())
    }

    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    /// Every identifier referenced, in order of first occurrence.
    pub fn identifiers(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_identifiers(&mut out);
        out
    }

    fn collect_identifiers<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Num(_) | Expr::Bool(_) => {}
            Expr::Ident(name) => {
                if !out.contains(&name.as_str()) {
                    out.push(name);
                }
            }
            Expr::Neg(e) | Expr::Not(e) => e.collect_identifiers(out),
            Expr::Binary { lhs, rhs, .. } => {
                lhs.collect_identifiers(out);
                rhs.collect_identifiers(out);
            }
            Expr::Call { args, .. } => args.iter().for_each(|a| a.collect_identifiers(out)),
        }
    }

    /// Numeric literals that are NaN or infinite.
    pub fn has_non_finite_literal(&self) -> bool {
        match self {
            Expr::Num(v) => !v.is_finite(),
            Expr::Bool(_) | Expr::Ident(_) => false,
            Expr::Neg(e) | Expr::Not(e) => e.has_non_finite_literal(),
            Expr::Binary { lhs, rhs, .. } => {
                lhs.has_non_finite_literal() || rhs.has_non_finite_literal()
            }
            Expr::Call { args, .. } => args.iter().any(Expr::has_non_finite_literal),
        }
    }

    /// Infers the type of the expression. `known` decides whether an
    /// identifier resolves; every identifier is real-valued.
    pub fn type_check(&self, known: &dyn Fn(&str) -> bool) -> Result<Type, TypeError> {
        let expect = |e: &Expr, want: Type| -> Result<(), TypeError> {
            let found = e.type_check(known)?;
            if found == want {
                Ok(())
            } else {
                Err(TypeError::Mismatch {
                    expected: want,
                    found,
                    context: e.to_string(),
                })
            }
        };
        match self {
            Expr::Num(_) => Ok(Type::Real),
            Expr::Bool(_) => Ok(Type::Bool),
            Expr::Ident(name) => {
                if known(name) {
                    Ok(Type::Real)
                } else {
                    Err(TypeError::UnknownIdentifier(name.clone()))
                }
            }
            Expr::Neg(e) => expect(e, Type::Real).map(|_| Type::Real),
            Expr::Not(e) => expect(e, Type::Bool).map(|_| Type::Bool),
            Expr::Binary { op, lhs, rhs } => {
                if op.is_logical() {
                    expect(lhs, Type::Bool)?;
                    expect(rhs, Type::Bool)?;
                    Ok(Type::Bool)
                } else {
                    expect(lhs, Type::Real)?;
                    expect(rhs, Type::Real)?;
                    Ok(if op.is_comparison() {
                        Type::Bool
                    } else {
                        Type::Real
                    })
                }
            }
            Expr::Call { func, args } => match func {
                Func::Abs => {
                    if args.len() != 1 {
                        return Err(TypeError::Arity {
                            func: "abs",
                            expected: "1",
                            got: args.len(),
                        });
                    }
                    expect(&args[0], Type::Real)?;
                    Ok(Type::Real)
                }
                Func::Min | Func::Max => {
                    if args.len() < 2 {
                        return Err(TypeError::Arity {
                            func: func.name(),
                            expected: "at least 2",
                            got: args.len(),
                        });
                    }
                    for a in args {
                        expect(a, Type::Real)?;
                    }
                    Ok(Type::Real)
                }
                Func::If => {
                    if args.len() != 3 {
                        return Err(TypeError::Arity {
                            func: "if",
                            expected: "3",
                            got: args.len(),
                        });
                    }
                    expect(&args[0], Type::Bool)?;
                    let then_ty = args[1].type_check(known)?;
                    expect(&args[2], then_ty)?;
                    Ok(then_ty)
                }
            },
        }
    }

    /// Evaluates the expression. `and`, `or` and `if` short-circuit, so a
    /// division in an untaken branch never fails.
    pub fn eval(&self, scope: &dyn Scope) -> Result<Value, EvalError> {
        match self {
            Expr::Num(v) => Ok(Value::Num(*v)),
            Expr::Bool(b) => Ok(Value::Bool(*b)),
            Expr::Ident(name) => scope
                .lookup(name)
                .map(Value::Num)
                .ok_or_else(|| EvalError::UnknownIdentifier(name.clone())),
            Expr::Neg(e) => Ok(Value::Num(-e.eval(scope)?.as_num()?)),
            Expr::Not(e) => Ok(Value::Bool(!e.eval(scope)?.as_bool()?)),
            Expr::Binary { op, lhs, rhs } => match op {
                BinOp::And => Ok(Value::Bool(
                    lhs.eval(scope)?.as_bool()? && rhs.eval(scope)?.as_bool()?,
                )),
                BinOp::Or => Ok(Value::Bool(
                    lhs.eval(scope)?.as_bool()? || rhs.eval(scope)?.as_bool()?,
                )),
                _ => {
                    let a = lhs.eval(scope)?.as_num()?;
                    let b = rhs.eval(scope)?.as_num()?;
                    Ok(match op {
                        BinOp::Add => Value::Num(a + b),
                        BinOp::Sub => Value::Num(a - b),
                        BinOp::Mul => Value::Num(a * b),
                        BinOp::Div => {
                            if b == 0.0 {
                                return Err(EvalError::DivisionByZero);
                            }
                            Value::Num(a / b)
                        }
                        BinOp::Lt => Value::Bool(a < b),
                        BinOp::Le => Value::Bool(a <= b),
                        BinOp::Gt => Value::Bool(a > b),
                        BinOp::Ge => Value::Bool(a >= b),
                        BinOp::Eq => Value::Bool(a == b),
                        BinOp::Ne => Value::Bool(a != b),
                        BinOp::And | BinOp::Or => unreachable!(),
                    })
                }
            },
            Expr::Call { func, args } => match func {
                Func::Abs => Ok(Value::Num(args[0].eval(scope)?.as_num()?.abs())),
                Func::Min | Func::Max => {
                    let mut acc = args[0].eval(scope)?.as_num()?;
                    for a in &args[1..] {
                        let v = a.eval(scope)?.as_num()?;
                        acc = if *func == Func::Min {
                            acc.min(v)
                        } else {
                            acc.max(v)
                        };
                    }
                    Ok(Value::Num(acc))
                }
                Func::If => {
                    if args[0].eval(scope)?.as_bool()? {
                        args[1].eval(scope)
                    } else {
                        args[2].eval(scope)
                    }
                }
            },
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Num(v) if v.is_sign_negative() => 7,
            Expr::Num(_) | Expr::Bool(_) | Expr::Ident(_) | Expr::Call { .. } => 8,
            Expr::Neg(_) => 7,
            Expr::Not(_) => 3,
            Expr::Binary { op, .. } => op.precedence(),
        }
    }
}

/// Canonical text form; parsing it yields a structurally equal tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn wrap(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
            if e.precedence() < min_prec {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        }
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Bool(b) => write!(f, "{b}"),
            Expr::Ident(name) => f.write_str(name),
            Expr::Neg(e) => {
                f.write_str("-")?;
                // `--x` would lex as two minus signs either way, but a
                // literal operand has to stay distinguishable from folding.
                if matches!(**e, Expr::Num(_)) || e.precedence() < 8 {
                    write!(f, "({e})")
                } else {
                    write!(f, "{e}")
                }
            }
            Expr::Not(e) => {
                f.write_str("not ")?;
                wrap(f, e, 3)
            }
            Expr::Binary { op, lhs, rhs } => {
                let p = op.precedence();
                if op.is_comparison() {
                    wrap(f, lhs, 5)?;
                    write!(f, " {} ", op.symbol())?;
                    wrap(f, rhs, 5)
                } else {
                    wrap(f, lhs, p)?;
                    write!(f, " {} ", op.symbol())?;
                    wrap(f, rhs, p + 1)
                }
            }
            Expr::Call { func, args } => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Num(f64),
    Ident(String),
    Op(&'static str),
    LParen,
    RParen,
    Comma,
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenKind::Num(v) => write!(f, "{v}"),
            TokenKind::Ident(s) => f.write_str(s),
            TokenKind::Op(s) => f.write_str(s),
            TokenKind::LParen => f.write_str("("),
            TokenKind::RParen => f.write_str(")"),
            TokenKind::Comma => f.write_str(","),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    column: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
        {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let literal: String = chars[start..i].iter().collect();
            let value = literal.parse::<f64>().map_err(|_| ParseError {
                column,
                message: format!("malformed number `{literal}`"),
            })?;
            tokens.push(Token {
                kind: TokenKind::Num(value),
                column,
            });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            tokens.push(Token {
                kind: TokenKind::Ident(chars[start..i].iter().collect()),
                column,
            });
            continue;
        }
        let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        let op = match two.as_str() {
            "<=" => Some("<="),
            ">=" => Some(">="),
            "==" => Some("=="),
            "!=" => Some("!="),
            _ => None,
        };
        if let Some(op) = op {
            tokens.push(Token {
                kind: TokenKind::Op(op),
                column,
            });
            i += 2;
            continue;
        }
        let kind = match c {
            '+' => TokenKind::Op("+"),
            '-' => TokenKind::Op("-"),
            '*' => TokenKind::Op("*"),
            '/' => TokenKind::Op("/"),
            '<' => TokenKind::Op("<"),
            '>' => TokenKind::Op(">"),
            '(' => TokenKind::LParen,
            ')' => TokenKind::RParen,
            ',' => TokenKind::Comma,
            other => {
                return Err(ParseError {
                    column,
                    message: format!("unexpected character `{other}`"),
                })
            }
        };
        tokens.push(Token { kind, column });
        i += 1;
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    end_column: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_kind(&self) -> Option<&TokenKind> {
        self.peek().map(|t| &t.kind)
    }

    fn column(&self) -> usize {
        self.peek().map_or(self.end_column, |t| t.column)
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            column: self.column(),
            message: message.into(),
        })
    }

    fn eat_word(&mut self, word: &str) -> bool {
        if matches!(self.peek_kind(), Some(TokenKind::Ident(w)) if w == word) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_op(&mut self, ops: &[&'static str]) -> Option<&'static str> {
        match self.peek_kind() {
            Some(TokenKind::Op(op)) if ops.contains(op) => {
                let op = *op;
                self.pos += 1;
                Some(op)
            }
            _ => None,
        }
    }

    fn expect(&mut self, kind: TokenKind, what: &str) -> Result<(), ParseError> {
        if self.peek_kind() == Some(&kind) {
            self.pos += 1;
            Ok(())
        } else {
            match self.peek() {
                Some(tok) => self.error(format!("expected {what}, found `{}`", tok.kind)),
                None => self.error(format!("expected {what}, found end of input")),
            }
        }
    }

    fn parse_or(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_and()?;
        while self.eat_word("or") {
            let rhs = self.parse_and()?;
            lhs = Expr::binary(BinOp::Or, lhs, rhs);
        }
        Ok(lhs)
    }

    fn parse_and(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_not()?;
        while self.eat_word("and") {
            let rhs = self.parse_not()?;
            lhs = Expr::binary(BinOp::And, lhs, rhs);
        }
        Ok(lhs)
    }

    fn parse_not(&mut self) -> Result<Expr, ParseError> {
        if self.eat_word("not") {
            return Ok(Expr::Not(Box::new(self.parse_not()?)));
        }
        self.parse_cmp()
    }

    fn parse_cmp(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.parse_add()?;
        let op = match self.eat_op(&["<", "<=", ">", ">=", "==", "!="]) {
            Some(op) => op,
            None => return Ok(lhs),
        };
        let op = match op {
            "<" => BinOp::Lt,
            "<=" => BinOp::Le,
            ">" => BinOp::Gt,
            ">=" => BinOp::Ge,
            "==" => BinOp::Eq,
            _ => BinOp::Ne,
        };
        let rhs = self.parse_add()?;
        if matches!(self.peek_kind(), Some(TokenKind::Op(o)) if ["<", "<=", ">", ">=", "==", "!="].contains(o))
        {
            return self.error("comparisons cannot be chained; use `and`");
        }
        Ok(Expr::binary(op, lhs, rhs))
    }

    fn parse_add(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_mul()?;
        while let Some(op) = self.eat_op(&["+", "-"]) {
            let rhs = self.parse_mul()?;
            let op = if op == "+" { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn parse_mul(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_unary()?;
        while let Some(op) = self.eat_op(&["*", "/"]) {
            let rhs = self.parse_unary()?;
            let op = if op == "*" { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn parse_unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat_op(&["-"]).is_some() {
            // A bare literal folds; a parenthesised one stays a negation.
            let literal = matches!(self.peek_kind(), Some(TokenKind::Num(_)));
            let inner = self.parse_unary()?;
            return Ok(match inner {
                Expr::Num(v) if literal => Expr::Num(-v),
                other => Expr::Neg(Box::new(other)),
            });
        }
        self.parse_primary()
    }

    fn parse_primary(&mut self) -> Result<Expr, ParseError> {
        let Some(tok) = self.peek().cloned() else {
            return self.error("unexpected end of input");
        };
        match tok.kind {
            TokenKind::Num(v) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            TokenKind::LParen => {
                self.pos += 1;
                let inner = self.parse_or()?;
                self.expect(TokenKind::RParen, "`)`")?;
                Ok(inner)
            }
            TokenKind::Ident(word) => {
                self.pos += 1;
                match word.as_str() {
                    "true" => return Ok(Expr::Bool(true)),
                    "false" => return Ok(Expr::Bool(false)),
                    "and" | "or" | "not" => {
                        self.pos -= 1;
                        return self.error(format!("unexpected keyword `{word}`"));
                    }
                    _ => {}
                }
                if let Some(func) = Func::from_name(&word) {
                    self.expect(TokenKind::LParen, "`(` after function name")?;
                    let mut args = vec![self.parse_or()?];
                    while self.peek_kind() == Some(&TokenKind::Comma) {
                        self.pos += 1;
                        args.push(self.parse_or()?);
                    }
                    self.expect(TokenKind::RParen, "`)`")?;
                    return Ok(Expr::Call { func, args });
                }
                Ok(Expr::Ident(word))
            }
            other => self.error(format!("unexpected `{other}`")),
        }
    }
}
