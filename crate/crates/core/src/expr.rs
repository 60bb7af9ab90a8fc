//! Arithmetic expressions used for the right-hand sides of the dynamics.
//!
//! The grammar (lowest to highest precedence):
//!
//! ```text
//! expr       := comparison
//! comparison := additive (("<" | "<=" | ">" | ">=" | "==" | "!=") additive)*
//! additive   := term (("+" | "-") term)*
//! term       := unary (("*" | "/") unary)*
//! unary      := "-" unary | power
//! power      := primary ("^" unary)?            // right associative
//! primary    := number | variable | constant | call | "(" expr ")"
//! call       := name "(" expr ("," expr)* ")"
//! variable   := ("x" | "u" | "w") digits
//! ```
//!
//! Comparisons evaluate to exactly `1.0` or `0.0`. `ite(c, a, b)` evaluates
//! only the selected branch. Named constants are folded into literals while
//! parsing.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Which argument vector a variable reads from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarKind {
    State,
    Input,
    Disturbance,
}

impl VarKind {
    fn prefix(self) -> char {
        match self {
            VarKind::State => 'x',
            VarKind::Input => 'u',
            VarKind::Disturbance => 'w',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Asin,
    Acos,
    Atan,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Min,
    Max,
}

impl Func {
    const ALL: [Func; 12] = [
        Func::Sin,
        Func::Cos,
        Func::Tan,
        Func::Asin,
        Func::Acos,
        Func::Atan,
        Func::Exp,
        Func::Ln,
        Func::Sqrt,
        Func::Abs,
        Func::Min,
        Func::Max,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Asin => "asin",
            Func::Acos => "acos",
            Func::Atan => "atan",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }

    /// `None` means variadic with at least one argument.
    fn arity(self) -> Option<usize> {
        match self {
            Func::Min | Func::Max => None,
            _ => Some(1),
        }
    }
}

/// Parsed expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(VarKind, usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
    Ite(Box<Expr>, Box<Expr>, Box<Expr>),
}

/// Declared variable counts: states, inputs, disturbances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub states: usize,
    pub inputs: usize,
    pub disturbances: usize,
}

impl Dims {
    pub fn new(states: usize, inputs: usize, disturbances: usize) -> Self {
        Dims {
            states,
            inputs,
            disturbances,
        }
    }

    fn of(&self, kind: VarKind) -> usize {
        match kind {
            VarKind::State => self.states,
            VarKind::Input => self.inputs,
            VarKind::Disturbance => self.disturbances,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("{line}:{column}: empty expression")]
    Empty { line: usize, column: usize },
    #[error("{line}:{column}: syntax error: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{line}:{column}: unknown identifier `{name}`")]
    UnknownIdentifier {
        line: usize,
        column: usize,
        name: String,
    },
    #[error("{line}:{column}: variable `{name}` out of range (declared dimension {dim})")]
    VariableOutOfRange {
        line: usize,
        column: usize,
        name: String,
        dim: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero in `{0}`")]
    DivisionByZero(String),
    #[error("domain error in `{expr}`: {reason}")]
    Domain { expr: String, reason: &'static str },
    #[error("argument vector `{kind}` has length {got}, expression needs index {index}")]
    MissingArgument { kind: char, index: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(&'static str),
    LParen,
    RParen,
    Comma,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut line, mut column) = (1usize, 1usize);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, column);
        if c == '\n' {
            line += 1;
            column = 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            column += 1;
            continue;
        }
        let start = i;
        let tok = if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
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
            let s: String = chars[start..i].iter().collect();
            let v: f64 = s.parse().map_err(|_| ParseError::Syntax {
                line: tl,
                column: tc,
                message: format!("malformed number `{s}`"),
            })?;
            Tok::Num(v)
        } else if c.is_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            Tok::Ident(chars[start..i].iter().collect())
        } else {
            let next = chars.get(i + 1).copied();
            let (op, len) = match (c, next) {
                ('<', Some('=')) => (Some("<="), 2),
                ('>', Some('=')) => (Some(">="), 2),
                ('=', Some('=')) => (Some("=="), 2),
                ('!', Some('=')) => (Some("!="), 2),
                ('<', _) => (Some("<"), 1),
                ('>', _) => (Some(">"), 1),
                ('+', _) => (Some("+"), 1),
                ('-', _) => (Some("-"), 1),
                ('*', _) => (Some("*"), 1),
                ('/', _) => (Some("/"), 1),
                ('^', _) => (Some("^"), 1),
                _ => (None, 1),
            };
            i += len;
            match (op, c) {
                (Some(op), _) => Tok::Op(op),
                (None, '(') => Tok::LParen,
                (None, ')') => Tok::RParen,
                (None, ',') => Tok::Comma,
                _ => {
                    return Err(ParseError::Syntax {
                        line: tl,
                        column: tc,
                        message: format!("unexpected character `{c}`"),
                    })
                }
            }
        };
        column += i - start;
        out.push(Token {
            tok,
            line: tl,
            column: tc,
        });
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<Token>,
    pos: usize,
    dims: Dims,
    constants: &'a BTreeMap<String, f64>,
    end: (usize, usize),
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn here(&self) -> (usize, usize) {
        self.toks
            .get(self.pos)
            .map(|t| (t.line, t.column))
            .unwrap_or(self.end)
    }

    fn syntax<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        let (line, column) = self.here();
        Err(ParseError::Syntax {
            line,
            column,
            message: message.into(),
        })
    }

    fn eat_op(&mut self, ops: &[&'static str]) -> Option<&'static str> {
        if let Some(Tok::Op(op)) = self.peek() {
            if let Some(found) = ops.iter().find(|o| **o == *op) {
                self.pos += 1;
                return Some(found);
            }
        }
        None
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            self.syntax(format!("expected {what}"))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.additive()?;
        while let Some(op) = self.eat_op(&["<", "<=", ">", ">=", "==", "!="]) {
            let rhs = self.additive()?;
            let op = match op {
                "<" => BinOp::Lt,
                "<=" => BinOp::Le,
                ">" => BinOp::Gt,
                ">=" => BinOp::Ge,
                "==" => BinOp::Eq,
                _ => BinOp::Ne,
            };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn additive(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(op) = self.eat_op(&["+", "-"]) {
            let rhs = self.term()?;
            let op = if op == "+" { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.eat_op(&["*", "/"]) {
            let rhs = self.unary()?;
            let op = if op == "*" { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat_op(&["-"]).is_some() {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.eat_op(&["^"]).is_some() {
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn args(&mut self) -> Result<Vec<Expr>, ParseError> {
        self.expect(Tok::LParen, "`(`")?;
        let mut args = vec![self.expr()?];
        while self.peek() == Some(&Tok::Comma) {
            self.pos += 1;
            args.push(self.expr()?);
        }
        self.expect(Tok::RParen, "`)` or `,`")?;
        Ok(args)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let (line, column) = self.here();
        let Some(tok) = self.peek().cloned() else {
            return self.syntax("unexpected end of expression");
        };
        match tok {
            Tok::Num(v) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Tok::LParen => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.pos += 1;
                if self.peek() == Some(&Tok::LParen) {
                    let args = self.args()?;
                    if name == "ite" {
                        if args.len() != 3 {
                            return Err(ParseError::Syntax {
                                line,
                                column,
                                message: format!("`ite` takes 3 arguments, got {}", args.len()),
                            });
                        }
                        let mut it = args.into_iter();
                        let (c, a, b) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
                        return Ok(Expr::Ite(Box::new(c), Box::new(a), Box::new(b)));
                    }
                    let Some(func) = Func::from_name(&name) else {
                        return Err(ParseError::UnknownIdentifier { line, column, name });
                    };
                    if let Some(n) = func.arity() {
                        if args.len() != n {
                            return Err(ParseError::Syntax {
                                line,
                                column,
                                message: format!("`{name}` takes {n} argument(s), got {}", args.len()),
                            });
                        }
                    }
                    return Ok(Expr::Call(func, args));
                }
                if let Some(v) = self.constants.get(&name) {
                    return Ok(Expr::Num(*v));
                }
                if let Some((kind, index)) = parse_variable(&name) {
                    let dim = self.dims.of(kind);
                    if index >= dim {
                        return Err(ParseError::VariableOutOfRange {
                            line,
                            column,
                            name,
                            dim,
                        });
                    }
                    return Ok(Expr::Var(kind, index));
                }
                if name == "pi" {
                    return Ok(Expr::Num(std::f64::consts::PI));
                }
                Err(ParseError::UnknownIdentifier { line, column, name })
            }
            _ => self.syntax("expected a number, variable, call or `(`"),
        }
    }
}

fn parse_variable(name: &str) -> Option<(VarKind, usize)> {
    let mut chars = name.chars();
    let kind = match chars.next()? {
        'x' => VarKind::State,
        'u' => VarKind::Input,
        'w' => VarKind::Disturbance,
        _ => return None,
    };
    let digits = chars.as_str();
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    // Reject leading zeros like `x01` so printing round-trips.
    if digits.len() > 1 && digits.starts_with('0') {
        return None;
    }
    digits.parse().ok().map(|i| (kind, i))
}

impl Expr {
    /// Parses `text`, validating every variable against `dims` and folding
    /// named `constants` into literals.
    pub fn parse(text: &str, dims: Dims, constants: &BTreeMap<String, f64>) -> Result<Expr, ParseError> {
        let toks = tokenize(text)?;
        let end = text
            .lines()
            .enumerate()
            .last()
            .map(|(i, l)| (i + 1, l.chars().count() + 1))
            .unwrap_or((1, 1));
        if toks.is_empty() {
            return Err(ParseError::Empty { line: 1, column: 1 });
        }
        let mut p = Parser {
            toks,
            pos: 0,
            dims,
            constants,
            end,
        };
        let e = p.expr()?;
        if p.pos != p.toks.len() {
            return p.syntax("unexpected trailing input");
        }
        Ok(e)
    }

    /// Evaluates the expression. Domain violations are reported as errors
    /// instead of producing NaN.
    pub fn eval(&self, x: &[f64], u: &[f64], w: &[f64]) -> Result<f64, EvalError> {
        match self {
            Expr::Num(v) => Ok(*v),
            Expr::Var(kind, i) => {
                let src = match kind {
                    VarKind::State => x,
                    VarKind::Input => u,
                    VarKind::Disturbance => w,
                };
                src.get(*i).copied().ok_or(EvalError::MissingArgument {
                    kind: kind.prefix(),
                    index: *i,
                    got: src.len(),
                })
            }
            Expr::Neg(a) => Ok(-a.eval(x, u, w)?),
            Expr::Bin(op, a, b) => {
                let l = a.eval(x, u, w)?;
                let r = b.eval(x, u, w)?;
                let bool_val = |c: bool| if c { 1.0 } else { 0.0 };
                Ok(match op {
                    BinOp::Add => l + r,
                    BinOp::Sub => l - r,
                    BinOp::Mul => l * r,
                    BinOp::Div => {
                        if r == 0.0 {
                            return Err(EvalError::DivisionByZero(self.to_string()));
                        }
                        l / r
                    }
                    BinOp::Pow => {
                        if l < 0.0 && r.fract() != 0.0 {
                            return Err(self.domain("negative base with non-integer exponent"));
                        }
                        if l == 0.0 && r < 0.0 {
                            return Err(EvalError::DivisionByZero(self.to_string()));
                        }
                        l.powf(r)
                    }
                    BinOp::Lt => bool_val(l < r),
                    BinOp::Le => bool_val(l <= r),
                    BinOp::Gt => bool_val(l > r),
                    BinOp::Ge => bool_val(l >= r),
                    BinOp::Eq => bool_val(l == r),
                    BinOp::Ne => bool_val(l != r),
                })
            }
            Expr::Call(f, args) => {
                if matches!(f, Func::Min | Func::Max) {
                    let mut acc = args[0].eval(x, u, w)?;
                    for a in &args[1..] {
                        let v = a.eval(x, u, w)?;
                        acc = if *f == Func::Min { acc.min(v) } else { acc.max(v) };
                    }
                    return Ok(acc);
                }
                let v = args[0].eval(x, u, w)?;
                Ok(match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Tan => v.tan(),
                    Func::Asin | Func::Acos if !(-1.0..=1.0).contains(&v) => {
                        return Err(self.domain("argument outside [-1, 1]"))
                    }
                    Func::Asin => v.asin(),
                    Func::Acos => v.acos(),
                    Func::Atan => v.atan(),
                    Func::Exp => v.exp(),
                    Func::Ln if v <= 0.0 => return Err(self.domain("logarithm of a non-positive number")),
                    Func::Ln => v.ln(),
                    Func::Sqrt if v < 0.0 => return Err(self.domain("square root of a negative number")),
                    Func::Sqrt => v.sqrt(),
                    Func::Abs => v.abs(),
                    Func::Min | Func::Max => unreachable!(),
                })
            }
            Expr::Ite(c, a, b) => {
                if c.eval(x, u, w)? != 0.0 {
                    a.eval(x, u, w)
                } else {
                    b.eval(x, u, w)
                }
            }
        }
    }

    fn domain(&self, reason: &'static str) -> EvalError {
        EvalError::Domain {
            expr: self.to_string(),
            reason,
        }
    }

    /// Largest variable index used per class, as a `Dims` of counts.
    pub fn used_dims(&self) -> Dims {
        let mut d = Dims::new(0, 0, 0);
        self.visit(&mut |e| {
            if let Expr::Var(kind, i) = e {
                let slot = match kind {
                    VarKind::State => &mut d.states,
                    VarKind::Input => &mut d.inputs,
                    VarKind::Disturbance => &mut d.disturbances,
                };
                *slot = (*slot).max(i + 1);
            }
        });
        d
    }

    fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Num(_) | Expr::Var(..) => {}
            Expr::Neg(a) => a.visit(f),
            Expr::Bin(_, a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.visit(f)),
            Expr::Ite(c, a, b) => {
                c.visit(f);
                a.visit(f);
                b.visit(f);
            }
        }
    }
}

/// Fully parenthesized rendering; re-parses to the same tree for parsed
/// trees, except that a negative folded constant comes back as a negation.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) if *v < 0.0 => write!(f, "({v:?})"),
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var(kind, i) => write!(f, "{}{}", kind.prefix(), i),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
            Expr::Ite(c, a, b) => write!(f, "ite({c}, {a}, {b})"),
        }
    }
}
