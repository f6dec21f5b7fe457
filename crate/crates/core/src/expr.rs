//! A small arithmetic expression language over state variables `x1..xd` and
//! control variables `u1..um`.
//!
//! Grammar (highest precedence first):
//!
//! ```text
//! primary := number | variable | func '(' expr ')' | func2 '(' expr ',' expr ')' | '(' expr ')'
//! power   := primary ( '^' unary )?          right associative
//! unary   := '-' unary | power
//! term    := unary ( ('*' | '/') unary )*    left associative
//! expr    := term ( ('+' | '-') term )*      left associative
//! ```
//!
//! Evaluation is total on finite inputs: every sub-expression that would
//! produce a non-finite value is reported as [`EvalError::Domain`].

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    /// Zero-based state coordinate (`x1` is `State(0)`).
    State(usize),
    /// Zero-based control coordinate (`u1` is `Control(0)`).
    Control(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func1 {
    Abs,
    Exp,
    Log,
    Sqrt,
    Sin,
    Cos,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func2 {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call1(Func1, Box<Expr>),
    Call2(Func2, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {pos}: expected {expected}")]
    Syntax { pos: usize, expected: String },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("variable `{name}` out of range (declared dimension {limit})")]
    Dimension { name: String, limit: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("domain error in `{expr}`: {reason}")]
    Domain { expr: String, reason: String },
}

impl Func1 {
    fn name(self) -> &'static str {
        match self {
            Func1::Abs => "abs",
            Func1::Exp => "exp",
            Func1::Log => "log",
            Func1::Sqrt => "sqrt",
            Func1::Sin => "sin",
            Func1::Cos => "cos",
            Func1::Tanh => "tanh",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "abs" => Func1::Abs,
            "exp" => Func1::Exp,
            "log" => Func1::Log,
            "sqrt" => Func1::Sqrt,
            "sin" => Func1::Sin,
            "cos" => Func1::Cos,
            "tanh" => Func1::Tanh,
            _ => return None,
        })
    }
}

impl Func2 {
    fn name(self) -> &'static str {
        match self {
            Func2::Min => "min",
            Func2::Max => "max",
        }
    }
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

/// Parses `src` against a state dimension `d` and control dimension `m`.
pub fn parse(src: &str, d: usize, m: usize) -> Result<Expr, ParseError> {
    let mut p = Parser {
        src: src.as_bytes(),
        pos: 0,
        d,
        m,
    };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.syntax("operator or end of input"));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    d: usize,
    m: usize,
}

impl Parser<'_> {
    fn syntax(&self, expected: &str) -> ParseError {
        ParseError::Syntax {
            pos: self.pos,
            expected: expected.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.syntax(&format!("`{}`", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(b'-') {
            let inner = self.unary()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.eat(b'^') {
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.ident(),
            _ => Err(self.syntax("number, variable, function or `(`")),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
            p.pos - s
        };
        let mut n = digits(self);
        if self.pos < self.src.len() && self.src[self.pos] == b'.' {
            self.pos += 1;
            n += digits(self);
        }
        if n == 0 {
            self.pos = start;
            return Err(self.syntax("digits"));
        }
        if self.pos < self.src.len() && matches!(self.src[self.pos], b'e' | b'E') {
            self.pos += 1;
            if self.pos < self.src.len() && matches!(self.src[self.pos], b'+' | b'-') {
                self.pos += 1;
            }
            if digits(self) == 0 {
                return Err(self.syntax("exponent digits"));
            }
        }
        // the slice is ASCII by construction
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Expr::Num(v)),
            _ => {
                self.pos = start;
                Err(self.syntax("finite numeric literal"))
            }
        }
    }

    fn ident(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos])
            .unwrap()
            .to_string();

        if self.peek() == Some(b'(') {
            self.pos += 1;
            if let Some(f) = Func1::from_name(&name) {
                let arg = self.expr()?;
                self.expect(b')')?;
                return Ok(Expr::Call1(f, Box::new(arg)));
            }
            let f2 = match name.as_str() {
                "min" => Func2::Min,
                "max" => Func2::Max,
                _ => return Err(ParseError::UnknownFunction(name)),
            };
            let a = self.expr()?;
            self.expect(b',')?;
            let b = self.expr()?;
            self.expect(b')')?;
            return Ok(Expr::Call2(f2, Box::new(a), Box::new(b)));
        }

        self.variable(name)
    }

    fn variable(&self, name: String) -> Result<Expr, ParseError> {
        let (kind, rest) = name.split_at(1);
        let limit = match kind {
            "x" => self.d,
            "u" => self.m,
            _ => return Err(ParseError::UnknownVariable(name)),
        };
        if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
            return Err(ParseError::UnknownVariable(name));
        }
        let idx: usize = rest
            .parse()
            .map_err(|_| ParseError::UnknownVariable(name.clone()))?;
        if idx == 0 || idx > limit {
            return Err(ParseError::Dimension { name, limit });
        }
        Ok(Expr::Var(if kind == "x" {
            Var::State(idx - 1)
        } else {
            Var::Control(idx - 1)
        }))
    }
}

impl Expr {
    /// Evaluates the expression at state `x` and control `u`.
    pub fn eval(&self, x: &[f64], u: &[f64]) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Num(v) => return Ok(*v),
            Expr::Var(Var::State(j)) => return Ok(x[*j]),
            Expr::Var(Var::Control(j)) => return Ok(u[*j]),
            Expr::Neg(e) => -e.eval(x, u)?,
            Expr::Bin(op, a, b) => {
                let l = a.eval(x, u)?;
                let r = b.eval(x, u)?;
                match op {
                    BinOp::Add => l + r,
                    BinOp::Sub => l - r,
                    BinOp::Mul => l * r,
                    BinOp::Div => {
                        if r == 0.0 {
                            return Err(self.domain("division by zero"));
                        }
                        l / r
                    }
                    BinOp::Pow => match b.as_ref() {
                        Expr::Num(p) if p.fract() == 0.0 && p.abs() <= 64.0 => {
                            if l == 0.0 && *p < 0.0 {
                                return Err(self.domain("zero raised to a negative power"));
                            }
                            l.powi(*p as i32)
                        }
                        _ => {
                            if l < 0.0 && r.fract() != 0.0 {
                                return Err(self.domain("negative base with fractional exponent"));
                            }
                            if l == 0.0 && r < 0.0 {
                                return Err(self.domain("zero raised to a negative power"));
                            }
                            l.powf(r)
                        }
                    },
                }
            }
            Expr::Call1(f, a) => {
                let v = a.eval(x, u)?;
                match f {
                    Func1::Abs => v.abs(),
                    Func1::Exp => v.exp(),
                    Func1::Log => {
                        if v <= 0.0 {
                            return Err(self.domain("log of a non-positive value"));
                        }
                        v.ln()
                    }
                    Func1::Sqrt => {
                        if v < 0.0 {
                            return Err(self.domain("sqrt of a negative value"));
                        }
                        v.sqrt()
                    }
                    Func1::Sin => v.sin(),
                    Func1::Cos => v.cos(),
                    Func1::Tanh => v.tanh(),
                }
            }
            Expr::Call2(f, a, b) => {
                let l = a.eval(x, u)?;
                let r = b.eval(x, u)?;
                match f {
                    Func2::Min => l.min(r),
                    Func2::Max => l.max(r),
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.domain("non-finite result"))
        }
    }

    fn domain(&self, reason: &str) -> EvalError {
        EvalError::Domain {
            expr: self.to_string(),
            reason: reason.to_string(),
        }
    }

    /// Builds a closure tree for repeated evaluation.
    pub fn compile(&self) -> Compiled {
        Compiled {
            f: build(self),
            tree: self.clone(),
        }
    }

    /// Free variables in order of first appearance (left to right).
    pub fn free_vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut Vec<Var>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => {
                if !out.contains(v) {
                    out.push(*v);
                }
            }
            Expr::Neg(a) | Expr::Call1(_, a) => a.collect_vars(out),
            Expr::Bin(_, a, b) | Expr::Call2(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    pub fn depends_on_control(&self) -> bool {
        self.free_vars()
            .iter()
            .any(|v| matches!(v, Var::Control(_)))
    }
}

/// Fully parenthesized rendering; reparses to a structurally identical tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var(Var::State(j)) => write!(f, "x{}", j + 1),
            Expr::Var(Var::Control(j)) => write!(f, "u{}", j + 1),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Call1(func, a) => write!(f, "{}({a})", func.name()),
            Expr::Call2(func, a, b) => write!(f, "{}({a}, {b})", func.name()),
        }
    }
}

type Closure = Box<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Non-finite values become NaN, which every node below propagates; domain
/// violations produce NaN directly.
#[inline(always)]
fn poison(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::NAN
    }
}

fn build(e: &Expr) -> Closure {
    match e {
        Expr::Num(v) => {
            let v = *v;
            Box::new(move |_, _| v)
        }
        Expr::Var(Var::State(j)) => {
            let j = *j;
            Box::new(move |x, _| x[j])
        }
        Expr::Var(Var::Control(j)) => {
            let j = *j;
            Box::new(move |_, u| u[j])
        }
        Expr::Neg(a) => {
            let a = build(a);
            Box::new(move |x, u| -a(x, u))
        }
        Expr::Bin(BinOp::Pow, a, b) => match b.as_ref() {
            Expr::Num(p) if p.fract() == 0.0 && p.abs() <= 64.0 => {
                let p = *p as i32;
                let a = build(a);
                Box::new(move |x, u| {
                    let l = a(x, u);
                    if l.is_nan() || (l == 0.0 && p < 0) {
                        f64::NAN
                    } else {
                        poison(l.powi(p))
                    }
                })
            }
            _ => {
                let (a, b) = (build(a), build(b));
                Box::new(move |x, u| {
                    let (l, r) = (a(x, u), b(x, u));
                    if l.is_nan() || r.is_nan() || (l < 0.0 && r.fract() != 0.0) || (l == 0.0 && r < 0.0)
                    {
                        f64::NAN
                    } else {
                        poison(l.powf(r))
                    }
                })
            }
        },
        Expr::Bin(op, a, b) => {
            let (a, b) = (build(a), build(b));
            match op {
                BinOp::Add => Box::new(move |x, u| poison(a(x, u) + b(x, u))),
                BinOp::Sub => Box::new(move |x, u| poison(a(x, u) - b(x, u))),
                BinOp::Mul => Box::new(move |x, u| poison(a(x, u) * b(x, u))),
                BinOp::Div => Box::new(move |x, u| {
                    let r = b(x, u);
                    if r == 0.0 {
                        f64::NAN
                    } else {
                        poison(a(x, u) / r)
                    }
                }),
                BinOp::Pow => unreachable!(),
            }
        }
        Expr::Call1(f, a) => {
            let a = build(a);
            match f {
                Func1::Abs => Box::new(move |x, u| a(x, u).abs()),
                Func1::Exp => Box::new(move |x, u| poison(a(x, u).exp())),
                Func1::Log => Box::new(move |x, u| {
                    let v = a(x, u);
                    if v > 0.0 {
                        poison(v.ln())
                    } else {
                        f64::NAN
                    }
                }),
                Func1::Sqrt => Box::new(move |x, u| poison(a(x, u).sqrt())),
                Func1::Sin => Box::new(move |x, u| poison(a(x, u).sin())),
                Func1::Cos => Box::new(move |x, u| poison(a(x, u).cos())),
                Func1::Tanh => Box::new(move |x, u| a(x, u).tanh()),
            }
        }
        Expr::Call2(f, a, b) => {
            let (a, b) = (build(a), build(b));
            let f = *f;
            Box::new(move |x, u| {
                let (l, r) = (a(x, u), b(x, u));
                if l.is_nan() || r.is_nan() {
                    f64::NAN
                } else if f == Func2::Min {
                    l.min(r)
                } else {
                    l.max(r)
                }
            })
        }
    }
}

/// An [`Expr`] compiled to closures for hot loops. Values and errors are those
/// of [`Expr::eval`]: a non-finite result hands over to the tree walker, which
/// then reports the domain error.
pub struct Compiled {
    f: Closure,
    tree: Expr,
}

impl fmt::Debug for Compiled {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Compiled({})", self.tree)
    }
}

impl Compiled {
    pub fn expr(&self) -> &Expr {
        &self.tree
    }

    #[inline]
    pub fn eval(&self, x: &[f64], u: &[f64]) -> Result<f64, EvalError> {
        let v = (self.f)(x, u);
        if v.is_finite() {
            Ok(v)
        } else {
            self.tree.eval(x, u)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(s: &str, x: &[f64], u: &[f64]) -> Result<f64, EvalError> {
        parse(s, x.len().max(1), u.len().max(1)).unwrap().eval(x, u)
    }

    #[test]
    fn parses_linear_drift() {
        let e = parse("-x1 + u1", 1, 1).unwrap();
        assert_eq!(e.free_vars(), vec![Var::State(0), Var::Control(0)]);
        assert_eq!(e.eval(&[2.0], &[0.5]).unwrap(), -1.5);
    }

    #[test]
    fn incomplete_expression_is_syntax_error_at_end() {
        match parse("x1 +", 1, 1) {
            Err(ParseError::Syntax { pos, .. }) => assert_eq!(pos, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn variable_out_of_range() {
        assert!(matches!(
            parse("x3", 2, 1),
            Err(ParseError::Dimension { limit: 2, .. })
        ));
        assert!(matches!(parse("u2", 1, 1), Err(ParseError::Dimension { .. })));
        assert!(matches!(parse("x0", 1, 1), Err(ParseError::Dimension { .. })));
        assert!(matches!(parse("y1", 1, 1), Err(ParseError::UnknownVariable(_))));
        assert!(matches!(parse("foo(x1)", 1, 1), Err(ParseError::UnknownFunction(_))));
    }

    #[test]
    fn arithmetic() {
        assert_eq!(ev("x1^2 + 0.25*u1^2", &[2.0], &[2.0]).unwrap(), 5.0);
        assert_eq!(ev("2+3*4", &[0.0], &[]).unwrap(), 14.0);
        assert_eq!(ev("2^3^2", &[0.0], &[]).unwrap(), 512.0);
        assert_eq!(ev("-2^2", &[0.0], &[]).unwrap(), -4.0);
        assert_eq!(ev("2^-1", &[0.0], &[]).unwrap(), 0.5);
        assert_eq!(ev("8/2/2", &[0.0], &[]).unwrap(), 2.0);
        assert_eq!(ev("1-2-3", &[0.0], &[]).unwrap(), -4.0);
        assert_eq!(ev("min(x1, 3) + max(x1, 3)", &[5.0], &[]).unwrap(), 8.0);
        assert_eq!(ev("1.5e2 + .5 + 2E-1", &[0.0], &[]).unwrap(), 150.7);
        assert_eq!(ev("-x1*abs(x1)", &[-3.0], &[]).unwrap(), 9.0);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(ev("log(x1)", &[0.0], &[]), Err(EvalError::Domain { .. })));
        assert!(matches!(ev("sqrt(x1)", &[-1.0], &[]), Err(EvalError::Domain { .. })));
        assert!(matches!(ev("1/x1", &[0.0], &[]), Err(EvalError::Domain { .. })));
        assert!(matches!(ev("exp(x1)", &[1000.0], &[]), Err(EvalError::Domain { .. })));
        assert!(matches!(ev("x1^0.5", &[-2.0], &[]), Err(EvalError::Domain { .. })));
        match ev("1 + log(x1)", &[0.0], &[]) {
            Err(EvalError::Domain { expr, .. }) => assert_eq!(expr, "log(x1)"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn overflowing_literal_rejected() {
        assert!(matches!(parse("1e999", 1, 1), Err(ParseError::Syntax { .. })));
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0.0f64..1e6).prop_map(Expr::Num),
            (0usize..2).prop_map(|j| Expr::Var(Var::State(j))),
            Just(Expr::Var(Var::Control(0))),
        ];
        leaf.prop_recursive(5, 48, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
                (
                    prop_oneof![
                        Just(BinOp::Add),
                        Just(BinOp::Sub),
                        Just(BinOp::Mul),
                        Just(BinOp::Div),
                        Just(BinOp::Pow)
                    ],
                    inner.clone(),
                    inner.clone()
                )
                    .prop_map(|(op, a, b)| Expr::Bin(op, Box::new(a), Box::new(b))),
                (
                    prop_oneof![
                        Just(Func1::Abs),
                        Just(Func1::Exp),
                        Just(Func1::Log),
                        Just(Func1::Sqrt),
                        Just(Func1::Sin),
                        Just(Func1::Cos),
                        Just(Func1::Tanh)
                    ],
                    inner.clone()
                )
                    .prop_map(|(f, a)| Expr::Call1(f, Box::new(a))),
                (prop_oneof![Just(Func2::Min), Just(Func2::Max)], inner.clone(), inner)
                    .prop_map(|(f, a, b)| Expr::Call2(f, Box::new(a), Box::new(b))),
            ]
        })
    }

    proptest! {
        #[test]
        fn display_reparses_identically(e in arb_expr()) {
            let printed = e.to_string();
            let back = parse(&printed, 2, 1).unwrap();
            prop_assert_eq!(back, e);
        }

        #[test]
        fn eval_is_deterministic(e in arb_expr(), x0 in -5.0f64..5.0, x1 in -5.0f64..5.0, u in -1.0f64..1.0) {
            let a = e.eval(&[x0, x1], &[u]);
            let b = e.eval(&[x0, x1], &[u]);
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    prop_assert!(a.is_finite());
                    prop_assert_eq!(a.to_bits(), b.to_bits());
                }
                (Err(a), Err(b)) => prop_assert_eq!(a, b),
                _ => prop_assert!(false, "nondeterministic evaluation"),
            }
        }
    }

    #[test]
    fn compiled_matches_tree() {
        let exprs = [
            "0.25*x1^2 + u1^2 + 0.2*sin(2*x1)*u1",
            "exp(-x1^2) - min(x2, u1) / (1 + abs(x1))",
            "log(x1) + sqrt(x2) + x1^-2 + x2^0.5",
            "max(tanh(x1), cos(x2)) ^ 3 - -x1",
            "exp(exp(x1))",
            "1 / (x1 - x2)",
        ];
        let pts = [[0.5, 2.0], [-1.0, 0.25], [0.0, 0.0], [7.0, 7.0], [1e3, -3.0]];
        for src in exprs {
            let e = parse(src, 2, 1).unwrap();
            let c = e.compile();
            for x in pts {
                for u in [[-1.0], [0.0], [0.3]] {
                    assert_eq!(c.eval(&x, &u), e.eval(&x, &u), "{src} at {x:?}, {u:?}");
                }
            }
        }
    }
}
