//! Closed-form scalar expressions over the plane.
//!
//! The grammar is deliberately small:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | ident | ident '(' expr ')' | '(' expr ')'
//! ```
//!
//! Identifiers are the variables `x`, `y` (planar position), `t`, `c`
//! (boundary parameter and curve index, only meaningful for boundary
//! functions) and the constants `pi` and `e`. Functions: `sin`, `cos`,
//! `exp`, `sqrt`. Exponents must be constant expressions.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("unexpected character '{ch}' at offset {pos}")]
    UnexpectedChar { ch: char, pos: usize },
    #[error("unexpected end of expression")]
    UnexpectedEnd,
    #[error("unexpected token '{token}' at offset {pos}")]
    UnexpectedToken { token: String, pos: usize },
    #[error("unknown identifier '{0}'")]
    UnknownIdent(String),
    #[error("unknown function '{0}'")]
    UnknownFunction(String),
    #[error("exponent must be a constant expression")]
    NonConstantExponent,
}

/// Variable slots understood by the evaluator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X = 0,
    Y = 1,
    T = 2,
    C = 3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Var(Var),
    Neg(Arc<Node>),
    Add(Arc<Node>, Arc<Node>),
    Sub(Arc<Node>, Arc<Node>),
    Mul(Arc<Node>, Arc<Node>),
    Div(Arc<Node>, Arc<Node>),
    Pow(Arc<Node>, f64),
    Call(Func, Arc<Node>),
}

/// A parsed expression. Cheap to clone.
#[derive(Clone, PartialEq)]
pub struct Expr {
    root: Arc<Node>,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({})", self)
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self, ExprError> {
        let tokens = lex(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let node = p.expr()?;
        if let Some((tok, pos)) = p.tokens.get(p.pos) {
            return Err(ExprError::UnexpectedToken {
                token: tok.to_string(),
                pos: *pos,
            });
        }
        Ok(Expr { root: Arc::new(node) })
    }

    pub fn constant(value: f64) -> Self {
        Expr {
            root: Arc::new(Node::Const(value)),
        }
    }

    pub fn var(v: Var) -> Self {
        Expr {
            root: Arc::new(Node::Var(v)),
        }
    }

    /// Evaluates with `t = c = 0`.
    #[inline]
    pub fn eval_xy(&self, x: f64, y: f64) -> f64 {
        eval(&self.root, &[x, y, 0.0, 0.0])
    }

    pub fn eval(&self, vars: &[f64; 4]) -> f64 {
        eval(&self.root, vars)
    }

    pub fn is_constant(&self) -> bool {
        is_const(&self.root)
    }

    pub fn uses(&self, v: Var) -> bool {
        uses(&self.root, v)
    }

    /// Symbolic partial derivative.
    pub fn derivative(&self, v: Var) -> Expr {
        Expr {
            root: Arc::new(simplify(diff(&self.root, v))),
        }
    }

    /// Simultaneously replaces `x` and `y`.
    pub fn substitute_xy(&self, x: &Expr, y: &Expr) -> Expr {
        Expr {
            root: Arc::new(subst(&self.root, &x.root, &y.root)),
        }
    }

    pub fn add(&self, other: &Expr) -> Expr {
        Expr {
            root: Arc::new(Node::Add(self.root.clone(), other.root.clone())),
        }
    }

    pub fn mul(&self, other: &Expr) -> Expr {
        Expr {
            root: Arc::new(Node::Mul(self.root.clone(), other.root.clone())),
        }
    }

    pub fn neg(&self) -> Expr {
        Expr {
            root: Arc::new(Node::Neg(self.root.clone())),
        }
    }
}

fn eval(n: &Node, v: &[f64; 4]) -> f64 {
    match n {
        Node::Const(c) => *c,
        Node::Var(k) => v[*k as usize],
        Node::Neg(a) => -eval(a, v),
        Node::Add(a, b) => eval(a, v) + eval(b, v),
        Node::Sub(a, b) => eval(a, v) - eval(b, v),
        Node::Mul(a, b) => eval(a, v) * eval(b, v),
        Node::Div(a, b) => eval(a, v) / eval(b, v),
        Node::Pow(a, p) => {
            let base = eval(a, v);
            if p.fract() == 0.0 && p.abs() <= 64.0 {
                base.powi(*p as i32)
            } else {
                base.powf(*p)
            }
        }
        Node::Call(f, a) => {
            let x = eval(a, v);
            match f {
                Func::Sin => x.sin(),
                Func::Cos => x.cos(),
                Func::Exp => x.exp(),
                Func::Sqrt => x.sqrt(),
            }
        }
    }
}

fn is_const(n: &Node) -> bool {
    match n {
        Node::Const(_) => true,
        Node::Var(_) => false,
        Node::Neg(a) | Node::Pow(a, _) | Node::Call(_, a) => is_const(a),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
            is_const(a) && is_const(b)
        }
    }
}

fn uses(n: &Node, var: Var) -> bool {
    match n {
        Node::Const(_) => false,
        Node::Var(k) => *k == var,
        Node::Neg(a) | Node::Pow(a, _) | Node::Call(_, a) => uses(a, var),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
            uses(a, var) || uses(b, var)
        }
    }
}

fn c(v: f64) -> Arc<Node> {
    Arc::new(Node::Const(v))
}

fn diff(n: &Node, var: Var) -> Node {
    use Node::*;
    match n {
        Const(_) => Const(0.0),
        Node::Var(k) => Const(if *k == var { 1.0 } else { 0.0 }),
        Neg(a) => Neg(Arc::new(diff(a, var))),
        Add(a, b) => Add(Arc::new(diff(a, var)), Arc::new(diff(b, var))),
        Sub(a, b) => Sub(Arc::new(diff(a, var)), Arc::new(diff(b, var))),
        Mul(a, b) => Add(
            Arc::new(Mul(Arc::new(diff(a, var)), b.clone())),
            Arc::new(Mul(a.clone(), Arc::new(diff(b, var)))),
        ),
        Div(a, b) => Div(
            Arc::new(Sub(
                Arc::new(Mul(Arc::new(diff(a, var)), b.clone())),
                Arc::new(Mul(a.clone(), Arc::new(diff(b, var)))),
            )),
            Arc::new(Pow(b.clone(), 2.0)),
        ),
        Pow(a, p) => Mul(
            Arc::new(Mul(c(*p), Arc::new(Pow(a.clone(), p - 1.0)))),
            Arc::new(diff(a, var)),
        ),
        Call(f, a) => {
            let outer = match f {
                Func::Sin => Call(Func::Cos, a.clone()),
                Func::Cos => Neg(Arc::new(Call(Func::Sin, a.clone()))),
                Func::Exp => Call(Func::Exp, a.clone()),
                Func::Sqrt => Div(c(0.5), Arc::new(Call(Func::Sqrt, a.clone()))),
            };
            Mul(Arc::new(outer), Arc::new(diff(a, var)))
        }
    }
}

fn subst(n: &Node, x: &Arc<Node>, y: &Arc<Node>) -> Node {
    use Node::*;
    let s = |a: &Arc<Node>| Arc::new(subst(a, x, y));
    match n {
        Const(v) => Const(*v),
        Node::Var(self::Var::X) => (**x).clone(),
        Node::Var(self::Var::Y) => (**y).clone(),
        Node::Var(k) => Node::Var(*k),
        Neg(a) => Neg(s(a)),
        Add(a, b) => Add(s(a), s(b)),
        Sub(a, b) => Sub(s(a), s(b)),
        Mul(a, b) => Mul(s(a), s(b)),
        Div(a, b) => Div(s(a), s(b)),
        Pow(a, p) => Pow(s(a), *p),
        Call(f, a) => Call(*f, s(a)),
    }
}

/// Folds constants and strips the zeros and ones that differentiation leaves behind.
fn simplify(n: Node) -> Node {
    use Node::*;
    let simp = |a: &Arc<Node>| simplify((**a).clone());
    let node = match &n {
        Neg(a) => match simp(a) {
            Const(v) => Const(-v),
            other => Neg(Arc::new(other)),
        },
        Add(a, b) => match (simp(a), simp(b)) {
            (Const(x), Const(y)) => Const(x + y),
            (Const(z), o) | (o, Const(z)) if z == 0.0 => o,
            (x, y) => Add(Arc::new(x), Arc::new(y)),
        },
        Sub(a, b) => match (simp(a), simp(b)) {
            (Const(x), Const(y)) => Const(x - y),
            (o, Const(z)) if z == 0.0 => o,
            (Const(z), o) if z == 0.0 => Neg(Arc::new(o)),
            (x, y) => Sub(Arc::new(x), Arc::new(y)),
        },
        Mul(a, b) => match (simp(a), simp(b)) {
            (Const(x), Const(y)) => Const(x * y),
            (Const(z), _) | (_, Const(z)) if z == 0.0 => Const(0.0),
            (Const(o), e) | (e, Const(o)) if o == 1.0 => e,
            (x, y) => Mul(Arc::new(x), Arc::new(y)),
        },
        Div(a, b) => match (simp(a), simp(b)) {
            (Const(z), _) if z == 0.0 => Const(0.0),
            (Const(x), Const(y)) => Const(x / y),
            (e, Const(o)) if o == 1.0 => e,
            (x, y) => Div(Arc::new(x), Arc::new(y)),
        },
        Pow(a, p) => match (simp(a), *p) {
            (_, p) if p == 0.0 => Const(1.0),
            (e, p) if p == 1.0 => e,
            (Const(x), p) => Const(x.powf(p)),
            (e, p) => Pow(Arc::new(e), p),
        },
        Call(f, a) => match simp(a) {
            Const(x) => Const(eval(&Call(*f, c(x)), &[0.0; 4])),
            e => Call(*f, Arc::new(e)),
        },
        _ => n.clone(),
    };
    node
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(&self.root, f)
    }
}

fn write_node(n: &Node, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match n {
        Node::Const(v) => {
            if *v < 0.0 {
                write!(f, "({:?})", v)
            } else {
                write!(f, "{:?}", v)
            }
        }
        Node::Var(k) => write!(
            f,
            "{}",
            match k {
                Var::X => "x",
                Var::Y => "y",
                Var::T => "t",
                Var::C => "c",
            }
        ),
        Node::Neg(a) => {
            write!(f, "(-")?;
            write_node(a, f)?;
            write!(f, ")")
        }
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
            let op = match n {
                Node::Add(..) => "+",
                Node::Sub(..) => "-",
                Node::Mul(..) => "*",
                _ => "/",
            };
            write!(f, "(")?;
            write_node(a, f)?;
            write!(f, " {} ", op)?;
            write_node(b, f)?;
            write!(f, ")")
        }
        Node::Pow(a, p) => {
            write!(f, "(")?;
            write_node(a, f)?;
            if *p < 0.0 {
                write!(f, ")^({:?})", p)
            } else {
                write!(f, ")^{:?}", p)
            }
        }
        Node::Call(func, a) => {
            let name = match func {
                Func::Sin => "sin",
                Func::Cos => "cos",
                Func::Exp => "exp",
                Func::Sqrt => "sqrt",
            };
            write!(f, "{}(", name)?;
            write_node(a, f)?;
            write!(f, ")")
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Num(v) => write!(f, "{}", v),
            Tok::Ident(s) => write!(f, "{}", s),
            Tok::Op(c) => write!(f, "{}", c),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let bytes: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let ch = bytes[i];
        if ch.is_whitespace() {
            i += 1;
        } else if ch.is_ascii_digit() || ch == '.' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == '.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == 'e' || bytes[i] == 'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == '+' || bytes[j] == '-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = bytes[start..i].iter().collect();
            let v = text
                .parse::<f64>()
                .map_err(|_| ExprError::UnexpectedToken {
                    token: text.clone(),
                    pos: start,
                })?;
            out.push((Tok::Num(v), start));
        } else if ch.is_ascii_alphabetic() || ch == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == '_') {
                i += 1;
            }
            out.push((Tok::Ident(bytes[start..i].iter().collect()), start));
        } else if "+-*/^()".contains(ch) {
            out.push((Tok::Op(ch), i));
            i += 1;
        } else {
            return Err(ExprError::UnexpectedChar { ch, pos: i });
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek_op(&self) -> Option<char> {
        match self.tokens.get(self.pos) {
            Some((Tok::Op(c), _)) => Some(*c),
            _ => None,
        }
    }

    fn expect(&mut self, op: char) -> Result<(), ExprError> {
        match self.tokens.get(self.pos) {
            Some((Tok::Op(c), _)) if *c == op => {
                self.pos += 1;
                Ok(())
            }
            Some((tok, pos)) => Err(ExprError::UnexpectedToken {
                token: tok.to_string(),
                pos: *pos,
            }),
            None => Err(ExprError::UnexpectedEnd),
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        while let Some(op) = self.peek_op() {
            if op != '+' && op != '-' {
                break;
            }
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' {
                Node::Add(Arc::new(lhs), Arc::new(rhs))
            } else {
                Node::Sub(Arc::new(lhs), Arc::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.peek_op() {
            if op != '*' && op != '/' {
                break;
            }
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Node::Mul(Arc::new(lhs), Arc::new(rhs))
            } else {
                Node::Div(Arc::new(lhs), Arc::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.peek_op() == Some('-') {
            self.pos += 1;
            let inner = self.unary()?;
            return Ok(Node::Neg(Arc::new(inner)));
        }
        if self.peek_op() == Some('+') {
            self.pos += 1;
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            let exp = self.unary()?;
            if !is_const(&exp) {
                return Err(ExprError::NonConstantExponent);
            }
            return Ok(Node::Pow(Arc::new(base), eval(&exp, &[0.0; 4])));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let (tok, pos) = self
            .tokens
            .get(self.pos)
            .cloned()
            .ok_or(ExprError::UnexpectedEnd)?;
        self.pos += 1;
        match tok {
            Tok::Num(v) => Ok(Node::Const(v)),
            Tok::Op('(') => {
                let inner = self.expr()?;
                self.expect(')')?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if self.peek_op() == Some('(') {
                    let func = match name.as_str() {
                        "sin" => Func::Sin,
                        "cos" => Func::Cos,
                        "exp" => Func::Exp,
                        "sqrt" => Func::Sqrt,
                        _ => return Err(ExprError::UnknownFunction(name)),
                    };
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.expect(')')?;
                    return Ok(Node::Call(func, Arc::new(arg)));
                }
                match name.as_str() {
                    "x" => Ok(Node::Var(Var::X)),
                    "y" => Ok(Node::Var(Var::Y)),
                    "t" => Ok(Node::Var(Var::T)),
                    "c" => Ok(Node::Var(Var::C)),
                    "pi" => Ok(Node::Const(std::f64::consts::PI)),
                    "e" => Ok(Node::Const(std::f64::consts::E)),
                    _ => Err(ExprError::UnknownIdent(name)),
                }
            }
            Tok::Op(c) => Err(ExprError::UnexpectedToken {
                token: c.to_string(),
                pos,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, x: f64, y: f64) -> f64 {
        Expr::parse(s).unwrap().eval_xy(x, y)
    }

    #[test]
    fn precedence_and_unary_minus() {
        assert_eq!(ev("1 + 2*3", 0.0, 0.0), 7.0);
        assert_eq!(ev("-x^2", 3.0, 0.0), -9.0);
        assert_eq!(ev("2^-1", 0.0, 0.0), 0.5);
        assert_eq!(ev("(x - y) / 2", 5.0, 1.0), 2.0);
        assert_eq!(ev("1e-3 * 1E3", 0.0, 0.0), 1.0);
    }

    #[test]
    fn functions_and_constants() {
        let v = ev("1 + 0.5*sin(x)*cos(y)", 0.3, -0.7);
        assert!((v - (1.0 + 0.5 * 0.3f64.sin() * (-0.7f64).cos())).abs() < 1e-15);
        assert!((ev("exp(1) - e", 0.0, 0.0)).abs() < 1e-15);
        assert!((ev("cos(pi)", 0.0, 0.0) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn errors_name_the_problem() {
        assert!(matches!(Expr::parse("x +"), Err(ExprError::UnexpectedEnd)));
        assert!(matches!(
            Expr::parse("foo(x)"),
            Err(ExprError::UnknownFunction(_))
        ));
        assert!(matches!(Expr::parse("z"), Err(ExprError::UnknownIdent(_))));
        assert!(matches!(
            Expr::parse("x ^ y"),
            Err(ExprError::NonConstantExponent)
        ));
        assert!(matches!(
            Expr::parse("x $ y"),
            Err(ExprError::UnexpectedChar { ch: '$', .. })
        ));
        assert!(Expr::parse("(x").is_err());
        assert!(Expr::parse("x)").is_err());
    }

    #[test]
    fn derivative_matches_central_difference() {
        let e = Expr::parse("x*x*y + sin(x*y) + exp(-y)/(1 + x^2) + sqrt(2 + x)").unwrap();
        let dx = e.derivative(Var::X);
        let dy = e.derivative(Var::Y);
        for &(x, y) in &[(0.3, -0.2), (1.1, 0.7), (-0.4, 2.0)] {
            let h = 1e-6;
            let fx = (e.eval_xy(x + h, y) - e.eval_xy(x - h, y)) / (2.0 * h);
            let fy = (e.eval_xy(x, y + h) - e.eval_xy(x, y - h)) / (2.0 * h);
            assert!((dx.eval_xy(x, y) - fx).abs() < 1e-7);
            assert!((dy.eval_xy(x, y) - fy).abs() < 1e-7);
        }
    }

    #[test]
    fn display_reparses_to_same_values() {
        let e = Expr::parse("-(x - 2)^3 / (1 + y*y) - 0.25").unwrap();
        let again = Expr::parse(&e.to_string()).unwrap();
        for &(x, y) in &[(0.0, 0.0), (1.5, -2.0), (-3.0, 0.5)] {
            assert_eq!(e.eval_xy(x, y), again.eval_xy(x, y));
        }
    }

    #[test]
    fn substitution_rotates_arguments() {
        let f = Expr::parse("y").unwrap();
        let rx = Expr::parse("0.6*x + 0.8*y").unwrap();
        let ry = Expr::parse("-0.8*x + 0.6*y").unwrap();
        let g = f.add(&Expr::parse("0*x").unwrap()).substitute_xy(&rx, &ry);
        assert!((g.eval_xy(1.0, 2.0) - (-0.8 + 1.2)).abs() < 1e-15);
    }
}
