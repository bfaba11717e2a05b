//! Arithmetic expressions in `t`, `x`, `y`.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := primary ('^' unary)?          right associative
//! primary := number | name | func '(' sum ')' | '(' sum ')'
//! ```
//!
//! Names are the variables `t`, `x`, `y` and the constants `pi`, `e`;
//! functions are `sin`, `cos`, `exp`, `sqrt`, `abs`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::heat::SpaceTimeField;
use crate::mesh::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    T,
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constant {
    Pi,
    E,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Abs,
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
pub enum Node {
    Num(f64),
    Const(Constant),
    Var(Var),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

/// A parsed expression. `Display` prints a fully parenthesized normal form
/// that parses back to the same tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    root: Node,
    folded: Node,
}

impl Expression {
    pub fn parse(src: &str) -> Result<Self> {
        let mut p = Parser { src, pos: 0 };
        let root = p.sum()?;
        p.skip_ws();
        if p.pos < src.len() {
            return Err(p.error(format!("unexpected '{}'", p.peek_char().unwrap())));
        }
        let folded = fold(&root);
        Ok(Self { root, folded })
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn eval(&self, t: f64, x: f64, y: f64) -> f64 {
        eval(&self.folded, t, x, y)
    }

    /// True when the expression does not depend on `t`, `x` or `y`.
    pub fn is_constant(&self) -> bool {
        matches!(self.folded, Node::Num(_))
    }

    pub fn into_field(self) -> SpaceTimeField {
        let e = Arc::new(self);
        Arc::new(move |t: f64, p: Point| e.eval(t, p[0], p[1]))
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.root)
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Num(v) => write!(f, "{v}"),
            Node::Const(Constant::Pi) => f.write_str("pi"),
            Node::Const(Constant::E) => f.write_str("e"),
            Node::Var(Var::T) => f.write_str("t"),
            Node::Var(Var::X) => f.write_str("x"),
            Node::Var(Var::Y) => f.write_str("y"),
            Node::Neg(a) => write!(f, "(-{a})"),
            Node::Bin(op, a, b) => {
                let s = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({a} {s} {b})")
            }
            Node::Call(func, a) => {
                let name = match func {
                    Func::Sin => "sin",
                    Func::Cos => "cos",
                    Func::Exp => "exp",
                    Func::Sqrt => "sqrt",
                    Func::Abs => "abs",
                };
                write!(f, "{name}({a})")
            }
        }
    }
}

fn apply(op: BinOp, a: f64, b: f64) -> f64 {
    match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => a / b,
        BinOp::Pow => a.powf(b),
    }
}

fn call(func: Func, a: f64) -> f64 {
    match func {
        Func::Sin => a.sin(),
        Func::Cos => a.cos(),
        Func::Exp => a.exp(),
        Func::Sqrt => a.sqrt(),
        Func::Abs => a.abs(),
    }
}

fn eval(n: &Node, t: f64, x: f64, y: f64) -> f64 {
    match n {
        Node::Num(v) => *v,
        Node::Const(Constant::Pi) => std::f64::consts::PI,
        Node::Const(Constant::E) => std::f64::consts::E,
        Node::Var(Var::T) => t,
        Node::Var(Var::X) => x,
        Node::Var(Var::Y) => y,
        Node::Neg(a) => -eval(a, t, x, y),
        Node::Bin(op, a, b) => apply(*op, eval(a, t, x, y), eval(b, t, x, y)),
        Node::Call(func, a) => call(*func, eval(a, t, x, y)),
    }
}

/// Replaces variable-free subtrees by their values.
fn fold(n: &Node) -> Node {
    match n {
        Node::Const(_) => Node::Num(eval(n, 0.0, 0.0, 0.0)),
        Node::Num(_) | Node::Var(_) => n.clone(),
        Node::Neg(a) => match fold(a) {
            Node::Num(v) => Node::Num(-v),
            a => Node::Neg(Box::new(a)),
        },
        Node::Bin(op, a, b) => match (fold(a), fold(b)) {
            (Node::Num(u), Node::Num(v)) => Node::Num(apply(*op, u, v)),
            (a, b) => Node::Bin(*op, Box::new(a), Box::new(b)),
        },
        Node::Call(func, a) => match fold(a) {
            Node::Num(v) => Node::Num(call(*func, v)),
            a => Node::Call(*func, Box::new(a)),
        },
    }
}

struct Parser<'s> {
    src: &'s str,
    pos: usize,
}

impl<'s> Parser<'s> {
    fn error(&self, message: String) -> Error {
        Error::Syntax {
            offset: self.pos,
            message,
        }
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek_char() {
            if !c.is_whitespace() {
                break;
            }
            self.pos += c.len_utf8();
        }
    }

    fn peek_char(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.peek_char()
    }

    fn expect(&mut self, c: char) -> Result<()> {
        match self.peek() {
            Some(d) if d == c => {
                self.pos += 1;
                Ok(())
            }
            Some(d) => Err(self.error(format!("expected '{c}', found '{d}'"))),
            None => Err(self.error(format!("expected '{c}', found end of input"))),
        }
    }

    fn sum(&mut self) -> Result<Node> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek() {
                Some('+') => BinOp::Add,
                Some('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.product()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn product(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some('*') => BinOp::Mul,
                Some('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node> {
        match self.peek() {
            Some('-') => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.primary()?;
        if self.peek() == Some('^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Node> {
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                let inner = self.sum()?;
                self.expect(')')?;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == '_' => self.name(),
            Some(c) => Err(self.error(format!("unexpected '{c}'"))),
            None => Err(self.error("unexpected end of input".into())),
        }
    }

    fn number(&mut self) -> Result<Node> {
        let bytes = self.src.as_bytes();
        let start = self.pos;
        let mut i = start;
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
            }
        }
        let text = &self.src[start..i];
        match text.parse::<f64>() {
            Ok(v) => {
                self.pos = i;
                Ok(Node::Num(v))
            }
            Err(_) => Err(self.error(format!("malformed number '{text}'"))),
        }
    }

    fn name(&mut self) -> Result<Node> {
        let start = self.pos;
        let len = self.src[start..]
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(self.src.len() - start);
        let name = &self.src[start..start + len];
        self.pos += len;
        let func = match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "sqrt" => Some(Func::Sqrt),
            "abs" => Some(Func::Abs),
            _ => None,
        };
        if let Some(func) = func {
            self.expect('(')?;
            let arg = self.sum()?;
            self.expect(')')?;
            return Ok(Node::Call(func, Box::new(arg)));
        }
        match name {
            "t" => Ok(Node::Var(Var::T)),
            "x" => Ok(Node::Var(Var::X)),
            "y" => Ok(Node::Var(Var::Y)),
            "pi" => Ok(Node::Const(Constant::Pi)),
            "e" => Ok(Node::Const(Constant::E)),
            _ => Err(Error::UnknownIdentifier {
                name: name.to_string(),
                offset: start,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn value(src: &str) -> f64 {
        Expression::parse(src).unwrap().eval(0.0, 0.0, 0.0)
    }

    #[test]
    fn examples() {
        assert_eq!(value("2+3*4"), 14.0);
        assert_eq!(value("sin(0)"), 0.0);
        assert_eq!(value("(1+2)^2/3"), 3.0);
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(value("-2^2"), -4.0);
        assert_eq!(value("2^3^2"), 512.0);
        assert_eq!(value("2^-1"), 0.5);
        assert_eq!(value("8/4/2"), 1.0);
        assert_eq!(value("1-2-3"), -4.0);
        assert_eq!(value("--3"), 3.0);
        assert_eq!(value("1.5e2 + 2E-1"), 150.2);
        assert_abs_diff_eq!(value("pi"), std::f64::consts::PI);
        assert_abs_diff_eq!(value("2*e"), 2.0 * std::f64::consts::E);
        assert_abs_diff_eq!(value("sqrt(abs(-16)) + exp(0) + cos(0)"), 6.0);
    }

    #[test]
    fn variables() {
        let e = Expression::parse("t*sin(pi*x)*sin(pi*y)").unwrap();
        assert_abs_diff_eq!(e.eval(2.0, 0.5, 0.5), 2.0, epsilon = 1e-15);
        assert!(!e.is_constant());
        assert!(Expression::parse("2*pi").unwrap().is_constant());
        let f = Expression::parse("x - y + t").unwrap().into_field();
        assert_eq!(f(1.0, [3.0, 2.0]), 2.0);
    }

    #[test]
    fn errors_carry_offsets() {
        match Expression::parse("1 + foo(2)") {
            Err(Error::UnknownIdentifier { name, offset }) => {
                assert_eq!(name, "foo");
                assert_eq!(offset, 4);
            }
            other => panic!("{other:?}"),
        }
        match Expression::parse("(1 + 2") {
            Err(Error::Syntax { offset, .. }) => assert_eq!(offset, 6),
            other => panic!("{other:?}"),
        }
        match Expression::parse("1 + * 2") {
            Err(Error::Syntax { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
        match Expression::parse("1 2") {
            Err(Error::Syntax { offset, .. }) => assert_eq!(offset, 2),
            other => panic!("{other:?}"),
        }
        assert!(Expression::parse("").is_err());
        assert!(Expression::parse("sin 2").is_err());
    }

    #[test]
    fn normal_form_round_trip() {
        for src in ["2+3*4", "-x^2", "sin(pi*x)*sin(pi*y)*sin(2*pi*t)", "1e-3/(t+1)", "2^3^2", "-(-t)"] {
            let e = Expression::parse(src).unwrap();
            let printed = e.to_string();
            let again = Expression::parse(&printed).unwrap();
            assert_eq!(again, e, "{src} -> {printed}");
            assert_eq!(again.to_string(), printed);
        }
    }

    fn arb_node() -> impl Strategy<Value = Node> {
        let leaf = prop_oneof![
            (0.0f64..100.0).prop_map(Node::Num),
            Just(Node::Var(Var::T)),
            Just(Node::Var(Var::X)),
            Just(Node::Var(Var::Y)),
            Just(Node::Const(Constant::Pi)),
        ];
        leaf.prop_recursive(4, 24, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|a| Node::Neg(Box::new(a))),
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
                    .prop_map(|(op, a, b)| Node::Bin(op, Box::new(a), Box::new(b))),
                inner.prop_map(|a| Node::Call(Func::Sin, Box::new(a))),
            ]
        })
    }

    proptest! {
        #[test]
        fn printed_trees_parse_back(node in arb_node()) {
            let printed = node.to_string();
            let e = Expression::parse(&printed).unwrap();
            prop_assert_eq!(e.root(), &node);
            prop_assert_eq!(e.to_string(), printed);
        }
    }
}
