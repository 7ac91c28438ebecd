//! Coefficient expressions: a small arithmetic language over `x1..xd` and `t`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at offset {offset}: expected {}", expected.join(" or "))]
    Syntax { offset: usize, expected: Vec<&'static str> },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdent { name: String, offset: usize },
    #[error("function `{name}` takes {expected} argument(s), got {got} (offset {offset})")]
    Arity { name: &'static str, expected: &'static str, got: usize, offset: usize },
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    /// Zero-based coordinate index (`x1` is `X(0)`).
    X(usize),
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Abs,
    Tanh,
    Sqrt,
    Log,
    Min,
    Max,
    Clamp,
}

impl Func {
    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "abs" => Func::Abs,
            "tanh" => Func::Tanh,
            "sqrt" => Func::Sqrt,
            "log" => Func::Log,
            "min" => Func::Min,
            "max" => Func::Max,
            "clamp" => Func::Clamp,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Abs => "abs",
            Func::Tanh => "tanh",
            Func::Sqrt => "sqrt",
            Func::Log => "log",
            Func::Min => "min",
            Func::Max => "max",
            Func::Clamp => "clamp",
        }
    }

    fn arity_ok(self, n: usize) -> Result<(), &'static str> {
        match self {
            Func::Min | Func::Max if n >= 2 => Ok(()),
            Func::Min | Func::Max => Err("at least 2"),
            Func::Clamp if n == 3 => Ok(()),
            Func::Clamp => Err("3"),
            _ if n == 1 => Ok(()),
            _ => Err("1"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl Expr {
    pub fn constant(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn parse(text: &str) -> Result<Expr, ExprError> {
        let mut p = Parser { src: text.as_bytes(), pos: 0 };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos < p.src.len() {
            return Err(ExprError::Syntax { offset: p.pos, expected: vec!["operator", "end of input"] });
        }
        Ok(e)
    }

    /// Evaluates at a spatial point `x` and optional time `t`.
    pub fn eval(&self, x: &[f64], t: Option<f64>) -> Result<f64, ExprError> {
        let v = match self {
            Expr::Num(v) => *v,
            Expr::Var(Var::X(i)) => *x
                .get(*i)
                .ok_or_else(|| ExprError::Unbound(format!("x{}", i + 1)))?,
            Expr::Var(Var::T) => t.ok_or_else(|| ExprError::Unbound("t".into()))?,
            Expr::Neg(e) => -e.eval(x, t)?,
            Expr::Bin(op, a, b) => {
                let a = a.eval(x, t)?;
                let b = b.eval(x, t)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(ExprError::Domain("division by zero".into()));
                        }
                        a / b
                    }
                }
            }
            Expr::Call(f, args) => {
                let mut v = Vec::with_capacity(args.len());
                for a in args {
                    v.push(a.eval(x, t)?);
                }
                match f {
                    Func::Sin => v[0].sin(),
                    Func::Cos => v[0].cos(),
                    Func::Exp => v[0].exp(),
                    Func::Abs => v[0].abs(),
                    Func::Tanh => v[0].tanh(),
                    Func::Sqrt => {
                        if v[0] < 0.0 {
                            return Err(ExprError::Domain(format!("sqrt of negative value {}", v[0])));
                        }
                        v[0].sqrt()
                    }
                    Func::Log => {
                        if v[0] <= 0.0 {
                            return Err(ExprError::Domain(format!("log of non-positive value {}", v[0])));
                        }
                        v[0].ln()
                    }
                    Func::Min => v.iter().copied().fold(f64::INFINITY, f64::min),
                    Func::Max => v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    Func::Clamp => {
                        if v[1] > v[2] {
                            return Err(ExprError::Domain(format!("clamp with lo {} > hi {}", v[1], v[2])));
                        }
                        v[0].max(v[1]).min(v[2])
                    }
                }
            }
        };
        if v.is_nan() {
            return Err(ExprError::Domain("result is not a number".into()));
        }
        if v.is_infinite() {
            return Err(ExprError::Domain("overflow".into()));
        }
        Ok(v)
    }

    /// True when no variable occurs.
    pub fn is_constant(&self) -> bool {
        match self {
            Expr::Num(_) => true,
            Expr::Var(_) => false,
            Expr::Neg(e) => e.is_constant(),
            Expr::Bin(_, a, b) => a.is_constant() && b.is_constant(),
            Expr::Call(_, args) => args.iter().all(Expr::is_constant),
        }
    }

    pub fn uses_time(&self) -> bool {
        match self {
            Expr::Num(_) | Expr::Var(Var::X(_)) => false,
            Expr::Var(Var::T) => true,
            Expr::Neg(e) => e.uses_time(),
            Expr::Bin(_, a, b) => a.uses_time() || b.uses_time(),
            Expr::Call(_, args) => args.iter().any(Expr::uses_time),
        }
    }

    /// Largest coordinate index referenced (1-based), 0 if none.
    pub fn max_coordinate(&self) -> usize {
        match self {
            Expr::Num(_) | Expr::Var(Var::T) => 0,
            Expr::Var(Var::X(i)) => i + 1,
            Expr::Neg(e) => e.max_coordinate(),
            Expr::Bin(_, a, b) => a.max_coordinate().max(b.max_coordinate()),
            Expr::Call(_, args) => args.iter().map(Expr::max_coordinate).max().unwrap_or(0),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) => write!(f, "({:?})", v),
            Expr::Num(v) => write!(f, "{:?}", v),
            Expr::Var(Var::X(i)) => write!(f, "x{}", i + 1),
            Expr::Var(Var::T) => write!(f, "t"),
            Expr::Neg(e) => write!(f, "(-{})", e),
            Expr::Bin(op, a, b) => {
                let s = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                };
                write!(f, "({} {} {})", a, s, b)
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{}", a)?;
                }
                write!(f, ")")
            }
        }
    }
}

impl serde::Serialize for Expr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> serde::Deserialize<'de> for Expr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        match v {
            serde_json::Value::String(s) => Expr::parse(&s).map_err(serde::de::Error::custom),
            serde_json::Value::Number(n) => Ok(Expr::Num(n.as_f64().unwrap_or(f64::NAN))),
            _ => Err(serde::de::Error::custom("expected an expression string or a number")),
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
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

    fn term(&mut self) -> Result<Expr, ExprError> {
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

    fn unary(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.atom(),
        }
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let expected = vec!["number", "identifier", "'('", "'-'"];
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')', "')'")?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.ident(),
            _ => Err(ExprError::Syntax { offset: self.pos, expected }),
        }
    }

    fn expect(&mut self, c: u8, what: &'static str) -> Result<(), ExprError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(ExprError::Syntax { offset: self.pos, expected: vec![what] })
        }
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        let s = self.src;
        let mut i = self.pos;
        while i < s.len() && (s[i].is_ascii_digit() || s[i] == b'.') {
            i += 1;
        }
        if i < s.len() && (s[i] == b'e' || s[i] == b'E') {
            let mut j = i + 1;
            if j < s.len() && (s[j] == b'+' || s[j] == b'-') {
                j += 1;
            }
            if j < s.len() && s[j].is_ascii_digit() {
                while j < s.len() && s[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        let text = std::str::from_utf8(&s[start..i]).unwrap_or("");
        let v: f64 = text
            .parse()
            .map_err(|_| ExprError::Syntax { offset: start, expected: vec!["number"] })?;
        self.pos = i;
        Ok(Expr::Num(v))
    }

    fn ident(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        let s = self.src;
        let mut i = self.pos;
        while i < s.len() && (s[i].is_ascii_alphanumeric() || s[i] == b'_') {
            i += 1;
        }
        let name = std::str::from_utf8(&s[start..i]).unwrap_or("").to_string();
        self.pos = i;
        if name == "t" {
            return Ok(Expr::Var(Var::T));
        }
        if let Some(rest) = name.strip_prefix('x') {
            if let Ok(k) = rest.parse::<usize>() {
                if k >= 1 && !rest.starts_with('0') {
                    return Ok(Expr::Var(Var::X(k - 1)));
                }
            }
        }
        let func = Func::from_name(&name).ok_or(ExprError::UnknownIdent { name: name.clone(), offset: start })?;
        self.expect(b'(', "'('")?;
        let mut args = vec![self.expr()?];
        loop {
            match self.peek() {
                Some(b',') => {
                    self.pos += 1;
                    args.push(self.expr()?);
                }
                Some(b')') => {
                    self.pos += 1;
                    break;
                }
                _ => return Err(ExprError::Syntax { offset: self.pos, expected: vec!["','", "')'"] }),
            }
        }
        if let Err(expected) = func.arity_ok(args.len()) {
            return Err(ExprError::Arity { name: func.name(), expected, got: args.len(), offset: start });
        }
        Ok(Expr::Call(func, args))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, x: &[f64]) -> Result<f64, ExprError> {
        Expr::parse(s)?.eval(x, None)
    }

    #[test]
    fn precedence() {
        assert_eq!(ev("2+3*4", &[]).unwrap(), 14.0);
        assert_eq!(ev("2-3-4", &[]).unwrap(), -5.0);
        assert_eq!(ev("8/4/2", &[]).unwrap(), 1.0);
        assert_eq!(ev("-2*3", &[]).unwrap(), -6.0);
        assert_eq!(ev("(2+3)*4", &[]).unwrap(), 20.0);
    }

    #[test]
    fn tanh_at_origin() {
        assert_eq!(ev("1 + 0.5*tanh(x1)", &[0.0]).unwrap(), 1.0);
    }

    #[test]
    fn unbalanced_call_offset() {
        match Expr::parse("min(") {
            Err(ExprError::Syntax { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn unknown_identifier() {
        assert!(matches!(Expr::parse("foo(1)"), Err(ExprError::UnknownIdent { offset: 0, .. })));
        assert!(matches!(Expr::parse("2*y"), Err(ExprError::UnknownIdent { offset: 2, .. })));
    }

    #[test]
    fn clamp_and_exp() {
        assert_eq!(ev("clamp(x1, 0.6, 1.4)", &[2.0]).unwrap(), 1.4);
        assert_eq!(ev("exp(0)", &[]).unwrap(), 1.0);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(ev("1/x1", &[0.0]), Err(ExprError::Domain(_))));
        assert!(matches!(ev("log(0)", &[]), Err(ExprError::Domain(_))));
        assert!(matches!(ev("sqrt(-1)", &[]), Err(ExprError::Domain(_))));
        assert!(matches!(ev("x2", &[1.0]), Err(ExprError::Unbound(_))));
        assert!(matches!(Expr::parse("t").unwrap().eval(&[], None), Err(ExprError::Unbound(_))));
    }

    #[test]
    fn arity_checked() {
        assert!(matches!(Expr::parse("clamp(1,2)"), Err(ExprError::Arity { .. })));
        assert!(matches!(Expr::parse("sin(1,2)"), Err(ExprError::Arity { .. })));
    }

    #[test]
    fn exponent_literals() {
        assert_eq!(ev("1e-3*1000", &[]).unwrap(), 1.0);
        assert_eq!(ev("2.5E+1", &[]).unwrap(), 25.0);
    }

    #[test]
    fn print_round_trip() {
        let e = Expr::parse("-x1*3 - min(x2, t, 1e-7) / (2 - -x1)").unwrap();
        let back = Expr::parse(&e.to_string()).unwrap();
        let x = [0.3, -1.2];
        assert_eq!(e.eval(&x, Some(0.5)).unwrap(), back.eval(&x, Some(0.5)).unwrap());
    }
}
