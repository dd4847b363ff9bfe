//! Expression trees shared by the physics builder, the Modelica frontend,
//! the simulator and the checker.

use std::collections::BTreeSet;
use std::fmt;
use std::ops;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Num(f64),
    Sym(String),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    /// Function application; `der(x)` is `Call("der", [x])`.
    Call(String, Vec<Expr>),
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn sym(name: impl Into<String>) -> Expr {
        Expr::Sym(name.into())
    }

    pub fn der(e: Expr) -> Expr {
        Expr::Call("der".into(), vec![e])
    }

    pub fn call(name: impl Into<String>, args: Vec<Expr>) -> Expr {
        Expr::Call(name.into(), args)
    }

    pub fn pow(self, exponent: Expr) -> Expr {
        Expr::Bin(BinOp::Pow, Box::new(self), Box::new(exponent))
    }

    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    /// Sum of terms, `None` when empty.
    pub fn sum(terms: impl IntoIterator<Item = Expr>) -> Option<Expr> {
        terms.into_iter().reduce(|a, b| a + b)
    }

    /// Product of factors, `None` when empty.
    pub fn product(factors: impl IntoIterator<Item = Expr>) -> Option<Expr> {
        factors.into_iter().reduce(|a, b| a * b)
    }

    /// Every symbol referenced, including those under `der`.
    pub fn symbols(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| {
            if let Expr::Sym(s) = e {
                out.insert(s.clone());
            }
        });
        out
    }

    /// Symbols that appear inside a `der(...)` argument.
    pub fn differentiated_symbols(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| {
            if let Expr::Call(name, args) = e {
                if name == "der" {
                    for a in args {
                        out.extend(a.symbols());
                    }
                }
            }
        });
        out
    }

    pub fn contains_der(&self) -> bool {
        let mut found = false;
        self.visit(&mut |e| {
            if matches!(e, Expr::Call(n, _) if n == "der") {
                found = true;
            }
        });
        found
    }

    /// Pre-order traversal.
    pub fn visit(&self, f: &mut dyn FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Num(_) | Expr::Sym(_) => {}
            Expr::Neg(a) => a.visit(f),
            Expr::Bin(_, a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.visit(f)),
        }
    }

    /// Rebuilds the tree bottom-up through `f`.
    pub fn map(&self, f: &mut dyn FnMut(Expr) -> Expr) -> Expr {
        let rebuilt = match self {
            Expr::Num(_) | Expr::Sym(_) => self.clone(),
            Expr::Neg(a) => Expr::Neg(Box::new(a.map(f))),
            Expr::Bin(op, a, b) => Expr::Bin(*op, Box::new(a.map(f)), Box::new(b.map(f))),
            Expr::Call(n, args) => Expr::Call(n.clone(), args.iter().map(|a| a.map(f)).collect()),
        };
        f(rebuilt)
    }

    pub fn rename(&self, from: &str, to: &str) -> Expr {
        self.map(&mut |e| match e {
            Expr::Sym(s) if s == from => Expr::Sym(to.to_string()),
            other => other,
        })
    }

    /// Evaluates with values and time derivatives for symbols. `der(e)`
    /// evaluates to the time derivative of `e` by forward-mode
    /// differentiation.
    pub fn eval_dual(&self, env: &dyn Fn(&str) -> Option<Dual>) -> Result<Dual, EvalError> {
        Ok(match self {
            Expr::Num(v) => Dual::constant(*v),
            Expr::Sym(s) => env(s).ok_or_else(|| EvalError::UnboundSymbol(s.clone()))?,
            Expr::Neg(a) => -a.eval_dual(env)?,
            Expr::Bin(op, a, b) => {
                let x = a.eval_dual(env)?;
                let y = b.eval_dual(env)?;
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => x / y,
                    BinOp::Pow => x.pow(y),
                }
            }
            Expr::Call(name, args) => {
                let vals = args
                    .iter()
                    .map(|a| a.eval_dual(env))
                    .collect::<Result<Vec<_>, _>>()?;
                apply_function(name, &vals)?
            }
        })
    }

    /// Sum of the magnitudes of the terms, `|a| + |b|` for sums and
    /// differences; the scale of the rounding error in `eval_dual`.
    pub fn magnitude(&self, env: &dyn Fn(&str) -> Option<Dual>) -> Result<f64, EvalError> {
        Ok(match self {
            Expr::Num(v) => v.abs(),
            Expr::Neg(a) => a.magnitude(env)?,
            Expr::Bin(BinOp::Add | BinOp::Sub, a, b) => a.magnitude(env)? + b.magnitude(env)?,
            Expr::Bin(BinOp::Mul, a, b) => a.magnitude(env)? * b.magnitude(env)?,
            Expr::Bin(BinOp::Div, a, b) => a.magnitude(env)? / b.eval_dual(env)?.value.abs(),
            _ => self.eval_dual(env)?.value.abs(),
        })
    }

    /// Evaluates values only; `der` is unavailable.
    pub fn eval(&self, env: &dyn Fn(&str) -> Option<f64>) -> Result<f64, EvalError> {
        let d = self.eval_dual(&|s| env(s).map(|v| Dual::new(v, f64::NAN)))?;
        Ok(d.value)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound symbol `{0}`")]
    UnboundSymbol(String),
    #[error("unsupported function `{0}` with {1} argument(s)")]
    UnknownFunction(String, usize),
}

fn apply_function(name: &str, v: &[Dual]) -> Result<Dual, EvalError> {
    let one = |f: fn(Dual) -> Dual| -> Result<Dual, EvalError> {
        match v {
            [x] => Ok(f(*x)),
            _ => Err(EvalError::UnknownFunction(name.into(), v.len())),
        }
    };
    match name {
        "der" => one(|x| Dual::new(x.deriv, f64::NAN)),
        "exp" => one(|x| {
            let e = x.value.exp();
            Dual::new(e, e * x.deriv)
        }),
        "log" | "ln" => one(|x| Dual::new(x.value.ln(), x.deriv / x.value)),
        "log10" => one(|x| Dual::new(x.value.log10(), x.deriv / (x.value * std::f64::consts::LN_10))),
        "sqrt" => one(|x| {
            let s = x.value.sqrt();
            Dual::new(s, x.deriv / (2.0 * s))
        }),
        "abs" => one(|x| Dual::new(x.value.abs(), x.deriv * x.value.signum())),
        "sin" => one(|x| Dual::new(x.value.sin(), x.deriv * x.value.cos())),
        "cos" => one(|x| Dual::new(x.value.cos(), -x.deriv * x.value.sin())),
        "tanh" => one(|x| {
            let t = x.value.tanh();
            Dual::new(t, x.deriv * (1.0 - t * t))
        }),
        "min" | "max" => match v {
            [a, b] => {
                let pick_a = if name == "min" { a.value <= b.value } else { a.value >= b.value };
                Ok(if pick_a { *a } else { *b })
            }
            _ => Err(EvalError::UnknownFunction(name.into(), v.len())),
        },
        _ => Err(EvalError::UnknownFunction(name.into(), v.len())),
    }
}

/// A value with its time derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub value: f64,
    pub deriv: f64,
}

impl Dual {
    pub fn new(value: f64, deriv: f64) -> Self {
        Dual { value, deriv }
    }

    pub fn constant(value: f64) -> Self {
        Dual { value, deriv: 0.0 }
    }

    pub fn pow(self, e: Dual) -> Dual {
        if e.deriv == 0.0 {
            let p = e.value;
            if p.fract() == 0.0 && p.abs() < 1e9 {
                let n = p as i32;
                let value = self.value.powi(n);
                let deriv = if n == 0 { 0.0 } else { p * self.value.powi(n - 1) * self.deriv };
                return Dual::new(value, deriv);
            }
            let value = self.value.powf(p);
            return Dual::new(value, p * self.value.powf(p - 1.0) * self.deriv);
        }
        let value = self.value.powf(e.value);
        let deriv = value * (e.deriv * self.value.ln() + e.value * self.deriv / self.value);
        Dual::new(value, deriv)
    }
}

impl ops::Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.value + o.value, self.deriv + o.deriv)
    }
}

impl ops::Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.value - o.value, self.deriv - o.deriv)
    }
}

impl ops::Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        // keep constant factors from poisoning the derivative with NaN * 0
        let d = match (self.deriv == 0.0, o.deriv == 0.0) {
            (true, true) => 0.0,
            (true, false) => self.value * o.deriv,
            (false, true) => self.deriv * o.value,
            (false, false) => self.deriv * o.value + self.value * o.deriv,
        };
        Dual::new(self.value * o.value, d)
    }
}

impl ops::Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        let v = self.value / o.value;
        let d = if o.deriv == 0.0 {
            self.deriv / o.value
        } else {
            (self.deriv - v * o.deriv) / o.value
        };
        Dual::new(v, d)
    }
}

impl ops::Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.value, -self.deriv)
    }
}

impl ops::Add for Expr {
    type Output = Expr;
    fn add(self, o: Expr) -> Expr {
        Expr::bin(BinOp::Add, self, o)
    }
}

impl ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, o: Expr) -> Expr {
        Expr::bin(BinOp::Sub, self, o)
    }
}

impl ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, o: Expr) -> Expr {
        Expr::bin(BinOp::Mul, self, o)
    }
}

impl ops::Div for Expr {
    type Output = Expr;
    fn div(self, o: Expr) -> Expr {
        Expr::bin(BinOp::Div, self, o)
    }
}

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::Neg(Box::new(self))
    }
}

/// Formats a number so that parsing the text yields the same `f64`.
/// Integral values print without a fractional part.
pub fn format_number(v: f64) -> String {
    let a = v.abs();
    if v.fract() == 0.0 && a < 1e15 {
        format!("{}", v as i64)
    } else if a != 0.0 && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

// Modelica only admits unary minus at the start of an arithmetic
// expression, so a negation nested anywhere else is parenthesized.
fn write_expr(e: &Expr, f: &mut fmt::Formatter<'_>, ctx: u8, leading: bool) -> fmt::Result {
    match e {
        Expr::Num(v) => {
            let s = format_number(*v);
            if *v < 0.0 && !(leading && ctx <= 1) {
                write!(f, "({s})")
            } else {
                f.write_str(&s)
            }
        }
        Expr::Sym(s) => f.write_str(s),
        Expr::Neg(a) => {
            if leading && ctx <= 1 {
                f.write_str("-")?;
                write_expr(a, f, 2, false)
            } else {
                f.write_str("(-")?;
                write_expr(a, f, 2, false)?;
                f.write_str(")")
            }
        }
        Expr::Bin(op, a, b) => {
            let p = op.precedence();
            let paren = p < ctx;
            let leading = leading && !paren;
            if paren {
                f.write_str("(")?;
            }
            let lead_inner = if paren { true } else { leading };
            match op {
                BinOp::Pow => {
                    write_expr(a, f, p + 1, false)?;
                    f.write_str("^")?;
                    write_expr(b, f, p + 1, false)?;
                }
                _ => {
                    write_expr(a, f, p, lead_inner)?;
                    write!(f, " {} ", op.symbol())?;
                    write_expr(b, f, p + 1, false)?;
                }
            }
            if paren {
                f.write_str(")")?;
            }
            Ok(())
        }
        Expr::Call(name, args) => {
            write!(f, "{name}(")?;
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write_expr(a, f, 0, true)?;
            }
            f.write_str(")")
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(self, f, 0, true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(n: &str) -> Expr {
        Expr::sym(n)
    }

    #[test]
    fn printing_uses_minimal_parentheses() {
        let e = s("q") / s("V") * (s("cA_in") - s("cA")) - Expr::num(2.0) * s("r1");
        assert_eq!(e.to_string(), "q / V * (cA_in - cA) - 2 * r1");
        let e = s("a") - (s("b") - s("c"));
        assert_eq!(e.to_string(), "a - (b - c)");
        let e = s("cA").pow(Expr::num(3.0)) * s("k");
        assert_eq!(e.to_string(), "cA^3 * k");
        let e = (s("a") * s("b")).pow(Expr::num(2.0));
        assert_eq!(e.to_string(), "(a * b)^2");
    }

    #[test]
    fn negation_is_parenthesized_when_not_leading() {
        assert_eq!((-s("a") * s("b")).to_string(), "(-a) * b");
        assert_eq!((-(s("a") * s("b"))).to_string(), "-a * b");
        assert_eq!((-s("a") - s("b")).to_string(), "-a - b");
        assert_eq!((s("a") * -s("b")).to_string(), "a * (-b)");
        assert_eq!((s("a") + Expr::num(-1.5)).to_string(), "a + (-1.5)");
        assert_eq!(Expr::num(-2.0).to_string(), "-2");
    }

    #[test]
    fn number_formatting_round_trips() {
        for v in [0.0, 1.0, 2.5, 1e-20, 1.2345e-87, 3.0e20, 298.15, -4.184, 0.0001234] {
            let text = format_number(v);
            assert_eq!(text.parse::<f64>().unwrap(), v, "{text}");
        }
        assert_eq!(format_number(2.0), "2");
    }

    #[test]
    fn dual_evaluation_differentiates() {
        // d/dt (rho * V) with rho' = 2, V' = 0
        let e = Expr::der(s("rho") * s("V"));
        let env = |n: &str| match n {
            "rho" => Some(Dual::new(800.0, 2.0)),
            "V" => Some(Dual::new(3.0, 0.0)),
            _ => None,
        };
        assert_eq!(e.eval_dual(&env).unwrap().value, 6.0);
        let p = s("c").pow(Expr::num(3.0));
        let d = p.eval_dual(&|_| Some(Dual::new(2.0, 1.0))).unwrap();
        assert_eq!((d.value, d.deriv), (8.0, 12.0));
    }

    #[test]
    fn unbound_symbols_error() {
        assert_eq!(
            (s("x") + s("y")).eval(&|n| (n == "x").then_some(1.0)),
            Err(EvalError::UnboundSymbol("y".into()))
        );
    }

    #[test]
    fn symbol_queries() {
        let e = Expr::der(s("cA")) - s("k") * s("cA");
        assert_eq!(e.symbols().into_iter().collect::<Vec<_>>(), ["cA", "k"]);
        assert!(e.contains_der());
        assert_eq!(e.differentiated_symbols().len(), 1);
        assert_eq!(e.rename("k", "k2").to_string(), "der(cA) - k2 * cA");
    }

    #[test]
    fn magnitude_adds_cancelling_terms() {
        let e = s("a") * (s("b") - Expr::der(s("c"))) / Expr::num(-2.0);
        let env = |n: &str| match n {
            "a" => Some(Dual::constant(3.0)),
            "b" => Some(Dual::constant(5.0)),
            "c" => Some(Dual::new(1.0, 5.0)),
            _ => None,
        };
        assert_eq!(e.eval_dual(&env).unwrap().value, 0.0);
        assert_eq!(e.magnitude(&env).unwrap(), 15.0);
    }
}
