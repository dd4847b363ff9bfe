//! Physical dimensions, the unit registry, and conversions.
//!
//! Unit symbols use the Modelica unit-expression syntax (`m3/(mol.s)`,
//! `J/(kg.K)`, `degC`), so the same parser serves prompt units, generated
//! `unit="..."` modifiers, and unit attributes found in candidate models.

use std::collections::HashMap;
use std::fmt;
use std::sync::LazyLock;

use num_rational::Rational32;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::expr::{BinOp, Expr};

/// Names of the seven SI base dimensions, in storage order.
pub const BASE_DIMENSIONS: [&str; 7] = [
    "length",
    "mass",
    "time",
    "temperature",
    "amount",
    "current",
    "luminosity",
];

const BASE_SYMBOLS: [&str; 7] = ["m", "kg", "s", "K", "mol", "A", "cd"];

const LENGTH: usize = 0;
const MASS: usize = 1;
const TIME: usize = 2;
const TEMPERATURE: usize = 3;
const AMOUNT: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UnitError {
    #[error("unknown unit `{0}`")]
    UnknownUnit(String),
    #[error("dimension mismatch: `{from}` cannot be converted to `{to}`")]
    DimensionMismatch { from: String, to: String },
    #[error("malformed unit expression `{0}`")]
    Malformed(String),
}

/// Exponents over the SI base dimensions, or the wildcard dimension of an
/// untyped (`Real`) declaration.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dimension {
    exponents: [Rational32; 7],
    wildcard: bool,
}

impl Dimension {
    pub const fn dimensionless() -> Self {
        Dimension {
            exponents: [Rational32::new_raw(0, 1); 7],
            wildcard: false,
        }
    }

    pub const fn wildcard() -> Self {
        Dimension {
            exponents: [Rational32::new_raw(0, 1); 7],
            wildcard: true,
        }
    }

    /// Builds a concrete dimension from integer exponents in
    /// `[length, mass, time, temperature, amount, current, luminosity]` order.
    pub fn from_integers(exps: [i32; 7]) -> Self {
        let mut d = Dimension::dimensionless();
        for (slot, e) in d.exponents.iter_mut().zip(exps) {
            *slot = Rational32::from_integer(e);
        }
        d
    }

    fn base(index: usize) -> Self {
        let mut exps = [0; 7];
        exps[index] = 1;
        Dimension::from_integers(exps)
    }

    pub fn length() -> Self {
        Self::base(LENGTH)
    }
    pub fn mass() -> Self {
        Self::base(MASS)
    }
    pub fn time() -> Self {
        Self::base(TIME)
    }
    pub fn temperature() -> Self {
        Self::base(TEMPERATURE)
    }
    pub fn amount() -> Self {
        Self::base(AMOUNT)
    }

    pub fn is_wildcard(&self) -> bool {
        self.wildcard
    }

    pub fn is_dimensionless(&self) -> bool {
        !self.wildcard && self.exponents.iter().all(|e| *e == Rational32::from_integer(0))
    }

    pub fn exponents(&self) -> &[Rational32; 7] {
        &self.exponents
    }

    pub fn mul(&self, other: &Dimension) -> Dimension {
        if self.wildcard || other.wildcard {
            return Dimension::wildcard();
        }
        let mut out = *self;
        for (a, b) in out.exponents.iter_mut().zip(other.exponents.iter()) {
            *a += *b;
        }
        out
    }

    pub fn div(&self, other: &Dimension) -> Dimension {
        self.mul(&other.powr(Rational32::from_integer(-1)))
    }

    pub fn powr(&self, p: Rational32) -> Dimension {
        if self.wildcard {
            return *self;
        }
        let mut out = *self;
        for e in out.exponents.iter_mut() {
            *e *= p;
        }
        out
    }

    pub fn powi(&self, p: i32) -> Dimension {
        self.powr(Rational32::from_integer(p))
    }

    /// Unification: a wildcard takes the other side's dimension, two
    /// concrete dimensions unify only when equal.
    pub fn unify(&self, other: &Dimension) -> Option<Dimension> {
        match (self.wildcard, other.wildcard) {
            (true, _) => Some(*other),
            (_, true) => Some(*self),
            _ if self == other => Some(*self),
            _ => None,
        }
    }

    /// Plain-text rendering using SI base symbols, e.g. `mol.m-3.s-1`.
    pub fn si_symbol(&self) -> String {
        if self.wildcard {
            return "*".into();
        }
        let mut num = Vec::new();
        let mut den = Vec::new();
        for (e, sym) in self.exponents.iter().zip(BASE_SYMBOLS) {
            let zero = Rational32::from_integer(0);
            if *e > zero {
                num.push(format_factor(sym, *e));
            } else if *e < zero {
                den.push(format_factor(sym, -*e));
            }
        }
        match (num.is_empty(), den.is_empty()) {
            (true, true) => "1".into(),
            (false, true) => num.join("."),
            (true, false) => format!("1/{}", paren_join(&den)),
            (false, false) => format!("{}/{}", num.join("."), paren_join(&den)),
        }
    }
}

fn format_factor(sym: &str, e: Rational32) -> String {
    if e == Rational32::from_integer(1) {
        sym.to_string()
    } else if e.is_integer() {
        format!("{sym}{}", e.to_integer())
    } else {
        format!("{sym}({}/{})", e.numer(), e.denom())
    }
}

fn paren_join(parts: &[String]) -> String {
    if parts.len() == 1 {
        parts[0].clone()
    } else {
        format!("({})", parts.join("."))
    }
}

impl fmt::Debug for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Dimension({})", self.si_symbol())
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.si_symbol())
    }
}

/// A unit: its symbol, dimension, factor to SI, and affine offset.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub symbol: String,
    pub dimension: Dimension,
    pub scale: f64,
    pub offset: f64,
}

impl Unit {
    pub fn is_si(&self) -> bool {
        self.scale == 1.0 && self.offset == 0.0
    }

    pub fn is_affine(&self) -> bool {
        self.offset != 0.0
    }

    pub fn to_si(&self, value: f64) -> f64 {
        value * self.scale + self.offset
    }

    pub fn from_si(&self, value: f64) -> f64 {
        (value - self.offset) / self.scale
    }

    /// LaTeX rendering of the symbol for question text.
    pub fn latex(&self) -> String {
        latex_unit(&self.symbol)
    }
}

impl Serialize for Unit {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.symbol)
    }
}

impl<'de> Deserialize<'de> for Unit {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let sym = String::deserialize(d)?;
        registry().lookup(&sym).map_err(serde::de::Error::custom)
    }
}

/// A value carrying its unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub value: f64,
    pub unit: Unit,
}

impl Quantity {
    pub fn new(value: f64, unit: Unit) -> Self {
        Quantity { value, unit }
    }

    pub fn si_value(&self) -> f64 {
        self.unit.to_si(self.value)
    }

    /// The same quantity expressed in the coherent SI unit of its dimension.
    pub fn to_si(&self) -> Quantity {
        Quantity {
            value: self.si_value(),
            unit: registry().si_unit(&self.unit.dimension),
        }
    }
}

struct Atom {
    dimension: Dimension,
    scale: f64,
    offset: f64,
}

/// Registry of atomic units. Composite units are accepted when they are
/// products and quotients of registered atoms with integer exponents.
pub struct UnitRegistry {
    atoms: HashMap<&'static str, Atom>,
    si_names: Vec<(Dimension, &'static str)>,
}

static REGISTRY: LazyLock<UnitRegistry> = LazyLock::new(UnitRegistry::standard);

/// The process-wide standard registry.
pub fn registry() -> &'static UnitRegistry {
    &REGISTRY
}

impl UnitRegistry {
    pub fn standard() -> Self {
        let energy = Dimension::from_integers([2, 1, -2, 0, 0, 0, 0]);
        let power = Dimension::from_integers([2, 1, -3, 0, 0, 0, 0]);
        let pressure = Dimension::from_integers([-1, 1, -2, 0, 0, 0, 0]);
        let volume = Dimension::length().powi(3);
        let table: Vec<(&'static str, Dimension, f64, f64)> = vec![
            ("m", Dimension::length(), 1.0, 0.0),
            ("cm", Dimension::length(), 1e-2, 0.0),
            ("dm", Dimension::length(), 1e-1, 0.0),
            ("kg", Dimension::mass(), 1.0, 0.0),
            ("g", Dimension::mass(), 1e-3, 0.0),
            ("s", Dimension::time(), 1.0, 0.0),
            ("min", Dimension::time(), 60.0, 0.0),
            ("h", Dimension::time(), 3600.0, 0.0),
            ("K", Dimension::temperature(), 1.0, 0.0),
            ("degC", Dimension::temperature(), 1.0, 273.15),
            ("mol", Dimension::amount(), 1.0, 0.0),
            ("kmol", Dimension::amount(), 1e3, 0.0),
            ("mmol", Dimension::amount(), 1e-3, 0.0),
            ("A", Dimension::base(5), 1.0, 0.0),
            ("cd", Dimension::base(6), 1.0, 0.0),
            ("J", energy, 1.0, 0.0),
            ("kJ", energy, 1e3, 0.0),
            ("cal", energy, 4.184, 0.0),
            ("kcal", energy, 4184.0, 0.0),
            ("W", power, 1.0, 0.0),
            ("kW", power, 1e3, 0.0),
            ("Pa", pressure, 1.0, 0.0),
            ("kPa", pressure, 1e3, 0.0),
            ("bar", pressure, 1e5, 0.0),
            ("atm", pressure, 101_325.0, 0.0),
            ("L", volume, 1e-3, 0.0),
            ("mL", volume, 1e-6, 0.0),
        ];
        let atoms = table
            .into_iter()
            .map(|(sym, dimension, scale, offset)| {
                (
                    sym,
                    Atom {
                        dimension,
                        scale,
                        offset,
                    },
                )
            })
            .collect();
        let si_names = vec![
            (energy, "J"),
            (power, "W"),
            (pressure, "Pa"),
            (energy.div(&Dimension::amount()), "J/mol"),
            (
                energy.div(&Dimension::mass().mul(&Dimension::temperature())),
                "J/(kg.K)",
            ),
            (power.div(&Dimension::temperature()), "W/K"),
            (Dimension::amount().div(&volume), "mol/m3"),
            (Dimension::mass().div(&volume), "kg/m3"),
            (volume.div(&Dimension::time()), "m3/s"),
            (Dimension::mass().div(&Dimension::amount()), "kg/mol"),
            (volume, "m3"),
        ];
        UnitRegistry { atoms, si_names }
    }

    /// Resolves a unit symbol, registered atom or composite.
    pub fn lookup(&self, symbol: &str) -> Result<Unit, UnitError> {
        let trimmed = symbol.trim();
        if let Some(atom) = self.atoms.get(trimmed) {
            return Ok(Unit {
                symbol: trimmed.to_string(),
                dimension: atom.dimension,
                scale: atom.scale,
                offset: atom.offset,
            });
        }
        let mut p = UnitParser {
            reg: self,
            src: trimmed.as_bytes(),
            pos: 0,
            symbol: trimmed,
        };
        let (dimension, scale) = p.parse_expr()?;
        if p.pos != p.src.len() {
            return Err(UnitError::Malformed(trimmed.into()));
        }
        Ok(Unit {
            symbol: trimmed.to_string(),
            dimension,
            scale,
            offset: 0.0,
        })
    }

    pub fn is_registered(&self, symbol: &str) -> bool {
        self.lookup(symbol).is_ok()
    }

    /// The coherent SI unit of a dimension, with a conventional symbol where
    /// one exists.
    pub fn si_unit(&self, dim: &Dimension) -> Unit {
        let symbol = self
            .si_names
            .iter()
            .find(|(d, _)| d == dim)
            .map(|(_, s)| s.to_string())
            .unwrap_or_else(|| dim.si_symbol());
        Unit {
            symbol,
            dimension: *dim,
            scale: 1.0,
            offset: 0.0,
        }
    }

    pub fn convert(&self, q: &Quantity, target: &Unit) -> Result<Quantity, UnitError> {
        for u in [&q.unit, target] {
            let reg = self.lookup(&u.symbol)?;
            if reg.scale != u.scale || reg.offset != u.offset || reg.dimension != u.dimension {
                return Err(UnitError::UnknownUnit(u.symbol.clone()));
            }
        }
        if q.unit.dimension.is_wildcard()
            || target.dimension.is_wildcard()
            || q.unit.dimension != target.dimension
        {
            return Err(UnitError::DimensionMismatch {
                from: q.unit.symbol.clone(),
                to: target.symbol.clone(),
            });
        }
        let value = (q.value * q.unit.scale + q.unit.offset - target.offset) / target.scale;
        Ok(Quantity {
            value,
            unit: target.clone(),
        })
    }

    /// Text table of the atomic units: symbol, exponents, scale, offset.
    pub fn table(&self) -> String {
        let mut syms: Vec<_> = self.atoms.keys().copied().collect();
        syms.sort_unstable();
        let mut out = format!("symbol\t{}\tscale\toffset\n", BASE_DIMENSIONS.join("\t"));
        for s in syms {
            let a = &self.atoms[s];
            let exps: Vec<String> = a.dimension.exponents.iter().map(|e| e.to_string()).collect();
            out.push_str(&format!("{s}\t{}\t{}\t{}\n", exps.join("\t"), a.scale, a.offset));
        }
        out
    }
}

/// Converts a quantity with the standard registry.
pub fn convert(q: &Quantity, target: &Unit) -> Result<Quantity, UnitError> {
    registry().convert(q, target)
}

/// Shorthand for `registry().lookup(sym)`; panics on unregistered symbols.
pub fn unit(sym: &str) -> Unit {
    registry()
        .lookup(sym)
        .unwrap_or_else(|e| panic!("built-in unit table is inconsistent: {e}"))
}

struct UnitParser<'a> {
    reg: &'a UnitRegistry,
    src: &'a [u8],
    pos: usize,
    symbol: &'a str,
}

impl UnitParser<'_> {
    fn err(&self) -> UnitError {
        UnitError::Malformed(self.symbol.into())
    }

    fn parse_expr(&mut self) -> Result<(Dimension, f64), UnitError> {
        let (mut dim, mut scale) = self.parse_factor()?;
        while let Some(&c) = self.src.get(self.pos) {
            match c {
                b'.' | b'*' => {
                    self.pos += 1;
                    let (d, s) = self.parse_factor()?;
                    dim = dim.mul(&d);
                    scale *= s;
                }
                b'/' => {
                    self.pos += 1;
                    let (d, s) = self.parse_factor()?;
                    dim = dim.div(&d);
                    scale /= s;
                }
                _ => break,
            }
        }
        Ok((dim, scale))
    }

    fn parse_factor(&mut self) -> Result<(Dimension, f64), UnitError> {
        let (dim, scale) = match self.src.get(self.pos) {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.parse_expr()?;
                if self.src.get(self.pos) != Some(&b')') {
                    return Err(self.err());
                }
                self.pos += 1;
                inner
            }
            Some(b'1') => {
                self.pos += 1;
                (Dimension::dimensionless(), 1.0)
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.src.get(self.pos).is_some_and(|c| c.is_ascii_alphabetic()) {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).map_err(|_| self.err())?;
                let atom = self
                    .reg
                    .atoms
                    .get(name)
                    .ok_or_else(|| UnitError::UnknownUnit(name.to_string()))?;
                if atom.offset != 0.0 {
                    // affine units cannot be composed
                    return Err(self.err());
                }
                (atom.dimension, atom.scale)
            }
            _ => return Err(self.err()),
        };
        let exp = self.parse_exponent()?;
        Ok((dim.powi(exp), scale.powi(exp)))
    }

    fn parse_exponent(&mut self) -> Result<i32, UnitError> {
        let start = self.pos;
        if matches!(self.src.get(self.pos), Some(b'-') | Some(b'+')) {
            self.pos += 1;
        }
        let digits = self.pos;
        while self.src.get(self.pos).is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == digits {
            if digits != start {
                return Err(self.err());
            }
            return Ok(1);
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.err())
    }
}

/// LaTeX rendering of a Modelica unit symbol.
pub fn latex_unit(symbol: &str) -> String {
    if symbol == "degC" {
        return r"^{\circ}\mathrm{C}".into();
    }
    let mut out = String::new();
    let mut chars = symbol.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '.' | '*' => out.push_str(r"\cdot "),
            '-' | '0'..='9' => {
                let mut exp = c.to_string();
                while let Some(&d) = chars.peek() {
                    if d.is_ascii_digit() {
                        exp.push(d);
                        chars.next();
                    } else {
                        break;
                    }
                }
                // a bare leading "1" is a numerator, not an exponent
                if exp == "1" && out.is_empty() {
                    out.push('1');
                } else {
                    out.push_str(&format!("^{{{exp}}}"));
                }
            }
            _ => out.push(c),
        }
    }
    format!(r"\mathrm{{{out}}}")
}

/// Unit-level annotation of a symbol for expression checking: a dimension,
/// an optional scale to SI (`None` when only the dimension is known), and
/// whether the unit is affine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymbolUnit {
    pub dimension: Dimension,
    pub scale: Option<f64>,
    pub affine: bool,
}

impl SymbolUnit {
    pub fn wildcard() -> Self {
        SymbolUnit {
            dimension: Dimension::wildcard(),
            scale: None,
            affine: false,
        }
    }

    pub fn of_dimension(dimension: Dimension) -> Self {
        SymbolUnit {
            dimension,
            scale: None,
            affine: false,
        }
    }

    pub fn of_unit(u: &Unit) -> Self {
        SymbolUnit {
            dimension: u.dimension,
            scale: Some(u.scale),
            affine: u.is_affine(),
        }
    }

    fn dimensionless_free() -> Self {
        Self::of_dimension(Dimension::dimensionless())
    }
}

/// Why an expression failed the unit check.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum UnitConflict {
    #[error("incompatible units in `{node}`: {left} vs {right}")]
    Incompatible {
        node: String,
        left: String,
        right: String,
    },
    #[error("`{node}` requires a dimensionless argument, found {found}")]
    NotDimensionless { node: String, found: String },
    #[error("affine unit used in multiplicative context `{node}`")]
    Affine { node: String },
    #[error("exponent of `{node}` must be a numeric constant")]
    SymbolicExponent { node: String },
    #[error("symbol `{0}` has no unit annotation")]
    Unbound(String),
}

#[derive(Clone, Copy)]
enum Term {
    Literal,
    Known(SymbolUnit),
}

impl Term {
    /// Literals take any unit in additive position.
    fn additive(self) -> SymbolUnit {
        match self {
            Term::Literal => SymbolUnit::wildcard(),
            Term::Known(u) => u,
        }
    }

    /// Literals act as dimensionless factors of free scale in products.
    fn multiplicative(self, node: &Expr) -> Result<SymbolUnit, UnitConflict> {
        match self {
            Term::Literal => Ok(SymbolUnit::dimensionless_free()),
            Term::Known(u) if u.affine => Err(UnitConflict::Affine {
                node: node.to_string(),
            }),
            Term::Known(u) => Ok(u),
        }
    }
}

fn describe(u: &SymbolUnit) -> String {
    match u.scale {
        Some(s) if s != 1.0 => format!("{} (scale {s})", u.dimension),
        _ => u.dimension.to_string(),
    }
}

fn scales_equal(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

fn unify_units(node: &Expr, a: SymbolUnit, b: SymbolUnit) -> Result<SymbolUnit, UnitConflict> {
    let conflict = || UnitConflict::Incompatible {
        node: node.to_string(),
        left: describe(&a),
        right: describe(&b),
    };
    let dimension = a.dimension.unify(&b.dimension).ok_or_else(conflict)?;
    let scale = match (a.scale, b.scale) {
        (Some(x), Some(y)) if !scales_equal(x, y) => return Err(conflict()),
        (Some(x), _) | (None, Some(x)) => Some(x),
        (None, None) => None,
    };
    Ok(SymbolUnit {
        dimension,
        scale,
        affine: a.affine || b.affine,
    })
}

/// Unit of an expression given unit annotations for its symbols. Sums and
/// equations need unifiable operands (same dimension and, when both are
/// known, the same scale), products combine exponents, `der` divides by
/// time, and transcendental functions need dimensionless arguments.
pub fn dimension_of_expression(
    expr: &Expr,
    env: &HashMap<String, SymbolUnit>,
) -> Result<SymbolUnit, UnitConflict> {
    term_of(expr, &|s| env.get(s).copied()).map(Term::additive)
}

/// Checks `lhs = rhs` and returns the unified unit.
pub fn check_equation(
    lhs: &Expr,
    rhs: &Expr,
    env: &dyn Fn(&str) -> Option<SymbolUnit>,
) -> Result<SymbolUnit, UnitConflict> {
    let l = term_of(lhs, env)?.additive();
    let r = term_of(rhs, env)?.additive();
    let node = Expr::Bin(BinOp::Sub, Box::new(lhs.clone()), Box::new(rhs.clone()));
    unify_units(&node, l, r).map_err(|e| match e {
        UnitConflict::Incompatible { left, right, .. } => UnitConflict::Incompatible {
            node: format!("{lhs} = {rhs}"),
            left,
            right,
        },
        other => other,
    })
}

/// Like [`dimension_of_expression`] with a lookup closure.
pub fn unit_of_expression(
    expr: &Expr,
    env: &dyn Fn(&str) -> Option<SymbolUnit>,
) -> Result<SymbolUnit, UnitConflict> {
    term_of(expr, env).map(Term::additive)
}

fn numeric_exponent(e: &Expr) -> Option<f64> {
    match e {
        Expr::Num(v) => Some(*v),
        Expr::Neg(inner) => numeric_exponent(inner).map(|v| -v),
        _ => None,
    }
}

fn rational_approx(v: f64) -> Option<Rational32> {
    (1..=12).find_map(|den| {
        let num = v * den as f64;
        (num.fract().abs() < 1e-9 && num.abs() < 1e6).then(|| Rational32::new(num.round() as i32, den))
    })
}

fn term_of(expr: &Expr, env: &dyn Fn(&str) -> Option<SymbolUnit>) -> Result<Term, UnitConflict> {
    match expr {
        Expr::Num(_) => Ok(Term::Literal),
        Expr::Sym(name) => {
            if name == "time" {
                return Ok(Term::Known(SymbolUnit::of_unit(&unit("s"))));
            }
            env(name)
                .map(Term::Known)
                .ok_or_else(|| UnitConflict::Unbound(name.clone()))
        }
        Expr::Neg(inner) => term_of(inner, env),
        Expr::Bin(op, a, b) => {
            let ta = term_of(a, env)?;
            let tb = term_of(b, env)?;
            match op {
                BinOp::Add | BinOp::Sub => {
                    if let (Term::Literal, Term::Literal) = (ta, tb) {
                        return Ok(Term::Literal);
                    }
                    let mut u = unify_units(expr, ta.additive(), tb.additive())?;
                    if *op == BinOp::Sub && ta.additive().affine && tb.additive().affine {
                        u.affine = false;
                    }
                    Ok(Term::Known(u))
                }
                BinOp::Mul | BinOp::Div => {
                    if let (Term::Literal, Term::Literal) = (ta, tb) {
                        return Ok(Term::Literal);
                    }
                    let ua = ta.multiplicative(expr)?;
                    let ub = tb.multiplicative(expr)?;
                    let (dimension, scale) = if *op == BinOp::Mul {
                        (ua.dimension.mul(&ub.dimension), ua.scale.zip(ub.scale).map(|(x, y)| x * y))
                    } else {
                        (ua.dimension.div(&ub.dimension), ua.scale.zip(ub.scale).map(|(x, y)| x / y))
                    };
                    // a literal factor has free scale, so the product keeps the
                    // known operand's scale only when both were known
                    let scale = match (ta, tb) {
                        (Term::Literal, _) | (_, Term::Literal) => None,
                        _ => scale,
                    };
                    Ok(Term::Known(SymbolUnit {
                        dimension,
                        scale,
                        affine: false,
                    }))
                }
                BinOp::Pow => {
                    if let Term::Known(e) = tb {
                        if e.dimension.unify(&Dimension::dimensionless()).is_none() {
                            return Err(UnitConflict::NotDimensionless {
                                node: expr.to_string(),
                                found: describe(&e),
                            });
                        }
                    }
                    let base = match ta {
                        Term::Literal => return Ok(Term::Literal),
                        Term::Known(_) => ta.multiplicative(expr)?,
                    };
                    if base.dimension.is_dimensionless() || base.dimension.is_wildcard() {
                        return Ok(Term::Known(SymbolUnit {
                            dimension: base.dimension,
                            scale: None,
                            affine: false,
                        }));
                    }
                    let p = numeric_exponent(b)
                        .and_then(rational_approx)
                        .ok_or_else(|| UnitConflict::SymbolicExponent {
                            node: expr.to_string(),
                        })?;
                    let pf = *p.numer() as f64 / *p.denom() as f64;
                    Ok(Term::Known(SymbolUnit {
                        dimension: base.dimension.powr(p),
                        scale: base.scale.map(|s| s.powf(pf)),
                        affine: false,
                    }))
                }
            }
        }
        Expr::Call(name, args) => {
            let terms = args
                .iter()
                .map(|a| term_of(a, env))
                .collect::<Result<Vec<_>, _>>()?;
            match (name.as_str(), terms.as_slice()) {
                ("der", [t]) => {
                    let u = match t {
                        Term::Literal => return Ok(Term::Literal),
                        Term::Known(u) => *u,
                    };
                    Ok(Term::Known(SymbolUnit {
                        dimension: u.dimension.div(&Dimension::time()),
                        scale: u.scale,
                        affine: false,
                    }))
                }
                ("exp" | "log" | "ln" | "log10" | "sin" | "cos" | "tan" | "sinh" | "cosh" | "tanh"
                | "asin" | "acos" | "atan", [t]) => {
                    let u = t.additive();
                    let ok = u.dimension.unify(&Dimension::dimensionless()).is_some()
                        && u.scale.is_none_or(|s| scales_equal(s, 1.0));
                    if !ok {
                        return Err(UnitConflict::NotDimensionless {
                            node: expr.to_string(),
                            found: describe(&u),
                        });
                    }
                    Ok(Term::Known(SymbolUnit::dimensionless_free()))
                }
                ("sqrt", [t]) => match t {
                    Term::Literal => Ok(Term::Literal),
                    Term::Known(_) => {
                        let u = t.multiplicative(expr)?;
                        Ok(Term::Known(SymbolUnit {
                            dimension: u.dimension.powr(Rational32::new(1, 2)),
                            scale: u.scale.map(f64::sqrt),
                            affine: false,
                        }))
                    }
                },
                ("abs", [t]) => Ok(*t),
                ("min" | "max", [a, b]) => {
                    if let (Term::Literal, Term::Literal) = (a, b) {
                        return Ok(Term::Literal);
                    }
                    unify_units(expr, a.additive(), b.additive()).map(Term::Known)
                }
                _ => Ok(Term::Known(SymbolUnit::wildcard())),
            }
        }
    }
}

/// Built-in Modelica physical types understood by the checker, with their
/// SI units. `Real` is the untyped wildcard.
pub const BUILTIN_TYPES: &[(&str, &str)] = &[
    ("Concentration", "mol/m3"),
    ("Density", "kg/m3"),
    ("Temperature", "K"),
    ("ThermodynamicTemperature", "K"),
    ("Volume", "m3"),
    ("VolumeFlowRate", "m3/s"),
    ("SpecificHeatCapacity", "J/(kg.K)"),
    ("MolarEnthalpy", "J/mol"),
    ("MolarEnergy", "J/mol"),
    ("HeatFlowRate", "W"),
    ("Power", "W"),
    ("Energy", "J"),
    ("ThermalConductance", "W/K"),
    ("Mass", "kg"),
    ("MolarMass", "kg/mol"),
    ("AmountOfSubstance", "mol"),
    ("MolarFlowRate", "mol/s"),
    ("Pressure", "Pa"),
    ("Time", "s"),
];

/// The SI unit of a built-in type name (last segment of a dotted path), or
/// `None` for `Real` and unknown names.
pub fn builtin_type_unit(type_name: &str) -> Option<Unit> {
    let last = type_name.rsplit('.').next().unwrap_or(type_name);
    BUILTIN_TYPES
        .iter()
        .find(|(n, _)| *n == last)
        .map(|(_, u)| unit(u))
}

/// The built-in type whose SI unit has the given dimension.
pub fn builtin_type_for(dim: &Dimension) -> Option<&'static str> {
    BUILTIN_TYPES
        .iter()
        .find(|(_, u)| unit(u).dimension == *dim)
        .map(|(n, _)| *n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(v: f64, u: &str) -> Quantity {
        Quantity::new(v, unit(u))
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
    }

    #[test]
    fn celsius_to_kelvin() {
        let k = convert(&q(25.0, "degC"), &unit("K")).unwrap();
        assert!(close(k.value, 298.15));
    }

    #[test]
    fn calorie_to_joule() {
        assert_eq!(convert(&q(1.0, "cal"), &unit("J")).unwrap().value, 4.184);
    }

    #[test]
    fn litres_per_minute() {
        let v = convert(&q(60.0, "L/min"), &unit("m3/s")).unwrap().value;
        assert!(close(v, 1.0e-3));
    }

    #[test]
    fn mismatched_dimensions_are_rejected() {
        let err = convert(&q(1.0, "J"), &unit("K")).unwrap_err();
        assert!(matches!(err, UnitError::DimensionMismatch { .. }));
    }

    #[test]
    fn unknown_units_are_rejected() {
        assert!(matches!(
            registry().lookup("furlong"),
            Err(UnitError::UnknownUnit(_))
        ));
        let bogus = Unit {
            symbol: "J".into(),
            dimension: Dimension::temperature(),
            scale: 2.0,
            offset: 0.0,
        };
        assert!(matches!(
            convert(&q(1.0, "J"), &bogus),
            Err(UnitError::UnknownUnit(_))
        ));
    }

    #[test]
    fn composite_units_parse() {
        let u = unit("m6/(mol2.s)");
        assert_eq!(u.dimension, Dimension::from_integers([6, 0, -1, 0, -2, 0, 0]));
        let l = unit("L2/(mol2.min)");
        assert!(close(l.scale, 1e-6 / 60.0));
        assert_eq!(unit("1/h").scale, 1.0 / 3600.0);
        assert!(registry().lookup("degC/s").is_err());
        assert!(registry().lookup("m/").is_err());
    }

    #[test]
    fn si_units_have_unit_scale_and_zero_offset() {
        for sym in ["K", "J", "W", "Pa", "mol", "m3", "s", "kg", "mol/m3", "J/(kg.K)", "J/mol", "m3/s"] {
            assert!(unit(sym).is_si(), "{sym}");
        }
        for sym in ["degC", "cal", "kcal", "bar", "atm", "L", "mL", "min", "h", "g", "kmol", "mol/L"] {
            assert!(!unit(sym).is_si(), "{sym}");
        }
    }

    #[test]
    fn dimension_algebra() {
        let c = unit("mol/m3").dimension;
        assert_eq!(c.mul(&Dimension::length().powi(3)), Dimension::amount());
        assert!(Dimension::dimensionless().is_dimensionless());
        assert!(!Dimension::wildcard().is_dimensionless());
        assert_eq!(Dimension::wildcard().unify(&c), Some(c));
        assert_eq!(c.unify(&Dimension::temperature()), None);
        assert_eq!(c.powr(Rational32::new(1, 2)).powi(2), c);
    }

    fn env(pairs: &[(&str, SymbolUnit)]) -> HashMap<String, SymbolUnit> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn joules_plus_calories_conflict() {
        let e = env(&[
            ("a", SymbolUnit::of_unit(&unit("J"))),
            ("b", SymbolUnit::of_unit(&unit("cal"))),
        ]);
        let expr = Expr::sym("a") + Expr::sym("b");
        assert!(matches!(
            dimension_of_expression(&expr, &e),
            Err(UnitConflict::Incompatible { .. })
        ));
    }

    #[test]
    fn wildcard_unifies_in_sums() {
        let e = env(&[
            ("x", SymbolUnit::wildcard()),
            ("y", SymbolUnit::of_unit(&unit("mol/m3"))),
        ]);
        let u = dimension_of_expression(&(Expr::sym("x") + Expr::sym("y")), &e).unwrap();
        assert_eq!(u.dimension, unit("mol/m3").dimension);
    }

    #[test]
    fn derivative_divides_by_time() {
        let e = env(&[("c", SymbolUnit::of_unit(&unit("mol/m3")))]);
        let u = dimension_of_expression(&Expr::der(Expr::sym("c")), &e).unwrap();
        assert_eq!(u.dimension, unit("mol/(m3.s)").dimension);
    }

    #[test]
    fn transcendental_needs_dimensionless() {
        let e = env(&[
            ("Ea", SymbolUnit::of_unit(&unit("J/mol"))),
            ("R", SymbolUnit::of_unit(&unit("J/(mol.K)"))),
            ("T", SymbolUnit::of_unit(&unit("K"))),
        ]);
        let ok = Expr::call("exp", vec![-(Expr::sym("Ea") / (Expr::sym("R") * Expr::sym("T")))]);
        assert!(dimension_of_expression(&ok, &e).is_ok());
        let bad = Expr::call("exp", vec![Expr::sym("T")]);
        assert!(dimension_of_expression(&bad, &e).is_err());
    }

    #[test]
    fn affine_units_rejected_in_products() {
        let e = env(&[
            ("T", SymbolUnit::of_unit(&unit("degC"))),
            ("k", SymbolUnit::of_unit(&unit("W/K"))),
        ]);
        let expr = Expr::sym("k") * Expr::sym("T");
        assert!(matches!(
            dimension_of_expression(&expr, &e),
            Err(UnitConflict::Affine { .. })
        ));
    }

    #[test]
    fn literal_conversion_factor_is_accepted() {
        let e = env(&[
            ("a", SymbolUnit::of_unit(&unit("J"))),
            ("b", SymbolUnit::of_unit(&unit("cal"))),
        ]);
        let expr = Expr::sym("a") + Expr::num(4.184) * Expr::sym("b");
        assert!(dimension_of_expression(&expr, &e).is_ok());
    }

    #[test]
    fn latex_rendering() {
        assert_eq!(latex_unit("degC"), r"^{\circ}\mathrm{C}");
        assert_eq!(latex_unit("m3/(mol.s)"), r"\mathrm{m^{3}/(mol\cdot s)}");
        assert_eq!(latex_unit("1/min"), r"\mathrm{1/min}");
    }

    #[test]
    fn registry_table_lists_atoms() {
        let t = registry().table();
        assert!(t.lines().any(|l| l.starts_with("cal\t")));
        assert!(t.lines().any(|l| l.starts_with("degC\t") && l.ends_with("273.15")));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        const SYMBOLS: &[&str] = &[
            "K", "degC", "J", "kJ", "cal", "kcal", "bar", "atm", "Pa", "L", "mL", "m3", "min", "h", "s",
            "g", "kg", "kmol", "mol", "mol/L", "mol/m3", "L/min", "m3/s", "J/(kg.K)", "cal/(g.K)",
            "kcal/mol", "J/mol", "L2/(mol2.h)",
        ];

        proptest! {
            #[test]
            fn round_trip_through_si(idx in 0..SYMBOLS.len(), v in -1e6f64..1e6) {
                let u = unit(SYMBOLS[idx]);
                let si = registry().si_unit(&u.dimension);
                let there = convert(&Quantity::new(v, u.clone()), &si).unwrap();
                let back = convert(&there, &u).unwrap();
                let tol = 1e-12 * v.abs().max(u.offset.abs() / u.scale).max(1e-300);
                prop_assert!((back.value - v).abs() <= tol, "{} {} -> {}", v, u.symbol, back.value);
            }

            #[test]
            fn composition_matches_direct(a in 0..3usize, b in 0..3usize, c in 0..3usize, v in 1e-4f64..1e5) {
                let group = ["L", "mL", "m3"];
                let (ua, ub, uc) = (unit(group[a]), unit(group[b]), unit(group[c]));
                let via = convert(&convert(&Quantity::new(v, ua.clone()), &ub).unwrap(), &uc).unwrap();
                let direct = convert(&Quantity::new(v, ua), &uc).unwrap();
                prop_assert!((via.value - direct.value).abs() <= 1e-12 * direct.value.abs());
            }
        }
    }
}
