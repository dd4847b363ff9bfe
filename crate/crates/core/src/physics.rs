//! Reference CSTR balances for a scenario.
//!
//! Constant density gives species balances (plus an energy balance when the
//! reactor is not isothermal). Variable density adds a total mass balance,
//! volume additivity over pure-component densities and constant-volume
//! overflow, with the outlet flow `q_out` as an algebraic unknown.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{BinOp, Dual, EvalError, Expr};
use crate::scenario::{ParamKind, ParamRole, Parameter, ReactorScenario};
use crate::units::{unit, Quantity, SymbolUnit, Unit, UnitConflict};

pub const GAS_CONSTANT: f64 = 8.314_462_618;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    State,
    Algebraic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub unit: Unit,
    /// Built-in declaration type, `None` for `Real` with a unit modifier.
    pub modelica_type: Option<String>,
    /// Start expression over parameters, for states.
    pub start: Option<Expr>,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EquationRole {
    Balance(String),
    Auxiliary(String),
    Constraint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equation {
    pub lhs: Expr,
    pub rhs: Expr,
    pub comment: String,
    pub role: EquationRole,
}

impl Equation {
    pub fn symbols(&self) -> BTreeSet<String> {
        let mut s = self.lhs.symbols();
        s.extend(self.rhs.symbols());
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    Ode,
    Dae,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquationSystem {
    /// Scenario parameters in SI, plus derived constants such as `R`.
    pub parameters: Vec<Parameter>,
    pub unknowns: Vec<Variable>,
    pub equations: Vec<Equation>,
    pub classification: Classification,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicsError {
    #[error("scenario is under-specified, missing: {}", .0.iter().cloned().collect::<Vec<_>>().join(", "))]
    UnderSpecified(BTreeSet<String>),
    #[error("parameter `{0}` is required but absent")]
    MissingParameter(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResidualError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("non-finite residual in equation {0}")]
    NonFiniteResult(usize),
}

fn s(name: &str) -> Expr {
    Expr::sym(name)
}

fn n(v: f64) -> Expr {
    Expr::num(v)
}

fn mul(a: Expr, b: Expr) -> Expr {
    Expr::bin(BinOp::Mul, a, b)
}

fn div(a: Expr, b: Expr) -> Expr {
    Expr::bin(BinOp::Div, a, b)
}

fn sub(a: Expr, b: Expr) -> Expr {
    Expr::bin(BinOp::Sub, a, b)
}

fn add(a: Expr, b: Expr) -> Expr {
    Expr::bin(BinOp::Add, a, b)
}

fn power(base: Expr, nu: u32) -> Expr {
    if nu == 1 {
        base
    } else {
        base.pow(n(nu as f64))
    }
}

/// `acc + coeff*f1*f2*...` with the sign folded into `+`/`-`.
fn add_signed(acc: Option<Expr>, coeff: i64, factors: Vec<Expr>) -> Option<Expr> {
    if coeff == 0 {
        return acc;
    }
    let magnitude = coeff.unsigned_abs();
    let lead = (magnitude != 1).then(|| n(magnitude as f64));
    let t = Expr::product(lead.into_iter().chain(factors)).expect("non-empty product");
    Some(match (acc, coeff > 0) {
        (None, true) => t,
        (None, false) => -t,
        (Some(a), true) => add(a, t),
        (Some(a), false) => sub(a, t),
    })
}

/// SI value of a prompt quantity, rounded to 12 significant digits so the
/// declared numbers stay readable.
pub fn si_quantity(q: &Quantity, si: &Unit) -> Quantity {
    let v = si.from_si(q.si_value());
    let rounded: f64 = format!("{v:.11e}").parse().expect("float");
    Quantity::new(rounded, si.clone())
}

pub fn concentration(species: &str) -> String {
    format!("c{species}")
}

pub fn rate(j: usize) -> String {
    format!("r{j}")
}

/// Builds the reference equation system.
pub fn build_equations(sc: &ReactorScenario) -> Result<EquationSystem, PhysicsError> {
    if !sc.omitted_parameters.is_empty() {
        return Err(PhysicsError::UnderSpecified(sc.omitted_parameters.clone()));
    }
    let cd = sc.density.constant_density;
    let mut parameters: Vec<Parameter> = sc
        .parameters
        .iter()
        .map(|p| Parameter {
            quantity: si_quantity(&p.quantity, &p.kind.si_unit()),
            ..p.clone()
        })
        .collect();
    let has = |name: &str| parameters.iter().any(|p| p.name == name);
    let need = |name: &str| -> Result<(), PhysicsError> {
        if has(name) {
            Ok(())
        } else {
            Err(PhysicsError::MissingParameter(name.into()))
        }
    };
    let arrhenius = sc
        .scheme
        .reactions
        .iter()
        .any(|r| r.kinetics.forward_arrhenius.is_some());
    for name in ["q", if cd { "V" } else { "V_spec" }] {
        need(name)?;
    }
    let mut unknowns = Vec::new();
    let mut equations = Vec::new();
    let state = |name: String, u: &str, ty: &str, start: Expr, description: String| Variable {
        name,
        kind: VarKind::State,
        unit: unit(u),
        modelica_type: Some(ty.into()),
        start: Some(start),
        description,
    };
    let algebraic = |name: String, u: &str, ty: Option<&str>, description: String| Variable {
        name,
        kind: VarKind::Algebraic,
        unit: unit(u),
        modelica_type: ty.map(str::to_string),
        start: None,
        description,
    };

    for c in &sc.scheme.components {
        need(&format!("c{c}_in"))?;
        need(&format!("c{c}0"))?;
        unknowns.push(state(
            concentration(c),
            "mol/m3",
            "Concentration",
            s(&format!("c{c}0")),
            format!("concentration of {c} in the reactor"),
        ));
    }
    if !cd {
        unknowns.push(state("V".into(), "m3", "Volume", s("V_spec"), "liquid volume".into()));
        let start = Expr::sum(
            sc.scheme
                .components
                .iter()
                .map(|c| mul(s(&format!("c{c}0")), s(&format!("M_{c}")))),
        )
        .expect("at least two components");
        unknowns.push(state("rho".into(), "kg/m3", "Density", start, "mixture density".into()));
    }
    if !sc.mode.isothermal {
        need("T0")?;
        unknowns.push(state("T".into(), "K", "Temperature", s("T0"), "reactor temperature".into()));
    } else {
        need("T")?;
    }
    if !cd {
        unknowns.push(algebraic("q_out".into(), "m3/s", Some("VolumeFlowRate"), "outlet flow rate".into()));
        unknowns.push(algebraic("rho_in".into(), "kg/m3", Some("Density"), "feed density".into()));
    }
    for j in 1..=sc.scheme.reactions.len() {
        unknowns.push(algebraic(rate(j), "mol/(m3.s)", None, format!("rate of reaction {j}")));
    }
    if !sc.mode.adiabatic {
        need("UA")?;
        need("T_cool")?;
        unknowns.push(algebraic(
            "Qdot".into(),
            "W",
            Some("HeatFlowRate"),
            "heat flow from the coolant".into(),
        ));
    }

    // species balances
    for c in &sc.scheme.components {
        let cx = concentration(c);
        let inlet = format!("c{c}_in");
        let mut reaction = None;
        for (i, r) in sc.scheme.reactions.iter().enumerate() {
            let term = if cd { vec![s(&rate(i + 1))] } else { vec![s("V"), s(&rate(i + 1))] };
            reaction = add_signed(reaction, r.signed_nu(c), term);
        }
        let (lhs, flow) = if cd {
            (
                Expr::der(s(&cx)),
                mul(div(s("q"), s("V")), sub(s(&inlet), s(&cx))),
            )
        } else {
            (
                add(mul(s("V"), Expr::der(s(&cx))), mul(s(&cx), Expr::der(s("V")))),
                sub(mul(s("q"), s(&inlet)), mul(s("q_out"), s(&cx))),
            )
        };
        let rhs = match reaction {
            Some(Expr::Neg(t)) => sub(flow, *t),
            Some(t) => add(flow, t),
            None => flow,
        };
        equations.push(Equation {
            lhs,
            rhs,
            comment: format!("mole balance for {c}"),
            role: EquationRole::Balance(cx),
        });
    }

    if !cd {
        equations.push(Equation {
            lhs: add(mul(s("V"), Expr::der(s("rho"))), mul(s("rho"), Expr::der(s("V")))),
            rhs: sub(mul(s("rho_in"), s("q")), mul(s("rho"), s("q_out"))),
            comment: "total mass balance".into(),
            role: EquationRole::Balance("rho".into()),
        });
        let feed = Expr::sum(
            sc.scheme
                .components
                .iter()
                .map(|c| mul(s(&format!("c{c}_in")), s(&format!("M_{c}")))),
        )
        .expect("components");
        equations.push(Equation {
            lhs: s("rho_in"),
            rhs: feed,
            comment: "feed density from the inlet composition".into(),
            role: EquationRole::Auxiliary("rho_in".into()),
        });
        for c in &sc.scheme.components {
            need(&format!("M_{c}"))?;
            need(&format!("rho_{c}"))?;
        }
        let additivity = Expr::sum(sc.scheme.components.iter().map(|c| {
            div(
                mul(s(&concentration(c)), s(&format!("M_{c}"))),
                s(&format!("rho_{c}")),
            )
        }))
        .expect("components");
        equations.push(Equation {
            lhs: additivity,
            rhs: n(1.0),
            comment: "volume additivity of the pure components".into(),
            role: EquationRole::Constraint,
        });
        equations.push(Equation {
            lhs: s("V"),
            rhs: s("V_spec"),
            comment: "overflow keeps the volume constant".into(),
            role: EquationRole::Constraint,
        });
    }

    if !sc.mode.isothermal {
        for name in ["T_in", "cp"] {
            need(name)?;
        }
        let density = if cd { "rho" } else { "rho_in" };
        if cd {
            need("rho")?;
        }
        let lhs = mul(mul(mul(s("rho"), s("cp")), s("V")), Expr::der(s("T")));
        let mut rhs = mul(mul(mul(s(density), s("cp")), s("q")), sub(s("T_in"), s("T")));
        for j in 1..=sc.scheme.reactions.len() {
            let dh = format!("dHr{j}");
            need(&dh)?;
            rhs = sub(rhs, mul(mul(s(&dh), s("V")), s(&rate(j))));
        }
        if !sc.mode.adiabatic {
            rhs = add(rhs, s("Qdot"));
        }
        equations.push(Equation {
            lhs,
            rhs,
            comment: "energy balance".into(),
            role: EquationRole::Balance("T".into()),
        });
    }

    for (i, r) in sc.scheme.reactions.iter().enumerate() {
        let j = i + 1;
        let side = |species: &[(String, u32)], k: Expr| {
            Expr::product(
                std::iter::once(k).chain(species.iter().map(|(c, nu)| power(s(&concentration(c)), *nu))),
            )
            .expect("non-empty")
        };
        let constant = |name: &str, arr: &Option<crate::scenario::ArrheniusSpec>| match arr {
            Some(a) => mul(
                s(&a.pre_exponential),
                Expr::call(
                    "exp",
                    vec![-div(s(&a.activation_energy), mul(s("R"), s("T")))],
                ),
            ),
            None => s(name),
        };
        if r.kinetics.forward_arrhenius.is_none() {
            need(&r.kinetics.forward)?;
        }
        let mut law = side(&r.reactants, constant(&r.kinetics.forward, &r.kinetics.forward_arrhenius));
        if let Some(kr) = &r.kinetics.reverse {
            if r.kinetics.reverse_arrhenius.is_none() {
                need(kr)?;
            }
            law = sub(law, side(&r.products, constant(kr, &r.kinetics.reverse_arrhenius)));
        }
        equations.push(Equation {
            lhs: s(&rate(j)),
            rhs: law,
            comment: format!("mass-action rate of reaction {j}"),
            role: EquationRole::Auxiliary(rate(j)),
        });
    }
    if !sc.mode.adiabatic {
        equations.push(Equation {
            lhs: s("Qdot"),
            rhs: mul(s("UA"), sub(s("T_cool"), s("T"))),
            comment: if sc.mode.isothermal {
                "cooling duty at the fixed temperature".into()
            } else {
                "heat exchange with the coolant".into()
            },
            role: EquationRole::Auxiliary("Qdot".into()),
        });
    }

    if arrhenius {
        parameters.push(Parameter {
            name: "R".into(),
            role: ParamRole::GasConstant,
            kind: ParamKind::MolarEntropy,
            quantity: Quantity::new(GAS_CONSTANT, unit("J/(mol.K)")),
        });
    }
    let classification = classify(&unknowns, &equations);
    Ok(EquationSystem {
        parameters,
        unknowns,
        equations,
        classification,
    })
}

/// An algebraic unknown is an auxiliary when some equation defines it
/// explicitly, `v = f(...)`, with `f` free of `der` and of algebraic unknowns
/// that are not themselves auxiliaries. The system is a DAE when any other
/// algebraic unknown remains.
pub fn classify(unknowns: &[Variable], equations: &[Equation]) -> Classification {
    let algebraic: BTreeSet<&str> = unknowns
        .iter()
        .filter(|v| v.kind == VarKind::Algebraic)
        .map(|v| v.name.as_str())
        .collect();
    let mut explicit: BTreeSet<String> = BTreeSet::new();
    loop {
        let before = explicit.len();
        for eq in equations {
            let Expr::Sym(target) = &eq.lhs else { continue };
            if !algebraic.contains(target.as_str()) || explicit.contains(target) || eq.rhs.contains_der() {
                continue;
            }
            let free = eq.rhs.symbols();
            if free
                .iter()
                .all(|x| x != target && (!algebraic.contains(x.as_str()) || explicit.contains(x)))
            {
                explicit.insert(target.clone());
            }
        }
        if explicit.len() == before {
            break;
        }
    }
    if algebraic.iter().all(|a| explicit.contains(*a)) {
        Classification::Ode
    } else {
        Classification::Dae
    }
}

impl EquationSystem {
    pub fn parameter(&self, name: &str) -> Option<&Parameter> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn parameter_values(&self) -> HashMap<String, f64> {
        self.parameters
            .iter()
            .map(|p| (p.name.clone(), p.quantity.value))
            .collect()
    }

    pub fn unknown(&self, name: &str) -> Option<&Variable> {
        self.unknowns.iter().find(|v| v.name == name)
    }

    pub fn states(&self) -> impl Iterator<Item = &Variable> {
        self.unknowns.iter().filter(|v| v.kind == VarKind::State)
    }

    pub fn is_square(&self) -> bool {
        self.unknowns.len() == self.equations.len()
    }

    /// Start value of an unknown, evaluated from parameters.
    pub fn start_value(&self, v: &Variable) -> Option<f64> {
        let params = self.parameter_values();
        v.start.as_ref()?.eval(&|x| params.get(x).copied()).ok()
    }

    /// Units of all symbols the equations may reference, for dimensional checks.
    pub fn symbol_units(&self) -> HashMap<String, SymbolUnit> {
        let mut env: HashMap<String, SymbolUnit> = self
            .parameters
            .iter()
            .map(|p| (p.name.clone(), SymbolUnit::of_unit(&p.quantity.unit)))
            .collect();
        for v in &self.unknowns {
            env.insert(v.name.clone(), SymbolUnit::of_unit(&v.unit));
        }
        env
    }

    /// Dimensional check of every equation; returns the failing equations.
    pub fn unit_conflicts(&self) -> Vec<(usize, UnitConflict)> {
        let env = self.symbol_units();
        self.equations
            .iter()
            .enumerate()
            .filter_map(|(i, e)| crate::units::check_equation(&e.lhs, &e.rhs, &|x| env.get(x).copied()).err().map(|c| (i, c)))
            .collect()
    }

    /// `lhs - rhs` per equation, in declaration order. Parameters come from
    /// the system; `values` binds unknowns (and may override parameters),
    /// `derivatives` binds time derivatives. `time` is bound to `t`.
    pub fn residual(
        &self,
        values: &HashMap<String, f64>,
        derivatives: &HashMap<String, f64>,
        t: f64,
    ) -> Result<Vec<f64>, ResidualError> {
        let params = self.parameter_values();
        let env = |name: &str| -> Option<Dual> {
            if name == "time" {
                return Some(Dual::new(t, 1.0));
            }
            if let Some(v) = values.get(name) {
                return Some(Dual::new(*v, derivatives.get(name).copied().unwrap_or(f64::NAN)));
            }
            params.get(name).map(|v| Dual::constant(*v))
        };
        self.equations
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let r = e.lhs.eval_dual(&env)?.value - e.rhs.eval_dual(&env)?.value;
                if r.is_finite() {
                    Ok(r)
                } else {
                    Err(ResidualError::NonFiniteResult(i))
                }
            })
            .collect()
    }

    /// Residuals scaled as `|lhs - rhs| / (1 + |lhs| + |rhs|)`.
    pub fn normalized_residual(
        &self,
        values: &HashMap<String, f64>,
        derivatives: &HashMap<String, f64>,
        t: f64,
    ) -> Result<Vec<f64>, ResidualError> {
        let params = self.parameter_values();
        let env = |name: &str| -> Option<Dual> {
            if name == "time" {
                return Some(Dual::new(t, 1.0));
            }
            if let Some(v) = values.get(name) {
                return Some(Dual::new(*v, derivatives.get(name).copied().unwrap_or(f64::NAN)));
            }
            params.get(name).map(|v| Dual::constant(*v))
        };
        self.equations
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let l = e.lhs.eval_dual(&env)?.value;
                let r = e.rhs.eval_dual(&env)?.value;
                let v = normalized(l, r);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(ResidualError::NonFiniteResult(i))
                }
            })
            .collect()
    }
}

pub fn normalized(lhs: f64, rhs: f64) -> f64 {
    (lhs - rhs).abs() / (1.0 + lhs.abs() + rhs.abs())
}

impl std::fmt::Display for Equation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} = {}", self.lhs, self.rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{enumerate_templates, extrapolation_templates, instantiate};

    fn first_order_scenario() -> ReactorScenario {
        let mut sc = instantiate(&enumerate_templates()[0], 5).unwrap();
        let r = &mut sc.scheme.reactions[0];
        r.reactants[0].1 = 1;
        r.products[0].1 = 1;
        for p in &mut sc.parameters {
            if let ParamKind::RateConstant { .. } = p.kind {
                p.kind = ParamKind::RateConstant { order: 1 };
                p.quantity = Quantity::new(0.02, unit("1/s"));
            }
        }
        sc
    }

    fn values(pairs: &[(&str, f64)]) -> HashMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn first_order_isothermal_system() {
        let sys = build_equations(&first_order_scenario()).unwrap();
        let names: Vec<_> = sys.unknowns.iter().map(|v| v.name.as_str()).collect();
        assert_eq!(names, ["cA", "cB", "r1"]);
        assert_eq!(sys.states().count(), 2);
        assert_eq!(sys.classification, Classification::Ode);
        assert_eq!(sys.equations[0].to_string(), "der(cA) = q / V * (cA_in - cA) - r1");
        assert_eq!(sys.equations[1].to_string(), "der(cB) = q / V * (cB_in - cB) + r1");
        assert_eq!(sys.equations[2].to_string(), "r1 = kf1 * cA");
    }

    #[test]
    fn analytic_steady_state_zeroes_the_residual() {
        let sc = first_order_scenario();
        let sys = build_equations(&sc).unwrap();
        let p = sys.parameter_values();
        let (q, v, k, ca_in) = (p["q"], p["V"], p["kf1"], p["cA_in"]);
        let ca = q * ca_in / (q + k * v);
        let cb = p["cB_in"] + k * ca * v / q;
        let st = values(&[("cA", ca), ("cB", cb), ("r1", k * ca)]);
        let d = values(&[("cA", 0.0), ("cB", 0.0)]);
        for r in sys.normalized_residual(&st, &d, 0.0).unwrap() {
            assert!(r < 1e-12, "{r}");
        }
    }

    #[test]
    fn equilibrium_has_zero_net_rate() {
        let sc = instantiate(&enumerate_templates()[1], 2).unwrap();
        let sys = build_equations(&sc).unwrap();
        let p = sys.parameter_values();
        let r = &sc.scheme.reactions[0];
        let (na, nb) = (r.reactants[0].1 as i32, r.products[0].1 as i32);
        let ca: f64 = 1.3;
        let cb = (p["kf1"] * ca.powi(na) / p["kr1"]).powf(1.0 / nb as f64);
        let rate_eq = &sys.equations.iter().find(|e| e.role == EquationRole::Auxiliary("r1".into())).unwrap();
        let env = |x: &str| match x {
            "cA" => Some(ca),
            "cB" => Some(cb),
            _ => p.get(x).copied(),
        };
        let net = rate_eq.rhs.eval(&env).unwrap();
        assert!(net.abs() < 1e-9 * p["kf1"] * ca.powi(na), "{net}");
    }

    #[test]
    fn doubling_first_order_state_doubles_reaction_term() {
        let sys = build_equations(&first_order_scenario()).unwrap();
        let rate_eq = &sys.equations[2];
        let p = sys.parameter_values();
        let at = |c: f64| rate_eq.rhs.eval(&|x| if x == "cA" { Some(c) } else { p.get(x).copied() }).unwrap();
        assert!((at(2.0) - 2.0 * at(1.0)).abs() < 1e-15);
    }

    #[test]
    fn all_templates_are_square_and_consistent() {
        for t in enumerate_templates().iter().chain(&extrapolation_templates()[..3]) {
            let sc = instantiate(t, 11).unwrap();
            let sys = build_equations(&sc).unwrap();
            assert!(sys.is_square(), "{}", t.id);
            assert!(sys.unit_conflicts().is_empty(), "{}: {:?}", t.id, sys.unit_conflicts());
            let want = if t.constant_density { Classification::Ode } else { Classification::Dae };
            assert_eq!(sys.classification, want, "{}", t.id);
            if t.mode.isothermal {
                assert!(sys.unknown("T").is_none());
                assert!(sys.parameter("T").is_some());
            }
            if t.mode.adiabatic {
                assert!(sys.equations.iter().all(|e| !e.symbols().contains("UA")));
            }
            if !t.constant_density {
                assert!(sys.unknown("V").is_some() && sys.unknown("rho").is_some());
            }
            let known: BTreeSet<String> = sys
                .parameters
                .iter()
                .map(|p| p.name.clone())
                .chain(sys.unknowns.iter().map(|v| v.name.clone()))
                .collect();
            for e in &sys.equations {
                assert!(e.symbols().is_subset(&known), "{}: {e}", t.id);
            }
        }
    }

    #[test]
    fn balance_coefficients_match_signed_stoichiometry() {
        let sc = instantiate(&enumerate_templates()[5], 3).unwrap();
        let sys = build_equations(&sc).unwrap();
        let p = sys.parameter_values();
        for c in &sc.scheme.components {
            let eq = sys
                .equations
                .iter()
                .find(|e| e.role == EquationRole::Balance(concentration(c)))
                .unwrap();
            // d rhs / d r1 by evaluating at r1 = 0 and r1 = 1 with flow term fixed
            let at = |r: f64| {
                eq.rhs
                    .eval(&|x| match x {
                        "r1" => Some(r),
                        x if x.starts_with('c') && !x.ends_with("_in") && !x.ends_with('0') => Some(0.0),
                        _ => p.get(x).copied(),
                    })
                    .unwrap()
            };
            let slope = at(1.0) - at(0.0);
            assert!((slope - sc.scheme.reactions[0].signed_nu(c) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn omitted_parameters_are_reported() {
        let sc = instantiate(&extrapolation_templates()[3], 0).unwrap();
        match build_equations(&sc) {
            Err(PhysicsError::UnderSpecified(m)) => {
                assert!(m.contains("V"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn classification_detects_implicit_algebraics() {
        let v = |name: &str, kind| Variable {
            name: name.into(),
            kind,
            unit: unit("1"),
            modelica_type: None,
            start: None,
            description: String::new(),
        };
        let eq = |l: Expr, r: Expr| Equation {
            lhs: l,
            rhs: r,
            comment: String::new(),
            role: EquationRole::Constraint,
        };
        let unknowns = vec![v("x", VarKind::State), v("y", VarKind::Algebraic)];
        let explicit = vec![eq(Expr::der(s("x")), -s("y")), eq(s("y"), mul(n(2.0), s("x")))];
        assert_eq!(classify(&unknowns, &explicit), Classification::Ode);
        let implicit = vec![eq(Expr::der(s("x")), -s("y")), eq(add(s("x"), s("y")), n(1.0))];
        assert_eq!(classify(&unknowns, &implicit), Classification::Dae);
    }
}
