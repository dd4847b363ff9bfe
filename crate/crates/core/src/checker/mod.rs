//! Automated counting of the eight error categories in a candidate Modelica
//! model, judged against its scenario and a simulated reference solution.

pub mod equations;
pub mod mutate;
pub mod names;
pub mod report;
pub mod structure;
pub mod values;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use equations::check_equations;
pub use report::{tabulate, Category, Counts, ErrorReport, Finding, Table, TableRow};
pub use structure::{check_structure, maximum_matching};
pub use values::check_parameter_values;

use crate::expr::Expr;
use crate::frontend::resolve::BUILTIN_FUNCTIONS;
use crate::frontend::{parse, resolve, ModelicaAst, Span, SymbolTable, Zone};
use crate::physics::{build_equations, EquationSystem, PhysicsError, GAS_CONSTANT};
use crate::scenario::ReactorScenario;
use crate::simulate::{default_horizon, simulate, SimError, Trajectory, DEFAULT_STEPS};
use crate::units::{unit, Dimension, SymbolUnit};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Relative tolerance for parameter values.
    pub value_rtol: f64,
    /// Largest accepted normalized equation residual.
    pub residual: f64,
    /// Trajectory rows at which equations are evaluated.
    pub sample_rows: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            value_rtol: 1e-6,
            residual: 1e-4,
            sample_rows: 64,
        }
    }
}

#[derive(Debug, Error)]
pub enum ContextError {
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error("reference simulation failed: {0}")]
    Simulation(#[from] SimError),
}

/// Everything a check needs about the source scenario. Scenarios with
/// omitted parameters have no reference system or trajectory.
#[derive(Debug, Clone)]
pub struct CheckContext {
    pub scenario: ReactorScenario,
    pub system: Option<EquationSystem>,
    pub trajectory: Option<Trajectory>,
    pub tolerances: Tolerances,
}

impl CheckContext {
    pub fn new(scenario: ReactorScenario) -> Result<Self, ContextError> {
        Self::with_tolerances(scenario, Tolerances::default())
    }

    /// Builds the reference system and simulates it over ten residence times.
    pub fn with_tolerances(scenario: ReactorScenario, tolerances: Tolerances) -> Result<Self, ContextError> {
        let (system, trajectory) = match build_equations(&scenario) {
            Ok(sys) => {
                let t_end = default_horizon(&sys).unwrap_or(1.0);
                let tr = simulate(&sys, t_end, DEFAULT_STEPS)?;
                (Some(sys), Some(tr))
            }
            Err(PhysicsError::UnderSpecified(_)) => (None, None),
            Err(e) => return Err(e.into()),
        };
        Ok(CheckContext {
            scenario,
            system,
            trajectory,
            tolerances,
        })
    }
}

/// Names from the Modelica standard library accepted without declaration.
pub fn library_constant(name: &str) -> Option<(f64, SymbolUnit)> {
    let free = SymbolUnit::of_dimension(Dimension::dimensionless());
    match name {
        "Modelica.Constants.R" => Some((GAS_CONSTANT, SymbolUnit::of_unit(&unit("J/(mol.K)")))),
        "Modelica.Constants.pi" => Some((std::f64::consts::PI, free)),
        "Modelica.Constants.e" => Some((std::f64::consts::E, free)),
        _ => None,
    }
}

/// The code to check: the first fenced block when the text has one, else
/// the whole text. Returns the code and its byte offset.
pub fn extract_code(text: &str) -> (&str, usize) {
    let Some(open) = text.find("```") else {
        return (text, 0);
    };
    let start = text[open..].find('\n').map_or(text.len(), |n| open + n + 1);
    let end = text[start..].find("```").map_or(text.len(), |e| start + e);
    (&text[start..end], start)
}

fn known(table: &SymbolTable, name: &str) -> bool {
    table.contains(name) || library_constant(name).is_some()
}

/// Category 4: one finding per undeclared name or unknown function, at its
/// first use. Also returns the equations that use such names.
pub fn check_undefined(ast: &ModelicaAst, table: &SymbolTable) -> (Vec<Finding>, BTreeSet<usize>) {
    let mut findings = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut tainted = BTreeSet::new();
    let mut report = |name: &str, span: Span, what: &str, seen: &mut BTreeSet<String>| {
        if seen.insert(name.to_string()) {
            findings.push(Finding::new(
                Category::UndefinedVariable,
                Some(span),
                format!("{what} `{name}` is used but never declared"),
            ));
        }
    };
    let calls = |e: &Expr| {
        let mut out = Vec::new();
        e.visit(&mut |x| {
            if let Expr::Call(n, _) = x {
                if !BUILTIN_FUNCTIONS.contains(&n.as_str()) {
                    out.push(n.clone());
                }
            }
        });
        out
    };
    for d in &ast.declarations {
        let mut exprs: Vec<&Expr> = d.value.iter().collect();
        exprs.extend(d.modifiers.iter().filter_map(|m| match &m.value {
            crate::frontend::ModValue::Expr(e) => Some(e),
            _ => None,
        }));
        for e in exprs {
            let span = d.value_span.unwrap_or(d.span);
            for s in e.symbols() {
                if !known(table, &s) {
                    report(&s, span, "variable", &mut seen);
                }
            }
            for c in calls(e) {
                report(&c, span, "function", &mut seen);
            }
        }
    }
    let all = ast.equations.iter().enumerate().chain(
        ast.initial_equations
            .iter()
            .enumerate()
            .map(|(i, e)| (usize::MAX - i, e)),
    );
    for (i, e) in all {
        let mut bad = false;
        for (n, span) in &e.idents {
            if !known(table, n) {
                bad = true;
                report(n, *span, "variable", &mut seen);
            }
        }
        for c in calls(&e.lhs).into_iter().chain(calls(&e.rhs)) {
            bad = true;
            report(&c, e.span, "function", &mut seen);
        }
        if bad && i < ast.equations.len() {
            tainted.insert(i);
        }
    }
    (findings, tainted)
}

/// Category 7: one finding per equation whose sides or terms do not unify.
/// Returns findings, notes and the failing equations.
pub fn check_units(
    ast: &ModelicaAst,
    table: &SymbolTable,
    skip: &BTreeSet<usize>,
) -> (Vec<Finding>, Vec<String>, BTreeSet<usize>) {
    let mut findings = Vec::new();
    let mut notes = Vec::new();
    let mut failed = BTreeSet::new();
    if table.all_wildcard() {
        notes.push("every symbol is an untyped Real; unit consistency is unchecked".into());
    }
    let env = |n: &str| table.unit_of(n).or_else(|| library_constant(n).map(|c| c.1));
    for (i, e) in ast.equations.iter().enumerate() {
        if skip.contains(&i) || e.recovered {
            continue;
        }
        match crate::units::check_equation(&e.lhs, &e.rhs, &env) {
            Ok(_) => {}
            Err(crate::units::UnitConflict::Unbound(n)) => {
                notes.push(format!("`{n}` has no unit; equation left unchecked"));
            }
            Err(c) => {
                failed.insert(i);
                findings.push(Finding::new(Category::UnitConflict, Some(e.span), c.to_string()));
            }
        }
    }
    (findings, notes, failed)
}

/// Order in which a span claimed by several categories is attributed.
const SPAN_PRECEDENCE: [Category; 8] = [
    Category::GeneralSyntax,
    Category::DeclarationSyntax,
    Category::UndefinedVariable,
    Category::UnitConversion,
    Category::IncorrectValue,
    Category::UnitConflict,
    Category::IncorrectEquation,
    Category::Structural,
];

/// Keeps one finding per source span, by category precedence.
fn dedupe_spans(findings: Vec<Finding>) -> Vec<Finding> {
    let rank = |c: Category| SPAN_PRECEDENCE.iter().position(|x| *x == c).unwrap_or(8);
    let mut best: HashMap<Span, usize> = HashMap::new();
    for f in &findings {
        if let Some(s) = f.span {
            let r = rank(f.category);
            best.entry(s).and_modify(|b| *b = (*b).min(r)).or_insert(r);
        }
    }
    let mut kept: BTreeSet<Span> = BTreeSet::new();
    findings
        .into_iter()
        .filter(|f| match f.span {
            None => true,
            Some(s) => best[&s] == rank(f.category) && kept.insert(s),
        })
        .collect()
}

/// Checks candidate text against its scenario. Spans in the report refer to
/// `source`.
pub fn check(source: &str, ctx: &CheckContext) -> ErrorReport {
    let (code, offset) = extract_code(source);
    let ast = parse(code);
    let table = resolve(&ast);
    let mut findings = Vec::new();
    let mut notes: Vec<String> = table.notes.iter().map(|n| n.message.clone()).collect();
    for d in ast.diagnostics.iter().chain(&table.diagnostics) {
        let cat = match d.zone {
            Zone::Declaration => Category::DeclarationSyntax,
            Zone::General => Category::GeneralSyntax,
        };
        findings.push(Finding::new(cat, Some(d.span), d.message.clone()));
    }
    let (undefined, tainted) = check_undefined(&ast, &table);
    findings.extend(undefined);
    let (f, n) = check_parameter_values(&table, &ctx.scenario, ctx.tolerances.value_rtol);
    findings.extend(f);
    notes.extend(n);
    let (f, n, unit_failed) = check_units(&ast, &table, &tainted);
    findings.extend(f);
    notes.extend(n);
    let skip: BTreeSet<usize> = tainted.union(&unit_failed).copied().collect();
    let (f, n) = check_equations(&ast, &table, ctx, &skip);
    findings.extend(f);
    notes.extend(n);
    findings.extend(check_structure(&ast, &table));
    let mut findings = dedupe_spans(findings);
    for f in &mut findings {
        if let Some(s) = &mut f.span {
            *s = Span::new(s.start + offset, s.end + offset);
        }
    }
    notes.dedup();
    ErrorReport::from_findings(findings, notes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::resolve::BUILTIN_NAMES;

    #[test]
    fn fenced_block_is_extracted() {
        let text = "Here is the model:\n```modelica\nmodel M\nend M;\n```\nDone.";
        let (code, off) = extract_code(text);
        assert_eq!(code, "model M\nend M;\n");
        assert_eq!(&text[off..off + 5], "model");
        assert_eq!(extract_code("model M\nend M;\n"), ("model M\nend M;\n", 0));
        let (code, _) = extract_code("```\nmodel M\nend M;");
        assert_eq!(code, "model M\nend M;");
    }

    #[test]
    fn builtin_names_are_known() {
        let t = SymbolTable::default();
        for n in BUILTIN_NAMES {
            assert!(known(&t, n));
        }
        assert!(known(&t, "Modelica.Constants.R"));
        assert!(!known(&t, "k2"));
    }

    #[test]
    fn undeclared_names_are_reported_once() {
        let ast = parse("model M\n  Real x(start=x0);\nequation\n  der(x) = -k2 * x + k2;\n  y = foo(x);\nend M;\n");
        let table = resolve(&ast);
        let (f, tainted) = check_undefined(&ast, &table);
        let names: Vec<&str> = f.iter().map(|f| f.explanation.as_str()).collect();
        assert_eq!(f.len(), 4, "{names:?}");
        assert_eq!(tainted, BTreeSet::from([0, 1]));
    }

    #[test]
    fn spans_are_counted_once() {
        let s = Span::new(1, 4);
        let f = dedupe_spans(vec![
            Finding::new(Category::IncorrectEquation, Some(s), ""),
            Finding::new(Category::UnitConflict, Some(s), ""),
            Finding::new(Category::Structural, None, ""),
        ]);
        assert_eq!(f.len(), 2);
        assert_eq!(f[0].category, Category::UnitConflict);
    }
}
