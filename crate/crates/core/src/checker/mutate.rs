//! Single-fault mutation operators, one per error category, applied to
//! reference answers.

use super::report::Category;
use super::values::{close, wrong_conversions};
use crate::expr::{format_number, BinOp, Expr};
use crate::frontend::{parse, print, ModValue, Modifier};
use crate::physics::si_quantity;
use crate::scenario::ReactorScenario;
use crate::units::unit;

/// Categories a mutation of `target` may also trigger through a documented
/// cause. Anything else counts as leakage.
pub fn causal_links(target: Category) -> &'static [Category] {
    match target {
        // an undeclared name blocks evaluation and may hide a structural role
        Category::UndefinedVariable => &[Category::IncorrectEquation, Category::UnitConflict, Category::Structural],
        // a dropped declaration leaves its uses undeclared
        Category::DeclarationSyntax => &[Category::UndefinedVariable, Category::Structural],
        // an unparsed region hides declarations or equations
        Category::GeneralSyntax => &[Category::UndefinedVariable, Category::Structural],
        _ => &[],
    }
}

/// Applies the operator for `category` to a reference answer. `None` when
/// the answer offers no site for it.
pub fn mutate(category: Category, answer: &str, scenario: &ReactorScenario) -> Option<String> {
    match category {
        Category::UnitConversion => unconverted_value(answer, scenario),
        Category::DeclarationSyntax => start_as_statement(answer),
        Category::IncorrectValue => wrong_value(answer, scenario),
        Category::UndefinedVariable => undeclared_use(answer),
        Category::IncorrectEquation => flipped_reaction_sign(answer),
        Category::Structural => dropped_equation(answer),
        Category::UnitConflict => litre_concentration(answer, scenario),
        Category::GeneralSyntax => missing_end(answer),
    }
}

fn set_value(answer: &str, name: &str, v: f64) -> Option<String> {
    let mut ast = parse(answer);
    let d = ast.declarations.iter_mut().find(|d| d.name == name)?;
    d.value = Some(Expr::num(v));
    Some(print(&ast))
}

/// A prompt quantity declared with its raw prompt magnitude, or converted
/// to a wrong unit when every quantity is already in SI.
fn unconverted_value(answer: &str, s: &ReactorScenario) -> Option<String> {
    for p in &s.parameters {
        let si = p.kind.si_unit();
        let expected = si_quantity(&p.quantity, &si).value;
        if !close(p.quantity.value, expected, 1e-3) {
            return set_value(answer, &p.name, p.quantity.value);
        }
    }
    for p in &s.parameters {
        let si = p.kind.si_unit();
        let expected = si_quantity(&p.quantity, &si).value;
        let wrong = p
            .kind
            .unit_choices()
            .iter()
            .map(|u| unit(u).from_si(p.quantity.si_value()))
            .find(|w| !close(*w, expected, 1e-3));
        if let Some(w) = wrong {
            return set_value(answer, &p.name, w);
        }
    }
    None
}

/// `cA(start=cA0)` rewritten as a plain declaration followed by an
/// `initial cA = cA0;` statement in the declaration section.
fn start_as_statement(answer: &str) -> Option<String> {
    let mut out = Vec::new();
    let mut done = false;
    for line in answer.lines() {
        if !done {
            if let Some((head, rest)) = line.split_once("(start=") {
                if let Some((start, tail)) = rest.split_once(");") {
                    let name = head.split_whitespace().last()?;
                    out.push(format!("{head};{tail}"));
                    out.push(format!("  initial {name} = {start};"));
                    done = true;
                    continue;
                }
            }
        }
        out.push(line.to_string());
    }
    done.then(|| out.join("\n") + "\n")
}

/// A parameter value scaled by a factor no unit conversion explains.
fn wrong_value(answer: &str, s: &ReactorScenario) -> Option<String> {
    for p in &s.parameters {
        let si = p.kind.si_unit();
        let expected = si_quantity(&p.quantity, &si).value;
        if expected == 0.0 {
            continue;
        }
        let conversions = wrong_conversions(p, &si);
        for factor in [1.37, 0.61, 2.9, 1.13] {
            let v: f64 = format_number(expected * factor).parse().ok()?;
            if !conversions.iter().any(|(w, _)| close(v, *w, 1e-6)) {
                return set_value(answer, &p.name, v);
            }
        }
    }
    None
}

/// The first parameter used in an equation is renamed there, leaving the
/// new name undeclared.
fn undeclared_use(answer: &str) -> Option<String> {
    let mut ast = parse(answer);
    let params: Vec<String> = ast
        .declarations
        .iter()
        .filter(|d| d.kind.is_parameter())
        .map(|d| d.name.clone())
        .collect();
    for e in &mut ast.equations {
        let used = e.rhs.symbols();
        if let Some(p) = params.iter().find(|p| used.contains(*p)) {
            let mut fresh = format!("{p}_val");
            while ast.declarations.iter().any(|d| d.name == fresh) {
                fresh.push('_');
            }
            e.rhs = e.rhs.rename(p, &fresh);
            return Some(print(&ast));
        }
    }
    None
}

fn is_rate(name: &str) -> bool {
    name.len() > 1 && name.starts_with('r') && name[1..].chars().all(|c| c.is_ascii_digit())
}

/// Flips the sign of the reaction term in the additive chain `e`.
fn flip_rate_term(e: &Expr) -> Option<Expr> {
    let has_rate = |x: &Expr| x.symbols().iter().any(|s| is_rate(s));
    match e {
        Expr::Bin(op @ (BinOp::Add | BinOp::Sub), a, b) => {
            if has_rate(b) {
                let flipped = if *op == BinOp::Add { BinOp::Sub } else { BinOp::Add };
                Some(Expr::Bin(flipped, a.clone(), b.clone()))
            } else {
                Some(Expr::Bin(*op, Box::new(flip_rate_term(a)?), b.clone()))
            }
        }
        other if has_rate(other) => Some(-other.clone()),
        _ => None,
    }
}

/// The reaction term of the first balance changes sign.
fn flipped_reaction_sign(answer: &str) -> Option<String> {
    let mut ast = parse(answer);
    let e = ast
        .equations
        .iter_mut()
        .find(|e| e.lhs.contains_der() && e.rhs.symbols().iter().any(|s| is_rate(s)))?;
    e.rhs = flip_rate_term(&e.rhs)?;
    Some(print(&ast))
}

/// The last equation is removed.
fn dropped_equation(answer: &str) -> Option<String> {
    let mut ast = parse(answer);
    ast.equations.pop()?;
    Some(print(&ast))
}

/// An inlet concentration declared in mol/L, with the value converted
/// correctly, so the balances mix litre- and cubic-metre-based terms.
fn litre_concentration(answer: &str, s: &ReactorScenario) -> Option<String> {
    let mut ast = parse(answer);
    let p = s
        .parameters
        .iter()
        .filter(|p| p.name.ends_with("_in") && p.name.starts_with('c'))
        .find(|p| p.quantity.value != 0.0)?;
    let litre = unit("mol/L");
    let v: f64 = format_number(litre.from_si(p.quantity.si_value())).parse().ok()?;
    let d = ast.declarations.iter_mut().find(|d| d.name == p.name)?;
    d.type_name = "Real".into();
    d.modifiers = vec![Modifier {
        name: "unit".into(),
        value: ModValue::Str(litre.symbol.clone()),
    }];
    d.value = Some(Expr::num(v));
    Some(print(&ast))
}

/// The closing `end CSTR;` line is removed.
fn missing_end(answer: &str) -> Option<String> {
    let lines: Vec<&str> = answer.lines().collect();
    let last = lines.iter().rposition(|l| l.trim_start().starts_with("end "))?;
    let mut out: Vec<&str> = lines[..last].to_vec();
    out.extend(&lines[last + 1..]);
    Some(out.join("\n") + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reaction_sign_flip_on_a_chain() {
        let e = crate::frontend::parse("model M\nequation\n  der(cA) = q / V * (cA_in - cA) - 2 * r1;\nend M;\n");
        let f = flip_rate_term(&e.equations[0].rhs).unwrap();
        assert_eq!(f.to_string(), "q / V * (cA_in - cA) + 2 * r1");
        assert!(flip_rate_term(&Expr::sym("x")).is_none());
        assert!(is_rate("r12") && !is_rate("rho") && !is_rate("r"));
    }

    #[test]
    fn missing_end_drops_one_line() {
        let m = missing_end("model M\n  Real x;\nequation\n  x = 1;\nend M; // done\n").unwrap();
        assert_eq!(m, "model M\n  Real x;\nequation\n  x = 1;\n");
    }

    #[test]
    fn start_becomes_a_statement() {
        let m = start_as_statement("model M\n  Concentration cA(start=cA0); // state\nend M;\n").unwrap();
        assert_eq!(m, "model M\n  Concentration cA; // state\n  initial cA = cA0;\nend M;\n");
    }
}
