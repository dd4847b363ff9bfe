use super::names::match_names;
use super::report::{Category, Finding};
use crate::frontend::SymbolTable;
use crate::physics::si_quantity;
use crate::scenario::{Parameter, ReactorScenario};
use crate::units::{registry, Unit};

pub fn close(a: f64, b: f64, rtol: f64) -> bool {
    a == b || (a - b).abs() <= rtol * a.abs().max(b.abs())
}

fn same_unit(a: &Unit, b: &Unit) -> bool {
    a.dimension == b.dimension && close(a.scale, b.scale, 1e-12) && a.offset == b.offset
}

/// Values a careless conversion of `p` could produce, expressed in the
/// declared unit `du`, each with a description of the mistake.
pub fn wrong_conversions(p: &Parameter, du: &Unit) -> Vec<(f64, String)> {
    let v = p.quantity.value;
    let pu = &p.quantity.unit;
    let si = p.quantity.si_value();
    let mut out = Vec::new();
    if !same_unit(pu, du) {
        out.push((v, format!("prompt magnitude {v} {} copied without conversion to {}", pu.symbol, du.symbol)));
    }
    let mut units: Vec<Unit> = p
        .kind
        .unit_choices()
        .iter()
        .filter_map(|s| registry().lookup(s).ok())
        .collect();
    units.push(pu.clone());
    for u in &units {
        if !same_unit(u, du) {
            out.push((u.from_si(si), format!("value converted to {} instead of {}", u.symbol, du.symbol)));
        }
        if !same_unit(u, pu) && u.dimension == pu.dimension {
            out.push((
                du.from_si(u.to_si(v)),
                format!("prompt value {v} read as {} instead of {}", u.symbol, pu.symbol),
            ));
        }
    }
    if pu.offset != 0.0 || du.offset != 0.0 {
        out.push((du.from_si(v * pu.scale), "temperature offset dropped".to_string()));
        out.push((du.from_si(v * pu.scale - pu.offset), "temperature offset applied with the wrong sign".to_string()));
    }
    let ratio = pu.scale / du.scale;
    if !close(ratio, 1.0, 1e-12) {
        out.push((v / ratio, format!("conversion factor {ratio} divided instead of multiplied")));
    }
    out
}

/// Categories 1 and 3 for declared parameters matched to prompt quantities.
/// Returns findings and notes.
pub fn check_parameter_values(
    table: &SymbolTable,
    scenario: &ReactorScenario,
    rtol: f64,
) -> (Vec<Finding>, Vec<String>) {
    let mut findings = Vec::new();
    let mut notes = Vec::new();
    let params: Vec<_> = table.parameters().filter(|s| !s.recovered).collect();
    let cand: Vec<&str> = params.iter().map(|s| s.name.as_str()).collect();
    let mut refs: Vec<&str> = scenario.parameters.iter().map(|p| p.name.as_str()).collect();
    refs.extend(scenario.omitted_parameters.iter().map(String::as_str));
    let pairs = match_names(&cand, &refs);
    let values = table.parameter_values();
    for s in params {
        let Some(r) = pairs.get(s.name.as_str()) else {
            notes.push(format!("`{}` has no counterpart in the question; value not checked", s.name));
            continue;
        };
        let span = Some(s.value_span.unwrap_or(s.span));
        let Some(&x) = values.get(&s.name) else {
            if s.value.is_some() {
                notes.push(format!("value of `{}` could not be evaluated", s.name));
            }
            continue;
        };
        let Some(p) = scenario.parameter(r) else {
            findings.push(Finding::new(
                Category::IncorrectValue,
                span,
                format!("`{}` = {x} is not given in the question; the value is invented", s.name),
            ));
            continue;
        };
        let si = p.kind.si_unit();
        let du = match &s.declared_unit {
            Some(u) if u.dimension == si.dimension => u.clone(),
            Some(u) => {
                notes.push(format!(
                    "`{}` is declared in {} but the question gives a {} quantity",
                    s.name, u.symbol, si.dimension
                ));
                si.clone()
            }
            None => si.clone(),
        };
        let expected = si_quantity(&p.quantity, &si).value;
        let x_si = du.to_si(x);
        if close(x_si, expected, rtol) || close(x_si, p.quantity.si_value(), rtol) {
            continue;
        }
        let correct = du.from_si(p.quantity.si_value());
        match wrong_conversions(p, &du).into_iter().find(|(w, _)| close(x, *w, rtol)) {
            Some((_, why)) => findings.push(Finding::new(
                Category::UnitConversion,
                span,
                format!("`{}` = {x}, expected {correct} {}: {why}", s.name, du.symbol),
            )),
            None => findings.push(Finding::new(
                Category::IncorrectValue,
                span,
                format!(
                    "`{}` = {x} does not follow from the given {} {} (expected {correct} {})",
                    s.name, p.quantity.value, p.quantity.unit.symbol, du.symbol
                ),
            )),
        }
    }
    (findings, notes)
}
