use std::collections::{BTreeSet, HashMap};

use super::names::{fold, match_names};
use super::report::{Category, Finding};
use super::{library_constant, CheckContext};
use crate::expr::{Dual, Expr};
use crate::frontend::{ModelicaAst, SymbolTable};
use crate::physics::normalized;

#[derive(Debug, Clone, Copy)]
enum Source {
    Column(usize),
    Const(f64),
    /// Defined by an explicit candidate equation `x = f(...)`.
    Helper(usize),
}

/// Evenly spaced rows from the first consistent one to the last.
pub fn sample_rows(first: usize, n_rows: usize, k: usize) -> Vec<usize> {
    if n_rows <= first {
        return Vec::new();
    }
    let span = n_rows - 1 - first;
    if k <= 1 || span == 0 {
        return vec![n_rows - 1];
    }
    let mut rows: Vec<usize> = (0..k).map(|i| first + (i * span + (k - 1) / 2) / (k - 1)).collect();
    rows.dedup();
    rows
}

fn is_heat_exchange_name(name: &str) -> bool {
    matches!(fold(name).as_str(), "ua" | "tcool" | "tcoolant" | "tc" | "tj" | "tjacket" | "qdot" | "qcool")
}

/// Category 5: equations evaluated along the reference trajectory, plus
/// screens for heat exchange against the requested mode. `skip` holds
/// equations already attributed to another category.
pub fn check_equations(
    ast: &ModelicaAst,
    table: &SymbolTable,
    ctx: &CheckContext,
    skip: &BTreeSet<usize>,
) -> (Vec<Finding>, Vec<String>) {
    let mut findings = Vec::new();
    let mut notes = Vec::new();
    let checked: Vec<usize> = (0..ast.equations.len())
        .filter(|i| !skip.contains(i) && !ast.equations[*i].recovered)
        .collect();
    let mut flagged: BTreeSet<usize> = BTreeSet::new();

    if let (Some(sys), Some(tr)) = (&ctx.system, &ctx.trajectory) {
        let mut refs: Vec<&str> = sys.unknowns.iter().map(|v| v.name.as_str()).collect();
        refs.extend(sys.parameters.iter().map(|p| p.name.as_str()));
        let cand: Vec<&str> = table.symbols.iter().map(|s| s.name.as_str()).collect();
        let pairs = match_names(&cand, &refs);
        let values = table.parameter_values();
        let mut sources: HashMap<String, Source> = HashMap::new();
        let mut open: Vec<&str> = Vec::new();
        for s in &table.symbols {
            let src = match pairs.get(s.name.as_str()) {
                Some(r) => match tr.column_index(r) {
                    Some(j) => Some(Source::Column(j)),
                    None => sys.parameter(r).map(|p| Source::Const(p.quantity.value)),
                },
                None if s.kind.is_parameter() => values.get(&s.name).map(|v| Source::Const(*v)),
                None => None,
            };
            match src {
                Some(src) => {
                    sources.insert(s.name.clone(), src);
                }
                None if !s.kind.is_parameter() => open.push(&s.name),
                None => {}
            }
        }
        // unmatched unknowns with an explicit definition become helpers
        let mut helpers: Vec<(String, usize, Expr)> = Vec::new();
        for u in open {
            let def = checked.iter().find_map(|&i| {
                let e = &ast.equations[i];
                match (&e.lhs, &e.rhs) {
                    (Expr::Sym(s), rhs) if s == u && !rhs.symbols().contains(u) => Some((i, rhs.clone())),
                    (lhs, Expr::Sym(s)) if s == u && !lhs.symbols().contains(u) => Some((i, lhs.clone())),
                    _ => None,
                }
            });
            if let Some((i, rhs)) = def {
                sources.insert(u.to_string(), Source::Helper(helpers.len()));
                helpers.push((u.to_string(), i, rhs));
            } else {
                notes.push(format!("`{u}` has no counterpart in the reference model; equations using it are not evaluated"));
            }
        }
        let helper_eqs: BTreeSet<usize> = helpers.iter().map(|h| h.1).collect();

        let rows = sample_rows(tr.first_consistent, tr.times.len(), ctx.tolerances.sample_rows);
        let mut worst: HashMap<usize, (f64, f64)> = HashMap::new();
        let mut blocked: BTreeSet<usize> = BTreeSet::new();
        for &row in &rows {
            let t = tr.times[row];
            let mut helper_vals: Vec<Option<Dual>> = vec![None; helpers.len()];
            let lookup = |name: &str, hv: &[Option<Dual>]| -> Option<Dual> {
                if name == "time" {
                    return Some(Dual::new(t, 1.0));
                }
                match sources.get(name) {
                    Some(Source::Column(j)) => Some(Dual::new(tr.values[row][*j], tr.derivatives[row][*j])),
                    Some(Source::Const(v)) => Some(Dual::constant(*v)),
                    Some(Source::Helper(h)) => hv[*h],
                    None => library_constant(name).map(|(v, _)| Dual::constant(v)),
                }
            };
            loop {
                let mut progress = false;
                for (h, (_, _, rhs)) in helpers.iter().enumerate() {
                    if helper_vals[h].is_none() {
                        if let Ok(d) = rhs.eval_dual(&|n| lookup(n, &helper_vals)) {
                            helper_vals[h] = Some(d);
                            progress = true;
                        }
                    }
                }
                if !progress {
                    break;
                }
            }
            for &i in &checked {
                if helper_eqs.contains(&i) || blocked.contains(&i) {
                    continue;
                }
                let e = &ast.equations[i];
                let env = |n: &str| lookup(n, &helper_vals);
                match (e.lhs.eval_dual(&env), e.rhs.eval_dual(&env)) {
                    (Ok(l), Ok(r)) => {
                        let res = normalized(l.value, r.value);
                        if !res.is_finite() {
                            blocked.insert(i);
                            continue;
                        }
                        let w = worst.entry(i).or_insert((0.0, t));
                        if res > w.0 {
                            *w = (res, t);
                        }
                    }
                    (Err(err), _) | (_, Err(err)) => {
                        notes.push(format!("`{} = {}` not evaluated: {err}", e.lhs, e.rhs));
                        blocked.insert(i);
                    }
                }
            }
        }
        for &i in &checked {
            if blocked.contains(&i) {
                worst.remove(&i);
            }
        }
        let mut keys: Vec<usize> = worst.keys().copied().collect();
        keys.sort_unstable();
        for i in keys {
            let (res, t) = worst[&i];
            if res > ctx.tolerances.residual {
                flagged.insert(i);
                findings.push(Finding::new(
                    Category::IncorrectEquation,
                    Some(ast.equations[i].span),
                    format!(
                        "violated by the reference solution: normalized residual {res:.3e} at t = {t:.6e} s (tolerance {:.0e})",
                        ctx.tolerances.residual
                    ),
                ));
            }
        }
    } else {
        notes.push("no reference solution for this scenario; equations are not evaluated".into());
    }

    // heat exchange against the requested mode
    let uses_heat = |i: &usize| {
        let e = &ast.equations[*i];
        e.lhs.symbols().iter().chain(e.rhs.symbols().iter()).any(|s| is_heat_exchange_name(s))
    };
    if ctx.scenario.mode.adiabatic {
        for i in checked.iter().filter(|i| uses_heat(i)) {
            if flagged.insert(*i) {
                findings.push(Finding::new(
                    Category::IncorrectEquation,
                    Some(ast.equations[*i].span),
                    "heat exchange with a coolant although the reactor is adiabatic",
                ));
            }
        }
    } else if !(0..ast.equations.len()).any(|i| uses_heat(&i))
        && !table.symbols.iter().any(|s| is_heat_exchange_name(&s.name))
    {
        let energy = checked.iter().copied().find(|i| {
            let e = &ast.equations[*i];
            let mut d = e.lhs.differentiated_symbols();
            d.extend(e.rhs.differentiated_symbols());
            d.iter().any(|s| fold(s) == "t")
        });
        if energy.is_none_or(|i| flagged.insert(i)) {
            findings.push(Finding::new(
                Category::IncorrectEquation,
                energy.map(|i| ast.equations[i].span),
                "the reactor exchanges heat with a coolant but no equation contains a heat transfer term",
            ));
        }
    }
    (findings, notes)
}
