use std::collections::BTreeSet;

use super::report::{Category, Finding};
use crate::frontend::{EquationNode, ModelicaAst, SymbolTable};

/// Maximum bipartite matching by augmenting paths. `adj[e]` lists the
/// columns row `e` may be matched to. Returns the column matched to each row.
pub fn maximum_matching(adj: &[Vec<usize>], n_cols: usize) -> Vec<Option<usize>> {
    fn augment(
        e: usize,
        adj: &[Vec<usize>],
        seen: &mut [bool],
        col_owner: &mut [Option<usize>],
    ) -> bool {
        for &c in &adj[e] {
            if seen[c] {
                continue;
            }
            seen[c] = true;
            if col_owner[c].is_none_or(|o| augment(o, adj, seen, col_owner)) {
                col_owner[c] = Some(e);
                return true;
            }
        }
        false
    }
    let mut col_owner = vec![None; n_cols];
    for e in 0..adj.len() {
        let mut seen = vec![false; n_cols];
        augment(e, adj, &mut seen, &mut col_owner);
    }
    let mut row_match = vec![None; adj.len()];
    for (c, o) in col_owner.iter().enumerate() {
        if let Some(e) = o {
            row_match[*e] = Some(c);
        }
    }
    row_match
}

/// Unknowns an equation refers to; `der(x)` counts as `x`.
fn incidence(eq: &EquationNode, unknowns: &[&str]) -> Vec<usize> {
    let names: BTreeSet<String> = if eq.recovered {
        eq.idents.iter().map(|(n, _)| n.clone()).collect()
    } else {
        let mut s = eq.lhs.symbols();
        s.extend(eq.rhs.symbols());
        s
    };
    unknowns
        .iter()
        .enumerate()
        .filter(|(_, u)| names.contains(**u))
        .map(|(i, _)| i)
        .collect()
}

/// Structural singularity. With `U` unknowns, `E` equations and a maximum
/// matching `M`, reports `max(U, E) - M` findings: one per unknown left
/// unmatched when `U >= E`, else one per unmatched equation.
pub fn check_structure(ast: &ModelicaAst, table: &SymbolTable) -> Vec<Finding> {
    let unknowns: Vec<&str> = table.unknowns().map(|s| s.name.as_str()).collect();
    let adj: Vec<Vec<usize>> = ast.equations.iter().map(|e| incidence(e, &unknowns)).collect();
    let row_match = maximum_matching(&adj, unknowns.len());
    let matched: BTreeSet<usize> = row_match.iter().flatten().copied().collect();
    let (nu, ne, nm) = (unknowns.len(), ast.equations.len(), matched.len());
    let mut out = Vec::new();
    if nu >= ne {
        for (i, u) in unknowns.iter().enumerate() {
            if !matched.contains(&i) {
                let span = table.get(u).map(|s| s.span);
                out.push(Finding::new(
                    Category::Structural,
                    span,
                    format!("no equation determines `{u}` ({nu} unknowns, {ne} equations, matching of size {nm})"),
                ));
            }
        }
    } else {
        for (e, m) in ast.equations.iter().zip(&row_match) {
            if m.is_none() {
                out.push(Finding::new(
                    Category::Structural,
                    Some(e.span),
                    format!("equation has no unknown left to determine ({nu} unknowns, {ne} equations, matching of size {nm})"),
                ));
            }
        }
    }
    out
}
