//! Canonical pretty printer. Parsing its output yields an equal AST.

use std::fmt::Write;

use super::ast::{DeclKind, Declaration, EquationNode, ModValue, ModelicaAst};

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

fn comment(c: &Option<String>) -> String {
    match c {
        Some(c) if c.is_empty() => " //".into(),
        Some(c) => format!(" // {c}"),
        None => String::new(),
    }
}

pub fn print_declaration(d: &Declaration) -> String {
    let mut s = String::new();
    match d.kind {
        DeclKind::Parameter => s.push_str("parameter "),
        DeclKind::Constant => s.push_str("constant "),
        DeclKind::Variable => {}
    }
    s.push_str(&d.type_name);
    s.push(' ');
    s.push_str(&d.name);
    if !d.modifiers.is_empty() {
        let mods: Vec<String> = d
            .modifiers
            .iter()
            .map(|m| match &m.value {
                ModValue::Expr(e) => format!("{}={e}", m.name),
                ModValue::Str(v) => format!("{}={}", m.name, quote(v)),
            })
            .collect();
        let _ = write!(s, "({})", mods.join(", "));
    }
    if let Some(v) = &d.value {
        let _ = write!(s, " = {v}");
    }
    if let Some(desc) = &d.description {
        let _ = write!(s, " {}", quote(desc));
    }
    s.push(';');
    s.push_str(&comment(&d.comment));
    s
}

pub fn print_equation(e: &EquationNode) -> String {
    let mut s = format!("{} = {}", e.lhs, e.rhs);
    if let Some(desc) = &e.description {
        let _ = write!(s, " {}", quote(desc));
    }
    s.push(';');
    s.push_str(&comment(&e.comment));
    s
}

pub fn print(ast: &ModelicaAst) -> String {
    let mut out = String::new();
    out.push_str("model ");
    out.push_str(&ast.name);
    if let Some(desc) = &ast.description {
        let _ = write!(out, " {}", quote(desc));
    }
    out.push_str(&comment(&ast.comment));
    out.push('\n');
    for d in &ast.declarations {
        let _ = writeln!(out, "  {}", print_declaration(d));
    }
    if !ast.equations.is_empty() || ast.equation_comment.is_some() {
        out.push_str("equation");
        out.push_str(&comment(&ast.equation_comment));
        out.push('\n');
        for e in &ast.equations {
            let _ = writeln!(out, "  {}", print_equation(e));
        }
    }
    if !ast.initial_equations.is_empty() {
        out.push_str("initial equation\n");
        for e in &ast.initial_equations {
            let _ = writeln!(out, "  {}", print_equation(e));
        }
    }
    let _ = writeln!(out, "end {};{}", ast.name, comment(&ast.end_comment));
    out
}
