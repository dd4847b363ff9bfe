use std::collections::HashMap;

use super::ast::{DeclKind, Diagnostic, ModelicaAst, Zone};
use super::lexer::Span;
use crate::expr::Expr;
use crate::units::{builtin_type_unit, registry, SymbolUnit, Unit};

/// Functions every model may call.
pub const BUILTIN_FUNCTIONS: &[&str] = &[
    "der", "exp", "log", "log10", "sqrt", "abs", "sin", "cos", "tan", "tanh", "min", "max",
];

/// Names available without a declaration.
pub const BUILTIN_NAMES: &[&str] = &["time", "true", "false"];

#[derive(Debug, Clone, PartialEq)]
pub struct SymbolInfo {
    pub name: String,
    pub kind: DeclKind,
    pub type_name: String,
    pub unit: SymbolUnit,
    /// Unit from a built-in type or a `unit` attribute.
    pub declared_unit: Option<Unit>,
    pub value: Option<Expr>,
    pub start: Option<Expr>,
    pub span: Span,
    pub value_span: Option<Span>,
    pub recovered: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Note {
    pub span: Span,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SymbolTable {
    pub symbols: Vec<SymbolInfo>,
    index: HashMap<String, usize>,
    pub notes: Vec<Note>,
    pub diagnostics: Vec<Diagnostic>,
}

impl SymbolTable {
    pub fn get(&self, name: &str) -> Option<&SymbolInfo> {
        self.index.get(name).map(|&i| &self.symbols[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name) || BUILTIN_NAMES.contains(&name)
    }

    pub fn parameters(&self) -> impl Iterator<Item = &SymbolInfo> {
        self.symbols.iter().filter(|s| s.kind.is_parameter())
    }

    pub fn unknowns(&self) -> impl Iterator<Item = &SymbolInfo> {
        self.symbols.iter().filter(|s| !s.kind.is_parameter())
    }

    pub fn unit_of(&self, name: &str) -> Option<SymbolUnit> {
        if name == "time" {
            return Some(SymbolUnit::of_unit(&crate::units::unit("s")));
        }
        self.get(name).map(|s| s.unit)
    }

    /// True when no symbol carries a concrete unit, so unit checks are vacuous.
    pub fn all_wildcard(&self) -> bool {
        self.symbols.iter().all(|s| s.unit.dimension.is_wildcard())
    }

    /// Numeric parameter values, evaluating bindings that refer to other
    /// parameters.
    pub fn parameter_values(&self) -> HashMap<String, f64> {
        let mut values: HashMap<String, f64> = HashMap::new();
        loop {
            let before = values.len();
            for s in self.parameters() {
                if values.contains_key(&s.name) {
                    continue;
                }
                if let Some(v) = &s.value {
                    if let Ok(x) = v.eval(&|n| values.get(n).copied()) {
                        if x.is_finite() {
                            values.insert(s.name.clone(), x);
                        }
                    }
                }
            }
            if values.len() == before {
                return values;
            }
        }
    }
}

/// Builds the symbol table. Built-in physical types and `unit` attributes
/// give concrete units; `Real` and unknown types are wildcards.
pub fn resolve(ast: &ModelicaAst) -> SymbolTable {
    let mut table = SymbolTable::default();
    for d in &ast.declarations {
        if table.index.contains_key(&d.name) {
            table.diagnostics.push(Diagnostic::new(
                d.span,
                Zone::Declaration,
                format!("duplicate declaration of `{}`", d.name),
            ));
            continue;
        }
        let mut declared_unit = None;
        if let Some(u) = d.unit_attribute() {
            match registry().lookup(u) {
                Ok(unit) => declared_unit = Some(unit),
                Err(_) => table.notes.push(Note {
                    span: d.span,
                    message: format!("unit \"{u}\" of `{}` is not recognized; left unchecked", d.name),
                }),
            }
        }
        if declared_unit.is_none() {
            declared_unit = builtin_type_unit(&d.type_name);
            let last = d.type_name.rsplit('.').next().unwrap_or(&d.type_name);
            if declared_unit.is_none() && !matches!(last, "Real" | "Integer" | "Boolean") {
                table.notes.push(Note {
                    span: d.span,
                    message: format!("unknown type `{}` for `{}`; treated as dimension-free", d.type_name, d.name),
                });
            }
        }
        let unit = declared_unit
            .as_ref()
            .map(SymbolUnit::of_unit)
            .unwrap_or_else(SymbolUnit::wildcard);
        table.index.insert(d.name.clone(), table.symbols.len());
        table.symbols.push(SymbolInfo {
            name: d.name.clone(),
            kind: d.kind,
            type_name: d.type_name.clone(),
            unit,
            declared_unit,
            value: d.value.clone(),
            start: d.start().cloned(),
            span: d.span,
            value_span: d.value_span,
            recovered: d.recovered,
        });
    }
    table
}
