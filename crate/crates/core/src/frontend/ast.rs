use std::fmt;

use serde::{Deserialize, Serialize};

use super::lexer::{line_col, Span};
use crate::expr::Expr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Zone {
    /// Inside the declaration section, before `equation`.
    Declaration,
    General,
}

impl Zone {
    pub fn label(&self) -> &'static str {
        match self {
            Zone::Declaration => "declaration-syntax",
            Zone::General => "syntax",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub span: Span,
    pub zone: Zone,
    pub message: String,
}

impl Diagnostic {
    pub fn new(span: Span, zone: Zone, message: impl Into<String>) -> Self {
        Diagnostic {
            span,
            zone,
            message: message.into(),
        }
    }

    /// `file:line:col: category: message`
    pub fn render(&self, file: &str, src: &str) -> String {
        let (line, col) = line_col(src, self.span.start);
        format!("{file}:{line}:{col}: {}: {}", self.zone.label(), self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeclKind {
    Parameter,
    Constant,
    Variable,
}

impl DeclKind {
    pub fn is_parameter(&self) -> bool {
        matches!(self, DeclKind::Parameter | DeclKind::Constant)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModValue {
    Expr(Expr),
    Str(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Modifier {
    pub name: String,
    pub value: ModValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Declaration {
    pub kind: DeclKind,
    pub type_name: String,
    pub name: String,
    pub modifiers: Vec<Modifier>,
    pub value: Option<Expr>,
    pub description: Option<String>,
    pub comment: Option<String>,
    pub span: Span,
    /// Span of the binding value, when present.
    pub value_span: Option<Span>,
    /// Built from a malformed declaration; the name is still declared.
    pub recovered: bool,
}

impl Declaration {
    pub fn modifier(&self, name: &str) -> Option<&ModValue> {
        self.modifiers.iter().find(|m| m.name == name).map(|m| &m.value)
    }

    pub fn start(&self) -> Option<&Expr> {
        match self.modifier("start") {
            Some(ModValue::Expr(e)) => Some(e),
            _ => None,
        }
    }

    pub fn unit_attribute(&self) -> Option<&str> {
        match self.modifier("unit") {
            Some(ModValue::Str(s)) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquationNode {
    pub lhs: Expr,
    pub rhs: Expr,
    pub description: Option<String>,
    pub comment: Option<String>,
    pub span: Span,
    /// Every identifier occurrence with its span, including those in a
    /// partially parsed equation.
    pub idents: Vec<(String, Span)>,
    pub recovered: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelicaAst {
    pub name: String,
    pub description: Option<String>,
    pub comment: Option<String>,
    pub declarations: Vec<Declaration>,
    pub equation_comment: Option<String>,
    pub equations: Vec<EquationNode>,
    pub initial_equations: Vec<EquationNode>,
    pub end_comment: Option<String>,
    pub diagnostics: Vec<Diagnostic>,
}

impl ModelicaAst {
    pub fn declaration(&self, name: &str) -> Option<&Declaration> {
        self.declarations.iter().find(|d| d.name == name)
    }

    /// A copy with spans, identifier lists and diagnostics cleared, for
    /// structural comparison.
    pub fn normalized(&self) -> ModelicaAst {
        let mut a = self.clone();
        a.diagnostics.clear();
        for d in &mut a.declarations {
            d.span = Span::default();
            d.value_span = None;
        }
        for e in a.equations.iter_mut().chain(a.initial_equations.iter_mut()) {
            e.span = Span::default();
            e.idents.clear();
        }
        a
    }
}

impl fmt::Display for ModelicaAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&super::printer::print(self))
    }
}
