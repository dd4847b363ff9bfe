//! Lexer, recovering parser, AST, printer and symbol table for the Modelica
//! subset used by reference answers and candidate models.

pub mod ast;
pub mod lexer;
pub mod parser;
pub mod printer;
pub mod resolve;

pub use ast::{DeclKind, Declaration, Diagnostic, EquationNode, ModValue, ModelicaAst, Modifier, Zone};
pub use lexer::Span;
pub use parser::parse;
pub use printer::print;
pub use resolve::{resolve, SymbolInfo, SymbolTable};
