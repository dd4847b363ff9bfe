//! Recovering parser for the Modelica subset.
//!
//! Grammar (informal EBNF):
//!
//! ```text
//! file        = { "within" ... ";" | import } model ;
//! model       = "model" IDENT [STRING] { element } { section } "end" IDENT ";" ;
//! element     = { prefix } type_name component { "," component } ";"
//!             | "import" ... ";" | "annotation" "(" ... ")" ";"
//!             | "protected" | "public" ;
//! prefix      = "parameter" | "constant" | "input" | "output" | "discrete" | "final" | ... ;
//! component   = IDENT [ "(" modifier { "," modifier } ")" ] [ "=" expr ] [STRING] ;
//! modifier    = IDENT [ "." IDENT ] "=" ( expr | STRING ) ;
//! section     = [ "initial" ] "equation" { equation } ;
//! equation    = expr "=" expr [STRING] ";" ;
//! expr        = [ "+" | "-" ] term { ( "+" | "-" ) term } ;
//! term        = factor { ( "*" | "/" ) factor } ;
//! factor      = primary [ "^" primary ] ;
//! primary     = NUMBER | name [ "(" [ expr { "," expr } ] ")" ] | "(" expr ")" ;
//! ```
//!
//! Errors never abort parsing. Statements resynchronize at `;` or at a
//! section keyword, and a missing `;` at the end of a line is assumed.

use super::ast::{DeclKind, Declaration, Diagnostic, EquationNode, ModValue, ModelicaAst, Modifier, Zone};
use super::lexer::{is_keyword, lex, Span, Tok, Token};
use crate::expr::{BinOp, Expr};

const PREFIXES: &[&str] = &[
    "parameter", "constant", "discrete", "input", "output", "final", "each", "flow", "stream", "inner",
    "outer", "replaceable", "redeclare",
];

/// Parses Modelica source. Always returns an AST; problems are diagnostics.
pub fn parse(src: &str) -> ModelicaAst {
    let mut p = Parser::new(src);
    let mut ast = p.model();
    ast.diagnostics = p.diags;
    ast
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    last: usize,
    diags: Vec<Diagnostic>,
    zone: Zone,
    idents: Vec<(String, Span)>,
    soft_error: bool,
}

type PResult<T> = Result<T, ()>;

impl Parser {
    fn new(src: &str) -> Self {
        let mut p = Parser {
            toks: lex(src),
            pos: 0,
            last: 0,
            diags: Vec::new(),
            zone: Zone::Declaration,
            idents: Vec::new(),
            soft_error: false,
        };
        p.zone = Zone::General;
        p.skip_trivia();
        p
    }

    fn skip_trivia(&mut self) {
        while self.pos + 1 < self.toks.len() {
            match self.toks[self.pos].tok {
                Tok::LineComment(_) | Tok::BlockComment => self.pos += 1,
                Tok::UnterminatedComment => {
                    let span = self.toks[self.pos].span;
                    self.diags.push(Diagnostic::new(span, Zone::General, "unterminated block comment"));
                    self.pos += 1;
                }
                _ => break,
            }
        }
    }

    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn peek_nth(&self, n: usize) -> &Token {
        let mut i = self.pos;
        let mut left = n;
        while i + 1 < self.toks.len() {
            if !self.toks[i].is_trivia() && !matches!(self.toks[i].tok, Tok::UnterminatedComment) {
                if left == 0 {
                    break;
                }
                left -= 1;
            }
            i += 1;
        }
        &self.toks[i]
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if !matches!(t.tok, Tok::Eof) {
            self.last = self.pos;
            self.pos += 1;
            self.skip_trivia();
        }
        t
    }

    fn last_token(&self) -> &Token {
        &self.toks[self.last]
    }

    fn at(&self, word: &str) -> bool {
        self.peek().is_ident(word)
    }

    fn at_punct(&self, p: &str) -> bool {
        self.peek().is_punct(p)
    }

    fn at_eof(&self) -> bool {
        matches!(self.peek().tok, Tok::Eof)
    }

    fn error(&mut self, span: Span, msg: impl Into<String>) {
        self.diags.push(Diagnostic::new(span, self.zone, msg));
    }

    fn describe(t: &Token) -> String {
        match &t.tok {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Number(v) => format!("number {v}"),
            Tok::Str(_) => "a string".into(),
            Tok::Punct(p) => format!("`{p}`"),
            Tok::Unknown(c) => format!("character `{c}`"),
            Tok::UnterminatedString => "an unterminated string".into(),
            Tok::Eof => "end of input".into(),
            Tok::LineComment(_) | Tok::BlockComment | Tok::UnterminatedComment => "a comment".into(),
        }
    }

    /// Line comment on the same line as the last consumed token.
    fn trailing_comment(&self) -> Option<String> {
        let line = self.last_token().line;
        self.toks[self.last + 1..self.pos].iter().find_map(|t| match &t.tok {
            Tok::LineComment(c) if t.line == line => Some(c.clone()),
            _ => None,
        })
    }

    fn at_section_start(&self) -> bool {
        let t = self.peek();
        t.is_ident("equation")
            || t.is_ident("algorithm")
            || t.is_ident("protected")
            || t.is_ident("public")
            || (t.is_ident("initial") && self.peek_nth(1).is_ident("equation"))
            || self.at_model_end()
    }

    fn at_model_end(&self) -> bool {
        self.at("end") && !["if", "for", "when", "while"].iter().any(|k| self.peek_nth(1).is_ident(k))
    }

    /// Skips to just after the next `;`, or up to a section keyword.
    fn sync(&mut self) {
        loop {
            if self.at_eof() || self.at_section_start() {
                return;
            }
            if self.at_punct(";") {
                self.bump();
                return;
            }
            self.bump();
        }
    }

    /// Consumes `;`. A missing one before a line break is reported and
    /// assumed; otherwise the rest of the statement is skipped.
    fn expect_semi(&mut self) -> bool {
        if self.at_punct(";") {
            self.bump();
            return true;
        }
        let t = self.peek().clone();
        self.error(t.span, format!("expected `;`, found {}", Self::describe(&t)));
        if t.line > self.last_token().line || matches!(t.tok, Tok::Eof) {
            return false;
        }
        self.sync();
        false
    }

    fn ident(&mut self) -> Option<(String, Span)> {
        match &self.peek().tok {
            Tok::Ident(s) if !is_keyword(s) => {
                let s = s.clone();
                let span = self.bump().span;
                Some((s, span))
            }
            _ => None,
        }
    }

    fn dotted_name(&mut self) -> Option<(String, Span)> {
        let (mut name, mut span) = self.ident()?;
        while self.at_punct(".") && matches!(&self.peek_nth(1).tok, Tok::Ident(s) if !is_keyword(s)) {
            self.bump();
            let (part, s) = self.ident().expect("checked ident");
            name.push('.');
            name.push_str(&part);
            span = span.join(s);
        }
        Some((name, span))
    }

    fn model(&mut self) -> ModelicaAst {
        let mut ast = ModelicaAst::default();
        while self.at("within") || self.at("import") {
            self.bump();
            self.sync();
        }
        if self.at("model") || self.at("class") || self.at("block") {
            self.bump();
            match self.ident() {
                Some((name, _)) => ast.name = name,
                None => {
                    let t = self.peek().clone();
                    self.error(t.span, format!("expected a model name, found {}", Self::describe(&t)));
                }
            }
            if let Tok::Str(s) = &self.peek().tok {
                ast.description = Some(s.clone());
                self.bump();
            }
            ast.comment = self.trailing_comment();
        } else {
            let t = self.peek().clone();
            self.error(t.span, format!("expected `model`, found {}", Self::describe(&t)));
        }

        self.zone = Zone::Declaration;
        self.elements(&mut ast);
        self.zone = Zone::General;
        loop {
            if self.at("equation") {
                self.bump();
                if ast.equation_comment.is_none() {
                    ast.equation_comment = self.trailing_comment();
                }
                let mut eqs = std::mem::take(&mut ast.equations);
                self.equations(&mut eqs);
                ast.equations = eqs;
            } else if self.at("initial") && self.peek_nth(1).is_ident("equation") {
                self.bump();
                self.bump();
                let mut eqs = std::mem::take(&mut ast.initial_equations);
                self.equations(&mut eqs);
                ast.initial_equations = eqs;
            } else if self.at("algorithm") {
                let span = self.bump().span;
                self.error(span, "algorithm sections are not supported");
                while !self.at_eof() && !self.at_section_start() {
                    self.bump();
                }
            } else if self.at("protected") || self.at("public") {
                self.bump();
                self.zone = Zone::Declaration;
                self.elements(&mut ast);
                self.zone = Zone::General;
            } else {
                break;
            }
        }

        if self.at("end") {
            self.bump();
            match self.dotted_name() {
                Some((name, span)) if name != ast.name => {
                    self.error(span, format!("`end {name}` does not match `model {}`", ast.name));
                }
                Some(_) => {}
                None => {
                    let t = self.peek().clone();
                    self.error(t.span, format!("expected the model name after `end`, found {}", Self::describe(&t)));
                }
            }
            self.expect_semi();
            ast.end_comment = self.trailing_comment();
            if !self.at_eof() {
                let t = self.peek().clone();
                self.error(t.span, format!("unexpected {} after the end of the model", Self::describe(&t)));
            }
        } else {
            let t = self.peek().clone();
            if matches!(t.tok, Tok::Eof) {
                self.error(t.span, format!("missing `end {};`", ast.name));
            } else {
                self.error(t.span, format!("unexpected {}", Self::describe(&t)));
            }
        }
        ast
    }

    fn elements(&mut self, ast: &mut ModelicaAst) {
        loop {
            let t = self.peek().clone();
            match &t.tok {
                Tok::Eof => return,
                Tok::Ident(w) if w == "equation" || w == "algorithm" => return,
                Tok::Ident(w) if w == "end" => return,
                Tok::Ident(w) if w == "initial" => {
                    if self.peek_nth(1).is_ident("equation") {
                        return;
                    }
                    self.error(
                        t.span,
                        "`initial` cannot give a start value in a declaration; use a `start` modifier",
                    );
                    self.sync();
                }
                Tok::Ident(w) if w == "protected" || w == "public" => {
                    self.bump();
                }
                Tok::Ident(w) if w == "import" => {
                    self.bump();
                    self.sync();
                }
                Tok::Ident(w) if w == "annotation" => self.annotation(),
                Tok::Ident(w) if w == "extends" => {
                    self.error(t.span, "`extends` is not supported");
                    self.sync();
                }
                Tok::Ident(w) if PREFIXES.contains(&w.as_str()) || !is_keyword(w) => self.declaration(ast),
                Tok::Punct(";") => {
                    self.error(t.span, "empty declaration");
                    self.bump();
                }
                _ => {
                    self.error(t.span, format!("unexpected {} in the declaration section", Self::describe(&t)));
                    self.sync();
                }
            }
        }
    }

    fn annotation(&mut self) {
        self.bump();
        let mut depth = 0i32;
        loop {
            if self.at_eof() {
                return;
            }
            if self.at_punct("(") {
                depth += 1;
            } else if self.at_punct(")") {
                depth -= 1;
            } else if self.at_punct(";") && depth <= 0 {
                self.bump();
                return;
            }
            self.bump();
        }
    }

    fn declaration(&mut self, ast: &mut ModelicaAst) {
        let start = self.peek().span;
        let mut kind = DeclKind::Variable;
        while let Tok::Ident(w) = &self.peek().tok {
            if !PREFIXES.contains(&w.as_str()) {
                break;
            }
            match w.as_str() {
                "parameter" => kind = DeclKind::Parameter,
                "constant" => kind = DeclKind::Constant,
                _ => {}
            }
            self.bump();
        }
        let Some((mut type_name, type_span)) = self.dotted_name() else {
            let t = self.peek().clone();
            self.error(t.span, format!("expected a type name, found {}", Self::describe(&t)));
            self.sync();
            return;
        };
        let first = ast.declarations.len();
        loop {
            let mut recovered = false;
            let (name, _) = match self.ident() {
                Some(n) => n,
                None if self.at_punct("=") || self.at_punct("(") || self.at_punct(";") => {
                    self.error(type_span, format!("missing type in the declaration of `{type_name}`"));
                    recovered = true;
                    let name = std::mem::replace(&mut type_name, "Real".into());
                    (name, type_span)
                }
                None => {
                    let t = self.peek().clone();
                    self.error(t.span, format!("expected a component name, found {}", Self::describe(&t)));
                    self.sync();
                    return;
                }
            };
            let mut decl = Declaration {
                kind,
                type_name: type_name.clone(),
                name,
                modifiers: Vec::new(),
                value: None,
                description: None,
                comment: None,
                span: start,
                value_span: None,
                recovered,
            };
            let ok = self.component_tail(&mut decl);
            decl.span = start.join(self.last_token().span);
            ast.declarations.push(decl);
            if !ok {
                ast.declarations.last_mut().expect("pushed").recovered = true;
                self.sync();
                return;
            }
            if self.at_punct(",") {
                self.bump();
                continue;
            }
            break;
        }
        self.expect_semi();
        let comment = self.trailing_comment();
        for d in &mut ast.declarations[first..] {
            d.comment = comment.clone();
        }
    }

    /// Array subscripts, modifiers, binding and description of a component.
    fn component_tail(&mut self, decl: &mut Declaration) -> bool {
        if self.at_punct("[") {
            let span = self.peek().span;
            self.error(span, "array declarations are not supported");
            decl.recovered = true;
            while !self.at_eof() && !self.at_punct("]") && !self.at_punct(";") {
                self.bump();
            }
            if self.at_punct("]") {
                self.bump();
            }
        }
        if self.at_punct("(") {
            self.bump();
            loop {
                let Some((mut mname, _)) = self.ident().or_else(|| {
                    // `each`/`final` inside modifications
                    if self.at("each") || self.at("final") {
                        self.bump();
                        self.ident()
                    } else {
                        None
                    }
                }) else {
                    let t = self.peek().clone();
                    self.error(t.span, format!("expected a modifier name, found {}", Self::describe(&t)));
                    return false;
                };
                while self.at_punct(".") {
                    self.bump();
                    match self.ident() {
                        Some((part, _)) => {
                            mname.push('.');
                            mname.push_str(&part);
                        }
                        None => {
                            let t = self.peek().clone();
                            self.error(t.span, "expected a name after `.`");
                            return false;
                        }
                    }
                }
                if !self.at_punct("=") {
                    let t = self.peek().clone();
                    self.error(t.span, format!("expected `=` in modifier `{mname}`, found {}", Self::describe(&t)));
                    return false;
                }
                self.bump();
                let value = if let Tok::Str(s) = &self.peek().tok {
                    let s = s.clone();
                    self.bump();
                    ModValue::Str(s)
                } else if self.at("true") || self.at("false") {
                    let w = self.bump();
                    let Tok::Ident(w) = w.tok else { unreachable!() };
                    ModValue::Expr(Expr::sym(w))
                } else {
                    match self.expr() {
                        Ok(e) => ModValue::Expr(e),
                        Err(()) => return false,
                    }
                };
                decl.modifiers.push(Modifier { name: mname, value });
                if self.at_punct(",") {
                    self.bump();
                    continue;
                }
                if self.at_punct(")") {
                    self.bump();
                    break;
                }
                let t = self.peek().clone();
                self.error(t.span, format!("expected `,` or `)` in modifiers, found {}", Self::describe(&t)));
                return false;
            }
        }
        if self.at_punct("=") || self.at_punct(":=") {
            let eq = self.bump();
            if eq.is_punct(":=") {
                self.error(eq.span, "`:=` is not allowed in a declaration; use `=`");
                decl.recovered = true;
            }
            let from = self.peek().span;
            match self.expr() {
                Ok(e) => {
                    decl.value = Some(e);
                    decl.value_span = Some(from.join(self.last_token().span));
                }
                Err(()) => return false,
            }
        }
        if let Tok::Str(s) = &self.peek().tok {
            decl.description = Some(s.clone());
            self.bump();
        }
        if self.soft_error {
            self.soft_error = false;
            decl.recovered = true;
        }
        true
    }

    fn equations(&mut self, out: &mut Vec<EquationNode>) {
        loop {
            let t = self.peek().clone();
            if self.at_eof() || self.at_section_start() {
                return;
            }
            match &t.tok {
                Tok::Ident(w) if w == "if" || w == "for" || w == "when" || w == "while" => {
                    self.error(t.span, format!("`{w}` equations are not supported"));
                    self.skip_block(w.clone());
                }
                Tok::Ident(w) if w == "connect" => {
                    self.error(t.span, "`connect` equations are not supported");
                    self.sync();
                }
                Tok::Ident(w) if w == "annotation" => self.annotation(),
                Tok::Ident(w) if w == "initial" => {
                    self.error(t.span, "unexpected `initial`");
                    self.sync();
                }
                Tok::Punct(";") => {
                    self.error(t.span, "empty equation");
                    self.bump();
                }
                _ => {
                    let before = self.pos;
                    self.equation(out);
                    if self.pos == before {
                        self.bump();
                    }
                }
            }
        }
    }

    fn skip_block(&mut self, kw: String) {
        self.bump();
        let mut depth = 1;
        while !self.at_eof() {
            if self.at("end") {
                if self.peek_nth(1).is_ident(&kw) {
                    self.bump();
                    self.bump();
                    depth -= 1;
                    if depth == 0 {
                        self.expect_semi();
                        return;
                    }
                    continue;
                }
                if self.at_model_end() {
                    return;
                }
            }
            if self.at(&kw) {
                depth += 1;
            }
            self.bump();
        }
    }

    fn equation(&mut self, out: &mut Vec<EquationNode>) {
        let start = self.peek().span;
        self.idents.clear();
        self.soft_error = false;
        let recovered_node = |p: &mut Parser| EquationNode {
            lhs: Expr::num(0.0),
            rhs: Expr::num(0.0),
            description: None,
            comment: None,
            span: start.join(p.last_token().span),
            idents: std::mem::take(&mut p.idents),
            recovered: true,
        };
        let Ok(lhs) = self.expr() else {
            self.sync();
            let node = recovered_node(self);
            out.push(node);
            return;
        };
        let mut recovered = false;
        if self.at_punct("=") {
            self.bump();
        } else if self.at_punct(":=") || self.at_punct("==") {
            let t = self.bump();
            self.error(t.span, format!("{} is not an equation operator; use `=`", Self::describe(&t)));
            recovered = true;
        } else {
            let t = self.peek().clone();
            self.error(t.span, format!("expected `=`, found {}", Self::describe(&t)));
            self.sync();
            let node = recovered_node(self);
            out.push(node);
            return;
        }
        let Ok(rhs) = self.expr() else {
            self.sync();
            let node = recovered_node(self);
            out.push(node);
            return;
        };
        let mut description = None;
        if let Tok::Str(s) = &self.peek().tok {
            description = Some(s.clone());
            self.bump();
        }
        let span = start.join(self.last_token().span);
        let ok = self.expect_semi();
        let comment = if ok { self.trailing_comment() } else { None };
        out.push(EquationNode {
            lhs,
            rhs,
            description,
            comment,
            span,
            idents: std::mem::take(&mut self.idents),
            recovered: recovered || !ok || std::mem::take(&mut self.soft_error),
        });
    }

    fn expr(&mut self) -> PResult<Expr> {
        if self.at("if") {
            let span = self.peek().span;
            self.error(span, "if-expressions are not supported");
            return Err(());
        }
        let mut neg = false;
        if self.at_punct("-") || self.at_punct("+") {
            neg = self.bump().is_punct("-");
        }
        let mut acc = self.term()?;
        if neg {
            acc = negate(acc);
        }
        loop {
            let op = if self.at_punct("+") || self.at_punct(".+") {
                BinOp::Add
            } else if self.at_punct("-") || self.at_punct(".-") {
                BinOp::Sub
            } else {
                break;
            };
            self.bump();
            let rhs = self.term()?;
            acc = Expr::bin(op, acc, rhs);
        }
        for rel in ["<", ">", "<=", ">=", "==", "<>"] {
            if self.at_punct(rel) && !(rel == "==" && self.zone == Zone::General) {
                let span = self.peek().span;
                self.error(span, "relational expressions are not supported");
                return Err(());
            }
        }
        if self.at("and") || self.at("or") {
            let span = self.peek().span;
            self.error(span, "logical expressions are not supported");
            return Err(());
        }
        Ok(acc)
    }

    fn term(&mut self) -> PResult<Expr> {
        let mut acc = self.factor()?;
        loop {
            let op = if self.at_punct("*") || self.at_punct(".*") {
                BinOp::Mul
            } else if self.at_punct("/") || self.at_punct("./") {
                BinOp::Div
            } else {
                break;
            };
            self.bump();
            let rhs = self.factor()?;
            acc = Expr::bin(op, acc, rhs);
        }
        Ok(acc)
    }

    fn factor(&mut self) -> PResult<Expr> {
        let base = self.primary()?;
        if self.at_punct("^") || self.at_punct(".^") {
            self.bump();
            let exp = self.primary()?;
            if self.at_punct("^") || self.at_punct(".^") {
                let span = self.peek().span;
                self.error(span, "`^` is not associative; add parentheses");
                return Err(());
            }
            return Ok(base.pow(exp));
        }
        Ok(base)
    }

    fn primary(&mut self) -> PResult<Expr> {
        let t = self.peek().clone();
        match &t.tok {
            Tok::Number(v) => {
                self.bump();
                Ok(Expr::num(*v))
            }
            Tok::Punct("(") => {
                self.bump();
                let e = self.expr()?;
                if self.at_punct(")") {
                    self.bump();
                    Ok(e)
                } else {
                    let t = self.peek().clone();
                    self.error(t.span, format!("expected `)`, found {}", Self::describe(&t)));
                    Err(())
                }
            }
            Tok::Punct(p @ ("-" | "+")) => {
                // Modelica only allows a sign at the start of an expression
                self.error(t.span, format!("`{p}` must be parenthesized here"));
                self.soft_error = true;
                self.bump();
                let e = self.factor()?;
                Ok(if *p == "-" { negate(e) } else { e })
            }
            Tok::Ident(w) if w == "true" || w == "false" => {
                self.bump();
                Ok(Expr::sym(w.clone()))
            }
            Tok::Ident(w) if is_keyword(w) => {
                self.error(t.span, format!("unexpected keyword `{w}` in an expression"));
                Err(())
            }
            Tok::Ident(_) => {
                let (name, span) = self.dotted_name().expect("identifier");
                if self.at_punct("(") {
                    self.bump();
                    let mut args = Vec::new();
                    if !self.at_punct(")") {
                        loop {
                            args.push(self.expr()?);
                            if self.at_punct(",") {
                                self.bump();
                                continue;
                            }
                            break;
                        }
                    }
                    if !self.at_punct(")") {
                        let t = self.peek().clone();
                        self.error(t.span, format!("expected `)` after arguments, found {}", Self::describe(&t)));
                        return Err(());
                    }
                    self.bump();
                    return Ok(Expr::call(name, args));
                }
                if self.at_punct("[") {
                    let span = self.peek().span;
                    self.error(span, "array subscripts are not supported");
                    return Err(());
                }
                self.idents.push((name.clone(), span));
                Ok(Expr::sym(name))
            }
            _ => {
                self.error(t.span, format!("expected an expression, found {}", Self::describe(&t)));
                Err(())
            }
        }
    }
}

fn negate(e: Expr) -> Expr {
    match e {
        Expr::Num(v) => Expr::num(-v),
        other => -other,
    }
}
