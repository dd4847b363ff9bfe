//! Rendering of a scenario into a LaTeX question and a commented Modelica
//! reference answer.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::expr::{format_number, Expr};
use crate::frontend::{print, DeclKind, Declaration, EquationNode, ModValue, ModelicaAst, Modifier, Span};
use crate::physics::{build_equations, EquationSystem, PhysicsError, VarKind};
use crate::scenario::{Reaction, ReactorScenario};
use crate::units::latex_unit;

pub const DEFAULT_SYSTEM_MESSAGE: &str = "You are an expert in chemical reaction engineering and equation-based modeling. \
Given the description of a continuous stirred-tank reactor, write a complete, simulatable Modelica model. \
Declare every parameter with its value converted to SI units and use the built-in physical types. \
Give each line a short comment.";

pub const MODEL_NAME: &str = "CSTR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAPair {
    pub system: String,
    pub question: String,
    /// Absent when the scenario leaves parameters out on purpose.
    pub answer: Option<String>,
    pub template_id: String,
    pub seed: u64,
}

fn side_latex(side: &[(String, u32)]) -> String {
    side.iter()
        .map(|(s, nu)| if *nu == 1 { s.clone() } else { format!("{nu}\\,{s}") })
        .collect::<Vec<_>>()
        .join(" + ")
}

pub fn reaction_latex(r: &Reaction) -> String {
    let arrow = if r.reversible { r"\rightleftharpoons" } else { r"\rightarrow" };
    format!("{} {arrow} {}", side_latex(&r.reactants), side_latex(&r.products))
}

fn rate_law_latex(j: usize, r: &Reaction, arrhenius: bool) -> String {
    let factor = |side: &[(String, u32)]| {
        side.iter()
            .map(|(s, nu)| if *nu == 1 { format!("c_{s}") } else { format!("c_{s}^{{{nu}}}") })
            .collect::<Vec<_>>()
            .join(r"\,")
    };
    let k = |dir: &str| {
        if arrhenius {
            format!(r"k_{{0,{dir}{j}}} \exp\left(-\frac{{E_{{a,{dir}{j}}}}}{{R T}}\right)")
        } else {
            format!("k_{{{dir},{j}}}")
        }
    };
    let mut s = format!(r"r_{j} = {}\,{}", k("f"), factor(&r.reactants));
    if r.reversible {
        let _ = write!(s, r" - {}\,{}", k("r"), factor(&r.products));
    }
    s
}

fn latex_number(v: f64) -> String {
    let s = format_number(v);
    match s.split_once('e') {
        Some((m, e)) => format!(r"{m} \cdot 10^{{{e}}}"),
        None => s,
    }
}

/// The question text: mode, reaction scheme, density assumption and every
/// given parameter in its prompt unit.
pub fn render_question(s: &ReactorScenario) -> String {
    let mut q = String::new();
    let _ = write!(
        q,
        "A continuous stirred-tank reactor (CSTR) with a liquid feed is operated {}.",
        s.mode.phrase()
    );
    let reactions = &s.scheme.reactions;
    if reactions.len() == 1 {
        let _ = write!(q, " The reaction ${}$ takes place in the reactor.", reaction_latex(&reactions[0]));
    } else {
        let list: Vec<String> = reactions
            .iter()
            .enumerate()
            .map(|(i, r)| format!("({}) ${}$", i + 1, reaction_latex(r)))
            .collect();
        let _ = write!(q, " The reactions {} take place in the reactor.", list.join(" and "));
    }
    let arrhenius = reactions.iter().any(|r| r.kinetics.forward_arrhenius.is_some());
    let laws: Vec<String> = reactions
        .iter()
        .enumerate()
        .map(|(i, r)| format!("${}$", rate_law_latex(i + 1, r, arrhenius)))
        .collect();
    let _ = write!(
        q,
        " The reaction rates follow mass-action kinetics, {}, where the concentrations are in the reactor.",
        laws.join(", ")
    );
    if s.density.constant_density {
        q.push_str(" The density of the mixture is constant.");
    } else {
        q.push_str(
            " The density of the mixture is not constant: the volumes of the pure components are additive, \
and an overflow keeps the liquid volume at its specified value.",
        );
    }
    if s.mode.isothermal {
        q.push_str(" The reactor temperature is held constant.");
    }
    q.push_str("\n\nThe following values are given:\n");
    for p in &s.parameters {
        let _ = writeln!(
            q,
            r"- {}: ${} = {}\,{}$",
            p.role.description(),
            p.role.latex_symbol(),
            latex_number(p.quantity.value),
            latex_unit(&p.quantity.unit.symbol)
        );
    }
    q.push_str("\nWrite a Modelica model that describes the dynamic behavior of the reactor.");
    q
}

fn declaration(
    kind: DeclKind,
    type_name: String,
    name: &str,
    modifiers: Vec<Modifier>,
    value: Option<Expr>,
    comment: String,
) -> Declaration {
    Declaration {
        kind,
        type_name,
        name: name.to_string(),
        modifiers,
        value,
        description: None,
        comment: Some(comment),
        span: Span::default(),
        value_span: None,
        recovered: false,
    }
}

fn model_comment(s: &ReactorScenario) -> String {
    let density = if s.density.constant_density { "constant" } else { "variable" };
    format!(
        "CSTR operated {}, {density} density",
        s.mode.phrase()
    )
}

/// The reference answer as an AST.
pub fn answer_ast(s: &ReactorScenario, sys: &EquationSystem) -> ModelicaAst {
    let mut decls = Vec::new();
    for p in &sys.parameters {
        let (ty, mods) = match p.kind.modelica_type() {
            Some(t) => (t.to_string(), Vec::new()),
            None => (
                "Real".to_string(),
                vec![Modifier {
                    name: "unit".into(),
                    value: ModValue::Str(p.quantity.unit.symbol.clone()),
                }],
            ),
        };
        decls.push(declaration(
            DeclKind::Parameter,
            ty,
            &p.name,
            mods,
            Some(Expr::num(p.quantity.value)),
            p.role.description(),
        ));
    }
    for v in &sys.unknowns {
        let mut mods = Vec::new();
        let ty = match &v.modelica_type {
            Some(t) => t.clone(),
            None => {
                mods.push(Modifier {
                    name: "unit".into(),
                    value: ModValue::Str(v.unit.symbol.clone()),
                });
                "Real".into()
            }
        };
        if v.kind == VarKind::State {
            if let Some(start) = &v.start {
                mods.push(Modifier {
                    name: "start".into(),
                    value: ModValue::Expr(start.clone()),
                });
            }
        }
        decls.push(declaration(DeclKind::Variable, ty, &v.name, mods, None, v.description.clone()));
    }
    let equations = sys
        .equations
        .iter()
        .map(|e| EquationNode {
            lhs: e.lhs.clone(),
            rhs: e.rhs.clone(),
            description: None,
            comment: Some(e.comment.clone()),
            span: Span::default(),
            idents: Vec::new(),
            recovered: false,
        })
        .collect();
    ModelicaAst {
        name: MODEL_NAME.into(),
        description: None,
        comment: Some(model_comment(s)),
        declarations: decls,
        equation_comment: Some("balances and constitutive relations".into()),
        equations,
        initial_equations: Vec::new(),
        end_comment: Some("end of model".into()),
        diagnostics: Vec::new(),
    }
}

/// The reference answer text. Parameters carry SI values converted from the
/// prompt units.
pub fn render_answer(s: &ReactorScenario, sys: &EquationSystem) -> String {
    print(&answer_ast(s, sys))
}

/// Question plus reference answer; the answer is absent for scenarios with
/// omitted parameters.
pub fn render_pair(s: &ReactorScenario, system_message: &str) -> Result<QAPair, PhysicsError> {
    let answer = match build_equations(s) {
        Ok(sys) => Some(render_answer(s, &sys)),
        Err(PhysicsError::UnderSpecified(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(QAPair {
        system: system_message.to_string(),
        question: render_question(s),
        answer,
        template_id: s.template_id.clone(),
        seed: s.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse;
    use crate::scenario::{enumerate_templates, extrapolation_templates, instantiate};
    use crate::units::{unit, Quantity};

    #[test]
    fn four_component_question_shows_the_scheme() {
        let s = instantiate(&enumerate_templates()[4], 1).unwrap();
        let q = render_question(&s);
        let r = &s.scheme.reactions[0];
        assert!(q.contains(&reaction_latex(r)));
        assert!(q.contains(r"\rightarrow"));
        for c in ["A", "B", "C", "E"] {
            assert!(reaction_latex(r).contains(c));
        }
        assert!(q.contains("isothermally and adiabatically"));
    }

    #[test]
    fn celsius_stays_in_the_prompt_and_kelvin_in_the_answer() {
        let mut s = instantiate(&enumerate_templates()[0], 1).unwrap();
        let t = s.parameters.iter_mut().find(|p| p.name == "T").unwrap();
        t.quantity = Quantity::new(25.0, unit("degC"));
        let q = render_question(&s);
        assert!(q.contains(r"T = 25\,^{\circ}\mathrm{C}"), "{q}");
        let sys = build_equations(&s).unwrap();
        let a = render_answer(&s, &sys);
        assert!(a.contains("parameter Temperature T = 298.15;"), "{a}");
    }

    #[test]
    fn answers_follow_conventions() {
        for t in enumerate_templates().iter().chain(&extrapolation_templates()[..3]) {
            let s = instantiate(t, 4).unwrap();
            let sys = build_equations(&s).unwrap();
            let a = render_answer(&s, &sys);
            assert!(a.contains("Concentration cA(start=cA0);"), "{a}");
            for line in a.lines() {
                assert!(line.contains("//"), "{line}");
                assert!(!line.trim_start().starts_with("Real ") || line.contains("unit="), "{line}");
            }
            let ast = parse(&a);
            assert!(ast.diagnostics.is_empty(), "{:?}", ast.diagnostics);
            assert_eq!(print(&ast), a);
        }
    }

    #[test]
    fn omitted_parameters_leave_the_question_only() {
        let s = instantiate(&extrapolation_templates()[3], 2).unwrap();
        let pair = render_pair(&s, DEFAULT_SYSTEM_MESSAGE).unwrap();
        assert!(pair.answer.is_none());
        assert!(!pair.question.contains("reactor volume"));
        assert!(!pair.question.contains("heat transfer coefficient"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let s = instantiate(&enumerate_templates()[20], 8).unwrap();
        let a = render_pair(&s, DEFAULT_SYSTEM_MESSAGE).unwrap();
        let b = render_pair(&s, DEFAULT_SYSTEM_MESSAGE).unwrap();
        assert_eq!(a, b);
    }
}
