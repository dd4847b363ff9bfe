use std::collections::{BTreeSet, HashMap};

use proptest::prelude::*;
use rxn2mo::checker::mutate::{causal_links, mutate};
use rxn2mo::checker::{check, check_structure, maximum_matching, Category, CheckContext};
use rxn2mo::codegen::{render_answer, render_pair};
use rxn2mo::expr::{Dual, Expr};
use rxn2mo::frontend::{parse, resolve};
use rxn2mo::physics::{build_equations, normalized};
use rxn2mo::scenario::{enumerate_templates, extrapolation_templates, find_template, ReactorScenario};
use rxn2mo::units::{unit, Quantity};

fn scenario(id: &str, seed: u64) -> ReactorScenario {
    find_template(id).unwrap().instantiate(seed).unwrap()
}

fn answer(s: &ReactorScenario) -> String {
    render_answer(s, &build_equations(s).unwrap())
}

fn replace_line(text: &str, starts: &str, with: &str) -> String {
    text.lines()
        .map(|l| if l.trim_start().starts_with(starts) { with.to_string() } else { l.to_string() })
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

#[test]
fn reference_answers_score_zero() {
    for t in enumerate_templates().iter().chain(&extrapolation_templates()[..3]) {
        let s = t.instantiate(11).unwrap();
        let a = answer(&s);
        let r = check(&a, &CheckContext::new(s).unwrap());
        assert!(r.is_clean(), "{}\n{}", t.id, r.render("answer", &a));
        assert_eq!(r.counts.as_array(), [0; 8]);
    }
}

#[test]
fn raw_prompt_concentration_is_a_conversion_error() {
    let mut s = scenario("t01_iso_adiabatic_irr2", 3);
    let p = s.parameters.iter_mut().find(|p| p.name == "cA0").unwrap();
    p.quantity = Quantity::new(2.0, unit("mol/L"));
    let a = answer(&s);
    assert!(a.contains("parameter Concentration cA0 = 2000;"), "{a}");
    let bad = a.replace("cA0 = 2000;", "cA0 = 2.0;");
    let r = check(&bad, &CheckContext::new(s).unwrap());
    assert_eq!(r.count(Category::UnitConversion), 1, "{}", r.render("m", &bad));
    assert_eq!(r.total, 1);
}

#[test]
fn undeclared_rate_constant() {
    let s = scenario("t01_iso_adiabatic_irr2", 4);
    let a = answer(&s).replace("r1 = kf1 *", "r1 = k2 *");
    let r = check(&a, &CheckContext::new(s).unwrap());
    assert_eq!(r.count(Category::UndefinedVariable), 1, "{}", r.render("m", &a));
    assert!(r.findings[0].explanation.contains("`k2`"));
    assert_eq!(r.total, 1);
}

#[test]
fn flipped_reaction_sign_leaves_twice_the_reaction_term() {
    let s = scenario("t01_iso_adiabatic_irr2", 6);
    let sys = build_equations(&s).unwrap();
    let ctx = CheckContext::new(s.clone()).unwrap();
    let tr = ctx.trajectory.as_ref().unwrap();
    let original = sys.equations.iter().find(|e| e.lhs == Expr::der(Expr::sym("cA"))).unwrap();
    let nu = -s.scheme.reactions[0].signed_nu("A") as f64;
    let flipped_rhs = original.rhs.clone() + Expr::num(2.0 * nu) * Expr::sym("r1");
    let params = sys.parameter_values();
    let mut worst: f64 = 0.0;
    for row in tr.first_consistent..tr.times.len() {
        let env = |n: &str| {
            tr.value(row, n)
                .map(|v| Dual::new(v, tr.derivative(row, n).unwrap()))
                .or_else(|| params.get(n).map(|v| Dual::constant(*v)))
        };
        let l = original.lhs.eval_dual(&env).unwrap().value;
        let r = flipped_rhs.eval_dual(&env).unwrap().value;
        let rate = tr.value(row, "r1").unwrap();
        // the flipped balance misses by exactly 2*nu*r
        assert!(((r - l) - 2.0 * nu * rate).abs() <= 1e-9 * (1.0 + l.abs() + r.abs()));
        worst = worst.max(normalized(l, r));
    }
    assert!(worst > 1e-4, "{worst}");
    let a = mutate(Category::IncorrectEquation, &answer(&s), &s).unwrap();
    let r = check(&a, &ctx);
    assert_eq!(r.count(Category::IncorrectEquation), 1, "{}", r.render("m", &a));
    assert_eq!(r.total, 1);
}

#[test]
fn heat_exchange_in_an_adiabatic_reactor() {
    let s = scenario("t13_noniso_adiabatic_irr2", 2);
    let a = answer(&s);
    let energy = a.lines().find(|l| l.contains("der(T)")).unwrap().trim().to_string();
    let (head, comment) = energy.split_once(';').unwrap();
    let cooled = format!("  {head} + UA * (T_cool - T);{comment}");
    let mut m = replace_line(&a, &energy, &cooled);
    m = m.replace(
        "equation //",
        "  parameter ThermalConductance UA = 500; // exchange\n  parameter Temperature T_cool = 290; // coolant\nequation //",
    );
    let r = check(&m, &CheckContext::new(s).unwrap());
    assert_eq!(r.count(Category::IncorrectEquation), 1, "{}", r.render("m", &m));
    assert_eq!(r.total, 1, "{}", r.render("m", &m));
}

#[test]
fn calories_in_a_joule_energy_balance() {
    let s = scenario("t13_noniso_adiabatic_irr2", 7);
    let sys = build_equations(&s).unwrap();
    let dh = sys.parameter("dHr1").unwrap().quantity.value;
    let a = answer(&s);
    let line = a.lines().find(|l| l.contains("MolarEnthalpy dHr1")).unwrap().trim().to_string();
    let cal = format!("  parameter Real dHr1(unit=\"cal/mol\") = {}; // reaction enthalpy", dh / 4.184);
    let m = replace_line(&a, &line, &cal);
    let r = check(&m, &CheckContext::new(s).unwrap());
    assert_eq!(r.count(Category::UnitConflict), 1, "{}", r.render("m", &m));
    assert_eq!(r.total, 1);
}

#[test]
fn all_real_model_is_unchecked_but_clean() {
    let s = scenario("t01_iso_adiabatic_irr2", 8);
    let a = answer(&s);
    let ast = parse(&a);
    let mut plain = ast.clone();
    for d in &mut plain.declarations {
        d.type_name = "Real".into();
        d.modifiers.retain(|m| m.name != "unit");
    }
    let text = rxn2mo::frontend::print(&plain);
    let r = check(&text, &CheckContext::new(s).unwrap());
    assert_eq!(r.count(Category::UnitConflict), 0);
    assert!(r.notes.iter().any(|n| n.contains("unchecked")), "{:?}", r.notes);
    assert!(r.is_clean(), "{}", r.render("m", &text));
}

#[test]
fn omitted_parameters_are_hallucinated_when_given_values() {
    let t = extrapolation_templates()[3].clone();
    let s = t.instantiate(5).unwrap();
    assert!(render_pair(&s, "").unwrap().answer.is_none());
    // the answer a model would write if it invented V and UA
    let full = rxn2mo::scenario::ScenarioTemplate { omitted: vec![], ..t }.instantiate(5).unwrap();
    let text = answer(&full);
    let v_line = text.lines().find(|l| l.contains("Volume V =")).unwrap().trim().to_string();
    let text = replace_line(&text, &v_line, "  parameter Volume V = 1.0; // invented");
    let r = check(&text, &CheckContext::new(s).unwrap());
    assert_eq!(r.count(Category::IncorrectValue), 2, "{}", r.render("m", &text));
    assert!(r.notes.iter().any(|n| n.contains("no reference solution")));
}

#[test]
fn code_is_taken_from_the_first_fence() {
    let s = scenario("t03_iso_adiabatic_irr3", 1);
    let a = answer(&s);
    let wrapped = format!("Sure, here is the model.\n\n```modelica\n{a}```\n\nThe balance for `k2` is ...\n");
    let ctx = CheckContext::new(s).unwrap();
    assert!(check(&wrapped, &ctx).is_clean());
    let broken = wrapped.replace("r1 = kf1 *", "r1 = k2 *");
    let r = check(&broken, &ctx);
    let span = r.findings[0].span.unwrap();
    assert_eq!(&broken[span.start..span.end], "k2");
}

#[test]
fn deleting_the_last_equation_is_structural() {
    for t in enumerate_templates() {
        let s = t.instantiate(2).unwrap();
        let a = answer(&s);
        let m = mutate(Category::Structural, &a, &s).unwrap();
        let r = check(&m, &CheckContext::new(s).unwrap());
        assert!(r.count(Category::Structural) >= 1, "{}", t.id);
    }
}

#[test]
fn mutations_hit_their_category_without_leaking() {
    for t in enumerate_templates().iter().step_by(5) {
        let s = t.instantiate(21).unwrap();
        let a = answer(&s);
        let ctx = CheckContext::new(s.clone()).unwrap();
        for c in Category::ALL {
            let m = mutate(c, &a, &s).unwrap();
            let r = check(&m, &ctx);
            assert!(r.count(c) >= 1, "{} {c:?}\n{}", t.id, r.render("m", &m));
            for other in Category::ALL {
                if other != c && !causal_links(c).contains(&other) {
                    assert_eq!(r.count(other), 0, "{} {c:?} leaks into {other:?}", t.id);
                }
            }
        }
    }
}

#[test]
fn findings_never_share_a_span() {
    let s = scenario("t25_dae_noniso_cooled_irr4", 3);
    let a = answer(&s);
    let ctx = CheckContext::new(s.clone()).unwrap();
    let mut m = a.clone();
    let stacked = [
        Category::UnitConversion,
        Category::IncorrectEquation,
        Category::Structural,
        Category::GeneralSyntax,
    ];
    for c in stacked {
        m = mutate(c, &m, &s).unwrap();
    }
    let r = check(&m, &ctx);
    let spans: Vec<_> = r.findings.iter().filter_map(|f| f.span).collect();
    let unique: BTreeSet<_> = spans.iter().collect();
    assert_eq!(spans.len(), unique.len());
    for c in stacked {
        assert!(r.count(c) >= 1, "{c:?}\n{}", r.render("m", &m));
    }
}

/// Exhaustive search for a permutation picking a nonzero in every row.
fn has_perfect_matching(adj: &[Vec<usize>], n: usize) -> bool {
    fn go(row: usize, adj: &[Vec<usize>], used: &mut Vec<bool>) -> bool {
        if row == adj.len() {
            return true;
        }
        for &c in &adj[row] {
            if !used[c] {
                used[c] = true;
                if go(row + 1, adj, used) {
                    return true;
                }
                used[c] = false;
            }
        }
        false
    }
    adj.len() == n && go(0, adj, &mut vec![false; n])
}

fn random_incidence() -> impl Strategy<Value = (usize, Vec<Vec<usize>>)> {
    (1usize..=6).prop_flat_map(|n| {
        (
            Just(n),
            prop::collection::vec(prop::collection::btree_set(0..n, 0..=n), n)
                .prop_map(|rows| rows.into_iter().map(|r| r.into_iter().collect()).collect()),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matching_agrees_with_permutation_search((n, adj) in random_incidence()) {
        let m = maximum_matching(&adj, n);
        let size = m.iter().flatten().count();
        prop_assert_eq!(size == n, has_perfect_matching(&adj, n));
        let cols: BTreeSet<usize> = m.iter().flatten().copied().collect();
        prop_assert_eq!(cols.len(), size);
        for (row, c) in m.iter().enumerate() {
            if let Some(c) = c {
                prop_assert!(adj[row].contains(c));
            }
        }
    }

    #[test]
    fn structural_findings_count_the_deficit((n, adj) in random_incidence(), extra in 0usize..3) {
        let names: Vec<String> = (0..n + extra).map(|i| format!("x{i}")).collect();
        let mut src = String::from("model M\n");
        for v in &names {
            src.push_str(&format!("  Real {v};\n"));
        }
        src.push_str("equation\n");
        for row in &adj {
            let terms: Vec<&str> = row.iter().map(|c| names[*c].as_str()).collect();
            let lhs = if terms.is_empty() { "0".to_string() } else { terms.join(" + ") };
            src.push_str(&format!("  {lhs} = 1;\n"));
        }
        src.push_str("end M;\n");
        let ast = parse(&src);
        let f = check_structure(&ast, &resolve(&ast));
        let matched = maximum_matching(&adj, n + extra).iter().flatten().count();
        prop_assert_eq!(f.len(), (n + extra).max(adj.len()) - matched);
        prop_assert_eq!(f.is_empty(), extra == 0 && has_perfect_matching(&adj, n));
    }

    #[test]
    fn reports_are_deterministic_and_consistent(t in 0usize..26, seed in 0u64..500, cat in 1usize..=8) {
        let s = enumerate_templates()[t].instantiate(seed).unwrap();
        let a = answer(&s);
        let c = Category::from_number(cat).unwrap();
        let m = mutate(c, &a, &s).unwrap();
        let ctx = CheckContext::new(s).unwrap();
        let r1 = check(&m, &ctx);
        let r2 = check(&m, &ctx);
        prop_assert_eq!(&r1, &r2);
        let mut by_cat: HashMap<Category, usize> = HashMap::new();
        for f in &r1.findings {
            *by_cat.entry(f.category).or_default() += 1;
        }
        for c in Category::ALL {
            prop_assert_eq!(r1.count(c), by_cat.get(&c).copied().unwrap_or(0));
        }
        prop_assert_eq!(r1.total, r1.counts.as_array().iter().sum::<usize>());
    }
}
