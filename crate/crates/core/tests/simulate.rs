use std::collections::HashMap;

use rayon::prelude::*;
use rxn2mo::corpus::{record_seed, PER_TEMPLATE};
use rxn2mo::physics::{build_equations, Classification, EquationSystem};
use rxn2mo::scenario::{enumerate_templates, instantiate, ParamKind, ReactorScenario, SamplingConfig};
use rxn2mo::simulate::{
    default_horizon, simulate, simulate_with, step_jacobian, SimMethod, SimOptions, Trajectory, DEFAULT_STEPS,
};
use rxn2mo::units::{unit, Quantity};

/// The scenarios of the training corpus for master seed 0.
fn corpus() -> Vec<ReactorScenario> {
    let cfg = SamplingConfig::default();
    enumerate_templates()
        .iter()
        .flat_map(|t| (0..PER_TEMPLATE).map(move |i| (t.clone(), i)))
        .map(|(t, i)| rxn2mo::scenario::instantiate_with(&t, record_seed(0, &t.id, i), &cfg).unwrap())
        .collect()
}

fn max_residual(sys: &EquationSystem, tr: &Trajectory) -> f64 {
    let mut worst: f64 = 0.0;
    for row in tr.first_consistent..tr.times.len() {
        let vals: HashMap<String, f64> = tr.names.iter().cloned().zip(tr.values[row].iter().copied()).collect();
        let ders: HashMap<String, f64> = tr.names.iter().cloned().zip(tr.derivatives[row].iter().copied()).collect();
        for r in sys.normalized_residual(&vals, &ders, tr.times[row]).unwrap() {
            worst = worst.max(r);
        }
    }
    worst
}

fn species(sys: &EquationSystem) -> Vec<usize> {
    sys.unknowns
        .iter()
        .enumerate()
        .filter(|(_, v)| v.name.starts_with('c') && v.name.len() == 2)
        .map(|(i, _)| i)
        .collect()
}

#[test]
fn every_corpus_run_is_positive_consistent_and_settles() {
    let bad: Vec<String> = corpus()
        .par_iter()
        .filter_map(|s| {
            let sys = build_equations(s).unwrap();
            let tau = default_horizon(&sys).unwrap() / 10.0;
            let short = simulate(&sys, 20.0 * tau, DEFAULT_STEPS).map_err(|e| format!("{}:{} {e}", s.template_id, s.seed));
            let long = simulate(&sys, 200.0 * tau, DEFAULT_STEPS).map_err(|e| format!("{}:{} {e}", s.template_id, s.seed));
            let (short, long) = match (short, long) {
                (Ok(a), Ok(b)) => (a, b),
                (Err(e), _) | (_, Err(e)) => return Some(e),
            };
            let idx = species(&sys);
            let negative = short.values.iter().flat_map(|r| idx.iter().map(move |&j| r[j])).fold(f64::INFINITY, f64::min);
            if negative < -1e-9 {
                return Some(format!("{}:{} concentration {negative:e}", s.template_id, s.seed));
            }
            // a component that is absent at steady state is compared on the scale of the largest concentration
            let floor = idx.iter().map(|&j| short.last()[j].abs()).fold(0.0, f64::max);
            for (j, (a, b)) in short.last().iter().zip(long.last()).enumerate() {
                let scale = if idx.contains(&j) { a.abs().max(b.abs()).max(floor * 1e-6) } else { a.abs().max(b.abs()) };
                if (a - b).abs() > 1e-4 * scale {
                    return Some(format!("{}:{} {} {a:e} vs {b:e}", s.template_id, s.seed, short.names[j]));
                }
            }
            let r = max_residual(&sys, &short);
            (r > 1e-5).then(|| format!("{}:{} residual {r:e}", s.template_id, s.seed))
        })
        .collect();
    assert!(bad.is_empty(), "{} of 988: {:?}", bad.len(), &bad[..bad.len().min(10)]);
}

#[test]
fn isothermal_temperature_is_bit_constant() {
    for (i, t) in enumerate_templates().iter().enumerate().filter(|(_, t)| t.mode.isothermal) {
        for seed in 0..3 {
            let sys = build_equations(&instantiate(t, seed).unwrap()).unwrap();
            let tr = simulate(&sys, default_horizon(&sys).unwrap(), 200).unwrap();
            let temp = tr.column("T").unwrap();
            assert!(temp.iter().all(|v| v.to_bits() == temp[0].to_bits()), "template {i} seed {seed}");
        }
    }
}

#[test]
fn dae_constraints_hold_every_step() {
    for t in enumerate_templates().iter().filter(|t| !t.constant_density) {
        for seed in 0..6 {
            let sys = build_equations(&instantiate(t, seed).unwrap()).unwrap();
            assert_eq!(sys.classification, Classification::Dae);
            let tr = simulate(&sys, default_horizon(&sys).unwrap(), DEFAULT_STEPS).unwrap();
            let worst = tr.constraint_residuals[tr.first_consistent..].iter().fold(0.0f64, |a, b| a.max(*b));
            assert!(worst < 1e-8, "{} seed {seed}: {worst:e}", t.id);
        }
    }
}

/// One reversible reaction A <-> B with first-order kinetics and rate
/// constants large against the flow, so the outlet sits at equilibrium.
fn near_equilibrium(template: &str, seed: u64) -> (EquationSystem, f64, f64) {
    let t = enumerate_templates().into_iter().find(|t| t.id == template).unwrap();
    let mut s = instantiate(&t, seed).unwrap();
    let r = &mut s.scheme.reactions[0];
    r.reactants[0].1 = 1;
    r.products[0].1 = 1;
    let tau = s.residence_time().unwrap();
    let (kf, kr) = (2e6 / tau, 7e5 / tau);
    for p in &mut s.parameters {
        match p.name.as_str() {
            "kf1" => {
                p.kind = ParamKind::RateConstant { order: 1 };
                p.quantity = Quantity::new(kf, unit("1/s"));
            }
            "kr1" => {
                p.kind = ParamKind::RateConstant { order: 1 };
                p.quantity = Quantity::new(kr, unit("1/s"));
            }
            _ => {}
        }
    }
    (build_equations(&s).unwrap(), kf, kr)
}

#[test]
fn reversible_two_component_runs_reach_equilibrium() {
    let opts = SimOptions {
        method: SimMethod::Implicit,
        ..SimOptions::default()
    };
    for template in ["t02_iso_adiabatic_rev2", "t08_iso_cooled_rev2", "t14_noniso_adiabatic_rev2", "t20_noniso_cooled_rev2"] {
        for seed in 0..4 {
            let (sys, kf, kr) = near_equilibrium(template, seed);
            let tr = simulate_with(&sys, default_horizon(&sys).unwrap(), DEFAULT_STEPS, &opts).unwrap();
            let last = tr.times.len() - 1;
            let ratio = tr.value(last, "cB").unwrap() / tr.value(last, "cA").unwrap();
            let rel = (ratio / (kf / kr) - 1.0).abs();
            assert!(rel < 1e-3, "{template} seed {seed}: cB/cA = {ratio}, kf/kr = {}", kf / kr);
        }
    }
}

#[test]
fn forward_jacobian_matches_central_differences() {
    let templates = enumerate_templates();
    let mut checked = 0;
    for k in 0..20u64 {
        let t = &templates[(k as usize * 7) % templates.len()];
        let sys = build_equations(&instantiate(t, 100 + k).unwrap()).unwrap();
        let tr = simulate(&sys, default_horizon(&sys).unwrap(), 50).unwrap();
        let row = tr.times.len() / 3;
        let y_prev: Vec<f64> = tr.values[row - 1].clone();
        // Newton unknowns: derivatives of states, values of algebraics
        let z: Vec<f64> = sys
            .unknowns
            .iter()
            .enumerate()
            .map(|(j, v)| match v.kind {
                rxn2mo::physics::VarKind::State => tr.derivatives[row][j],
                rxn2mo::physics::VarKind::Algebraic => tr.values[row][j],
            })
            .collect();
        let h = tr.times[row] - tr.times[row - 1];
        let fwd = step_jacobian(&sys, &z, &y_prev, h, tr.times[row], 1e-7, false).unwrap();
        let cen = step_jacobian(&sys, &z, &y_prev, h, tr.times[row], 5e-8, true).unwrap();
        let scale = cen.iter().flatten().fold(0.0f64, |a, b| a.max(b.abs()));
        for (i, (a, b)) in fwd.iter().zip(&cen).enumerate() {
            for (j, (x, y)) in a.iter().zip(b).enumerate() {
                let tol = 1e-4 * y.abs().max(1e-6 * scale);
                assert!((x - y).abs() <= tol, "{} [{i}][{j}]: {x:e} vs {y:e}", t.id);
            }
        }
        checked += 1;
    }
    assert_eq!(checked, 20);
}
