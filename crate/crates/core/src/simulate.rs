//! Numerical integration of reference equation systems.
//!
//! ODE systems use fixed-step classical Runge-Kutta with step doubling until
//! two refinements agree. DAE systems (and stiff ODE systems) use implicit
//! Euler on the full residual with a damped Newton iteration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{BinOp, Expr};
use crate::physics::{normalized, Classification, EquationRole, EquationSystem, VarKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SimMethod {
    /// Explicit for ODE systems, falling back to implicit when the explicit
    /// refinement does not converge within the step limit.
    Auto,
    Explicit,
    Implicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub method: SimMethod,
    /// Relative agreement between successive explicit refinements.
    pub refinement_rtol: f64,
    /// Total explicit steps allowed before giving up.
    pub max_steps: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Relative perturbation for forward-difference Jacobians.
    pub fd_rel_step: f64,
    /// How often an implicit step may be split in half after a Newton failure.
    pub max_halvings: u32,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            method: SimMethod::Auto,
            refinement_rtol: 1e-6,
            max_steps: 32_000,
            newton_tol: 1e-10,
            newton_max_iter: 50,
            fd_rel_step: 1e-7,
            max_halvings: 20,
        }
    }
}

pub const DEFAULT_STEPS: usize = 1000;

/// Residuals within this fraction of the magnitude of their terms are
/// treated as rounding noise by the Newton iteration.
const ROUNDING_FLOOR: f64 = 1e-15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("Newton iteration diverged at step {step} (t = {time})")]
    NewtonDivergence { step: usize, time: f64 },
    #[error("explicit refinement did not converge within {0} steps")]
    StepLimitExceeded(usize),
    #[error("non-finite state at t = {0}")]
    NonFiniteState(f64),
    #[error("system is not simulatable: {0}")]
    Unsupported(String),
}

/// Sampled solution. `values[i][j]` is unknown `names[j]` at `times[i]`;
/// `derivatives` holds the time derivatives the equations were solved with
/// (NaN where none is defined).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub names: Vec<String>,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub derivatives: Vec<Vec<f64>>,
    pub parameters: BTreeMap<String, f64>,
    pub method: SimMethod,
    /// Rows before this index are initial values, not solutions of the
    /// equations (implicit runs start from inconsistent algebraic guesses).
    pub first_consistent: usize,
    /// Largest absolute residual of the algebraic constraints per row.
    pub constraint_residuals: Vec<f64>,
}

impl Trajectory {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Values of an unknown over time; a parameter gives a constant column.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        if let Some(j) = self.column_index(name) {
            return Some(self.values.iter().map(|r| r[j]).collect());
        }
        self.parameters.get(name).map(|v| vec![*v; self.times.len()])
    }

    pub fn value(&self, row: usize, name: &str) -> Option<f64> {
        match self.column_index(name) {
            Some(j) => Some(self.values[row][j]),
            None => self.parameters.get(name).copied(),
        }
    }

    pub fn derivative(&self, row: usize, name: &str) -> Option<f64> {
        match self.column_index(name) {
            Some(j) => Some(self.derivatives[row][j]),
            None => self.parameters.get(name).map(|_| 0.0),
        }
    }

    pub fn last(&self) -> &[f64] {
        self.values.last().expect("trajectory has rows")
    }

    /// `time` plus one column per unknown.
    pub fn to_delimited(&self, sep: char) -> String {
        let mut out = String::from("time");
        for n in &self.names {
            out.push(sep);
            out.push_str(n);
        }
        out.push('\n');
        for (t, row) in self.times.iter().zip(&self.values) {
            let _ = write!(out, "{t:e}");
            for v in row {
                let _ = write!(out, "{sep}{v:e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_delimited(&self, path: &Path, sep: char) -> std::io::Result<()> {
        std::fs::write(path, self.to_delimited(sep))
    }
}

/// Ten residence times, `10 V / q`.
pub fn default_horizon(sys: &EquationSystem) -> Option<f64> {
    let p = sys.parameter_values();
    let v = p.get("V").or_else(|| p.get("V_spec"))?;
    let q = p.get("q")?;
    Some(10.0 * v / q)
}

/// Integrates `sys` from its start values to `t_end`, recording `n_steps + 1`
/// evenly spaced rows.
pub fn simulate(sys: &EquationSystem, t_end: f64, n_steps: usize) -> Result<Trajectory, SimError> {
    simulate_with(sys, t_end, n_steps, &SimOptions::default())
}

pub fn simulate_with(
    sys: &EquationSystem,
    t_end: f64,
    n_steps: usize,
    opts: &SimOptions,
) -> Result<Trajectory, SimError> {
    if n_steps == 0 || !(t_end > 0.0) {
        return Err(SimError::Unsupported("need a positive horizon and at least one step".into()));
    }
    let model = Model::new(sys)?;
    let traj = match (opts.method, sys.classification) {
        (SimMethod::Implicit, _) | (_, Classification::Dae) => model.implicit(t_end, n_steps, opts)?,
        (SimMethod::Explicit, Classification::Ode) => model.explicit(t_end, n_steps, opts, false)?,
        (SimMethod::Auto, Classification::Ode) => match model.explicit(t_end, n_steps, opts, true) {
            Ok(t) => t,
            Err(SimError::StepLimitExceeded(_) | SimError::NonFiniteState(_)) => model.implicit(t_end, n_steps, opts)?,
            Err(e) => return Err(e),
        },
    };
    Ok(traj)
}

/// Forward-difference Jacobian of the implicit Euler step residual. The
/// Newton unknowns `z` are the derivatives of states and the values of
/// algebraic unknowns at the new time level. `central` switches to central
/// differences.
pub fn step_jacobian(
    sys: &EquationSystem,
    z: &[f64],
    y_prev: &[f64],
    h: f64,
    t: f64,
    rel_step: f64,
    central: bool,
) -> Result<Vec<Vec<f64>>, SimError> {
    let model = Model::new(sys)?;
    let jac = model.jacobian(z, y_prev, h, t, rel_step, central);
    Ok((0..model.n).map(|i| (0..model.n).map(|j| jac[(i, j)]).collect()).collect())
}

#[derive(Debug, Clone)]
enum Node {
    Const(f64),
    Var(usize),
    Der(usize),
    Time,
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Powi(Box<Node>, i32),
    Call(fn(f64) -> f64, Box<Node>),
}

impl Node {
    fn eval(&self, y: &[f64], d: &[f64], t: f64) -> f64 {
        match self {
            Node::Const(v) => *v,
            Node::Var(i) => y[*i],
            Node::Der(i) => d[*i],
            Node::Time => t,
            Node::Neg(a) => -a.eval(y, d, t),
            Node::Bin(op, a, b) => {
                let x = a.eval(y, d, t);
                let z = b.eval(y, d, t);
                match op {
                    BinOp::Add => x + z,
                    BinOp::Sub => x - z,
                    BinOp::Mul => x * z,
                    BinOp::Div => x / z,
                    BinOp::Pow => x.powf(z),
                }
            }
            Node::Powi(a, n) => a.eval(y, d, t).powi(*n),
            Node::Call(f, a) => f(a.eval(y, d, t)),
        }
    }
}

impl Node {
    /// Sum of the magnitudes of the terms, the scale of rounding errors in
    /// `eval`. `dm` bounds the magnitude of each derivative.
    fn magnitude(&self, y: &[f64], d: &[f64], dm: &[f64], t: f64) -> f64 {
        match self {
            Node::Const(v) => v.abs(),
            Node::Var(i) => y[*i].abs(),
            Node::Der(i) => dm[*i],
            Node::Time => t.abs(),
            Node::Neg(a) => a.magnitude(y, d, dm, t),
            Node::Bin(BinOp::Add | BinOp::Sub, a, b) => a.magnitude(y, d, dm, t) + b.magnitude(y, d, dm, t),
            Node::Bin(BinOp::Mul, a, b) => a.magnitude(y, d, dm, t) * b.magnitude(y, d, dm, t),
            Node::Bin(BinOp::Div, a, b) => a.magnitude(y, d, dm, t) / b.eval(y, d, t).abs(),
            _ => self.eval(y, d, t).abs(),
        }
    }
}

fn function(name: &str) -> Option<fn(f64) -> f64> {
    Some(match name {
        "exp" => f64::exp,
        "log" | "ln" => f64::ln,
        "log10" => f64::log10,
        "sqrt" => f64::sqrt,
        "abs" => f64::abs,
        "sin" => f64::sin,
        "cos" => f64::cos,
        "tan" => f64::tan,
        "tanh" => f64::tanh,
        _ => return None,
    })
}

struct Compiler<'a> {
    slots: &'a BTreeMap<&'a str, usize>,
    params: &'a BTreeMap<String, f64>,
}

impl Compiler<'_> {
    fn compile(&self, e: &Expr) -> Result<Node, SimError> {
        Ok(match e {
            Expr::Num(v) => Node::Const(*v),
            Expr::Sym(s) if s == "time" => Node::Time,
            Expr::Sym(s) => match self.slots.get(s.as_str()) {
                Some(i) => Node::Var(*i),
                None => Node::Const(
                    *self
                        .params
                        .get(s)
                        .ok_or_else(|| SimError::Unsupported(format!("unbound symbol `{s}`")))?,
                ),
            },
            Expr::Neg(a) => Node::Neg(Box::new(self.compile(a)?)),
            Expr::Bin(BinOp::Pow, a, b) => match **b {
                Expr::Num(p) if p.fract() == 0.0 && p.abs() < 1e6 => Node::Powi(Box::new(self.compile(a)?), p as i32),
                _ => Node::Bin(BinOp::Pow, Box::new(self.compile(a)?), Box::new(self.compile(b)?)),
            },
            Expr::Bin(op, a, b) => Node::Bin(*op, Box::new(self.compile(a)?), Box::new(self.compile(b)?)),
            Expr::Call(name, args) if name == "der" => match args.as_slice() {
                [Expr::Sym(s)] => match self.slots.get(s.as_str()) {
                    Some(i) => Node::Der(*i),
                    None if self.params.contains_key(s) => Node::Const(0.0),
                    None => return Err(SimError::Unsupported(format!("unbound symbol `{s}`"))),
                },
                _ => return Err(SimError::Unsupported("der() of an expression".into())),
            },
            Expr::Call(name, args) => match (function(name), args.as_slice()) {
                (Some(f), [a]) => Node::Call(f, Box::new(self.compile(a)?)),
                _ => return Err(SimError::Unsupported(format!("function `{name}`"))),
            },
        })
    }
}

struct CompiledEq {
    lhs: Node,
    rhs: Node,
    /// Unknowns whose derivative appears.
    ders: Vec<usize>,
    constraint: bool,
}

impl CompiledEq {
    fn residual(&self, y: &[f64], d: &[f64], t: f64) -> f64 {
        self.lhs.eval(y, d, t) - self.rhs.eval(y, d, t)
    }

    fn sides(&self, y: &[f64], d: &[f64], t: f64) -> (f64, f64) {
        (self.lhs.eval(y, d, t), self.rhs.eval(y, d, t))
    }
}

struct Model {
    names: Vec<String>,
    n: usize,
    states: Vec<usize>,
    eqs: Vec<CompiledEq>,
    params: BTreeMap<String, f64>,
    start: Vec<f64>,
    /// Explicit definitions `v = f(...)` in evaluation order: (slot, equation).
    aux: Vec<(usize, usize)>,
    /// Remaining equations, which carry the derivatives.
    differential: Vec<usize>,
    /// (equation, state) pairs when every remaining equation holds the
    /// derivative of exactly one distinct state.
    direct: Option<Vec<(usize, usize)>>,
    /// Equations each unknown appears in, directly or differentiated.
    columns: Vec<Vec<usize>>,
    is_state: Vec<bool>,
}

impl Model {
    fn new(sys: &EquationSystem) -> Result<Model, SimError> {
        if !sys.is_square() {
            return Err(SimError::Unsupported(format!(
                "{} equations for {} unknowns",
                sys.equations.len(),
                sys.unknowns.len()
            )));
        }
        let params: BTreeMap<String, f64> = sys.parameters.iter().map(|p| (p.name.clone(), p.quantity.value)).collect();
        let slots: BTreeMap<&str, usize> = sys.unknowns.iter().enumerate().map(|(i, v)| (v.name.as_str(), i)).collect();
        let compiler = Compiler {
            slots: &slots,
            params: &params,
        };
        let mut eqs = Vec::new();
        for e in &sys.equations {
            let mut ders: Vec<usize> = e
                .lhs
                .differentiated_symbols()
                .into_iter()
                .chain(e.rhs.differentiated_symbols())
                .filter_map(|s| slots.get(s.as_str()).copied())
                .collect();
            ders.sort_unstable();
            ders.dedup();
            eqs.push(CompiledEq {
                lhs: compiler.compile(&e.lhs)?,
                rhs: compiler.compile(&e.rhs)?,
                ders,
                constraint: e.role == EquationRole::Constraint,
            });
        }
        let n = sys.unknowns.len();
        let states: Vec<usize> = (0..n).filter(|&i| sys.unknowns[i].kind == VarKind::State).collect();
        let mut start = vec![0.0; n];
        for &i in &states {
            start[i] = sys
                .start_value(&sys.unknowns[i])
                .ok_or_else(|| SimError::Unsupported(format!("no start value for `{}`", sys.unknowns[i].name)))?;
        }

        // explicit definitions of algebraic unknowns, in dependency order
        let mut known: Vec<bool> = (0..n).map(|i| sys.unknowns[i].kind == VarKind::State).collect();
        let mut aux = Vec::new();
        let mut used = vec![false; eqs.len()];
        loop {
            let before = aux.len();
            for (k, e) in sys.equations.iter().enumerate() {
                let Expr::Sym(target) = &e.lhs else { continue };
                let Some(&slot) = slots.get(target.as_str()) else { continue };
                if used[k] || known[slot] || e.rhs.contains_der() {
                    continue;
                }
                let ready = e
                    .rhs
                    .symbols()
                    .iter()
                    .all(|s| slots.get(s.as_str()).is_none_or(|&j| j != slot && known[j]));
                if ready {
                    known[slot] = true;
                    used[k] = true;
                    aux.push((slot, k));
                }
            }
            if aux.len() == before {
                break;
            }
        }
        let mut columns = vec![Vec::new(); n];
        for (k, e) in sys.equations.iter().enumerate() {
            for sym in e.symbols() {
                if let Some(&j) = slots.get(sym.as_str()) {
                    columns[j].push(k);
                }
            }
        }
        let differential: Vec<usize> = (0..eqs.len()).filter(|k| !used[*k]).collect();
        let mut direct: Vec<(usize, usize)> = differential
            .iter()
            .filter(|&&k| eqs[k].ders.len() == 1 && states.contains(&eqs[k].ders[0]))
            .map(|&k| (k, eqs[k].ders[0]))
            .collect();
        let mut covered: Vec<usize> = direct.iter().map(|p| p.1).collect();
        covered.sort_unstable();
        covered.dedup();
        let direct = (direct.len() == differential.len() && covered == states).then(|| {
            direct.shrink_to_fit();
            direct
        });
        let mut m = Model {
            names: sys.unknowns.iter().map(|v| v.name.clone()).collect(),
            n,
            states,
            eqs,
            params,
            start,
            aux,
            differential,
            direct,
            columns,
            is_state: (0..n).map(|i| sys.unknowns[i].kind == VarKind::State).collect(),
        };
        let mut y = m.start.clone();
        m.fill_aux(&mut y, 0.0);
        m.start = y;
        Ok(m)
    }

    fn fill_aux(&self, y: &mut [f64], t: f64) {
        for &(slot, k) in &self.aux {
            // definitions are free of der(), so the derivative slice is unused
            y[slot] = self.eqs[k].rhs.eval(y, y, t);
        }
    }

    fn constraint_residual(&self, y: &[f64], d: &[f64], t: f64) -> f64 {
        self.eqs
            .iter()
            .filter(|e| e.constraint)
            .map(|e| e.residual(y, d, t).abs())
            .fold(0.0, f64::max)
    }

    /// State derivatives of an ODE system: the differential equations are
    /// linear in the derivatives, `A d + b = 0`.
    fn ode_rhs(&self, y: &mut [f64], t: f64, out: &mut [f64]) -> Result<(), SimError> {
        self.fill_aux(y, t);
        if let Some(direct) = &self.direct {
            // each balance carries one derivative: residual = a*d + b
            for &(k, s) in direct {
                let e = &self.eqs[k];
                out[s] = 0.0;
                let b = e.residual(y, out, t);
                out[s] = 1.0;
                let a = e.residual(y, out, t) - b;
                out[s] = -b / a;
                if !out[s].is_finite() {
                    return Err(SimError::NonFiniteState(t));
                }
            }
            return Ok(());
        }
        let ns = self.states.len();
        let mut d = vec![0.0; self.n];
        let mut a = DMatrix::<f64>::zeros(ns, ns);
        let mut b = DVector::<f64>::zeros(ns);
        for (row, &k) in self.differential.iter().enumerate() {
            let e = &self.eqs[k];
            let b0 = e.residual(y, &d, t);
            b[row] = -b0;
            for &s in &e.ders {
                d[s] = 1.0;
                let c = self.states.iter().position(|x| *x == s).expect("derivatives are of states");
                a[(row, c)] = e.residual(y, &d, t) - b0;
                d[s] = 0.0;
            }
        }
        let sol = a.lu().solve(&b).ok_or(SimError::NonFiniteState(t))?;
        for (c, &s) in self.states.iter().enumerate() {
            out[s] = sol[c];
        }
        if sol.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(SimError::NonFiniteState(t))
        }
    }

    fn rk4_run(&self, t_end: f64, steps: usize, record_every: usize) -> Result<Vec<Vec<f64>>, SimError> {
        let h = t_end / steps as f64;
        let n = self.n;
        let mut y = self.start.clone();
        let mut rows = vec![y.clone()];
        let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut tmp = vec![0.0; n];
        for step in 0..steps {
            let t = step as f64 * h;
            self.ode_rhs(&mut y, t, &mut k1)?;
            for &s in &self.states {
                tmp[s] = y[s] + 0.5 * h * k1[s];
            }
            self.ode_rhs(&mut tmp, t + 0.5 * h, &mut k2)?;
            for &s in &self.states {
                tmp[s] = y[s] + 0.5 * h * k2[s];
            }
            self.ode_rhs(&mut tmp, t + 0.5 * h, &mut k3)?;
            for &s in &self.states {
                tmp[s] = y[s] + h * k3[s];
            }
            self.ode_rhs(&mut tmp, t + h, &mut k4)?;
            for &s in &self.states {
                y[s] += h / 6.0 * (k1[s] + 2.0 * k2[s] + 2.0 * k3[s] + k4[s]);
                if !y[s].is_finite() {
                    return Err(SimError::NonFiniteState(t + h));
                }
            }
            if (step + 1) % record_every == 0 {
                rows.push(y.clone());
            }
        }
        Ok(rows)
    }

    /// Row-sum bound on the spectral radius of the state Jacobian at the
    /// start point.
    fn stiffness_bound(&self) -> Result<f64, SimError> {
        let mut y = self.start.clone();
        let mut f0 = vec![0.0; self.n];
        self.ode_rhs(&mut y, 0.0, &mut f0)?;
        let mut row_sums = vec![0.0; self.n];
        for &j in &self.states {
            let mut yp = self.start.clone();
            let dx = 1e-7 * yp[j].abs().max(1e-10);
            yp[j] += dx;
            let mut f1 = vec![0.0; self.n];
            self.ode_rhs(&mut yp, 0.0, &mut f1)?;
            for &i in &self.states {
                row_sums[i] += ((f1[i] - f0[i]) / dx).abs();
            }
        }
        Ok(row_sums.into_iter().fold(0.0, f64::max))
    }

    fn explicit(&self, t_end: f64, n_steps: usize, opts: &SimOptions, screen: bool) -> Result<Trajectory, SimError> {
        let mut factor = 1;
        if screen {
            // classical RK4 is stable for |h lambda| below about 2.78
            let needed = t_end * self.stiffness_bound()? / 2.5;
            if needed > opts.max_steps as f64 {
                return Err(SimError::StepLimitExceeded(opts.max_steps));
            }
            while ((n_steps * factor) as f64) < needed {
                factor *= 2;
            }
        }
        let mut coarse = self.rk4_run(t_end, n_steps * factor, factor);
        loop {
            if n_steps * factor * 2 > opts.max_steps {
                return Err(match coarse {
                    Err(e @ SimError::NonFiniteState(_)) if !screen => e,
                    _ => SimError::StepLimitExceeded(opts.max_steps),
                });
            }
            factor *= 2;
            let fine = self.rk4_run(t_end, n_steps * factor, factor);
            if let (Ok(c), Ok(f)) = (&coarse, &fine) {
                let diff = self.difference(c, f);
                if diff <= opts.refinement_rtol {
                    let rows = fine.expect("checked");
                    return Ok(self.explicit_trajectory(t_end, rows));
                }
                // the error of a fourth-order method drops 16-fold per halving
                if screen && (n_steps * factor) as f64 * (diff / opts.refinement_rtol).powf(0.25) > opts.max_steps as f64 {
                    return Err(SimError::StepLimitExceeded(opts.max_steps));
                }
            }
            coarse = fine;
        }
    }

    /// Largest state difference between two runs on the same output grid,
    /// relative to each state's magnitude.
    fn difference(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        let mut worst: f64 = 0.0;
        for &s in &self.states {
            let scale = b.iter().map(|r| r[s].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
            for (x, y) in a.iter().zip(b) {
                worst = worst.max((x[s] - y[s]).abs() / scale);
            }
        }
        worst
    }

    fn explicit_trajectory(&self, t_end: f64, mut rows: Vec<Vec<f64>>) -> Trajectory {
        let steps = rows.len() - 1;
        let mut derivatives = Vec::with_capacity(rows.len());
        let mut constraint_residuals = Vec::with_capacity(rows.len());
        let mut times = Vec::with_capacity(rows.len());
        for (i, y) in rows.iter_mut().enumerate() {
            let t = t_end * i as f64 / steps as f64;
            let mut d = vec![f64::NAN; self.n];
            // finite by construction of an accepted run
            let _ = self.ode_rhs(y, t, &mut d);
            constraint_residuals.push(self.constraint_residual(y, &d, t));
            derivatives.push(d);
            times.push(t);
        }
        Trajectory {
            names: self.names.clone(),
            times,
            values: rows,
            derivatives,
            parameters: self.params.clone(),
            method: SimMethod::Explicit,
            first_consistent: 0,
            constraint_residuals,
        }
    }

    /// Newton unknowns are the derivatives of states and the values of
    /// algebraic unknowns, so difference quotients never amplify rounding
    /// in the states.
    fn expand(&self, z: &[f64], y_prev: &[f64], h: f64, y: &mut [f64], d: &mut [f64]) {
        for j in 0..self.n {
            if self.is_state[j] {
                d[j] = z[j];
                y[j] = y_prev[j] + h * z[j];
            } else {
                y[j] = z[j];
                d[j] = (z[j] - y_prev[j]) / h;
            }
        }
    }

    /// Perturbation scale for unknown `j`: one unit of the value, or the
    /// derivative that moves the state by one unit over the step.
    fn scale(&self, j: usize, z: &[f64], y_prev: &[f64], h: f64) -> f64 {
        let typical = y_prev[j].abs().max(self.start[j].abs()).max(1.0);
        if self.is_state[j] {
            z[j].abs().max(typical / h)
        } else {
            z[j].abs().max(typical)
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn step_residual(&self, z: &[f64], y_prev: &[f64], h: f64, t: f64, y: &mut [f64], d: &mut [f64], out: &mut [f64]) {
        self.expand(z, y_prev, h, y, d);
        for (i, e) in self.eqs.iter().enumerate() {
            out[i] = e.residual(y, d, t);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn jacobian(&self, z: &[f64], y_prev: &[f64], h: f64, t: f64, rel: f64, central: bool) -> DMatrix<f64> {
        let n = self.n;
        let mut jac = DMatrix::zeros(n, n);
        let mut y = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut zp = z.to_vec();
        for j in 0..n {
            let dx = rel * self.scale(j, z, y_prev, h);
            let column = &self.columns[j];
            let base: Vec<f64> = {
                if central {
                    zp[j] = z[j] - dx;
                }
                self.expand(&zp, y_prev, h, &mut y, &mut d);
                column.iter().map(|&i| self.eqs[i].residual(&y, &d, t)).collect()
            };
            zp[j] = z[j] + dx;
            self.expand(&zp, y_prev, h, &mut y, &mut d);
            let width = if central { 2.0 * dx } else { dx };
            for (&i, g0) in column.iter().zip(base) {
                jac[(i, j)] = (self.eqs[i].residual(&y, &d, t) - g0) / width;
            }
            zp[j] = z[j];
        }
        jac
    }

    /// Below 1 when every equation meets the normalized tolerance or sits at
    /// the rounding floor of its terms.
    fn newton_error(&self, y: &[f64], d: &[f64], t: f64, tol: f64) -> f64 {
        let dm: Vec<f64> = d.iter().map(|v| v.abs()).collect();
        self.eqs
            .iter()
            .map(|e| {
                let (l, r) = e.sides(y, d, t);
                let m = e.lhs.magnitude(y, d, &dm, t) + e.rhs.magnitude(y, d, &dm, t);
                (normalized(l, r) / tol).min((l - r).abs() / (ROUNDING_FLOOR * (1.0 + m)))
            })
            .fold(0.0, |m, v| if v.is_nan() { f64::INFINITY } else { m.max(v) })
    }

    /// Solves one implicit Euler step for `z`, which holds the initial guess
    /// on entry.
    fn newton(&self, z: &mut Vec<f64>, y_prev: &[f64], h: f64, t: f64, opts: &SimOptions) -> bool {
        let n = self.n;
        let mut y = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut g = vec![0.0; n];
        let mut trial = z.clone();
        // scaled Jacobian factorization, reused while convergence is fast
        let mut factored: Option<(nalgebra::linalg::LU<f64, nalgebra::Dyn, nalgebra::Dyn>, Vec<f64>)> = None;
        let mut last_merit = f64::INFINITY;
        for _ in 0..opts.newton_max_iter {
            self.step_residual(z, y_prev, h, t, &mut y, &mut d, &mut g);
            let err = self.newton_error(&y, &d, t, opts.newton_tol);
            if err < 1.0 {
                return true;
            }
            if !err.is_finite() {
                return false;
            }
            let fresh = factored.is_none();
            if fresh {
                let scale: Vec<f64> = self
                    .eqs
                    .iter()
                    .map(|e| {
                        let (l, r) = e.sides(&y, &d, t);
                        1.0 / (1.0 + l.abs() + r.abs())
                    })
                    .collect();
                let mut jac = self.jacobian(z, y_prev, h, t, opts.fd_rel_step, false);
                for i in 0..n {
                    for j in 0..n {
                        jac[(i, j)] *= scale[i];
                    }
                }
                factored = Some((jac.lu(), scale));
            }
            let (lu, scale) = factored.as_ref().expect("factored above");
            let merit = |v: &[f64]| -> f64 { v.iter().zip(scale).map(|(a, b)| (a * b).powi(2)).sum::<f64>() };
            let m0 = merit(&g);
            let rhs = DVector::from_iterator(n, (0..n).map(|i| -g[i] * scale[i]));
            let delta = match lu.solve(&rhs) {
                Some(x) if x.iter().all(|v| v.is_finite()) => x,
                _ if fresh => return false,
                _ => {
                    factored = None;
                    continue;
                }
            };
            // keep states positive
            let mut lambda: f64 = 1.0;
            for &s in &self.states {
                if delta[s] < 0.0 && y[s] > 0.0 {
                    lambda = lambda.min(0.9 * y[s] / (-h * delta[s]));
                }
            }
            let mut accepted = None;
            for _ in 0..30 {
                for j in 0..n {
                    trial[j] = z[j] + lambda * delta[j];
                }
                self.step_residual(&trial, y_prev, h, t, &mut y, &mut d, &mut g);
                let m1 = merit(&g);
                if m1.is_finite() && m1 <= (1.0 - 1e-4 * lambda) * m0 {
                    accepted = Some(m1);
                    break;
                }
                lambda *= 0.5;
            }
            match accepted {
                Some(m1) => {
                    std::mem::swap(z, &mut trial);
                    if lambda < 1.0 || m1 > 0.0625 * m0.min(last_merit) {
                        factored = None;
                    }
                    last_merit = m1;
                }
                None if !fresh => factored = None,
                None => return false,
            }
        }
        self.step_residual(z, y_prev, h, t, &mut y, &mut d, &mut g);
        self.newton_error(&y, &d, t, opts.newton_tol) < 1.0
    }

    /// Advances from `t` by `h`, halving on Newton failure. Returns the new
    /// point and the derivatives of its last substep.
    fn advance(
        &self,
        y_prev: &[f64],
        t: f64,
        h: f64,
        depth: u32,
        opts: &SimOptions,
    ) -> Option<(Vec<f64>, Vec<f64>)> {
        let mut z: Vec<f64> = (0..self.n).map(|j| if self.is_state[j] { 0.0 } else { y_prev[j] }).collect();
        if self.newton(&mut z, y_prev, h, t + h, opts) {
            let mut y = vec![0.0; self.n];
            let mut d = vec![0.0; self.n];
            self.expand(&z, y_prev, h, &mut y, &mut d);
            return Some((y, d));
        }
        if depth >= opts.max_halvings {
            return None;
        }
        let (mid, _) = self.advance(y_prev, t, 0.5 * h, depth + 1, opts)?;
        self.advance(&mid, t + 0.5 * h, 0.5 * h, depth + 1, opts)
    }

    fn implicit(&self, t_end: f64, n_steps: usize, opts: &SimOptions) -> Result<Trajectory, SimError> {
        let h = t_end / n_steps as f64;
        let mut times = vec![0.0];
        let mut values = vec![self.start.clone()];
        let mut derivatives = vec![vec![f64::NAN; self.n]];
        let mut constraint_residuals = vec![f64::NAN];
        let mut y = self.start.clone();
        for step in 0..n_steps {
            let t = step as f64 * h;
            let (next, d) = self
                .advance(&y, t, h, 0, opts)
                .ok_or(SimError::NewtonDivergence { step: step + 1, time: t + h })?;
            if next.iter().any(|v| !v.is_finite()) {
                return Err(SimError::NonFiniteState(t + h));
            }
            let t1 = (step + 1) as f64 * h;
            constraint_residuals.push(self.constraint_residual(&next, &d, t1));
            times.push(t1);
            values.push(next.clone());
            derivatives.push(d);
            y = next;
        }
        // algebraic unknowns without an explicit definition take their first
        // solved value at the start row
        let defined: Vec<bool> = (0..self.n)
            .map(|j| self.states.contains(&j) || self.aux.iter().any(|(s, _)| *s == j))
            .collect();
        for j in 0..self.n {
            if !defined[j] {
                values[0][j] = values[1][j];
            }
        }
        constraint_residuals[0] = self.constraint_residual(&values[0], &derivatives[0], 0.0);
        Ok(Trajectory {
            names: self.names.clone(),
            times,
            values,
            derivatives,
            parameters: self.params.clone(),
            method: SimMethod::Implicit,
            first_consistent: 1,
            constraint_residuals,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::build_equations;
    use crate::scenario::{enumerate_templates, instantiate};
    use std::collections::HashMap;

    fn system(template: usize, seed: u64) -> EquationSystem {
        build_equations(&instantiate(&enumerate_templates()[template], seed).unwrap()).unwrap()
    }

    fn max_residual(sys: &EquationSystem, tr: &Trajectory) -> f64 {
        let mut worst: f64 = 0.0;
        for row in tr.first_consistent..tr.times.len() {
            let vals: HashMap<String, f64> = tr.names.iter().cloned().zip(tr.values[row].iter().copied()).collect();
            let ders: HashMap<String, f64> =
                tr.names.iter().cloned().zip(tr.derivatives[row].iter().copied()).collect();
            for r in sys.normalized_residual(&vals, &ders, tr.times[row]).unwrap() {
                worst = worst.max(r);
            }
        }
        worst
    }

    #[test]
    fn first_order_decay_matches_the_closed_form() {
        let mut sc = instantiate(&enumerate_templates()[0], 3).unwrap();
        let r = &mut sc.scheme.reactions[0];
        r.reactants[0].1 = 1;
        r.products[0].1 = 1;
        for p in &mut sc.parameters {
            match p.name.as_str() {
                "kf1" => {
                    p.kind = crate::scenario::ParamKind::RateConstant { order: 1 };
                    p.quantity = crate::units::Quantity::new(0.01, crate::units::unit("1/s"));
                }
                "q" => p.quantity = crate::units::Quantity::new(0.001, crate::units::unit("m3/s")),
                "V" => p.quantity = crate::units::Quantity::new(0.1, crate::units::unit("m3")),
                _ => {}
            }
        }
        let sys = build_equations(&sc).unwrap();
        let p = sys.parameter_values();
        let (a, c_in, c0) = (0.01 + 0.01, p["cA_in"], p["cA0"]);
        let ss = 0.01 * c_in / a;
        let tr = simulate(&sys, 500.0, 100).unwrap();
        assert_eq!(tr.method, SimMethod::Explicit);
        let j = tr.column_index("cA").unwrap();
        for (t, row) in tr.times.iter().zip(&tr.values) {
            let exact = ss + (c0 - ss) * (-a * t).exp();
            assert!((row[j] - exact).abs() <= 1e-8 * c0.max(c_in), "{t} {} {exact}", row[j]);
        }
    }

    #[test]
    fn isothermal_temperature_is_constant_and_residuals_vanish() {
        let sys = system(2, 1);
        let tr = simulate(&sys, default_horizon(&sys).unwrap(), DEFAULT_STEPS).unwrap();
        let t = tr.column("T").unwrap();
        assert!(t.iter().all(|v| v.to_bits() == t[0].to_bits()));
        assert!(max_residual(&sys, &tr) < 1e-9);
    }

    #[test]
    fn dae_run_keeps_the_constraints() {
        let sys = system(24, 2);
        assert_eq!(sys.classification, Classification::Dae);
        let tr = simulate(&sys, default_horizon(&sys).unwrap(), 200).unwrap();
        assert_eq!(tr.method, SimMethod::Implicit);
        assert!(tr.constraint_residuals[1..].iter().all(|r| *r < 1e-8), "{:?}", tr.constraint_residuals);
        let m = max_residual(&sys, &tr);
        assert!(m < 1e-9, "{m:e}");
        let v = tr.column("V").unwrap();
        assert!(v.iter().all(|x| (x - v[0]).abs() < 1e-9 * v[0]));
    }

    #[test]
    fn implicit_and_explicit_agree_at_steady_state() {
        let sys = system(10, 5);
        let t_end = default_horizon(&sys).unwrap();
        let a = simulate_with(&sys, t_end, 400, &SimOptions { method: SimMethod::Explicit, ..Default::default() }).unwrap();
        let b = simulate_with(&sys, t_end, 400, &SimOptions { method: SimMethod::Implicit, ..Default::default() }).unwrap();
        for (x, y) in a.last().iter().zip(b.last()) {
            assert!((x - y).abs() <= 1e-3 * x.abs().max(1e-6), "{x} {y}");
        }
    }

    #[test]
    fn export_has_a_column_per_unknown() {
        let sys = system(0, 1);
        let tr = simulate(&sys, 10.0, 4).unwrap();
        let text = tr.to_delimited(',');
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 6);
        assert!(lines.iter().all(|l| l.split(',').count() == 1 + sys.unknowns.len()));
        assert!(lines[0].starts_with("time,cA,cB"));
    }
}
