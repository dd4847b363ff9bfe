//! Structured reactor scenarios: the templates, their random instantiation,
//! and the parameter roles shared by question and answer rendering.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::units::{registry, unit, Quantity, Unit};

/// Species letters in declaration order. Five-component schemes add `D`.
pub const SPECIES: [&str; 5] = ["A", "B", "C", "D", "E"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OperationMode {
    pub isothermal: bool,
    pub adiabatic: bool,
}

impl OperationMode {
    pub const ALL: [OperationMode; 4] = [
        OperationMode { isothermal: true, adiabatic: true },
        OperationMode { isothermal: true, adiabatic: false },
        OperationMode { isothermal: false, adiabatic: true },
        OperationMode { isothermal: false, adiabatic: false },
    ];

    pub fn slug(&self) -> &'static str {
        match (self.isothermal, self.adiabatic) {
            (true, true) => "iso_adiabatic",
            (true, false) => "iso_cooled",
            (false, true) => "noniso_adiabatic",
            (false, false) => "noniso_cooled",
        }
    }

    pub fn phrase(&self) -> &'static str {
        match (self.isothermal, self.adiabatic) {
            (true, true) => "isothermally and adiabatically",
            (true, false) => "isothermally and non-adiabatically",
            (false, true) => "non-isothermally and adiabatically",
            (false, false) => "non-isothermally and non-adiabatically",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensityModel {
    pub constant_density: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrheniusSpec {
    pub pre_exponential: String,
    pub activation_energy: String,
}

/// Which parameters carry the rate constants of one reaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KineticsSpec {
    pub forward: String,
    pub reverse: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forward_arrhenius: Option<ArrheniusSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reverse_arrhenius: Option<ArrheniusSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reaction {
    pub reactants: Vec<(String, u32)>,
    pub products: Vec<(String, u32)>,
    pub reversible: bool,
    pub kinetics: KineticsSpec,
}

impl Reaction {
    /// Signed stoichiometric coefficient: negative for reactants.
    pub fn signed_nu(&self, species: &str) -> i64 {
        let find = |side: &[(String, u32)]| side.iter().find(|(s, _)| s == species).map(|(_, n)| *n as i64);
        find(&self.products).unwrap_or(0) - find(&self.reactants).unwrap_or(0)
    }

    pub fn forward_order(&self) -> u32 {
        self.reactants.iter().map(|(_, n)| n).sum()
    }

    pub fn reverse_order(&self) -> u32 {
        self.products.iter().map(|(_, n)| n).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReactionScheme {
    pub components: Vec<String>,
    pub reactions: Vec<Reaction>,
}

impl ReactionScheme {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let n = self.components.len();
        if !(2..=5).contains(&n) {
            return Err(ScenarioError::Invalid(format!("{n} components")));
        }
        let distinct: BTreeSet<_> = self.components.iter().collect();
        if distinct.len() != n {
            return Err(ScenarioError::Invalid("duplicate components".into()));
        }
        for c in &self.components {
            if !self.reactions.iter().any(|r| r.signed_nu(c) != 0) {
                return Err(ScenarioError::Invalid(format!("component {c} takes part in no reaction")));
            }
        }
        for r in &self.reactions {
            if r.reactants.is_empty() || r.products.is_empty() {
                return Err(ScenarioError::Invalid("empty reaction side".into()));
            }
            if r.reactants.iter().any(|(s, _)| r.products.iter().any(|(p, _)| p == s)) {
                return Err(ScenarioError::Invalid("species on both sides".into()));
            }
            if r.reactants.iter().chain(&r.products).any(|(_, n)| !(1..=15).contains(n)) {
                return Err(ScenarioError::Invalid("stoichiometric number outside 1..=15".into()));
            }
        }
        Ok(())
    }
}

/// Physical kind of a parameter, which fixes its dimension and the units a
/// prompt may quote it in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    FlowRate,
    Volume,
    Concentration,
    Temperature,
    Density,
    HeatCapacity,
    MolarEnergy,
    HeatTransfer,
    MolarMass,
    MolarEntropy,
    /// Mass-action rate constant of the given overall order.
    RateConstant { order: u32 },
}

fn rate_unit(order: u32, volume: &str, time: &str) -> String {
    let m = order.saturating_sub(1);
    match (m, volume) {
        (0, _) => format!("1/{time}"),
        (1, "m") => format!("m3/(mol.{time})"),
        (1, v) => format!("{v}/(mol.{time})"),
        (m, "m") => format!("m{}/(mol{m}.{time})", 3 * m),
        (m, v) => format!("{v}{m}/(mol{m}.{time})"),
    }
}

impl ParamKind {
    /// All units a prompt may use; the SI unit comes first.
    pub fn unit_choices(&self) -> Vec<String> {
        let list: &[&str] = match self {
            ParamKind::FlowRate => &["m3/s", "L/s", "L/min", "L/h", "m3/min", "m3/h", "mL/min"],
            ParamKind::Volume => &["m3", "L", "mL"],
            ParamKind::Concentration => &["mol/m3", "mol/L", "kmol/m3"],
            ParamKind::Temperature => &["K", "degC"],
            ParamKind::Density => &["kg/m3", "g/cm3"],
            ParamKind::HeatCapacity => &["J/(kg.K)", "kJ/(kg.K)", "cal/(g.K)"],
            ParamKind::MolarEnergy => &["J/mol", "kJ/mol", "cal/mol", "kcal/mol"],
            ParamKind::HeatTransfer => &["W/K", "kW/K", "cal/(s.K)", "kcal/(h.K)"],
            ParamKind::MolarMass => &["kg/mol", "g/mol"],
            ParamKind::MolarEntropy => &["J/(mol.K)", "cal/(mol.K)"],
            ParamKind::RateConstant { order } => {
                let mut out = Vec::new();
                for v in ["m", "L"] {
                    for t in ["s", "min", "h"] {
                        out.push(rate_unit(*order, v, t));
                    }
                }
                // first-order constants do not depend on the volume unit
                out.dedup();
                if *order <= 1 {
                    out.truncate(3);
                }
                return out;
            }
        };
        list.iter().map(|s| s.to_string()).collect()
    }

    pub fn si_unit(&self) -> Unit {
        unit(&self.unit_choices()[0])
    }

    /// Modelica declaration type, or `None` when the parameter is declared
    /// as `Real` with an explicit `unit` modifier.
    pub fn modelica_type(&self) -> Option<&'static str> {
        match self {
            ParamKind::FlowRate => Some("VolumeFlowRate"),
            ParamKind::Volume => Some("Volume"),
            ParamKind::Concentration => Some("Concentration"),
            ParamKind::Temperature => Some("Temperature"),
            ParamKind::Density => Some("Density"),
            ParamKind::HeatCapacity => Some("SpecificHeatCapacity"),
            ParamKind::MolarEnergy => Some("MolarEnthalpy"),
            ParamKind::HeatTransfer => Some("ThermalConductance"),
            ParamKind::MolarMass => Some("MolarMass"),
            ParamKind::MolarEntropy | ParamKind::RateConstant { .. } => None,
        }
    }
}

/// What a parameter means in the reactor description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamRole {
    FeedFlow,
    Volume,
    InletConcentration(String),
    InitialConcentration(String),
    ForwardRateConstant(usize),
    ReverseRateConstant(usize),
    PreExponential { reaction: usize, reverse: bool },
    ActivationEnergy { reaction: usize, reverse: bool },
    Temperature,
    InletTemperature,
    InitialTemperature,
    Density,
    HeatCapacity,
    ReactionEnthalpy(usize),
    HeatTransfer,
    CoolantTemperature,
    MolarMass(String),
    PureDensity(String),
    GasConstant,
}

impl ParamRole {
    /// Identifier under the fixed naming scheme.
    pub fn name(&self, constant_density: bool) -> String {
        match self {
            ParamRole::FeedFlow => "q".into(),
            ParamRole::Volume if constant_density => "V".into(),
            ParamRole::Volume => "V_spec".into(),
            ParamRole::InletConcentration(s) => format!("c{s}_in"),
            ParamRole::InitialConcentration(s) => format!("c{s}0"),
            ParamRole::ForwardRateConstant(j) => format!("kf{j}"),
            ParamRole::ReverseRateConstant(j) => format!("kr{j}"),
            ParamRole::PreExponential { reaction, reverse } => {
                format!("k0{}{reaction}", if *reverse { "r" } else { "f" })
            }
            ParamRole::ActivationEnergy { reaction, reverse } => {
                format!("Ea{}{reaction}", if *reverse { "r" } else { "f" })
            }
            ParamRole::Temperature => "T".into(),
            ParamRole::InletTemperature => "T_in".into(),
            ParamRole::InitialTemperature => "T0".into(),
            ParamRole::Density => "rho".into(),
            ParamRole::HeatCapacity => "cp".into(),
            ParamRole::ReactionEnthalpy(j) => format!("dHr{j}"),
            ParamRole::HeatTransfer => "UA".into(),
            ParamRole::CoolantTemperature => "T_cool".into(),
            ParamRole::MolarMass(s) => format!("M_{s}"),
            ParamRole::PureDensity(s) => format!("rho_{s}"),
            ParamRole::GasConstant => "R".into(),
        }
    }

    pub fn description(&self) -> String {
        match self {
            ParamRole::FeedFlow => "volumetric feed flow rate".into(),
            ParamRole::Volume => "reactor volume".into(),
            ParamRole::InletConcentration(s) => format!("inlet concentration of {s}"),
            ParamRole::InitialConcentration(s) => format!("initial concentration of {s}"),
            ParamRole::ForwardRateConstant(j) => format!("forward rate constant of reaction {j}"),
            ParamRole::ReverseRateConstant(j) => format!("reverse rate constant of reaction {j}"),
            ParamRole::PreExponential { reaction, reverse } => format!(
                "pre-exponential factor of the {} rate of reaction {reaction}",
                if *reverse { "reverse" } else { "forward" }
            ),
            ParamRole::ActivationEnergy { reaction, reverse } => format!(
                "activation energy of the {} rate of reaction {reaction}",
                if *reverse { "reverse" } else { "forward" }
            ),
            ParamRole::Temperature => "reactor temperature".into(),
            ParamRole::InletTemperature => "feed temperature".into(),
            ParamRole::InitialTemperature => "initial reactor temperature".into(),
            ParamRole::Density => "mixture density".into(),
            ParamRole::HeatCapacity => "specific heat capacity of the mixture".into(),
            ParamRole::ReactionEnthalpy(j) => format!("reaction enthalpy of reaction {j}"),
            ParamRole::HeatTransfer => "heat transfer coefficient times exchange area".into(),
            ParamRole::CoolantTemperature => "coolant temperature".into(),
            ParamRole::MolarMass(s) => format!("molar mass of {s}"),
            ParamRole::PureDensity(s) => format!("density of pure {s}"),
            ParamRole::GasConstant => "universal gas constant".into(),
        }
    }

    pub fn latex_symbol(&self) -> String {
        match self {
            ParamRole::FeedFlow => "q".into(),
            ParamRole::Volume => "V".into(),
            ParamRole::InletConcentration(s) => format!(r"c_{{{s},\mathrm{{in}}}}"),
            ParamRole::InitialConcentration(s) => format!("c_{{{s},0}}"),
            ParamRole::ForwardRateConstant(j) => format!("k_{{f,{j}}}"),
            ParamRole::ReverseRateConstant(j) => format!("k_{{r,{j}}}"),
            ParamRole::PreExponential { reaction, reverse } => {
                format!("k_{{0,{}{reaction}}}", if *reverse { "r" } else { "f" })
            }
            ParamRole::ActivationEnergy { reaction, reverse } => {
                format!("E_{{a,{}{reaction}}}", if *reverse { "r" } else { "f" })
            }
            ParamRole::Temperature => "T".into(),
            ParamRole::InletTemperature => r"T_{\mathrm{in}}".into(),
            ParamRole::InitialTemperature => "T_0".into(),
            ParamRole::Density => r"\rho".into(),
            ParamRole::HeatCapacity => "c_p".into(),
            ParamRole::ReactionEnthalpy(j) => format!(r"\Delta H_{{r,{j}}}"),
            ParamRole::HeatTransfer => "UA".into(),
            ParamRole::CoolantTemperature => r"T_{\mathrm{cool}}".into(),
            ParamRole::MolarMass(s) => format!("M_{s}"),
            ParamRole::PureDensity(s) => format!(r"\rho_{s}"),
            ParamRole::GasConstant => "R".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub role: ParamRole,
    pub kind: ParamKind,
    /// Value in the unit quoted by the prompt.
    pub quantity: Quantity,
}

/// One reactor case. Serializes to a single JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactorScenario {
    pub template_id: String,
    pub seed: u64,
    pub mode: OperationMode,
    pub density: DensityModel,
    pub scheme: ReactionScheme,
    pub parameters: Vec<Parameter>,
    #[serde(default)]
    pub omitted_parameters: BTreeSet<String>,
}

impl ReactorScenario {
    pub fn parameter(&self, name: &str) -> Option<&Parameter> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn is_fully_specified(&self) -> bool {
        self.omitted_parameters.is_empty()
    }

    /// Residence time `V/q` in seconds, when both are given.
    pub fn residence_time(&self) -> Option<f64> {
        let v = self
            .parameter("V")
            .or_else(|| self.parameter("V_spec"))?
            .quantity
            .si_value();
        let q = self.parameter("q")?.quantity.si_value();
        Some(v / q)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scenario serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Format(e.to_string()))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("malformed scenario record: {0}")]
    Format(String),
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("could not sample parameters for `{0}` within the prompt range")]
    SamplingFailed(String),
}

/// Reaction network families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReactionShape {
    /// One reaction among 2–5 components: A→B, A→B+C, A+E→B+C, A+E→B+C+D.
    Single { components: u8, reversible: bool },
    /// A→B→C.
    Consecutive,
    /// A→B and A→C.
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TemplateSet {
    Training,
    Extrapolation(char),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTemplate {
    pub id: String,
    pub mode: OperationMode,
    pub constant_density: bool,
    pub shape: ReactionShape,
    pub set: TemplateSet,
    #[serde(default)]
    pub omitted: Vec<String>,
    #[serde(default)]
    pub arrhenius: bool,
}

impl ScenarioTemplate {
    pub fn instantiate(&self, seed: u64) -> Result<ReactorScenario, ScenarioError> {
        instantiate_with(self, seed, &SamplingConfig::default())
    }
}

/// The 26 training templates, ordered by id: four operation modes times six
/// single-reaction schemes at constant density, then the two
/// variable-density schemes.
pub fn enumerate_templates() -> Vec<ScenarioTemplate> {
    let mut out = Vec::new();
    let mut n = 1;
    for mode in OperationMode::ALL {
        for components in [2u8, 3, 4] {
            for reversible in [false, true] {
                out.push(ScenarioTemplate {
                    id: format!(
                        "t{n:02}_{}_{}{components}",
                        mode.slug(),
                        if reversible { "rev" } else { "irr" }
                    ),
                    mode,
                    constant_density: true,
                    shape: ReactionShape::Single { components, reversible },
                    set: TemplateSet::Training,
                    omitted: Vec::new(),
                    arrhenius: false,
                });
                n += 1;
            }
        }
    }
    let dae_mode = OperationMode { isothermal: false, adiabatic: false };
    for reversible in [false, true] {
        out.push(ScenarioTemplate {
            id: format!("t{n:02}_dae_noniso_cooled_{}4", if reversible { "rev" } else { "irr" }),
            mode: dae_mode,
            constant_density: false,
            shape: ReactionShape::Single { components: 4, reversible },
            set: TemplateSet::Training,
            omitted: Vec::new(),
            arrhenius: false,
        });
        n += 1;
    }
    out
}

/// Default omission set for extrapolation case (d).
pub const DEFAULT_OMITTED: [&str; 2] = ["V", "UA"];

/// The four generalization cases: (a) consecutive, (b) parallel,
/// (c) variable density with five components, (d) a training-style case with
/// parameters left out of the description.
pub fn extrapolation_templates() -> Vec<ScenarioTemplate> {
    extrapolation_templates_with(&DEFAULT_OMITTED)
}

pub fn extrapolation_templates_with(omitted: &[&str]) -> Vec<ScenarioTemplate> {
    let cooled = OperationMode { isothermal: false, adiabatic: false };
    vec![
        ScenarioTemplate {
            id: "xa_consecutive".into(),
            mode: cooled,
            constant_density: true,
            shape: ReactionShape::Consecutive,
            set: TemplateSet::Extrapolation('a'),
            omitted: Vec::new(),
            arrhenius: false,
        },
        ScenarioTemplate {
            id: "xb_parallel".into(),
            mode: OperationMode { isothermal: true, adiabatic: true },
            constant_density: true,
            shape: ReactionShape::Parallel,
            set: TemplateSet::Extrapolation('b'),
            omitted: Vec::new(),
            arrhenius: false,
        },
        ScenarioTemplate {
            id: "xc_dae_five_components".into(),
            mode: cooled,
            constant_density: false,
            shape: ReactionShape::Single { components: 5, reversible: false },
            set: TemplateSet::Extrapolation('c'),
            omitted: Vec::new(),
            arrhenius: false,
        },
        ScenarioTemplate {
            id: "xd_missing_parameters".into(),
            mode: cooled,
            constant_density: true,
            shape: ReactionShape::Single { components: 2, reversible: false },
            set: TemplateSet::Extrapolation('d'),
            omitted: omitted.iter().map(|s| s.to_string()).collect(),
            arrhenius: false,
        },
    ]
}

pub fn find_template(id: &str) -> Result<ScenarioTemplate, ScenarioError> {
    enumerate_templates()
        .into_iter()
        .chain(extrapolation_templates())
        .find(|t| t.id == id)
        .ok_or_else(|| ScenarioError::UnknownTemplate(id.into()))
}

/// Parameters a scenario needs, in prompt order, as a pure function of mode,
/// density model and scheme. Rate-constant orders come from the scheme.
pub fn required_parameters(
    mode: OperationMode,
    density: DensityModel,
    scheme: &ReactionScheme,
    arrhenius: bool,
) -> Vec<(String, ParamRole, ParamKind)> {
    let cd = density.constant_density;
    let mut roles: Vec<(ParamRole, ParamKind)> = vec![
        (ParamRole::FeedFlow, ParamKind::FlowRate),
        (ParamRole::Volume, ParamKind::Volume),
    ];
    for s in &scheme.components {
        roles.push((ParamRole::InletConcentration(s.clone()), ParamKind::Concentration));
    }
    for s in &scheme.components {
        roles.push((ParamRole::InitialConcentration(s.clone()), ParamKind::Concentration));
    }
    for (i, r) in scheme.reactions.iter().enumerate() {
        let j = i + 1;
        let sides = [(false, r.forward_order())]
            .into_iter()
            .chain(r.reversible.then_some((true, r.reverse_order())));
        for (reverse, order) in sides {
            if arrhenius {
                roles.push((
                    ParamRole::PreExponential { reaction: j, reverse },
                    ParamKind::RateConstant { order },
                ));
                roles.push((ParamRole::ActivationEnergy { reaction: j, reverse }, ParamKind::MolarEnergy));
            } else if reverse {
                roles.push((ParamRole::ReverseRateConstant(j), ParamKind::RateConstant { order }));
            } else {
                roles.push((ParamRole::ForwardRateConstant(j), ParamKind::RateConstant { order }));
            }
        }
    }
    if mode.isothermal {
        roles.push((ParamRole::Temperature, ParamKind::Temperature));
    } else {
        roles.push((ParamRole::InletTemperature, ParamKind::Temperature));
        roles.push((ParamRole::InitialTemperature, ParamKind::Temperature));
        if cd {
            roles.push((ParamRole::Density, ParamKind::Density));
        }
        roles.push((ParamRole::HeatCapacity, ParamKind::HeatCapacity));
        for j in 1..=scheme.reactions.len() {
            roles.push((ParamRole::ReactionEnthalpy(j), ParamKind::MolarEnergy));
        }
    }
    if !mode.adiabatic {
        roles.push((ParamRole::HeatTransfer, ParamKind::HeatTransfer));
        roles.push((ParamRole::CoolantTemperature, ParamKind::Temperature));
    }
    if !cd {
        for s in &scheme.components {
            roles.push((ParamRole::MolarMass(s.clone()), ParamKind::MolarMass));
        }
        for s in &scheme.components {
            roles.push((ParamRole::PureDensity(s.clone()), ParamKind::Density));
        }
    }
    roles
        .into_iter()
        .map(|(role, kind)| (role.name(cd), role, kind))
        .collect()
}

/// Sampling settings. Prompt values are log-uniform inside physically
/// sensible SI ranges and must land in `prompt_range` in their prompt unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub prompt_range: (f64, f64),
    pub keep_si_probability: f64,
    pub damkohler_range: (f64, f64),
    /// Upper bound on the Damkohler number at the initial holdup.
    pub initial_damkohler_max: f64,
    pub residence_time_range: (f64, f64),
    pub volume_range: (f64, f64),
    pub concentration_range: (f64, f64),
    pub significant_digits: usize,
    pub max_attempts: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            prompt_range: (1e-4, 1e5),
            keep_si_probability: 0.5,
            damkohler_range: (0.1, 10.0),
            initial_damkohler_max: 1e3,
            residence_time_range: (10.0, 1000.0),
            volume_range: (0.1, 10.0),
            concentration_range: (10.0, 2000.0),
            significant_digits: 4,
            max_attempts: 10_000,
        }
    }
}

fn template_seed(template_id: &str, seed: u64) -> u64 {
    let digest = Sha256::digest(format!("{template_id}:{seed}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..=hi.ln())).exp()
}

fn round_sig(v: f64, digits: usize) -> f64 {
    format!("{:.*e}", digits.saturating_sub(1), v)
        .parse()
        .expect("formatted float parses")
}

fn build_scheme(shape: ReactionShape, arrhenius: bool, rng: &mut ChaCha8Rng) -> ReactionScheme {
    let mut nu = || rng.gen_range(1..=15u32);
    let side = |names: &[&str], nu: &mut dyn FnMut() -> u32| -> Vec<(String, u32)> {
        names.iter().map(|s| (s.to_string(), nu())).collect()
    };
    let reaction = |j: usize, reactants, products, reversible: bool| Reaction {
        reactants,
        products,
        reversible,
        kinetics: KineticsSpec {
            forward: ParamRole::ForwardRateConstant(j).name(true),
            reverse: reversible.then(|| ParamRole::ReverseRateConstant(j).name(true)),
            forward_arrhenius: None,
            reverse_arrhenius: None,
        },
    };
    let (components, reactions): (&[&str], Vec<Reaction>) = match shape {
        ReactionShape::Single { components, reversible } => {
            let (comps, lhs, rhs): (&[&str], &[&str], &[&str]) = match components {
                2 => (&["A", "B"], &["A"], &["B"]),
                3 => (&["A", "B", "C"], &["A"], &["B", "C"]),
                4 => (&["A", "B", "C", "E"], &["A", "E"], &["B", "C"]),
                _ => (&["A", "B", "C", "D", "E"], &["A", "E"], &["B", "C", "D"]),
            };
            let l = side(lhs, &mut nu);
            let r = side(rhs, &mut nu);
            (comps, vec![reaction(1, l, r, reversible)])
        }
        ReactionShape::Consecutive => {
            let r1 = reaction(1, side(&["A"], &mut nu), side(&["B"], &mut nu), false);
            let r2 = reaction(2, side(&["B"], &mut nu), side(&["C"], &mut nu), false);
            (&["A", "B", "C"], vec![r1, r2])
        }
        ReactionShape::Parallel => {
            let r1 = reaction(1, side(&["A"], &mut nu), side(&["B"], &mut nu), false);
            let r2 = reaction(2, side(&["A"], &mut nu), side(&["C"], &mut nu), false);
            (&["A", "B", "C"], vec![r1, r2])
        }
    };
    let mut reactions = reactions;
    if arrhenius {
        for (i, r) in reactions.iter_mut().enumerate() {
            let j = i + 1;
            let spec = |reverse| ArrheniusSpec {
                pre_exponential: ParamRole::PreExponential { reaction: j, reverse }.name(true),
                activation_energy: ParamRole::ActivationEnergy { reaction: j, reverse }.name(true),
            };
            r.kinetics.forward_arrhenius = Some(spec(false));
            if r.reversible {
                r.kinetics.reverse_arrhenius = Some(spec(true));
            }
        }
    }
    ReactionScheme {
        components: components.iter().map(|s| s.to_string()).collect(),
        reactions,
    }
}

struct Sampler<'a> {
    rng: ChaCha8Rng,
    cfg: &'a SamplingConfig,
}

impl Sampler<'_> {
    fn in_range(&self, v: f64) -> bool {
        let a = v.abs();
        a >= self.cfg.prompt_range.0 && a <= self.cfg.prompt_range.1
    }

    /// Picks a prompt unit for an SI value and rounds the quoted number.
    fn quote(&mut self, kind: ParamKind, si_value: f64) -> Option<Quantity> {
        let choices = kind.unit_choices();
        let digits = self.cfg.significant_digits;
        let mut fitting: Vec<Quantity> = choices
            .iter()
            .map(|sym| {
                let u = unit(sym);
                Quantity::new(round_sig(u.from_si(si_value), digits), u)
            })
            .filter(|q| self.in_range(q.value))
            .collect();
        if fitting.is_empty() {
            return None;
        }
        let si_fits = fitting[0].unit.symbol == choices[0];
        if si_fits && (fitting.len() == 1 || self.rng.gen_bool(self.cfg.keep_si_probability)) {
            return Some(fitting.swap_remove(0));
        }
        let start = usize::from(si_fits);
        let idx = self.rng.gen_range(start..fitting.len());
        Some(fitting.swap_remove(idx))
    }

    fn quote_exact(&mut self, kind: ParamKind, si_value: f64) -> Option<Quantity> {
        let choices = kind.unit_choices();
        let fitting: Vec<Quantity> = choices
            .iter()
            .map(|sym| {
                let u = unit(sym);
                Quantity::new(u.from_si(si_value), u)
            })
            .filter(|q| self.in_range(q.value))
            .collect();
        if fitting.is_empty() {
            return None;
        }
        let idx = self.rng.gen_range(0..fitting.len());
        fitting.into_iter().nth(idx)
    }

    fn log(&mut self, (lo, hi): (f64, f64)) -> f64 {
        log_uniform(&mut self.rng, lo, hi)
    }

    fn draw(&mut self, kind: ParamKind, range: (f64, f64)) -> Option<Quantity> {
        let v = self.log(range);
        self.quote(kind, v)
    }
}

/// Instantiates a template deterministically from `(template.id, seed)`.
pub fn instantiate(template: &ScenarioTemplate, seed: u64) -> Result<ReactorScenario, ScenarioError> {
    instantiate_with(template, seed, &SamplingConfig::default())
}

pub fn instantiate_with(
    template: &ScenarioTemplate,
    seed: u64,
    cfg: &SamplingConfig,
) -> Result<ReactorScenario, ScenarioError> {
    let mut sampler = Sampler {
        rng: ChaCha8Rng::seed_from_u64(template_seed(&template.id, seed)),
        cfg,
    };
    let density = DensityModel {
        constant_density: template.constant_density,
    };
    let omitted: BTreeSet<String> = template.omitted.iter().cloned().collect();
    let mut attempts = 0;
    while attempts < cfg.max_attempts {
        // a stoichiometry whose rate constants cannot be quoted in range is
        // redrawn after a bounded number of parameter attempts
        let scheme = build_scheme(template.shape, template.arrhenius, &mut sampler.rng);
        scheme.validate()?;
        let required = required_parameters(template.mode, density, &scheme, template.arrhenius);
        for name in &omitted {
            if !required.iter().any(|(n, _, _)| n == name) {
                return Err(ScenarioError::Invalid(format!("cannot omit unknown parameter {name}")));
            }
        }
        for _ in 0..SCHEME_ATTEMPTS {
            attempts += 1;
            if let Some(parameters) = sample_parameters(&mut sampler, template, &scheme, &required) {
                let parameters = parameters
                    .into_iter()
                    .filter(|p| !omitted.contains(&p.name))
                    .collect();
                return Ok(ReactorScenario {
                    template_id: template.id.clone(),
                    seed,
                    mode: template.mode,
                    density,
                    scheme,
                    parameters,
                    omitted_parameters: omitted,
                });
            }
        }
    }
    Err(ScenarioError::SamplingFailed(template.id.clone()))
}

const SCHEME_ATTEMPTS: usize = 64;

const GAS_CONSTANT: f64 = 8.314_462_618;

fn sample_parameters(
    s: &mut Sampler<'_>,
    template: &ScenarioTemplate,
    scheme: &ReactionScheme,
    required: &[(String, ParamRole, ParamKind)],
) -> Option<Vec<Parameter>> {
    let cd = template.constant_density;
    let mut quoted: Vec<(String, Quantity)> = Vec::new();
    let put = |name: &str, q: Quantity, quoted: &mut Vec<(String, Quantity)>| {
        quoted.push((name.to_string(), q));
    };
    let get = |quoted: &[(String, Quantity)], name: &str| -> f64 {
        quoted
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, q)| q.si_value())
            .expect("parameter sampled before use")
    };

    let volume = s.draw(ParamKind::Volume, s.cfg.volume_range)?;
    let tau = s.log(s.cfg.residence_time_range);
    let flow = s.quote(ParamKind::FlowRate, volume.si_value() / tau)?;
    let tau = volume.si_value() / flow.si_value();
    put(&ParamRole::Volume.name(cd), volume, &mut quoted);
    put("q", flow, &mut quoted);

    if cd {
        for c in &scheme.components {
            for role in [ParamRole::InletConcentration(c.clone()), ParamRole::InitialConcentration(c.clone())] {
                let v = s.log(s.cfg.concentration_range);
                let q = s.quote(ParamKind::Concentration, v)?;
                put(&role.name(cd), q, &mut quoted);
            }
        }
    } else {
        // molar masses that conserve mass in every reaction
        let r = &scheme.reactions[0];
        let mut molar: Vec<(String, f64)> = Vec::new();
        let mut reactant_mass = 0.0;
        for (sp, nu) in &r.reactants {
            let m = s.draw(ParamKind::MolarMass, (0.02, 0.2))?;
            reactant_mass += *nu as f64 * m.si_value();
            molar.push((sp.clone(), m.si_value()));
            put(&ParamRole::MolarMass(sp.clone()).name(cd), m, &mut quoted);
        }
        let weights: Vec<f64> = r.products.iter().map(|_| s.rng.gen_range(0.2..1.0)).collect();
        let total: f64 = weights.iter().sum();
        for ((sp, nu), w) in r.products.iter().zip(&weights) {
            let m = s.quote(ParamKind::MolarMass, reactant_mass * w / total / *nu as f64)?;
            molar.push((sp.clone(), m.si_value()));
            put(&ParamRole::MolarMass(sp.clone()).name(cd), m, &mut quoted);
        }
        let mut specific_volume = Vec::new();
        for c in &scheme.components {
            let rho = s.draw(ParamKind::Density, (700.0, 1500.0))?;
            let m = molar.iter().find(|(n, _)| n == c).map(|(_, m)| *m)?;
            specific_volume.push((c.clone(), m / rho.si_value()));
            put(&ParamRole::PureDensity(c.clone()).name(cd), rho, &mut quoted);
        }
        // inlet composition from volume fractions summing to one
        let fractions = |s: &mut Sampler<'_>| -> Vec<f64> {
            let w: Vec<f64> = scheme.components.iter().map(|_| s.rng.gen_range(0.2..1.0)).collect();
            let t: f64 = w.iter().sum();
            w.into_iter().map(|x| x / t).collect()
        };
        let inlet = fractions(s);
        for ((c, v), phi) in specific_volume.iter().zip(&inlet) {
            let q = s.quote(ParamKind::Concentration, phi / v)?;
            put(&ParamRole::InletConcentration(c.clone()).name(cd), q, &mut quoted);
        }
        // initial holdup: all but the last component rounded, the last one
        // closes the volume balance exactly
        let initial = fractions(s);
        let mut filled = 0.0;
        let last = specific_volume.len() - 1;
        for (i, ((c, v), phi)) in specific_volume.iter().zip(&initial).enumerate() {
            let role = ParamRole::InitialConcentration(c.clone());
            let q = if i < last {
                s.quote(ParamKind::Concentration, phi / v)?
            } else {
                let rest = 1.0 - filled;
                if rest <= 0.05 {
                    return None;
                }
                s.quote_exact(ParamKind::Concentration, rest / v)?
            };
            filled += q.si_value() * v;
            put(&role.name(cd), q, &mut quoted);
        }
    }

    // rate constants scaled by a Damkohler number at feed conditions
    let mut temperature_for_rates = None;
    if template.mode.isothermal {
        let t = s.draw(ParamKind::Temperature, (290.0, 370.0))?;
        temperature_for_rates = Some(t.si_value());
        put("T", t, &mut quoted);
    } else {
        let t_in = s.draw(ParamKind::Temperature, (290.0, 370.0))?;
        temperature_for_rates = temperature_for_rates.or(Some(t_in.si_value()));
        put("T_in", t_in, &mut quoted);
        let t0 = s.draw(ParamKind::Temperature, (290.0, 370.0))?;
        put("T0", t0, &mut quoted);
        if cd {
            let rho = s.draw(ParamKind::Density, (700.0, 1500.0))?;
            put("rho", rho, &mut quoted);
        }
        let cp = s.draw(ParamKind::HeatCapacity, (1500.0, 4500.0))?;
        put("cp", cp, &mut quoted);
        for j in 1..=scheme.reactions.len() {
            let dh = -s.log((1e4, 2e5));
            let q = s.quote(ParamKind::MolarEnergy, dh)?;
            put(&ParamRole::ReactionEnthalpy(j).name(cd), q, &mut quoted);
        }
    }
    if !template.mode.adiabatic {
        let ua = s.draw(ParamKind::HeatTransfer, (100.0, 1e5))?;
        put("UA", ua, &mut quoted);
        let tc = s.draw(ParamKind::Temperature, (270.0, 340.0))?;
        put("T_cool", tc, &mut quoted);
    }
    for (i, r) in scheme.reactions.iter().enumerate() {
        let j = i + 1;
        let sides = [(false, &r.reactants)]
            .into_iter()
            .chain(r.reversible.then_some((true, &r.products)));
        for (reverse, side) in sides {
            let lead = get(&quoted, &ParamRole::InletConcentration(side[0].0.clone()).name(cd));
            let mut driving = 1.0;
            let mut order = 0;
            for (sp, nu) in side {
                driving *= get(&quoted, &ParamRole::InletConcentration(sp.clone()).name(cd)).powi(*nu as i32);
                order += nu;
            }
            let da = s.log(s.cfg.damkohler_range);
            let k = da * lead / (tau * driving);
            // the holdup can be far richer than the feed at high orders
            let conc = |sp: &String| get(&quoted, &ParamRole::InitialConcentration(sp.clone()).name(cd));
            let start: f64 = side.iter().map(|(sp, nu)| conc(sp).powi(*nu as i32)).product();
            if k * tau * start > s.cfg.initial_damkohler_max * lead.max(conc(&side[0].0)) {
                return None;
            }
            let kind = ParamKind::RateConstant { order };
            if template.arrhenius {
                let ea = s.draw(ParamKind::MolarEnergy, (2e4, 8e4))?;
                let t = temperature_for_rates?;
                let k0 = k * (ea.si_value() / (GAS_CONSTANT * t)).exp();
                let k0q = s.quote(kind, k0)?;
                put(&ParamRole::PreExponential { reaction: j, reverse }.name(cd), k0q, &mut quoted);
                put(&ParamRole::ActivationEnergy { reaction: j, reverse }.name(cd), ea, &mut quoted);
            } else {
                let role = if reverse {
                    ParamRole::ReverseRateConstant(j)
                } else {
                    ParamRole::ForwardRateConstant(j)
                };
                let kq = s.quote(kind, k)?;
                put(&role.name(cd), kq, &mut quoted);
            }
        }
    }

    required
        .iter()
        .map(|(name, role, kind)| {
            let (_, q) = quoted.iter().find(|(n, _)| n == name)?;
            debug_assert!(registry().is_registered(&q.unit.symbol));
            Some(Parameter {
                name: name.clone(),
                role: role.clone(),
                kind: *kind,
                quantity: q.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_counts() {
        let all = enumerate_templates();
        assert_eq!(all.len(), 26);
        assert_eq!(all.iter().filter(|t| t.constant_density).count(), 24);
        assert_eq!(all.iter().filter(|t| !t.constant_density).count(), 2);
        let mut ids: Vec<_> = all.iter().map(|t| t.id.clone()).collect();
        let before = ids.clone();
        ids.sort();
        assert_eq!(ids, before, "templates are ordered by id");
    }

    #[test]
    fn template_ids_are_stable() {
        let golden = include_str!("../tests/data/template_ids.txt");
        let ids: Vec<String> = enumerate_templates()
            .into_iter()
            .chain(extrapolation_templates())
            .map(|t| t.id)
            .collect();
        assert_eq!(ids.join("\n"), golden.trim_end());
    }

    #[test]
    fn four_distinct_modes() {
        let modes: BTreeSet<_> = enumerate_templates()
            .iter()
            .map(|t| (t.mode.isothermal, t.mode.adiabatic))
            .collect();
        assert_eq!(modes.len(), 4);
    }

    #[test]
    fn extrapolation_cases() {
        let x = extrapolation_templates();
        assert_eq!(x.len(), 4);
        assert!(!x[3].omitted.is_empty());
        let a = x[0].instantiate(3).unwrap();
        let r = &a.scheme.reactions;
        assert_eq!(r.len(), 2);
        assert!(r[0].products.iter().any(|(s, _)| s == "B"));
        assert!(r[1].reactants.iter().any(|(s, _)| s == "B"));
        let c = x[2].instantiate(3).unwrap();
        assert_eq!(c.scheme.components.len(), 5);
        assert!(!c.density.constant_density);
        let d = x[3].instantiate(3).unwrap();
        assert_eq!(
            d.omitted_parameters.iter().cloned().collect::<Vec<_>>(),
            vec!["UA".to_string(), "V".to_string()]
        );
        assert!(d.parameter("V").is_none());
    }

    #[test]
    fn instantiation_is_deterministic() {
        for t in enumerate_templates() {
            let a = t.instantiate(17).unwrap();
            let b = t.instantiate(17).unwrap();
            assert_eq!(a.to_json(), b.to_json());
            assert_ne!(a.to_json(), t.instantiate(18).unwrap().to_json());
        }
    }

    #[test]
    fn sampled_values_respect_ranges() {
        for t in enumerate_templates().iter().chain(&extrapolation_templates()) {
            for seed in 0..10 {
                let s = t.instantiate(seed).unwrap();
                s.scheme.validate().unwrap();
                for r in &s.scheme.reactions {
                    for (_, nu) in r.reactants.iter().chain(&r.products) {
                        assert!((1..=15).contains(nu));
                    }
                }
                for p in &s.parameters {
                    let a = p.quantity.value.abs();
                    assert!((1e-4..=1e5).contains(&a), "{} {} = {}", t.id, p.name, p.quantity.value);
                    assert_eq!(p.quantity.unit.dimension, p.kind.si_unit().dimension, "{}", p.name);
                }
            }
        }
    }

    #[test]
    fn required_parameters_follow_mode() {
        for t in enumerate_templates() {
            let s = t.instantiate(1).unwrap();
            assert!(s.is_fully_specified());
            let names: BTreeSet<String> = s.parameters.iter().map(|p| p.name.clone()).collect();
            let has_cooling = names.contains("UA") && names.contains("T_cool");
            assert_eq!(has_cooling, !t.mode.adiabatic, "{}", t.id);
            if !t.mode.adiabatic {
                assert!(has_cooling);
            } else {
                assert!(!names.contains("UA") && !names.contains("T_cool"));
            }
            if t.mode.isothermal {
                assert!(!names.iter().any(|n| n.starts_with("dHr")));
                assert!(names.contains("T"));
            }
            let req = required_parameters(s.mode, s.density, &s.scheme, false);
            let req_names: BTreeSet<String> = req.into_iter().map(|(n, _, _)| n).collect();
            assert_eq!(req_names, names);
        }
    }

    #[test]
    fn dae_initial_holdup_fills_the_volume() {
        for t in enumerate_templates().into_iter().filter(|t| !t.constant_density) {
            for seed in 0..5 {
                let s = t.instantiate(seed).unwrap();
                let v: f64 = s
                    .scheme
                    .components
                    .iter()
                    .map(|c| {
                        let get = |n: String| s.parameter(&n).unwrap().quantity.si_value();
                        get(format!("c{c}0")) * get(format!("M_{c}")) / get(format!("rho_{c}"))
                    })
                    .sum();
                assert!((v - 1.0).abs() < 1e-12, "{v}");
            }
        }
    }

    #[test]
    fn reaction_mass_is_conserved_in_dae_templates() {
        let t = &enumerate_templates()[25];
        let s = t.instantiate(4).unwrap();
        let r = &s.scheme.reactions[0];
        let total: f64 = s
            .scheme
            .components
            .iter()
            .map(|c| r.signed_nu(c) as f64 * s.parameter(&format!("M_{c}")).unwrap().quantity.si_value())
            .sum();
        let scale: f64 = r.reactants.iter().map(|(c, n)| *n as f64 * s.parameter(&format!("M_{c}")).unwrap().quantity.si_value()).sum();
        // molar masses are rounded to four digits in the prompt
        assert!(total.abs() < 1e-3 * scale, "{total}");
    }

    #[test]
    fn json_round_trip() {
        let s = enumerate_templates()[7].instantiate(9).unwrap();
        let back = ReactorScenario::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn unknown_template() {
        assert!(matches!(find_template("nope"), Err(ScenarioError::UnknownTemplate(_))));
    }

    #[test]
    fn arrhenius_option_samples_pairs() {
        let mut t = enumerate_templates()[19].clone();
        t.arrhenius = true;
        let s = t.instantiate(2).unwrap();
        assert!(s.parameter("k0f1").is_some() && s.parameter("Eaf1").is_some());
        assert!(s.parameter("kf1").is_none());
    }

    #[test]
    fn rate_units_track_order() {
        assert_eq!(
            ParamKind::RateConstant { order: 1 }.unit_choices(),
            vec!["1/s", "1/min", "1/h"]
        );
        let u = ParamKind::RateConstant { order: 3 }.unit_choices();
        assert_eq!(u[0], "m6/(mol2.s)");
        assert!(u.contains(&"L2/(mol2.min)".to_string()));
        for order in 1..=30 {
            for sym in (ParamKind::RateConstant { order }).unit_choices() {
                assert!(registry().is_registered(&sym), "{sym}");
            }
        }
    }
}
