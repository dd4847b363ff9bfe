use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde_json::Value;

use rxn2mo::checker::{check, tabulate, CheckContext, ErrorReport};
use rxn2mo::codegen::render_pair;
use rxn2mo::config::Config;
use rxn2mo::corpus::write_dataset;
use rxn2mo::physics::build_equations;
use rxn2mo::scenario::{enumerate_templates, extrapolation_templates_with, find_template, instantiate_with, ReactorScenario};
use rxn2mo::simulate::{default_horizon, simulate, DEFAULT_STEPS};

/// Synthetic CSTR text-to-Modelica corpus generator and Modelica error checker.
///
/// Exit codes: 0 success, 1 usage, 2 I/O, 3 internal, 4 findings present
/// (only with `check --fail-on-any`).
#[derive(Debug, Parser)]
#[command(name = "rxn2mo", version)]
struct Cli {
    /// TOML file with sampling ranges, tolerances, system message and the
    /// parameters omitted from extrapolation case (d).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the training corpus, evaluation sets and manifest.
    GenDataset {
        /// Master seed.
        #[arg(long)]
        seed: u64,
        /// Output directory, created if missing.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Score candidate Modelica files against a scenario.
    Check {
        /// Scenario JSON, or a record with `scenario` or `template_id` and `seed`
        /// (JSON lines files: see --record).
        #[arg(long, value_name = "FILE")]
        scenario: PathBuf,
        /// Zero-based line of a JSON lines scenario file.
        #[arg(long, default_value_t = 0)]
        record: usize,
        /// Candidate files; prose is allowed, the first fenced code block is checked.
        #[arg(long, value_name = "FILE", num_args = 1.., required = true)]
        candidate: Vec<PathBuf>,
        /// Text report; the JSON report goes to the same path with `.json` appended.
        #[arg(long, value_name = "OUT")]
        report: Option<PathBuf>,
        /// Worker threads (default: available cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Exit with code 4 when any candidate has a finding.
        #[arg(long)]
        fail_on_any: bool,
    },
    /// Print the question and reference answer of one template instance.
    Render {
        /// Template id (training or extrapolation).
        #[arg(long)]
        template: String,
        /// Instance seed.
        #[arg(long)]
        seed: u64,
        /// Also write the scenario as JSON.
        #[arg(long, value_name = "FILE")]
        scenario_out: Option<PathBuf>,
    },
    /// Integrate the reference equations of a scenario.
    Simulate {
        /// Scenario JSON or record, as for `check`.
        #[arg(long, value_name = "FILE")]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        record: usize,
        /// Trajectory file: `time` plus one column per unknown, comma separated.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// End time in seconds (default: ten residence times).
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_STEPS)]
        steps: usize,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Io(String),
    Internal(String),
    Findings(usize),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Io(_) => 2,
            Failure::Internal(_) => 3,
            Failure::Findings(_) => 4,
        }
    }
}

/// Writes to stdout. A closed pipe (`| head`) is not an error.
fn emit(text: &str) -> Result<(), Failure> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::Io(format!("stdout: {e}"))),
        _ => Ok(()),
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn unknown_template(id: &str, cfg: &Config) -> Failure {
    let omitted: Vec<&str> = cfg.omitted.iter().map(String::as_str).collect();
    let ids: Vec<String> = enumerate_templates()
        .into_iter()
        .chain(extrapolation_templates_with(&omitted))
        .map(|t| t.id)
        .collect();
    Failure::Usage(format!("unknown template `{id}`; valid ids:\n  {}", ids.join("\n  ")))
}

/// Reads a scenario from plain scenario JSON, an evaluation record with a
/// `scenario` field, or a corpus record identified by template and seed.
fn load_scenario(path: &Path, record: usize, cfg: &Config) -> Result<ReactorScenario, Failure> {
    let text = read(path)?;
    let json: Value = match serde_json::from_str(&text) {
        Ok(v) => v,
        Err(_) => {
            let line = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .nth(record)
                .ok_or_else(|| Failure::Usage(format!("{}: no record {record}", path.display())))?;
            serde_json::from_str(line).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
    };
    let bad = |e: String| Failure::Usage(format!("{}: {e}", path.display()));
    if let Some(s) = json.get("scenario") {
        return serde_json::from_value(s.clone()).map_err(|e| bad(e.to_string()));
    }
    if json.get("parameters").is_some() {
        return serde_json::from_value(json).map_err(|e| bad(e.to_string()));
    }
    match (json.get("template_id").and_then(Value::as_str), json.get("seed").and_then(Value::as_u64)) {
        (Some(id), Some(seed)) => {
            let t = find_template(id).map_err(|_| unknown_template(id, cfg))?;
            instantiate_with(&t, seed, &cfg.sampling).map_err(|e| Failure::Internal(e.to_string()))
        }
        _ => Err(bad("expected a scenario, or a record with `scenario` or `template_id` and `seed`".into())),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p).map_err(|e| match e {
            rxn2mo::config::ConfigError::Io { .. } => Failure::Io(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        })?,
        None => Config::default(),
    };
    match cli.command {
        Command::GenDataset { seed, out } => {
            let m = write_dataset(&out, seed, &cfg.corpus_options()).map_err(|e| match e {
                rxn2mo::corpus::CorpusError::Io { .. } => Failure::Io(e.to_string()),
                _ => Failure::Internal(e.to_string()),
            })?;
            let c = &m.counts;
            emit(&format!(
                "{} records ({} train, {} valid) from {} templates ({} ODE, {} DAE); {} reproduction, {} extrapolation\ndigest {}\n",
                c.records, c.train, c.valid, c.templates, c.ode_templates, c.dae_templates, c.eval_repro, c.eval_extra, m.digest
            ))
        }
        Command::Check {
            scenario,
            record,
            candidate,
            report,
            jobs,
            fail_on_any,
        } => {
            let s = load_scenario(&scenario, record, &cfg)?;
            let ctx = CheckContext::with_tolerances(s, cfg.tolerances).map_err(|e| Failure::Internal(e.to_string()))?;
            let sources: Vec<String> = candidate.iter().map(|p| read(p)).collect::<Result<_, _>>()?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs.unwrap_or(0))
                .build()
                .map_err(|e| Failure::Internal(e.to_string()))?;
            let reports: Vec<ErrorReport> = pool.install(|| sources.par_iter().map(|src| check(src, &ctx)).collect());
            let labels: Vec<String> = candidate.iter().map(|p| p.display().to_string()).collect();
            let rows: Vec<(String, ErrorReport)> = labels.iter().cloned().zip(reports.iter().cloned()).collect();
            let table = tabulate(&rows);
            let mut text = String::new();
            for ((label, r), src) in rows.iter().zip(&sources) {
                text.push_str(&r.render(label, src));
                text.push('\n');
            }
            text.push_str(&table.to_text());
            if let Some(out) = report {
                write(&out, &text)?;
                let candidates: Vec<Value> = rows
                    .iter()
                    .map(|(l, r)| serde_json::json!({"file": l, "report": r}))
                    .collect();
                let json = serde_json::json!({"candidates": candidates, "table": table});
                let mut json_path = out.into_os_string();
                json_path.push(".json");
                write(Path::new(&json_path), &(serde_json::to_string_pretty(&json).expect("report serializes") + "\n"))?;
            }
            emit(&table.to_text())?;
            match table.totals.total {
                n if fail_on_any && n > 0 => Err(Failure::Findings(n)),
                _ => Ok(()),
            }
        }
        Command::Render {
            template,
            seed,
            scenario_out,
        } => {
            let t = find_template(&template).map_err(|_| unknown_template(&template, &cfg))?;
            let s = instantiate_with(&t, seed, &cfg.sampling).map_err(|e| Failure::Internal(e.to_string()))?;
            let pair = render_pair(&s, &cfg.system_message).map_err(|e| Failure::Internal(e.to_string()))?;
            if let Some(p) = scenario_out {
                write(&p, &(s.to_json() + "\n"))?;
            }
            let answer = match pair.answer {
                Some(a) => a,
                None => format!(
                    "No reference answer: the question deliberately omits {}.\n",
                    s.omitted_parameters.iter().cloned().collect::<Vec<_>>().join(", ")
                ),
            };
            emit(&format!("{}\n\n{answer}", pair.question))
        }
        Command::Simulate {
            scenario,
            record,
            out,
            t_end,
            steps,
        } => {
            let s = load_scenario(&scenario, record, &cfg)?;
            let sys = build_equations(&s).map_err(|e| Failure::Usage(e.to_string()))?;
            let t_end = match t_end.or_else(|| default_horizon(&sys)) {
                Some(t) if t > 0.0 && t.is_finite() => t,
                _ => return Err(Failure::Usage("end time must be positive and finite".into())),
            };
            if steps == 0 {
                return Err(Failure::Usage("steps must be positive".into()));
            }
            let tr = simulate(&sys, t_end, steps).map_err(|e| Failure::Internal(e.to_string()))?;
            tr.write_delimited(&out, ',').map_err(|e| io_err(&out, e))?;
            emit(&format!("{} rows x {} columns, t_end = {t_end:e} s\n", tr.times.len(), tr.names.len() + 1))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Findings(n) => eprintln!("rxn2mo: {n} finding(s)"),
                Failure::Usage(m) | Failure::Io(m) | Failure::Internal(m) => eprintln!("rxn2mo: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
