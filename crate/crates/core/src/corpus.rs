//! Corpus-scale generation: 26 templates x 38 instances, a stratified
//! train/validation split, the two evaluation sets, and atomic file output.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codegen::{render_pair, QAPair, DEFAULT_SYSTEM_MESSAGE};
use crate::physics::{build_equations, Classification, PhysicsError};
use crate::scenario::{
    enumerate_templates, extrapolation_templates_with, instantiate_with, ReactorScenario, SamplingConfig,
    ScenarioError, ScenarioTemplate, TemplateSet, DEFAULT_OMITTED,
};

pub const PER_TEMPLATE: usize = 38;
pub const VALID_PER_TEMPLATE: usize = 8;
/// Templates that give one validation record to training so the global
/// split is 790/198.
pub const SHORT_VALID_TEMPLATES: usize = 10;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Settings shared by all generated files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusOptions {
    pub sampling: SamplingConfig,
    pub system_message: String,
    /// Parameters left out of extrapolation case (d).
    pub omitted: Vec<String>,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        CorpusOptions {
            sampling: SamplingConfig::default(),
            system_message: DEFAULT_SYSTEM_MESSAGE.to_string(),
            omitted: DEFAULT_OMITTED.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// An evaluation record: the pair plus what a checker needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    #[serde(flatten)]
    pub pair: QAPair,
    /// Extrapolation case letter.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub case: Option<char>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub omitted_parameters: Vec<String>,
    pub scenario: ReactorScenario,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusBundle {
    pub master_seed: u64,
    pub train: Vec<QAPair>,
    pub valid: Vec<QAPair>,
    /// Template id with its classification, in template order.
    pub templates: Vec<(String, Classification)>,
}

impl CorpusBundle {
    pub fn len(&self) -> usize {
        self.train.len() + self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Seed of record `index` in `set`, derived from the master seed.
pub fn record_seed(master_seed: u64, set: &str, index: usize) -> u64 {
    let digest = Sha256::digest(format!("{master_seed}:{set}:{index}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Number of validation records for each training template, in order.
/// The templates whose id hashes lowest keep only seven.
pub fn validation_counts(templates: &[ScenarioTemplate]) -> Vec<usize> {
    let mut order: Vec<(Vec<u8>, usize)> = templates
        .iter()
        .enumerate()
        .map(|(i, t)| (Sha256::digest(t.id.as_bytes()).to_vec(), i))
        .collect();
    order.sort();
    let mut counts = vec![VALID_PER_TEMPLATE; templates.len()];
    for (_, i) in order.iter().take(SHORT_VALID_TEMPLATES) {
        counts[*i] -= 1;
    }
    counts
}

fn pair_for(
    t: &ScenarioTemplate,
    seed: u64,
    opts: &CorpusOptions,
) -> Result<(QAPair, ReactorScenario), CorpusError> {
    let s = instantiate_with(t, seed, &opts.sampling)?;
    let pair = render_pair(&s, &opts.system_message)?;
    Ok((pair, s))
}

/// The 988-record training corpus with its stratified split.
pub fn generate_training_corpus(master_seed: u64, opts: &CorpusOptions) -> Result<CorpusBundle, CorpusError> {
    let templates = enumerate_templates();
    let jobs: Vec<(usize, usize)> = (0..templates.len())
        .flat_map(|t| (0..PER_TEMPLATE).map(move |i| (t, i)))
        .collect();
    let pairs: Vec<QAPair> = jobs
        .par_iter()
        .map(|&(t, i)| {
            let seed = record_seed(master_seed, &templates[t].id, i);
            pair_for(&templates[t], seed, opts).map(|p| p.0)
        })
        .collect::<Result<_, _>>()?;
    let mut classes = Vec::new();
    for t in &templates {
        let s = instantiate_with(t, record_seed(master_seed, &t.id, 0), &opts.sampling)?;
        classes.push((t.id.clone(), build_equations(&s)?.classification));
    }
    let counts = validation_counts(&templates);
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for (t, chunk) in pairs.chunks(PER_TEMPLATE).enumerate() {
        let mut idx: Vec<usize> = (0..PER_TEMPLATE).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(record_seed(master_seed, &format!("split:{}", templates[t].id), 0));
        idx.shuffle(&mut rng);
        let mut is_valid = [false; PER_TEMPLATE];
        for &i in &idx[..counts[t]] {
            is_valid[i] = true;
        }
        for (i, p) in chunk.iter().enumerate() {
            if is_valid[i] {
                valid.push(p.clone());
            } else {
                train.push(p.clone());
            }
        }
    }
    Ok(CorpusBundle {
        master_seed,
        train,
        valid,
        templates: classes,
    })
}

/// One fresh record per training template, and the four extrapolation
/// cases. Case (d) has no answer and lists its omitted parameters.
pub fn generate_eval_sets(
    master_seed: u64,
    opts: &CorpusOptions,
) -> Result<(Vec<EvalRecord>, Vec<EvalRecord>), CorpusError> {
    let repro = enumerate_templates()
        .par_iter()
        .map(|t| {
            let (pair, scenario) = pair_for(t, record_seed(master_seed, &format!("repro:{}", t.id), 0), opts)?;
            Ok(EvalRecord {
                pair,
                case: None,
                omitted_parameters: Vec::new(),
                scenario,
            })
        })
        .collect::<Result<Vec<_>, CorpusError>>()?;
    let omitted: Vec<&str> = opts.omitted.iter().map(String::as_str).collect();
    let extra = extrapolation_templates_with(&omitted)
        .iter()
        .map(|t| {
            let (pair, scenario) = pair_for(t, record_seed(master_seed, &format!("extra:{}", t.id), 0), opts)?;
            Ok(EvalRecord {
                pair,
                case: match t.set {
                    TemplateSet::Extrapolation(c) => Some(c),
                    TemplateSet::Training => None,
                },
                omitted_parameters: scenario.omitted_parameters.iter().cloned().collect(),
                scenario,
            })
        })
        .collect::<Result<Vec<_>, CorpusError>>()?;
    Ok((repro, extra))
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// `{"messages": [system, user, assistant]}` per record.
pub fn to_chat_jsonl(records: &[QAPair]) -> String {
    let mut out = String::new();
    for r in records {
        let mut messages = vec![
            serde_json::json!({"role": "system", "content": r.system}),
            serde_json::json!({"role": "user", "content": r.question}),
        ];
        if let Some(a) = &r.answer {
            messages.push(serde_json::json!({"role": "assistant", "content": a}));
        }
        out.push_str(&serde_json::json!({ "messages": messages }).to_string());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestCounts {
    pub templates: usize,
    pub ode_templates: usize,
    pub dae_templates: usize,
    pub per_template: usize,
    pub records: usize,
    pub train: usize,
    pub valid: usize,
    pub eval_repro: usize,
    pub eval_extra: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub master_seed: u64,
    pub templates: Vec<String>,
    pub counts: ManifestCounts,
    /// Validation records per template.
    pub valid_per_template: BTreeMap<String, usize>,
    /// Omitted parameters of extrapolation case (d).
    pub omitted_parameters: Vec<String>,
    /// SHA-256 of each data file.
    pub files: BTreeMap<String, String>,
    /// SHA-256 over the sorted `name:digest` lines of `files`.
    pub digest: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// All output files with their contents, manifest last.
pub fn render_dataset(master_seed: u64, opts: &CorpusOptions) -> Result<(Vec<(String, String)>, Manifest), CorpusError> {
    let bundle = generate_training_corpus(master_seed, opts)?;
    let (repro, extra) = generate_eval_sets(master_seed, opts)?;
    let mut files = vec![
        ("train.jsonl".to_string(), to_jsonl(&bundle.train)),
        ("valid.jsonl".to_string(), to_jsonl(&bundle.valid)),
        ("train.chat.jsonl".to_string(), to_chat_jsonl(&bundle.train)),
        ("valid.chat.jsonl".to_string(), to_chat_jsonl(&bundle.valid)),
        ("eval_repro.jsonl".to_string(), to_jsonl(&repro)),
        ("eval_extra.jsonl".to_string(), to_jsonl(&extra)),
    ];
    let digests: BTreeMap<String, String> = files
        .iter()
        .map(|(name, text)| (name.clone(), sha256_hex(text.as_bytes())))
        .collect();
    let joined: String = digests.iter().map(|(n, d)| format!("{n}:{d}\n")).collect();
    let templates = enumerate_templates();
    let valid_counts = validation_counts(&templates);
    let manifest = Manifest {
        master_seed,
        templates: bundle.templates.iter().map(|(id, _)| id.clone()).collect(),
        counts: ManifestCounts {
            templates: bundle.templates.len(),
            ode_templates: bundle.templates.iter().filter(|t| t.1 == Classification::Ode).count(),
            dae_templates: bundle.templates.iter().filter(|t| t.1 == Classification::Dae).count(),
            per_template: PER_TEMPLATE,
            records: bundle.len(),
            train: bundle.train.len(),
            valid: bundle.valid.len(),
            eval_repro: repro.len(),
            eval_extra: extra.len(),
        },
        valid_per_template: templates.iter().map(|t| t.id.clone()).zip(valid_counts).collect(),
        omitted_parameters: opts.omitted.clone(),
        files: digests,
        digest: sha256_hex(joined.as_bytes()),
    };
    files.push((
        "manifest.json".to_string(),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n",
    ));
    Ok((files, manifest))
}

/// Writes every file to a temporary sibling first and renames only after
/// all of them are complete, so a failure leaves no partial output.
pub fn write_atomically(dir: &Path, files: &[(String, String)]) -> Result<(), CorpusError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CorpusError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let mut staged = Vec::new();
    for (name, text) in files {
        let mut tmp = tempfile::Builder::new()
            .prefix(&format!(".{name}."))
            .tempfile_in(dir)
            .map_err(io(dir))?;
        tmp.write_all(text.as_bytes()).map_err(io(tmp.path()))?;
        tmp.as_file().sync_all().map_err(io(tmp.path()))?;
        staged.push((tmp, dir.join(name)));
    }
    for (tmp, target) in staged {
        tmp.persist(&target).map_err(|e| CorpusError::Io {
            path: target.clone(),
            source: e.error,
        })?;
    }
    Ok(())
}

/// Generates and writes the dataset into `dir`.
pub fn write_dataset(dir: &Path, master_seed: u64, opts: &CorpusOptions) -> Result<Manifest, CorpusError> {
    let (files, manifest) = render_dataset(master_seed, opts)?;
    write_atomically(dir, &files)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_templates_keep_seven() {
        let counts = validation_counts(&enumerate_templates());
        assert_eq!(counts.iter().filter(|c| **c == 7).count(), 10);
        assert_eq!(counts.iter().sum::<usize>(), 198);
    }

    #[test]
    fn seeds_differ_by_set_and_index() {
        assert_ne!(record_seed(1, "a", 0), record_seed(1, "a", 1));
        assert_ne!(record_seed(1, "a", 0), record_seed(1, "b", 0));
        assert_ne!(record_seed(1, "a", 0), record_seed(2, "a", 0));
        assert_eq!(record_seed(7, "a", 3), record_seed(7, "a", 3));
    }

    #[test]
    fn chat_records_have_three_roles() {
        let p = QAPair {
            system: "s".into(),
            question: "q".into(),
            answer: Some("a".into()),
            template_id: "t".into(),
            seed: 1,
        };
        let line = to_chat_jsonl(&[p]);
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        let roles: Vec<&str> = v["messages"].as_array().unwrap().iter().map(|m| m["role"].as_str().unwrap()).collect();
        assert_eq!(roles, ["system", "user", "assistant"]);
    }
}
