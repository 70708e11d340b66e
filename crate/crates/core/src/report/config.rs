//! TOML configuration shared by the `gen`, `run`, `stats` and `plot`
//! commands. Relative paths resolve against the directory holding the
//! config file.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::figure::FigureSpec;
use super::{io_err, ReportError, Result};
use crate::experiments::{Experiment, RunOptions};
use crate::lexicon::Resource;
use crate::stats::{Filter, ModelSpec, TTestSpec, DEFAULT_THRESHOLD};
use crate::stimgen::{GenderCondition, StimulusKind};

/// Key reference printed by `--help`.
pub const CONFIG_HELP: &str = "\
Config file keys (TOML; paths are relative to the config file):

  seed = <u64>                     master seed for every backend (default 0)

  [lexicons]                       optional overrides of the bundled lexicons
    verb_norms, noun_pairs, rc_completion, rc_reading, vocabulary, verb_forms

  [gen]
    kind = referential|completion|rc_reading
    condition = mismatch|match     referential only (default mismatch)
    out = <path>                   stimulus JSON lines

  [run]
    experiment = e1|e2|e3|e4       (or ref_behavior, ref_representation,
                                    syn_behavior, syn_representation)
    out = <path>                   record table; .jsonl selects JSON lines
    drops = <path>                 default: <out stem>.drops.tsv
    preferences = <path>           e3 only; default: <out stem>.preferences.tsv
    manifest = <path>              default: <out stem>.manifest.json
    k = <int>                      cloze candidates (default 100)
    e1_conditions = [..]           gender conditions scored in e1 (default [mismatch])
    e4_completion = <bool>         also measure `who` on completion prompts
    [[run.backend]]                one table per model
      name = uniform|bigram|subword-bigram|planted|tiny-rnn|external
      id = <string>                model label (default: name)
      replicates = <int>           copies with seeds seed, seed+1, ... (default 1)
      ...                          backend-specific keys, see below

  [stats]
    input = <path>                 record table
    out = <path>                   result table
    threshold = <f64>              significance threshold (default 0.005)
    bonferroni = <bool>            correct p-values over all results (default false)
    manifest = <path>              default: <out stem>.manifest.json
    [[stats.model]]                name, response, factors = [{column, coding = sum|continuous}],
                                   interaction_order, item_effects, item_column,
                                   on_aliased = error|drop, filter = {column = [values]}
    [[stats.ttest]]                name, contrast, a, b, paired_by = [columns], filter
    [[stats.summary]]              name, group_by = [columns], filter, out

  [plot]
    manifest = <path>              default: plot.manifest.json
    [[plot.figure]]                kind = pronoun_surprisal|pronoun_similarity|
                                   rc_similarity_who|rc_surprisal|rc_similarity_verb
                                   input, output (.svg), table, facet (default model),
                                   layer_stride, filter

Backend keys:
  uniform         n_layers, hidden_dim
  bigram          corpus, alpha, n_layers, hidden_dim
  subword-bigram  corpus, alpha, chunk, n_layers, hidden_dim
  planted         jitter, noise, n_layers, hidden_dim,
                  [referential] p_preferred, p_dispreferred, hidden_weight
                  [attachment] mode = local|ic_higher|neutral, p_major, p_minor,
                               agreement_weight, who_weight
  tiny-rnn        checkpoint, or corpus, epochs, hidden_dim, n_layers,
                  learning_rate, clip, max_vocab
  external        dump (relative paths resolve against $ICPROBE_MODEL_CACHE if set)
";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub lexicons: LexiconPaths,
    pub gen: Option<GenSection>,
    pub run: Option<RunSection>,
    pub stats: Option<StatsSection>,
    pub plot: Option<PlotSection>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconPaths {
    pub verb_norms: Option<PathBuf>,
    pub noun_pairs: Option<PathBuf>,
    pub rc_completion: Option<PathBuf>,
    pub rc_reading: Option<PathBuf>,
    pub vocabulary: Option<PathBuf>,
    pub verb_forms: Option<PathBuf>,
}

impl LexiconPaths {
    /// Overrides keyed by resource, resolved against `base`.
    pub fn overrides(&self, base: &Path) -> HashMap<Resource, PathBuf> {
        let pairs = [
            (Resource::VerbNorms, &self.verb_norms),
            (Resource::NounPairs, &self.noun_pairs),
            (Resource::RcCompletion, &self.rc_completion),
            (Resource::RcReading, &self.rc_reading),
            (Resource::Vocabulary, &self.vocabulary),
            (Resource::VerbForms, &self.verb_forms),
        ];
        pairs
            .into_iter()
            .filter_map(|(r, p)| p.as_ref().map(|p| (r, base.join(p))))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSection {
    pub kind: StimulusKind,
    #[serde(default = "default_condition")]
    pub condition: GenderCondition,
    pub out: PathBuf,
}

fn default_condition() -> GenderCondition {
    GenderCondition::Mismatch
}

fn default_k() -> usize {
    RunOptions::default().k
}

fn default_e1_conditions() -> Vec<GenderCondition> {
    RunOptions::default().e1_conditions
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub experiment: Experiment,
    pub out: PathBuf,
    pub drops: Option<PathBuf>,
    pub preferences: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_e1_conditions")]
    pub e1_conditions: Vec<GenderCondition>,
    #[serde(default)]
    pub e4_completion: bool,
    #[serde(default)]
    pub backend: Vec<toml::Table>,
}

/// `dir/stem.suffix` for an output path `dir/stem.ext`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

impl RunSection {
    pub fn options(&self) -> RunOptions {
        RunOptions {
            k: self.k,
            e1_conditions: self.e1_conditions.clone(),
            e4_completion: self.e4_completion,
        }
    }

    pub fn drops_path(&self) -> PathBuf {
        self.drops.clone().unwrap_or_else(|| sibling(&self.out, "drops.tsv"))
    }

    pub fn preferences_path(&self) -> PathBuf {
        self.preferences.clone().unwrap_or_else(|| sibling(&self.out, "preferences.tsv"))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.manifest.clone().unwrap_or_else(|| sibling(&self.out, "manifest.json"))
    }
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummarySpec {
    #[serde(default)]
    pub name: String,
    pub group_by: Vec<String>,
    #[serde(default)]
    pub filter: Filter,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsSection {
    pub input: PathBuf,
    pub out: PathBuf,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub bonferroni: bool,
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub model: Vec<ModelSpec>,
    #[serde(default)]
    pub ttest: Vec<TTestSpec>,
    #[serde(default)]
    pub summary: Vec<SummarySpec>,
}

impl StatsSection {
    pub fn manifest_path(&self) -> PathBuf {
        self.manifest.clone().unwrap_or_else(|| sibling(&self.out, "manifest.json"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotSection {
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub figure: Vec<FigureSpec>,
}

impl PlotSection {
    pub fn manifest_path(&self) -> PathBuf {
        self.manifest.clone().unwrap_or_else(|| PathBuf::from("plot.manifest.json"))
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| ReportError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and parses a config file; returns it with its raw text and the
    /// directory relative paths resolve against.
    pub fn load(path: &Path) -> Result<(Self, String, PathBuf)> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let cfg = Self::parse(&text).map_err(|e| match e {
            ReportError::Config(m) => ReportError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, text, base))
    }

    fn validate(&self) -> Result<()> {
        if let Some(run) = &self.run {
            if run.k == 0 {
                return Err(ReportError::Config("run.k must be positive".into()));
            }
            if run.e1_conditions.is_empty() {
                return Err(ReportError::Config("run.e1_conditions must not be empty".into()));
            }
            for b in &run.backend {
                match b.get("replicates") {
                    None => {}
                    Some(toml::Value::Integer(n)) if *n >= 1 => {}
                    Some(v) => return Err(ReportError::Config(format!("replicates must be a positive integer, got {v}"))),
                }
                if let Some(id) = b.get("id") {
                    if !id.as_str().is_some_and(|s| !s.is_empty() && !s.contains(['\t', '\n'])) {
                        return Err(ReportError::Config(format!("backend id must be a non-empty string, got {id}")));
                    }
                }
            }
        }
        if let Some(stats) = &self.stats {
            if !(stats.threshold > 0.0 && stats.threshold < 1.0) {
                return Err(ReportError::Config("stats.threshold must lie in (0, 1)".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::FigureKind;

    const FULL: &str = r#"
seed = 11

[lexicons]
verb_norms = "norms.tsv"

[gen]
kind = "referential"
condition = "match"
out = "stim.jsonl"

[run]
experiment = "e3"
out = "out/e3.tsv"
k = 50

[[run.backend]]
name = "planted"
id = "p"
replicates = 2

[run.backend.attachment]
mode = "local"

[stats]
input = "out/e3.tsv"
out = "out/stats.tsv"

[[stats.model]]
name = "m"
factors = [{ column = "verb_type", coding = "sum" }]

[[stats.ttest]]
contrast = "agreement_location"
a = "higher"
b = "lower"

[[stats.summary]]
group_by = ["model"]
out = "out/summary.tsv"

[[plot.figure]]
kind = "rc_surprisal"
input = "out/e3.tsv"
output = "out/fig.svg"
"#;

    #[test]
    fn parses_every_section() {
        let c = Config::parse(FULL).unwrap();
        assert_eq!(c.seed, 11);
        let run = c.run.as_ref().unwrap();
        assert_eq!(run.experiment, Experiment::SynBehavior);
        assert_eq!(run.options().k, 50);
        assert_eq!(run.drops_path(), PathBuf::from("out/e3.drops.tsv"));
        assert_eq!(run.backend.len(), 1);
        assert_eq!(c.plot.unwrap().figure[0].kind, FigureKind::RcSurprisal);
        let o = c.lexicons.overrides(Path::new("/base"));
        assert_eq!(o[&Resource::VerbNorms], PathBuf::from("/base/norms.tsv"));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(Config::parse("sed = 1").is_err());
        assert!(Config::parse("[run]\nexperiment = \"e9\"\nout = \"x\"").is_err());
        assert!(Config::parse("[stats]\ninput = \"a\"\nout = \"b\"\nthreshold = 2.0").is_err());
        assert!(Config::parse("[[plot.figure]]\nkind = \"fig7\"\ninput = \"a\"\noutput = \"b\"").is_err());
        assert!(Config::parse("[run]\nexperiment = \"e1\"\nout = \"x\"\n[[run.backend]]\nname = \"uniform\"\nreplicates = 0").is_err());
    }

    #[test]
    fn help_lists_every_section() {
        for key in ["[gen]", "[run]", "[[run.backend]]", "[stats]", "[plot]", "[lexicons]", "seed"] {
            assert!(CONFIG_HELP.contains(key), "{key}");
        }
    }
}
