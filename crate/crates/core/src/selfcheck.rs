//! Invariant suite run by `icprobe selfcheck`: stimulus counts, analytic
//! backend identities, measure properties, a planted-effect recovery and a
//! table round trip, all on bundled data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::{build_backend, Backend, BuildContext, PlantConfig, PlantSpec, ReferentialPlant};
use crate::experiments::{self, Model, RunOptions};
use crate::lexicon::{filter_by_vocabulary, BiasCategory, LexiconBundle};
use crate::measures::{self, FormClass, VerbTagger};
use crate::report::table::{read_table_str, write_table_string, TableFormat};
use crate::stats::{self, TTestSpec};
use crate::stimgen::{self, GenderCondition};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn(&LexiconBundle) -> Result<String, String>;

const CHECKS: [(&str, Check); 8] = [
    ("stimulus counts", counts),
    ("bias categories", bias),
    ("uniform surprisal", uniform),
    ("chain rule", chain_rule),
    ("pearson properties", pearson),
    ("cloze oracle", cloze),
    ("planted referential effect", planted_e1),
    ("table round trip", round_trip),
];

/// Runs every check; a failing check does not stop the others.
pub fn run_selfcheck() -> Vec<CheckOutcome> {
    let lex = LexiconBundle::bundled();
    CHECKS
        .iter()
        .map(|(name, f)| {
            let (passed, detail) = match f(&lex) {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckOutcome { name, passed, detail }
        })
        .collect()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn backend(lex: &LexiconBundle, toml: &str, seed: u64) -> Result<Box<dyn Backend>, String> {
    let table: toml::Table = toml.parse().map_err(s)?;
    let ctx = BuildContext {
        lexicons: lex,
        seed,
        base_dir: ".".into(),
    };
    build_backend(&table, &ctx).map_err(s)
}

fn counts(lex: &LexiconBundle) -> Result<String, String> {
    let mm = stimgen::gen_referential(&lex.norms, &lex.pairs, GenderCondition::Mismatch).map_err(s)?.len();
    let m = stimgen::gen_referential(&lex.norms, &lex.pairs, GenderCondition::Match).map_err(s)?.len();
    let c = stimgen::gen_completion(&lex.completion).map_err(s)?.len();
    let r = stimgen::gen_rc_reading(&lex.reading).map_err(s)?.len();
    let got = [mm, m, c, r];
    ensure(got == [6888, 6888, 112, 192], || format!("got {got:?}, expected [6888, 6888, 112, 192]"))?;
    Ok(format!("referential {mm}/{m}, completion {c}, reading {r}"))
}

fn bias(lex: &LexiconBundle) -> Result<String, String> {
    for (lemma, score, cat) in [("amuse", 67.0, BiasCategory::SubjectBiased), ("applaud", -84.0, BiasCategory::ObjectBiased)] {
        let n = lex
            .all_norms
            .iter()
            .find(|n| n.lemma == lemma)
            .ok_or_else(|| format!("`{lemma}` missing from the norms"))?;
        ensure(n.bias_score == score && n.bias_category() == cat, || {
            format!("{lemma}: {} -> {}", n.bias_score, n.bias_category())
        })?;
    }
    Ok("amused subject-biased, applauded object-biased".into())
}

fn uniform(lex: &LexiconBundle) -> Result<String, String> {
    let b = backend(lex, "name = \"uniform\"", 0)?;
    let expected = (b.descriptor().vocab_size as f64).log2();
    let set = stimgen::gen_rc_reading(&lex.reading).map_err(s)?;
    for st in &set.stimuli {
        for v in b.surprisals(&st.words).map_err(s)? {
            ensure((v - expected).abs() < 1e-12, || format!("{}: {v} != {expected}", st.stim_id))?;
        }
    }
    Ok(format!("log2 |V| = {expected:.6} on {} stimuli", set.len()))
}

fn chain_rule(lex: &LexiconBundle) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let words = lex.vocabulary.words();
    for name in ["bigram", "subword-bigram"] {
        let b = backend(lex, &format!("name = \"{name}\""), 0)?;
        for _ in 0..200 {
            let len = rng.random_range(1..12);
            let seq: Vec<String> = (0..len).map(|_| words[rng.random_range(0..words.len())].clone()).collect();
            let sum: f64 = b.surprisals(&seq).map_err(s)?.iter().sum();
            let joint = -b.joint_log2_prob(&seq).map_err(s)?;
            ensure((sum - joint).abs() <= 1e-6 * joint.abs().max(1.0), || {
                format!("{name}: {sum} vs {joint} on {seq:?}")
            })?;
        }
    }
    Ok("200 random sequences per backend".into())
}

fn pearson(_: &LexiconBundle) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let n = rng.random_range(3..40);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let r = measures::pearson_r(&v, &w).map_err(s)?;
        let r2 = measures::pearson_r(&w, &v).map_err(s)?;
        let (a, c) = (rng.random_range(0.1..10.0), rng.random_range(-10.0..10.0));
        let va: Vec<f64> = v.iter().map(|x| a * x + c).collect();
        let ra = measures::pearson_r(&va, &w).map_err(s)?;
        let rr = measures::pearson_r(&v, &v).map_err(s)?;
        ensure((-1.0..=1.0).contains(&r), || format!("out of bounds: {r}"))?;
        ensure((r - r2).abs() <= 1e-12, || format!("asymmetric: {r} vs {r2}"))?;
        ensure((r - ra).abs() <= 1e-10, || format!("not affine invariant: {r} vs {ra}"))?;
        ensure((rr - 1.0).abs() <= 1e-12, || format!("r(v, v) = {rr}"))?;
    }
    Ok("1000 random pairs".into())
}

fn cloze(lex: &LexiconBundle) -> Result<String, String> {
    let b = backend(lex, "name = \"bigram\"", 0)?;
    let set = stimgen::gen_completion(&lex.completion).map_err(s)?;
    let k = 100;
    let mut checked = 0;
    for st in &set.stimuli {
        let dist = b.next_distribution(&st.words).map_err(s)?;
        let mut idx: Vec<usize> = (0..dist.len()).collect();
        idx.sort_by(|&x, &y| dist.probs[y].total_cmp(&dist.probs[x]).then(x.cmp(&y)));
        let (mut sg, mut pl) = (0.0, 0.0);
        for &i in idx.iter().take(k) {
            match dist.labels.words[i].as_deref().and_then(|w| lex.verb_forms.classify(w)) {
                Some(FormClass::Singular) => sg += dist.probs[i],
                Some(FormClass::Plural) => pl += dist.probs[i],
                _ => {}
            }
        }
        let got = measures::cloze_singular_share(st, b.as_ref(), k, &lex.verb_forms);
        match got {
            Ok(r) => {
                ensure(sg + pl > 0.0 && r.value == sg / (sg + pl), || format!("{}: {} vs oracle", st.stim_id, r.value))?;
                checked += 1;
            }
            Err(_) => ensure(sg + pl == 0.0, || format!("{}: share failed with verb mass present", st.stim_id))?,
        }
    }
    Ok(format!("{checked} prompts agree with brute force"))
}

fn planted_e1(lex: &LexiconBundle) -> Result<String, String> {
    let mut small = lex.clone();
    let keep: Vec<_> = lex
        .norms
        .iter()
        .filter(|n| n.bias_category() == BiasCategory::SubjectBiased)
        .take(10)
        .chain(lex.norms.iter().filter(|n| n.bias_category() == BiasCategory::ObjectBiased).take(10))
        .cloned()
        .collect();
    small.norms = filter_by_vocabulary(&keep, &lex.vocabulary).0;
    small.pairs.truncate(4);
    let cfg = PlantConfig {
        referential: Some(ReferentialPlant {
            p_preferred: 0.4,
            p_dispreferred: 0.2,
            hidden_weight: 0.0,
        }),
        jitter: 0.3,
        ..PlantConfig::default()
    };
    let spec = PlantSpec::from_config(&cfg, &small, 5).map_err(s)?;
    let b = crate::backend::make_planted_backend("planted", small.vocabulary.clone(), &spec).map_err(s)?;
    let models = [Model {
        id: "planted".into(),
        backend: &b,
    }];
    let out = experiments::run_e1(&small, &models, &RunOptions::default()).map_err(s)?;
    let mut detail = Vec::new();
    for (cat, lower) in [("subject_biased", "subject"), ("object_biased", "object")] {
        let higher = if lower == "subject" { "object" } else { "subject" };
        let t = TTestSpec {
            name: cat.into(),
            contrast: "pronoun_target".into(),
            a: lower.into(),
            b: higher.into(),
            paired_by: vec!["frame".into()],
            filter: [("bias_category".to_string(), vec![cat.to_string()])].into(),
        };
        let r = stats::run_ttest(&out.records, &t, stats::DEFAULT_THRESHOLD).map_err(s)?;
        ensure(r.estimate > 0.0 && r.significant, || {
            format!("{cat}: difference {:.3} bits, p = {:.3e}", r.estimate, r.p_value)
        })?;
        detail.push(format!("{cat} {:+.3} bits (p = {:.1e})", r.estimate, r.p_value));
    }
    Ok(detail.join(", "))
}

fn round_trip(lex: &LexiconBundle) -> Result<String, String> {
    let b = backend(lex, "name = \"bigram\"", 0)?;
    let models = [Model {
        id: "bigram".into(),
        backend: b.as_ref(),
    }];
    let mut small = lex.clone();
    small.reading.truncate(2);
    let out = experiments::run_e4(&small, &models, &RunOptions::default()).map_err(s)?;
    let jsonl = write_table_string(&out.records, TableFormat::JsonLines).map_err(s)?;
    ensure(read_table_str(&jsonl).map_err(s)? == out.records, || "JSON lines round trip changed records".into())?;
    let tsv = write_table_string(&out.records, TableFormat::Tsv).map_err(s)?;
    let back = read_table_str(&tsv).map_err(s)?;
    ensure(write_table_string(&back, TableFormat::Tsv).map_err(s)? == tsv, || "TSV round trip changed bytes".into())?;
    Ok(format!("{} records", out.records.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_check_passes_on_bundled_data() {
        for c in run_selfcheck() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn tagger_is_used_through_the_trait() {
        let lex = LexiconBundle::bundled();
        let t: &dyn VerbTagger = &lex.verb_forms;
        assert_eq!(t.classify("was"), Some(FormClass::Singular));
    }
}
